from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Status


@dataclass
class LPResult:
    """Raw outcome of one LP relaxation solve (objective excludes the model constant)."""

    status: Status
    x: np.ndarray | None = None
    obj: float | None = None
    row_dual: np.ndarray | None = None
    col_dual: np.ndarray | None = None
    iterations: int = 0
