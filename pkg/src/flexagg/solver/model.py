"""Solver-facing LP/MILP container and solution record."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp

INF = float("inf")


class ModelError(ValueError):
    """Raised when a Model violates one of its structural invariants."""


class NumericalInstability(RuntimeError):
    """Basis factorization failed even after a refactorization retry."""


class Status(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    ITER_LIMIT = "IterLimit"
    TIME_LIMIT = "TimeLimit"


SENSES = ("<=", "=", ">=")


@dataclass
class CompiledModel:
    """Array form of a Model, snapshotted at compile time."""

    c: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    A: sp.csr_matrix
    row_lo: np.ndarray
    row_hi: np.ndarray
    binaries: np.ndarray
    sos2: list[np.ndarray]
    obj_constant: float
    sos2_ref: list[np.ndarray] = field(default_factory=list)

    @property
    def n_vars(self) -> int:
        return self.c.shape[0]

    @property
    def n_rows(self) -> int:
        return self.row_lo.shape[0]


class Model:
    """Minimization model with continuous/binary columns, linear rows and SOS2 sets.

    Variables are referred to by the integer handle returned from ``add_var``.
    """

    def __init__(self, name: str = "model"):
        self.name = name
        self.var_names: list[str] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.obj: list[float] = []
        self.is_binary: list[bool] = []
        self.obj_constant = 0.0
        self.row_names: list[str] = []
        self.row_sense: list[str] = []
        self.row_rhs: list[float] = []
        self._row_start: list[int] = [0]
        self._row_idx: list[int] = []
        self._row_val: list[float] = []
        self.sos2_sets: list[list[int]] = []
        self.sos2_ref: list[list[float]] = []
        self._sos_member: set[int] = set()
        self._compiled: CompiledModel | None = None

    # -- construction -----------------------------------------------------
    @property
    def n_vars(self) -> int:
        return len(self.lb)

    @property
    def n_rows(self) -> int:
        return len(self.row_rhs)

    @property
    def n_binaries(self) -> int:
        return sum(self.is_binary)

    def add_var(self, name: str = "", lb: float = 0.0, ub: float = INF,
                obj: float = 0.0, binary: bool = False) -> int:
        if binary:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        if lb > ub:
            raise ModelError(f"variable {name!r}: lb {lb} > ub {ub}")
        self.var_names.append(name or f"x{len(self.lb)}")
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.obj.append(float(obj))
        self.is_binary.append(bool(binary))
        self._compiled = None
        return len(self.lb) - 1

    def add_constr(self, terms: Mapping[int, float] | Iterable[tuple[int, float]],
                   sense: str, rhs: float, name: str = "") -> int:
        if sense not in SENSES:
            raise ModelError(f"unknown constraint sense {sense!r}")
        items = terms.items() if isinstance(terms, Mapping) else terms
        merged: dict[int, float] = {}
        n = len(self.lb)
        for j, a in items:
            j = int(j)
            if not 0 <= j < n:
                raise ModelError(f"constraint {name!r} references undeclared variable {j}")
            merged[j] = merged.get(j, 0.0) + float(a)
        for j, a in merged.items():
            if a != 0.0:
                self._row_idx.append(j)
                self._row_val.append(a)
        self._row_start.append(len(self._row_idx))
        self.row_names.append(name or f"c{len(self.row_rhs)}")
        self.row_sense.append(sense)
        self.row_rhs.append(float(rhs))
        self._compiled = None
        return len(self.row_rhs) - 1

    def add_sos2(self, members: Iterable[int], weights: Iterable[float] | None = None) -> int:
        """Declare an ordered SOS2 set.

        ``weights`` are strictly increasing reference values of the members (the
        breakpoint abscissae, say); branching uses them to place the split.  They
        default to 1, 2, ...
        """
        members = [int(j) for j in members]
        if len(members) < 3:
            raise ModelError("an SOS2 set needs at least 3 members")
        ref = [float(k + 1) for k in range(len(members))] if weights is None else \
            [float(r) for r in weights]
        if len(ref) != len(members) or np.any(np.diff(ref) <= 0):
            raise ModelError("SOS2 weights must be strictly increasing, one per member")
        for j in members:
            if not 0 <= j < self.n_vars:
                raise ModelError(f"SOS2 member {j} is not a declared variable")
            if j in self._sos_member:
                raise ModelError(f"variable {self.var_names[j]!r} already belongs to an SOS2 set")
            if self.lb[j] < 0:
                raise ModelError(f"SOS2 member {self.var_names[j]!r} must be nonnegative")
        self._sos_member.update(members)
        self.sos2_sets.append(members)
        self.sos2_ref.append(ref)
        self._compiled = None
        return len(self.sos2_sets) - 1

    def add_objective(self, j: int, coef: float) -> None:
        self.obj[j] += float(coef)
        self._compiled = None

    def add_objective_constant(self, value: float) -> None:
        self.obj_constant += float(value)

    def row_terms(self, i: int) -> list[tuple[int, float]]:
        a, b = self._row_start[i], self._row_start[i + 1]
        return list(zip(self._row_idx[a:b], self._row_val[a:b]))

    # -- compiled view ----------------------------------------------------
    def compile(self) -> CompiledModel:
        if self._compiled is not None:
            return self._compiled
        m, n = self.n_rows, self.n_vars
        A = sp.csr_matrix(
            (np.asarray(self._row_val, dtype=float),
             np.asarray(self._row_idx, dtype=np.int64),
             np.asarray(self._row_start, dtype=np.int64)),
            shape=(m, n),
        )
        rhs = np.asarray(self.row_rhs, dtype=float)
        sense = np.asarray(self.row_sense, dtype=object)
        row_lo = np.where(sense == "<=", -INF, rhs).astype(float)
        row_hi = np.where(sense == ">=", INF, rhs).astype(float)
        self._compiled = CompiledModel(
            c=np.asarray(self.obj, dtype=float),
            lb=np.asarray(self.lb, dtype=float),
            ub=np.asarray(self.ub, dtype=float),
            A=A,
            row_lo=row_lo,
            row_hi=row_hi,
            binaries=np.flatnonzero(np.asarray(self.is_binary, dtype=bool)),
            sos2=[np.asarray(s, dtype=np.int64) for s in self.sos2_sets],
            obj_constant=self.obj_constant,
            sos2_ref=[np.asarray(r, dtype=float) for r in self.sos2_ref],
        )
        return self._compiled

    def validate(self) -> None:
        """Re-check all structural invariants; raises ModelError."""
        for j, (lo, hi, b) in enumerate(zip(self.lb, self.ub, self.is_binary)):
            if lo > hi:
                raise ModelError(f"{self.var_names[j]}: lb > ub")
            if b and (lo < 0 or hi > 1):
                raise ModelError(f"binary {self.var_names[j]} has bounds outside [0,1]")
        seen: set[int] = set()
        for s in self.sos2_sets:
            if len(s) < 3:
                raise ModelError("SOS2 set with fewer than 3 members")
            if seen.intersection(s):
                raise ModelError("variable in more than one SOS2 set")
            seen.update(s)
        if self._row_idx and max(self._row_idx) >= self.n_vars:
            raise ModelError("constraint references undeclared variable")

    def objective_value(self, x: np.ndarray) -> float:
        return float(np.dot(self.obj, x) + self.obj_constant)

    def max_violation(self, x: np.ndarray) -> float:
        """Largest bound or row violation of point ``x`` (0 when feasible)."""
        cm = self.compile()
        x = np.asarray(x, dtype=float)
        ax = cm.A @ x
        viol = [
            np.max(cm.lb - x, initial=0.0),
            np.max(x - cm.ub, initial=0.0),
            np.max(cm.row_lo - ax, initial=0.0),
            np.max(ax - cm.row_hi, initial=0.0),
        ]
        return float(max(viol))

    def to_lp_string(self) -> str:
        from .lpformat import write_lp_string
        return write_lp_string(self)

    def __repr__(self) -> str:
        return (f"Model({self.name!r}, vars={self.n_vars}, rows={self.n_rows}, "
                f"binaries={self.n_binaries}, sos2={len(self.sos2_sets)})")


@dataclass(frozen=True)
class Solution:
    status: Status
    x: np.ndarray | None = None
    objective: float | None = None
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    nodes: int = 0
    wall_time: float = 0.0
    best_bound: float | None = None
    iterations: int = 0
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL

    def value(self, handle):
        """Value of one variable handle, or an array for an array of handles."""
        if self.x is None:
            raise ValueError(f"no primal values (status {self.status.value})")
        if isinstance(handle, (int, np.integer)):
            return float(self.x[handle])
        return self.x[np.asarray(handle, dtype=np.int64)]
