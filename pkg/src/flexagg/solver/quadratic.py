"""Tangent-cut linearization of separable convex quadratics ``weight * (var - center)**2``."""
from __future__ import annotations

import math

import numpy as np

from .model import Model, ModelError


def tangent_points(lb: float, ub: float, n_segments: int) -> np.ndarray:
    """Midpoints of ``n_segments`` equal sub-intervals of [lb, ub]."""
    h = (ub - lb) / n_segments
    return lb + h * (np.arange(n_segments) + 0.5)


def centered_tangent_points(lb: float, ub: float, center: float, n_segments: int,
                            resolution: float) -> np.ndarray:
    """Tangent points at geometrically growing offsets on both sides of ``center``.

    The innermost pair sits at ``center +/- resolution/2`` so the envelope has a
    kink exactly at the center; ``n_segments`` points per side reach out to the
    farther box edge.
    """
    reach = max(ub - center, center - lb)
    first = resolution / 2.0
    if reach <= first or n_segments <= 1:
        offsets = np.array([first])
    else:
        ratio = (reach / first) ** (1.0 / (n_segments - 1))
        offsets = first * ratio ** np.arange(n_segments)
    pts = np.concatenate([center - offsets[::-1], center + offsets])
    return pts[(pts >= lb - 1e-12) & (pts <= ub + 1e-12)]


def envelope_error_bound(lb: float, ub: float, n_segments: int, weight: float) -> float:
    """Worst-case underestimation of the uniform tangent envelope on [lb, ub]."""
    return weight * ((ub - lb) / (2.0 * n_segments)) ** 2


def _envelope_pieces(pts: np.ndarray, lb: float, ub: float, center: float, weight: float):
    """Breakpoints, slopes and left-end value of the tangent envelope on [lb, ub].

    Consecutive tangents of a parabola meet halfway between their points, so
    tangent k is the active piece between the neighbouring midpoints.
    """
    mids = (pts[:-1] + pts[1:]) / 2.0
    edges = np.concatenate([[lb], mids, [ub]])
    slopes = 2.0 * weight * (pts - center)
    a0 = pts[0]
    left = weight * (a0 - center) ** 2 + slopes[0] * (lb - a0)
    return edges, slopes, left


def add_separable_quadratic(model: Model, var: int, center: float, weight: float,
                            n_segments: int = 16, *, resolution: float | None = None,
                            anchor: float | None = None, form: str = "cuts",
                            name: str = "") -> int:
    """Append epigraph variable ``q >= weight*(var-center)**2`` (piecewise) to the objective.

    With the default uniform placement, tangent points are spread evenly over the
    variable's box and the envelope underestimates the quadratic by at most
    ``envelope_error_bound``.  Passing ``resolution`` switches to points packed
    geometrically around ``anchor`` (default ``center``) instead.

    ``form="cuts"`` adds one row per tangent.  ``form="segments"`` encodes the
    same envelope with bounded increment columns (two rows in total), which
    keeps large models much lighter for the simplex.  Returns the handle of ``q``.
    """
    if weight < 0:
        raise ModelError("quadratic weight must be nonnegative")
    if form not in ("cuts", "segments"):
        raise ModelError(f"unknown quadratic form {form!r}")
    lb, ub = model.lb[var], model.ub[var]
    if not (math.isfinite(lb) and math.isfinite(ub)):
        raise ModelError(f"variable {model.var_names[var]!r} needs finite bounds to linearize")
    qname = name or f"q_{model.var_names[var]}"
    if weight == 0.0:
        return model.add_var(qname, lb=0.0, ub=0.0)
    if resolution is None:
        pts = tangent_points(lb, ub, n_segments)
    else:
        at = center if anchor is None else min(max(anchor, lb), ub)
        pts = centered_tangent_points(lb, ub, at, n_segments, resolution)
        if pts.size == 0:
            pts = tangent_points(lb, ub, n_segments)
    if ub == lb:
        pts = np.array([lb])
    far = max((lb - center) ** 2, (ub - center) ** 2)
    # envelope >= quadratic - worst gap error >= -worst gap error
    gaps = np.concatenate([[pts[0] - lb, ub - pts[-1]], np.diff(pts) / 2.0])
    low = -weight * gaps.max() ** 2
    q = model.add_var(qname, lb=low - 1e-9, ub=weight * far + 1e-9, obj=1.0)
    if form == "cuts":
        for k, a in enumerate(pts):
            # q >= w*(a-c)^2 + 2w(a-c)(x-a)  <=>  q - 2w(a-c) x >= w*(a-c)^2 - 2w(a-c)a
            slope = 2.0 * weight * (a - center)
            intercept = weight * (a - center) ** 2 - slope * a
            model.add_constr({q: 1.0, var: -slope}, ">=", intercept, name=f"{qname}_cut{k}")
        return q
    # x = lb + sum d_k, q = E(lb) + sum s_k d_k; slopes increase so the LP fills in order
    edges, slopes, left = _envelope_pieces(pts, lb, ub, center, weight)
    d = [model.add_var(f"{qname}_d{k}", 0.0, float(edges[k + 1] - edges[k]))
         for k in range(len(slopes))]
    model.add_constr({var: 1.0, **{j: -1.0 for j in d}}, "=", lb, name=f"{qname}_x")
    model.add_constr({q: 1.0, **{j: -float(sk) for j, sk in zip(d, slopes)}}, "=", left,
                     name=f"{qname}_val")
    return q
