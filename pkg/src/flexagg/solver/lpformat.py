"""CPLEX-LP text dump of a Model, for cross-checking against external solvers."""
from __future__ import annotations

import math
import re
from pathlib import Path

_BAD = re.compile(r"[^A-Za-z0-9_.\[\]]")


def _name(s: str) -> str:
    s = _BAD.sub("_", s)
    return s if s and not s[0].isdigit() and s[0] not in ".eE" else "v" + s


def _expr(terms, names) -> str:
    out = []
    for j, a in terms:
        sign = "-" if a < 0 else "+"
        out.append(f"{sign} {abs(a):.12g} {names[j]}")
    text = " ".join(out) if out else "0 " + names[0]
    return text[2:] if text.startswith("+ ") else text


def write_lp_string(model) -> str:
    names = [_name(n) for n in model.var_names]
    lines = [f"\\ {model.name}", "Minimize"]
    obj = [(j, c) for j, c in enumerate(model.obj) if c != 0.0]
    lines.append(" obj: " + _expr(obj, names))
    if model.obj_constant:
        lines[-1] += f" + {model.obj_constant:.12g} constant"
    lines.append("Subject To")
    for i in range(model.n_rows):
        sense = {"<=": "<=", ">=": ">=", "=": "="}[model.row_sense[i]]
        lines.append(f" {_name(model.row_names[i])}: {_expr(model.row_terms(i), names)} "
                     f"{sense} {model.row_rhs[i]:.12g}")
    lines.append("Bounds")
    for j, (lo, hi) in enumerate(zip(model.lb, model.ub)):
        lo_s = "-inf" if math.isinf(lo) else f"{lo:.12g}"
        hi_s = "+inf" if math.isinf(hi) else f"{hi:.12g}"
        lines.append(f" {lo_s} <= {names[j]} <= {hi_s}")
    if model.obj_constant:
        lines.append(" constant = 1")
    binaries = [names[j] for j, b in enumerate(model.is_binary) if b]
    if binaries:
        lines.append("Binary")
        lines.extend(" " + n for n in binaries)
    if model.sos2_sets:
        lines.append("SOS")
        for s, (members, ref) in enumerate(zip(model.sos2_sets, model.sos2_ref)):
            refs = " ".join(f"{names[j]}:{r:.12g}" for j, r in zip(members, ref))
            lines.append(f" s{s}: S2:: {refs}")
    lines.append("End")
    return "\n".join(lines) + "\n"


def write_lp(model, path) -> Path:
    path = Path(path)
    path.write_text(write_lp_string(model))
    return path
