"""Scenario files, synthetic portfolios, and result serialization.

A scenario is one TOML file; see ``docs/scenario_format.md`` for the grammar.
Sketch::

    format_version = 1

    [scenario]
    name = "demo"
    horizon = 24
    ptu_hours = 1.0

    [defaults]                 # merged under every site (nested tables too)
    import_cap = 10.0
    export_cap = 10.0
    sell_price = 0.05          # scalars broadcast over the horizon

    [[sites]]
    id = "001"
    load = "profiles.csv#load_001"   # column of a CSV next to this file
    pv = [0.0, 0.0, ...]
    buy_price = [...]
    curtail_penalty = 0.2
    [sites.battery]
    capacity = 10.0
    power = 3.8

    [request]                  # optional
    peak_caps = false
    penalty = 10.0
    [request.fr]
    "20" = 12.5                # period -> FR [kWh], > 0 asks for less consumption
"""
from __future__ import annotations

import csv
import io
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .battery import HOURS_PER_YEAR, BatterySpec, cycle_cost_ladder
from .central import DEFAULT_PENALTY, FlexRequest
from .site import SiteSchedule, SiteSpec
from .solver import ModelError
from .synthetic import SyntheticTemplate, synthetic_sites

FORMAT_VERSION = 1
SERIES = ("buy_price", "sell_price", "curtail_penalty", "load", "pv")
SCHEDULE_COLUMNS = ("site_id", "t", "chi_buy", "chi_sell", "psi", "sigma_ch", "sigma_dis",
                    "sigma_soc", "zeta_flex", "chi_tot")
_BATTERY_FIELDS = ("capacity", "charge_max", "discharge_max", "soc_min", "eff_ch", "eff_dis",
                   "segment_capacity", "segment_cost", "investment_cost", "lifetime_ptu",
                   "cal_s0", "cal_ssoc", "cv_factor", "inverter_curve", "inverter_rated",
                   "soc_init")
_BATTERY_SHORTHAND = ("power", "efficiency", "n_segments", "lifetime_years")


class ScenarioError(ValueError):
    """Malformed or invalid scenario input; the message names the offending place."""


@dataclass(frozen=True)
class RequestSpec:
    """FR amounts per period, resolved against a baseline into a FlexRequest later."""

    amounts: Mapping[int, float]
    peak_caps: bool = False
    penalty: float = DEFAULT_PENALTY

    def resolve(self, baseline) -> FlexRequest:
        return FlexRequest.from_amounts(baseline, dict(self.amounts), peak_caps=self.peak_caps,
                                        penalty=self.penalty)

    def to_toml(self) -> dict:
        return {"peak_caps": self.peak_caps, "penalty": self.penalty,
                "fr": {str(t): float(v) for t, v in sorted(self.amounts.items())}}


@dataclass
class Scenario:
    sites: list[SiteSpec]
    horizon: int
    ptu_hours: float = 1.0
    request: RequestSpec | None = None
    name: str = "scenario"
    seed: int | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.horizon < 1:
            raise ScenarioError("scenario: horizon must be at least 1")
        if not self.ptu_hours > 0:
            raise ScenarioError("scenario: ptu_hours must be positive")
        if not self.sites:
            raise ScenarioError("scenario: no sites")
        seen = set()
        for s in self.sites:
            if s.site_id in seen:
                raise ScenarioError(f"site {s.site_id!r}: duplicate site id")
            seen.add(s.site_id)
            for name in SERIES:
                n = len(getattr(s, name))
                if n != self.horizon:
                    raise ScenarioError(f"site {s.site_id!r}: series {name!r} has length {n}, "
                                        f"expected horizon {self.horizon}")
        if self.request is not None:
            for t in self.request.amounts:
                if not 0 <= t < self.horizon:
                    raise ScenarioError(f"request: period {t} outside horizon "
                                        f"0..{self.horizon - 1}")
            if self.request.penalty < 0:
                raise ScenarioError("request: penalty must be nonnegative")

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return (self.sites == other.sites and self.horizon == other.horizon
                and self.ptu_hours == other.ptu_hours and self.request == other.request
                and self.name == other.name and self.seed == other.seed)


# -- loading ------------------------------------------------------------------

def _merge(base: Mapping, over: Mapping) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


class _CsvCache:
    def __init__(self, root: Path):
        self.root = root
        self.tables: dict[Path, dict[str, list[str]]] = {}

    def column(self, ref: str, where: str) -> np.ndarray:
        if "#" not in ref:
            raise ScenarioError(f"{where}: series reference {ref!r} must read 'file.csv#column'")
        fname, col = ref.rsplit("#", 1)
        path = (self.root / fname).resolve()
        if path not in self.tables:
            try:
                with open(path, newline="") as fh:
                    rows = list(csv.DictReader(r for r in fh if not r.startswith("#")))
            except OSError as e:
                raise ScenarioError(f"{where}: cannot read {path}: {e.strerror}") from e
            self.tables[path] = {k: [r[k] for r in rows] for k in (rows[0] if rows else {})}
        table = self.tables[path]
        if col not in table:
            raise ScenarioError(f"{where}: column {col!r} not found in {path}")
        try:
            return np.array([float(v) for v in table[col]])
        except ValueError as e:
            raise ScenarioError(f"{where}: non-numeric value in {path}#{col}") from e


def _series(value: Any, horizon: int, where: str, csvs: _CsvCache) -> np.ndarray:
    if isinstance(value, str):
        return csvs.column(value, where)
    if isinstance(value, bool):
        raise ScenarioError(f"{where}: expected a number, list or CSV reference")
    if isinstance(value, (int, float)):
        return np.full(horizon, float(value))
    if isinstance(value, list):
        try:
            return np.array([float(v) for v in value])
        except (TypeError, ValueError) as e:
            raise ScenarioError(f"{where}: list entries must be numbers") from e
    raise ScenarioError(f"{where}: expected a number, list or CSV reference")


def _number(d: Mapping, key: str, where: str, default=None) -> float:
    if key not in d:
        if default is None:
            raise ScenarioError(f"{where}: missing required field {key!r}")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"{where}: field {key!r} must be a number")
    return float(v)


def _battery(d: Mapping, sid: str, ptu_hours: float) -> BatterySpec:
    where = f"site {sid!r}: battery"
    unknown = set(d) - set(_BATTERY_FIELDS) - set(_BATTERY_SHORTHAND)
    if unknown:
        raise ScenarioError(f"{where}: unknown field(s) {sorted(unknown)}")
    kw = dict(d)
    cap = _number(kw, "capacity", where)
    power = kw.pop("power", None)
    if power is not None:
        kw.setdefault("charge_max", power)
        kw.setdefault("discharge_max", power)
    eff = kw.pop("efficiency", None)
    if eff is not None:
        kw.setdefault("eff_ch", eff)
        kw.setdefault("eff_dis", eff)
    n_seg = int(kw.pop("n_segments", 10))
    years = kw.pop("lifetime_years", None)
    if years is not None:
        kw.setdefault("lifetime_ptu", float(years) * HOURS_PER_YEAR / ptu_hours)
    for key in ("charge_max", "discharge_max"):
        _number(kw, key, where)
    soc_min = float(kw.get("soc_min", 0.0))
    kw.setdefault("investment_cost", 3000.0)
    kw.setdefault("segment_capacity", [(cap - soc_min) / n_seg] * n_seg)
    kw.setdefault("segment_cost", cycle_cost_ladder(float(kw["investment_cost"]), cap,
                                                    len(kw["segment_capacity"])))
    kw.setdefault("lifetime_ptu", 10.0 * HOURS_PER_YEAR / ptu_hours)
    kw.setdefault("eff_ch", 0.98)
    kw.setdefault("eff_dis", 0.98)
    kw.setdefault("cal_s0", 0.3)
    kw.setdefault("cal_ssoc", 1.7)
    kw.setdefault("cv_factor", 0.2)
    if "inverter_curve" in kw:
        curve = kw["inverter_curve"]
        if not all(isinstance(p, list) and len(p) == 2 for p in curve):
            raise ScenarioError(f"{where}: inverter_curve must be a list of [power, efficiency]")
        kw["inverter_curve"] = tuple(tuple(p) for p in curve)
    try:
        return BatterySpec(**kw)
    except (ModelError, TypeError) as e:
        raise ScenarioError(f"{where}: {e}") from e


def _site(d: Mapping, horizon: int, ptu_hours: float, csvs: _CsvCache, idx: int) -> SiteSpec:
    if "id" not in d:
        raise ScenarioError(f"sites[{idx}]: missing required field 'id'")
    sid = str(d["id"])
    where = f"site {sid!r}"
    known = {"id", "import_cap", "export_cap", "battery", *SERIES}
    unknown = set(d) - known
    if unknown:
        raise ScenarioError(f"{where}: unknown field(s) {sorted(unknown)}")
    series = {}
    for name in SERIES:
        if name not in d:
            raise ScenarioError(f"{where}: missing required field {name!r}")
        arr = _series(d[name], horizon, f"{where}: field {name!r}", csvs)
        if len(arr) != horizon:
            raise ScenarioError(f"{where}: series {name!r} has length {len(arr)}, "
                                f"expected horizon {horizon}")
        series[name] = arr
    if "battery" not in d or not isinstance(d["battery"], Mapping):
        raise ScenarioError(f"{where}: missing [battery] table")
    bat = _battery(d["battery"], sid, ptu_hours)
    try:
        return SiteSpec(site_id=sid, import_cap=_number(d, "import_cap", where),
                        export_cap=_number(d, "export_cap", where), battery=bat, **series)
    except ModelError as e:
        raise ScenarioError(str(e)) from e


def _request(d: Mapping) -> RequestSpec:
    fr = d.get("fr", {})
    if not isinstance(fr, Mapping):
        raise ScenarioError("request: 'fr' must be a table of period = kWh")
    amounts = {}
    for k, v in fr.items():
        try:
            t = int(k)
        except ValueError as e:
            raise ScenarioError(f"request: period key {k!r} is not an integer") from e
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ScenarioError(f"request: FR for period {t} must be a number")
        amounts[t] = float(v)
    return RequestSpec(amounts, bool(d.get("peak_caps", False)),
                       _number(d, "penalty", "request", DEFAULT_PENALTY))


def parse_scenario(text: str, root: Path | str = ".", source: str = "<string>") -> Scenario:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ScenarioError(f"{source}: parse error: {e}") from e
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ScenarioError(f"{source}: format_version must be {FORMAT_VERSION}, got {version!r}")
    head = doc.get("scenario", {})
    horizon = int(_number(head, "horizon", "scenario"))
    ptu = _number(head, "ptu_hours", "scenario", 1.0)
    defaults = doc.get("defaults", {})
    sites_raw = doc.get("sites", [])
    if not isinstance(sites_raw, list) or not sites_raw:
        raise ScenarioError(f"{source}: needs at least one [[sites]] entry")
    csvs = _CsvCache(Path(root))
    sites = [_site(_merge(defaults, s), horizon, ptu, csvs, i) for i, s in enumerate(sites_raw)]
    req = _request(doc["request"]) if "request" in doc else None
    seed = head.get("seed")
    return Scenario(sites, horizon, ptu, req, str(head.get("name", "scenario")),
                    None if seed is None else int(seed))


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ScenarioError(f"cannot read scenario {path}: {e.strerror}") from e
    return parse_scenario(text, path.parent, str(path))


# -- writing ------------------------------------------------------------------

def _battery_toml(b: BatterySpec) -> dict:
    d = {k: getattr(b, k) for k in _BATTERY_FIELDS}
    d["segment_capacity"] = list(b.segment_capacity)
    d["segment_cost"] = list(b.segment_cost)
    d["inverter_curve"] = [list(p) for p in b.inverter_curve]
    return d


def scenario_to_toml(sc: Scenario) -> str:
    head = {"name": sc.name, "horizon": sc.horizon, "ptu_hours": sc.ptu_hours}
    if sc.seed is not None:
        head["seed"] = sc.seed
    doc: dict = {"format_version": FORMAT_VERSION, "scenario": head, "sites": []}
    for s in sc.sites:
        d = {"id": s.site_id, "import_cap": s.import_cap, "export_cap": s.export_cap}
        for name in SERIES:
            d[name] = [float(v) for v in getattr(s, name)]
        d["battery"] = _battery_toml(s.battery)
        doc["sites"].append(d)
    if sc.request is not None:
        doc["request"] = sc.request.to_toml()
    return tomli_w.dumps(doc)


def save_scenario(sc: Scenario, path) -> Path:
    path = Path(path)
    try:
        path.write_text(scenario_to_toml(sc))
    except OSError as e:
        raise OSError(f"cannot write scenario {path}: {e.strerror}") from e
    return path


def generate_synthetic(n_sites: int, seed: int,
                       template: SyntheticTemplate = SyntheticTemplate()) -> Scenario:
    if n_sites < 1:
        raise ScenarioError("n_sites must be at least 1")
    sites = synthetic_sites(n_sites, seed, template)
    return Scenario(sites, template.horizon, template.ptu_hours,
                    name=f"synthetic-{n_sites}-seed{seed}", seed=seed)


def load_request(path) -> RequestSpec:
    """FR file: TOML with a [request] table (or the table's keys at top level), or
    a CSV with columns ``t,fr``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ScenarioError(f"cannot read request {path}: {e.strerror}") from e
    if path.suffix.lower() == ".csv":
        rows = list(csv.DictReader(r for r in io.StringIO(text) if not r.startswith("#")))
        if rows and not {"t", "fr"} <= set(rows[0]):
            raise ScenarioError(f"{path}: request CSV needs columns 't' and 'fr'")
        try:
            return RequestSpec({int(r["t"]): float(r["fr"]) for r in rows})
        except ValueError as e:
            raise ScenarioError(f"{path}: bad number in request CSV") from e
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ScenarioError(f"{path}: parse error: {e}") from e
    return _request(doc.get("request", doc))


def save_request(req: RequestSpec, path) -> Path:
    path = Path(path)
    path.write_text(tomli_w.dumps({"format_version": FORMAT_VERSION, "request": req.to_toml()}))
    return path


# -- results ------------------------------------------------------------------

def schedule_rows(schedules: Sequence[SiteSchedule]):
    for s in schedules:
        b = s.battery
        for t in range(len(s.chi_tot)):
            yield (s.site_id, t, float(s.buy[t]), float(s.sell[t]), float(s.psi[t]),
                   float(b.charge[t]), float(b.discharge[t]), float(b.soc[t]),
                   float(s.zeta[t]), float(s.chi_tot[t]))


def _open_for_write(path: Path):
    try:
        return open(path, "w", newline="")
    except OSError as e:
        raise OSError(f"cannot write {path}: {e.strerror}") from e


def write_schedules(schedules: Sequence[SiteSchedule], path) -> Path:
    path = Path(path)
    with _open_for_write(path) as fh:
        fh.write(f"# flexagg schedules format_version={FORMAT_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCHEDULE_COLUMNS)
        for row in schedule_rows(schedules):
            w.writerow([row[0], row[1], *(repr(v) for v in row[2:])])
    return path


def read_schedules(path) -> dict[str, dict[str, np.ndarray]]:
    """Per-site columns of a schedules CSV, keyed by site id."""
    out: dict[str, dict[str, list]] = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(line for line in fh if not line.startswith("#")):
            cols = out.setdefault(r["site_id"], {c: [] for c in SCHEDULE_COLUMNS[1:]})
            for c in SCHEDULE_COLUMNS[1:]:
                cols[c].append(float(r[c]))
    return {sid: {c: np.array(v) for c, v in cols.items()} for sid, cols in out.items()}


def write_series(path, columns: Mapping[str, Sequence[float]], kind: str) -> Path:
    """Small CSV with a ``t`` column plus the given series (e.g. the baseline W_base)."""
    path = Path(path)
    names = list(columns)
    n = len(next(iter(columns.values()))) if columns else 0
    with _open_for_write(path) as fh:
        fh.write(f"# flexagg {kind} format_version={FORMAT_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *names])
        for t in range(n):
            w.writerow([t, *(repr(float(columns[c][t])) for c in names)])
    return path


def write_trace(trace, path) -> Path:
    """One JSON object per iteration record."""
    path = Path(path)
    with _open_for_write(path) as fh:
        for rec in trace.records:
            fh.write(json.dumps({"format_version": FORMAT_VERSION, **rec.to_json()}) + "\n")
    return path


def read_trace(path):
    from .admm import ConvergenceTrace, TraceRecord
    tr = ConvergenceTrace()
    with open(path) as fh:
        for line in fh:
            if line.strip():
                tr.append(TraceRecord.from_json(json.loads(line)))
    return tr


def write_json(obj: Mapping, path) -> Path:
    path = Path(path)
    with _open_for_write(path) as fh:
        json.dump({"format_version": FORMAT_VERSION, **obj}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
