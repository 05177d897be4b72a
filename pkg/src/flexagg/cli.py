"""Command-line entry point: ``flexagg {synth,baseline,alfo,alfm,admm,compare}``.

Exit codes: 0 success, 2 usage or bad input, 3 infeasible, 4 a resource limit
(MILP time/node cap, ADMM iteration or time cap) ended the run.  Results are
still written on exit 4 when there is something to write.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

from . import admm
from .admm import AdmmParams, VARIANTS
from .central import FlexRequest, make_offer, solve_alfm, solve_alfo
from .scenario import (FORMAT_VERSION, ScenarioError, generate_synthetic, load_request,
                       load_scenario, save_scenario, write_json, write_schedules, write_series,
                       write_trace)
from .site import compute_baseline, SolveError
from .solver import MilpOptions, ModelError, Status

log = logging.getLogger("flexagg")

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_LIMIT = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {v}")
    return v


def _nonneg_int(s: str) -> int:
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative, got {v}")
    return v


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _milp(args) -> MilpOptions:
    return MilpOptions(gap_tol=args.mip_gap, time_limit=args.mip_time_limit)


def _load(args):
    return load_scenario(args.scenario)


def _request(args, sc, baseline) -> FlexRequest:
    spec = load_request(args.fr) if args.fr else sc.request
    if spec is None:
        raise UsageError("no flexibility request: pass --fr or add a [request] table")
    if args.peak_caps:
        spec = type(spec)(spec.amounts, True, spec.penalty)
    try:
        return spec.resolve(baseline.series)
    except ModelError as e:
        raise ScenarioError(str(e)) from e


def _baseline_files(out: Path, baseline) -> None:
    write_series(out / "baseline.csv", {"w_base": baseline.series}, "baseline")


# -- commands -----------------------------------------------------------------

def cmd_synth(args) -> int:
    sc = generate_synthetic(args.sites, args.seed)
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    save_scenario(sc, out)
    print(f"wrote {out} ({args.sites} sites, seed {args.seed})")
    return EXIT_OK


def cmd_baseline(args) -> int:
    sc = _load(args)
    out = _out_dir(args.out)
    base = compute_baseline(sc.sites, workers=args.threads, options=_milp(args))
    write_schedules(base.schedules, out / "schedules.csv")
    _baseline_files(out, base)
    print(f"baseline cost {base.total_cost:.6f} EUR over {len(sc.sites)} sites")
    return EXIT_OK


def cmd_alfo(args) -> int:
    sc = _load(args)
    out = _out_dir(args.out)
    opts = _milp(args)
    base = compute_baseline(sc.sites, workers=args.threads, options=opts)
    req = _request(args, sc, base)
    _baseline_files(out, base)
    schedules, offer = solve_alfo(sc.sites, req, opts)
    write_schedules(schedules, out / "schedules.csv")
    write_json({"kind": "offer", "baseline_cost_eur": base.total_cost, **offer.to_dict()},
               out / "offer.json")
    print(f"offer {[round(float(v), 6) for v in offer.offered]} kWh "
          f"of {[round(float(v), 6) for v in offer.requested]} requested")
    return EXIT_OK


def cmd_alfm(args) -> int:
    sc = _load(args)
    out = _out_dir(args.out)
    opts = _milp(args)
    base = compute_baseline(sc.sites, workers=args.threads, options=opts)
    req = _request(args, sc, base)
    _baseline_files(out, base)
    schedules = solve_alfm(sc.sites, req, opts)
    write_schedules(schedules, out / "schedules.csv")
    report = make_offer(req, schedules)
    write_json({"kind": "fulfilment", "baseline_cost_eur": base.total_cost, **report.to_dict()},
               out / "offer.json")
    print(f"fulfilment cost {report.total_cost:.6f} EUR "
          f"(baseline {base.total_cost:.6f})")
    return EXIT_OK


def _admm_params(args) -> AdmmParams:
    try:
        return AdmmParams(rho0=args.rho0, gamma=args.gamma, tau_incr=args.tau_incr,
                          tau_decr=args.tau_decr, mu=args.mu, k_i=args.ki, k_d=args.kd,
                          eps_pri=args.eps_pri, eps_dual=args.eps_dual,
                          switch_fraction=args.switch_frac, switch_absolute=args.switch_abs,
                          max_iters=args.max_iters, max_time=args.max_time,
                          n_segments=args.segments, variant=args.variant, milp=_milp(args))
    except ModelError as e:
        raise UsageError(str(e)) from e


def _admm_summary(res, wall: float) -> dict:
    return {"variant": res.trace.meta["variant"], "reason": res.reason,
            "iterations": res.iterations, "k_switch": res.state.k_switch,
            "total_cost_eur": res.total_cost, "r_norm": res.trace[-1].r_norm,
            "s_norm": res.trace[-1].s_norm, "wall_s": wall}


def cmd_admm(args) -> int:
    params = _admm_params(args)
    sc = _load(args)
    out = _out_dir(args.out)
    base = compute_baseline(sc.sites, workers=args.threads, options=params.milp)
    req = _request(args, sc, base)
    _baseline_files(out, base)
    t0 = time.perf_counter()
    res = admm.run(sc.sites, req, params, baseline=base, workers=args.threads)
    wall = time.perf_counter() - t0
    write_schedules(res.schedules, out / "schedules.csv")
    write_trace(res.trace, out / "trace.jsonl")
    summary = _admm_summary(res, wall)
    write_json(summary, out / "admm.json")
    print(f"{res.reason} after {res.iterations} iterations, cost {res.total_cost:.6f} EUR, "
          f"|r| {summary['r_norm']:.3g} kWh")
    return EXIT_OK if res.reason == admm.CONVERGED else EXIT_LIMIT


def cmd_compare(args) -> int:
    params = _admm_params(args)
    sc = _load(args)
    out = _out_dir(args.out)
    t0 = time.perf_counter()
    base = compute_baseline(sc.sites, workers=args.threads, options=params.milp)
    t_base = time.perf_counter() - t0
    req = _request(args, sc, base)
    _baseline_files(out, base)

    t0 = time.perf_counter()
    alfm_cost, alfm_status = None, Status.OPTIMAL.value
    try:
        central = solve_alfm(sc.sites, req, MilpOptions(params.milp.gap_tol, None,
                                                        args.alfm_time_limit))
        alfm_cost = float(sum(s.cost for s in central))
    except SolveError as e:
        if e.status is Status.INFEASIBLE:
            raise
        alfm_status = e.status.value
    t_alfm = time.perf_counter() - t0

    t0 = time.perf_counter()
    res = admm.run(sc.sites, req, params, baseline=base, workers=args.threads)
    t_admm = time.perf_counter() - t0
    write_schedules(res.schedules, out / "schedules.csv")
    write_trace(res.trace, out / "trace.jsonl")

    gap = None
    if alfm_cost is not None:
        gap = 100.0 * (res.total_cost - alfm_cost) / abs(alfm_cost) if alfm_cost else 0.0
    report = {
        "n_sites": len(sc.sites),
        "periods": list(req.periods),
        "fr_kwh": [float(req.fr[t]) for t in req.periods],
        "baseline_cost_eur": base.total_cost,
        "alfm": {"status": alfm_status, "total_cost_eur": alfm_cost, "wall_s": t_alfm},
        "admm": _admm_summary(res, t_admm),
        "gap_pct": gap,
        "baseline_wall_s": t_base,
    }
    write_json(report, out / "compare.json")
    with open(out / "cost_over_time.csv", "w", newline="") as fh:
        fh.write(f"# flexagg cost_over_time format_version={FORMAT_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "wall_s", "admm_cost", "r_norm", "alfm_cost", "alfm_wall_s"])
        for r in res.trace.records:
            w.writerow([r.k, repr(r.wall_s), repr(r.total_cost), repr(r.r_norm),
                        "" if alfm_cost is None else repr(alfm_cost), repr(t_alfm)])
    gap_txt = "n/a" if gap is None else f"{gap:.3f}%"
    print(f"ALFM {alfm_status} {t_alfm:.1f}s; ADMM {res.reason} k={res.iterations} "
          f"{t_admm:.1f}s; gap {gap_txt}")
    if alfm_cost is None or res.reason != admm.CONVERGED:
        return EXIT_LIMIT
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, *, request: bool) -> None:
    p.add_argument("--scenario", required=True, help="scenario TOML file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=_positive_int, default=1,
                   help="worker processes for per-site solves (outputs do not depend on it)")
    p.add_argument("--mip-gap", type=float, default=1e-4, help="relative MILP gap")
    p.add_argument("--mip-time-limit", type=float, default=None,
                   help="seconds per MILP solve")
    if request:
        p.add_argument("--fr", help="request file (TOML or t,fr CSV); default: the "
                                    "scenario's [request] table")
        p.add_argument("--peak-caps", action="store_true",
                       help="cap aggregate buy/sell at the target's maximum")


def _admm_flags(p: argparse.ArgumentParser) -> None:
    d = AdmmParams()
    p.add_argument("--variant", choices=sorted(VARIANTS), default=d.variant)
    p.add_argument("--rho0", type=float, default=d.rho0)
    p.add_argument("--gamma", type=float, default=d.gamma)
    p.add_argument("--tau-incr", type=float, default=d.tau_incr)
    p.add_argument("--tau-decr", type=float, default=d.tau_decr)
    p.add_argument("--mu", type=float, default=d.mu)
    p.add_argument("--ki", type=float, default=d.k_i)
    p.add_argument("--kd", type=float, default=d.k_d)
    p.add_argument("--eps-pri", type=float, default=d.eps_pri, help="kWh")
    p.add_argument("--eps-dual", type=float, default=d.eps_dual, help="kWh")
    p.add_argument("--switch-frac", type=float, default=d.switch_fraction,
                   help="soft phase starts once |r| <= this fraction of |FR|")
    p.add_argument("--switch-abs", type=float, default=None,
                   help="absolute switch threshold in kWh (overrides --switch-frac)")
    p.add_argument("--max-iters", type=_nonneg_int, default=d.max_iters)
    p.add_argument("--max-time", type=float, default=None, help="seconds")
    p.add_argument("--segments", type=_positive_int, default=d.n_segments,
                   help="tangent pieces per side of each linearized quadratic")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flexagg", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic scenario")
    p.add_argument("--sites", type=_positive_int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="scenario file to write")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("baseline", help="independent site optima and W_base")
    _common(p, request=False)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("alfo", help="centralized flexibility offer")
    _common(p, request=True)
    p.set_defaults(func=cmd_alfo)

    p = sub.add_parser("alfm", help="centralized minimum-cost fulfilment")
    _common(p, request=True)
    p.set_defaults(func=cmd_alfm)

    p = sub.add_parser("admm", help="distributed fulfilment by ADMM")
    _common(p, request=True)
    _admm_flags(p)
    p.set_defaults(func=cmd_admm)

    p = sub.add_parser("compare", help="centralized fulfilment vs two-step ADMM")
    _common(p, request=True)
    _admm_flags(p)
    p.add_argument("--alfm-time-limit", type=float, default=None,
                   help="seconds allowed for the centralized solve")
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)   # exits with 2 on bad usage
    logging.basicConfig(level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ScenarioError) as e:
        print(f"flexagg {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SolveError as e:
        print(f"flexagg {args.command}: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE if e.status in (Status.INFEASIBLE, Status.UNBOUNDED) else EXIT_LIMIT
    except OSError as e:
        print(f"flexagg {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
