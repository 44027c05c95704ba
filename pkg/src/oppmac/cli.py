"""Experiment controller.

Subcommands:
    analyze    fixed-point solutions over an arrival-rate grid -> analysis.csv
    simulate   replicated simulator runs -> per-run JSON + simulate.csv
    validate   analysis vs simulation deltas per rate -> validate.csv
    compare    per-scheme throughput curves -> compare.csv

Exit codes: 0 success, 1 validation tolerance breach, 2 configuration error.
Outputs are deterministic for a given (config, seeds); every file carries a
header naming the units and the configuration hash.
"""

from __future__ import annotations

import argparse
import hashlib
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analysis import analysis_csv_lines, fixed_point
from .config import ConfigError, WlanSetup, default_setup, load_config, setup_hash
from .core import SystemConfig
from .sim import SimReport, run_dcf, run_opportunistic

SIM_SCHEMES = ("opportunistic", "dcf-arf", "dcf-threshold")
ALL_SCHEMES = SIM_SCHEMES + ("analysis",)


@dataclass
class ExperimentSpec:
    """One controller invocation: schemes, rate grid, replication plan."""

    setup: WlanSetup
    schemes: tuple = ("opportunistic",)
    lambdas: tuple = ()
    reps: int = 1
    base_seed: int = 1
    out_dir: Path = Path("results")
    tolerance: float = 0.10
    duration_s: float = 30.0

    def __post_init__(self):
        if self.reps < 1:
            raise ConfigError("--reps", "need at least one replication")
        bad = [s for s in self.schemes if s not in ALL_SCHEMES]
        if bad:
            raise ConfigError("--scheme", f"unknown scheme(s) {bad}")


def _run_seed(base: int, scheme: str, lam: float, rep: int) -> int:
    tag = f"{scheme}|{lam!r}|{rep}".encode()
    return (base + int.from_bytes(hashlib.sha256(tag).digest()[:4], "big")) % 2**63


def _with(config: SystemConfig, **kw) -> SystemConfig:
    vals = dict(config.__dict__)
    vals.update(kw)
    return SystemConfig(**vals)


def _simulate_one(spec: ExperimentSpec, scheme: str, lam: float, rep: int) -> SimReport:
    setup = spec.setup
    cfg = _with(setup.config, lambda_pps=lam,
                seed=_run_seed(spec.base_seed, scheme, lam, rep))
    dur = spec.duration_s * 1e6
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if scheme == "opportunistic":
            return run_opportunistic(cfg, setup.policy, setup.timing, setup.space,
                                     duration_us=dur)
        kind = scheme.split("-", 1)[1]
        return run_dcf(cfg, setup.timing, setup.space, rate_adaptation=kind,
                       duration_us=dur)


def _write(path: Path, lines) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def cmd_analyze(spec: ExperimentSpec) -> int:
    setup = spec.setup
    pi = setup.resolve_pi()
    sols = [fixed_point(lam, setup.config, setup.policy, pi, setup.timing)
            for lam in spec.lambdas]
    _write(spec.out_dir / "analysis.csv", analysis_csv_lines(sols, setup_hash(setup)))
    for s in sols:
        flag = "converged" if s.converged else "NOT CONVERGED"
        print(f"analyze lambda={s.lambda_pps:g}: {flag} "
              f"P_A={s.p_a:.4f} P_S={s.p_s:.4f}")
    return 0


_SIM_METRICS = ("uplink_pps", "downlink_pps", "system_pps", "p_a_hat", "p_s_hat",
                "mean_renewal_us")


def _aggregate(reports: list[SimReport]) -> dict:
    out = {}
    for m in _SIM_METRICS:
        vals = [getattr(r, m) for r in reports]
        vals = [v for v in vals if v is not None]
        if not vals:
            out[m] = (float("nan"), None)
            continue
        mean = float(np.mean(vals))
        err = float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else None
        out[m] = (mean, err)
    return out


def cmd_simulate(spec: ExperimentSpec) -> int:
    setup = spec.setup
    chash = setup_hash(setup)
    meta = {"config_hash": chash, "units": {"throughput": "pkts/s", "time": "us"}}
    lines = [f"# schema=simulate-v1 config_hash={chash} units: pps=pkts/s *_us=us",
             "scheme,lambda_pps,reps," + ",".join(
                 f"{m}_mean,{m}_stderr" for m in _SIM_METRICS)]
    for scheme in spec.schemes:
        if scheme == "analysis":
            continue
        for lam in spec.lambdas:
            reports = []
            for rep in range(spec.reps):
                rep_obj = _simulate_one(spec, scheme, lam, rep)
                name = f"sim_{scheme}_lam{lam:g}_rep{rep}.json"
                _write(spec.out_dir / name, [rep_obj.to_json(meta)])
                reports.append(rep_obj)
            agg = _aggregate(reports)
            cells = [scheme, repr(float(lam)), str(spec.reps)]
            for m in _SIM_METRICS:
                mean, err = agg[m]
                cells.append(repr(mean))
                cells.append("" if err is None else repr(err))
            lines.append(",".join(cells))
            print(f"simulate {scheme} lambda={lam:g}: "
                  f"system={agg['system_pps'][0]:.1f} pps over {spec.reps} rep(s)")
    _write(spec.out_dir / "simulate.csv", lines)
    return 0


def validation_rows(solutions, sim_aggregates, tolerance: float):
    """Pure comparison: per-rate relative errors on P_A, P_S, E[R].

    ``sim_aggregates`` maps lambda -> dict with p_a_hat / p_s_hat /
    mean_renewal_us means.  Returns (rows, breached).
    """
    rows, breached = [], False
    for sol in solutions:
        sim = sim_aggregates[sol.lambda_pps]
        pairs = (
            ("p_a", sol.p_a, sim["p_a_hat"]),
            ("p_s", sol.p_s, sim["p_s_hat"]),
            ("e_r_us", sol.expected_renewal_us, sim["mean_renewal_us"]),
        )
        for metric, ana, meas in pairs:
            if meas is None or not sol.converged:
                rows.append((sol.lambda_pps, metric, ana, meas, None, False))
                breached = True
                continue
            rel = abs(meas - ana) / max(abs(ana), 1e-12)
            ok = rel <= tolerance
            breached = breached or not ok
            rows.append((sol.lambda_pps, metric, ana, meas, rel, ok))
    return rows, breached


def cmd_validate(spec: ExperimentSpec) -> int:
    setup = spec.setup
    pi = setup.resolve_pi()
    sols = [fixed_point(lam, setup.config, setup.policy, pi, setup.timing)
            for lam in spec.lambdas]
    aggs = {}
    for lam in spec.lambdas:
        reports = [_simulate_one(spec, "opportunistic", lam, rep)
                   for rep in range(spec.reps)]
        agg = _aggregate(reports)
        aggs[lam] = {"p_a_hat": agg["p_a_hat"][0], "p_s_hat": agg["p_s_hat"][0],
                     "mean_renewal_us": agg["mean_renewal_us"][0]}
    rows, breached = validation_rows(sols, aggs, spec.tolerance)
    chash = setup_hash(setup)
    lines = [f"# schema=validate-v1 config_hash={chash} units: e_r_us=us "
             f"tolerance={spec.tolerance!r}",
             "lambda_pps,metric,analysis,simulation,rel_err,within_tol"]
    for lam, metric, ana, meas, rel, ok in rows:
        lines.append(",".join([
            repr(float(lam)), metric, repr(float(ana)),
            "" if meas is None else repr(float(meas)),
            "" if rel is None else repr(float(rel)), str(int(ok))]))
        state = "ok" if ok else "BREACH"
        rel_txt = "n/a" if rel is None else f"{rel:.2%}"
        print(f"validate lambda={lam:g} {metric}: analysis={ana:.6g} "
              f"sim={meas if meas is None else float(meas):.6g} err={rel_txt} [{state}]")
    _write(spec.out_dir / "validate.csv", lines)
    return 1 if breached else 0


def cmd_compare(spec: ExperimentSpec) -> int:
    setup = spec.setup
    chash = setup_hash(setup)
    pi = setup.resolve_pi()
    lines = [f"# schema=compare-v1 config_hash={chash} units: pps=pkts/s",
             "scheme,lambda_pps,uplink_pps,downlink_pps,system_pps"]
    for scheme in spec.schemes:
        for lam in spec.lambdas:
            if scheme == "analysis":
                if lam <= 0:
                    up = down = 0.0
                else:
                    sol = fixed_point(lam, setup.config, setup.policy, pi, setup.timing)
                    n = setup.config.n_stations
                    up = n * sol.theta_sta_pps if sol.converged else float("nan")
                    down = n * sol.theta_ap_pps if sol.converged else float("nan")
            else:
                reports = [_simulate_one(spec, scheme, lam, rep)
                           for rep in range(spec.reps)]
                up = float(np.mean([r.uplink_pps for r in reports]))
                down = float(np.mean([r.downlink_pps for r in reports]))
            lines.append(",".join([scheme, repr(float(lam)), repr(up), repr(down),
                                   repr(up + down)]))
            print(f"compare {scheme} lambda={lam:g}: system={up + down:.1f} pps")
    _write(spec.out_dir / "compare.csv", lines)
    return 0


def _parse_lambdas(text: str) -> tuple:
    if not text:
        return ()
    return tuple(float(x) for x in text.split(",") if x.strip() != "")


def build_spec(args) -> ExperimentSpec:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(item, "expected key=value in --set")
        k, _, v = item.partition("=")
        overrides[k.strip()] = v.strip()
    if args.seed is not None:
        overrides["system.seed"] = str(args.seed)
    setup = (load_config(args.config, overrides) if args.config
             else default_setup(overrides))
    schemes = tuple(s.strip() for s in args.scheme.split(",")) if args.scheme \
        else ("opportunistic",)
    return ExperimentSpec(
        setup=setup,
        schemes=schemes,
        lambdas=_parse_lambdas(args.lam),
        reps=args.reps,
        base_seed=args.seed if args.seed is not None else setup.config.seed,
        out_dir=Path(args.out),
        tolerance=args.tolerance,
        duration_s=args.duration_s,
    )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="oppmac",
        description="Opportunistic WLAN MAC: analysis, simulation, validation")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("analyze", cmd_analyze), ("simulate", cmd_simulate),
                     ("validate", cmd_validate), ("compare", cmd_compare)):
        p = sub.add_parser(name)
        p.add_argument("--config", help="configuration file path")
        p.add_argument("--lambda", dest="lam", default="",
                       help="comma-separated arrival rates, pkts/s per queue")
        p.add_argument("--scheme", default="",
                       help=f"comma-separated subset of {ALL_SCHEMES}")
        p.add_argument("--reps", type=int, default=1)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default="results")
        p.add_argument("--tolerance", type=float, default=0.10)
        p.add_argument("--duration-s", type=float, default=30.0,
                       help="simulated seconds per run")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override any config key")
        p.set_defaults(func=fn)
    args = parser.parse_args(argv)
    try:
        spec = build_spec(args)
        return args.func(spec)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
