"""``misopos`` command line.

Precedence of settings: flags > scenario file > defaults. Angles are in
degrees on the command line and radians internally; SNR and LMR are in dB.

Exit status
-----------
0  success
2  usage or configuration error
3  rank-deficient pilots (UML/MM preconditions violated)
4  estimator not applicable to the configuration
5  degenerate design (singular FIM, degenerate pilots)
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .bounds import compute_bounds, fim_singularity_check
from .errors import (ConfigError, DegenerateInputError, DomainError, InapplicableEstimatorError,
                     RankDeficiencyError, SingularFIMError)
from .estimators import estimate
from .experiments import (AXES, SweepSpec, applicable, benchmark_runtimes, draw_trial, grid_for,
                          parse_estimator, run_sweep, runtime_table_to_csv)
from .model import SPEED_OF_LIGHT
from .scenario import Scenario, load_scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RANK = 3
EXIT_INAPPLICABLE = 4
EXIT_DEGENERATE = 5


def parse_values(text: str) -> tuple[float, ...]:
    """``"1:20"`` (inclusive), ``"0:20:5"`` or ``"1,5,10"``."""
    text = text.strip()
    try:
        if ":" in text:
            parts = [float(p) for p in text.split(":")]
            if len(parts) not in (2, 3):
                raise ValueError
            start, stop = parts[0], parts[1]
            step = parts[2] if len(parts) == 3 else 1.0
            if step <= 0 or stop < start:
                raise ValueError
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            return tuple(start + k * step for k in range(count))
        values = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"--values: cannot parse '{text}' (use a:b, a:b:step or a,b,c)") from None
    if not values:
        raise ConfigError("--values is empty")
    return values


def parse_estimators(text: str) -> tuple[str, ...]:
    if text.strip().lower() in ("", "none"):
        return ()
    labels = tuple(t.strip().upper() for t in text.split(",") if t.strip())
    for label in labels:
        parse_estimator(label)
    return labels


# --------------------------------------------------------------------------
# Parser


def _scenario_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("scenario overrides")
    g.add_argument("--scenario", type=Path, help="YAML/JSON scenario file")
    g.add_argument("--snr", type=float, dest="snr_db", help="SNR in dB")
    g.add_argument("--thermal", action="store_true", help="use k_B T_0 B noise and geometric path loss")
    g.add_argument("--G", type=int, dest="n_transmissions", help="number of transmissions")
    g.add_argument("--N", type=int, dest="n_subcarriers", help="number of subcarriers")
    g.add_argument("--nbs", type=int, dest="n_bs_antennas", help="BS antennas")
    g.add_argument("--position", type=float, nargs=2, metavar=("X", "Y"), help="MS position in m")
    g.add_argument("--distance", type=float, help="BS-MS distance in m (with --angle)")
    g.add_argument("--angle", type=float, help="MS angle in degrees (with --distance)")
    g.add_argument("--dmax", type=float, dest="d_max_m", help="service radius in m")
    g.add_argument("--nlos", type=int, dest="n_nlos", help="number of NLOS paths")
    g.add_argument("--lmr", type=float, dest="lmr_db", help="LOS-to-multipath ratio in dB")
    g.add_argument("--phase", type=float, help="fixed LOS gain phase in degrees")
    g.add_argument("--grid-points", type=int, dest="grid_points", help="points per search axis")
    g.add_argument("--lags", type=int, help="MM lag count L")
    g.add_argument("--refine", action=argparse.BooleanOptionalAction, default=None,
                   help="golden-section refinement after the grid search")
    g.add_argument("--seed", type=int, dest="master_seed", help="master seed")
    g.add_argument("--freeze-pilots", action=argparse.BooleanOptionalAction, default=None,
                   dest="freeze_pilots", help="reuse the trial-0 pilots in every trial")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="misopos", description=__doc__.splitlines()[0],
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"misopos {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one trial and print the estimates")
    _scenario_flags(p)
    p.add_argument("--estimators", default="ML2D,UML,MM")
    p.add_argument("--trial", type=int, default=0, help="trial index (seed stream)")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("sweep", help="Monte Carlo RMSE sweep")
    _scenario_flags(p)
    p.add_argument("--axis", required=True, choices=AXES)
    p.add_argument("--values", required=True, type=parse_values)
    p.add_argument("--estimators", default="ML2D,UML,MM")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("bounds", help="CRLB and PEB table")
    _scenario_flags(p)
    p.add_argument("--axis", choices=AXES)
    p.add_argument("--values", type=parse_values)
    p.add_argument("--trials", type=int, default=20, help="pilot draws averaged per value")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("bench", help="runtime versus grid size")
    _scenario_flags(p)
    p.add_argument("--P", dest="p_values", type=parse_values, default=(75, 150, 300, 600))
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--estimators", default="MM,UML,ML2D")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("check-pilots", help="FIM singularity diagnosis for the trial pilots")
    _scenario_flags(p)
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--out", type=Path)
    return parser


def resolve_scenario(args: argparse.Namespace) -> Scenario:
    scenario = load_scenario(args.scenario) if args.scenario else Scenario()
    changes = {}
    for name in ("n_transmissions", "n_subcarriers", "n_bs_antennas", "d_max_m", "n_nlos",
                 "lmr_db", "grid_points", "lags", "refine", "master_seed", "freeze_pilots"):
        value = getattr(args, name, None)
        if value is not None:
            changes[name] = value
    if args.thermal and args.snr_db is not None:
        raise ConfigError("--snr and --thermal are mutually exclusive")
    if args.thermal:
        changes["snr_db"] = None
    elif args.snr_db is not None:
        changes["snr_db"] = args.snr_db
    if args.position is not None and (args.distance is not None or args.angle is not None):
        raise ConfigError("--position conflicts with --distance/--angle")
    if (args.distance is None) != (args.angle is None):
        raise ConfigError("--distance and --angle must be given together")
    if args.position is not None:
        changes["ms_position_m"] = tuple(args.position)
    elif args.distance is not None:
        ang = math.radians(args.angle)
        changes["ms_position_m"] = (args.distance * math.cos(ang), args.distance * math.sin(ang))
    if args.phase is not None:
        changes["gain_phase_rad"] = math.radians(args.phase)
    if changes.get("lmr_db") is not None and scenario.n_nlos == 0 and "n_nlos" not in changes:
        changes["n_nlos"] = 2
    try:
        return scenario.override(**changes)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


# --------------------------------------------------------------------------
# Output


def _out_dir(args) -> Path | None:
    if args.out is None:
        return None
    args.out.mkdir(parents=True, exist_ok=True)
    return args.out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def write_manifest(out: Path, args, scenario: Scenario, argv: Sequence[str], outputs: list[str],
                   extra: dict | None = None) -> Path:
    """Resolved scenario, seeds and arguments: enough to replay the run."""
    options = {k: v for k, v in vars(args).items() if k not in ("func",)}
    manifest = {
        "misopos_version": __version__,
        "command": args.command,
        "argv": list(argv),
        "options": options,
        "scenario": scenario.to_dict(),
        "master_seed": scenario.master_seed,
        "outputs": outputs,
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(_jsonable(manifest), indent=2))
    return path


# --------------------------------------------------------------------------
# Commands


def cmd_simulate(args, scenario: Scenario, argv) -> int:
    labels = parse_estimators(args.estimators)
    trial = draw_trial(scenario, args.trial)
    truth = trial.channel.los
    grid = grid_for(scenario)
    cfg = scenario.system
    d_true = SPEED_OF_LIGHT * truth.delay_s
    results = {"truth": {"d_m": d_true, "theta_deg": math.degrees(truth.aod_rad),
                         "p_m": list(scenario.ms_position_m)},
               "sigma2": trial.sigma2, "estimates": {}}
    print(f"truth: d={d_true:.4f} m theta={math.degrees(truth.aod_rad):.4f} deg "
          f"p=({scenario.ms_position_m[0]:.4f}, {scenario.ms_position_m[1]:.4f}) m")
    status = EXIT_OK
    for label in labels:
        method, lag = parse_estimator(label)
        if method.value == "MM" and not applicable(method, scenario):
            print(f"{label}: inapplicable (MM needs G >= N_BS)")
            results["estimates"][label] = {"status": "inapplicable"}
            status = EXIT_INAPPLICABLE
            continue
        est = estimate(method, trial.observation, trial.pilots, grid, cfg,
                       lags=lag or scenario.lags, refine=scenario.refine)
        p = est.p_hat
        err = float(np.hypot(*(p - np.asarray(scenario.ms_position_m))))
        print(f"{label}: d={est.d_hat:.4f} m theta={math.degrees(est.theta_hat):.4f} deg "
              f"p=({p[0]:.4f}, {p[1]:.4f}) m |p err|={err:.4f} m t={est.wall_time * 1e3:.2f} ms")
        results["estimates"][label] = {
            "d_m": est.d_hat, "theta_deg": math.degrees(est.theta_hat), "p_m": p.tolist(),
            "alpha": [est.alpha_hat.real, est.alpha_hat.imag], "position_error_m": err,
            "wall_time_s": est.wall_time, "status": "ok"}
    out = _out_dir(args)
    if out:
        (out / "simulate.json").write_text(json.dumps(_jsonable(results), indent=2))
        write_manifest(out, args, scenario, argv, ["simulate.json"])
    return status


def cmd_sweep(args, scenario: Scenario, argv) -> int:
    spec = SweepSpec(scenario, args.axis, args.values, parse_estimators(args.estimators),
                     args.trials, scenario.master_seed)
    table = run_sweep(spec, workers=args.workers)
    out = _out_dir(args)
    if out:
        table.to_csv(out / "results.csv")
        table.to_json(out / "summary.json", spec)
        write_manifest(out, args, scenario, argv, ["results.csv", "summary.json"],
                       {"spec_hash": spec.digest()})
    bad = sum(r.status != "ok" for r in table.rows if r.estimator != "BOUND")
    print(f"sweep {args.axis}: {len(spec.values)} values x {len(spec.estimators)} estimators, "
          f"{spec.n_trials} trials, {bad} inapplicable cells" + (f", wrote {out}" if out else ""))
    return EXIT_OK


def cmd_bounds(args, scenario: Scenario, argv) -> int:
    if (args.axis is None) != (args.values is None):
        raise ConfigError("--axis and --values must be given together")
    axis = args.axis or "SNR_dB"
    values = args.values or ((scenario.snr_db,) if scenario.snr_db is not None else (math.nan,))
    if args.axis is None and scenario.snr_db is None:
        axis, values = "G", (scenario.system.n_transmissions,)
    spec = SweepSpec(scenario, axis, values, (), args.trials, scenario.master_seed)
    table = run_sweep(spec)
    for row in table:
        print(f"{axis}={row.axis_value:g}: sqrt CRLB(d)={row.crlb_d_m:.4g} m "
              f"sqrt CRLB(theta)={row.crlb_theta_rad:.4g} rad PEB={row.peb_m:.4g} m")
    out = _out_dir(args)
    if out:
        table.to_csv(out / "bounds.csv")
        table.to_json(out / "bounds.json", spec)
        write_manifest(out, args, scenario, argv, ["bounds.csv", "bounds.json"])
    if any(math.isinf(r.peb_m) for r in table):
        print("singular FIM for at least one design", file=sys.stderr)
        return EXIT_DEGENERATE
    return EXIT_OK


def cmd_bench(args, scenario: Scenario, argv) -> int:
    rows = benchmark_runtimes([int(p) for p in args.p_values], scenario.system.n_transmissions,
                              scenario, repeats=args.repeats,
                              estimators=parse_estimators(args.estimators))
    for r in rows:
        print(f"P={r.grid_points} {r.estimator}: {r.mean_runtime_s * 1e3:.3f} ms "
              f"(x{r.normalized:.2f} of MM@150)")
    out = _out_dir(args)
    if out:
        runtime_table_to_csv(rows, out / "runtime.csv")
        write_manifest(out, args, scenario, argv, ["runtime.csv"])
    return EXIT_OK


def cmd_check_pilots(args, scenario: Scenario, argv) -> int:
    trial = draw_trial(scenario, args.trial)
    check = fim_singularity_check(trial.pilots, trial.channel.los.aod_rad, scenario.system)
    rec = compute_bounds(scenario.system, trial.pilots, trial.truth, trial.sigma2)
    verdict = "singular" if check.singular else "non-singular"
    print(f"FIM {verdict}: {check.diagnosis}")
    out = _out_dir(args)
    if out:
        (out / "check_pilots.json").write_text(json.dumps(_jsonable({
            "singular": check.singular, "diagnosis": check.diagnosis,
            "peb_m": rec.peb_m, "pilot_seed": trial.pilots.seed}), indent=2))
        write_manifest(out, args, scenario, argv, ["check_pilots.json"])
    return EXIT_DEGENERATE if check.singular else EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "bounds": cmd_bounds,
            "bench": cmd_bench, "check-pilots": cmd_check_pilots}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        scenario = resolve_scenario(args)
        return COMMANDS[args.command](args, scenario, argv)
    except (ConfigError, DomainError) as exc:
        print(f"misopos: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InapplicableEstimatorError as exc:
        print(f"misopos: inapplicable estimator: {exc}", file=sys.stderr)
        return EXIT_INAPPLICABLE
    except RankDeficiencyError as exc:
        print(f"misopos: rank deficiency: {exc}", file=sys.stderr)
        return EXIT_RANK
    except (SingularFIMError, DegenerateInputError) as exc:
        print(f"misopos: degenerate design: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except FileNotFoundError as exc:
        print(f"misopos: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
