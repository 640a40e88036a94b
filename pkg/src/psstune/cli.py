"""Command-line entry points: simulate, verify-sens, tune, batch.

Every command takes one scenario file, validates it up front and writes
deterministic CSV artifacts into the scenario's output directory.  Exit
statuses: 0 success, 1 validation error, 2 numerical failure, 3 sensitivity
verification breach.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .errors import PsstuneError, ScenarioError
from .scenario import Scenario, load_scenario, save_scenario
from .sensitivity import fd_sensitivity, propagate_sensitivities, write_speed_sensitivity_csv
from .simulator import simulate, write_junctions_csv, write_trajectory_csv
from .tuning import SimulationBundle, tune

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2
EXIT_VERIFY_FAIL = 3


def _error_record(outdir, kind, message):
    rec = {"error": kind, "message": str(message)}
    if outdir is not None:
        try:
            Path(outdir).mkdir(parents=True, exist_ok=True)
            with open(Path(outdir) / "error.json", "w") as fh:
                json.dump(rec, fh, indent=2)
        except OSError:
            pass
    print(json.dumps(rec), file=sys.stderr)


def _relative_angles(model, traj):
    """delta_i - delta_1 columns for every machine beyond the reference."""
    lay = model.layout
    out = {}
    ref = traj.states[:, lay.delta_idx[0]]
    for i in range(1, lay.n_mach):
        col = traj.states[:, lay.delta_idx[i]] - ref
        out[f"delta{i + 1}1_rad"] = col
    return out


def _envelope(times, series, lo, hi):
    mask = (times >= lo) & (times <= hi)
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(series[mask] - series[-1])))


def _windows(t0, tf):
    # [0.5, 5] vs [5, 10] s on the nominal 10 s horizon, scaled to the run.
    span = tf - t0
    return (t0 + 0.05 * span, t0 + 0.5 * span), (t0 + 0.5 * span, tf)


def _summary(model, traj, j_value):
    lay = model.layout
    t = traj.times
    early_w, late_w = _windows(t[0], t[-1])
    rows = {"J": j_value}
    rel = _relative_angles(model, traj)
    for name, series in rel.items():
        peak = float(np.max(np.abs(series)))
        early = _envelope(t, series, *early_w)
        late = _envelope(t, series, *late_w)
        short = name.replace("_rad", "")
        rows[f"peak_abs_{short}"] = peak
        rows[f"envelope_early_{short}"] = early
        rows[f"envelope_late_{short}"] = late
        rows[f"decaying_{short}"] = int(late < early)
    return rows


def _write_summary(path, rows):
    with open(path, "w", newline="") as fh:
        fh.write("# schema=psstune.summary.v1\n")
        w = csv.writer(fh)
        w.writerow(list(rows))
        w.writerow([format(v, ".17g") if isinstance(v, float) else v
                    for v in rows.values()])


def _run_scenario(scenario: Scenario):
    model, events, x0, y0 = scenario.build()
    traj = simulate(model, x0, events, scenario.integrator, y0_guess=y0)
    return model, events, x0, y0, traj


def cmd_simulate(scenario_path, outdir_override=None) -> int:
    outdir = None
    try:
        scenario = load_scenario(scenario_path)
        outdir = Path(outdir_override or scenario.output_dir)
    except FileNotFoundError as err:
        _error_record(outdir_override, "file-not-found", err)
        return EXIT_VALIDATION
    except (ScenarioError, PsstuneError) as err:
        _error_record(outdir_override, "validation", err)
        return EXIT_VALIDATION
    try:
        model, events, x0, y0, traj = _run_scenario(scenario)
    except PsstuneError as err:
        _error_record(outdir, "numerical", err)
        return EXIT_NUMERICAL
    outdir.mkdir(parents=True, exist_ok=True)
    extra = _relative_angles(model, traj)
    write_trajectory_csv(outdir / "trajectory.csv", model, traj, extra=extra)
    write_junctions_csv(outdir / "junctions.csv", model, traj)
    bundle = SimulationBundle(model, events, x0, scenario.integrator,
                              scenario.objective, y0_guess=y0)
    j_value = bundle.objective_from_trajectory(traj)
    rows = _summary(model, traj, j_value)
    _write_summary(outdir / "summary.csv", rows)
    for k, v in rows.items():
        print(f"{k} = {v}")
    return EXIT_OK


def cmd_verify_sens(scenario_path, h=1e-6, tol=1e-3, outdir_override=None,
                    t_skip=0.2) -> int:
    """Propagated vs finite-difference speed sensitivities, per parameter."""
    outdir = None
    try:
        if h <= 0:
            raise ScenarioError(f"perturbation h must be positive, got {h}")
        scenario = load_scenario(scenario_path)
        if not scenario.pss:
            raise ScenarioError("verify-sens needs at least one PSS-equipped machine")
        outdir = Path(outdir_override or scenario.output_dir)
    except FileNotFoundError as err:
        _error_record(outdir_override, "file-not-found", err)
        return EXIT_VALIDATION
    except (ScenarioError, PsstuneError) as err:
        _error_record(outdir_override, "validation", err)
        return EXIT_VALIDATION
    try:
        model, events, x0, y0, traj = _run_scenario(scenario)
        cols = model.lambda_indices
        sens = propagate_sensitivities(model, traj, scenario.integrator, columns=cols)
        lay = model.layout
        t = traj.times
        window = t >= t[0] + t_skip
        report = []
        worst = 0.0
        for cpos, (cidx, cname) in enumerate(zip(cols, model.lambda_names)):
            _, dx, _ = fd_sensitivity(model, x0, events, scenario.integrator,
                                      index=int(cidx), h=h, y0_guess=y0)
            for gi, gname in enumerate(lay.machine_names):
                row = lay.omega_idx[gi]
                fd = dx[window, row]
                prop = sens.phi_x[window, row, cpos]
                big = np.abs(fd) > 1e-6
                if big.any():
                    err = float(np.max(np.abs(prop[big] - fd[big]) / np.abs(fd[big])))
                    n_cmp = int(big.sum())
                else:
                    err, n_cmp = 0.0, 0
                worst = max(worst, err)
                report.append((cname, gname, err, n_cmp, int(err <= tol)))
        outdir.mkdir(parents=True, exist_ok=True)
        with open(outdir / "sensitivity_report.csv", "w", newline="") as fh:
            fh.write("# schema=psstune.sens_report.v1\n")
            w = csv.writer(fh)
            w.writerow(["parameter", "generator", "max_rel_err", "n_compared", "pass"])
            for row in report:
                w.writerow([row[0], row[1], format(row[2], ".6e"), row[3], row[4]])
        write_speed_sensitivity_csv(
            outdir / "speed_sensitivities.csv", traj.times, sens,
            row_indices=list(lay.omega_idx),
            row_names=[f"omega_{g}" for g in lay.machine_names],
            col_names=model.lambda_names,
        )
    except PsstuneError as err:
        _error_record(outdir, "numerical", err)
        return EXIT_NUMERICAL
    for cname, gname, err, n_cmp, ok in report:
        print(f"{cname:>10s} x {gname}: max rel err {err:.3e} over {n_cmp} samples "
              f"{'ok' if ok else 'FAIL'}")
    if worst > tol:
        print(f"worst relative error {worst:.3e} exceeds tolerance {tol}")
        return EXIT_VERIFY_FAIL
    return EXIT_OK


def cmd_tune(scenario_path, outdir_override=None) -> int:
    outdir = None
    try:
        scenario = load_scenario(scenario_path)
        if not scenario.pss:
            raise ScenarioError("tune needs at least one PSS-equipped machine")
        outdir = Path(outdir_override or scenario.output_dir)
    except FileNotFoundError as err:
        _error_record(outdir_override, "file-not-found", err)
        return EXIT_VALIDATION
    except (ScenarioError, PsstuneError) as err:
        _error_record(outdir_override, "validation", err)
        return EXIT_VALIDATION
    try:
        bundle = scenario.bundle()
        config = scenario.cgm_config()
        lam0 = scenario.lambda0()
        result = tune(bundle, lam0, config)
    except PsstuneError as err:
        _error_record(outdir, "numerical", err)
        return EXIT_NUMERICAL

    outdir.mkdir(parents=True, exist_ok=True)
    result.trace_to_csv(outdir / "tuning_trace.csv", bundle.lam_names)
    tuned = scenario.with_pss_values(result.lambda_star)
    save_scenario(outdir / "tuned_scenario.yaml", tuned)
    for tag, lam in (("before", lam0), ("after", result.lambda_star)):
        traj = bundle.simulate_at(lam)
        write_trajectory_csv(outdir / f"trajectory_{tag}.csv", bundle.model, traj,
                             extra=_relative_angles(bundle.model, traj))
    print(f"status = {result.status}")
    print(f"J before = {result.j_initial:.9e}")
    print(f"J after  = {result.j_final:.9e}")
    for name, v0, v1 in zip(bundle.lam_names, lam0, result.lambda_star):
        print(f"{name}: {v0:.6g} -> {v1:.6g}")
    if result.status == "line_search_failure" and len(result.iterates) <= 1:
        return EXIT_NUMERICAL
    return EXIT_OK


def _batch_one(args):
    path, outdir = args
    return str(path), cmd_simulate(path, outdir)


def cmd_batch(list_path, jobs=1) -> int:
    try:
        lines = [ln.strip() for ln in Path(list_path).read_text().splitlines()]
        paths = [ln for ln in lines if ln and not ln.startswith("#")]
        if not paths:
            raise ScenarioError(f"batch list {list_path} names no scenarios")
    except FileNotFoundError as err:
        _error_record(None, "file-not-found", err)
        return EXIT_VALIDATION
    except ScenarioError as err:
        _error_record(None, "validation", err)
        return EXIT_VALIDATION
    base = Path(list_path).parent
    work = [(str(base / p) if not Path(p).is_absolute() else p, None) for p in paths]
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_batch_one, work))
    else:
        results = [_batch_one(w) for w in work]
    status = EXIT_OK
    for path, code in results:
        print(f"{path}: exit {code}")
        status = max(status, code)
    return status


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="psstune",
        description="Hybrid DAE transient simulation and PSS parameter tuning",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run one scenario, write CSV artifacts")
    p_sim.add_argument("scenario")
    p_sim.add_argument("--out", default=None, help="output directory override")

    p_ver = sub.add_parser("verify-sens",
                           help="compare propagated vs finite-difference sensitivities")
    p_ver.add_argument("scenario")
    p_ver.add_argument("--h", type=float, default=1e-6, help="FD perturbation")
    p_ver.add_argument("--tol", type=float, default=1e-3,
                       help="max allowed relative error")
    p_ver.add_argument("--out", default=None)

    p_tune = sub.add_parser("tune", help="optimize the PSS parameters of a scenario")
    p_tune.add_argument("scenario")
    p_tune.add_argument("--out", default=None)

    p_batch = sub.add_parser("batch", help="simulate every scenario in a list file")
    p_batch.add_argument("list_file")
    p_batch.add_argument("--jobs", type=int, default=1)

    args = parser.parse_args(argv)
    if args.command == "simulate":
        return cmd_simulate(args.scenario, args.out)
    if args.command == "verify-sens":
        return cmd_verify_sens(args.scenario, h=args.h, tol=args.tol,
                               outdir_override=args.out)
    if args.command == "tune":
        return cmd_tune(args.scenario, args.out)
    if args.command == "batch":
        return cmd_batch(args.list_file, jobs=args.jobs)
    parser.error(f"unknown command {args.command}")
    return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
