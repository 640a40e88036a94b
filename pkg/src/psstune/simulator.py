"""Implicit trapezoidal integration of hybrid DAE models.

Each step solves the coupled difference/algebraic system

    x1 - x0 - (dt/2) * (f(x0, y0) + f(x1, y1)) = 0
    g_mode(x1, y1) = 0

by full-step Newton on a dense bordered Jacobian.  Events fall exactly on
grid points (enforced by scenario validation), so a junction contributes two
samples at the same time: the pre-event point in the old mode and the
post-event point with the re-solved algebraic state in the new mode.  The
continuous states never jump; discrete states jump only at reset events.

There is no step-size adaptation and no retry on Newton failure: identical
inputs produce bitwise-identical trajectories, which the optimizer on top of
this module relies on.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import NewtonError, ScenarioError
from .hybrid import AugmentedState, EventSpec, apply_reset, eval_f, eval_g

Array = np.ndarray

_GRID_TOL = 1e-9


@dataclass
class IntegratorConfig:
    dt: float = 0.01
    newton_tol: float = 1e-8
    newton_max_iter: int = 20
    t0: float = 0.0
    tf: float = 10.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ScenarioError(f"dt must be positive, got {self.dt}")
        if self.tf <= self.t0:
            raise ScenarioError(f"tf={self.tf} must exceed t0={self.t0}")
        if self.newton_tol <= 0:
            raise ScenarioError("newton_tol must be positive")
        if self.newton_max_iter < 1:
            raise ScenarioError("newton_max_iter must be at least 1")

    @property
    def n_steps(self) -> int:
        steps = (self.tf - self.t0) / self.dt
        n = int(round(steps))
        if abs(steps - n) > _GRID_TOL * max(1.0, abs(steps)):
            raise ScenarioError(
                f"(tf - t0) = {self.tf - self.t0} is not an integer multiple of dt={self.dt}"
            )
        return n


@dataclass
class JunctionRecord:
    """State of the model just before and after one fired event.

    ``index`` is the position of the pre-event sample in the trajectory
    arrays; the post-event sample sits at ``index + 1`` with the same time.
    For switching events x is identical on both sides; for reset events the
    z block of ``x_plus`` differs from ``x_minus``.
    """

    t: float
    index: int
    event: EventSpec
    pre_mode: int
    post_mode: int
    f_minus: Array
    f_plus: Array
    y_minus: Array
    y_plus: Array
    x_minus: Array
    x_plus: Array


@dataclass
class Trajectory:
    times: Array
    states: Array  # (T, nx)
    algebraics: Array  # (T, m)
    modes: Array  # (T,) int
    junctions: list = field(default_factory=list)

    def __len__(self):
        return len(self.times)

    def state_at(self, dims, i: int) -> AugmentedState:
        return AugmentedState.unpack(dims, self.states[i])


def _lu_factor_checked(a: Array, context: str, t=None, mode=None, stage=None):
    """Dense LU with an explicit singularity check."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
    diag = np.abs(np.diag(lu))
    if not np.all(np.isfinite(lu)) or np.any(diag == 0.0):
        raise NewtonError(
            f"singular Jacobian while {context}",
            t=t,
            mode=mode,
            stage=stage,
        )
    return lu, piv


def solve_initial_algebraic(model, x0, t0, mode, config: IntegratorConfig, y_guess=None):
    """Solve 0 = g_mode(x0, y) for a consistent initial algebraic state.

    Newton iteration from ``y_guess`` (zeros if omitted); the returned y
    satisfies the residual to ``config.newton_tol`` in max-norm.
    """
    x0 = np.asarray(x0, dtype=float)
    m = model.dims.m
    y = np.zeros(m) if y_guess is None else np.array(y_guess, dtype=float)
    if m == 0:
        return y
    for _ in range(config.newton_max_iter + 1):
        r = eval_g(model, mode, x0, y)
        rnorm = float(np.max(np.abs(r)))
        if rnorm <= config.newton_tol:
            return y
        gy = np.asarray(model.gy_modes[mode](x0, y), dtype=float)
        lu, piv = _lu_factor_checked(
            gy, "solving initial algebraic state", t=t0, mode=mode, stage="init"
        )
        y = y - scipy.linalg.lu_solve((lu, piv), r, check_finite=False)
        if not np.all(np.isfinite(y)):
            raise NewtonError(
                "initial algebraic solve diverged",
                residual_norm=rnorm,
                t=t0,
                mode=mode,
                stage="init",
            )
    raise NewtonError(
        f"initial algebraic solve did not converge in {config.newton_max_iter} iterations",
        residual_norm=rnorm,
        t=t0,
        mode=mode,
        stage="init",
    )


def _newton_trap(model, mode, x0, y0, f0, t1, dt, config):
    """Newton solve of one trapezoidal step; returns (x1, y1, lu, piv, jac parts).

    Conserved rows (z and lambda) are pinned to their incoming values after
    every update: their f rows are identically zero, so the exact solution
    keeps them bitwise unchanged.
    """
    nx, n, m = model.dims.nx, model.dims.n, model.dims.m
    x1 = x0.copy()
    y1 = y0.copy()
    half = 0.5 * dt
    lu = piv = None
    for _ in range(config.newton_max_iter + 1):
        f1 = eval_f(model, x1, y1)
        r_top = x1 - x0 - half * (f0 + f1)
        r_bot = eval_g(model, mode, x1, y1)
        rnorm = float(max(np.max(np.abs(r_top)), np.max(np.abs(r_bot)) if m else 0.0))
        if rnorm <= config.newton_tol:
            return x1, y1, rnorm
        fx1 = np.asarray(model.fx(x1, y1), dtype=float)
        fy1 = np.asarray(model.fy(x1, y1), dtype=float)
        gx1 = np.asarray(model.gx_modes[mode](x1, y1), dtype=float)
        gy1 = np.asarray(model.gy_modes[mode](x1, y1), dtype=float)
        jac = np.zeros((nx + m, nx + m))
        jac[:nx, :nx] = -half * fx1
        jac[:nx, :nx] += np.eye(nx)
        jac[:nx, nx:] = -half * fy1
        jac[nx:, :nx] = gx1
        jac[nx:, nx:] = gy1
        lu, piv = _lu_factor_checked(
            jac, "advancing a trapezoidal step", t=t1, mode=mode, stage="step"
        )
        delta = scipy.linalg.lu_solve(
            (lu, piv), np.concatenate([r_top, r_bot]), check_finite=False
        )
        x1 = x1 - delta[:nx]
        y1 = y1 - delta[nx:]
        x1[n:] = x0[n:]
        if not (np.all(np.isfinite(x1)) and np.all(np.isfinite(y1))):
            raise NewtonError(
                "trapezoidal step diverged",
                residual_norm=rnorm,
                t=t1,
                mode=mode,
                stage="step",
            )
    raise NewtonError(
        f"trapezoidal step did not converge in {config.newton_max_iter} iterations",
        residual_norm=rnorm,
        t=t1,
        mode=mode,
        stage="step",
    )


def trapezoidal_step(model, mode, x_k, y_k, t_k, dt, config: IntegratorConfig):
    """Advance one implicit trapezoidal step in a fixed mode."""
    x_k = np.asarray(x_k, dtype=float)
    y_k = np.asarray(y_k, dtype=float)
    f_k = eval_f(model, x_k, y_k)
    x1, y1, _ = _newton_trap(model, mode, x_k, y_k, f_k, t_k + dt, dt, config)
    return x1, y1


def switch_mode(model, event: EventSpec, x, y_minus, t_j, config: IntegratorConfig,
                index: int = -1) -> JunctionRecord:
    """Fire one event at t_j: re-solve the algebraic state in the post mode.

    For reset events the discrete block of x is updated through the reset
    map first; the continuous states are never touched.
    """
    x = np.asarray(x, dtype=float)
    y_minus = np.asarray(y_minus, dtype=float)
    f_minus = eval_f(model, x, y_minus)
    x_plus = x.copy()
    if event.kind == "reset":
        n, l = model.dims.n, model.dims.l
        x_plus[n : n + l] = apply_reset(model, event.reset_id, x, y_minus)
    try:
        y_plus = solve_initial_algebraic(
            model, x_plus, t_j, event.post_mode, config, y_guess=y_minus
        )
    except NewtonError as err:
        raise NewtonError(
            f"post-event algebraic solve failed at t={t_j} "
            f"({event.pre_mode} -> {event.post_mode}): {err}",
            residual_norm=err.residual_norm,
            t=t_j,
            mode=event.post_mode,
            stage="junction",
        ) from err
    f_plus = eval_f(model, x_plus, y_plus)
    return JunctionRecord(
        t=float(t_j),
        index=index,
        event=event,
        pre_mode=event.pre_mode,
        post_mode=event.post_mode,
        f_minus=f_minus,
        f_plus=f_plus,
        y_minus=y_minus.copy(),
        y_plus=y_plus,
        x_minus=x.copy(),
        x_plus=x_plus,
    )


def validate_events(events: Sequence[EventSpec], config: IntegratorConfig,
                    initial_mode: int = 0, model=None) -> None:
    """Check ordering, grid alignment and mode chaining of a scenario.

    State-triggered events are represented in the data model but rejected
    here: junction-time sensitivities for them are not implemented.
    """
    prev_t = None
    mode = initial_mode
    for ev in events:
        if not ev.time_triggered:
            raise ScenarioError(
                "state-triggered events are not supported by the shipped scenarios"
            )
        t = float(ev.t_event)
        if t < config.t0 - _GRID_TOL or t >= config.tf - _GRID_TOL:
            raise ScenarioError(
                f"event time {t} outside [{config.t0}, {config.tf})"
            )
        k = (t - config.t0) / config.dt
        if abs(k - round(k)) > _GRID_TOL * max(1.0, abs(k)):
            raise ScenarioError(
                f"event time {t} is not on the dt={config.dt} grid"
            )
        if prev_t is not None and t <= prev_t + _GRID_TOL:
            raise ScenarioError("event times must be strictly increasing")
        if ev.pre_mode != mode:
            raise ScenarioError(
                f"event at t={t} expects pre-mode {ev.pre_mode} but the chain is in mode {mode}"
            )
        if model is not None:
            for m in (ev.pre_mode, ev.post_mode):
                if m not in model.g_modes:
                    raise ScenarioError(f"event references unknown mode {m}")
        mode = ev.post_mode
        prev_t = t


def simulate(model, x0, events: Sequence[EventSpec], config: IntegratorConfig,
             y0_guess=None, initial_mode: int = 0) -> Trajectory:
    """Integrate the hybrid DAE over [t0, tf] with event-ordered switching.

    ``x0`` may be an AugmentedState or a packed vector and must already
    include the parameter values.  Junction times contribute two samples
    (pre and post); every stored point satisfies the active algebraic
    residual to the Newton tolerance.
    """
    if isinstance(x0, AugmentedState):
        x0 = x0.pack()
    x0 = np.asarray(x0, dtype=float)
    events = list(events)
    validate_events(events, config, initial_mode=initial_mode, model=model)
    n_steps = config.n_steps
    nx, m = model.dims.nx, model.dims.m

    total = n_steps + 1 + len(events)
    times = np.empty(total)
    states = np.empty((total, nx))
    algebraics = np.empty((total, m))
    modes = np.empty(total, dtype=int)
    junctions: list[JunctionRecord] = []

    mode = initial_mode
    t = config.t0
    y = solve_initial_algebraic(model, x0, t, mode, config, y_guess=y0_guess)
    x = x0.copy()

    row = 0
    times[row] = t
    states[row] = x
    algebraics[row] = y
    modes[row] = mode
    next_ev = 0

    def fire_due_events(next_ev, row, t, x, y, mode):
        while next_ev < len(events) and abs(events[next_ev].t_event - t) <= _GRID_TOL:
            ev = events[next_ev]
            rec = switch_mode(model, ev, x, y, t, config, index=row)
            junctions.append(rec)
            row += 1
            times[row] = t
            states[row] = rec.x_plus
            algebraics[row] = rec.y_plus
            modes[row] = ev.post_mode
            x, y, mode = rec.x_plus, rec.y_plus, ev.post_mode
            next_ev += 1
        return next_ev, row, x, y, mode

    next_ev, row, x, y, mode = fire_due_events(next_ev, row, t, x, y, mode)

    for k in range(n_steps):
        t_next = config.t0 + (k + 1) * config.dt
        x, y, _ = _newton_trap(
            model, mode, x, y, eval_f(model, x, y), t_next, config.dt, config
        )
        row += 1
        times[row] = t_next
        states[row] = x
        algebraics[row] = y
        modes[row] = mode
        next_ev, row, x, y, mode = fire_due_events(next_ev, row, t_next, x, y, mode)

    assert row == total - 1, "trajectory buffer bookkeeping"
    return Trajectory(
        times=times,
        states=states,
        algebraics=algebraics,
        modes=modes,
        junctions=junctions,
    )


def _fmt(v) -> str:
    return format(float(v), ".17g")


def write_trajectory_csv(path, model, traj: Trajectory, dims=None, extra=None,
                         schema: str = "psstune.trajectory.v1") -> None:
    """Write t, mode, continuous states and algebraic states to CSV.

    ``extra`` is an optional mapping of derived column name -> array.
    Output is deterministic: repeated runs produce byte-identical files.
    """
    d = model.dims if dims is None else dims
    xc_names = list(model.state_names[: d.n])
    names = ["t_s", "mode"] + xc_names + list(model.alg_names)
    extra = dict(extra or {})
    names += list(extra.keys())
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={schema}\n")
        w = csv.writer(fh)
        w.writerow(names)
        for i in range(len(traj)):
            rowvals = [_fmt(traj.times[i]), str(int(traj.modes[i]))]
            rowvals += [_fmt(v) for v in traj.states[i, : d.n]]
            rowvals += [_fmt(v) for v in traj.algebraics[i]]
            rowvals += [_fmt(extra[k][i]) for k in extra]
            w.writerow(rowvals)


def write_junctions_csv(path, model, traj: Trajectory,
                        schema: str = "psstune.junctions.v1") -> None:
    """Companion CSV with one row per fired event."""
    names = ["t_s", "index", "kind", "pre_mode", "post_mode"]
    names += [f"fminus_{s}" for s in model.state_names]
    names += [f"fplus_{s}" for s in model.state_names]
    names += [f"yminus_{s}" for s in model.alg_names]
    names += [f"yplus_{s}" for s in model.alg_names]
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={schema}\n")
        w = csv.writer(fh)
        w.writerow(names)
        for rec in traj.junctions:
            row = [_fmt(rec.t), str(rec.index), rec.event.kind,
                   str(rec.pre_mode), str(rec.post_mode)]
            row += [_fmt(v) for v in rec.f_minus]
            row += [_fmt(v) for v in rec.f_plus]
            row += [_fmt(v) for v in rec.y_minus]
            row += [_fmt(v) for v in rec.y_plus]
            w.writerow(row)
