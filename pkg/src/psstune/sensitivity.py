"""Forward trajectory sensitivities through smooth intervals and events.

``Phi_x(t) = d x(t) / d x0`` and ``Phi_y(t) = d y(t) / d x0`` are propagated
along an already-computed trajectory.  Because parameters are carried as
constant trailing entries of the augmented state, the lambda columns of
Phi_x are exactly the parameter sensitivities the tuner needs.

On a smooth interval the pair satisfies the variational DAE

    dPhi_x/dt = fx Phi_x + fy Phi_y
    0         = gx Phi_x + gy Phi_y

discretized with the same trapezoidal rule as the trajectory, so the linear
system of each step shares the converged Newton matrix of that step: the
propagated matrices are the exact derivatives of the discrete flow, which is
what makes the finite-difference comparison in the verification command a
tight oracle.  At a time-triggered event the junction-time gradient is zero,
so Phi_x is continuous and Phi_y re-solves against the post-event mode.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import SensitivityError
from .hybrid import AugmentedState, EventSpec
from .simulator import IntegratorConfig, Trajectory, simulate, validate_events

Array = np.ndarray


@dataclass
class SensitivityPair:
    """Phi_x (nx, c) and Phi_y (m, c) for the tracked columns of x0."""

    phi_x: Array
    phi_y: Array
    columns: Array  # indices into the augmented state

    def copy(self) -> "SensitivityPair":
        return SensitivityPair(self.phi_x.copy(), self.phi_y.copy(), self.columns)


@dataclass
class SensitivityTrajectory:
    """Per-time sensitivity pairs aligned with a Trajectory's samples."""

    times: Array
    phi_x: Array  # (T, nx, c)
    phi_y: Array  # (T, m, c)
    columns: Array

    def pair_at(self, i: int) -> SensitivityPair:
        return SensitivityPair(self.phi_x[i], self.phi_y[i], self.columns)

    def block(self, rows: Sequence[int]) -> Array:
        """(T, len(rows), c) slice of Phi_x for the given state rows."""
        return self.phi_x[:, list(rows), :]


def _mode_jacobians(model, mode, x, y):
    gx = np.asarray(model.gx_modes[mode](x, y), dtype=float)
    gy = np.asarray(model.gy_modes[mode](x, y), dtype=float)
    return gx, gy


def _solve_gy(gy, rhs, what):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(gy, check_finite=False)
    except Exception as err:  # pragma: no cover - lapack failure path
        raise SensitivityError(f"algebraic Jacobian factorization failed {what}") from err
    if not np.all(np.isfinite(lu)) or np.any(np.abs(np.diag(lu)) == 0.0):
        raise SensitivityError(f"singular algebraic Jacobian {what}")
    return scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)


def init_sensitivities(model, x0, y0, mode: int = 0,
                       columns: Optional[Sequence[int]] = None) -> SensitivityPair:
    """Initial sensitivity pair at a consistent starting point.

    Phi_x starts as the identity (restricted to the tracked columns) and
    Phi_y solves gx + gy Phi_y = 0 in the starting mode.
    """
    if isinstance(x0, AugmentedState):
        x0 = x0.pack()
    x0 = np.asarray(x0, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    nx, m = model.dims.nx, model.dims.m
    cols = np.arange(nx) if columns is None else np.asarray(columns, dtype=int)
    phi_x = np.eye(nx)[:, cols]
    if m:
        gx, gy = _mode_jacobians(model, mode, x0, y0)
        phi_y = _solve_gy(gy, -gx[:, cols], "at the initial point")
    else:
        phi_y = np.zeros((0, len(cols)))
    return SensitivityPair(phi_x=phi_x, phi_y=phi_y, columns=cols)


def propagate_step(model, mode, x_k, y_k, x_k1, y_k1, dt, pair_k: SensitivityPair,
                   jac_k=None) -> SensitivityPair:
    """Advance the pair across one accepted trapezoidal step.

    The linear system matrix is the converged Newton matrix of the step,
    factorized once for all tracked columns.  ``jac_k`` optionally carries
    (fx, fy) already evaluated at the left endpoint.
    """
    nx, n, m = model.dims.nx, model.dims.n, model.dims.m
    half = 0.5 * dt
    if jac_k is None:
        fx0 = np.asarray(model.fx(x_k, y_k), dtype=float)
        fy0 = np.asarray(model.fy(x_k, y_k), dtype=float)
    else:
        fx0, fy0 = jac_k
    fx1 = np.asarray(model.fx(x_k1, y_k1), dtype=float)
    fy1 = np.asarray(model.fy(x_k1, y_k1), dtype=float)
    gx1, gy1 = _mode_jacobians(model, mode, x_k1, y_k1)

    jac = np.zeros((nx + m, nx + m))
    jac[:nx, :nx] = -half * fx1
    jac[:nx, :nx] += np.eye(nx)
    jac[:nx, nx:] = -half * fy1
    jac[nx:, :nx] = gx1
    jac[nx:, nx:] = gy1

    rhs = np.zeros((nx + m, pair_k.phi_x.shape[1]))
    rhs[:nx] = pair_k.phi_x + half * (fx0 @ pair_k.phi_x + fy0 @ pair_k.phi_y)

    try:
        lu, piv = scipy.linalg.lu_factor(jac, check_finite=False)
    except Exception as err:  # pragma: no cover
        raise SensitivityError("variational step factorization failed") from err
    if not np.all(np.isfinite(lu)) or np.any(np.abs(np.diag(lu)) == 0.0):
        raise SensitivityError("singular variational system matrix")
    sol = scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)
    phi_x = sol[:nx]
    phi_y = sol[nx:]
    # z and lambda rows obey dPhi/dt = 0 exactly; pin them against round-off.
    phi_x[n:] = pair_k.phi_x[n:]
    return SensitivityPair(phi_x=phi_x, phi_y=phi_y, columns=pair_k.columns)


def jump_x(phi_x_minus: Array, f_minus: Array, f_plus: Array,
           grad_tj: Optional[Array] = None) -> Array:
    """Sensitivity jump of Phi_x across an event.

    Phi_x+ = Phi_x- - (f+ - f-) * grad_tj, where grad_tj is the row vector
    of junction-time sensitivities over the tracked columns.  Fixed-time
    events have grad_tj = 0, so Phi_x is continuous.
    """
    phi_x_minus = np.asarray(phi_x_minus, dtype=float)
    if grad_tj is None:
        return phi_x_minus.copy()
    grad_tj = np.asarray(grad_tj, dtype=float)
    jump = np.outer(np.asarray(f_plus) - np.asarray(f_minus), grad_tj)
    return phi_x_minus - jump


def jump_y(model, post_mode: int, phi_x_plus: Array, x: Array, y_plus: Array) -> Array:
    """Re-solve Phi_y against the post-event algebraic equations."""
    if model.dims.m == 0:
        return np.zeros((0, phi_x_plus.shape[1]))
    gx, gy = _mode_jacobians(model, post_mode, x, y_plus)
    return _solve_gy(gy, -(gx @ phi_x_plus), "just after an event")


def param_jump_blocks(dims, phi_x_minus: Array, f_minus: Array, f_plus: Array,
                      grad_tj: Optional[Array] = None) -> Array:
    """Block-partitioned form of the Phi_x jump for the augmented state.

    Writing f* = f- - f+, the update adds f* times the junction-time
    sensitivity row; because the z and lambda components of f vanish, the
    jump only touches the continuous block, and those trailing row blocks
    keep their [0 | I] pattern.  With all junction-time gradients zero the
    update reduces to the identity, matching ``jump_x`` exactly.
    """
    phi_x_minus = np.asarray(phi_x_minus, dtype=float)
    f_star = np.asarray(f_minus, dtype=float) - np.asarray(f_plus, dtype=float)
    tail = f_star[dims.n :]
    if tail.size and float(np.max(np.abs(tail))) != 0.0:
        raise SensitivityError(
            "z/lambda components of f must vanish; got a nonzero jump there"
        )
    if grad_tj is None:
        return phi_x_minus.copy()
    grad_tj = np.asarray(grad_tj, dtype=float)
    return phi_x_minus + np.outer(f_star, grad_tj)


def lambda_column_jump(f_minus: Array, f_plus: Array, grad_tj_lambda: Array) -> Array:
    """Parameter-column slice of the jump term: f* times grad_lambda(t_J)."""
    f_star = np.asarray(f_minus, dtype=float) - np.asarray(f_plus, dtype=float)
    return np.outer(f_star, np.asarray(grad_tj_lambda, dtype=float))


def propagate_sensitivities(model, traj: Trajectory, config: IntegratorConfig,
                            columns: Optional[Sequence[int]] = None,
                            initial_mode: int = 0) -> SensitivityTrajectory:
    """Propagate the sensitivity pair along a stored trajectory.

    Junctions are detected from the trajectory's records; reset events are
    out of scope for sensitivity propagation and rejected.
    """
    for rec in traj.junctions:
        if rec.event.kind != "switching":
            raise SensitivityError(
                "sensitivity propagation through reset events is not implemented"
            )
        if not rec.event.time_triggered:
            raise SensitivityError(
                "junction-time sensitivities for state-triggered events are not implemented"
            )

    nx, m = model.dims.nx, model.dims.m
    T = len(traj)
    pair = init_sensitivities(
        model, traj.states[0], traj.algebraics[0], mode=int(traj.modes[0]),
        columns=columns,
    )
    c = pair.phi_x.shape[1]
    phi_x = np.empty((T, nx, c))
    phi_y = np.empty((T, m, c))
    phi_x[0] = pair.phi_x
    phi_y[0] = pair.phi_y

    junction_at = {rec.index: rec for rec in traj.junctions}

    i = 0
    fx0 = np.asarray(model.fx(traj.states[0], traj.algebraics[0]), dtype=float)
    fy0 = np.asarray(model.fy(traj.states[0], traj.algebraics[0]), dtype=float)
    while i < T - 1:
        rec = junction_at.get(i)
        if rec is not None:
            # Post-event sample shares the time stamp; apply the jump.
            pxp = jump_x(pair.phi_x, rec.f_minus, rec.f_plus, grad_tj=None)
            pyp = jump_y(model, rec.post_mode, pxp, traj.states[i + 1],
                         traj.algebraics[i + 1])
            pair = SensitivityPair(pxp, pyp, pair.columns)
        else:
            mode = int(traj.modes[i + 1])
            pair = propagate_step(
                model, mode,
                traj.states[i], traj.algebraics[i],
                traj.states[i + 1], traj.algebraics[i + 1],
                config.dt, pair, jac_k=(fx0, fy0),
            )
        i += 1
        phi_x[i] = pair.phi_x
        phi_y[i] = pair.phi_y
        fx0 = np.asarray(model.fx(traj.states[i], traj.algebraics[i]), dtype=float)
        fy0 = np.asarray(model.fy(traj.states[i], traj.algebraics[i]), dtype=float)

    cols = pair.columns
    return SensitivityTrajectory(times=traj.times.copy(), phi_x=phi_x,
                                 phi_y=phi_y, columns=cols)


def fd_sensitivity(model, x0, events: Sequence[EventSpec], config: IntegratorConfig,
                   index: int, h: float, y0_guess=None, initial_mode: int = 0):
    """Central finite-difference sensitivity column (verification oracle).

    Re-simulates with x0[index] perturbed by +/- h and differences the full
    state and algebraic trajectories on the shared grid.  Kept deliberately
    independent of the variational propagation it cross-checks.
    """
    if not h > 0:
        raise ValueError("perturbation h must be strictly positive")
    if isinstance(x0, AugmentedState):
        x0 = x0.pack()
    x0 = np.asarray(x0, dtype=float)
    validate_events(events, config, initial_mode=initial_mode, model=model)

    def run(sign):
        xp = x0.copy()
        xp[index] += sign * h
        return simulate(model, xp, events, config, y0_guess=y0_guess,
                        initial_mode=initial_mode)

    tp = run(+1.0)
    tm = run(-1.0)
    if len(tp) != len(tm) or not np.allclose(tp.times, tm.times, atol=1e-12):
        raise SensitivityError("perturbed runs produced mismatched grids")
    dx = (tp.states - tm.states) / (2.0 * h)
    dy = (tp.algebraics - tm.algebraics) / (2.0 * h)
    return tp.times.copy(), dx, dy


def write_speed_sensitivity_csv(path, times, sens: SensitivityTrajectory,
                                row_indices, row_names, col_names,
                                schema: str = "psstune.sensitivity.v1") -> None:
    """Export the tracked sensitivity entries, one column per (row, parameter)."""
    header = ["t_s"]
    for rn in row_names:
        for cn in col_names:
            header.append(f"d{rn}__d{cn}")
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={schema}\n")
        fh.write(",".join(header) + "\n")
        block = sens.phi_x[:, list(row_indices), :]
        for i in range(len(times)):
            vals = [format(float(times[i]), ".17g")]
            for r in range(len(row_indices)):
                for cidx in range(len(col_names)):
                    vals.append(format(float(block[i, r, cidx]), ".17g"))
            fh.write(",".join(vals) + "\n")
