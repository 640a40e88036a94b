"""Objective assembly and projected conjugate-gradient tuning.

The objective is the integrated squared speed deviation over the simulation
window, summed across generators; its gradient comes from the lambda columns
of the propagated trajectory sensitivities, assembled with the same
trapezoidal quadrature as the objective so the gradient is the exact
derivative of the discrete objective.

The optimizer is nonlinear CG with Armijo backtracking.  The descent update
is beta-weighted against the previous direction; whenever beta is negative,
the denominator vanishes, the candidate fails the descent test, or a box
projection was active on the accepted step, the direction resets to steepest
descent.  Trial points are clipped to the box bounds before evaluating,
and each accepted step certifies the sufficient-decrease inequality at the
smallest nonnegative backtracking power.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import LineSearchError, PsstuneError, ScenarioError
from .sensitivity import propagate_sensitivities
from .simulator import IntegratorConfig, simulate

Array = np.ndarray


@dataclass
class ObjectiveConfig:
    """Quadrature window and generator subset for the speed objective."""

    t0: Optional[float] = None  # default: the simulation window
    tf: Optional[float] = None
    generators: Optional[Sequence[str]] = None  # default: all machines

    def window(self, integ: IntegratorConfig):
        t0 = integ.t0 if self.t0 is None else self.t0
        tf = integ.tf if self.tf is None else self.tf
        if tf <= t0:
            raise ScenarioError("objective window must have tf > t0")
        return t0, tf


@dataclass
class CgmConfig:
    rho: float = 0.5
    sigma: float = 1e-4
    epsilon: float = 1e-4
    max_iter: int = 100
    lower: Optional[Array] = None  # per-parameter box bounds
    upper: Optional[Array] = None
    beta_rule: str = "as-printed"  # or 'polak-ribiere'
    armijo_max_m: int = 60

    def __post_init__(self):
        if not (0.0 < self.rho < 1.0):
            raise ScenarioError(f"rho must lie in (0,1), got {self.rho}")
        if not (0.0 < self.sigma < 1.0):
            raise ScenarioError(f"sigma must lie in (0,1), got {self.sigma}")
        if self.beta_rule not in ("as-printed", "polak-ribiere"):
            raise ScenarioError(f"unknown beta rule {self.beta_rule!r}")
        if self.lower is not None:
            self.lower = np.asarray(self.lower, dtype=float)
        if self.upper is not None:
            self.upper = np.asarray(self.upper, dtype=float)
        if self.lower is not None and self.upper is not None:
            if np.any(self.lower >= self.upper):
                raise ScenarioError("each lower bound must lie below its upper bound")

    def project(self, lam: Array) -> Array:
        out = np.asarray(lam, dtype=float).copy()
        if self.lower is not None:
            out = np.maximum(out, self.lower)
        if self.upper is not None:
            out = np.minimum(out, self.upper)
        return out

    def within_bounds(self, lam: Array) -> bool:
        lam = np.asarray(lam, dtype=float)
        ok = True
        if self.lower is not None:
            ok &= bool(np.all(lam >= self.lower - 1e-12))
        if self.upper is not None:
            ok &= bool(np.all(lam <= self.upper + 1e-12))
        return ok


def trapezoid_weights(times: Array) -> Array:
    """Trapezoidal quadrature weights on a (possibly repeated-entry) grid."""
    times = np.asarray(times, dtype=float)
    w = np.zeros_like(times)
    if len(times) > 1:
        half = 0.5 * np.diff(times)
        w[:-1] += half
        w[1:] += half
    return w


class SimulationBundle:
    """Everything the tuner needs to evaluate J and its gradient at a lambda.

    Parameters enter the simulation purely through the lambda slots of the
    initial augmented state, so re-tuning never rebuilds the model.  The
    most recent trajectories are cached by parameter vector: the accepted
    line-search trial is reused by the follow-up gradient pass.
    """

    def __init__(self, model, events, x0, integ: IntegratorConfig,
                 objective: Optional[ObjectiveConfig] = None, y0_guess=None):
        self.model = model
        self.events = list(events)
        self.x0 = np.asarray(x0.pack() if hasattr(x0, "pack") else x0, dtype=float)
        self.integ = integ
        self.objective_config = objective or ObjectiveConfig()
        self.y0_guess = None if y0_guess is None else np.asarray(y0_guess, dtype=float)
        self.lam_indices = model.lambda_indices
        self.lam_names = list(model.lambda_names)
        lay = model.layout
        gens = self.objective_config.generators
        if gens is None:
            sel = list(range(lay.n_mach))
        else:
            sel = [lay.machine_names.index(g) for g in gens]
        self.omega_rows = np.asarray([lay.omega_idx[i] for i in sel], dtype=int)
        self._cache = {}
        self.n_simulations = 0

    # -- plumbing ------------------------------------------------------
    def state_for(self, lam: Array) -> Array:
        lam = np.asarray(lam, dtype=float)
        if lam.shape != self.lam_indices.shape:
            raise ScenarioError(
                f"lambda has shape {lam.shape}, expected {self.lam_indices.shape}"
            )
        x0 = self.x0.copy()
        x0[self.lam_indices] = lam
        return x0

    def simulate_at(self, lam: Array):
        key = np.asarray(lam, dtype=float).tobytes()
        traj = self._cache.get(key)
        if traj is None:
            traj = simulate(self.model, self.state_for(lam), self.events,
                            self.integ, y0_guess=self.y0_guess)
            self.n_simulations += 1
            if len(self._cache) > 4:
                self._cache.clear()
            self._cache[key] = traj
        return traj

    def _window_mask(self, times):
        t0, tf = self.objective_config.window(self.integ)
        return (times >= t0 - 1e-12) & (times <= tf + 1e-12)

    def objective_from_trajectory(self, traj) -> float:
        mask = self._window_mask(traj.times)
        w = trapezoid_weights(traj.times[mask])
        om = traj.states[np.ix_(mask, self.omega_rows)]
        return float(np.sum(w * np.sum(om * om, axis=1)))

    # -- tuner-facing surface ------------------------------------------
    def objective(self, lam: Array) -> float:
        return self.objective_from_trajectory(self.simulate_at(lam))

    def objective_and_gradient(self, lam: Array):
        traj = self.simulate_at(lam)
        sens = propagate_sensitivities(self.model, traj, self.integ,
                                       columns=self.lam_indices)
        mask = self._window_mask(traj.times)
        w = trapezoid_weights(traj.times[mask])
        om = traj.states[np.ix_(mask, self.omega_rows)]  # (T, k)
        phi = sens.phi_x[mask][:, self.omega_rows, :]  # (T, k, p)
        j = float(np.sum(w * np.sum(om * om, axis=1)))
        grad = 2.0 * np.einsum("t,tk,tkp->p", w, om, phi)
        return j, grad


def evaluate_objective(bundle, lam: Array) -> float:
    """Integrated squared speed deviation at the given parameter vector."""
    return bundle.objective(np.asarray(lam, dtype=float))


def evaluate_gradient(bundle, lam: Array) -> Array:
    """Gradient of the objective with respect to the tunable parameters."""
    _, grad = bundle.objective_and_gradient(np.asarray(lam, dtype=float))
    return grad


@dataclass
class ArmijoResult:
    alpha: float
    m: int
    lam_new: Array
    j_new: float
    j_old: float
    slope: float
    j_rejected: Optional[float]  # trial value at m-1 (None when m == 0)


def armijo_search(objective: Callable[[Array], float], lam_k: Array, d_k: Array,
                  grad_k: Array, config: CgmConfig,
                  j_k: Optional[float] = None) -> ArmijoResult:
    """Backtracking line search with the sufficient-decrease certificate.

    Accepts the smallest nonnegative integer m such that

        J(lam_k) - J(P(lam_k + rho^m d_k)) >= -sigma rho^m grad_k' d_k

    where P clips the trial point to the box bounds.  Trial evaluations that
    fail numerically count as rejections.
    """
    lam_k = np.asarray(lam_k, dtype=float)
    d_k = np.asarray(d_k, dtype=float)
    grad_k = np.asarray(grad_k, dtype=float)
    slope = float(grad_k @ d_k)
    if not slope < 0.0:
        raise ValueError(f"line search needs a descent direction (grad'd = {slope:.3e})")
    if j_k is None:
        j_k = objective(lam_k)
    j_prev = None
    for m in range(config.armijo_max_m + 1):
        alpha = config.rho**m
        trial = config.project(lam_k + alpha * d_k)
        try:
            j_trial = objective(trial)
        except PsstuneError:
            j_prev = None
            continue
        if j_k - j_trial >= -config.sigma * alpha * slope:
            return ArmijoResult(alpha=alpha, m=m, lam_new=trial, j_new=j_trial,
                                j_old=j_k, slope=slope, j_rejected=j_prev)
        j_prev = j_trial
    raise LineSearchError(
        f"no sufficient decrease within {config.armijo_max_m} backtracking steps",
        m_tried=config.armijo_max_m,
    )


def cgm_direction(grad_new: Array, grad_old: Optional[Array],
                  d_old: Optional[Array], rule: str = "as-printed"):
    """Conjugate direction update with reset safeguards.

    beta follows the printed combination rule by default: the new-gradient
    inner product with the gradient difference over grad_new' grad_old; the
    'polak-ribiere' rule swaps the denominator for ||grad_old||^2.  The
    direction resets to steepest descent on the first iteration, on a zero
    denominator, on beta < 0, and whenever the candidate is not a descent
    direction.  Returns (d_new, beta, reset_flag).
    """
    grad_new = np.asarray(grad_new, dtype=float)
    if grad_old is None or d_old is None:
        return -grad_new, 0.0, False
    grad_old = np.asarray(grad_old, dtype=float)
    d_old = np.asarray(d_old, dtype=float)
    if rule == "as-printed":
        denom = float(grad_new @ grad_old)
    else:
        denom = float(grad_old @ grad_old)
    if denom == 0.0 or not np.isfinite(denom):
        return -grad_new, 0.0, True
    beta = float(grad_new @ (grad_new - grad_old)) / denom
    if beta < 0.0 or not np.isfinite(beta):
        return -grad_new, 0.0, True
    d_new = -grad_new + beta * d_old
    if not float(grad_new @ d_new) < 0.0:
        return -grad_new, 0.0, True
    return d_new, beta, False


@dataclass
class IterateRecord:
    k: int
    lam: Array
    j: float
    grad_norm: float
    alpha: Optional[float] = None
    beta: Optional[float] = None
    m: Optional[int] = None
    slope: Optional[float] = None
    reset: bool = False
    projected: bool = False
    j_rejected: Optional[float] = None


@dataclass
class TuningResult:
    lambda_star: Array
    iterates: list = field(default_factory=list)
    status: str = "max_iter"  # 'converged' | 'max_iter' | 'line_search_failure'

    @property
    def j_history(self) -> Array:
        return np.array([rec.j for rec in self.iterates])

    @property
    def j_final(self) -> float:
        return float(self.iterates[-1].j)

    @property
    def j_initial(self) -> float:
        return float(self.iterates[0].j)

    def trace_to_csv(self, path, lam_names=None,
                     schema: str = "psstune.tuning_trace.v1") -> None:
        p = len(self.lambda_star)
        names = list(lam_names) if lam_names else [f"lam{i}" for i in range(p)]
        header = ["iter", "J", "grad_norm", "alpha", "beta", "m",
                  "reset", "projected"] + names
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema={schema} status={self.status}\n")
            w = csv.writer(fh)
            w.writerow(header)
            for rec in self.iterates:
                row = [rec.k, format(rec.j, ".17g"), format(rec.grad_norm, ".17g"),
                       "" if rec.alpha is None else format(rec.alpha, ".17g"),
                       "" if rec.beta is None else format(rec.beta, ".17g"),
                       "" if rec.m is None else rec.m,
                       int(rec.reset), int(rec.projected)]
                row += [format(v, ".17g") for v in rec.lam]
                w.writerow(row)


def tune(bundle, lam0: Array, config: CgmConfig) -> TuningResult:
    """Projected conjugate-gradient descent on the bundle's objective.

    ``bundle`` provides ``objective(lam)`` and ``objective_and_gradient(lam)``.
    Iterates stay inside the box bounds; accepted objective values are
    strictly decreasing; the loop stops when the gradient norm drops below
    epsilon, on the iteration cap, or on a line-search failure (reported in
    the result status, with the iterates collected so far).
    """
    lam = np.asarray(lam0, dtype=float).copy()
    if not config.within_bounds(lam):
        raise ScenarioError("initial parameter vector violates the box bounds")
    j, grad = bundle.objective_and_gradient(lam)
    result = TuningResult(lambda_star=lam.copy())
    result.iterates.append(
        IterateRecord(k=0, lam=lam.copy(), j=j, grad_norm=float(np.linalg.norm(grad)))
    )
    grad_old = None
    d_old = None
    force_reset = False
    for k in range(1, config.max_iter + 1):
        if float(np.linalg.norm(grad)) < config.epsilon:
            result.status = "converged"
            break
        if force_reset:
            d, beta, reset = -grad, 0.0, True
        else:
            d, beta, reset = cgm_direction(grad, grad_old, d_old, config.beta_rule)
        try:
            ls = armijo_search(bundle.objective, lam, d, grad, config, j_k=j)
        except LineSearchError:
            result.status = "line_search_failure"
            break
        lam_new = ls.lam_new
        projected = bool(np.any(lam_new != lam + ls.alpha * d))
        force_reset = projected
        grad_old = grad
        d_old = d
        j_new, grad = bundle.objective_and_gradient(lam_new)
        lam = lam_new
        j = j_new
        result.iterates.append(
            IterateRecord(k=k, lam=lam.copy(), j=j,
                          grad_norm=float(np.linalg.norm(grad)),
                          alpha=ls.alpha, beta=beta, m=ls.m, slope=ls.slope,
                          reset=reset, projected=projected,
                          j_rejected=ls.j_rejected)
        )
    else:
        result.status = "max_iter"
    if result.status == "max_iter" and float(np.linalg.norm(grad)) < config.epsilon:
        result.status = "converged"
    result.lambda_star = lam.copy()
    return result
