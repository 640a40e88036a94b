"""Representation of parameter-dependent hybrid differential-algebraic models.

A model couples a differential right-hand side ``xdot = f(x, y)`` with a
mode-dependent algebraic constraint ``0 = g_mode(x, y)``.  The state vector
``x`` is augmented: the leading ``n`` entries are continuous dynamic states,
the next ``l`` entries are discrete states (changed only by reset maps), and
the trailing ``p`` entries are parameters carried as constant states, so a
single sensitivity matrix with respect to ``x(t0)`` covers initial conditions
and parameters alike.  ``f`` must therefore return exactly zero for the
discrete and parameter rows, and ``f`` itself never switches — only the
algebraic equation set changes at a switching event.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .errors import StructuralError

Array = np.ndarray


@dataclass(frozen=True)
class Dims:
    """Problem sizes: n continuous, l discrete, p parameters, m algebraic."""

    n: int
    l: int
    p: int
    m: int

    @property
    def nx(self) -> int:
        """Length of the augmented state vector."""
        return self.n + self.l + self.p


@dataclass
class AugmentedState:
    """Augmented state x = [x_c, z, lambda].

    ``x_c`` holds the continuous dynamic states, ``z`` the discrete states,
    and ``lam`` the parameters.  Parameters never change during simulation
    and discrete states change only through reset maps.
    """

    x_c: Array
    z: Array
    lam: Array

    def pack(self) -> Array:
        return np.concatenate([self.x_c, self.z, self.lam]).astype(float)

    @classmethod
    def unpack(cls, dims: Dims, vec: Array) -> "AugmentedState":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (dims.nx,):
            raise StructuralError(
                f"state vector has length {vec.shape}, expected ({dims.nx},)"
            )
        return cls(
            x_c=vec[: dims.n].copy(),
            z=vec[dims.n : dims.n + dims.l].copy(),
            lam=vec[dims.n + dims.l :].copy(),
        )


@dataclass
class EventSpec:
    """One scheduled discontinuity.

    ``kind`` is 'switching' (algebraic set changes) or 'reset' (discrete
    states change through the reset map ``reset_id``).  Time-triggered events
    carry ``t_event``; state-triggered events reference a hypersurface id
    instead.  The shipped scenarios are all time-triggered.
    """

    kind: str
    pre_mode: int
    post_mode: int
    t_event: Optional[float] = None
    hypersurface: Optional[int] = None
    reset_id: Optional[int] = None
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("switching", "reset"):
            raise StructuralError(f"unknown event kind {self.kind!r}")
        if (self.t_event is None) == (self.hypersurface is None):
            raise StructuralError(
                "event must have exactly one of t_event or hypersurface"
            )
        if self.kind == "reset" and self.reset_id is None:
            raise StructuralError("reset event needs a reset_id")

    @property
    def time_triggered(self) -> bool:
        return self.t_event is not None


@dataclass
class HybridModel:
    """Callable bundle describing one hybrid DAE model.

    ``f(x, y)`` returns the full augmented derivative (z and lambda rows
    zero); ``g_modes[mode](x, y)`` the m algebraic residuals of that mode.
    ``fx, fy`` are the Jacobians of f with respect to x and y; ``gx_modes``
    and ``gy_modes`` the per-mode Jacobians of g.  Evaluators must be pure
    functions of their arguments.
    """

    dims: Dims
    f: Callable[[Array, Array], Array]
    g_modes: Mapping[int, Callable[[Array, Array], Array]]
    fx: Callable[[Array, Array], Array]
    fy: Callable[[Array, Array], Array]
    gx_modes: Mapping[int, Callable[[Array, Array], Array]]
    gy_modes: Mapping[int, Callable[[Array, Array], Array]]
    resets: Mapping[int, Callable[[Array, Array], Array]] = field(default_factory=dict)
    hypersurfaces: Mapping[int, Callable[[float, Array, Array], float]] = field(
        default_factory=dict
    )
    state_names: Optional[list] = None
    alg_names: Optional[list] = None

    def __post_init__(self):
        if self.state_names is None:
            self.state_names = [f"x{i}" for i in range(self.dims.nx)]
        if self.alg_names is None:
            self.alg_names = [f"y{i}" for i in range(self.dims.m)]


def _check_dims(model, x: Array, y: Array) -> tuple[Array, Array]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != (model.dims.nx,):
        raise StructuralError(
            f"x has shape {x.shape}, expected ({model.dims.nx},)"
        )
    if y.shape != (model.dims.m,):
        raise StructuralError(f"y has shape {y.shape}, expected ({model.dims.m},)")
    return x, y


def eval_f(model, x: Array, y: Array) -> Array:
    """Differential right-hand side of the augmented state.

    Rows for discrete states and parameters are forced to exactly zero
    (z changes only by resets, lambda never changes).
    """
    x, y = _check_dims(model, x, y)
    out = np.asarray(model.f(x, y), dtype=float)
    if out.shape != (model.dims.nx,):
        raise StructuralError(
            f"f returned shape {out.shape}, expected ({model.dims.nx},)"
        )
    out = out.copy()
    out[model.dims.n :] = 0.0
    return out


def eval_g(model, mode: int, x: Array, y: Array) -> Array:
    """Residual of the algebraic equation set selected by ``mode``."""
    x, y = _check_dims(model, x, y)
    try:
        g = model.g_modes[mode]
    except KeyError:
        raise StructuralError(f"unknown algebraic mode {mode!r}") from None
    out = np.asarray(g(x, y), dtype=float)
    if out.shape != (model.dims.m,):
        raise StructuralError(
            f"g mode {mode} returned shape {out.shape}, expected ({model.dims.m},)"
        )
    return out


def eval_trigger(model, event: EventSpec, t: float, x: Array, y: Array) -> float:
    """Trigger value for an event.

    Time-triggered events use the convention ``t_event - t``: positive
    before the junction, zero at it, negative after.  State-triggered
    events evaluate their hypersurface.
    """
    if event.time_triggered:
        return float(event.t_event - t)
    try:
        h = model.hypersurfaces[event.hypersurface]
    except KeyError:
        raise StructuralError(
            f"unknown hypersurface {event.hypersurface!r}"
        ) from None
    return float(h(t, x, y))


def apply_reset(model, reset_id: int, x: Array, y: Array) -> Array:
    """Apply reset map j to the pre-event state, returning the new z block.

    Continuous states and parameters are untouched by construction: only
    the z block is produced here and spliced in by the caller.
    """
    x, y = _check_dims(model, x, y)
    try:
        h = model.resets[reset_id]
    except KeyError:
        raise StructuralError(f"unknown reset id {reset_id!r}") from None
    z_plus = np.asarray(h(x, y), dtype=float)
    if z_plus.shape != (model.dims.l,):
        raise StructuralError(
            f"reset {reset_id} returned shape {z_plus.shape}, expected ({model.dims.l},)"
        )
    return z_plus


def fd_jacobians(model, mode: int, x: Array, y: Array, step: float = 1e-6):
    """Central finite-difference Jacobians (fx, fy, gx, gy) of the model.

    Fallback evaluator for testing the analytic Jacobians; O((nx+m)^2)
    residual evaluations, so only suitable for small problems.
    """
    x, y = _check_dims(model, x, y)
    nx, m = model.dims.nx, model.dims.m
    fx = np.zeros((nx, nx))
    fy = np.zeros((nx, m))
    gx = np.zeros((m, nx))
    gy = np.zeros((m, m))
    for j in range(nx):
        dx = np.zeros(nx)
        dx[j] = step
        fx[:, j] = (eval_f(model, x + dx, y) - eval_f(model, x - dx, y)) / (2 * step)
        gx[:, j] = (eval_g(model, mode, x + dx, y) - eval_g(model, mode, x - dx, y)) / (
            2 * step
        )
    for j in range(m):
        dy = np.zeros(m)
        dy[j] = step
        fy[:, j] = (eval_f(model, x, y + dy) - eval_f(model, x, y - dy)) / (2 * step)
        gy[:, j] = (eval_g(model, mode, x, y + dy) - eval_g(model, mode, x, y - dy)) / (
            2 * step
        )
    return fx, fy, gx, gy
