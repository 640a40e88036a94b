"""Machine, exciter and stabilizer building blocks.

Synchronous machines use the one-axis flux-decay model (states delta, omega,
E'q) with stator resistance neglected; rotor speed omega is stored as
per-unit deviation from synchronous speed and delta in radians against the
synchronous reference, so the speed-deviation objective is zero at
equilibrium.  The fast exciter is a single time-constant gain stage; the
stabilizer is a gain + washout + two lead-lag cascade driven by omega whose
output adds to the exciter summing junction.  Mechanical power is constant
(no governor).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import ConfigurationError


@dataclass
class ExciterParams:
    """First-order static exciter: Efd' = (Ka (Vref + Vs - Vt) - Efd) / Ta."""

    ka: float
    ta: float
    v_ref: Optional[float] = None  # back-solved from the power flow

    def __post_init__(self):
        if self.ka <= 0 or self.ta <= 0:
            raise ConfigurationError(
                f"exciter gains must be positive (ka={self.ka}, ta={self.ta})"
            )


@dataclass
class PssParams:
    """Stabilizer cascade: gain Ks, washout Tw, lead-lags (T1, T2) twice.

    The tuned parameterization repeats the lead-lag pair, so T3 and T4 are
    tied to T1 and T2; supplying different values is rejected.
    """

    ks: float
    tw: float
    t1: float
    t2: float
    t3: Optional[float] = None
    t4: Optional[float] = None

    def __post_init__(self):
        if self.t3 is None:
            self.t3 = self.t1
        if self.t4 is None:
            self.t4 = self.t2
        for name in ("tw", "t1", "t2", "t3", "t4"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"PSS time constant {name} must be positive")
        if self.t3 != self.t1 or self.t4 != self.t2:
            raise ConfigurationError(
                "the tuned stabilizer ties T3=T1 and T4=T2; "
                f"got T3={self.t3} vs T1={self.t1}, T4={self.t4} vs T2={self.t2}"
            )

    def as_lambda(self) -> np.ndarray:
        """The three tunable entries in canonical order (Ks, T1, T2)."""
        return np.array([self.ks, self.t1, self.t2], dtype=float)


@dataclass
class GeneratorParams:
    """Flux-decay machine data on the system MVA base."""

    name: str
    bus: int
    h: float  # inertia constant, s
    xd: float
    xd_p: float
    xq: float
    tdo_p: float
    d: float = 0.0  # mechanical damping, pu torque / pu speed
    exciter: Optional[ExciterParams] = None  # None = constant field voltage
    has_pss: bool = False

    def __post_init__(self):
        if self.h <= 0:
            raise ConfigurationError(f"{self.name}: inertia H must be positive")
        if not (self.xd >= self.xd_p > 0):
            raise ConfigurationError(
                f"{self.name}: need Xd >= Xd' > 0 (got {self.xd}, {self.xd_p})"
            )
        if self.xq <= 0:
            raise ConfigurationError(f"{self.name}: Xq must be positive")
        if self.tdo_p <= 0:
            raise ConfigurationError(f"{self.name}: Tdo' must be positive")


def pss_rhs(ks, tw, t1, t2, omega, x_w, x_1, x_2):
    """Stabilizer state derivatives and output.

    Cascade realization:
        washout   u1 = Ks*omega - x_w,  x_w' = u1 / Tw
        lead-lag  y1 = (T1/T2) u1 + (1 - T1/T2) x_1,  x_1' = (u1 - x_1) / T2
        lead-lag  Vs = (T1/T2) y1 + (1 - T1/T2) x_2,  x_2' = (y1 - x_2) / T2
    Returns (dx_w, dx_1, dx_2, v_s).
    """
    a = t1 / t2
    u1 = ks * omega - x_w
    y1 = a * u1 + (1.0 - a) * x_1
    v_s = a * y1 + (1.0 - a) * x_2
    dxw = u1 / tw
    dx1 = (u1 - x_1) / t2
    dx2 = (y1 - x_2) / t2
    return dxw, dx1, dx2, v_s


def pss_dynamics(params: PssParams, omega: float, states):
    """Public wrapper over :func:`pss_rhs` taking a parameter struct."""
    x_w, x_1, x_2 = states
    dxw, dx1, dx2, v_s = pss_rhs(
        params.ks, params.tw, params.t1, params.t2, omega, x_w, x_1, x_2
    )
    return np.array([dxw, dx1, dx2]), v_s


def pss_partials(ks, tw, t1, t2, omega, x_w, x_1, x_2):
    """Analytic partial derivatives of the stabilizer cascade.

    Returns two dicts keyed by input name ('omega', 'xw', 'x1', 'x2', 'ks',
    't1', 't2'): one mapping to the 3-vector of state-derivative partials
    and one mapping to the scalar partial of the output Vs.
    """
    a = t1 / t2
    u1 = ks * omega - x_w
    y1 = a * u1 + (1.0 - a) * x_1

    d_states = {
        "omega": np.array([ks / tw, ks / t2, a * ks / t2]),
        "xw": np.array([-1.0 / tw, -1.0 / t2, -a / t2]),
        "x1": np.array([0.0, -1.0 / t2, (1.0 - a) / t2]),
        "x2": np.array([0.0, 0.0, -1.0 / t2]),
        "ks": np.array([omega / tw, omega / t2, a * omega / t2]),
        "t1": np.array([0.0, 0.0, (u1 - x_1) / t2**2]),
        "t2": np.array(
            [
                0.0,
                -(u1 - x_1) / t2**2,
                (-a * (u1 - x_1) - (y1 - x_2)) / t2**2,
            ]
        ),
    }
    d_vs = {
        "omega": a * a * ks,
        "xw": -a * a,
        "x1": a * (1.0 - a),
        "x2": 1.0 - a,
        "ks": a * a * omega,
        "t1": (y1 - x_2) / t2 + a * (u1 - x_1) / t2,
        "t2": -(a / t2) * (y1 - x_2) - (a * a / t2) * (u1 - x_1),
    }
    return d_states, d_vs
