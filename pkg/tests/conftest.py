"""Shared fixtures: desk-scale hybrid models and the nine-bus setup."""

import numpy as np
import pytest

from psstune.hybrid import Dims, HybridModel
from psstune.psys import (
    FaultScenario,
    PssParams,
    build_hybrid_model,
    init_dynamic_states,
    load_case,
    solve_power_flow,
)
from psstune.simulator import IntegratorConfig, simulate


def make_switched_scalar():
    """Scalar switched-linear system with parameters carried in the state.

    x' = u * x with the algebraic variable u pinned to a1 in mode 0 and to
    a2 in mode 1; the augmented state is [x, a1, a2].  Closed forms for the
    trajectory and all sensitivities make this the desk-scale oracle for the
    integrator and the variational propagation.
    """
    dims = Dims(n=1, l=0, p=2, m=1)

    def f(x, y):
        return np.array([y[0] * x[0], 0.0, 0.0])

    def fx(x, y):
        out = np.zeros((3, 3))
        out[0, 0] = y[0]
        return out

    def fy(x, y):
        return np.array([[x[0]], [0.0], [0.0]])

    g_modes = {
        0: lambda x, y: np.array([y[0] - x[1]]),
        1: lambda x, y: np.array([y[0] - x[2]]),
    }
    gx_modes = {
        0: lambda x, y: np.array([[0.0, -1.0, 0.0]]),
        1: lambda x, y: np.array([[0.0, 0.0, -1.0]]),
    }
    gy = lambda x, y: np.array([[1.0]])
    return HybridModel(
        dims=dims, f=f, g_modes=g_modes, fx=fx, fy=fy,
        gx_modes=gx_modes, gy_modes={0: gy, 1: gy},
        state_names=["x", "a1", "a2"], alg_names=["u"],
    )


def switched_scalar_truth(x0, a1, a2, t_j, t):
    """Closed-form state and sensitivities of the switched scalar system."""
    t = np.asarray(t, dtype=float)
    t1 = np.minimum(t, t_j)
    t2 = np.maximum(t - t_j, 0.0)
    x = x0 * np.exp(a1 * t1 + a2 * t2)
    return {
        "x": x,
        "dx_dx0": x / x0,
        "dx_da1": t1 * x,
        "dx_da2": t2 * x,
    }


def make_reset_model():
    """One decaying state plus a discrete counter bumped by a reset map."""
    dims = Dims(n=1, l=1, p=0, m=1)
    return HybridModel(
        dims=dims,
        f=lambda x, y: np.array([-x[0], 0.0]),
        g_modes={0: lambda x, y: np.array([y[0] - x[0]])},
        fx=lambda x, y: np.array([[-1.0, 0.0], [0.0, 0.0]]),
        fy=lambda x, y: np.array([[0.0], [0.0]]),
        gx_modes={0: lambda x, y: np.array([[-1.0, 0.0]])},
        gy_modes={0: lambda x, y: np.array([[1.0]])},
        resets={0: lambda x, y: np.array([x[1] + 1.0])},
        state_names=["xc", "tap"], alg_names=["y"],
    )


def make_linear_alg_model(slope=2.0):
    """Static test model with g(x, y) = y - slope * x."""
    dims = Dims(n=1, l=0, p=0, m=1)
    return HybridModel(
        dims=dims,
        f=lambda x, y: np.array([0.0]),
        g_modes={0: lambda x, y: np.array([y[0] - slope * x[0]])},
        fx=lambda x, y: np.zeros((1, 1)),
        fy=lambda x, y: np.zeros((1, 1)),
        gx_modes={0: lambda x, y: np.array([[-slope]])},
        gy_modes={0: lambda x, y: np.array([[1.0]])},
    )


def small_signal_pss():
    return PssParams(ks=7.5, tw=10.0, t1=0.174, t2=0.050)


@pytest.fixture(scope="session")
def scalar_model():
    return make_switched_scalar()


@pytest.fixture(scope="session")
def wscc9_case():
    return load_case("wscc9")


@pytest.fixture(scope="session")
def wscc9_pf(wscc9_case):
    return solve_power_flow(wscc9_case)


@pytest.fixture(scope="session")
def nominal_fault():
    return FaultScenario(bus=9, t_on=0.0, t_off=0.1, admittance=1e4)


@pytest.fixture(scope="session")
def nominal_model(wscc9_case, nominal_fault, wscc9_pf):
    """Nine-bus model with small-signal-tuned stabilizers on G2 and G3."""
    pss = {"G2": small_signal_pss(), "G3": small_signal_pss()}
    model, events = build_hybrid_model(wscc9_case, nominal_fault, pss, pf=wscc9_pf)
    x0, y0 = init_dynamic_states(model)
    return model, events, x0, y0


@pytest.fixture(scope="session")
def nopss_model(wscc9_case, nominal_fault, wscc9_pf):
    model, events = build_hybrid_model(wscc9_case, nominal_fault, None, pf=wscc9_pf)
    x0, y0 = init_dynamic_states(model)
    return model, events, x0, y0


@pytest.fixture(scope="session")
def nominal_config():
    return IntegratorConfig(dt=0.01, t0=0.0, tf=10.0)


@pytest.fixture(scope="session")
def nominal_trajectory(nominal_model, nominal_config):
    model, events, x0, y0 = nominal_model
    return simulate(model, x0, events, nominal_config, y0_guess=y0)
