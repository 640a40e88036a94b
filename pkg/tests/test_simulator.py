"""Integrator contracts: trapezoid accuracy, junction handling, determinism."""

import numpy as np
import pytest

from psstune.errors import NewtonError, ScenarioError
from psstune.hybrid import EventSpec
from psstune.simulator import (
    IntegratorConfig,
    simulate,
    solve_initial_algebraic,
    switch_mode,
    trapezoidal_step,
    validate_events,
    write_junctions_csv,
    write_trajectory_csv,
)

from conftest import make_linear_alg_model, make_reset_model, switched_scalar_truth


@pytest.fixture
def cfg():
    return IntegratorConfig(dt=0.01, t0=0.0, tf=1.0)


class TestInitialAlgebraic:
    def test_linear_solve(self, cfg):
        model = make_linear_alg_model(slope=2.0)
        y = solve_initial_algebraic(model, np.array([3.0]), 0.0, 0, cfg)
        assert y[0] == pytest.approx(6.0, abs=1e-10)

    def test_nine_bus_from_flow_guess(self, nominal_model):
        # Must converge within a 5-iteration budget from the power-flow guess.
        model, _, x0, _ = nominal_model
        cfg = IntegratorConfig(dt=0.01, t0=0.0, tf=1.0, newton_max_iter=5)
        y = solve_initial_algebraic(model, x0.pack(), 0.0, 0, cfg, y_guess=model.y0)
        assert np.max(np.abs(model.g_modes[0](x0.pack(), y))) <= cfg.newton_tol

    def test_singular_gy_raises(self, cfg):
        model = make_linear_alg_model()
        model.g_modes = {0: lambda x, y: np.array([x[0] + 1.0])}  # independent of y
        model.gy_modes = {0: lambda x, y: np.array([[0.0]])}
        with pytest.raises(NewtonError):
            solve_initial_algebraic(model, np.array([3.0]), 0.0, 0, cfg)


class TestTrapezoidalStep:
    def test_closed_form_linear_step(self, scalar_model, cfg):
        # x' = -x: one trapezoid step is (1 - dt/2)/(1 + dt/2)
        x = np.array([1.0, -1.0, 0.0])
        y = np.array([-1.0])
        x1, y1 = trapezoidal_step(scalar_model, 0, x, y, 0.0, 0.01, cfg)
        assert x1[0] == pytest.approx((1 - 0.005) / (1 + 0.005), abs=1e-12)

    def test_lambda_rows_bitwise_unchanged(self, scalar_model, cfg):
        x = np.array([1.3, -0.7, 0.42424242424242])
        y = np.array([-0.7])
        for _ in range(5):
            x, y = trapezoidal_step(scalar_model, 0, x, y, 0.0, 0.01, cfg)
        assert x[1] == -0.7 and x[2] == 0.42424242424242

    def test_nonconvergence_raises(self):
        # x' = x^2 routed through the algebraic variable: genuinely nonlinear,
        # so one Newton update cannot reach a 1e-12 residual at dt = 0.5.
        from psstune.hybrid import Dims, HybridModel

        model = HybridModel(
            dims=Dims(n=1, l=0, p=0, m=1),
            f=lambda x, y: np.array([y[0]]),
            g_modes={0: lambda x, y: np.array([y[0] - x[0] ** 2])},
            fx=lambda x, y: np.zeros((1, 1)),
            fy=lambda x, y: np.ones((1, 1)),
            gx_modes={0: lambda x, y: np.array([[-2.0 * x[0]]])},
            gy_modes={0: lambda x, y: np.array([[1.0]])},
        )
        tight = IntegratorConfig(dt=0.5, newton_tol=1e-12, newton_max_iter=1)
        with pytest.raises(NewtonError) as exc:
            trapezoidal_step(model, 0, np.array([0.5]), np.array([0.25]),
                             0.0, 0.5, tight)
        assert exc.value.stage == "step"
        assert exc.value.residual_norm is not None


class TestTrapezoidOrder:
    def test_error_quarters_when_dt_halves(self, scalar_model):
        # Second-order convergence against the closed form at t = 1 s.
        a = -1.0
        x0 = np.array([1.0, a, 0.0])
        errors = []
        for dt in (0.02, 0.01, 0.005, 0.0025):
            cfg = IntegratorConfig(dt=dt, t0=0.0, tf=1.0)
            traj = simulate(scalar_model, x0, [], cfg)
            errors.append(abs(traj.states[-1, 0] - np.exp(a)))
        ratios = [errors[i] / errors[i + 1] for i in range(3)]
        assert all(3.5 <= r <= 4.5 for r in ratios), ratios


class TestEventValidation:
    def test_off_grid_event_rejected(self, scalar_model, cfg):
        ev = EventSpec(kind="switching", pre_mode=0, post_mode=1, t_event=0.0153)
        with pytest.raises(ScenarioError):
            validate_events([ev], cfg, model=scalar_model)

    def test_out_of_window_event_rejected(self, scalar_model, cfg):
        ev = EventSpec(kind="switching", pre_mode=0, post_mode=1, t_event=2.0)
        with pytest.raises(ScenarioError):
            validate_events([ev], cfg, model=scalar_model)

    def test_events_must_increase(self, scalar_model, cfg):
        evs = [
            EventSpec(kind="switching", pre_mode=0, post_mode=1, t_event=0.2),
            EventSpec(kind="switching", pre_mode=1, post_mode=0, t_event=0.1),
        ]
        with pytest.raises(ScenarioError):
            validate_events(evs, cfg, model=scalar_model)

    def test_mode_chain_must_connect(self, scalar_model, cfg):
        evs = [
            EventSpec(kind="switching", pre_mode=0, post_mode=1, t_event=0.1),
            EventSpec(kind="switching", pre_mode=0, post_mode=1, t_event=0.2),
        ]
        with pytest.raises(ScenarioError):
            validate_events(evs, cfg, model=scalar_model)

    def test_state_triggered_rejected(self, scalar_model, cfg):
        scalar_model.hypersurfaces = {0: lambda t, x, y: x[0] - 2.0}
        ev = EventSpec(kind="switching", pre_mode=0, post_mode=1, hypersurface=0)
        with pytest.raises(ScenarioError):
            validate_events([ev], cfg, model=scalar_model)

    def test_misaligned_horizon_rejected(self, scalar_model):
        cfg = IntegratorConfig(dt=0.03, t0=0.0, tf=1.0)
        with pytest.raises(ScenarioError):
            simulate(scalar_model, np.array([1.0, -1.0, 0.0]), [], cfg)


class TestSwitchMode:
    def test_identity_event_keeps_y_and_f(self, scalar_model, cfg):
        ev = EventSpec(kind="switching", pre_mode=0, post_mode=0, t_event=0.1)
        x = np.array([2.0, -0.5, 0.8])
        rec = switch_mode(scalar_model, ev, x, np.array([-0.5]), 0.1, cfg)
        assert rec.y_plus[0] == pytest.approx(rec.y_minus[0], abs=1e-12)
        assert np.allclose(rec.f_plus, rec.f_minus, atol=1e-12)

    def test_switch_resolves_post_mode(self, scalar_model, cfg):
        ev = EventSpec(kind="switching", pre_mode=0, post_mode=1, t_event=0.1)
        x = np.array([2.0, -0.5, 0.8])
        rec = switch_mode(scalar_model, ev, x, np.array([-0.5]), 0.1, cfg)
        assert rec.y_plus[0] == pytest.approx(0.8, abs=1e-12)
        assert rec.f_minus[0] == pytest.approx(-1.0)
        assert rec.f_plus[0] == pytest.approx(1.6)
        assert np.array_equal(rec.x_plus, rec.x_minus)

    def test_fault_on_collapses_bus_voltage(self, nominal_model, nominal_config):
        model, events, x0, y0 = nominal_model
        rec = switch_mode(model, events[0], x0.pack(), y0, 0.0, nominal_config)
        assert model.terminal_voltage(rec.y_plus, 9) <= 0.02

    def test_fault_off_returns_to_healthy_mode(self, nominal_trajectory, nominal_model,
                                               nominal_config):
        model, _, _, _ = nominal_model
        rec = nominal_trajectory.junctions[1]
        assert rec.t == pytest.approx(0.1)
        assert rec.post_mode == 0
        r = model.g_modes[0](rec.x_plus, rec.y_plus)
        assert np.max(np.abs(r)) <= nominal_config.newton_tol


class TestSimulate:
    def test_switched_scalar_against_closed_form(self, scalar_model):
        x0v, a1, a2, t_j = 1.3, -0.5, 0.8, 0.4
        cfg = IntegratorConfig(dt=1e-3, t0=0.0, tf=1.0)
        events = [EventSpec(kind="switching", pre_mode=0, post_mode=1, t_event=t_j)]
        traj = simulate(scalar_model, np.array([x0v, a1, a2]), events, cfg)
        truth = switched_scalar_truth(x0v, a1, a2, t_j, traj.times)
        assert np.max(np.abs(traj.states[:, 0] - truth["x"])) <= 1e-6

    def test_junction_time_appears_twice_with_continuous_x(self, scalar_model):
        cfg = IntegratorConfig(dt=0.01, t0=0.0, tf=1.0)
        events = [EventSpec(kind="switching", pre_mode=0, post_mode=1, t_event=0.4)]
        traj = simulate(scalar_model, np.array([1.0, -0.5, 0.8]), events, cfg)
        i = traj.junctions[0].index
        assert traj.times[i] == traj.times[i + 1] == pytest.approx(0.4)
        assert traj.states[i, 0] == traj.states[i + 1, 0]
        assert traj.modes[i] == 0 and traj.modes[i + 1] == 1
        assert np.all(np.diff(traj.times) >= 0)

    def test_every_point_satisfies_active_residual(self, nominal_trajectory,
                                                   nominal_model, nominal_config):
        model, _, _, _ = nominal_model
        idx = np.linspace(0, len(nominal_trajectory) - 1, 25).astype(int)
        for i in idx:
            r = model.g_modes[int(nominal_trajectory.modes[i])](
                nominal_trajectory.states[i], nominal_trajectory.algebraics[i]
            )
            assert np.max(np.abs(r)) <= nominal_config.newton_tol

    def test_no_event_equilibrium_is_fixed_point(self, nopss_model):
        model, _, x0, y0 = nopss_model
        cfg = IntegratorConfig(dt=0.01, t0=0.0, tf=2.0)
        traj = simulate(model, x0, [], cfg, y0_guess=y0)
        drift = np.max(np.abs(traj.states - traj.states[0]))
        assert drift <= 1e-8

    def test_reset_event_updates_discrete_state_only(self):
        model = make_reset_model()
        cfg = IntegratorConfig(dt=0.01, t0=0.0, tf=0.5)
        ev = EventSpec(kind="reset", pre_mode=0, post_mode=0, t_event=0.2, reset_id=0)
        traj = simulate(model, np.array([1.0, 3.0]), [ev], cfg)
        rec = traj.junctions[0]
        assert rec.x_minus[1] == 3.0 and rec.x_plus[1] == 4.0
        assert rec.x_plus[0] == rec.x_minus[0]
        assert traj.states[-1, 1] == 4.0

    def test_determinism_bitwise(self, nominal_model):
        model, events, x0, y0 = nominal_model
        cfg = IntegratorConfig(dt=0.01, t0=0.0, tf=1.0)
        t1 = simulate(model, x0, events, cfg, y0_guess=y0)
        t2 = simulate(model, x0, events, cfg, y0_guess=y0)
        assert np.array_equal(t1.states, t2.states)
        assert np.array_equal(t1.algebraics, t2.algebraics)

    def test_lambda_rows_constant_through_fault(self, nominal_trajectory, nominal_model):
        model, _, x0, _ = nominal_model
        lam_idx = model.lambda_indices
        first = nominal_trajectory.states[0, lam_idx]
        assert np.all(nominal_trajectory.states[:, lam_idx] == first)


class TestCsvExport:
    def test_trajectory_and_junction_files(self, tmp_path, scalar_model):
        cfg = IntegratorConfig(dt=0.01, t0=0.0, tf=0.5)
        events = [EventSpec(kind="switching", pre_mode=0, post_mode=1, t_event=0.2)]
        traj = simulate(scalar_model, np.array([1.0, -0.5, 0.8]), events, cfg)
        tpath = tmp_path / "traj.csv"
        jpath = tmp_path / "junc.csv"
        write_trajectory_csv(tpath, scalar_model, traj)
        write_junctions_csv(jpath, scalar_model, traj)
        tlines = tpath.read_text().splitlines()
        assert tlines[0].startswith("# schema=")
        assert tlines[1].split(",")[:3] == ["t_s", "mode", "x"]
        # junction time is duplicated -> samples + 2 event rows
        assert len(tlines) == 2 + 51 + 1
        jlines = jpath.read_text().splitlines()
        assert jlines[0].startswith("# schema=")
        assert len(jlines) == 3

    def test_byte_identical_across_runs(self, tmp_path, scalar_model):
        cfg = IntegratorConfig(dt=0.01, t0=0.0, tf=0.5)
        events = [EventSpec(kind="switching", pre_mode=0, post_mode=1, t_event=0.2)]
        blobs = []
        for tag in ("a", "b"):
            traj = simulate(scalar_model, np.array([1.0, -0.5, 0.8]), events, cfg)
            path = tmp_path / f"{tag}.csv"
            write_trajectory_csv(path, scalar_model, traj)
            blobs.append(path.read_bytes())
        assert blobs[0] == blobs[1]
