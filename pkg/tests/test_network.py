"""Y-bus construction and Newton-Raphson power flow."""

import numpy as np
import pytest
from dataclasses import replace

from psstune.errors import ConfigurationError, PowerFlowError, StructuralError
from psstune.psys import Branch, Bus, NetworkCase, build_ybus, solve_power_flow
from psstune.psys.network import FaultScenario


def two_bus_case():
    return NetworkCase(
        name="two-bus", base_mva=100.0, frequency_hz=60.0,
        buses=[Bus(id=1, kind="slack", v_set=1.0), Bus(id=2, kind="pq")],
        branches=[Branch(from_bus=1, to_bus=2, r=0.0, x=0.1)],
    )


class TestBuildYbus:
    def test_single_reactive_branch(self):
        y = build_ybus(two_bus_case())
        assert y[0, 1] == pytest.approx(10j)
        assert y[1, 0] == pytest.approx(10j)
        assert y[0, 0] == pytest.approx(-10j)
        assert y[1, 1] == pytest.approx(-10j)

    def test_nine_bus_branch_rows_sum_to_shunts(self, wscc9_case):
        # Series terms cancel across each row; only charging survives.
        y = build_ybus(wscc9_case)
        row_sums = y.sum(axis=1)
        charging = np.zeros(wscc9_case.n_bus, dtype=complex)
        for br in wscc9_case.branches:
            i = wscc9_case.bus_pos(br.from_bus)
            j = wscc9_case.bus_pos(br.to_bus)
            charging[i] += 0.5j * br.b_charging
            charging[j] += 0.5j * br.b_charging
        assert np.allclose(row_sums, charging, atol=1e-12)

    def test_fault_shunt_changes_single_diagonal(self, wscc9_case):
        y0 = build_ybus(wscc9_case)
        yf = y0.copy()
        k = wscc9_case.bus_pos(9)
        yf[k, k] += 1e4
        diff = yf - y0
        assert diff[k, k] == pytest.approx(1e4)
        diff[k, k] = 0.0
        assert np.all(diff == 0.0)

    def test_load_folding_at_given_voltages(self, wscc9_case, wscc9_pf):
        y0 = build_ybus(wscc9_case)
        y1 = build_ybus(wscc9_case, load_voltages=wscc9_pf.vm)
        diff = np.diag(y1 - y0)
        k5 = wscc9_case.bus_pos(5)
        expected = (1.25 - 0.5j) / wscc9_pf.vm[k5] ** 2
        assert diff[k5] == pytest.approx(expected)

    def test_zero_impedance_branch_rejected(self):
        case = two_bus_case()
        case.branches[0] = Branch(from_bus=1, to_bus=2, r=0.0, x=0.0)
        with pytest.raises(StructuralError):
            build_ybus(case)


class TestPowerFlow:
    def test_flat_system_trivial_equilibrium(self):
        pf = solve_power_flow(two_bus_case())
        assert np.allclose(pf.vm, 1.0, atol=1e-12)
        assert np.allclose(pf.va, 0.0, atol=1e-12)

    def test_nine_bus_converges_in_range(self, wscc9_case, wscc9_pf):
        assert wscc9_pf.mismatch <= 1e-8
        assert np.all(wscc9_pf.vm >= 0.95) and np.all(wscc9_pf.vm <= 1.05)
        assert wscc9_pf.va[wscc9_case.bus_pos(1)] == 0.0

    def test_nine_bus_mismatch_checked_independently(self, wscc9_case, wscc9_pf):
        # Re-derive the power balance from scratch at the returned solution.
        y = build_ybus(wscc9_case)
        v = wscc9_pf.vm * np.exp(1j * wscc9_pf.va)
        s = v * np.conj(y @ v)
        for k, bus in enumerate(wscc9_case.buses):
            if bus.kind == "pq":
                assert abs(s[k].real + bus.p_load) <= 1e-8
                assert abs(s[k].imag + bus.q_load) <= 1e-8
            elif bus.kind == "pv":
                assert abs(s[k].real - (bus.p_gen - bus.p_load)) <= 1e-8

    def test_infeasible_loading_diverges(self, wscc9_case):
        buses = [replace(b, p_load=b.p_load * 100, q_load=b.q_load * 100)
                 for b in wscc9_case.buses]
        bad = replace(wscc9_case, buses=buses)
        with pytest.raises(PowerFlowError):
            solve_power_flow(bad)

    def test_gen_pq_adds_local_load(self, wscc9_case, wscc9_pf):
        p1, _ = wscc9_pf.gen_pq(wscc9_case, 1)
        p2, _ = wscc9_pf.gen_pq(wscc9_case, 2)
        assert p2 == pytest.approx(1.63, abs=1e-9)
        total_load = sum(b.p_load for b in wscc9_case.buses)
        # Slack picks up losses: total generation slightly above total load.
        assert p1 + 1.63 + 0.85 > total_load


class TestCaseValidation:
    def test_duplicate_bus_ids(self):
        with pytest.raises(ConfigurationError):
            NetworkCase(name="bad", base_mva=100, frequency_hz=60,
                        buses=[Bus(id=1, kind="slack"), Bus(id=1, kind="pq")],
                        branches=[])

    def test_exactly_one_slack(self):
        with pytest.raises(ConfigurationError):
            NetworkCase(name="bad", base_mva=100, frequency_hz=60,
                        buses=[Bus(id=1, kind="pq"), Bus(id=2, kind="pq")],
                        branches=[Branch(from_bus=1, to_bus=2, r=0.01, x=0.1)])

    def test_disconnected_graph(self):
        with pytest.raises(ConfigurationError):
            NetworkCase(name="bad", base_mva=100, frequency_hz=60,
                        buses=[Bus(id=1, kind="slack"), Bus(id=2, kind="pq"),
                               Bus(id=3, kind="pq")],
                        branches=[Branch(from_bus=1, to_bus=2, r=0.01, x=0.1)])

    def test_fault_window_ordering(self):
        with pytest.raises(ConfigurationError):
            FaultScenario(bus=9, t_on=0.2, t_off=0.1)
        with pytest.raises(ConfigurationError):
            FaultScenario(bus=9, t_on=-0.1, t_off=0.1)
