"""Network case data, bus admittance construction and Newton-Raphson power flow."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, PowerFlowError, StructuralError
from .machines import GeneratorParams


@dataclass
class Bus:
    """One network node; quantities in per-unit on the system base."""

    id: int
    kind: str  # 'slack' | 'pv' | 'pq'
    p_load: float = 0.0
    q_load: float = 0.0
    shunt_g: float = 0.0
    shunt_b: float = 0.0
    v_set: float = 1.0  # regulated magnitude for pv/slack buses
    p_gen: float = 0.0  # scheduled injection for pv buses

    def __post_init__(self):
        if self.kind not in ("slack", "pv", "pq"):
            raise ConfigurationError(f"bus {self.id}: unknown kind {self.kind!r}")


@dataclass
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float = 0.0  # total line charging susceptance


@dataclass
class FaultScenario:
    """Self-clearing three-phase fault: a large shunt at one bus."""

    bus: int
    t_on: float
    t_off: float
    admittance: float = 1e4

    def __post_init__(self):
        if not (self.t_off > self.t_on >= 0.0):
            raise ConfigurationError(
                f"fault window must satisfy t_off > t_on >= 0 (got {self.t_on}, {self.t_off})"
            )
        if self.admittance <= 0:
            raise ConfigurationError("fault admittance must be positive")


@dataclass
class NetworkCase:
    name: str
    base_mva: float
    frequency_hz: float
    buses: list = field(default_factory=list)
    branches: list = field(default_factory=list)
    machines: list = field(default_factory=list)  # GeneratorParams

    def __post_init__(self):
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("duplicate bus ids")
        slacks = [b for b in self.buses if b.kind == "slack"]
        if len(slacks) != 1:
            raise ConfigurationError(f"need exactly one slack bus, found {len(slacks)}")
        index = {bid: k for k, bid in enumerate(ids)}
        for br in self.branches:
            if br.from_bus not in index or br.to_bus not in index:
                raise ConfigurationError(
                    f"branch {br.from_bus}-{br.to_bus} references an unknown bus"
                )
        for g in self.machines:
            if g.bus not in index:
                raise ConfigurationError(f"machine {g.name} sits on unknown bus {g.bus}")
        self._index = index
        if not self._connected():
            raise ConfigurationError("network graph is not connected")

    def _connected(self) -> bool:
        if not self.buses:
            return False
        adj = {b.id: set() for b in self.buses}
        for br in self.branches:
            adj[br.from_bus].add(br.to_bus)
            adj[br.to_bus].add(br.from_bus)
        seen = {self.buses[0].id}
        stack = [self.buses[0].id]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == len(self.buses)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    def bus_pos(self, bus_id: int) -> int:
        return self._index[bus_id]

    def machine(self, name: str) -> GeneratorParams:
        for g in self.machines:
            if g.name == name:
                return g
        raise ConfigurationError(f"unknown machine {name!r}")


def build_ybus(case: NetworkCase, load_voltages=None) -> np.ndarray:
    """Complex bus admittance matrix.

    Diagonals collect incident branch admittances, half-charging and bus
    shunts.  When ``load_voltages`` (per-unit magnitudes, case bus order) is
    given, constant-impedance load admittances (P - jQ)/V^2 evaluated at
    those voltages are folded onto the diagonal, which is the form the
    dynamic algebraic equations use.
    """
    nb = case.n_bus
    y = np.zeros((nb, nb), dtype=complex)
    for br in case.branches:
        if br.r == 0.0 and br.x == 0.0:
            raise StructuralError(
                f"branch {br.from_bus}-{br.to_bus} has zero impedance"
            )
        i = case.bus_pos(br.from_bus)
        j = case.bus_pos(br.to_bus)
        ys = 1.0 / complex(br.r, br.x)
        y[i, j] -= ys
        y[j, i] -= ys
        y[i, i] += ys + 0.5j * br.b_charging
        y[j, j] += ys + 0.5j * br.b_charging
    for b in case.buses:
        k = case.bus_pos(b.id)
        y[k, k] += complex(b.shunt_g, b.shunt_b)
    if load_voltages is not None:
        v = np.asarray(load_voltages, dtype=float)
        for b in case.buses:
            if b.p_load or b.q_load:
                k = case.bus_pos(b.id)
                y[k, k] += complex(b.p_load, -b.q_load) / v[k] ** 2
    return y


@dataclass
class PowerFlowResult:
    vm: np.ndarray  # bus voltage magnitudes, case order
    va: np.ndarray  # bus voltage angles, rad
    p_inj: np.ndarray  # net injections at the solution
    q_inj: np.ndarray
    mismatch: float
    iterations: int

    def gen_pq(self, case: NetworkCase, bus_id: int):
        """Generator output at a bus: net injection plus the local load."""
        k = case.bus_pos(bus_id)
        b = case.buses[k]
        return self.p_inj[k] + b.p_load, self.q_inj[k] + b.q_load


def solve_power_flow(case: NetworkCase, tol: float = 1e-10,
                     max_iter: int = 50) -> PowerFlowResult:
    """Polar Newton-Raphson power flow.

    Slack angle is zero; PV magnitudes are held at their setpoints.  The
    returned mismatch is the final max-norm of the power balance.
    """
    nb = case.n_bus
    y = build_ybus(case)
    g, b = y.real, y.imag

    kinds = [bus.kind for bus in case.buses]
    slack = kinds.index("slack")
    pv = [k for k in range(nb) if kinds[k] == "pv"]
    pq = [k for k in range(nb) if kinds[k] == "pq"]
    ang_idx = [k for k in range(nb) if k != slack]
    mag_idx = pq

    p_sched = np.array([bus.p_gen - bus.p_load for bus in case.buses])
    q_sched = np.array([-bus.q_load for bus in case.buses])

    vm = np.array([bus.v_set if kinds[k] != "pq" else 1.0
                   for k, bus in enumerate(case.buses)])
    va = np.zeros(nb)

    def injections(vm, va):
        vr = vm * np.cos(va)
        vi = vm * np.sin(va)
        ir = g @ vr - b @ vi
        ii = g @ vi + b @ vr
        p = vr * ir + vi * ii
        q = vi * ir - vr * ii
        return p, q

    n_ang, n_mag = len(ang_idx), len(mag_idx)
    mism = np.inf
    for it in range(1, max_iter + 1):
        p, q = injections(vm, va)
        dp = p_sched[ang_idx] - p[ang_idx]
        dq = q_sched[mag_idx] - q[mag_idx]
        mism = float(max(np.max(np.abs(dp)) if n_ang else 0.0,
                         np.max(np.abs(dq)) if n_mag else 0.0))
        if not np.isfinite(mism):
            raise PowerFlowError("power flow diverged (non-finite mismatch)",
                                 mismatch=mism, iterations=it)
        if mism <= tol:
            return PowerFlowResult(vm=vm, va=va, p_inj=p, q_inj=q,
                                   mismatch=mism, iterations=it - 1)

        # Full polar Jacobian, then slice to the free angle/magnitude sets.
        th = va[:, None] - va[None, :]
        a_ij = g * np.cos(th) + b * np.sin(th)
        s_ij = g * np.sin(th) - b * np.cos(th)
        vv = vm[:, None] * vm[None, :]
        dp_dth = vv * s_ij
        np.fill_diagonal(dp_dth, -q - vm**2 * np.diag(b))
        dp_dv = vm[:, None] * a_ij
        np.fill_diagonal(dp_dv, p / vm + vm * np.diag(g))
        dq_dth = -vv * a_ij
        np.fill_diagonal(dq_dth, p - vm**2 * np.diag(g))
        dq_dv = vm[:, None] * s_ij
        np.fill_diagonal(dq_dv, q / vm - vm * np.diag(b))

        jac = np.block([
            [dp_dth[np.ix_(ang_idx, ang_idx)], dp_dv[np.ix_(ang_idx, mag_idx)]],
            [dq_dth[np.ix_(mag_idx, ang_idx)], dq_dv[np.ix_(mag_idx, mag_idx)]],
        ])
        try:
            step = np.linalg.solve(jac, np.concatenate([dp, dq]))
        except np.linalg.LinAlgError as err:
            raise PowerFlowError("power flow Jacobian is singular",
                                 mismatch=mism, iterations=it) from err
        if not np.all(np.isfinite(step)):
            raise PowerFlowError("power flow diverged", mismatch=mism, iterations=it)
        va[ang_idx] += step[:n_ang]
        vm[mag_idx] += step[n_ang:]
        if np.any(vm <= 0):
            raise PowerFlowError("power flow voltage collapsed below zero",
                                 mismatch=mism, iterations=it)

    raise PowerFlowError(
        f"power flow did not converge in {max_iter} iterations "
        f"(mismatch {mism:.3e})", mismatch=mism, iterations=max_iter,
    )
