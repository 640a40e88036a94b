"""Assembles the concrete hybrid DAE model of a faulted multi-machine system.

Differential states per machine: delta, omega, E'q, then Efd when a fast
exciter is fitted and three stabilizer states when a PSS is fitted.  Tunable
stabilizer gains (Ks, T1, T2) of every PSS-equipped machine are appended to
the state vector as constant parameter entries, and the evaluators read them
from there — perturbing a parameter entry of x0 therefore perturbs the
dynamics, which is exactly what makes one sensitivity matrix cover both
initial conditions and parameters.

Algebraic unknowns are rectangular bus voltages plus machine dq currents:
y = [VR(1..nb), VI(1..nb), Id(1..ng), Iq(1..ng)].  With constant-impedance
loads folded into the admittance matrix the network equations are linear in
y, so the per-step Newton solves converge in very few iterations and the
faulted mode (a large shunt at one bus) stays well conditioned.  Mode 0 is
the healthy network; mode 1 carries the fault shunt; fault clearing returns
to mode 0 (the fault self-clears, no line trips).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, Optional

import numpy as np

from ..errors import ConfigurationError
from ..hybrid import AugmentedState, Dims, EventSpec
from .machines import PssParams, pss_partials, pss_rhs
from .network import FaultScenario, NetworkCase, PowerFlowResult, build_ybus, solve_power_flow

Array = np.ndarray

LAMBDA_FIELDS = ("Ks", "T1", "T2")


@dataclass
class StateLayout:
    """Index bookkeeping for the augmented state and algebraic vectors."""

    n: int
    l: int
    p: int
    m: int
    n_bus: int
    n_mach: int
    machine_names: list
    delta_idx: Array
    omega_idx: Array
    eqp_idx: Array
    efd_idx: Array  # -1 where the field voltage is constant
    pss_idx: Array  # (ng, 3), -1 rows where no PSS
    lam_idx: Array  # (ng, 3) absolute indices of (Ks, T1, T2), -1 rows where no PSS
    machine_bus: Array  # 0-based bus positions
    state_names: list = field(default_factory=list)
    alg_names: list = field(default_factory=list)
    lambda_names: list = field(default_factory=list)

    @property
    def nx(self) -> int:
        return self.n + self.l + self.p

    @property
    def lambda_indices(self) -> Array:
        """Absolute x-indices of all tunable parameters, canonical order."""
        return np.array(
            [self.lam_idx[i, k] for i in range(self.n_mach) if self.lam_idx[i, 0] >= 0
             for k in range(3)],
            dtype=int,
        )

    def vr(self, k):
        return k

    def vi(self, k):
        return self.n_bus + k

    @property
    def id_base(self):
        return 2 * self.n_bus

    @property
    def iq_base(self):
        return 2 * self.n_bus + self.n_mach


def _build_layout(case: NetworkCase) -> StateLayout:
    ng = len(case.machines)
    nb = case.n_bus
    delta_idx = np.full(ng, -1)
    omega_idx = np.full(ng, -1)
    eqp_idx = np.full(ng, -1)
    efd_idx = np.full(ng, -1)
    pss_idx = np.full((ng, 3), -1)
    names = []
    pos = 0
    for i, mach in enumerate(case.machines):
        delta_idx[i] = pos
        names.append(f"delta_{mach.name}_rad")
        omega_idx[i] = pos + 1
        names.append(f"omega_{mach.name}_pu")
        eqp_idx[i] = pos + 2
        names.append(f"eqp_{mach.name}_pu")
        pos += 3
        if mach.exciter is not None:
            efd_idx[i] = pos
            names.append(f"efd_{mach.name}_pu")
            pos += 1
        if mach.has_pss:
            pss_idx[i] = [pos, pos + 1, pos + 2]
            names += [f"pssw_{mach.name}", f"pss1_{mach.name}", f"pss2_{mach.name}"]
            pos += 3
    n = pos
    lam_idx = np.full((ng, 3), -1)
    lam_names = []
    for i, mach in enumerate(case.machines):
        if mach.has_pss:
            lam_idx[i] = [pos, pos + 1, pos + 2]
            lam_names += [f"{f}_{mach.name}" for f in LAMBDA_FIELDS]
            pos += 3
    p = pos - n
    names += lam_names

    alg_names = [f"VR_bus{b.id}" for b in case.buses]
    alg_names += [f"VI_bus{b.id}" for b in case.buses]
    alg_names += [f"Id_{m.name}" for m in case.machines]
    alg_names += [f"Iq_{m.name}" for m in case.machines]

    return StateLayout(
        n=n, l=0, p=p, m=2 * nb + 2 * ng, n_bus=nb, n_mach=ng,
        machine_names=[m.name for m in case.machines],
        delta_idx=delta_idx, omega_idx=omega_idx, eqp_idx=eqp_idx,
        efd_idx=efd_idx, pss_idx=pss_idx, lam_idx=lam_idx,
        machine_bus=np.array([case.bus_pos(m.bus) for m in case.machines]),
        state_names=names, alg_names=alg_names, lambda_names=lam_names,
    )


class PowerSystemModel:
    """Hybrid DAE evaluators for one case + fault + stabilizer configuration.

    Satisfies the generic model contract used by the simulator and the
    sensitivity propagation (dims, f, fx, fy, g_modes, gx_modes, gy_modes,
    resets, hypersurfaces, state_names, alg_names); instances are immutable
    after construction and safe to share across threads.
    """

    def __init__(self, case: NetworkCase, fault: FaultScenario,
                 pss: Dict[str, PssParams], pf: PowerFlowResult):
        self.case = case
        self.fault = fault
        self.pf = pf
        self.layout = _build_layout(case)
        lay = self.layout
        self.dims = Dims(n=lay.n, l=lay.l, p=lay.p, m=lay.m)
        self.state_names = lay.state_names
        self.alg_names = lay.alg_names

        mach = case.machines
        self._h2 = np.array([2.0 * m.h for m in mach])
        self._d = np.array([m.d for m in mach])
        self._xd = np.array([m.xd for m in mach])
        self._xdp = np.array([m.xd_p for m in mach])
        self._xq = np.array([m.xq for m in mach])
        self._tdo = np.array([m.tdo_p for m in mach])
        self._has_exc = np.array([m.exciter is not None for m in mach])
        self._ka = np.array([m.exciter.ka if m.exciter else np.nan for m in mach])
        self._ta = np.array([m.exciter.ta if m.exciter else np.nan for m in mach])
        self._tw = np.array([pss[m.name].tw if m.has_pss else np.nan for m in mach])
        self._has_pss = np.array([m.has_pss for m in mach])
        self.omega_s = 2.0 * np.pi * case.frequency_hz

        self._init_equilibrium(pf, pss)

        # Healthy and faulted admittance matrices (loads folded in at the
        # power-flow voltages); the post-fault mode reuses the healthy one.
        y_dyn = build_ybus(case, load_voltages=pf.vm)
        y_fault = y_dyn.copy()
        kf = case.bus_pos(fault.bus)
        y_fault[kf, kf] += fault.admittance
        self._gb = {0: (y_dyn.real.copy(), y_dyn.imag.copy()),
                    1: (y_fault.real.copy(), y_fault.imag.copy())}

        self.g_modes = {0: self._make_g(0), 1: self._make_g(1)}
        self.gx_modes = {0: self._make_gx(0), 1: self._make_gx(1)}
        self.gy_modes = {0: self._make_gy(0), 1: self._make_gy(1)}
        self.resets = {}
        self.hypersurfaces = {}

    # ------------------------------------------------------------------
    # equilibrium initialization from the power flow
    def _init_equilibrium(self, pf: PowerFlowResult, pss: Dict[str, PssParams]):
        case, lay = self.case, self.layout
        ng = lay.n_mach
        vbar = pf.vm * np.exp(1j * pf.va)
        delta0 = np.zeros(ng)
        eqp0 = np.zeros(ng)
        efd0 = np.zeros(ng)
        pm = np.zeros(ng)
        vref = np.zeros(ng)
        id0 = np.zeros(ng)
        iq0 = np.zeros(ng)
        for i, m in enumerate(case.machines):
            k = lay.machine_bus[i]
            pg, qg = pf.gen_pq(case, m.bus)
            v = vbar[k]
            ibar = (pg - 1j * qg) / np.conj(v)
            e_behind_xq = v + 1j * m.xq * ibar
            delta0[i] = np.angle(e_behind_xq)
            rot = np.exp(-1j * (delta0[i] - np.pi / 2.0))
            idq = ibar * rot
            vdq = v * rot
            id0[i], iq0[i] = idq.real, idq.imag
            vq = vdq.imag
            eqp0[i] = vq + m.xd_p * id0[i]
            efd0[i] = eqp0[i] + (m.xd - m.xd_p) * id0[i]
            if efd0[i] <= 0:
                raise ConfigurationError(
                    f"{m.name}: negative equilibrium field voltage ({efd0[i]:.4f})"
                )
            pm[i] = eqp0[i] * iq0[i] + (m.xq - m.xd_p) * id0[i] * iq0[i]
            if m.exciter is not None:
                vref[i] = abs(v) + efd0[i] / m.exciter.ka
        self._pm = pm
        self._efd_const = efd0.copy()
        self._vref = vref
        self._delta0 = delta0
        self._eqp0 = eqp0
        self._id0 = id0
        self._iq0 = iq0
        # Record the back-solved reference voltage on the exciter structs.
        machines = [
            replace(m, exciter=replace(m.exciter, v_ref=float(vref[i])))
            if m.exciter is not None else m
            for i, m in enumerate(case.machines)
        ]
        self.case = replace(case, machines=machines)

        x0 = np.zeros(lay.nx)
        x0[lay.delta_idx] = delta0
        x0[lay.eqp_idx] = eqp0
        for i in range(ng):
            if lay.efd_idx[i] >= 0:
                x0[lay.efd_idx[i]] = efd0[i]
            if lay.lam_idx[i, 0] >= 0:
                x0[lay.lam_idx[i]] = pss[case.machines[i].name].as_lambda()
        self.x0 = x0
        y0 = np.zeros(lay.m)
        y0[: lay.n_bus] = pf.vm * np.cos(pf.va)
        y0[lay.n_bus : 2 * lay.n_bus] = pf.vm * np.sin(pf.va)
        y0[lay.id_base : lay.id_base + ng] = id0
        y0[lay.iq_base :] = iq0
        self.y0 = y0

    # ------------------------------------------------------------------
    def _machine_vars(self, x: Array, y: Array):
        lay = self.layout
        delta = x[lay.delta_idx]
        omega = x[lay.omega_idx]
        eqp = x[lay.eqp_idx]
        efd = np.where(self._has_exc,
                       x[np.where(lay.efd_idx >= 0, lay.efd_idx, 0)],
                       self._efd_const)
        vr = y[: lay.n_bus][lay.machine_bus]
        vi = y[lay.n_bus : 2 * lay.n_bus][lay.machine_bus]
        i_d = y[lay.id_base : lay.id_base + lay.n_mach]
        i_q = y[lay.iq_base :]
        return delta, omega, eqp, efd, vr, vi, i_d, i_q

    def f(self, x: Array, y: Array) -> Array:
        lay = self.layout
        delta, omega, eqp, efd, vr, vi, i_d, i_q = self._machine_vars(x, y)
        out = np.zeros(lay.nx)
        pe = eqp * i_q + (self._xq - self._xdp) * i_d * i_q
        out[lay.delta_idx] = self.omega_s * omega
        out[lay.omega_idx] = (self._pm - pe - self._d * omega) / self._h2
        out[lay.eqp_idx] = (-eqp - (self._xd - self._xdp) * i_d + efd) / self._tdo
        for i in range(lay.n_mach):
            v_s = 0.0
            if self._has_pss[i]:
                ks, t1, t2 = x[lay.lam_idx[i]]
                xw, x1, x2 = x[lay.pss_idx[i]]
                dxw, dx1, dx2, v_s = pss_rhs(ks, self._tw[i], t1, t2,
                                             omega[i], xw, x1, x2)
                out[lay.pss_idx[i]] = (dxw, dx1, dx2)
            if self._has_exc[i]:
                vt = np.hypot(vr[i], vi[i])
                out[lay.efd_idx[i]] = (
                    self._ka[i] * (self._vref[i] + v_s - vt) - efd[i]
                ) / self._ta[i]
        return out

    def fx(self, x: Array, y: Array) -> Array:
        lay = self.layout
        delta, omega, eqp, efd, vr, vi, i_d, i_q = self._machine_vars(x, y)
        jac = np.zeros((lay.nx, lay.nx))
        jac[lay.delta_idx, lay.omega_idx] = self.omega_s
        jac[lay.omega_idx, lay.omega_idx] = -self._d / self._h2
        jac[lay.omega_idx, lay.eqp_idx] = -i_q / self._h2
        jac[lay.eqp_idx, lay.eqp_idx] = -1.0 / self._tdo
        for i in range(lay.n_mach):
            if self._has_exc[i]:
                jac[lay.eqp_idx[i], lay.efd_idx[i]] = 1.0 / self._tdo[i]
                jac[lay.efd_idx[i], lay.efd_idx[i]] = -1.0 / self._ta[i]
            if self._has_pss[i]:
                ks, t1, t2 = x[lay.lam_idx[i]]
                xw, x1, x2 = x[lay.pss_idx[i]]
                dst, dvs = pss_partials(ks, self._tw[i], t1, t2,
                                        omega[i], xw, x1, x2)
                prows = lay.pss_idx[i]
                cols = {
                    "omega": lay.omega_idx[i],
                    "xw": prows[0], "x1": prows[1], "x2": prows[2],
                    "ks": lay.lam_idx[i, 0],
                    "t1": lay.lam_idx[i, 1],
                    "t2": lay.lam_idx[i, 2],
                }
                for key, col in cols.items():
                    jac[prows, col] = dst[key]
                    if self._has_exc[i]:
                        gain = self._ka[i] / self._ta[i]
                        jac[lay.efd_idx[i], col] += gain * dvs[key]
        return jac

    def fy(self, x: Array, y: Array) -> Array:
        lay = self.layout
        delta, omega, eqp, efd, vr, vi, i_d, i_q = self._machine_vars(x, y)
        jac = np.zeros((lay.nx, lay.m))
        idc = np.arange(lay.id_base, lay.id_base + lay.n_mach)
        iqc = np.arange(lay.iq_base, lay.iq_base + lay.n_mach)
        jac[lay.omega_idx, idc] = -(self._xq - self._xdp) * i_q / self._h2
        jac[lay.omega_idx, iqc] = -(eqp + (self._xq - self._xdp) * i_d) / self._h2
        jac[lay.eqp_idx, idc] = -(self._xd - self._xdp) / self._tdo
        for i in range(lay.n_mach):
            if self._has_exc[i]:
                vt = np.hypot(vr[i], vi[i])
                gain = -self._ka[i] / self._ta[i] / vt
                jac[lay.efd_idx[i], lay.vr(lay.machine_bus[i])] = gain * vr[i]
                jac[lay.efd_idx[i], lay.vi(lay.machine_bus[i])] = gain * vi[i]
        return jac

    # ------------------------------------------------------------------
    def _g(self, mode: int, x: Array, y: Array) -> Array:
        lay = self.layout
        g_mat, b_mat = self._gb[mode]
        delta, omega, eqp, efd, vrm, vim, i_d, i_q = self._machine_vars(x, y)
        vr = y[: lay.n_bus]
        vi = y[lay.n_bus : 2 * lay.n_bus]
        sd, cd = np.sin(delta), np.cos(delta)
        out = np.empty(lay.m)
        ng = lay.n_mach
        # Stator equations in the machine dq frame (Rs neglected).
        out[:ng] = sd * vrm - cd * vim - self._xq * i_q
        out[ng : 2 * ng] = eqp - cd * vrm - sd * vim - self._xdp * i_d
        # Nodal current balance in rectangular network coordinates.
        ir = np.zeros(lay.n_bus)
        ii = np.zeros(lay.n_bus)
        np.add.at(ir, lay.machine_bus, i_d * sd + i_q * cd)
        np.add.at(ii, lay.machine_bus, -i_d * cd + i_q * sd)
        out[2 * ng : 2 * ng + lay.n_bus] = g_mat @ vr - b_mat @ vi - ir
        out[2 * ng + lay.n_bus :] = g_mat @ vi + b_mat @ vr - ii
        return out

    def _gx(self, mode: int, x: Array, y: Array) -> Array:
        lay = self.layout
        delta, omega, eqp, efd, vrm, vim, i_d, i_q = self._machine_vars(x, y)
        sd, cd = np.sin(delta), np.cos(delta)
        ng = lay.n_mach
        jac = np.zeros((lay.m, lay.nx))
        rows1 = np.arange(ng)
        rows2 = np.arange(ng, 2 * ng)
        jac[rows1, lay.delta_idx] = cd * vrm + sd * vim
        jac[rows2, lay.delta_idx] = sd * vrm - cd * vim
        jac[rows2, lay.eqp_idx] = 1.0
        rrows = 2 * ng + lay.machine_bus
        irows = 2 * ng + lay.n_bus + lay.machine_bus
        np.add.at(jac, (rrows, lay.delta_idx), -(i_d * cd - i_q * sd))
        np.add.at(jac, (irows, lay.delta_idx), -(i_d * sd + i_q * cd))
        return jac

    def _gy(self, mode: int, x: Array, y: Array) -> Array:
        lay = self.layout
        g_mat, b_mat = self._gb[mode]
        delta, omega, eqp, efd, vrm, vim, i_d, i_q = self._machine_vars(x, y)
        sd, cd = np.sin(delta), np.cos(delta)
        nb, ng = lay.n_bus, lay.n_mach
        jac = np.zeros((lay.m, lay.m))
        rows1 = np.arange(ng)
        rows2 = np.arange(ng, 2 * ng)
        idc = np.arange(lay.id_base, lay.id_base + ng)
        iqc = np.arange(lay.iq_base, lay.iq_base + ng)
        jac[rows1, lay.machine_bus] = sd
        jac[rows1, nb + lay.machine_bus] = -cd
        jac[rows1, iqc] = -self._xq
        jac[rows2, lay.machine_bus] = -cd
        jac[rows2, nb + lay.machine_bus] = -sd
        jac[rows2, idc] = -self._xdp
        jac[2 * ng : 2 * ng + nb, :nb] = g_mat
        jac[2 * ng : 2 * ng + nb, nb : 2 * nb] = -b_mat
        jac[2 * ng + nb :, :nb] = b_mat
        jac[2 * ng + nb :, nb : 2 * nb] = g_mat
        rrows = 2 * ng + lay.machine_bus
        irows = 2 * ng + nb + lay.machine_bus
        np.add.at(jac, (rrows, idc), -sd)
        np.add.at(jac, (rrows, iqc), -cd)
        np.add.at(jac, (irows, idc), cd)
        np.add.at(jac, (irows, iqc), -sd)
        return jac

    def _make_g(self, mode):
        return lambda x, y: self._g(mode, x, y)

    def _make_gx(self, mode):
        return lambda x, y: self._gx(mode, x, y)

    def _make_gy(self, mode):
        return lambda x, y: self._gy(mode, x, y)

    # ------------------------------------------------------------------
    @property
    def lambda_indices(self) -> Array:
        return self.layout.lambda_indices

    @property
    def lambda_names(self) -> list:
        return self.layout.lambda_names

    def initial_state(self) -> AugmentedState:
        return AugmentedState.unpack(self.dims, self.x0)

    def terminal_voltage(self, y: Array, bus_id: int) -> float:
        k = self.case.bus_pos(bus_id)
        return float(np.hypot(y[k], y[self.layout.n_bus + k]))


def build_hybrid_model(case: NetworkCase, fault: FaultScenario,
                       pss: Optional[Dict[str, PssParams]] = None,
                       pf: Optional[PowerFlowResult] = None):
    """Construct the hybrid model and its two time-triggered fault events.

    ``pss`` maps machine names to stabilizer parameters; machines absent
    from the map run without a PSS.  A PSS on a machine without a fast
    exciter is rejected: the stabilizing signal enters through the exciter
    summing junction.
    """
    pss = dict(pss or {})
    names = {m.name for m in case.machines}
    for name in pss:
        if name not in names:
            raise ConfigurationError(f"PSS configured for unknown machine {name!r}")
    machines = []
    for m in case.machines:
        want = m.name in pss
        if want and m.exciter is None:
            raise ConfigurationError(
                f"{m.name}: a PSS requires a fast exciter to act through"
            )
        machines.append(replace(m, has_pss=want))
    case = replace(case, machines=machines)
    if fault.bus not in {b.id for b in case.buses}:
        raise ConfigurationError(f"fault bus {fault.bus} not in the case")
    if pf is None:
        pf = solve_power_flow(case)
    model = PowerSystemModel(case, fault, pss, pf)
    events = [
        EventSpec(kind="switching", pre_mode=0, post_mode=1,
                  t_event=fault.t_on, label="fault-on"),
        EventSpec(kind="switching", pre_mode=1, post_mode=0,
                  t_event=fault.t_off, label="fault-off"),
    ]
    return model, events


def init_dynamic_states(model: PowerSystemModel, config=None):
    """Equilibrium initial conditions (x0, y0) backed out of the power flow.

    Rotor angles, E'q, Efd and Vref come from the phasor solution; speed
    deviations and all stabilizer states are zero (the washout kills any DC
    input, so zero is the stabilizer equilibrium).  y0 is refined by a
    Newton solve of the healthy-mode algebraic equations.
    """
    from ..simulator import IntegratorConfig, solve_initial_algebraic

    cfg = config or IntegratorConfig()
    y0 = solve_initial_algebraic(model, model.x0, cfg.t0, 0, cfg, y_guess=model.y0)
    return model.initial_state(), y0
