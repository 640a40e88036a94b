"""Scenario files: one YAML document driving a simulation or tuning run.

A scenario references a network case, configures the fault window, the
exciter/PSS fit-out per machine, the integrator, the objective window and
the tuner, and names an output directory.  Validation happens up front:
event-grid alignment, bound ordering and machine ids are all checked before
anything runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import yaml

from .errors import ScenarioError
from .psys.cases import _exciter_from_spec, load_case
from .psys.machines import PssParams
from .psys.network import FaultScenario, NetworkCase
from .psys.builder import build_hybrid_model, init_dynamic_states
from .simulator import IntegratorConfig, validate_events
from .tuning import CgmConfig, ObjectiveConfig, SimulationBundle

SCENARIO_SCHEMA = "psstune.scenario.v1"

DEFAULT_BOUNDS = {"Ks": (0.1, 50.0), "T1": (0.01, 1.5), "T2": (0.01, 0.2)}


@dataclass
class Scenario:
    name: str
    case: NetworkCase
    case_ref: str
    fault: FaultScenario
    pss: Dict[str, PssParams]
    integrator: IntegratorConfig
    objective: ObjectiveConfig
    tuner_options: dict = field(default_factory=dict)
    bounds: Dict[str, tuple] = field(default_factory=lambda: dict(DEFAULT_BOUNDS))
    output_dir: str = "out"

    def build(self):
        """Construct (model, events, x0, y0) and validate the event grid."""
        model, events = build_hybrid_model(self.case, self.fault, self.pss)
        validate_events(events, self.integrator, initial_mode=0, model=model)
        t0, tf = self.objective.window(self.integrator)
        if tf <= self.fault.t_off:
            raise ScenarioError(
                f"objective window must extend beyond fault clearing "
                f"(tf={tf} <= t_off={self.fault.t_off})"
            )
        x0, y0 = init_dynamic_states(model, self.integrator)
        return model, events, x0, y0

    def bundle(self) -> SimulationBundle:
        model, events, x0, y0 = self.build()
        return SimulationBundle(model, events, x0, self.integrator,
                                self.objective, y0_guess=y0)

    def pss_machine_order(self) -> list:
        """PSS-equipped machine names in case order (the lambda layout order)."""
        return [m.name for m in self.case.machines if m.name in self.pss]

    def cgm_config(self) -> CgmConfig:
        """Tuner configuration with bound arrays aligned to the lambda layout."""
        lower, upper = [], []
        for _ in self.pss_machine_order():
            for f in ("Ks", "T1", "T2"):
                lo, hi = self.bounds[f]
                lower.append(lo)
                upper.append(hi)
        opts = dict(self.tuner_options)
        return CgmConfig(lower=np.array(lower), upper=np.array(upper), **opts)

    def lambda0(self) -> np.ndarray:
        parts = [self.pss[n].as_lambda() for n in self.pss_machine_order()]
        return np.concatenate(parts) if parts else np.zeros(0)

    def with_pss_values(self, lam: np.ndarray) -> "Scenario":
        """Copy of the scenario carrying new tuned stabilizer parameters."""
        names = self.pss_machine_order()
        lam = np.asarray(lam, dtype=float)
        if lam.shape != (3 * len(names),):
            raise ScenarioError(
                f"lambda has shape {lam.shape}, expected ({3 * len(names)},)"
            )
        new_pss = {}
        for i, name in enumerate(names):
            ks, t1, t2 = lam[3 * i : 3 * i + 3]
            tw = self.pss[name].tw
            new_pss[name] = PssParams(ks=float(ks), tw=tw, t1=float(t1), t2=float(t2))
        return replace(self, pss=new_pss)


def _require(doc, key, where):
    if key not in doc:
        raise ScenarioError(f"{where}: missing required field {key!r}")
    return doc[key]


def scenario_from_dict(doc: dict, base_dir: Optional[Path] = None,
                       name: str = "scenario") -> Scenario:
    if doc.get("schema") != SCENARIO_SCHEMA:
        raise ScenarioError(
            f"scenario schema {doc.get('schema')!r} unsupported "
            f"(expected {SCENARIO_SCHEMA})"
        )
    case_ref = str(_require(doc, "case", name))
    case_path = Path(case_ref)
    if base_dir is not None and not case_path.is_absolute() and case_path.suffix:
        resolved = base_dir / case_path
        case = load_case(str(resolved) if resolved.exists() else case_ref)
    else:
        case = load_case(case_ref)

    f = _require(doc, "fault", name)
    fault = FaultScenario(
        bus=int(_require(f, "bus", "fault")),
        t_on=float(_require(f, "t_on_s", "fault")),
        t_off=float(_require(f, "t_off_s", "fault")),
        admittance=float(f.get("admittance_pu", 1e4)),
    )

    machines_doc = doc.get("machines", {}) or {}
    known = {m.name for m in case.machines}
    pss: Dict[str, PssParams] = {}
    new_machines = list(case.machines)
    for mname, mcfg in machines_doc.items():
        if mname not in known:
            raise ScenarioError(f"{name}: machine {mname!r} not in case {case.name!r}")
        mcfg = mcfg or {}
        idx = [m.name for m in new_machines].index(mname)
        if "exciter" in mcfg:
            exciter = _exciter_from_spec(mcfg["exciter"], mname)
            new_machines[idx] = replace(new_machines[idx], exciter=exciter)
        if mcfg.get("pss"):
            p = mcfg["pss"]
            pss[mname] = PssParams(
                ks=float(_require(p, "Ks_pu", f"{mname}.pss")),
                tw=float(_require(p, "Tw_s", f"{mname}.pss")),
                t1=float(_require(p, "T1_s", f"{mname}.pss")),
                t2=float(_require(p, "T2_s", f"{mname}.pss")),
                t3=float(p["T3_s"]) if "T3_s" in p else None,
                t4=float(p["T4_s"]) if "T4_s" in p else None,
            )
    case = replace(case, machines=new_machines)

    integ_doc = doc.get("integrator", {}) or {}
    integrator = IntegratorConfig(
        dt=float(integ_doc.get("dt_s", 0.01)),
        newton_tol=float(integ_doc.get("newton_tol", 1e-8)),
        newton_max_iter=int(integ_doc.get("newton_max_iter", 20)),
        t0=float(integ_doc.get("t0_s", 0.0)),
        tf=float(integ_doc.get("tf_s", 10.0)),
    )

    obj_doc = doc.get("objective", {}) or {}
    objective = ObjectiveConfig(
        t0=obj_doc.get("t0_s"),
        tf=obj_doc.get("tf_s"),
        generators=obj_doc.get("generators"),
    )

    tuner_doc = dict(doc.get("tuner", {}) or {})
    bounds = dict(DEFAULT_BOUNDS)
    for fname, pair in (tuner_doc.pop("bounds", {}) or {}).items():
        if fname not in bounds:
            raise ScenarioError(f"{name}: unknown bound field {fname!r}")
        lo, hi = float(pair[0]), float(pair[1])
        if lo >= hi:
            raise ScenarioError(f"{name}: bound {fname} has lower >= upper")
        bounds[fname] = (lo, hi)

    scenario = Scenario(
        name=str(doc.get("name", name)),
        case=case,
        case_ref=case_ref,
        fault=fault,
        pss=pss,
        integrator=integrator,
        objective=objective,
        tuner_options=tuner_doc,
        bounds=bounds,
        output_dir=str(doc.get("output_dir", "out")),
    )
    # Surface grid/ordering problems now rather than mid-run.
    if fault.t_off >= integrator.tf:
        raise ScenarioError(f"{name}: fault must clear before tf")
    for t in (fault.t_on, fault.t_off):
        k = (t - integrator.t0) / integrator.dt
        if abs(k - round(k)) > 1e-9 * max(1.0, abs(k)):
            raise ScenarioError(f"{name}: event time {t} is not on the dt grid")
    return scenario


def load_scenario(path) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"scenario file {path} does not exist")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as err:
        raise ScenarioError(f"{path} is not valid YAML: {err}") from err
    if not isinstance(doc, dict):
        raise ScenarioError(f"{path} does not contain a mapping")
    return scenario_from_dict(doc, base_dir=path.parent, name=path.stem)


def scenario_to_dict(s: Scenario) -> dict:
    machines = {}
    for m in s.case.machines:
        cfg = {}
        if m.exciter is None:
            cfg["exciter"] = "constant"
        else:
            cfg["exciter"] = {"ka_pu": m.exciter.ka, "ta_s": m.exciter.ta}
        if m.name in s.pss:
            p = s.pss[m.name]
            cfg["pss"] = {"Ks_pu": p.ks, "Tw_s": p.tw, "T1_s": p.t1, "T2_s": p.t2}
        machines[m.name] = cfg
    return {
        "schema": SCENARIO_SCHEMA,
        "name": s.name,
        "case": s.case_ref,
        "fault": {
            "bus": s.fault.bus,
            "t_on_s": s.fault.t_on,
            "t_off_s": s.fault.t_off,
            "admittance_pu": s.fault.admittance,
        },
        "machines": machines,
        "integrator": {
            "dt_s": s.integrator.dt,
            "newton_tol": s.integrator.newton_tol,
            "newton_max_iter": s.integrator.newton_max_iter,
            "t0_s": s.integrator.t0,
            "tf_s": s.integrator.tf,
        },
        "objective": {
            "t0_s": s.objective.t0,
            "tf_s": s.objective.tf,
            "generators": list(s.objective.generators) if s.objective.generators else None,
        },
        "tuner": {**s.tuner_options,
                  "bounds": {k: list(v) for k, v in s.bounds.items()}},
        "output_dir": s.output_dir,
    }


def save_scenario(path, s: Scenario) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(scenario_to_dict(s), fh, sort_keys=False)
