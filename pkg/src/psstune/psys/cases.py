"""Loading network cases from the documented YAML schema."""

from __future__ import annotations

import importlib.resources
from pathlib import Path

import yaml

from ..errors import ScenarioError
from .machines import ExciterParams, GeneratorParams
from .network import Branch, Bus, NetworkCase

CASE_SCHEMA = "psstune.case.v1"


def _exciter_from_spec(spec, where):
    if spec is None or spec == "constant":
        return None
    if isinstance(spec, dict):
        try:
            return ExciterParams(ka=float(spec["ka_pu"]), ta=float(spec["ta_s"]))
        except KeyError as err:
            raise ScenarioError(f"{where}: exciter needs ka_pu and ta_s") from err
    raise ScenarioError(f"{where}: exciter must be 'constant' or a ka_pu/ta_s mapping")


def case_from_dict(doc: dict) -> NetworkCase:
    if doc.get("schema") != CASE_SCHEMA:
        raise ScenarioError(
            f"case schema {doc.get('schema')!r} unsupported (expected {CASE_SCHEMA})"
        )
    buses = [
        Bus(
            id=int(b["id"]),
            kind=str(b["kind"]),
            p_load=float(b.get("p_load_pu", 0.0)),
            q_load=float(b.get("q_load_pu", 0.0)),
            shunt_g=float(b.get("shunt_g_pu", 0.0)),
            shunt_b=float(b.get("shunt_b_pu", 0.0)),
            v_set=float(b.get("v_set_pu", 1.0)),
            p_gen=float(b.get("p_gen_pu", 0.0)),
        )
        for b in doc["buses"]
    ]
    branches = [
        Branch(
            from_bus=int(br["from"]),
            to_bus=int(br["to"]),
            r=float(br["r_pu"]),
            x=float(br["x_pu"]),
            b_charging=float(br.get("b_pu", 0.0)),
        )
        for br in doc["branches"]
    ]
    machines = [
        GeneratorParams(
            name=str(m["name"]),
            bus=int(m["bus"]),
            h=float(m["h_s"]),
            d=float(m.get("d_pu", 0.0)),
            xd=float(m["xd_pu"]),
            xd_p=float(m["xd_prime_pu"]),
            xq=float(m["xq_pu"]),
            tdo_p=float(m["tdo_prime_s"]),
            exciter=_exciter_from_spec(m.get("exciter", "constant"), m.get("name")),
        )
        for m in doc.get("machines", [])
    ]
    return NetworkCase(
        name=str(doc.get("name", "case")),
        base_mva=float(doc["base_mva"]),
        frequency_hz=float(doc["frequency_hz"]),
        buses=buses,
        branches=branches,
        machines=machines,
    )


def load_case(ref: str) -> NetworkCase:
    """Load a case by packaged name (e.g. 'wscc9') or filesystem path."""
    path = Path(ref)
    if path.suffix in (".yaml", ".yml") and path.exists():
        text = path.read_text()
    else:
        resource = importlib.resources.files("psstune.psys") / "data" / f"{ref}.yaml"
        if not resource.is_file():
            if path.exists():
                text = path.read_text()
            else:
                raise ScenarioError(f"unknown case {ref!r} (no packaged case or file)")
        else:
            text = resource.read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ScenarioError(f"case file {ref!r} is not valid YAML: {err}") from err
    if not isinstance(doc, dict):
        raise ScenarioError(f"case file {ref!r} does not contain a mapping")
    return case_from_dict(doc)
