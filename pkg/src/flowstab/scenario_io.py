"""Scenario files (JSON), bundled scenarios, trajectory CSV and report output.

A scenario document looks like::

    {
      "schema_version": 1,
      "name": "example",
      "parameters": {"A": 0.45},
      "links": [{"id": "e1", "tail": "a", "head": "b"}, ...],
      "routing": [{"from": "e1", "to": "e2", "fraction": 0.5}, ...],
      "flow": [{"family": "saturating_exp", "links": "all", "capacity": 1.0}],
      "inflow": {"e1": {"type": "sinusoid", "amplitude": "$A"}},
      "initial_state": 0.0,
      "simulation": {"dt": 0.001, "horizon": 100.0}
    }

Multi-commodity scenarios replace ``routing``/``inflow``/``initial_state``
by a ``commodities`` list holding those three per commodity. Strings of
the form ``"$name"`` refer to ``parameters`` and are accepted wherever a
number is expected inside ``flow`` and ``inflow``.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, NamedTuple, Sequence

import numpy as np

from .certificates import CertificateReport, overall_verdict
from .flows import FlowField, Linear, NodeProportional, PhaseProportional, SaturatingExp
from .inflow import Constant, InflowSignal, PiecewiseConstant, Sinusoid, ZeroAfter
from .multicommodity import CommoditySpec, MCTrajectory
from .network import DomainError, FlowGraph, FlowNetwork, StructuralError, validate_network
from .simulator import SimConfig, Trajectory

SCHEMA_VERSION = 1
REPORT_VERSION = 1
PARAMETER_NAME = re.compile(r"^(A|phi|kappa|lambda\w*)$")

_TOP_KEYS = ("schema_version", "name", "description", "notes", "parameters", "nodes", "links",
             "routing", "commodities", "flow", "inflow", "initial_state", "simulation")
_SIM_KEYS = ("dt", "horizon", "mode", "record_every")


class ScenarioError(ValueError):
    """Base class; ``source`` is the file and ``location`` a path inside the document."""

    def __init__(self, message: str, source: str | None = None, location: str | None = None):
        self.message = message
        self.source = source
        self.location = location
        where = source or "<scenario>"
        if location:
            where = f"{where}: {location}"
        super().__init__(f"{where}: {message}")


class ScenarioParseError(ScenarioError):
    """The file is not valid JSON."""


class ScenarioSchemaError(ScenarioError):
    """Valid JSON, but not shaped like a scenario."""


class ScenarioValidationError(ScenarioError):
    """Well-formed scenario describing an invalid network, flow field or inflow."""


# --------------------------------------------------------------------------- schema


class _Schema:
    def __init__(self, source: str | None):
        self.source = source

    def fail(self, loc: str, msg: str):
        raise ScenarioSchemaError(msg, self.source, loc)

    def obj(self, v, loc: str, required: Sequence[str], optional: Sequence[str] = ()) -> dict:
        if not isinstance(v, dict):
            self.fail(loc, "expected an object")
        for k in required:
            if k not in v:
                self.fail(loc, f"missing key {k!r}")
        extra = [k for k in v if k not in required and k not in optional]
        if extra:
            self.fail(loc, f"unknown key {extra[0]!r}")
        return v

    def string(self, v, loc: str) -> str:
        if not isinstance(v, str) or not v:
            self.fail(loc, "expected a non-empty string")
        return v

    def number(self, v, loc: str, refs: bool = False):
        if refs and isinstance(v, str):
            if not v.startswith("$") or len(v) < 2:
                self.fail(loc, "parameter references look like \"$name\"")
            return v
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            self.fail(loc, "expected a finite number" + (" or a \"$name\" reference" if refs else ""))
        return v

    def array(self, v, loc: str) -> list:
        if not isinstance(v, list):
            self.fail(loc, "expected an array")
        return v

    def strings(self, v, loc: str) -> list[str]:
        return [self.string(s, f"{loc}[{k}]") for k, s in enumerate(self.array(v, loc))]


def _canon_signal(S: _Schema, v, loc: str) -> dict:
    if not isinstance(v, dict) or "type" not in v:
        S.fail(loc, "expected an object with a 'type'")
    kind = v["type"]
    if kind == "constant":
        S.obj(v, loc, ("type", "value"))
        return {"type": kind, "value": S.number(v["value"], f"{loc}.value", True)}
    if kind == "sinusoid":
        S.obj(v, loc, ("type", "amplitude"), ("omega", "phase"))
        return {
            "type": kind,
            "amplitude": S.number(v["amplitude"], f"{loc}.amplitude", True),
            "omega": S.number(v.get("omega", 1.0), f"{loc}.omega", True),
            "phase": S.number(v.get("phase", 0.0), f"{loc}.phase", True),
        }
    if kind == "piecewise":
        S.obj(v, loc, ("type", "breakpoints", "values"))
        return {
            "type": kind,
            "breakpoints": [S.number(b, f"{loc}.breakpoints[{k}]", True)
                            for k, b in enumerate(S.array(v["breakpoints"], f"{loc}.breakpoints"))],
            "values": [S.number(b, f"{loc}.values[{k}]", True)
                       for k, b in enumerate(S.array(v["values"], f"{loc}.values"))],
        }
    if kind == "zero_after":
        S.obj(v, loc, ("type", "cutoff", "inner"))
        return {"type": kind, "cutoff": S.number(v["cutoff"], f"{loc}.cutoff", True),
                "inner": _canon_signal(S, v["inner"], f"{loc}.inner")}
    S.fail(f"{loc}.type", f"unknown signal type {kind!r}")


def _canon_inflow(S: _Schema, v, loc: str) -> dict:
    if not isinstance(v, dict):
        S.fail(loc, "expected an object mapping link ids to signals")
    return {S.string(k, loc): _canon_signal(S, s, f"{loc}.{k}") for k, s in v.items()}


def _canon_routing(S: _Schema, v, loc: str) -> list:
    out = []
    for k, entry in enumerate(S.array(v, loc)):
        here = f"{loc}[{k}]"
        S.obj(entry, here, ("from", "to", "fraction"))
        out.append({"from": S.string(entry["from"], f"{here}.from"),
                    "to": S.string(entry["to"], f"{here}.to"),
                    "fraction": S.number(entry["fraction"], f"{here}.fraction")})
    return out


def _canon_state(S: _Schema, v, loc: str):
    if isinstance(v, dict):
        return {S.string(k, loc): S.number(x, f"{loc}.{k}") for k, x in v.items()}
    return S.number(v, loc)


_FLOW_KEYS = {
    "saturating_exp": (("family", "links", "capacity"), "capacity"),
    "linear": (("family", "links", "rate"), "rate"),
    "node_proportional": (("family", "node", "kappa"), "kappa"),
    "phase_proportional": (("family", "node", "kappa", "phases"), "kappa"),
}


def _canon_flow(S: _Schema, v, loc: str) -> list:
    out = []
    for k, entry in enumerate(S.array(v, loc)):
        here = f"{loc}[{k}]"
        if not isinstance(entry, dict) or entry.get("family") not in _FLOW_KEYS:
            S.fail(f"{here}.family", f"family must be one of {sorted(_FLOW_KEYS)}")
        keys, param = _FLOW_KEYS[entry["family"]]
        S.obj(entry, here, keys)
        c = {"family": entry["family"]}
        if "links" in keys:
            links = entry["links"]
            c["links"] = links if links == "all" else S.strings(links, f"{here}.links")
        else:
            c["node"] = S.string(entry["node"], f"{here}.node")
        c[param] = S.number(entry[param], f"{here}.{param}", True)
        if "phases" in keys:
            c["phases"] = [S.strings(p, f"{here}.phases[{j}]")
                           for j, p in enumerate(S.array(entry["phases"], f"{here}.phases"))]
        out.append(c)
    if not out:
        S.fail(loc, "at least one flow entry is required")
    return out


def canonical_document(doc: Any, source: str | None = None) -> dict:
    """Check the shape of a scenario document and return it with defaults filled in."""
    S = _Schema(source)
    S.obj(doc, "<root>", ("schema_version", "name", "links", "flow"), _TOP_KEYS)
    if doc["schema_version"] != SCHEMA_VERSION:
        S.fail("schema_version", f"unsupported schema version {doc['schema_version']!r} "
                                 f"(expected {SCHEMA_VERSION})")
    out: dict = {"schema_version": SCHEMA_VERSION, "name": S.string(doc["name"], "name")}
    desc = doc.get("description", "")
    if not isinstance(desc, str):
        S.fail("description", "expected a string")
    out["description"] = desc
    out["notes"] = [n if isinstance(n, str) else S.fail(f"notes[{k}]", "expected a string")
                    for k, n in enumerate(S.array(doc.get("notes", []), "notes"))]
    params = doc.get("parameters", {})
    if not isinstance(params, dict):
        S.fail("parameters", "expected an object")
    for name in params:
        if not PARAMETER_NAME.match(name):
            S.fail(f"parameters.{name}", "only A, phi, kappa and lambda* may be parameters")
    out["parameters"] = {k: S.number(v, f"parameters.{k}") for k, v in params.items()}

    links = []
    for k, entry in enumerate(S.array(doc["links"], "links")):
        here = f"links[{k}]"
        S.obj(entry, here, ("id", "tail", "head"))
        links.append({key: S.string(entry[key], f"{here}.{key}") for key in ("id", "tail", "head")})
    if "nodes" in doc:
        nodes = S.strings(doc["nodes"], "nodes")
    else:
        nodes = list(dict.fromkeys(n for e in links for n in (e["tail"], e["head"])))
    out["nodes"] = nodes
    out["links"] = links

    if "commodities" in doc:
        for key in ("routing", "inflow", "initial_state"):
            if key in doc:
                S.fail(key, "multi-commodity scenarios give this per commodity")
        comms = []
        for k, c in enumerate(S.array(doc["commodities"], "commodities")):
            here = f"commodities[{k}]"
            S.obj(c, here, ("id",), ("routing", "inflow", "initial_state"))
            comms.append({
                "id": S.string(c["id"], f"{here}.id"),
                "routing": _canon_routing(S, c.get("routing", []), f"{here}.routing"),
                "inflow": _canon_inflow(S, c.get("inflow", {}), f"{here}.inflow"),
                "initial_state": _canon_state(S, c.get("initial_state", 0.0), f"{here}.initial_state"),
            })
        if not comms:
            S.fail("commodities", "at least one commodity is required")
        out["commodities"] = comms
    else:
        out["routing"] = _canon_routing(S, doc.get("routing", []), "routing")
        out["inflow"] = _canon_inflow(S, doc.get("inflow", {}), "inflow")
        out["initial_state"] = _canon_state(S, doc.get("initial_state", 0.0), "initial_state")
    out["flow"] = _canon_flow(S, doc["flow"], "flow")

    sim = S.obj(doc.get("simulation", {}), "simulation", (), _SIM_KEYS)
    defaults = SimConfig()
    canon_sim = {}
    for key in _SIM_KEYS:
        v = sim.get(key, getattr(defaults, key))
        if key == "mode":
            if v not in ("smooth", "inclusion"):
                S.fail("simulation.mode", "expected 'smooth' or 'inclusion'")
        elif key == "record_every":
            if isinstance(v, bool) or not isinstance(v, int):
                S.fail("simulation.record_every", "expected an integer")
        else:
            S.number(v, f"simulation.{key}")
        canon_sim[key] = v
    out["simulation"] = canon_sim
    # keep the conventional key order
    return {k: out[k] for k in _TOP_KEYS if k in out}


# --------------------------------------------------------------------------- build


@dataclass(eq=False)
class Scenario:
    """A validated scenario: the canonical document plus the objects it describes."""

    document: dict
    graph: FlowGraph
    field: FlowField
    x0: np.ndarray
    config: SimConfig
    routing: np.ndarray | None = None
    inflow: InflowSignal | None = None
    commodities: list[CommoditySpec] = dataclasses.field(default_factory=list)
    source: str | None = None

    @property
    def name(self) -> str:
        return self.document["name"]

    @property
    def notes(self) -> list[str]:
        return list(self.document["notes"])

    @property
    def parameters(self) -> dict:
        return dict(self.document["parameters"])

    @property
    def is_multicommodity(self) -> bool:
        return bool(self.commodities)

    @property
    def network(self) -> FlowNetwork:
        if self.routing is None:
            raise StructuralError("multi-commodity scenarios have one network per commodity")
        return FlowNetwork(self.graph, self.routing)

    def with_params(self, overrides: dict[str, float]) -> "Scenario":
        """Rebuild with some declared parameters replaced."""
        doc = json.loads(json.dumps(self.document))
        for name, value in overrides.items():
            if name not in doc["parameters"]:
                declared = ", ".join(doc["parameters"]) or "none"
                raise ScenarioValidationError(
                    f"unknown parameter {name!r} (declared: {declared})", self.source, "parameters")
            doc["parameters"][name] = value
        return build_scenario(doc, self.source)

    def with_config(self, **changes) -> "Scenario":
        """Override simulation settings; ``None`` values are ignored."""
        changes = {k: v for k, v in changes.items() if v is not None}
        try:
            config = dataclasses.replace(self.config, **changes)
        except DomainError as exc:
            raise ScenarioValidationError(str(exc), self.source, "simulation") from None
        return dataclasses.replace(self, config=config)


class _Builder:
    def __init__(self, doc: dict, source: str | None):
        self.doc = doc
        self.source = source

    def fail(self, loc: str, msg: str):
        raise ScenarioValidationError(msg, self.source, loc)

    def value(self, v, loc: str) -> float:
        if isinstance(v, str):
            name = v[1:]
            if name not in self.doc["parameters"]:
                self.fail(loc, f"undefined parameter {v!r}")
            return float(self.doc["parameters"][name])
        return float(v)

    def link(self, graph: FlowGraph, name: str, loc: str) -> int:
        if name not in graph.link_names:
            self.fail(loc, f"unknown link {name!r}")
        return graph.link_names.index(name)

    def routing(self, graph: FlowGraph, entries: list, loc: str) -> np.ndarray:
        n = graph.n_links
        R = np.zeros((n, n))
        seen = set()
        for k, e in enumerate(entries):
            here = f"{loc}[{k}]"
            i = self.link(graph, e["from"], f"{here}.from")
            j = self.link(graph, e["to"], f"{here}.to")
            if (i, j) in seen:
                self.fail(here, f"duplicate routing entry {e['from']} -> {e['to']}")
            seen.add((i, j))
            R[i, j] = e["fraction"]
        report = validate_network(graph, R)
        if not report.valid:
            self.fail(loc, f"routing matrix is invalid: {'; '.join(m for _, m in report.issues)}")
        return R

    def signal(self, spec: dict, loc: str):
        kind = spec["type"]
        v = lambda key: self.value(spec[key], f"{loc}.{key}")  # noqa: E731
        if kind == "constant":
            return Constant(v("value"))
        if kind == "sinusoid":
            return Sinusoid(v("amplitude"), v("omega"), v("phase"))
        if kind == "piecewise":
            return PiecewiseConstant(
                tuple(self.value(b, f"{loc}.breakpoints[{k}]") for k, b in enumerate(spec["breakpoints"])),
                tuple(self.value(b, f"{loc}.values[{k}]") for k, b in enumerate(spec["values"])),
            )
        return ZeroAfter(self.signal(spec["inner"], f"{loc}.inner"), v("cutoff"))

    def inflow(self, graph: FlowGraph, spec: dict, loc: str) -> InflowSignal:
        signals: list = [None] * graph.n_links
        for name, s in spec.items():
            here = f"{loc}.{name}"
            i = self.link(graph, name, here)
            try:
                signals[i] = self.signal(s, here)
            except (DomainError, StructuralError) as exc:
                self.fail(here, str(exc))
        return InflowSignal(signals)

    def state(self, graph: FlowGraph, spec, loc: str) -> np.ndarray:
        if isinstance(spec, dict):
            x = np.zeros(graph.n_links)
            for name, v in spec.items():
                x[self.link(graph, name, f"{loc}.{name}")] = v
        else:
            x = np.full(graph.n_links, float(spec))
        if np.any(x < 0):
            self.fail(loc, "initial state must be nonnegative")
        return x

    def field(self, graph: FlowGraph, entries: list, loc: str) -> FlowField:
        fams: list = [None] * graph.n_links
        for k, e in enumerate(entries):
            here = f"{loc}[{k}]"
            try:
                if "node" in e:
                    if e["node"] not in graph.nodes:
                        self.fail(f"{here}.node", f"unknown node {e['node']!r}")
                    targets = graph.incoming(graph.nodes.index(e["node"]))
                    kappa = self.value(e["kappa"], f"{here}.kappa")
                    if e["family"] == "node_proportional":
                        fam = NodeProportional(kappa)
                    else:
                        phases = tuple(
                            tuple(self.link(graph, name, f"{here}.phases[{j}]") for name in p)
                            for j, p in enumerate(e["phases"])
                        )
                        fam = PhaseProportional(kappa, phases)
                else:
                    if e["links"] == "all":
                        targets = range(graph.n_links)
                    else:
                        targets = [self.link(graph, name, f"{here}.links") for name in e["links"]]
                    if e["family"] == "saturating_exp":
                        fam = SaturatingExp(self.value(e["capacity"], f"{here}.capacity"))
                    else:
                        fam = Linear(self.value(e["rate"], f"{here}.rate"))
            except DomainError as exc:
                self.fail(here, str(exc))
            for i in targets:
                if fams[i] is not None:
                    self.fail(here, f"link {graph.link_names[i]} already has a flow family")
                fams[i] = fam
        missing = [graph.link_names[i] for i, f in enumerate(fams) if f is None]
        if missing:
            self.fail(loc, f"no flow family for {', '.join(missing)}")
        try:
            return FlowField(graph, tuple(fams))
        except (StructuralError, DomainError) as exc:
            self.fail(loc, str(exc))

    def build(self) -> Scenario:
        doc = self.doc
        links = doc["links"]
        for k, n in enumerate(n for e in links for n in (e["tail"], e["head"])):
            if n not in doc["nodes"]:
                self.fail(f"links[{k // 2}]", f"unknown node {n!r}")
        try:
            graph = FlowGraph.from_edges([(e["tail"], e["head"]) for e in links],
                                         [e["id"] for e in links], doc["nodes"])
        except StructuralError as exc:
            self.fail("links", str(exc))
        fld = self.field(graph, doc["flow"], "flow")
        sim = doc["simulation"]
        try:
            config = SimConfig(dt=float(sim["dt"]), horizon=float(sim["horizon"]),
                               mode=sim["mode"], record_every=sim["record_every"])
        except DomainError as exc:
            self.fail("simulation", str(exc))
        if "commodities" in doc:
            specs, states = [], []
            for k, c in enumerate(doc["commodities"]):
                here = f"commodities[{k}]"
                R = self.routing(graph, c["routing"], f"{here}.routing")
                specs.append(CommoditySpec(c["id"], R, self.inflow(graph, c["inflow"], f"{here}.inflow")))
                states.append(self.state(graph, c["initial_state"], f"{here}.initial_state"))
            if len({c["id"] for c in doc["commodities"]}) != len(specs):
                self.fail("commodities", "commodity ids must be unique")
            if not fld.bounded:
                self.fail("flow", "multi-commodity scenarios need bounded flow families")
            return Scenario(doc, graph, fld, np.stack(states), config, commodities=specs,
                            source=self.source)
        R = self.routing(graph, doc["routing"], "routing")
        return Scenario(doc, graph, fld, self.state(graph, doc["initial_state"], "initial_state"),
                        config, routing=R, inflow=self.inflow(graph, doc["inflow"], "inflow"),
                        source=self.source)


def build_scenario(doc: Any, source: str | None = None) -> Scenario:
    """Schema-check, canonicalize and build a scenario from a parsed document."""
    return _Builder(canonical_document(doc, source), source).build()


def _reject_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ValueError(f"duplicate key {k!r}")
        out[k] = v
    return out


def parse_scenario(text: str, source: str | None = None) -> Scenario:
    try:
        doc = json.loads(text, object_pairs_hook=_reject_duplicates)
    except json.JSONDecodeError as exc:
        err = ScenarioParseError(exc.msg, source, f"line {exc.lineno}, column {exc.colno}")
        err.line, err.column = exc.lineno, exc.colno
        raise err from None
    except ValueError as exc:
        raise ScenarioParseError(str(exc), source) from None
    return build_scenario(doc, source)


def load_scenario(path) -> Scenario:
    path = Path(path)
    return parse_scenario(path.read_text(encoding="utf-8"), str(path))


def dumps_scenario(scenario: Scenario | dict) -> str:
    doc = scenario.document if isinstance(scenario, Scenario) else canonical_document(scenario)
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def save_scenario(scenario: Scenario | dict, path) -> None:
    Path(path).write_text(dumps_scenario(scenario), encoding="utf-8")


def bundled_scenarios() -> list[str]:
    root = resources.files("flowstab") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def bundled_path(name: str) -> Path:
    if name not in bundled_scenarios():
        raise ScenarioError(f"no bundled scenario named {name!r} "
                            f"(available: {', '.join(bundled_scenarios())})")
    return Path(str(resources.files("flowstab") / "scenarios" / f"{name}.json"))


def load_bundled(name: str) -> Scenario:
    return load_scenario(bundled_path(name))


# --------------------------------------------------------------------------- trajectories


class TrajectoryTable(NamedTuple):
    t: np.ndarray
    x: np.ndarray
    z: np.ndarray
    V_uniform: np.ndarray
    V_capacity: np.ndarray


def trajectory_header(n: int) -> list[str]:
    return ["t", *(f"x_{i}" for i in range(1, n + 1)), *(f"z_{i}" for i in range(1, n + 1)),
            "V_uniform", "V_capacity"]


def _write_rows(path, header: list[str], columns: Iterable[np.ndarray]) -> None:
    data = np.column_stack(list(columns))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        # repr gives the shortest decimal that reads back to the same double
        w.writerows([repr(float(v)) for v in row] for row in data)


def _read_rows(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty trajectory file")
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    return rows[0], data.reshape(len(rows) - 1, len(rows[0]))


def write_trajectory(traj: Trajectory, path) -> None:
    """CSV with columns t, x_1..x_n, z_1..z_n, V_uniform, V_capacity."""
    n = traj.x.shape[1]
    _write_rows(path, trajectory_header(n),
                [traj.t, traj.x, traj.z, traj.V_uniform, traj.V_capacity])


def read_trajectory(path) -> TrajectoryTable:
    header, data = _read_rows(path)
    n = (len(header) - 3) // 2
    if header != trajectory_header(n):
        raise ValueError(f"{path}: unexpected trajectory columns")
    return TrajectoryTable(data[:, 0], data[:, 1:1 + n], data[:, 1 + n:1 + 2 * n],
                           data[:, -2], data[:, -1])


def mc_trajectory_header(names: Sequence[str], n: int) -> list[str]:
    xs = [f"x_{k}_{i}" for k in names for i in range(1, n + 1)]
    zs = [f"z_{k}_{i}" for k in names for i in range(1, n + 1)]
    return ["t", *xs, *zs, "V"]


def write_mc_trajectory(traj: MCTrajectory, path) -> None:
    """CSV with t, x_<commodity>_<link>..., z_<commodity>_<link>..., V."""
    S, K, n = traj.x.shape
    _write_rows(path, mc_trajectory_header(traj.names, n),
                [traj.t, traj.x.reshape(S, K * n), traj.z.reshape(S, K * n), traj.V])


def read_mc_trajectory(path) -> MCTrajectory:
    header, data = _read_rows(path)
    names = list(dict.fromkeys(h.split("_")[1] for h in header if h.startswith("x_")))
    K = len(names)
    n = (len(header) - 2) // (2 * K)
    if header != mc_trajectory_header(names, n):
        raise ValueError(f"{path}: unexpected trajectory columns")
    S = data.shape[0]
    return MCTrajectory(data[:, 0], data[:, 1:1 + K * n].reshape(S, K, n),
                        data[:, 1 + K * n:1 + 2 * K * n].reshape(S, K, n), tuple(names), data[:, -1])


# --------------------------------------------------------------------------- reports


def _fmt(v) -> str:
    if v is None:
        return "n/a"
    return f"{v:.12g}"


def report_payload(reports: Sequence[CertificateReport], *, scenario: str | None = None,
                   timestamp: str | None = None, extra: dict | None = None) -> dict:
    payload: dict = {"report_version": REPORT_VERSION}
    if scenario is not None:
        payload["scenario"] = scenario
    if timestamp is not None:
        payload["generated_at"] = timestamp
    payload["overall"] = overall_verdict(reports).value if reports else None
    payload["certificates"] = [r.to_dict() for r in reports]
    if extra:
        payload.update(extra)
    return payload


def render_report(reports: Sequence[CertificateReport] | CertificateReport, format: str = "text", *,
                  scenario: str | None = None, timestamp: str | None = None,
                  extra: dict | None = None) -> str:
    """Deterministic text or JSON rendering of certificate reports."""
    if isinstance(reports, CertificateReport):
        reports = [reports]
    payload = report_payload(reports, scenario=scenario, timestamp=timestamp, extra=extra)
    if format == "structured":
        return json.dumps(payload, indent=2, sort_keys=True, allow_nan=False, default=_json_default) + "\n"
    if format != "text":
        raise ValueError(f"unknown report format {format!r}")
    lines = []
    if scenario is not None:
        lines.append(f"scenario: {scenario}")
    if timestamp is not None:
        lines.append(f"generated: {timestamp}")
    if payload["overall"] is not None:
        lines.append(f"overall: {payload['overall']}")
    for r in reports:
        lines.append(f"[{r.condition}] {r.verdict.value}")
        lines.append(f"  lhs    {_fmt(r.lhs)}" + (f"  ({r.lhs_method})" if r.lhs_method else ""))
        lines.append(f"  rhs    {_fmt(r.rhs)}" + (f"  ({r.rhs_provenance})" if r.rhs_provenance else ""))
        lines.append(f"  margin {_fmt(r.margin)}")
        lines.extend(f"  note: {n}" for n in r.notes)
    for key, value in (extra or {}).items():
        lines.extend(_text_lines(key, value, ""))
    return "\n".join(lines) + "\n"


def _text_lines(key: str, value, indent: str) -> list[str]:
    if isinstance(value, dict):
        out = [f"{indent}{key}:"]
        for k in sorted(value):
            out.extend(_text_lines(k, value[k], indent + "  "))
        return out
    if isinstance(value, list) and value and all(isinstance(v, dict) for v in value):
        out = [f"{indent}{key}:"]
        for v in value:
            out.append(f"{indent}  - " + ", ".join(
                f"{k}={json.dumps(v[k], default=_json_default)}" for k in sorted(v)))
        return out
    if isinstance(value, float):
        return [f"{indent}{key}: {_fmt(value)}"]
    if isinstance(value, str):
        return [f"{indent}{key}: {value}"]
    return [f"{indent}{key}: {json.dumps(value, default=_json_default)}"]


def _json_default(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialize {type(v).__name__}")


def write_report(reports: Sequence[CertificateReport] | CertificateReport, path, format: str = "text",
                 **kwargs) -> None:
    Path(path).write_text(render_report(reports, format, **kwargs), encoding="utf-8")
