"""System graphs: parsing, validation and assembly into detailed models.

A graph document is TOML::

    format_version = 1
    name = "minimal"

    [[components]]
    id = "ej"
    kind = "ejector"
    s_max = 2e-3       # m^3/s
    pv_max = 750.0     # mbar,rel

    [[components]]
    id = "s1"
    kind = "sensor"

    [connections]
    links = [["ej.vac", "s1.port"]]

    [io]
    inputs = [{ name = "suction", port = "ej.suction", values = [0, 24] }]
    outputs = [{ name = "vacuum", port = "s1.vacuum" }]

Each entry of ``links`` joins two or more pneumatic ports into one pressure
node.  The full schema is in ``docs/graph_format.md``.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import AssemblyError, DomainError, GraphParseError, GraphValidationError
from .pneumo import (
    P_ATM,
    PA_PER_MBAR,
    AIR_VISCOSITY,
    EjectorParams,
    HoseParams,
    PneumaticNetwork,
    Signal,
    SignalKind,
    ThresholdConfig,
    threshold_outputs,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

FORMAT_VERSION = 1


@dataclass(frozen=True)
class KindSpec:
    pneumatic: tuple[str, ...]
    required: tuple[str, ...] = ()
    optional: dict = field(default_factory=dict)
    signal_in: tuple[str, ...] = ()
    signal_out: tuple[str, ...] = ()


KINDS: dict[str, KindSpec] = {
    "ejector": KindSpec(
        pneumatic=("vac",),
        required=("s_max", "pv_max"),
        optional={"blow_flow": 2.0e-3, "blow_overpressure": -12.0, "has_check_valve": True,
                  "volume": 1.0e-5, "h2": 550.0, "h3": 500.0, "h4": 600.0, "h5": 750.0},
        signal_in=("suction", "blow_off"),
        signal_out=("vacuum", "H2", "pdi"),
    ),
    "hose": KindSpec(
        pneumatic=("a", "b"),
        required=("length", "inner_diameter"),
        optional={"segments": 8, "viscosity": AIR_VISCOSITY},
    ),
    "reservoir": KindSpec(pneumatic=("port",), required=("volume",)),
    "suction_cup": KindSpec(pneumatic=("port",), optional={"volume": 1.5e-5, "leak": 0.0}),
    "distributor": KindSpec(pneumatic=("port",), optional={"volume": 5.0e-6}),
    "sensor": KindSpec(
        pneumatic=("port",),
        optional={"volume": 1.0e-6, "h2": 550.0, "h3": 500.0, "h4": 600.0, "h5": 750.0},
        signal_out=("vacuum", "H2", "pdi"),
    ),
}

OUTPUT_KINDS = {"vacuum": SignalKind.CONTINUOUS, "H2": SignalKind.DISCRETE, "pdi": SignalKind.DISCRETE}
OUTPUT_UNITS = {"vacuum": "mbar,rel", "H2": "V", "pdi": "byte"}
DEFAULT_INPUT_VALUES = (0.0, 24.0)


@dataclass
class Component:
    id: str
    kind: str
    params: dict = field(default_factory=dict)

    def param(self, name):
        if name in self.params:
            return self.params[name]
        return KINDS[self.kind].optional[name]


@dataclass
class Binding:
    name: str
    component: str
    port: str
    values: tuple[float, ...] | None = None

    @property
    def endpoint(self) -> str:
        return f"{self.component}.{self.port}"


@dataclass
class SystemGraph:
    components: list[Component]
    connections: list[tuple[tuple[str, str], ...]]
    inputs: list[Binding]
    outputs: list[Binding]
    name: str = ""
    format_version: int = FORMAT_VERSION

    def component(self, cid: str) -> Component:
        for c in self.components:
            if c.id == cid:
                return c
        raise KeyError(cid)


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    subject: str = ""


def _split_endpoint(text: str, where: str) -> tuple[str, str]:
    if not isinstance(text, str) or text.count(".") != 1:
        raise GraphParseError(f"{where}: endpoint {text!r} must look like 'component.port'")
    cid, port = text.split(".")
    return cid, port


_LOC = re.compile(r"\(at line (\d+), column (\d+)\)")


def parse_graph(document: str) -> SystemGraph:
    """Read a graph document.  Reference checks are left to :func:`validate_graph`."""
    try:
        doc = tomllib.loads(document)
    except tomllib.TOMLDecodeError as exc:
        m = _LOC.search(str(exc))
        msg = _LOC.sub("", str(exc)).strip()
        if m:
            raise GraphParseError(f"syntax error: {msg}", int(m.group(1)), int(m.group(2))) from None
        raise GraphParseError(f"syntax error: {msg}") from None

    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise GraphParseError(f"unsupported format_version {version!r} (expected {FORMAT_VERSION})")

    components = []
    for k, entry in enumerate(doc.get("components", [])):
        where = f"components[{k}]"
        if "id" not in entry:
            raise GraphParseError(f"{where}: missing required field 'id'")
        cid = str(entry["id"])
        kind = entry.get("kind")
        if kind not in KINDS:
            raise GraphParseError(f"component {cid!r}: unknown kind {kind!r}")
        spec = KINDS[kind]
        params = {key: val for key, val in entry.items() if key not in ("id", "kind")}
        for req in spec.required:
            if req not in params:
                raise GraphParseError(f"component {cid!r} ({kind}): missing required parameter {req!r}")
        for key in params:
            if key not in spec.required and key not in spec.optional:
                raise GraphParseError(f"component {cid!r} ({kind}): unknown parameter {key!r}")
        components.append(Component(cid, kind, params))

    connections = []
    for k, link in enumerate(doc.get("connections", {}).get("links", [])):
        where = f"connections.links[{k}]"
        if not isinstance(link, list):
            raise GraphParseError(f"{where}: expected a list of endpoints")
        connections.append(tuple(_split_endpoint(e, where) for e in link))

    io = doc.get("io", {})
    inputs, outputs = [], []
    for key, target in (("inputs", inputs), ("outputs", outputs)):
        for k, entry in enumerate(io.get(key, [])):
            where = f"io.{key}[{k}]"
            if "name" not in entry or "port" not in entry:
                raise GraphParseError(f"{where}: needs 'name' and 'port'")
            cid, port = _split_endpoint(entry["port"], where)
            values = entry.get("values")
            if values is not None:
                values = tuple(float(v) for v in values)
            target.append(Binding(str(entry["name"]), cid, port, values))

    return SystemGraph(components, connections, inputs, outputs,
                       name=str(doc.get("name", "")), format_version=version)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if not math.isfinite(v):
            raise ValueError(f"cannot encode {v} in a graph document")
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"unsupported value {v!r}")


def write_graph(g: SystemGraph) -> str:
    """Serialise a graph back to its document form (inverse of :func:`parse_graph`)."""
    lines = [f"format_version = {g.format_version}", f"name = {_toml_value(g.name)}", ""]
    for c in g.components:
        lines.append("[[components]]")
        lines.append(f"id = {_toml_value(c.id)}")
        lines.append(f"kind = {_toml_value(c.kind)}")
        for key, val in c.params.items():
            lines.append(f"{key} = {_toml_value(val)}")
        lines.append("")
    lines.append("[connections]")
    lines.append("links = [")
    for link in g.connections:
        lines.append("  " + _toml_value([f"{cid}.{port}" for cid, port in link]) + ",")
    lines.append("]")
    lines.append("")
    lines.append("[io]")
    for key, bindings in (("inputs", g.inputs), ("outputs", g.outputs)):
        lines.append(f"{key} = [")
        for b in bindings:
            extra = f", values = {_toml_value(list(b.values))}" if b.values is not None else ""
            lines.append(f"  {{ name = {_toml_value(b.name)}, port = {_toml_value(b.endpoint)}{extra} }},")
        lines.append("]")
    return "\n".join(lines) + "\n"


def validate_graph(g: SystemGraph) -> list[Violation]:
    out: list[Violation] = []
    by_id: dict[str, Component] = {}
    for c in g.components:
        if c.id in by_id:
            out.append(Violation("DUPLICATE_ID", f"component id {c.id!r} is used more than once", c.id))
        else:
            by_id[c.id] = c
        if c.kind not in KINDS:
            out.append(Violation("UNKNOWN_KIND", f"component {c.id!r} has unknown kind {c.kind!r}", c.id))
            continue
        spec = KINDS[c.kind]
        for req in spec.required:
            if req not in c.params:
                out.append(Violation("MISSING_PARAMETER", f"component {c.id!r} lacks parameter {req!r}", c.id))

    parent = {cid: cid for cid in by_id}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    seen_ports: set[tuple[str, str]] = set()
    for k, link in enumerate(g.connections):
        if len(link) < 2:
            out.append(Violation("EMPTY_CONNECTION", f"connection {k} joins fewer than two ports", str(k)))
        valid = []
        for cid, port in link:
            c = by_id.get(cid)
            if c is None:
                out.append(Violation("UNKNOWN_COMPONENT", f"connection {k} references undefined component {cid!r}", cid))
                continue
            if c.kind in KINDS and port not in KINDS[c.kind].pneumatic:
                out.append(Violation("UNKNOWN_PORT", f"component {cid!r} has no pneumatic port {port!r}", f"{cid}.{port}"))
                continue
            if (cid, port) in seen_ports and c.kind != "distributor":
                out.append(Violation("PORT_REUSED", f"port {cid}.{port} appears in more than one connection", f"{cid}.{port}"))
            seen_ports.add((cid, port))
            valid.append(cid)
        for a, b in zip(valid, valid[1:]):
            parent[find(a)] = find(b)

    generators = [c.id for c in by_id.values() if c.kind == "ejector"]
    if not generators:
        out.append(Violation("NO_GENERATOR", "the network has no vacuum generator"))
    elif len(generators) > 1:
        out.append(Violation("MULTIPLE_GENERATORS", f"more than one vacuum generator: {generators}"))
    if generators:
        root = find(generators[0])
        for cid in by_id:
            if find(cid) != root:
                out.append(Violation("DISCONNECTED_NODE", f"component {cid!r} is not connected to the vacuum generator", cid))

    names = set()
    for direction, bindings, attr in (("input", g.inputs, "signal_in"), ("output", g.outputs, "signal_out")):
        for b in bindings:
            if b.name in names:
                out.append(Violation("DUPLICATE_SIGNAL", f"signal name {b.name!r} is bound twice", b.name))
            names.add(b.name)
            c = by_id.get(b.component)
            if c is None:
                out.append(Violation("UNKNOWN_COMPONENT", f"{direction} {b.name!r} references undefined component {b.component!r}", b.component))
            elif c.kind in KINDS and b.port not in getattr(KINDS[c.kind], attr):
                out.append(Violation("UNKNOWN_SIGNAL_PORT", f"{direction} {b.name!r}: {c.kind} {c.id!r} has no {direction} port {b.port!r}", b.endpoint))
            if b.values is not None and len(b.values) == 0:
                out.append(Violation("EMPTY_ALPHABET", f"input {b.name!r} has an empty value list", b.name))
    return out


@dataclass(frozen=True)
class Probe:
    node: int
    channel: str
    thresholds: ThresholdConfig


class DetailedModel:
    """Executable MDT 4 model assembled from a system graph.

    The explorer treats it as a black box: ``reset``, ``step`` and
    ``read_outputs`` are all it needs.  ``snapshot``/``restore`` let callers
    skip replaying input history.
    """

    def __init__(self, network: PneumaticNetwork, inputs, input_values, outputs, probes,
                 suction_index, blow_index, dt=1e-3, name="", component_volume=None):
        self.network = network
        self.inputs = tuple(inputs)
        self.input_values = tuple(tuple(v) for v in input_values)
        self.outputs = tuple(outputs)
        self.probes = tuple(probes)
        self.suction_index = suction_index
        self.blow_index = blow_index
        self.dt = float(dt)
        self.name = name
        self.component_volume = component_volume
        self.reset()

    @property
    def total_volume(self) -> float:
        return self.network.total_volume

    @property
    def layout(self) -> list[str]:
        return list(self.network.node_names)

    def reset(self) -> None:
        self.state = self.network.initial_state()
        self.time = 0.0

    def snapshot(self):
        return (self.state.copy(), self.time)

    def restore(self, snap) -> None:
        self.state = snap[0].copy()
        self.time = snap[1]

    def outputs_of(self, state) -> np.ndarray:
        out = np.empty(len(self.probes))
        for i, pr in enumerate(self.probes):
            vac = (P_ATM - state[pr.node]) / PA_PER_MBAR
            if pr.channel == "vacuum":
                out[i] = vac
            else:
                h2, byte = threshold_outputs(vac, pr.thresholds)
                out[i] = h2 if pr.channel == "H2" else byte
        return out

    def read_outputs(self) -> np.ndarray:
        return self.outputs_of(self.state)

    def _drives(self, u):
        if len(u) != len(self.inputs):
            raise ValueError(f"expected {len(self.inputs)} inputs, got {len(u)}")
        suction = u[self.suction_index] if self.suction_index is not None else 0.0
        blow = u[self.blow_index] if self.blow_index is not None else 0.0
        return suction, blow

    def advance(self, state, u, dt=None):
        """Pure step: returns ``(new_state, outputs)`` without touching ``self.state``."""
        suction, blow = self._drives(u)
        new = self.network.advance(state, suction, blow, self.dt if dt is None else dt)
        return new, self.outputs_of(new)

    def step(self, u, dt=None) -> np.ndarray:
        dt = self.dt if dt is None else dt
        suction, blow = self._drives(u)
        try:
            self.state = self.network.advance(self.state, suction, blow, dt)
        except Exception as exc:
            if hasattr(exc, "time"):
                exc.time = self.time + dt
            raise
        self.time += dt
        return self.outputs_of(self.state)


def _union_find(items):
    parent = {x: x for x in items}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a, b):
        parent[find(a)] = find(b)

    return find, union


def _positive(c: Component, name: str) -> float:
    v = c.param(name)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
        raise AssemblyError(f"component {c.id!r}: parameter {name}={v!r} must be a positive number")
    return float(v)


def assemble(g: SystemGraph, dt: float = 1e-3) -> DetailedModel:
    """Link the component models into one executable network."""
    problems = validate_graph(g)
    if problems:
        raise GraphValidationError(problems)

    endpoints = [(c.id, p) for c in g.components for p in KINDS[c.kind].pneumatic]
    find, union = _union_find(endpoints)
    for link in g.connections:
        for a, b in zip(link, link[1:]):
            union(a, b)

    net_index: dict[tuple[str, str], int] = {}
    members: dict[int, list[str]] = {}
    names: list[str] = []
    for ep in endpoints:
        root = find(ep)
        if root not in net_index:
            net_index[root] = len(names)
            names.append("")
            members[net_index[root]] = []
        members[net_index[root]].append(f"{ep[0]}.{ep[1]}")
    for i, m in members.items():
        names[i] = "|".join(sorted(m))

    def node_of(cid, port):
        return net_index[find((cid, port))]

    volumes = [0.0] * len(names)
    leaks = [0.0] * len(names)
    edges = []
    component_volume = 0.0
    ejector = None
    ejector_node = None
    sensor_cfg: dict[str, tuple[int, ThresholdConfig]] = {}

    try:
        for c in g.components:
            if c.kind == "hose":
                segs = c.param("segments")
                if isinstance(segs, bool) or int(segs) != segs or segs < 1:
                    raise AssemblyError(f"hose {c.id!r}: segments must be a positive integer, got {segs!r}")
                hp = HoseParams(_positive(c, "length"), _positive(c, "inner_diameter"), int(segs),
                                _positive(c, "viscosity"))
                n = hp.segments
                v_seg = hp.volume / n
                r_seg = hp.resistance / n
                chain = [node_of(c.id, "a")]
                for k in range(1, n):
                    names.append(f"{c.id}[{k}]")
                    volumes.append(v_seg)
                    leaks.append(0.0)
                    chain.append(len(names) - 1)
                chain.append(node_of(c.id, "b"))
                volumes[chain[0]] += v_seg / 2
                volumes[chain[-1]] += v_seg / 2
                for i, j in zip(chain, chain[1:]):
                    if i != j:
                        edges.append((i, j, r_seg))
                component_volume += hp.volume
                continue

            port = KINDS[c.kind].pneumatic[0]
            node = node_of(c.id, port)
            vol = _positive(c, "volume")
            volumes[node] += vol
            component_volume += vol
            if c.kind == "suction_cup":
                leak = c.param("leak")
                if not isinstance(leak, (int, float)) or leak < 0:
                    raise AssemblyError(f"suction cup {c.id!r}: leak must be >= 0, got {leak!r}")
                leaks[node] += float(leak)
            elif c.kind == "ejector":
                ejector = EjectorParams(
                    s_max=_positive(c, "s_max"),
                    pv_max=_positive(c, "pv_max"),
                    blow_flow=float(c.param("blow_flow")),
                    blow_overpressure=float(c.param("blow_overpressure")),
                    has_check_valve=bool(c.param("has_check_valve")),
                )
                ejector_node = node
            if c.kind in ("ejector", "sensor"):
                cfg = ThresholdConfig(*(float(c.param(h)) for h in ("h2", "h3", "h4", "h5")))
                sensor_cfg[c.id] = (node, cfg)
        network = PneumaticNetwork(names, volumes, edges, ejector_node, ejector, leaks)
    except DomainError as exc:
        raise AssemblyError(str(exc)) from exc

    inputs, input_values = [], []
    suction_index = blow_index = None
    for i, b in enumerate(g.inputs):
        inputs.append(Signal(b.name, SignalKind.DISCRETE, "V"))
        input_values.append(b.values if b.values is not None else DEFAULT_INPUT_VALUES)
        if b.port == "suction":
            suction_index = i
        elif b.port == "blow_off":
            blow_index = i

    outputs, probes = [], []
    for b in g.outputs:
        node, cfg = sensor_cfg[b.component]
        outputs.append(Signal(b.name, OUTPUT_KINDS[b.port], OUTPUT_UNITS[b.port]))
        probes.append(Probe(node, b.port, cfg))

    model = DetailedModel(network, inputs, input_values, outputs, probes, suction_index, blow_index,
                          dt=dt, name=g.name, component_volume=component_volume)
    model.source_hash = document_hash(write_graph(g))
    return model


def load_graph(path) -> SystemGraph:
    with open(path, encoding="utf-8") as fh:
        return parse_graph(fh.read())


def document_hash(document: str) -> str:
    return hashlib.sha256(document.encode("utf-8")).hexdigest()
