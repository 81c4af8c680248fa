"""Serialisation of discovery results, machines, traces and MDT 4 bundles.

Documents are compact JSON.  Floats are written as shortest round-trip
decimal strings, so ``load(save(x)) == x`` holds bit for bit.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import jsonschema
import numpy as np

from .errors import SchemaError, TraceFormatError, VersionMismatch
from .explorer import DiscoveryResult, ExplorationConfig, StateRecord, TransitionRecord
from .graph import KINDS, assemble, document_hash, parse_graph
from .machine import AbstractMachine, MachineState, MachineTransition, MdtLevel
from .pneumo import Signal, SignalKind
from .trace import Trace

FORMAT_VERSION = 1

_NUM = {"type": "number"}
_VEC = {"type": "array", "items": _NUM}
_SIGNAL = {
    "type": "object",
    "required": ["name", "kind"],
    "properties": {
        "name": {"type": "string"},
        "kind": {"enum": [k.value for k in SignalKind]},
        "unit": {"type": "string"},
        "values": _VEC,
    },
}

MACHINE_SCHEMA = {
    "type": "object",
    "required": ["format_version", "type", "level", "inputs", "outputs", "cycle", "initial", "states", "transitions"],
    "properties": {
        "format_version": {"type": "integer"},
        "type": {"const": "machine"},
        "level": {"enum": [1, 2, 3]},
        "inputs": {"type": "array", "items": {**_SIGNAL, "required": ["name", "kind", "values"]}},
        "outputs": {"type": "array", "items": _SIGNAL},
        "cycle": {"type": "number", "exclusiveMinimum": 0},
        "initial": {
            "type": "object",
            "required": ["state", "inputs"],
            "properties": {"state": {"type": "integer"}, "inputs": _VEC},
        },
        "states": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "outputs"],
                "properties": {"id": {"type": "integer"}, "outputs": _VEC},
            },
        },
        "transitions": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["source", "guard", "target"],
                "properties": {
                    "source": {"type": "integer"},
                    "guard": _VEC,
                    "target": {"type": "integer"},
                    "delays_ms": _VEC,
                    "trajectories": {"type": "array", "items": _VEC},
                },
            },
        },
        "provenance": {"type": "object"},
    },
}

DISCOVERY_SCHEMA = {
    "type": "object",
    "required": ["format_version", "type", "inputs", "outputs", "config", "states", "transitions"],
    "properties": {
        "format_version": {"type": "integer"},
        "type": {"const": "discovery"},
        "inputs": {"type": "array", "items": _SIGNAL},
        "outputs": {"type": "array", "items": _SIGNAL},
        "config": {
            "type": "object",
            "required": ["values", "settle_time", "sample_cycle", "stability_window", "tolerance", "max_states"],
        },
        "states": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "stable_outputs", "reach_sequence"],
                "properties": {
                    "id": {"type": "integer"},
                    "stable_outputs": _VEC,
                    "reach_sequence": {"type": "array", "items": _VEC},
                },
            },
        },
        "transitions": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["start", "inputs", "target", "settle_ms", "trajectories"],
                "properties": {
                    "start": {"type": "integer"},
                    "inputs": _VEC,
                    "target": {"type": "integer"},
                    "settle_ms": _VEC,
                    "trajectories": {"type": "array", "items": _VEC},
                },
            },
        },
        "source": {"type": "object"},
    },
}

BUNDLE_SCHEMA = {
    "type": "object",
    "required": ["format_version", "type", "graph_document", "parameters", "solver", "state_layout"],
    "properties": {
        "format_version": {"type": "integer"},
        "type": {"const": "mdt4-bundle"},
        "graph_document": {"type": "string"},
        "parameters": {"type": "object"},
        "solver": {"type": "object", "required": ["method", "dt"]},
        "state_layout": {"type": "array"},
        "library": {"type": "object", "additionalProperties": {"type": "string"}},
    },
}


def _dumps(doc) -> bytes:
    return json.dumps(doc, separators=(",", ":"), allow_nan=False).encode("utf-8")


def _loads(data, schema, kind: str) -> dict:
    if isinstance(data, (bytes, bytearray)):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SchemaError("", f"not UTF-8 text: {exc}") from None
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise SchemaError("", f"malformed JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaError("", "document must be a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"unsupported {kind} format_version {version!r} (expected {FORMAT_VERSION})")
    errors = sorted(jsonschema.Draft202012Validator(schema).iter_errors(doc), key=lambda e: list(e.path))
    if errors:
        err = errors[0]
        path = "".join(f"/{p}" for p in err.absolute_path)
        raise SchemaError(path, err.message)
    return doc


def _signal_doc(s: Signal, values=None) -> dict:
    d = {"name": s.name, "kind": s.kind.value}
    if s.unit:
        d["unit"] = s.unit
    if values is not None:
        d["values"] = list(values)
    return d


def _signal(d) -> Signal:
    return Signal(d["name"], SignalKind(d["kind"]), d.get("unit", ""))


def _floats(v) -> tuple[float, ...]:
    return tuple(float(x) for x in v)


# -- machines ---------------------------------------------------------------

def machine_to_dict(m: AbstractMachine) -> dict:
    transitions = []
    for t in m.transitions:
        entry = {"source": t.source, "guard": list(t.guard), "target": t.target}
        if m.level >= MdtLevel.MDT2:
            entry["delays_ms"] = list(t.delays_ms)
        if m.level is MdtLevel.MDT3:
            entry["trajectories"] = [list(x) for x in t.trajectories]
        transitions.append(entry)
    return {
        "format_version": FORMAT_VERSION,
        "type": "machine",
        "level": int(m.level),
        "inputs": [_signal_doc(s, v) for s, v in zip(m.inputs, m.alphabet)],
        "outputs": [_signal_doc(s) for s in m.outputs],
        "cycle": m.cycle,
        "initial": {"state": m.initial_state, "inputs": list(m.initial_inputs)},
        "states": [{"id": s.number, "outputs": list(s.outputs)} for s in m.states],
        "transitions": transitions,
        "provenance": m.provenance,
    }


def save_machine(m: AbstractMachine) -> bytes:
    return _dumps(machine_to_dict(m))


def load_machine(data) -> AbstractMachine:
    doc = _loads(data, MACHINE_SCHEMA, "machine")
    level = MdtLevel(doc["level"])
    transitions = []
    for k, t in enumerate(doc["transitions"]):
        delays = _floats(t.get("delays_ms", ()))
        trajs = tuple(_floats(x) for x in t.get("trajectories", ()))
        if level >= MdtLevel.MDT2 and "delays_ms" not in t:
            raise SchemaError(f"/transitions/{k}", "'delays_ms' is required at this level")
        if level is MdtLevel.MDT3 and "trajectories" not in t:
            raise SchemaError(f"/transitions/{k}", "'trajectories' is required at MDT 3")
        transitions.append(MachineTransition(t["source"], _floats(t["guard"]), t["target"], delays, trajs))
    m = AbstractMachine(
        level=level,
        inputs=tuple(_signal(s) for s in doc["inputs"]),
        outputs=tuple(_signal(s) for s in doc["outputs"]),
        alphabet=tuple(_floats(s["values"]) for s in doc["inputs"]),
        states=tuple(MachineState(s["id"], _floats(s["outputs"])) for s in doc["states"]),
        initial_state=doc["initial"]["state"],
        initial_inputs=_floats(doc["initial"]["inputs"]),
        transitions=tuple(transitions),
        cycle=float(doc["cycle"]),
        provenance=doc.get("provenance", {}),
    )
    problems = m.check()
    if problems:
        raise SchemaError("/transitions", "; ".join(problems))
    return m


# -- discovery results --------------------------------------------------------

def save_discovery(d: DiscoveryResult) -> bytes:
    doc = {
        "format_version": FORMAT_VERSION,
        "type": "discovery",
        "inputs": [_signal_doc(s) for s in d.inputs],
        "outputs": [_signal_doc(s) for s in d.outputs],
        "config": d.config.to_dict(),
        "states": [
            {"id": s.number, "stable_outputs": list(s.stable_outputs),
             "reach_sequence": [list(u) for u in s.reach_sequence]}
            for s in d.states
        ],
        "transitions": [
            {"start": t.start_state, "inputs": list(t.inputs), "target": t.target_state,
             "settle_ms": list(t.settle_ms), "trajectories": [list(x) for x in t.trajectories]}
            for t in d.transitions
        ],
        "source": d.source,
    }
    return _dumps(doc)


def load_discovery(data) -> DiscoveryResult:
    doc = _loads(data, DISCOVERY_SCHEMA, "discovery")
    try:
        cfg = ExplorationConfig.from_dict(doc["config"])
    except (TypeError, ValueError) as exc:
        raise SchemaError("/config", str(exc)) from None
    return DiscoveryResult(
        inputs=tuple(_signal(s) for s in doc["inputs"]),
        outputs=tuple(_signal(s) for s in doc["outputs"]),
        states=tuple(
            StateRecord(s["id"], _floats(s["stable_outputs"]), tuple(_floats(u) for u in s["reach_sequence"]))
            for s in doc["states"]
        ),
        transitions=tuple(
            TransitionRecord(t["start"], _floats(t["inputs"]), t["target"], _floats(t["settle_ms"]),
                             tuple(_floats(x) for x in t["trajectories"]))
            for t in doc["transitions"]
        ),
        config=cfg,
        source=doc.get("source", {}),
    )


# -- traces -------------------------------------------------------------------

def write_trace_csv(t: Trace) -> str:
    """CSV with a ``time_s,<names>`` header; metadata goes in leading ``#`` lines."""
    buf = io.StringIO()
    buf.write(f"# period={t.period!r}\n")
    if t.source:
        buf.write(f"# source={t.source}\n")
    if t.warnings:
        buf.write("# warnings=" + json.dumps(t.warnings, separators=(",", ":")) + "\n")
    buf.write(",".join(("time_s",) + t.names) + "\n")
    times = t.times.tolist()
    for ti, row in zip(times, t.values.tolist()):
        buf.write(repr(ti))
        for v in row:
            buf.write("," + repr(v))
        buf.write("\n")
    return buf.getvalue()


def read_trace_csv(text: str) -> Trace:
    lines = text.splitlines()
    meta = {}
    k = 0
    while k < len(lines) and lines[k].startswith("#"):
        key, _, value = lines[k][1:].strip().partition("=")
        meta[key.strip()] = value
        k += 1
    if k >= len(lines):
        raise TraceFormatError("missing header line")
    header = next(csv.reader([lines[k]]))
    if not header or header[0] != "time_s":
        raise TraceFormatError("header must start with 'time_s'")
    names = tuple(header[1:])
    width = len(header)
    rows = []
    for n, row in enumerate(csv.reader(lines[k + 1:]), start=1):
        if not row:
            continue
        if len(row) != width:
            raise TraceFormatError(f"expected {width} fields, found {len(row)}", n)
        try:
            rows.append([float(x) for x in row])
        except ValueError as exc:
            raise TraceFormatError(str(exc), n) from None
        if len(rows) > 1 and not rows[-1][0] > rows[-2][0]:
            raise TraceFormatError("time does not increase", n)
    data = np.array(rows, dtype=float).reshape(len(rows), width)
    if "period" in meta:
        period = float(meta["period"])
    elif len(rows) > 1:
        period = float(data[1, 0] - data[0, 0])
    else:
        period = 0.0
    warnings = json.loads(meta["warnings"]) if "warnings" in meta else []
    return Trace(names, data[:, 0], data[:, 1:], period, source=meta.get("source", ""), warnings=warnings)


# -- DOT ------------------------------------------------------------------------

def _num(x: float) -> str:
    return f"{x:g}"


def _guard(names, values) -> str:
    return ", ".join(f"{n}={_num(v)}" for n, v in zip(names, values))


def _quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_dot(obj, name: str = "behavior") -> str:
    """Graphviz digraph of a discovery result or machine (deterministic text)."""
    lines = [f"digraph {_quote(name)} {{", "  rankdir=LR;", '  init [shape=point, label=""];']
    if isinstance(obj, DiscoveryResult):
        in_names = [s.name for s in obj.inputs]
        for s in sorted(obj.states, key=lambda s: s.number):
            lines.append(f"  s{s.number} [shape=ellipse, label={_quote(f'{s.number}: ' + ', '.join(map(_num, s.stable_outputs)))}];")
        for t in sorted(obj.transitions, key=lambda t: (t.start_state, t.inputs)):
            src = "init" if t.start_state == 0 else f"s{t.start_state}"
            label = _guard(in_names, t.inputs) + " / " + ", ".join(map(_num, t.settle_ms)) + " ms"
            lines.append(f"  {src} -> s{t.target_state} [label={_quote(label)}];")
    elif isinstance(obj, AbstractMachine):
        in_names = [s.name for s in obj.inputs]
        for s in sorted(obj.states, key=lambda s: s.number):
            lines.append(f"  s{s.number} [shape=ellipse, label={_quote(f'{s.number}: ' + ', '.join(map(_num, s.outputs)))}];")
        lines.append(f"  init -> s{obj.initial_state} [label={_quote(_guard(in_names, obj.initial_inputs))}];")
        order = sorted(range(len(obj.transitions)), key=lambda k: (obj.transitions[k].source, obj.transitions[k].guard))
        for k in order:
            t = obj.transitions[k]
            guard = _quote(_guard(in_names, t.guard))
            if obj.level is MdtLevel.MDT1:
                lines.append(f"  s{t.source} -> s{t.target} [label={guard}];")
                continue
            shape = "box" if obj.level is MdtLevel.MDT2 else "box3d"
            lines.append(f"  i{k + 1} [shape={shape}, style=dashed, label={_quote(f'{t.source}->{t.target}')}];")
            lines.append(f"  s{t.source} -> i{k + 1} [label={guard}];")
            delay = "after " + ", ".join(map(_num, t.delays_ms)) + " ms"
            lines.append(f"  i{k + 1} -> s{t.target} [label={_quote(delay)}];")
    else:
        raise TypeError(f"cannot render {type(obj).__name__}")
    lines.append("}")
    return "\n".join(lines) + "\n"


# -- MDT 4 bundles ---------------------------------------------------------------

LIBRARY_MODULES = ("pneumo.py", "graph.py")


def save_model_bundle(document: str, dt: float = 1e-3, include_library: bool = False) -> bytes:
    """Self-contained description of a detailed model.

    Holds the graph document, every component's resolved parameters (defaults
    filled in), the solver settings and the state-vector layout.  With
    ``include_library`` the component-library source is embedded as well.
    """
    g = parse_graph(document)
    model = assemble(g, dt=dt)
    net = model.network
    params = {}
    for c in g.components:
        spec = KINDS[c.kind]
        params[c.id] = {"kind": c.kind, **spec.optional, **c.params}
    doc = {
        "format_version": FORMAT_VERSION,
        "type": "mdt4-bundle",
        "graph_document": document,
        "document_hash": document_hash(document),
        "parameters": params,
        "solver": {
            "method": "rk4",
            "dt": dt,
            "max_internal_step": net.max_step,
            "substeps": max(1, math.ceil(dt / net.max_step - 1e-12)),
        },
        "state_layout": [
            {"index": i, "node": name, "volume": float(v)} for i, (name, v) in enumerate(zip(net.node_names, net.volumes))
        ],
    }
    if include_library:
        here = Path(__file__).parent
        doc["library"] = {name: (here / name).read_text(encoding="utf-8") for name in LIBRARY_MODULES}
    return _dumps(doc)


def load_model_bundle(data):
    doc = _loads(data, BUNDLE_SCHEMA, "bundle")
    return assemble(parse_graph(doc["graph_document"]), dt=float(doc["solver"]["dt"]))


def load_artifact(data):
    """Load a machine document or an MDT 4 bundle, whichever ``data`` holds."""
    try:
        kind = json.loads(data).get("type")
    except (ValueError, AttributeError):
        kind = None
    if kind == "mdt4-bundle":
        return load_model_bundle(data)
    return load_machine(data)
