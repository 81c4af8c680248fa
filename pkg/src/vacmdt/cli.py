"""Command-line pipeline: build, explore, synthesize, run, compare, bench.

Every stage reads its inputs from files and writes its artifacts into the
output directory only.  Settings come from a TOML run configuration; command
line flags override it::

    [paths]
    graph = "use_case_1.toml"   # relative to the config file
    out = "out"

    [exploration]               # ExplorationConfig fields, plus `workers`
    settle_time = 3.0

    [synthesis]
    levels = [1, 2, 3]

    [script]
    duration = 9.0
    dt = 0.001
    steps = [{ t = 0.5, suction = 24 }, { t = 3.5, suction = 0 }]

    [bench]
    repetitions = 30
    phases = [{ label = "rising", start = 0.5, end = 3.5 }]

Failures print one JSON line to stderr and exit with 2 (configuration),
3 (model), 4 (exploration) or 5 (input/output).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import errors as E
from .bench import compare_traces, run_benchmark
from .explorer import ExplorationConfig, explore
from .graph import assemble, load_graph, validate_graph
from .machine import MdtLevel, run_machine, synthesize
from .modelio import (
    export_dot,
    load_discovery,
    load_machine,
    read_trace_csv,
    save_discovery,
    save_machine,
    save_model_bundle,
    write_trace_csv,
)
from .trace import Script, run_model

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

EXIT_CONFIG, EXIT_MODEL, EXIT_EXPLORATION, EXIT_IO = 2, 3, 4, 5

_EXIT_CODES = (
    (E.ConfigError, EXIT_CONFIG),
    ((E.GraphParseError, E.GraphValidationError, E.AssemblyError, E.DomainError, E.IntegrationDiverged,
      E.UnknownInput, E.BenchmarkError), EXIT_MODEL),
    ((E.UnstableOutcome, E.BudgetExceeded, E.ConsistencyError, E.NotSettled, E.SynthesisError),
     EXIT_EXPLORATION),
    ((E.SchemaError, E.VersionMismatch, E.TraceFormatError, E.ComparisonError, OSError), EXIT_IO),
)

_EXPLORATION_KEYS = {"values", "settle_time", "sample_cycle", "stability_window", "tolerance", "max_states"}


@dataclass
class RunConfig:
    graph: Path | None = None
    out: Path = Path("out")
    exploration: dict = field(default_factory=dict)
    workers: int = 1
    levels: tuple[int, ...] = (1, 2, 3)
    script: Script | None = None
    dt: float = 1e-3
    repetitions: int = 30
    parallel: int = 1
    phases: list = field(default_factory=list)

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        if path is None:
            return cls()
        p = Path(path)
        try:
            raw = tomllib.loads(p.read_text(encoding="utf-8"))
        except OSError as exc:
            raise E.ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
        except tomllib.TOMLDecodeError as exc:
            raise E.ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(raw, p.parent, str(path))

    @classmethod
    def from_dict(cls, raw: dict, base: Path, where: str = "config") -> "RunConfig":
        known = {"paths", "exploration", "synthesis", "script", "bench"}
        for key in raw:
            if key not in known:
                raise E.ConfigError(f"{where}: unknown section [{key}]")
        cfg = cls()
        paths = raw.get("paths", {})
        _only(paths, {"graph", "out"}, where, "paths")
        if "graph" in paths:
            cfg.graph = base / paths["graph"]
            if not cfg.graph.is_file():
                raise E.ConfigError(f"{where}: paths.graph: no such file {str(cfg.graph)!r}")
        if "out" in paths:
            cfg.out = base / paths["out"]

        expl = dict(raw.get("exploration", {}))
        _only(expl, _EXPLORATION_KEYS | {"workers"}, where, "exploration")
        cfg.workers = _int(expl.pop("workers", 1), where, "exploration.workers", minimum=1)
        cfg.exploration = expl

        levels = raw.get("synthesis", {}).get("levels", [1, 2, 3])
        _only(raw.get("synthesis", {}), {"levels"}, where, "synthesis")
        try:
            cfg.levels = tuple(int(MdtLevel.parse(x)) for x in levels)
        except ValueError as exc:
            raise E.ConfigError(f"{where}: synthesis.levels: {exc}") from None

        if "script" in raw:
            cfg.script, cfg.dt = _script(raw["script"], where)

        bench = raw.get("bench", {})
        _only(bench, {"repetitions", "parallel", "phases"}, where, "bench")
        cfg.repetitions = _int(bench.get("repetitions", 30), where, "bench.repetitions", minimum=1)
        cfg.parallel = _int(bench.get("parallel", 1), where, "bench.parallel", minimum=1)
        for k, ph in enumerate(bench.get("phases", [])):
            try:
                cfg.phases.append((str(ph["label"]), float(ph["start"]), float(ph["end"])))
            except (KeyError, TypeError, ValueError):
                raise E.ConfigError(f"{where}: bench.phases[{k}]: needs label, start and end") from None
        return cfg

    def exploration_config(self, model) -> ExplorationConfig:
        d = dict(self.exploration)
        d.setdefault("values", {s.name: v for s, v in zip(model.inputs, model.input_values)})
        try:
            cfg = ExplorationConfig.from_dict(d)
            cfg.value_sets(model.inputs)
        except (TypeError, ValueError) as exc:
            raise E.ConfigError(f"exploration: {exc}") from None
        return cfg


def _only(section, allowed, where, name):
    if not isinstance(section, dict):
        raise E.ConfigError(f"{where}: [{name}] must be a table")
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise E.ConfigError(f"{where}: {name}.{unknown[0]}: unknown field")


def _int(value, where, name, minimum):
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise E.ConfigError(f"{where}: {name}: expected an integer >= {minimum}, got {value!r}")
    return value


def _script(section, where) -> tuple[Script, float]:
    _only(section, {"duration", "dt", "steps"}, where, "script")
    try:
        duration = float(section["duration"])
        dt = float(section.get("dt", 1e-3))
        steps = []
        for step in section.get("steps", []):
            step = dict(step)
            t = float(step.pop("t"))
            steps.append((t, {k: float(v) for k, v in step.items()}))
        if not dt > 0:
            raise ValueError("dt must be positive")
        return Script(steps, duration), dt
    except KeyError as exc:
        raise E.ConfigError(f"{where}: script: missing field {exc}") from None
    except (TypeError, ValueError) as exc:
        raise E.ConfigError(f"{where}: script: {exc}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise E.ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    def shared(default):
        g = _Parser(add_help=False)
        g.add_argument("--config", default=default, help="TOML run configuration")
        g.add_argument("--out", default=default, help="output directory (overrides paths.out)")
        g.add_argument("--seed-note", default=default, help="provenance note stamped into artifacts")
        return g

    # flags given before the subcommand must survive the subparser's defaults
    common = shared(argparse.SUPPRESS)
    p = _Parser(prog="vacmdt", description=__doc__.split("\n")[0], parents=[shared(None)])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("build", parents=[common], help="assemble a graph and write a model report + bundle")
    s.add_argument("--graph")
    s = sub.add_parser("explore", parents=[common], help="discover states and transitions")
    s.add_argument("--graph")
    s.add_argument("--workers", type=int)
    s = sub.add_parser("synthesize", parents=[common], help="build machines from a discovery result")
    s.add_argument("--discovery", help="discovery file (default: <out>/discovery.json)")
    s.add_argument("--level", type=int, nargs="+", choices=(1, 2, 3))
    s = sub.add_parser("run", parents=[common], help="run a model or machine under the script")
    s.add_argument("--level", type=int, required=True, choices=(1, 2, 3, 4))
    s.add_argument("--graph")
    s.add_argument("--machine", help="machine file (default: <out>/machine_mdt<level>.json)")
    s = sub.add_parser("compare", parents=[common], help="deviation report between two trace CSVs")
    s.add_argument("reference")
    s.add_argument("candidate")
    s = sub.add_parser("bench", parents=[common], help="time all depths under the script")
    s.add_argument("--graph")
    s.add_argument("--repetitions", type=int)
    return p


class _Context:
    def __init__(self, args):
        self.args = args
        self.cfg = RunConfig.load(args.config)
        if args.out:
            self.cfg.out = Path(args.out)
        if getattr(args, "graph", None):
            self.cfg.graph = Path(args.graph)
        self.out = self.cfg.out
        self.note = args.seed_note

    def write(self, name: str, data) -> Path:
        # every artifact name is fixed by this module; nothing escapes the out dir
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        if isinstance(data, str):
            data = data.encode("utf-8")
        path.write_bytes(data)
        return path

    def graph(self):
        if self.cfg.graph is None:
            raise E.ConfigError("no graph document given (paths.graph or --graph)")
        return load_graph(self.cfg.graph)

    def model(self):
        return assemble(self.graph(), dt=self.cfg.dt)

    def script(self) -> Script:
        if self.cfg.script is None:
            raise E.ConfigError("no [script] section in the run configuration")
        return self.cfg.script

    def stamp(self, doc: dict) -> dict:
        if self.note is not None:
            doc["note"] = self.note
        return doc


def _json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def cmd_build(ctx: _Context) -> dict:
    g = ctx.graph()
    violations = validate_graph(g)
    if violations:
        raise E.GraphValidationError(violations)
    model = assemble(g, dt=ctx.cfg.dt)
    document = Path(ctx.cfg.graph).read_text(encoding="utf-8")
    net = model.network
    report = ctx.stamp({
        "name": g.name,
        "components": len(g.components),
        "nodes": net.size,
        "total_volume_m3": model.total_volume,
        "inputs": [s.name for s in model.inputs],
        "outputs": [s.name for s in model.outputs],
        "dt": model.dt,
        "max_internal_step": net.max_step,
        "document_hash": model.source_hash,
    })
    ctx.write("model_report.json", _json(report))
    ctx.write("model.mdt4.json", save_model_bundle(document, dt=ctx.cfg.dt))
    return report


def cmd_explore(ctx: _Context) -> dict:
    model = ctx.model()
    cfg = ctx.cfg.exploration_config(model)
    workers = ctx.args.workers or ctx.cfg.workers
    d = explore(model, cfg, workers=workers)
    if ctx.note is not None:
        d.source["note"] = ctx.note
    ctx.write("discovery.json", save_discovery(d))
    ctx.write("discovery.dot", export_dot(d))
    return {"states": len(d.states), "transitions": len(d.transitions)}


def cmd_synthesize(ctx: _Context) -> dict:
    path = Path(ctx.args.discovery) if ctx.args.discovery else ctx.out / "discovery.json"
    d = load_discovery(path.read_bytes())
    levels = ctx.args.level or ctx.cfg.levels
    written = []
    for level in levels:
        m = synthesize(d, level)
        if ctx.note is not None:
            m.provenance["note"] = ctx.note
        written.append(ctx.write(f"machine_mdt{level}.json", save_machine(m)).name)
        written.append(ctx.write(f"machine_mdt{level}.dot", export_dot(m, f"mdt{level}")).name)
    return {"written": written}


def cmd_run(ctx: _Context) -> dict:
    level = ctx.args.level
    script = ctx.script()
    if level == 4:
        trace = run_model(ctx.model(), script, ctx.cfg.dt)
    else:
        path = Path(ctx.args.machine) if ctx.args.machine else ctx.out / f"machine_mdt{level}.json"
        m = load_machine(path.read_bytes())
        if int(m.level) != level:
            raise E.ConfigError(f"{path} holds an MDT{int(m.level)} machine, not MDT{level}")
        trace = run_machine(m, script, ctx.cfg.dt)
    name = ctx.write(f"trace_mdt{level}.csv", write_trace_csv(trace)).name
    return {"trace": name, "samples": len(trace), "warnings": len(trace.warnings)}


def cmd_compare(ctx: _Context) -> dict:
    a = read_trace_csv(Path(ctx.args.reference).read_text(encoding="utf-8"))
    b = read_trace_csv(Path(ctx.args.candidate).read_text(encoding="utf-8"))
    report = compare_traces(a, b, ctx.cfg.phases)
    ctx.write("compare.json", _json(ctx.stamp(report.to_dict())))
    print(report.table())
    return {"max_abs": report.max_abs}


def cmd_bench(ctx: _Context) -> dict:
    script = ctx.script()
    artifacts = {}
    for level in (1, 2, 3):
        path = ctx.out / f"machine_mdt{level}.json"
        if path.is_file():
            artifacts[f"MDT{level}"] = path.read_bytes()
    document = Path(ctx.cfg.graph).read_text(encoding="utf-8") if ctx.cfg.graph else None
    if document is None:
        raise E.ConfigError("no graph document given (paths.graph or --graph)")
    ctx.graph()  # surface graph errors as model errors before timing starts
    artifacts["MDT4"] = save_model_bundle(document, dt=ctx.cfg.dt)
    reps = ctx.args.repetitions or ctx.cfg.repetitions
    report = run_benchmark(artifacts, script, ctx.cfg.dt, reps, ctx.cfg.parallel)
    doc = ctx.stamp(report.to_dict())
    doc["bundle_with_library_bytes"] = len(save_model_bundle(document, dt=ctx.cfg.dt, include_library=True))
    ctx.write("bench.json", _json(doc))
    print(report.table())
    return {"levels": list(artifacts)}


COMMANDS = {
    "build": cmd_build,
    "explore": cmd_explore,
    "synthesize": cmd_synthesize,
    "run": cmd_run,
    "compare": cmd_compare,
    "bench": cmd_bench,
}


def _fail(exc: BaseException, code: int) -> int:
    line = {"error": type(exc).__name__, "exit": code, "message": " ".join(str(exc).split())}
    print(json.dumps(line), file=sys.stderr)
    return code


def run_cli(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        ctx = _Context(args)
        summary = COMMANDS[args.command](ctx)
    except BaseException as exc:
        if isinstance(exc, (KeyboardInterrupt, SystemExit)):
            raise
        for kinds, code in _EXIT_CODES:
            if isinstance(exc, kinds):
                return _fail(exc, code)
        raise
    print(json.dumps({"command": args.command, "ok": True, **summary}, sort_keys=True))
    return 0


def main() -> None:
    sys.exit(run_cli())
