"""Trace deviation metrics and repeated-execution timing across depths."""

from __future__ import annotations

import json
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import BenchmarkError, ComparisonError
from .graph import DetailedModel
from .machine import run_machine
from .modelio import load_artifact
from .trace import Script, Trace, run_model

_GRID_EPS = 1e-9


@dataclass
class DeviationReport:
    signals: tuple[str, ...]
    max_abs: dict[str, float]
    mean_abs: dict[str, float]
    phases: dict[str, dict[str, float]] = field(default_factory=dict)
    samples: int = 0

    def to_dict(self) -> dict:
        return {"signals": list(self.signals), "samples": self.samples, "max_abs": self.max_abs,
                "mean_abs": self.mean_abs, "phases": self.phases}

    def table(self) -> str:
        cols = ["signal", "max_abs", "mean_abs", *self.phases]
        rows = [[s, _fmt(self.max_abs[s]), _fmt(self.mean_abs[s]),
                 *(_fmt(self.phases[p][s]) for p in self.phases)] for s in self.signals]
        return _table(cols, rows)


def _phase_list(phases) -> list[tuple[str, float, float]]:
    if phases is None:
        return []
    items = phases.items() if isinstance(phases, dict) else ((p[0], p[1:]) for p in phases)
    out = []
    for label, (t0, t1) in items:
        if not t1 > t0:
            raise ComparisonError(f"phase {label!r}: end must be after start")
        out.append((str(label), float(t0), float(t1)))
    return out


def compare_traces(a: Trace, b: Trace, phases=None) -> DeviationReport:
    """Deviation of ``b`` from ``a`` on ``a``'s time grid.

    ``b`` is linearly interpolated onto the samples of ``a`` that fall inside
    ``b``'s time range.  ``phases`` is a mapping ``label -> (t0, t1)`` or a
    list of ``(label, t0, t1)``; each phase reports the per-signal maximum over
    the samples with ``t0 <= t <= t1`` (1 ns slack for grid rounding).
    """
    shared = tuple(n for n in a.names if n in b.names and n not in ("state",))
    if not shared:
        raise ComparisonError("traces share no signal names")
    if len(a) == 0 or len(b) == 0:
        raise ComparisonError("time ranges do not overlap")
    mask = (a.times >= b.times[0]) & (a.times <= b.times[-1])
    if not mask.any():
        raise ComparisonError("time ranges do not overlap")
    t = a.times[mask]
    devs = {}
    for name in shared:
        resampled = np.interp(t, b.times, b.column(name))
        devs[name] = np.abs(a.column(name)[mask] - resampled)
    report = DeviationReport(
        signals=shared,
        max_abs={n: float(d.max()) for n, d in devs.items()},
        mean_abs={n: float(d.mean()) for n, d in devs.items()},
        samples=int(t.size),
    )
    for label, t0, t1 in _phase_list(phases):
        sel = (t >= t0 - _GRID_EPS) & (t <= t1 + _GRID_EPS)
        if not sel.any():
            raise ComparisonError(f"phase {label!r} contains no shared samples")
        report.phases[label] = {n: float(d[sel].max()) for n, d in devs.items()}
    return report


@dataclass
class LevelTiming:
    level: str
    run: list[float]
    total: list[float]
    size_bytes: int

    def stats(self, values) -> dict[str, float]:
        return {"min": min(values), "mean": statistics.fmean(values), "max": max(values)}

    @property
    def construction_share(self) -> float:
        total = statistics.fmean(self.total)
        return (total - statistics.fmean(self.run)) / total


@dataclass
class TimingReport:
    repetitions: int
    levels: dict[str, LevelTiming]
    dt: float
    duration: float

    def mean_run(self, level: str) -> float:
        return statistics.fmean(self.levels[level].run)

    def to_dict(self) -> dict:
        return {
            "repetitions": self.repetitions,
            "dt": self.dt,
            "duration_s": self.duration,
            "levels": {
                name: {
                    "run_s": lt.stats(lt.run),
                    "construct_and_run_s": lt.stats(lt.total),
                    "construction_share": lt.construction_share,
                    "size_bytes": lt.size_bytes,
                }
                for name, lt in self.levels.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        cols = ["level", "run min", "run mean", "run max", "with construction", "construction %", "bytes"]
        rows = []
        for name, lt in self.levels.items():
            run = lt.stats(lt.run)
            rows.append([name, _fmt(run["min"]), _fmt(run["mean"]), _fmt(run["max"]),
                         _fmt(statistics.fmean(lt.total)), f"{100 * lt.construction_share:.1f}",
                         str(lt.size_bytes)])
        return _table(cols, rows)


def _execute(obj, script: Script, dt: float) -> Trace:
    if isinstance(obj, DetailedModel):
        return run_model(obj, script, dt)
    return run_machine(obj, script, dt)


def _one_repetition(data: bytes, script: Script, dt: float) -> tuple[float, float]:
    t0 = time.perf_counter()
    obj = load_artifact(data)
    t1 = time.perf_counter()
    _execute(obj, script, dt)
    t2 = time.perf_counter()
    return t2 - t1, t2 - t0


def _guarded(level, data, script, dt):
    try:
        return _one_repetition(data, script, dt)
    except Exception as exc:
        raise BenchmarkError(level, exc) from exc


def run_benchmark(artifacts: dict[str, bytes], script: Script, dt: float = 1e-3,
                  repetitions: int = 30, parallel: int = 1) -> TimingReport:
    """Time each serialized artifact under ``script``.

    ``artifacts`` maps a level label (``"MDT1"`` ... ``"MDT4"``) to a machine
    document or an MDT 4 bundle.  Each repetition loads a fresh instance, so
    no runtime state is shared between repetitions.  "Construction" is the
    deserialization and assembly time.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    signature = None
    for level, data in artifacts.items():
        try:
            obj = load_artifact(data)
        except Exception as exc:
            raise BenchmarkError(level, exc) from exc
        sig = ([s.name for s in obj.inputs], [s.name for s in obj.outputs])
        if signature is None:
            signature = sig
        elif sig != signature:
            raise BenchmarkError(level, ValueError(f"I/O signature {sig} differs from {signature}"))

    levels = {}
    for level, data in artifacts.items():
        if parallel > 1:
            with ProcessPoolExecutor(parallel) as pool:
                results = list(pool.map(_guarded, [level] * repetitions, [data] * repetitions,
                                        [script] * repetitions, [dt] * repetitions))
        else:
            results = [_guarded(level, data, script, dt) for _ in range(repetitions)]
        levels[level] = LevelTiming(level, [r for r, _ in results], [t for _, t in results], len(data))
    return TimingReport(repetitions, levels, dt, script.duration)


def _fmt(x: float) -> str:
    return f"{x:.4g}"


def _table(cols, rows) -> str:
    widths = [max(len(str(c)), *(len(r[i]) for r in rows)) if rows else len(c) for i, c in enumerate(cols)]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(cols, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in rows]
    return "\n".join(lines)
