"""Time-indexed signal records and timed input schedules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TraceFormatError


@dataclass
class Trace:
    """Signals sampled on a time grid.

    ``values[i, j]`` is signal ``names[j]`` at ``times[i]``.  ``source`` names
    the kind of model that produced it (``"MDT1"`` ... ``"MDT4"``).
    """

    names: tuple[str, ...]
    times: np.ndarray
    values: np.ndarray
    period: float
    source: str = ""
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self.names = tuple(self.names)
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float).reshape(len(self.times), len(self.names))
        if len(self.times) > 1:
            bad = np.flatnonzero(np.diff(self.times) <= 0)
            if bad.size:
                raise TraceFormatError("time column is not strictly increasing", int(bad[0]) + 1)

    def __len__(self):
        return len(self.times)

    def __eq__(self, other):
        if not isinstance(other, Trace):
            return NotImplemented
        return (
            self.names == other.names
            and self.period == other.period
            and self.source == other.source
            and list(self.warnings) == list(other.warnings)
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.values, other.values)
        )

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def at(self, t: float) -> np.ndarray:
        """Row at the sample nearest to ``t``."""
        i = int(np.argmin(np.abs(self.times - t)))
        return self.values[i]


@dataclass
class Script:
    """Piecewise-constant input schedule.

    ``steps`` holds ``(start_time, {input: value})`` pairs; unspecified inputs
    keep their previous value and start at 0.
    """

    steps: list
    duration: float

    def __post_init__(self):
        times = [float(t) for t, _ in self.steps]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("script step times must be non-decreasing")
        if self.duration <= 0:
            raise ValueError("script duration must be positive")

    @classmethod
    def holds(cls, names, combos, hold: float) -> "Script":
        """Each combination held for ``hold`` seconds, back to back."""
        steps = [(k * hold, dict(zip(names, c))) for k, c in enumerate(combos)]
        return cls(steps, hold * max(1, len(combos)))

    def n_steps(self, dt: float) -> int:
        return int(round(self.duration / dt))

    def input_matrix(self, names, dt: float) -> np.ndarray:
        """Input vector applied during each step ``(k dt, (k+1) dt]``."""
        n = self.n_steps(dt)
        u = np.zeros((n, len(names)))
        current = dict.fromkeys(names, 0.0)
        starts = []
        for t, values in self.steps:
            unknown = set(values) - set(names)
            if unknown:
                raise ValueError(f"script sets unknown inputs {sorted(unknown)}")
            current = {**current, **{k: float(v) for k, v in values.items()}}
            starts.append((int(round(float(t) / dt)), [current[k] for k in names]))
        for k, (first, row) in enumerate(starts):
            last = starts[k + 1][0] if k + 1 < len(starts) else n
            u[max(first, 0):max(last, 0)] = row
        return u


def run_model(model, script: Script, dt: float | None = None) -> Trace:
    """Drive a detailed model through ``script``; the trace holds inputs and outputs."""
    dt = model.dt if dt is None else dt
    in_names = [s.name for s in model.inputs]
    out_names = [s.name for s in model.outputs]
    u = script.input_matrix(in_names, dt)
    n = len(u)
    model.reset()
    values = np.empty((n + 1, len(in_names) + len(out_names)))
    values[0, : len(in_names)] = u[0] if n else 0.0
    values[0, len(in_names):] = model.read_outputs()
    for k in range(n):
        values[k + 1, : len(in_names)] = u[k]
        values[k + 1, len(in_names):] = model.step(u[k], dt)
    times = np.arange(n + 1) * dt
    return Trace(tuple(in_names + out_names), times, values, dt, source="MDT4")
