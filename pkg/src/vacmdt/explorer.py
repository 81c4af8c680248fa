"""Black-box discovery of states and transitions of a detailed model.

The model is only driven through its inputs and observed through its
outputs.  Starting from the initial state, every input combination is
applied to every discovered state (breadth first); combinations that move the
stable outputs produce a transition record and possibly a new state.

The model protocol is small: ``inputs`` and ``outputs`` signatures,
``reset()``, ``step(u, dt)`` returning the output vector, and
``read_outputs()``.  ``snapshot()``/``restore()`` are used when present to
skip replaying the reach sequence; results are identical either way.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BudgetExceeded, ConsistencyError, NotSettled, UnstableOutcome
from .pneumo import Signal, values_close


@dataclass(frozen=True)
class ExplorationConfig:
    """Exploration settings.

    ``values`` maps input names to the values to try; an input given a single
    value is held at it and is not part of the abstraction.  ``tolerance`` is
    an absolute band for continuous outputs (one number, or one per output
    name).
    """

    values: dict
    settle_time: float = 3.0
    sample_cycle: float = 1e-3
    stability_window: float = 0.5
    tolerance: float | dict = 1.0
    max_states: int = 256

    def __post_init__(self):
        object.__setattr__(self, "values", {k: tuple(float(x) for x in v) for k, v in self.values.items()})
        if not self.settle_time > self.stability_window > 0:
            raise ValueError("need settle_time > stability_window > 0")
        if not self.sample_cycle > 0:
            raise ValueError("sample_cycle must be positive")
        if self.sample_cycle > self.stability_window:
            raise ValueError("sample_cycle must not exceed the stability window")
        for name, vals in self.values.items():
            if not vals:
                raise ValueError(f"value set for input {name!r} is empty")
            if len(set(vals)) != len(vals):
                raise ValueError(f"value set for input {name!r} has duplicates")
        if self.max_states < 1:
            raise ValueError("max_states must be >= 1")

    @property
    def steps_per_hold(self) -> int:
        return int(round(self.settle_time / self.sample_cycle))

    def tolerances(self, outputs) -> tuple[float, ...]:
        if isinstance(self.tolerance, dict):
            return tuple(float(self.tolerance.get(s.name, 1.0)) for s in outputs)
        return tuple(float(self.tolerance) for _ in outputs)

    def value_sets(self, inputs) -> list[tuple[float, ...]]:
        missing = [s.name for s in inputs if s.name not in self.values]
        if missing:
            raise ValueError(f"no value set for inputs {missing}")
        extra = set(self.values) - {s.name for s in inputs}
        if extra:
            raise ValueError(f"value sets given for unknown inputs {sorted(extra)}")
        return [self.values[s.name] for s in inputs]

    def combinations(self, inputs) -> list[tuple[float, ...]]:
        """All input vectors, the first input varying fastest."""
        sets = self.value_sets(inputs)
        return [tuple(reversed(c)) for c in itertools.product(*reversed(sets))]

    def to_dict(self) -> dict:
        return {
            "values": {k: list(v) for k, v in self.values.items()},
            "settle_time": self.settle_time,
            "sample_cycle": self.sample_cycle,
            "stability_window": self.stability_window,
            "tolerance": dict(self.tolerance) if isinstance(self.tolerance, dict) else self.tolerance,
            "max_states": self.max_states,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExplorationConfig":
        return cls(**d)


@dataclass(frozen=True)
class StateRecord:
    number: int
    stable_outputs: tuple[float, ...]
    reach_sequence: tuple[tuple[float, ...], ...]


@dataclass(frozen=True)
class TransitionRecord:
    start_state: int
    inputs: tuple[float, ...]
    target_state: int
    settle_ms: tuple[float, ...]
    trajectories: tuple[tuple[float, ...], ...]


@dataclass(frozen=True)
class DiscoveryResult:
    inputs: tuple[Signal, ...]
    outputs: tuple[Signal, ...]
    states: tuple[StateRecord, ...]
    transitions: tuple[TransitionRecord, ...]
    config: ExplorationConfig
    source: dict = field(default_factory=dict)

    @property
    def relevant_inputs(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.inputs if len(self.config.values[s.name]) > 1)

    @property
    def tolerances(self) -> tuple[float, ...]:
        return self.config.tolerances(self.outputs)

    def state(self, number: int) -> StateRecord:
        return self.states[number - 1]

    def transition(self, start: int, inputs) -> TransitionRecord | None:
        inputs = tuple(float(x) for x in inputs)
        for t in self.transitions:
            if t.start_state == start and t.inputs == inputs:
                return t
        return None


def detect_stable(samples, cycle: float, window: float, tol, signals=None):
    """Final sample if the trailing ``window`` is flat, else ``None``.

    Continuous outputs may wander by at most ``tol`` peak to peak; discrete
    ones must be constant.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    n = int(round(window / cycle)) + 1
    if len(samples) < n:
        raise ValueError("trace is shorter than the stability window")
    tail = samples[-n:]
    for j in range(samples.shape[1]):
        col = tail[:, j]
        if signals is not None and signals[j].discrete:
            if np.any(col != col[-1]):
                return None
        elif np.ptp(col) > _tol(tol, j):
            return None
    return tuple(float(v) for v in samples[-1])


def _tol(tol, j):
    return float(tol) if isinstance(tol, (int, float)) else float(tol[j])


def match_state(outputs, known, tol, signals) -> int | None:
    """Number of the recorded state whose stable outputs match ``outputs``."""
    hits = [s.number for s in known if values_close(outputs, s.stable_outputs, signals, tol)]
    if len(hits) > 1:
        raise ConsistencyError(f"outputs {tuple(outputs)} match states {hits}; tolerance too loose")
    return hits[0] if hits else None


def settle_times(samples, final, tol, signals, cycle: float) -> tuple[float, ...]:
    """Per-output settle time in ms.

    ``samples[k]`` is the output at ``k * cycle`` after the inputs changed.
    The settle time is one cycle past the last sample outside the band around
    ``final``; 0 if the output never leaves it.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    out = []
    for j in range(samples.shape[1]):
        col = samples[:, j]
        if signals[j].discrete:
            off = col != final[j]
        else:
            off = np.abs(col - final[j]) > _tol(tol, j)
        idx = np.flatnonzero(off)
        if idx.size == 0:
            out.append(0.0)
            continue
        last = int(idx[-1])
        if last == len(col) - 1:
            raise NotSettled(f"output {signals[j].name!r} has not settled by the end of the trace")
        out.append(round((last + 1) * cycle * 1000.0, 9))
    return tuple(out)


def trajectory_length(settle_ms: float, cycle: float) -> int:
    return math.ceil(settle_ms / (cycle * 1000.0) - 1e-9)


def _hold(model, u, n_steps, cycle, first_row):
    rows = np.empty((n_steps + 1, len(first_row)))
    rows[0] = first_row
    for k in range(n_steps):
        rows[k + 1] = model.step(u, cycle)
    return rows


def replay(model, sequence, cfg: ExplorationConfig):
    """Reset, then hold each input combination for the settle time.

    Returns the model (left at the end of the sequence) and the output
    samples, one row per sample cycle including the reset row.
    """
    model.reset()
    rows = [np.asarray(model.read_outputs(), dtype=float)[None, :]]
    n = cfg.steps_per_hold
    for u in sequence:
        block = _hold(model, tuple(u), n, cfg.sample_cycle, rows[-1][-1])
        rows.append(block[1:])
    return model, np.vstack(rows)


def _evaluate(model, reach, snap, u, cfg, want_snapshot):
    if snap is not None:
        model.restore(snap)
    else:
        replay(model, reach, cfg)
    first = np.asarray(model.read_outputs(), dtype=float)
    rows = _hold(model, u, cfg.steps_per_hold, cfg.sample_cycle, first)
    return rows, (model.snapshot() if want_snapshot else None)


def _evaluate_remote(args):
    return _evaluate(*args)


def explore(model, cfg: ExplorationConfig, workers: int = 1, use_snapshots: bool = True) -> DiscoveryResult:
    """Discover the state and transition memories of ``model``.

    With ``workers > 1`` the combinations for one start state are simulated
    in parallel processes; results are committed in the canonical order, so
    numbering matches the sequential run.
    """
    inputs = tuple(model.inputs)
    outputs = tuple(model.outputs)
    combos = cfg.combinations(inputs)
    tol = cfg.tolerances(outputs)
    cycle = cfg.sample_cycle
    snaps_ok = use_snapshots and hasattr(model, "snapshot") and hasattr(model, "restore")

    states: list[StateRecord] = []
    transitions: list[TransitionRecord] = []
    snapshots: dict[int, object] = {}

    def partial():
        return DiscoveryResult(inputs, outputs, tuple(states), tuple(transitions), cfg, _source(model))

    def record(start, u, rows):
        stable = detect_stable(rows, cycle, cfg.stability_window, tol, outputs)
        if stable is None:
            raise UnstableOutcome(start, u, cfg.settle_time)
        return stable

    initial = tuple(vals[0] for vals in cfg.value_sets(inputs))
    model.reset()
    rows, snap = _evaluate(model, (), None, initial, cfg, snaps_ok)
    stable = record(0, initial, rows)
    states.append(StateRecord(1, stable, (initial,)))
    transitions.append(_transition(0, initial, 1, rows, stable, tol, outputs, cycle))
    snapshots[1] = snap

    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        i = 0
        while i < len(states):
            s = states[i]
            i += 1
            # the initial run already is the evaluation of (state 1, initial inputs)
            todo = [u for u in combos if not (s.number == 1 and u == initial)]
            jobs = [(model, s.reach_sequence, snapshots.get(s.number), u, cfg, snaps_ok) for u in todo]
            if pool is None:
                results = (_evaluate(*job) for job in jobs)
            else:
                results = pool.map(_evaluate_remote, jobs)
            for u, (rows, snap) in zip(todo, results):
                stable = record(s.number, u, rows)
                if values_close(stable, s.stable_outputs, outputs, tol):
                    continue
                target = match_state(stable, states, tol, outputs)
                if target is None:
                    if len(states) >= cfg.max_states:
                        raise BudgetExceeded(cfg.max_states, partial())
                    target = len(states) + 1
                    states.append(StateRecord(target, stable, s.reach_sequence + (u,)))
                    snapshots[target] = snap
                transitions.append(_transition(s.number, u, target, rows, states[target - 1].stable_outputs,
                                               tol, outputs, cycle))
    finally:
        if pool is not None:
            pool.shutdown()
    return partial()


def _transition(start, u, target, rows, final, tol, outputs, cycle) -> TransitionRecord:
    settle = settle_times(rows, final, tol, outputs, cycle)
    trajectories = []
    for j, ms in enumerate(settle):
        n = trajectory_length(ms, cycle)
        trajectories.append(tuple(float(v) for v in rows[1:n + 1, j]))
    return TransitionRecord(start, tuple(u), target, settle, tuple(trajectories))


def _source(model) -> dict:
    src = {}
    for attr in ("name", "source_hash"):
        if getattr(model, attr, None):
            src[attr] = getattr(model, attr)
    return src


def check_discovery(d: DiscoveryResult) -> list[str]:
    """Invariant violations of a discovery result (empty when sound)."""
    problems = []
    n_out = len(d.outputs)
    for k, s in enumerate(d.states, start=1):
        if s.number != k:
            problems.append(f"state ids are not contiguous at position {k}")
        if len(s.stable_outputs) != n_out:
            problems.append(f"state {s.number} has {len(s.stable_outputs)} outputs, expected {n_out}")
    ids = {s.number for s in d.states}
    tol = d.tolerances
    for a, b in itertools.combinations(d.states, 2):
        if values_close(a.stable_outputs, b.stable_outputs, d.outputs, tol):
            problems.append(f"states {a.number} and {b.number} are indistinguishable")
    seen = set()
    for t in d.transitions:
        key = (t.start_state, t.inputs)
        if key in seen:
            problems.append(f"duplicate transition from state {t.start_state} under {t.inputs}")
        seen.add(key)
        if t.target_state not in ids or (t.start_state != 0 and t.start_state not in ids):
            problems.append(f"transition {key} references an unknown state")
            continue
        if len(t.inputs) != len(d.inputs):
            problems.append(f"transition {key} has a guard of the wrong width")
        if len(t.settle_ms) != n_out or len(t.trajectories) != n_out:
            problems.append(f"transition {key} lacks per-output timing")
            continue
        final = d.state(t.target_state).stable_outputs
        for j, (ms, traj) in enumerate(zip(t.settle_ms, t.trajectories)):
            if len(traj) != trajectory_length(ms, d.config.sample_cycle):
                problems.append(f"transition {key} output {j}: trajectory length does not match settle time")
            elif traj and not values_close((traj[-1],), (final[j],), (d.outputs[j],), (tol[j],)):
                problems.append(f"transition {key} output {j}: trajectory does not end at the target value")
    if not any(t.start_state == 0 for t in d.transitions) and d.states:
        problems.append("no initial transition")
    return problems


def with_zero_delays(d: DiscoveryResult) -> DiscoveryResult:
    """Copy of ``d`` with every settle time forced to 0 and trajectories dropped."""
    zeroed = tuple(
        replace(t, settle_ms=tuple(0.0 for _ in t.settle_ms), trajectories=tuple(() for _ in t.trajectories))
        for t in d.transitions
    )
    return replace(d, transitions=zeroed)
