"""Executable state machines at modeling depths 1, 2 and 3.

* MDT 1: states carry the stable output values; a matching guard switches
  state immediately.
* MDT 2: each transition passes through an intermediate state that keeps the
  source outputs and releases output ``j`` to its target value after the
  recorded delay ``d_j``.
* MDT 3: like MDT 2, but inside the intermediate each continuous output
  replays its recorded trajectory (linear interpolation between capture
  instants, sample-and-hold for discrete outputs).

Intermediates cannot be interrupted: inputs are read again only once the
target state has been reached.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import SynthesisError, UnknownInput
from .explorer import DiscoveryResult, check_discovery
from .pneumo import Signal
from .trace import Script, Trace

_EPS = 1e-9


class MdtLevel(IntEnum):
    MDT1 = 1
    MDT2 = 2
    MDT3 = 3

    @classmethod
    def parse(cls, value) -> "MdtLevel":
        if isinstance(value, str):
            value = value.upper().removeprefix("MDT")
        try:
            return cls(int(value))
        except (TypeError, ValueError):
            raise ValueError(f"modeling depth must be 1, 2 or 3, got {value!r}") from None


@dataclass(frozen=True)
class MachineState:
    number: int
    outputs: tuple[float, ...]


@dataclass(frozen=True)
class MachineTransition:
    source: int
    guard: tuple[float, ...]
    target: int
    delays_ms: tuple[float, ...] = ()
    trajectories: tuple[tuple[float, ...], ...] = ()

    @property
    def duration(self) -> float:
        """Intermediate dwell time in seconds."""
        return max(self.delays_ms, default=0.0) / 1000.0


@dataclass(frozen=True)
class AbstractMachine:
    level: MdtLevel
    inputs: tuple[Signal, ...]
    outputs: tuple[Signal, ...]
    alphabet: tuple[tuple[float, ...], ...]
    states: tuple[MachineState, ...]
    initial_state: int
    initial_inputs: tuple[float, ...]
    transitions: tuple[MachineTransition, ...]
    cycle: float
    provenance: dict = field(default_factory=dict, compare=True)

    def state(self, number: int) -> MachineState:
        return self.states[number - 1]

    @property
    def intermediate_count(self) -> int:
        return 0 if self.level is MdtLevel.MDT1 else len(self.transitions)

    def check(self) -> list[str]:
        problems = []
        ids = {s.number for s in self.states}
        if self.initial_state not in ids:
            problems.append(f"initial state {self.initial_state} does not exist")
        seen = set()
        for t in self.transitions:
            if t.source not in ids or t.target not in ids:
                problems.append(f"transition {t.source}->{t.target} references a missing state")
            if (t.source, t.guard) in seen:
                problems.append(f"two transitions from {t.source} under {t.guard}")
            seen.add((t.source, t.guard))
            if self.level is MdtLevel.MDT1 and (t.delays_ms or t.trajectories):
                problems.append("MDT1 transitions cannot carry intermediates")
            if self.level >= MdtLevel.MDT2 and len(t.delays_ms) != len(self.outputs):
                problems.append(f"transition {t.source}->{t.target} lacks per-output delays")
            if self.level is MdtLevel.MDT3:
                for ms, traj in zip(t.delays_ms, t.trajectories):
                    if len(traj) != math.ceil(ms / (self.cycle * 1000.0) - _EPS):
                        problems.append(f"transition {t.source}->{t.target}: trajectory length mismatch")
        return problems


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def synthesize(d: DiscoveryResult, level) -> AbstractMachine:
    """Build the machine of the requested depth from a discovery result."""
    level = MdtLevel.parse(level)
    problems = check_discovery(d)
    if problems:
        raise SynthesisError("discovery result is inconsistent: " + "; ".join(problems))
    init = [t for t in d.transitions if t.start_state == 0]
    if len(init) != 1:
        raise SynthesisError("discovery result needs exactly one initial transition")

    transitions = []
    for t in d.transitions:
        if t.start_state == 0:
            continue
        delays = t.settle_ms if level >= MdtLevel.MDT2 else ()
        trajs = t.trajectories if level is MdtLevel.MDT3 else ()
        transitions.append(MachineTransition(t.start_state, t.inputs, t.target_state, delays, trajs))

    provenance = {
        "source": dict(d.source),
        "config_hash": _digest(d.config.to_dict()),
        "discovery_hash": _digest([repr(d.states), repr(d.transitions)]),
    }
    m = AbstractMachine(
        level=level,
        inputs=d.inputs,
        outputs=d.outputs,
        alphabet=tuple(d.config.value_sets(d.inputs)),
        states=tuple(MachineState(s.number, s.stable_outputs) for s in d.states),
        initial_state=init[0].target_state,
        initial_inputs=init[0].inputs,
        transitions=tuple(transitions),
        cycle=d.config.sample_cycle,
        provenance=provenance,
    )
    problems = m.check()
    if problems:
        raise SynthesisError("; ".join(problems))
    return m


class MachineRuntime:
    """Mutable execution state of one machine; one per concurrent run.

    ``on_unknown`` decides what happens with input vectors outside the
    explored alphabet: ``"hold"`` stays put and records a warning,
    ``"reject"`` raises :class:`UnknownInput`.
    """

    def __init__(self, machine: AbstractMachine, on_unknown: str = "hold"):
        if on_unknown not in ("hold", "reject"):
            raise ValueError("on_unknown must be 'hold' or 'reject'")
        self.machine = machine
        self.on_unknown = on_unknown
        self._level = machine.level
        self._guards = {(t.source, t.guard): t for t in machine.transitions}
        self._outputs = {s.number: tuple(s.outputs) for s in machine.states}
        sets = [set(v) for v in machine.alphabet]
        self._in_alphabet = lambda u: all(x in s for x, s in zip(u, sets))
        self._discrete = [s.discrete for s in machine.outputs]
        self.warnings: list[dict] = []
        self.reset()

    def reset(self) -> None:
        self.state = self.machine.initial_state
        self.pending: MachineTransition | None = None
        self.elapsed = 0.0
        self.latched: tuple[float, ...] = ()
        self.clock = 0.0
        self._last_unknown = None

    @property
    def in_intermediate(self) -> bool:
        return self.pending is not None

    def _finished(self) -> bool:
        t = self.pending
        d = t.duration
        if self._level is MdtLevel.MDT3:
            return d == 0.0 or self.elapsed > d + _EPS
        return self.elapsed >= d - _EPS

    def step(self, inputs, dt: float) -> tuple[float, ...]:
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        self.clock += dt
        if self.pending is None:
            u = tuple(float(x) for x in inputs)
            t = self._guards.get((self.state, u))
            if t is None and not self._in_alphabet(u):
                self._unknown(u)
            elif t is not None:
                if self._level is MdtLevel.MDT1:
                    self.state = t.target
                else:
                    self.pending = t
                    self.latched = self._outputs[self.state]
                    self.elapsed = 0.0
            else:
                self._last_unknown = None
        if self.pending is not None:
            self.elapsed += dt
            if self._finished():
                self.state = self.pending.target
                self.pending = None
        return self.outputs()

    def _unknown(self, u):
        if self.on_unknown == "reject":
            raise UnknownInput(u, self.state)
        if u != self._last_unknown:
            self.warnings.append({"code": "UNKNOWN_INPUT", "time": self.clock, "state": self.state,
                                  "inputs": list(u)})
        self._last_unknown = u

    def outputs(self) -> tuple[float, ...]:
        t = self.pending
        if t is None:
            return self._outputs[self.state]
        target = self._outputs[t.target]
        tau = self.elapsed
        out = []
        if self._level is MdtLevel.MDT2:
            for j, ms in enumerate(t.delays_ms):
                out.append(self.latched[j] if tau < ms / 1000.0 - _EPS else target[j])
            return tuple(out)
        cycle = self.machine.cycle
        for j, ms in enumerate(t.delays_ms):
            d = ms / 1000.0
            if d == 0.0 or tau > d + _EPS:
                out.append(target[j])
                continue
            traj = t.trajectories[j]
            x = tau / cycle
            k = math.floor(x + _EPS)
            frac = x - k
            lo = self.latched[j] if k == 0 else traj[min(k, len(traj)) - 1]
            if frac <= _EPS or k >= len(traj) or self._discrete[j]:
                out.append(lo)
            else:
                hi = traj[k]
                out.append(lo + frac * (hi - lo))
        return tuple(out)


def machine_step(rt: MachineRuntime, inputs, dt: float) -> tuple[float, ...]:
    return rt.step(inputs, dt)


def run_machine(m: AbstractMachine, script: Script, dt: float, on_unknown: str = "hold") -> Trace:
    """Execute ``m`` under ``script``; adds a ``state`` column (source state while in an intermediate)."""
    rt = MachineRuntime(m, on_unknown)
    in_names = [s.name for s in m.inputs]
    out_names = [s.name for s in m.outputs]
    u = script.input_matrix(in_names, dt)
    rows = [tuple(r) for r in u.tolist()]
    n = len(rows)
    n_in = len(in_names)
    values = np.empty((n + 1, n_in + len(out_names) + 1))
    values[0, :n_in] = u[0] if n else 0.0
    values[0, n_in:-1] = rt.outputs()
    values[0, -1] = rt.state
    for k, row in enumerate(rows):
        values[k + 1, :n_in] = row
        values[k + 1, n_in:-1] = rt.step(row, dt)
        values[k + 1, -1] = rt.state
    times = np.arange(n + 1) * dt
    return Trace(tuple(in_names + out_names + ["state"]), times, values, dt,
                 source=f"MDT{int(m.level)}", warnings=list(rt.warnings))


def state_sequence(trace: Trace) -> list[int]:
    """Distinct consecutive values of the ``state`` column."""
    seq = []
    for s in trace.column("state"):
        s = int(s)
        if not seq or seq[-1] != s:
            seq.append(s)
    return seq
