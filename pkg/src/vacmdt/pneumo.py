"""Lumped-parameter pneumatics for vacuum gripping systems.

Public quantities are expressed as vacuum in mbar relative to atmosphere
(positive below ambient, so 750 means 750 mbar of vacuum and -12 means a
slight overpressure).  All internal math runs on absolute pressure in Pa.

The detailed (MDT 4) model is a network of volume nodes.  Each node obeys the
isothermal balance ``dP/dt = (P / V) * sum(volumetric inflows)``; nodes are
joined by laminar (Hagen-Poiseuille) resistances and one node carries the
ejector.  Integration is fixed-step explicit RK4 with automatic sub-stepping
so that the stiffest node stays inside the RK4 stability region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DomainError, IntegrationDiverged

P_ATM = 101325.0  # Pa
PA_PER_MBAR = 100.0
AIR_VISCOSITY = 1.8e-5  # Pa s, air at ~20 degC
LOGIC_HIGH = 24.0
LOGIC_THRESHOLD = 12.0
BLOW_BAND = 50.0  # mbar; width of the linear region of the blow-off characteristic
RK4_STABILITY = 2.2  # |lambda * h| bound, below the RK4 real-axis limit of 2.785


def vacuum_to_pa(vacuum_mbar: float) -> float:
    """Vacuum in mbar,rel -> absolute pressure in Pa."""
    p = P_ATM - vacuum_mbar * PA_PER_MBAR
    if not p > 0:
        raise DomainError(f"vacuum {vacuum_mbar} mbar,rel is beyond absolute zero")
    return p


def pa_to_vacuum(p_abs: float) -> float:
    """Absolute pressure in Pa -> vacuum in mbar,rel."""
    return (P_ATM - p_abs) / PA_PER_MBAR


def is_active(signal: float) -> bool:
    return signal >= LOGIC_THRESHOLD


class SignalKind(str, Enum):
    CONTINUOUS = "continuous"
    DISCRETE = "discrete"


@dataclass(frozen=True)
class Signal:
    """One entry of an input or output signature.

    Continuous values compare with a tolerance; discrete values (switching
    voltages, status bytes) compare exactly.
    """

    name: str
    kind: SignalKind = SignalKind.CONTINUOUS
    unit: str = ""

    @property
    def discrete(self) -> bool:
        return self.kind is SignalKind.DISCRETE


def values_close(a, b, signals, tol) -> bool:
    """True when every discrete entry is equal and every continuous one is within ``tol``."""
    for i, sig in enumerate(signals):
        if sig.discrete:
            if a[i] != b[i]:
                return False
        elif abs(a[i] - b[i]) > _tol_at(tol, i):
            return False
    return True


def _tol_at(tol, i):
    if isinstance(tol, (int, float)):
        return float(tol)
    return float(tol[i])


@dataclass(frozen=True)
class EjectorParams:
    s_max: float  # m^3/s at zero vacuum
    pv_max: float  # mbar,rel
    blow_flow: float = 2.0e-3  # m^3/s
    blow_overpressure: float = -12.0  # mbar,rel
    has_check_valve: bool = True

    def __post_init__(self):
        if not self.s_max > 0:
            raise DomainError(f"s_max must be positive, got {self.s_max}")
        if not 0 < self.pv_max <= P_ATM / PA_PER_MBAR:
            raise DomainError(f"pv_max must lie in (0, 1013.25] mbar, got {self.pv_max}")
        if not self.blow_flow >= 0:
            raise DomainError(f"blow_flow must be >= 0, got {self.blow_flow}")
        if not self.blow_overpressure <= 0:
            raise DomainError("blow_overpressure must be <= 0 mbar,rel (an overpressure)")


@dataclass(frozen=True)
class HoseParams:
    length: float
    inner_diameter: float
    segments: int = 8
    viscosity: float = AIR_VISCOSITY

    def __post_init__(self):
        if not (self.length > 0 and self.inner_diameter > 0 and self.viscosity > 0):
            raise DomainError("hose length, inner_diameter and viscosity must be positive")
        if int(self.segments) != self.segments or self.segments < 1:
            raise DomainError(f"segments must be a positive integer, got {self.segments}")

    @property
    def volume(self) -> float:
        return self.length * math.pi * (self.inner_diameter / 2) ** 2

    @property
    def resistance(self) -> float:
        return hose_resistance(self.inner_diameter, self.length, self.viscosity)


@dataclass(frozen=True)
class ThresholdConfig:
    """Vacuum switching thresholds in mbar,rel (defaults: loading/unloading unit)."""

    h2: float = 550.0
    h3: float = 500.0
    h4: float = 600.0
    h5: float = 750.0

    def __post_init__(self):
        for name in ("h2", "h3", "h4", "h5"):
            v = getattr(self, name)
            if not 0 < v < 1013:
                raise DomainError(f"threshold {name}={v} outside (0, 1013) mbar,rel")


def evacuation_time_mdt2(V: float, S: float, p0: float, pv: float) -> float:
    """Abstract evacuation time ``V/S * ln(p0/pv)``.

    Only the volume enters, never its shape; a long thin hose and a compact
    reservoir of equal volume get the same answer. Pressure arguments follow
    the published argument order; their ratio must be >= 1.
    """
    if not (V > 0 and S > 0):
        raise DomainError("volume and suction capacity must be positive")
    if not (p0 > 0 and pv > 0):
        raise DomainError("pressures must be positive")
    if p0 < pv:
        raise DomainError(f"target beyond capability: p0={p0} < pv={pv}")
    return V / S * math.log(p0 / pv)


def hose_resistance(d: float, L: float, mu: float = AIR_VISCOSITY) -> float:
    """Hagen-Poiseuille resistance ``128 mu L / (pi d^4)`` in Pa s/m^3."""
    if not (d > 0 and L > 0 and mu > 0):
        raise DomainError("diameter, length and viscosity must be positive")
    return 128.0 * mu * L / (math.pi * d**4)


def ejector_flow(params: EjectorParams, p_sys: float, suction: float, blow: float) -> float:
    """Volumetric flow drawn out of the system (m^3/s); negative means inflow.

    Blow-off dominates suction. With neither signal set, a check valve stops
    ambient air from flowing back in but still lets an overpressure vent.
    """
    if is_active(blow):
        x = (p_sys - params.blow_overpressure) / BLOW_BAND
        return -params.blow_flow * min(1.0, max(-1.0, x))
    if is_active(suction):
        return params.s_max * max(0.0, 1.0 - p_sys / params.pv_max)
    back = -params.s_max * p_sys / params.pv_max
    if params.has_check_valve:
        return max(back, 0.0)
    return back


def threshold_outputs(p: float, cfg: ThresholdConfig) -> tuple[float, int]:
    """H2 switching voltage and status byte (bits 4/5/6 for H3/H4/H5)."""
    h2 = LOGIC_HIGH if p >= cfg.h2 else 0.0
    byte = 0
    if p >= cfg.h3:
        byte |= 1 << 4
    if p >= cfg.h4:
        byte |= 1 << 5
    if p >= cfg.h5:
        byte |= 1 << 6
    return h2, byte


def rk4_step(f, y: np.ndarray, h: float) -> np.ndarray:
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class PneumaticNetwork:
    """Volume nodes joined by linear resistances, with one ejector node.

    ``edges`` are ``(i, j, resistance)``; ``leaks`` are per-node conductances
    to ambient in m^3/(s Pa).
    """

    def __init__(self, node_names, volumes, edges, ejector_node: int, ejector: EjectorParams,
                 leaks=None, max_step: float | None = None):
        self.node_names = list(node_names)
        self.volumes = np.asarray(volumes, dtype=float)
        n = len(self.volumes)
        if len(self.node_names) != n:
            raise ValueError("node_names and volumes differ in length")
        if np.any(self.volumes <= 0):
            bad = self.node_names[int(np.argmin(self.volumes))]
            raise DomainError(f"node {bad!r} has non-positive volume")
        self.edges = [(int(i), int(j), float(r)) for i, j, r in edges]
        self.ejector_node = int(ejector_node)
        self.ejector = ejector
        self.leaks = np.zeros(n) if leaks is None else np.asarray(leaks, dtype=float)

        lap = np.zeros((n, n))
        for i, j, r in self.edges:
            if not r > 0:
                raise DomainError(f"edge {self.node_names[i]}-{self.node_names[j]} has resistance {r}")
            g = 1.0 / r
            lap[i, i] += g
            lap[j, j] += g
            lap[i, j] -= g
            lap[j, i] -= g
        lap[np.diag_indices(n)] += self.leaks
        self._lap = lap
        self._bias = self.leaks * P_ATM
        self._has_leak = bool(np.any(self.leaks))
        self._inv_v = 1.0 / self.volumes
        self.max_step = self.stable_step() if max_step is None else float(max_step)

    @property
    def size(self) -> int:
        return len(self.volumes)

    @property
    def total_volume(self) -> float:
        return float(self.volumes.sum())

    def stable_step(self) -> float:
        """Largest internal step keeping RK4 stable.

        Uses the spectral radius of the Jacobian linearised at 1.1 atm, with the
        steepest ejector characteristic added to the ejector node's diagonal.
        ``diag(P/V) @ L`` is similar to a symmetric matrix, so eigvalsh applies.
        """
        p_max = P_ATM * 1.1
        ej = self.ejector
        e = self.ejector_node
        slope = max(ej.s_max / (ej.pv_max * PA_PER_MBAR), ej.blow_flow / (BLOW_BAND * PA_PER_MBAR))
        jac = self._lap.copy()
        jac[e, e] += slope + max(ej.s_max, ej.blow_flow) / p_max
        s = np.sqrt(p_max * self._inv_v)
        lam = float(np.max(np.linalg.eigvalsh(s[:, None] * jac * s[None, :])))
        return RK4_STABILITY / lam if lam > 0 else math.inf

    def initial_state(self) -> np.ndarray:
        return np.full(self.size, P_ATM)

    def derivative(self, p: np.ndarray, suction: float, blow: float) -> np.ndarray:
        q_in = -(self._lap @ p)
        if self._has_leak:
            q_in += self._bias
        e = self.ejector_node
        q_in[e] -= ejector_flow(self.ejector, (P_ATM - p[e]) / PA_PER_MBAR, suction, blow)
        return p * q_in * self._inv_v

    def advance(self, p: np.ndarray, suction: float, blow: float, dt: float) -> np.ndarray:
        """Integrate one step of length ``dt``; the input is held constant across it."""
        if not dt > 0:
            raise DomainError(f"dt must be positive, got {dt}")
        n_sub = max(1, math.ceil(dt / self.max_step - 1e-12))
        h = dt / n_sub

        def f(y):
            return self.derivative(y, suction, blow)

        for _ in range(n_sub):
            p = rk4_step(f, p, h)
        if not np.all(np.isfinite(p)) or np.any(p <= 0):
            bad = np.flatnonzero(~np.isfinite(p) | (p <= 0))[0]
            raise IntegrationDiverged(self.node_names[bad])
        return p
