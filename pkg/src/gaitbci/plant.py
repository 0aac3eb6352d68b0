"""
Simulated robotic gait orthosis.

Phases go Stopped -> StartingUp -> Walking -> ShuttingDown -> Stopped.  A
Walk command accepted while Stopped enters StartingUp after
``command_latency``; an Idle command accepted while Walking enters
ShuttingDown after ``command_latency``.  Start-up and power-down are
locked in: commands that arrive during them, or while a previous command
is still in flight, are dropped (not queued).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import Recording, State
from .errors import ConfigurationError, FormatError, SimulationError

__all__ = [
    "Phase",
    "PlantConfig",
    "PlantState",
    "PlantLog",
    "GyroTrace",
    "RoGOPlant",
    "walking_timeline",
    "gyro",
    "detect_walking",
    "simulate_batch",
]


class Phase(enum.IntEnum):
    STOPPED = 0
    STARTING_UP = 1
    WALKING = 2
    SHUTTING_DOWN = 3

    @property
    def label(self) -> str:
        return "".join(w.capitalize() for w in self.name.split("_"))

    @classmethod
    def parse(cls, s: str) -> "Phase":
        for p in cls:
            if p.label.lower() == s.strip().lower() or p.name.lower() == s.strip().lower():
                return p
        raise FormatError(f"unknown plant phase {s!r}")


_NEXT = {
    Phase.STOPPED: Phase.STARTING_UP,
    Phase.STARTING_UP: Phase.WALKING,
    Phase.WALKING: Phase.SHUTTING_DOWN,
    Phase.SHUTTING_DOWN: Phase.STOPPED,
}


@dataclass(frozen=True)
class PlantConfig:
    startup_latency: float = 5.0
    shutdown_latency: float = 5.0
    gait_cadence: float = 0.9       # steps/s at 2 km/h
    command_latency: float = 0.25
    gyro_amplitude: float = 100.0   # deg/s

    def __post_init__(self):
        if min(self.startup_latency, self.shutdown_latency, self.command_latency) < 0:
            raise ConfigurationError("plant latencies must be >= 0")
        if not self.gait_cadence > 0:
            raise ConfigurationError("gait_cadence must be positive")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "PlantConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"{sorted(unknown)[0]}: unknown PlantConfig field")
        return cls(**d)


@dataclass(frozen=True)
class PlantState:
    phase: Phase
    phase_entered: float


@dataclass(frozen=True)
class PlantLog:
    """Phase-entry events ``(t, phase)``, starting with the initial phase."""

    events: tuple[tuple[float, Phase], ...]

    def __post_init__(self):
        ev = tuple((float(t), Phase(p)) for t, p in self.events)
        if not ev:
            raise FormatError("plant log is empty")
        for (t0, p0), (t1, p1) in zip(ev, ev[1:]):
            if t1 < t0:
                raise FormatError("plant log times decrease")
            if _NEXT[p0] != p1:
                raise FormatError(f"illegal phase transition {p0.label} -> {p1.label} at t={t1}")
        object.__setattr__(self, "events", ev)

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.events])

    @property
    def phases(self) -> np.ndarray:
        return np.array([int(p) for _, p in self.events], dtype=np.int8)

    def phase_at(self, times) -> np.ndarray:
        idx = np.searchsorted(self.times, np.asarray(times, dtype=float), side="right") - 1
        return np.where(idx >= 0, self.phases[np.maximum(idx, 0)], int(Phase.STOPPED))

    def walking_intervals(self, t_end: float) -> list[tuple[float, float]]:
        out = []
        ev = self.events
        for k, (t, p) in enumerate(ev):
            if p == Phase.WALKING:
                end = ev[k + 1][0] if k + 1 < len(ev) else t_end
                if end > t:
                    out.append((t, min(end, t_end)))
        return out

    def dumps(self) -> str:
        lines = ["# gaitbci plant log v1", "# t_s phase"]
        lines += [f"{t!r} {p.label}" for t, p in self.events]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "PlantLog":
        ev = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            t, p = line.split()
            ev.append((float(t), Phase.parse(p)))
        return cls(tuple(ev))


class RoGOPlant:
    """Single-owner discrete-event plant.  Drive it with :meth:`command` and :meth:`advance_to`."""

    def __init__(self, cfg: PlantConfig | None = None, t0: float = 0.0):
        self.cfg = cfg or PlantConfig()
        self.t = float(t0)
        self.phase = Phase.STOPPED
        self.phase_entered = float(t0)
        self._pending: tuple[State, float] | None = None
        self._events: list[tuple[float, Phase]] = [(self.t, Phase.STOPPED)]

    @property
    def state(self) -> PlantState:
        return PlantState(self.phase, self.phase_entered)

    @property
    def log(self) -> PlantLog:
        return PlantLog(tuple(self._events))

    def _enter(self, phase: Phase, t: float):
        if _NEXT[self.phase] != phase:
            raise SimulationError(f"illegal transition {self.phase.label} -> {phase.label}")
        self.phase = phase
        self.phase_entered = t
        self._events.append((t, phase))

    def _next_event(self) -> float | None:
        if self._pending is not None:
            return self._pending[1]
        if self.phase == Phase.STARTING_UP:
            return self.phase_entered + self.cfg.startup_latency
        if self.phase == Phase.SHUTTING_DOWN:
            return self.phase_entered + self.cfg.shutdown_latency
        return None

    def advance_to(self, t: float) -> PlantState:
        if t < self.t:
            raise SimulationError(f"time went backwards: {t} < {self.t}")
        while True:
            te = self._next_event()
            if te is None or te > t:
                break
            self._pending = None
            self._enter(_NEXT[self.phase], te)
        self.t = float(t)
        return self.state

    def advance(self, dt: float) -> PlantState:
        if not dt > 0:
            raise SimulationError(f"dt must be positive, got {dt}")
        return self.advance_to(self.t + dt)

    def command(self, cmd, t: float) -> bool:
        """Issue Walk/Idle at time ``t``; returns whether the command was accepted."""
        cmd = State.parse(cmd)
        self.advance_to(t)
        if self._pending is not None:
            return False
        if (cmd == State.WALK and self.phase == Phase.STOPPED) or (cmd == State.IDLE and self.phase == Phase.WALKING):
            self._pending = (cmd, t + self.cfg.command_latency)
            self.advance_to(t)
            return True
        return False


def walking_timeline(log: PlantLog, times) -> np.ndarray:
    """1 where the plant is in the Walking phase at each time, else 0."""
    return (log.phase_at(times) == Phase.WALKING).astype(np.int8)


@dataclass(frozen=True, eq=False)
class GyroTrace:
    fs: float
    angular_velocity: np.ndarray

    def to_recording(self) -> Recording:
        return Recording(self.angular_velocity[np.newaxis, :], self.fs, ("gyro",), 0.0)


def gyro(log: PlantLog, fs: float, t_end: float, cfg: PlantConfig | None = None,
         noise: float = 0.0, seed: int = 0) -> GyroTrace:
    """Shank angular velocity: a sinusoid at the gait cadence while Walking, zero otherwise."""
    cfg = cfg or PlantConfig()
    n = int(round(t_end * fs))
    t = np.arange(n) / fs
    g = np.zeros(n)
    for a, b in log.walking_intervals(t_end):
        m = (t >= a) & (t < b)
        g[m] = cfg.gyro_amplitude * np.sin(2 * np.pi * cfg.gait_cadence * (t[m] - a))
    if noise > 0:
        g += noise * np.random.default_rng(seed).standard_normal(n)
    return GyroTrace(float(fs), g)


def detect_walking(trace: GyroTrace, threshold: float, cadence: float) -> list[tuple[float, float]]:
    """Walking intervals from a gyro trace.

    Samples with ``|g| > threshold`` are active; gaps shorter than one gait
    cycle (zero crossings) are bridged.  Each interval spans from the first
    active sample to one sample past the last.
    """
    active = np.flatnonzero(np.abs(trace.angular_velocity) > threshold)
    if active.size == 0:
        return []
    max_gap = int(np.ceil(trace.fs / cadence))
    splits = np.flatnonzero(np.diff(active) > max_gap)
    starts = np.concatenate([[active[0]], active[splits + 1]])
    ends = np.concatenate([active[splits], [active[-1]]])
    return [(s / trace.fs, (e + 1) / trace.fs) for s, e in zip(starts, ends)]


def simulate_batch(states: np.ndarray, decision_times: np.ndarray, grid: np.ndarray,
                   cfg: PlantConfig | None = None) -> np.ndarray:
    """Vectorized plant driven by level commands; returns walking timelines on ``grid``.

    ``states`` is (trials, decisions); each decision time up to ``grid[-1]``
    must also appear in ``grid`` (later ones cannot affect the timeline).  Equivalent to feeding every decision to :meth:`RoGOPlant.command`
    and sampling :func:`walking_timeline` on the grid.
    """
    cfg = cfg or PlantConfig()
    states = np.asarray(states)
    n_trials = states.shape[0]
    grid = np.asarray(grid, dtype=float)
    decision_times = np.asarray(decision_times, dtype=float)
    keep = decision_times <= grid[-1]
    decision_times = decision_times[keep]
    dec_idx = np.searchsorted(grid, decision_times)
    if not np.array_equal(grid[dec_idx], decision_times):
        raise ConfigurationError("decision times must lie on the evaluation grid")
    which = np.full(grid.size, -1)
    which[dec_idx] = np.flatnonzero(keep)

    phase = np.zeros(n_trials, dtype=np.int8)
    entered = np.full(n_trials, grid[0] if grid.size else 0.0)
    pending = np.zeros(n_trials, dtype=bool)
    pending_t = np.zeros(n_trials)
    out = np.zeros((n_trials, grid.size), dtype=np.int8)

    def advance(t):
        for _ in range(4):
            fire = pending & (pending_t <= t)
            if fire.any():
                phase[fire] = (phase[fire] + 1) % 4
                entered[fire] = pending_t[fire]
                pending[fire] = False
            up = (phase == Phase.STARTING_UP) & (entered + cfg.startup_latency <= t)
            down = (phase == Phase.SHUTTING_DOWN) & (entered + cfg.shutdown_latency <= t)
            if up.any():
                entered[up] = entered[up] + cfg.startup_latency
                phase[up] = Phase.WALKING
            if down.any():
                entered[down] = entered[down] + cfg.shutdown_latency
                phase[down] = Phase.STOPPED
            if not (fire.any() or up.any() or down.any()):
                break

    for g, t in enumerate(grid):
        advance(t)
        k = which[g]
        if k >= 0:
            cmd = states[:, k]
            accept = ~pending & (((cmd == State.WALK) & (phase == Phase.STOPPED))
                                 | ((cmd == State.IDLE) & (phase == Phase.WALKING)))
            pending[accept] = True
            pending_t[accept] = t + cfg.command_latency
            advance(t)
        out[:, g] = phase == Phase.WALKING
    return out
