"""
Streaming decoder: sliding-window posteriors, posterior averaging and the
dual-threshold (hysteresis) binary state machine.

Every ``window.step`` seconds the newest window is reduced to band power,
mapped to the scalar feature and turned into P(Walk|f).  The last
``avg_horizon / step`` posteriors are averaged into P-bar; an Idle decoder
switches to Walk when P-bar > T_W and a Walk decoder switches to Idle when
P-bar < T_I.  No switch happens until the averaging ring is full.
"""
from __future__ import annotations

import queue
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .classifier import posterior
from .core import Recording, State
from .errors import ConfigurationError, DecoderError, FormatError
from .spectral import WindowSpec, bin_powers

__all__ = [
    "DecoderConfig",
    "DecoderState",
    "Decision",
    "StateTrace",
    "HysteresisMachine",
    "initial_state",
    "step",
    "run_posteriors",
    "run_posteriors_batch",
    "OnlineDecoder",
    "run_stream",
]


@dataclass(frozen=True)
class DecoderConfig:
    window: WindowSpec = field(default_factory=WindowSpec)
    avg_horizon: float = 2.0
    t_idle: float = 0.04
    t_walk: float = 0.65
    initial_state: State = State.IDLE

    def __post_init__(self):
        if isinstance(self.window, dict):
            object.__setattr__(self, "window", WindowSpec(**self.window))
        object.__setattr__(self, "initial_state", State.parse(self.initial_state))
        if not (0.0 <= self.t_idle <= 1.0 and 0.0 <= self.t_walk <= 1.0):
            raise ConfigurationError(f"thresholds must lie in [0, 1], got T_I={self.t_idle}, T_W={self.t_walk}")
        if self.t_idle > self.t_walk:
            raise ConfigurationError(f"need T_I <= T_W, got T_I={self.t_idle} > T_W={self.t_walk}")
        ratio = self.avg_horizon / self.window.step
        if not self.avg_horizon > 0 or abs(ratio - round(ratio)) > 1e-9:
            raise ConfigurationError(
                f"avg_horizon ({self.avg_horizon}) must be a positive multiple of the step ({self.window.step})")

    @property
    def n_avg(self) -> int:
        return int(round(self.avg_horizon / self.window.step))

    def with_thresholds(self, t_idle: float, t_walk: float) -> "DecoderConfig":
        return DecoderConfig(self.window, self.avg_horizon, t_idle, t_walk, self.initial_state)

    def to_dict(self) -> dict:
        return {
            "window": {"length": self.window.length, "step": self.window.step},
            "avg_horizon": self.avg_horizon,
            "t_idle": self.t_idle,
            "t_walk": self.t_walk,
            "initial_state": self.initial_state.label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecoderConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"{sorted(unknown)[0]}: unknown DecoderConfig field")
        return cls(**d)


@dataclass(frozen=True)
class DecoderState:
    current: State
    ring: tuple[float, ...]
    t: float = 0.0


class HysteresisMachine:
    """Mutable averaging ring plus the two-threshold rule."""

    def __init__(self, cfg: DecoderConfig, state: DecoderState | None = None):
        self.cfg = cfg
        self.n = cfg.n_avg
        self.ring = deque(maxlen=self.n)
        self.current = cfg.initial_state
        if state is not None:
            self.current = state.current
            self.ring.extend(state.ring)

    def push(self, p: float) -> tuple[State, float]:
        if not 0.0 <= p <= 1.0:
            raise DecoderError(f"posterior {p!r} outside [0, 1]")
        self.ring.append(float(p))
        s = 0.0
        for v in self.ring:
            s += v
        pbar = s / len(self.ring)
        if len(self.ring) == self.n:
            if self.current == State.IDLE and pbar > self.cfg.t_walk:
                self.current = State.WALK
            elif self.current == State.WALK and pbar < self.cfg.t_idle:
                self.current = State.IDLE
        return self.current, pbar


def initial_state(cfg: DecoderConfig, t: float = 0.0) -> DecoderState:
    return DecoderState(cfg.initial_state, (), t)


def step(state: DecoderState, window_posterior: float, cfg: DecoderConfig) -> tuple[DecoderState, float]:
    """Pure single-step update; returns the new state and P-bar."""
    m = HysteresisMachine(cfg, state)
    current, pbar = m.push(window_posterior)
    return DecoderState(current, tuple(m.ring), state.t + cfg.window.step), pbar


def run_posteriors(posteriors: Iterable[float], cfg: DecoderConfig) -> tuple[np.ndarray, np.ndarray]:
    """States (int8) and P-bar for a posterior sequence."""
    m = HysteresisMachine(cfg)
    states, pbars = [], []
    for p in posteriors:
        s, pb = m.push(p)
        states.append(int(s))
        pbars.append(pb)
    return np.array(states, dtype=np.int8), np.array(pbars)


def run_posteriors_batch(P: np.ndarray, cfg: DecoderConfig, t_idle=None, t_walk=None
                         ) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`run_posteriors` over rows of ``P`` (trials x steps).

    Uses the same oldest-to-newest summation order, so results are bitwise
    identical to the scalar machine.  ``t_idle``/``t_walk`` optionally give
    per-row thresholds that override the config.
    """
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2:
        raise ConfigurationError("P must be 2-D (trials x steps)")
    if ((P < 0) | (P > 1)).any() or np.isnan(P).any():
        raise DecoderError("posteriors outside [0, 1]")
    n_trials, T = P.shape
    n = cfg.n_avg
    states = np.empty((n_trials, T), dtype=np.int8)
    pbars = np.empty((n_trials, T))
    ti = np.broadcast_to(cfg.t_idle if t_idle is None else np.asarray(t_idle, dtype=float), (n_trials,))
    tw = np.broadcast_to(cfg.t_walk if t_walk is None else np.asarray(t_walk, dtype=float), (n_trials,))
    cur = np.full(n_trials, int(cfg.initial_state), dtype=np.int8)
    s = np.empty(n_trials)
    for t in range(T):
        k = min(t + 1, n)
        s[:] = 0.0
        for j in range(t - k + 1, t + 1):
            s += P[:, j]
        pbar = s / k
        if k == n:
            up = (cur == State.IDLE) & (pbar > tw)
            down = (cur == State.WALK) & (pbar < ti)
            cur[up] = State.WALK
            cur[down] = State.IDLE
        states[:, t] = cur
        pbars[:, t] = pbar
    return states, pbars


@dataclass(frozen=True)
class Decision:
    t: float
    posterior: float
    pbar: float
    state: State
    branch: State
    feature: float


@dataclass(frozen=True, eq=False)
class StateTrace:
    """Decoder output at the decision rate.

    ``times`` are window-end times; ``posteriors`` holds P-bar and ``raw``
    the single-window P(Walk|f) it was averaged from.
    """

    step: float
    times: np.ndarray
    states: np.ndarray
    posteriors: np.ndarray
    raw: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.times)
        if len(self.states) != n or len(self.posteriors) != n or (self.raw is not None and len(self.raw) != n):
            raise FormatError("state trace columns have different lengths")

    def __len__(self):
        return len(self.times)

    def __eq__(self, other):
        if not isinstance(other, StateTrace):
            return NotImplemented
        raw_eq = (self.raw is None and other.raw is None) or (
            self.raw is not None and other.raw is not None and np.array_equal(self.raw, other.raw))
        return (self.step == other.step and np.array_equal(self.times, other.times)
                and np.array_equal(self.states, other.states)
                and np.array_equal(self.posteriors, other.posteriors) and raw_eq)

    @classmethod
    def from_decisions(cls, decisions: list[Decision], step: float) -> "StateTrace":
        return cls(
            step,
            np.array([d.t for d in decisions]),
            np.array([int(d.state) for d in decisions], dtype=np.int8),
            np.array([d.pbar for d in decisions]),
            np.array([d.posterior for d in decisions]),
        )


class OnlineDecoder:
    """Consumes sample chunks in time order and emits one decision per window step.

    Parameters
    ----------
    model : PredictionModel
    cfg : DecoderConfig
    n_channels : int, optional
        Channel count of the incoming stream; defaults to the model's input count.
    t0 : float
        Time of the first sample.
    on_decision : callable, optional
        Called with every :class:`Decision` as soon as it is made.
    """

    def __init__(self, model, cfg: DecoderConfig, n_channels: int | None = None, t0: float = 0.0,
                 on_decision: Callable[[Decision], None] | None = None):
        self.model = model
        self.cfg = cfg
        self.fs = model.fs
        if abs(cfg.window.length - model.window.length) > 1e-12 or abs(cfg.window.step - model.window.step) > 1e-12:
            raise ConfigurationError("decoder window differs from the window the model was trained on")
        self.n_channels = n_channels if n_channels is not None else model.n_input_channels
        if max(model.retained_channels) >= self.n_channels:
            raise ConfigurationError(
                f"model uses channel {max(model.retained_channels)} but the stream has {self.n_channels}")
        self.channels = np.array(model.retained_channels)
        self.bins = model.bins
        self.n_len = cfg.window.n_length(self.fs)
        self.n_step = cfg.window.n_step(self.fs)
        self.t0 = float(t0)
        self.machine = HysteresisMachine(cfg)
        self.on_decision = on_decision
        self.decisions: list[Decision] = []
        self._buf = np.empty((len(self.channels), 0))
        self._buf_start = 0        # absolute index of _buf[:, 0]
        self._received = 0         # absolute samples received
        self._next_window = 0      # absolute start index of the next window

    @property
    def expected_time(self) -> float:
        return self.t0 + self._received / self.fs

    def push(self, chunk: np.ndarray, t_start: float | None = None) -> list[Decision]:
        """Append samples (channels x n); returns the decisions this chunk completed."""
        chunk = np.asarray(chunk, dtype=np.float64)
        if chunk.ndim != 2 or chunk.shape[0] != self.n_channels:
            raise DecoderError(f"chunk shape {chunk.shape} does not match {self.n_channels} channels",
                               self.expected_time)
        if t_start is not None and abs(t_start - self.expected_time) > 0.5 / self.fs:
            raise DecoderError(f"stream gap: chunk starts at {t_start:.6f} s, expected", self.expected_time)
        if not np.isfinite(chunk).all():
            raise DecoderError("chunk contains NaN or Inf", self.expected_time)
        self._buf = np.concatenate([self._buf, chunk[self.channels]], axis=1)
        self._received += chunk.shape[1]
        out = []
        while self._next_window + self.n_len <= self._received:
            a = self._next_window - self._buf_start
            out.append(self._decide(self._buf[:, a:a + self.n_len]))
            self._next_window += self.n_step
        drop = self._next_window - self._buf_start
        if drop > 0:
            self._buf = self._buf[:, drop:]
            self._buf_start += drop
        return out

    def _decide(self, window: np.ndarray) -> Decision:
        values = bin_powers(window, self.fs, self.bins, self.model.taper)
        f, branch = self.model.feature_extractor.extract(values.reshape(-1))
        p = posterior(f, int(branch), self.model.bayes)
        state, pbar = self.machine.push(p)
        t = self.t0 + (self._next_window + self.n_len) / self.fs
        d = Decision(t, p, pbar, state, branch, f)
        self.decisions.append(d)
        if self.on_decision is not None:
            self.on_decision(d)
        return d

    def consume(self, q: "queue.Queue", timeout: float | None = None) -> "StateTrace":
        """Drain ``(t_start, chunk)`` items from a queue until a ``None`` sentinel."""
        while True:
            item = q.get(timeout=timeout)
            if item is None:
                break
            t_start, chunk = item
            self.push(chunk, t_start)
        return self.trace()

    def trace(self) -> StateTrace:
        return StateTrace.from_decisions(self.decisions, self.cfg.window.step)


def run_stream(source, model, cfg: DecoderConfig, plant=None, chunk_size: int | None = None) -> StateTrace:
    """Decode a recording (replay) or an iterable of ``(t_start, chunk)`` pairs.

    With a plant, every decision is forwarded as a level command at its
    decision time, and the plant is advanced to the end of the data.
    """
    def forward(d: Decision):
        plant.command(d.state, d.t)

    hook = forward if plant is not None else None
    if isinstance(source, Recording):
        dec = OnlineDecoder(model, cfg, source.n_channels, source.t0, hook)
        n = source.n_samples
        size = n if chunk_size is None else int(chunk_size)
        for a in range(0, n, size):
            dec.push(source.samples[:, a:a + size], source.t0 + a / source.fs)
        t_end = source.t0 + source.duration
    else:
        dec = None
        t_end = None
        for t_start, chunk in source:
            chunk = np.asarray(chunk)
            if dec is None:
                dec = OnlineDecoder(model, cfg, chunk.shape[0], t_start, hook)
            dec.push(chunk, t_start)
            t_end = dec.expected_time
        if dec is None:
            raise DecoderError("empty stream")
    if plant is not None and t_end is not None:
        plant.advance_to(max(t_end, plant.t))
    return dec.trace()


def decision_times(n_samples: int, fs: float, window: WindowSpec, t0: float = 0.0) -> np.ndarray:
    """Window-end times of every decision a recording of ``n_samples`` yields."""
    count = window.count(n_samples, fs)
    return t0 + (np.arange(count) * window.n_step(fs) + window.n_length(fs)) / fs
