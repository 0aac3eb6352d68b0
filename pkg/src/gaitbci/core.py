"""
Recordings, cue schedules, labeled epochs and the synthetic EEG generator.

The generator stands in for a human subject: every channel carries 1/f
background noise, and a set of "active" channels additionally carries a
mu-like rhythm: a sinusoid at a fixed per-channel frequency inside
``erd_band`` with slow random amplitude modulation.  During Walk cues the whole ``erd_band`` content
of the active channels is attenuated in amplitude by ``sqrt(1 - erd_depth)``
so that band power drops by ``(1 - erd_depth)``, a crude model of
event-related desynchronization.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import AlignmentError, ConfigurationError, DataError

__all__ = [
    "State",
    "Recording",
    "CueSchedule",
    "LabeledEpoch",
    "SynthConfig",
    "channel_gains",
    "generate_synthetic",
    "label_epochs",
]


class State(enum.IntEnum):
    """Binary behavioural state; also used as the class label."""

    IDLE = 0
    WALK = 1

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def parse(cls, value) -> "State":
        if isinstance(value, State):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        key = str(value).strip().upper()
        if key in cls.__members__:
            return cls[key]
        raise ConfigurationError(f"unknown state {value!r}; expected Idle or Walk")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Recording:
    """Multichannel time series, channels x samples, in microvolts."""

    samples: np.ndarray
    fs: float
    channel_labels: tuple[str, ...] = ()
    t0: float = 0.0

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64, copy=True)
        if x.ndim == 1:
            x = x[np.newaxis, :]
        if x.ndim != 2:
            raise DataError(f"samples must be 2-D (channels x time), got shape {x.shape}")
        if not np.isfinite(x).all():
            raise DataError("recording contains NaN or Inf samples")
        if not self.fs > 0:
            raise ConfigurationError(f"fs must be positive, got {self.fs}")
        labels = tuple(self.channel_labels) or tuple(f"EEG{i + 1:02d}" for i in range(x.shape[0]))
        if len(labels) != x.shape[0]:
            raise DataError(f"{len(labels)} channel labels for {x.shape[0]} channels")
        object.__setattr__(self, "samples", _frozen(x))
        object.__setattr__(self, "fs", float(self.fs))
        object.__setattr__(self, "channel_labels", labels)
        object.__setattr__(self, "t0", float(self.t0))

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.fs

    def select(self, channels: Sequence[int]) -> "Recording":
        idx = list(channels)
        return Recording(self.samples[idx], self.fs, tuple(self.channel_labels[i] for i in idx), self.t0)

    def __eq__(self, other):
        if not isinstance(other, Recording):
            return NotImplemented
        return (
            self.fs == other.fs
            and self.t0 == other.t0
            and self.channel_labels == other.channel_labels
            and self.samples.shape == other.samples.shape
            and np.array_equal(self.samples, other.samples)
        )


@dataclass(frozen=True)
class CueSchedule:
    """Ordered ``(state, duration_s)`` cue entries starting at t = 0."""

    entries: tuple[tuple[State, float], ...]

    def __post_init__(self):
        entries = tuple((State.parse(s), float(d)) for s, d in self.entries)
        for s, d in entries:
            if not d > 0:
                raise ConfigurationError(f"cue duration must be positive, got {d}")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def alternating(cls, n_epochs: int, duration: float, first: State = State.IDLE) -> "CueSchedule":
        first = State.parse(first)
        return cls(tuple((State((int(first) + i) % 2), duration) for i in range(n_epochs)))

    @classmethod
    def training(cls) -> "CueSchedule":
        """10 min of alternating 30 s Idle/Walk cues, Idle first."""
        return cls.alternating(20, 30.0)

    @classmethod
    def session(cls) -> "CueSchedule":
        """5 alternating 1-min cues, Idle first (online evaluation protocol)."""
        return cls.alternating(5, 60.0)

    def __len__(self):
        return len(self.entries)

    @property
    def total_duration(self) -> float:
        return float(sum(d for _, d in self.entries))

    @property
    def boundaries(self) -> np.ndarray:
        """Cumulative cue edges, length ``len(self) + 1`` starting at 0."""
        return np.concatenate([[0.0], np.cumsum([d for _, d in self.entries])])

    def count(self, state: State) -> int:
        return sum(1 for s, _ in self.entries if s == state)

    def state_at(self, times) -> np.ndarray:
        """Cue state (0/1) at each time; times past the end hold the last cue."""
        edges = self.boundaries
        states = np.array([int(s) for s, _ in self.entries], dtype=np.int8)
        idx = np.searchsorted(edges, np.asarray(times, dtype=float), side="right") - 1
        return states[np.clip(idx, 0, len(states) - 1)]

    def sampled(self, step: float, t_end: float | None = None) -> np.ndarray:
        """Binary cue sequence on the grid ``k * step`` over ``[0, t_end)``."""
        t_end = self.total_duration if t_end is None else t_end
        return self.state_at(time_grid(t_end, step))


def time_grid(t_end: float, step: float) -> np.ndarray:
    """Sample times ``k * step`` for ``k * step < t_end`` (with a 1e-9 guard)."""
    n = int(np.floor(t_end / step + 1e-9))
    return np.arange(n) * step


@dataclass(frozen=True)
class LabeledEpoch:
    label: State
    start: float
    end: float

    def __post_init__(self):
        if not self.end > self.start:
            raise AlignmentError(f"epoch end {self.end} must exceed start {self.start}")

    @property
    def duration(self) -> float:
        return self.end - self.start


def label_epochs(rec: Recording, cues: CueSchedule, guard: float = 0.0) -> list[LabeledEpoch]:
    """One labeled epoch per cue entry, optionally trimmed by ``guard`` seconds at both ends."""
    if len(cues) == 0:
        raise AlignmentError("cue schedule is empty")
    if guard < 0:
        raise ConfigurationError(f"guard must be >= 0, got {guard}")
    total = cues.total_duration
    if total > rec.duration + 0.5 / rec.fs:
        raise AlignmentError(f"cue schedule ({total:g} s) is longer than the recording ({rec.duration:g} s)")
    edges = cues.boundaries
    epochs = []
    for (state, _), a, b in zip(cues.entries, edges[:-1], edges[1:]):
        if b - a <= 2 * guard:
            raise AlignmentError(f"guard {guard:g} s consumes the whole {b - a:g} s cue at t={a:g}")
        epochs.append(LabeledEpoch(state, float(a + guard), float(b - guard)))
    return epochs


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic subject.

    ``mu_snr`` is the power ratio of the narrowband rhythm to the background
    inside ``erd_band`` on active channels.  ``gain_spread`` (log-normal sigma)
    and ``montage_seed`` fix per-channel gains, which belong to the simulated
    subject and therefore do not change with the noise ``seed``.
    """

    n_channels: int = 64
    fs: float = 256.0
    active_channels: tuple[int, ...] = (8, 9, 10, 11, 12)
    erd_band: tuple[float, float] = (8.0, 12.0)
    erd_depth: float = 0.6
    noise_exponent: float = 1.0
    amplitude_scale: float = 10.0
    seed: int = 0
    mu_snr: float = 6.0
    gain_spread: float = 0.25
    montage_seed: int = 0
    am_depth: float = 0.2
    am_cutoff: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "active_channels", tuple(int(c) for c in self.active_channels))
        object.__setattr__(self, "erd_band", tuple(float(f) for f in self.erd_band))
        self.validate()

    def validate(self):
        lo, hi = self.erd_band
        if self.n_channels < 1:
            raise ConfigurationError("n_channels: must be >= 1")
        if not self.fs > 0:
            raise ConfigurationError("fs: must be positive")
        if not 0 < lo < hi < self.fs / 2:
            raise ConfigurationError(f"erd_band: ({lo}, {hi}) must lie inside (0, {self.fs / 2}) Hz")
        if not 0.0 <= self.erd_depth <= 1.0:
            raise ConfigurationError(f"erd_depth: {self.erd_depth} not in [0, 1]")
        bad = [c for c in self.active_channels if not 0 <= c < self.n_channels]
        if bad:
            raise ConfigurationError(f"active_channels: indices {bad} outside [0, {self.n_channels})")
        if not self.amplitude_scale > 0:
            raise ConfigurationError("amplitude_scale: must be positive")
        if self.mu_snr < 0 or self.gain_spread < 0:
            raise ConfigurationError("mu_snr/gain_spread: must be >= 0")
        if not 0 <= self.am_depth < 1:
            raise ConfigurationError(f"am_depth: {self.am_depth} not in [0, 1)")
        if not 0 < self.am_cutoff < self.fs / 2:
            raise ConfigurationError("am_cutoff: must lie inside (0, fs/2)")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"{sorted(unknown)[0]}: unknown SynthConfig field")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def channel_gains(cfg: SynthConfig) -> np.ndarray:
    rng = np.random.default_rng(cfg.montage_seed)
    return np.exp(cfg.gain_spread * rng.standard_normal(cfg.n_channels))


def _noise_shape(freqs: np.ndarray, exponent: float) -> np.ndarray:
    # amplitude shaping; flat below 1 Hz so the DC end stays bounded
    shape = np.maximum(freqs, 1.0) ** (-exponent / 2.0)
    shape[0] = 0.0
    return shape


def _slow_modulation(rng, k: int, n: int, fs: float, cutoff: float, depth: float) -> np.ndarray:
    """k low-pass Gaussian envelopes with standard deviation ``depth``, clipped above -1."""
    spec = np.fft.rfft(rng.standard_normal((k, n)), axis=1)
    spec[:, np.fft.rfftfreq(n, 1.0 / fs) >= cutoff] = 0.0
    spec[:, 0] = 0.0
    m = np.fft.irfft(spec, n=n, axis=1)
    sd = m.std(axis=1, keepdims=True)
    m = m / np.where(sd > 0, sd, 1.0) * depth
    return np.maximum(m, -0.95)


def generate_synthetic(cfg: SynthConfig, cues: CueSchedule) -> Recording:
    """Synthesize a recording whose duration equals the cue total."""
    cfg.validate()
    if len(cues) == 0:
        raise AlignmentError("cue schedule is empty")
    fs = cfg.fs
    n = int(round(cues.total_duration * fs))
    t = np.arange(n) / fs
    rng = np.random.default_rng(cfg.seed)
    gains = channel_gains(cfg)

    freqs = np.fft.rfftfreq(n, 1.0 / fs)
    shape = _noise_shape(freqs, cfg.noise_exponent)
    lo, hi = cfg.erd_band
    in_band = (freqs >= lo) & (freqs < hi)
    band_frac = np.sum(shape[in_band] ** 2) / np.sum(shape ** 2)

    white = rng.standard_normal((cfg.n_channels, n))
    spec = np.fft.rfft(white, axis=1) * shape
    noise = np.fft.irfft(spec, n=n, axis=1)
    sd = noise.std(axis=1)
    noise /= sd[:, None]
    scale = cfg.amplitude_scale * gains
    out = noise * scale[:, None]

    walking = cues.state_at(t) == State.WALK
    envelope = np.where(walking, np.sqrt(1.0 - cfg.erd_depth), 1.0)

    am = _slow_modulation(rng, len(cfg.active_channels), n, fs, cfg.am_cutoff, cfg.am_depth)
    quarter = (hi - lo) / 4
    for k, c in enumerate(cfg.active_channels):
        band = np.fft.irfft(np.where(in_band, spec[c], 0.0), n=n) * (scale[c] / sd[c])
        f0 = rng.uniform(lo + quarter, hi - quarter)
        phase = rng.uniform(0.0, 2 * np.pi)
        osc_power = cfg.mu_snr * band_frac * scale[c] ** 2
        amp = np.sqrt(2.0 * osc_power / (1.0 + cfg.am_depth ** 2))
        osc = amp * (1.0 + am[k]) * np.sin(2 * np.pi * f0 * t + phase)
        out[c] = (out[c] - band) + envelope * (band + osc)

    return Recording(out, fs, tuple(f"EEG{i + 1:02d}" for i in range(cfg.n_channels)), 0.0)
