"""
Sliding windows and binned band power.

Offline training and the online decoder both go through :func:`bin_powers`,
so a window produces bitwise-identical band powers on either path.

PSD estimator: one modified periodogram per window (mean removed, Hamming
taper by default), zero-padded to a 0.5 Hz grid, summed over half-open bins
``[f, f + bin_width)``.  When the last bin ends exactly at Nyquist the
Nyquist line is included in it, which makes the full-band sum obey
Parseval.  Power is normalized by the taper energy, so for a rectangular
taper the bins over ``[0, fs/2]`` add up to the (ddof=0) variance of the
window.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import Recording
from .errors import ConfigurationError, DataError, InsufficientDataError

__all__ = [
    "WindowSpec",
    "BinSpec",
    "SpectralSample",
    "slice_windows",
    "window_stack",
    "band_power",
    "bin_powers",
    "restrict_band",
]

GRID_RESOLUTION = 0.5  # Hz


@dataclass(frozen=True)
class WindowSpec:
    length: float = 0.75
    step: float = 0.25

    def __post_init__(self):
        if not 0 < self.step <= self.length:
            raise ConfigurationError(f"window needs 0 < step <= length, got step={self.step}, length={self.length}")

    def n_length(self, fs: float) -> int:
        return int(math.floor(self.length * fs + 1e-9))

    def n_step(self, fs: float) -> int:
        return int(math.floor(self.step * fs + 1e-9))

    def count(self, n_samples: int, fs: float) -> int:
        n_len = self.n_length(fs)
        if n_samples < n_len:
            return 0
        return (n_samples - n_len) // self.n_step(fs) + 1


@dataclass(frozen=True)
class BinSpec:
    f_lo: float = 2.0
    f_hi: float = 40.0
    bin_width: float = 2.0

    def __post_init__(self):
        if not self.bin_width > 0:
            raise ConfigurationError(f"bin_width must be positive, got {self.bin_width}")
        if not 0 <= self.f_lo < self.f_hi:
            raise ConfigurationError(f"need 0 <= f_lo < f_hi, got [{self.f_lo}, {self.f_hi})")
        span = (self.f_hi - self.f_lo) / self.bin_width
        if abs(span - round(span)) > 1e-9:
            raise ConfigurationError(f"[{self.f_lo}, {self.f_hi}) is not a whole number of {self.bin_width} Hz bins")

    @property
    def n_bins(self) -> int:
        return int(round((self.f_hi - self.f_lo) / self.bin_width))

    @property
    def edges(self) -> np.ndarray:
        return self.f_lo + self.bin_width * np.arange(self.n_bins + 1)

    def validate(self, fs: float):
        if self.f_hi > fs / 2 + 1e-9:
            raise ConfigurationError(f"f_hi={self.f_hi} exceeds Nyquist {fs / 2}")
        return self


@dataclass(frozen=True, eq=False)
class SpectralSample:
    """Band power of one window: ``values`` is bins x channels (uV^2)."""

    values: np.ndarray
    window_start: float
    bins: BinSpec

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != self.bins.n_bins:
            raise DataError(f"values shape {v.shape} does not match {self.bins.n_bins} bins")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def vector(self) -> np.ndarray:
        """Row-major flattening of the bins x channels matrix."""
        return self.values.reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, SpectralSample):
            return NotImplemented
        return (
            self.window_start == other.window_start
            and self.bins == other.bins
            and np.array_equal(self.values, other.values)
        )


def slice_windows(rec: Recording, spec: WindowSpec) -> list[tuple[float, np.ndarray]]:
    """Copy out every window; window k starts at ``t0 + k * step``."""
    starts, stack = window_stack(rec.samples, rec.fs, spec)
    return [(rec.t0 + float(s), stack[k].copy()) for k, s in enumerate(starts)]


def window_stack(x: np.ndarray, fs: float, spec: WindowSpec) -> tuple[np.ndarray, np.ndarray]:
    """Read-only strided view of all windows, shape (n_windows, channels, n).

    Returns start offsets in seconds relative to the first sample.
    """
    x = np.asarray(x, dtype=np.float64)
    n_len, n_step = spec.n_length(fs), spec.n_step(fs)
    count = spec.count(x.shape[-1], fs)
    if count == 0:
        raise InsufficientDataError(f"{x.shape[-1] / fs:g} s of data is shorter than one {spec.length:g} s window")
    view = sliding_window_view(x, n_len, axis=-1)[:, ::n_step][:, :count]
    return np.arange(count) * n_step / fs, view.transpose(1, 0, 2)


@lru_cache(maxsize=64)
def _plan(n: int, fs: float, f_lo: float, f_hi: float, bin_width: float, taper: str):
    nfft_base = max(1, int(round(fs / GRID_RESOLUTION)))
    nfft = nfft_base * max(1, math.ceil(n / nfft_base))
    if taper == "hamming":
        w = np.hamming(n) if n > 1 else np.ones(1)
    elif taper in ("rect", "boxcar", "none"):
        w = np.ones(n)
    else:
        raise ConfigurationError(f"unknown taper {taper!r}")
    freqs = np.arange(nfft // 2 + 1) * (fs / nfft)
    weight = np.full(freqs.size, 2.0)
    weight[0] = 1.0
    if nfft % 2 == 0:
        weight[-1] = 1.0
    nyq = fs / 2
    n_bins = int(round((f_hi - f_lo) / bin_width))
    tol = 1e-9 * fs
    slices = []
    for b in range(n_bins):
        lo = f_lo + b * bin_width
        hi = lo + bin_width
        i0 = int(np.searchsorted(freqs, lo - tol, side="left"))
        if b == n_bins - 1 and abs(hi - nyq) <= tol:
            i1 = freqs.size
        else:
            i1 = int(np.searchsorted(freqs, hi - tol, side="left"))
        slices.append((i0, i1))
    lo_idx = min(s[0] for s in slices)
    hi_idx = max(s[1] for s in slices)
    scale = weight[lo_idx:hi_idx] / (nfft * float(np.sum(w * w)))
    rel = tuple((a - lo_idx, b - lo_idx) for a, b in slices)
    return nfft, w, lo_idx, hi_idx, scale, rel


def bin_powers(x: np.ndarray, fs: float, bins: BinSpec, taper: str = "hamming") -> np.ndarray:
    """Binned power of the trailing-axis windows.

    ``x`` has shape (..., channels, n); the result has shape (..., bins, channels).
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n < 2:
        raise InsufficientDataError("a window needs at least 2 samples")
    if not np.isfinite(x).all():
        raise DataError("window contains NaN or Inf")
    bins.validate(fs)
    nfft, w, i0, i1, scale, rel = _plan(n, float(fs), bins.f_lo, bins.f_hi, bins.bin_width, taper)
    centered = x - x.mean(axis=-1, keepdims=True)
    spec = np.fft.rfft(centered * w, n=nfft, axis=-1)[..., i0:i1]
    power = (spec.real ** 2 + spec.imag ** 2) * scale
    out = np.empty(x.shape[:-1] + (len(rel),))
    for b, (a, c) in enumerate(rel):
        out[..., b] = power[..., a:c].sum(axis=-1)
    return np.swapaxes(out, -1, -2)


def band_power(window: np.ndarray, fs: float, bins: BinSpec, window_start: float = 0.0,
               taper: str = "hamming") -> SpectralSample:
    window = np.asarray(window, dtype=np.float64)
    if window.ndim == 1:
        window = window[np.newaxis, :]
    return SpectralSample(bin_powers(window, fs, bins, taper), window_start, bins)


def restrict_band(sample: SpectralSample, f_lo: float, f_hi: float) -> SpectralSample:
    """Sub-matrix of the bins covering ``[f_lo, f_hi)``."""
    bins = sample.bins
    a = (f_lo - bins.f_lo) / bins.bin_width
    b = (f_hi - bins.f_lo) / bins.bin_width
    if abs(a - round(a)) > 1e-9 or abs(b - round(b)) > 1e-9:
        raise ConfigurationError(f"[{f_lo}, {f_hi}) is not aligned to the {bins.bin_width} Hz grid from {bins.f_lo}")
    a, b = int(round(a)), int(round(b))
    if not 0 <= a < b <= bins.n_bins:
        raise ConfigurationError(f"[{f_lo}, {f_hi}) outside the sample range [{bins.f_lo}, {bins.f_hi})")
    sub = BinSpec(float(f_lo), float(f_hi), bins.bin_width)
    return SpectralSample(sample.values[a:b], sample.window_start, sub)


def band_slice(full: BinSpec, f_lo: float, f_hi: float) -> slice:
    """Row slice of ``full`` bins that covers ``[f_lo, f_hi)``."""
    a = int(round((f_lo - full.f_lo) / full.bin_width))
    b = int(round((f_hi - full.f_lo) / full.bin_width))
    return slice(a, b)
