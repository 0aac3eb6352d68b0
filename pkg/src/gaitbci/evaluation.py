"""
Session scoring and statistical controls.

Sessions are scored on a uniform grid ``k * step`` spanning the cue
schedule: the binary cue sequence against the plant's Walking timeline.
Significance comes from a fitted AR(1) null of the single-window
posteriors, pushed through the same decoder state machine and plant.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import CueSchedule, State, time_grid
from .decoder import DecoderConfig, StateTrace, run_posteriors_batch
from .errors import (AlignmentError, ConfigurationError, DataError, DegenerateDataError, FormatError,
                     InsufficientDataError, NumericalError)
from .plant import PlantConfig, PlantLog, simulate_batch, walking_timeline

__all__ = [
    "XCorrResult",
    "cross_correlate",
    "xcorr_curve",
    "xcorr_batch",
    "count_events",
    "ARNullModel",
    "fit_null",
    "simulate_null",
    "simulate_null_batch",
    "MonteCarloResult",
    "monte_carlo_p",
    "empirical_p",
    "CalibrationResult",
    "calibrate",
    "threshold_errors",
    "SessionReport",
    "evaluate_session",
    "state_on_grid",
]

MIN_OVERLAP = 10
HIST_WIDTH = 0.02
REPORT_FORMAT = "gaitbci-session-report"
REPORT_VERSION = 1


# -- cross-correlation -------------------------------------------------------

def _pearson(m, sx, sy, sxx, syy, sxy):
    """Pearson r from raw sums; 0 where either side is constant."""
    vx = m * sxx - sx * sx
    vy = m * syy - sy * sy
    num = m * sxy - sx * sy
    ok = (vx > 0) & (vy > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(ok, num / np.sqrt(np.where(ok, vx * vy, 1.0)), 0.0)
    return np.clip(r, -1.0, 1.0)


def _lag_sums(x: np.ndarray, y: np.ndarray, lag: int):
    """Sums over the overlap of ``x[:n-lag]`` and ``y[lag:]``."""
    n = len(x)
    a, b = x[:n - lag], y[lag:]
    return n - lag, a.sum(), b.sum(), (a * a).sum(), (b * b).sum(), (a * b).sum()


@dataclass(frozen=True, eq=False)
class XCorrResult:
    lags: np.ndarray       # s
    curve: np.ndarray
    max: float
    lag_at_max: float      # s


def _max_lag_steps(n: int, max_lag: float, step: float) -> int:
    if not step > 0 or max_lag < 0:
        raise ConfigurationError("need step > 0 and max_lag >= 0")
    L = int(np.floor(max_lag / step + 1e-9))
    if n - L < MIN_OVERLAP:
        raise InsufficientDataError(
            f"overlap of {n - L} steps at lag {L * step:g} s is shorter than {MIN_OVERLAP}")
    return L


def cross_correlate(cue, response, step: float = 0.25, max_lag: float = 30.0,
                    statistic: str = "pearson") -> XCorrResult:
    """Correlation of ``cue`` with ``response`` delayed by 0..max_lag.

    ``statistic="raw"`` gives the mean product over the overlap instead of
    Pearson's r.  Ties in the maximum resolve to the smallest lag.
    """
    x = np.asarray(cue, dtype=np.float64)
    y = np.asarray(response, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise AlignmentError(f"cue and response shapes differ: {x.shape} vs {y.shape}")
    L = _max_lag_steps(len(x), max_lag, step)
    curve = np.empty(L + 1)
    for lag in range(L + 1):
        m, sx, sy, sxx, syy, sxy = _lag_sums(x, y, lag)
        if statistic == "pearson":
            curve[lag] = _pearson(m, sx, sy, sxx, syy, sxy)
        elif statistic == "raw":
            curve[lag] = sxy / m
        else:
            raise ConfigurationError(f"unknown statistic {statistic!r}")
    k = int(np.argmax(curve))
    return XCorrResult(np.arange(L + 1) * step, curve, float(curve[k]), k * step)


def xcorr_curve(x, y, step: float = 0.25, max_lag: float = 30.0) -> tuple[np.ndarray, np.ndarray]:
    """Two-sided Pearson curve; positive lags delay ``y``, negative lags delay ``x``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    L = _max_lag_steps(len(x), max_lag, step)
    out = np.empty(2 * L + 1)
    for i, lag in enumerate(range(-L, L + 1)):
        sums = _lag_sums(x, y, lag) if lag >= 0 else _lag_sums(y, x, -lag)
        m, sx, sy, sxx, syy, sxy = sums if lag >= 0 else (sums[0], sums[2], sums[1], sums[4], sums[3], sums[5])
        out[i] = _pearson(m, sx, sy, sxx, syy, sxy)
    return np.arange(-L, L + 1) * step, out


def xcorr_batch(cue, responses, step: float = 0.25, max_lag: float = 30.0) -> np.ndarray:
    """Per-row maximum of :func:`cross_correlate` for binary responses.

    Overlap sums of 0/1 data are exact integers in float64, so every value
    equals the scalar path bit for bit.
    """
    x = np.asarray(cue, dtype=np.float64)
    R = np.asarray(responses, dtype=np.float64)
    n = len(x)
    L = _max_lag_steps(n, max_lag, step)
    lags = np.arange(L + 1)
    m = (n - lags).astype(np.float64)
    cx = np.concatenate([[0.0], np.cumsum(x)])
    cxx = np.concatenate([[0.0], np.cumsum(x * x)])
    sx = cx[n - lags]
    sxx = cxx[n - lags]
    # suffix sums of the responses: sum(R[:, lag:])
    tail = np.cumsum(R[:, ::-1], axis=1)[:, ::-1]
    tail_sq = np.cumsum((R * R)[:, ::-1], axis=1)[:, ::-1]
    sy = tail[:, lags]
    syy = tail_sq[:, lags]
    # C[j, lag] = x[j - lag] so (R @ C)[:, lag] = sum_i x[i] R[:, i + lag]
    j = np.arange(n)[:, None] - lags[None, :]
    C = np.where(j >= 0, x[np.maximum(j, 0)], 0.0)
    sxy = R @ C
    curves = _pearson(m, sx, sy, sxx, syy, sxy)
    return curves.max(axis=1)


# -- event accounting --------------------------------------------------------

def count_events(cues: CueSchedule, timeline, step: float = 0.25) -> tuple[int, int, list[float]]:
    """Omissions, false alarms and false-alarm durations (s).

    ``timeline`` is sampled at ``k * step`` and must cover the cue span.
    A false alarm is a Walking onset strictly after the start of an Idle
    epoch and before its end; its duration runs to the end of that Walking
    run or the epoch end, whichever comes first.
    """
    tl = np.asarray(timeline).astype(bool)
    n_expected = len(time_grid(cues.total_duration, step))
    if len(tl) != n_expected:
        raise AlignmentError(f"timeline has {len(tl)} samples, cue span needs {n_expected}")
    t = np.arange(len(tl)) * step
    onset = tl & ~np.concatenate([[False], tl[:-1]])
    edges = cues.boundaries
    omissions, fas, durations = 0, 0, []
    for (state, _), a, b in zip(cues.entries, edges[:-1], edges[1:]):
        inside = (t >= a - 1e-9) & (t < b - 1e-9)
        if state == State.WALK:
            if not tl[inside].any():
                omissions += 1
            continue
        for i in np.flatnonzero(onset & inside & (t > a + 1e-9)):
            fas += 1
            run = i
            while run < len(tl) and tl[run] and t[run] < b - 1e-9:
                run += 1
            durations.append(float((run - i) * step))
    return omissions, fas, durations


# -- AR(1) null model --------------------------------------------------------

@dataclass(frozen=True)
class ARNullModel:
    """``X[k+1] = alpha X[k] + beta W[k]``, ``W ~ U(0,1)``, ``Y = clip(X, 0, 1)``."""

    alpha: float
    beta: float
    mu: float
    rho: float
    sigma2: float = float("nan")   # diagnostic only

    def __post_init__(self):
        if not abs(self.alpha) < 1:
            raise NumericalError(f"unstable AR model: |alpha| = {abs(self.alpha)} >= 1")
        if self.beta < 0:
            raise NumericalError(f"beta must be >= 0, got {self.beta}")

    @classmethod
    def from_moments(cls, mu: float, rho: float, sigma2: float = float("nan")) -> "ARNullModel":
        alpha = rho
        return cls(alpha, 2.0 * mu * (1.0 - alpha), mu, rho, sigma2)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def fit_null(posteriors) -> ARNullModel:
    """Moment-matched AR(1) null: alpha = rho, beta = 2 mu (1 - alpha)."""
    p = np.asarray(posteriors, dtype=np.float64)
    if p.ndim != 1 or len(p) < 100:
        raise InsufficientDataError(f"need at least 100 posteriors, got {p.size}")
    mu = float(p.mean())
    var = float(p.var())
    if not var > 0 or p.min() == p.max():
        raise DegenerateDataError("posterior sequence has zero variance")
    a, b = p[:-1] - p[:-1].mean(), p[1:] - p[1:].mean()
    den = np.sqrt((a * a).sum() * (b * b).sum())
    if not den > 0:
        raise DegenerateDataError("lag-1 autocorrelation undefined (constant half-sequence)")
    rho = float((a * b).sum() / den)
    if not abs(rho) < 1:
        raise NumericalError(f"lag-1 autocorrelation {rho} has |rho| >= 1")
    return ARNullModel.from_moments(mu, rho, var)


def _ar_path(model: ARNullModel, x0: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Unclipped state paths; ``W`` is (trials, n - 1)."""
    n_trials, n1 = W.shape
    X = np.empty((n_trials, n1 + 1))
    X[:, 0] = x0
    for k in range(n1):
        X[:, k + 1] = model.alpha * X[:, k] + model.beta * W[:, k]
    return X


def simulate_null(model: ARNullModel, n: int, rng: np.random.Generator | int = 0,
                  return_state: bool = False):
    """One posterior sequence ``Y`` of length ``n`` (and the unclipped ``X`` if asked)."""
    rng = np.random.default_rng(rng)
    x0 = rng.random()
    W = rng.random(n - 1)
    X = _ar_path(model, np.array([x0]), W[None, :])[0]
    Y = np.clip(X, 0.0, 1.0)
    return (Y, X) if return_state else Y


def simulate_null_batch(model: ARNullModel, n: int, seeds) -> np.ndarray:
    """Rows equal :func:`simulate_null` called with each generator in ``seeds``."""
    gens = [np.random.default_rng(s) for s in seeds]
    x0 = np.empty(len(gens))
    W = np.empty((len(gens), n - 1))
    for i, g in enumerate(gens):
        x0[i] = g.random()
        W[i] = g.random(n - 1)
    return np.clip(_ar_path(model, x0, W), 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class MonteCarloResult:
    p_value: float
    null_max: np.ndarray
    observed: float
    seed: int

    @property
    def n(self) -> int:
        return len(self.null_max)

    def histogram(self, width: float = HIST_WIDTH) -> tuple[np.ndarray, np.ndarray]:
        edges = np.round(np.arange(-1.0, 1.0 + width / 2, width), 10)
        counts, _ = np.histogram(self.null_max, edges)
        return edges[:-1], counts


def empirical_p(observed: float, null_max) -> float:
    """Fraction of null maxima strictly above the observed maximum."""
    null_max = np.asarray(null_max)
    if null_max.size == 0:
        raise InsufficientDataError("empty null distribution")
    return float(np.count_nonzero(null_max > observed) / null_max.size)


def monte_carlo_p(cues: CueSchedule, model: ARNullModel, decoder_cfg: DecoderConfig,
                  plant_cfg: PlantConfig, observed: float, decision_times, *,
                  n: int = 10_000, seed: int = 0, step: float = 0.25, max_lag: float = 30.0,
                  chunk: int = 1000, workers: int = 1) -> MonteCarloResult:
    """Empirical p-value of ``observed`` under the fitted null.

    Each trial draws a posterior sequence at ``decision_times``, runs it
    through the state machine and the plant, and keeps its maximum
    cross-correlation with the cue.  Trial ``i`` uses the ``i``-th child of
    ``SeedSequence(seed)``, so results do not depend on chunking or workers.
    """
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    decision_times = np.asarray(decision_times, dtype=float)
    grid = time_grid(cues.total_duration, step)
    cue = cues.state_at(grid)
    children = np.random.SeedSequence(seed).spawn(n)
    null_max = np.empty(n)

    def run(a: int):
        b = min(a + chunk, n)
        Y = simulate_null_batch(model, len(decision_times), children[a:b])
        states, _ = run_posteriors_batch(Y, decoder_cfg)
        timelines = simulate_batch(states, decision_times, grid, plant_cfg)
        null_max[a:b] = xcorr_batch(cue, timelines, step, max_lag)

    starts = range(0, n, chunk)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            list(ex.map(run, starts))
    else:
        for a in starts:
            run(a)
    return MonteCarloResult(empirical_p(observed, null_max), null_max, float(observed), int(seed))


# -- calibration -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CalibrationResult:
    bin_edges: np.ndarray
    counts_idle: np.ndarray
    counts_walk: np.ndarray
    t_idle: float
    t_walk: float
    swapped: bool = False    # percentiles came out inverted and were swapped

    @property
    def counts(self) -> np.ndarray:
        return self.counts_idle + self.counts_walk

    def dumps(self) -> str:
        lines = ["# gaitbci calibration histogram v1",
                 f"# suggested t_idle={self.t_idle!r} t_walk={self.t_walk!r}",
                 "# bin_lo count count_idle count_walk"]
        for lo, c, ci, cw in zip(self.bin_edges[:-1], self.counts, self.counts_idle, self.counts_walk):
            lines.append(f"{lo:.2f} {c} {ci} {cw}")
        return "\n".join(lines) + "\n"


def _hist(values: np.ndarray, width: float) -> tuple[np.ndarray, np.ndarray]:
    edges = np.round(np.arange(0.0, 1.0 + width / 2, width), 10)
    counts, _ = np.histogram(values, edges)   # last bin is closed, so 1.0 lands in it
    return edges, counts


def calibrate(pbar, phases, width: float = HIST_WIDTH,
              idle_pct: float = 95.0, walk_pct: float = 5.0) -> CalibrationResult:
    """Histogram of P-bar and percentile threshold suggestions.

    T_W is the ``idle_pct`` percentile of Idle-phase P-bar, T_I the
    ``walk_pct`` percentile of Walk-phase P-bar.  When these cross, they
    are swapped so that T_I <= T_W.
    """
    pbar = np.asarray(pbar, dtype=np.float64)
    phases = np.asarray(phases)
    if pbar.shape != phases.shape:
        raise AlignmentError("P-bar and phase labels differ in length")
    if not ((pbar >= 0) & (pbar <= 1)).all():
        raise DataError("P-bar values must lie in [0, 1]")
    idle = pbar[phases == State.IDLE]
    walk = pbar[phases == State.WALK]
    if idle.size == 0 or walk.size == 0:
        raise InsufficientDataError("calibration log needs both Idle and Walk phases")
    edges, ci = _hist(idle, width)
    _, cw = _hist(walk, width)
    t_walk = float(np.percentile(idle, idle_pct))
    t_idle = float(np.percentile(walk, walk_pct))
    swapped = t_idle > t_walk
    if swapped:
        t_idle, t_walk = t_walk, t_idle
    return CalibrationResult(edges, ci, cw, t_idle, t_walk, swapped)


def threshold_errors(raw_posteriors, decision_times, cues: CueSchedule, decoder_cfg: DecoderConfig,
                     plant_cfg: PlantConfig, t_idle, t_walk, step: float = 0.25) -> np.ndarray:
    """Simulated omissions + false alarms for each threshold pair on one posterior log."""
    t_idle = np.atleast_1d(np.asarray(t_idle, dtype=float))
    t_walk = np.atleast_1d(np.asarray(t_walk, dtype=float))
    P = np.broadcast_to(np.asarray(raw_posteriors, dtype=float), (len(t_idle), len(raw_posteriors)))
    states, _ = run_posteriors_batch(P, decoder_cfg, t_idle, t_walk)
    grid = time_grid(cues.total_duration, step)
    timelines = simulate_batch(states, np.asarray(decision_times, dtype=float), grid, plant_cfg)
    out = np.empty(len(t_idle), dtype=int)
    for i, tl in enumerate(timelines):
        om, fa, _ = count_events(cues, tl, step)
        out[i] = om + fa
    return out


# -- session report ----------------------------------------------------------

def state_on_grid(trace: StateTrace, grid, initial: State = State.IDLE) -> np.ndarray:
    """Decoder state holding from each decision until the next one."""
    idx = np.searchsorted(trace.times, np.asarray(grid, dtype=float) + 1e-9, side="right") - 1
    return np.where(idx >= 0, np.asarray(trace.states)[np.maximum(idx, 0)], int(initial)).astype(np.int8)


@dataclass(eq=False)
class SessionReport:
    xcorr_max: float
    lag_at_max: float
    omissions: int
    false_alarms: int
    fa_durations: list[float]
    p_value: float | None = None
    n_mc: int = 0
    null_max: float | None = None
    decoder_xcorr_max: float | None = None
    decoder_lag_at_max: float | None = None
    step: float = 0.25
    max_lag: float = 30.0
    curve: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.p_value is not None and not 0.0 <= self.p_value <= 1.0:
            raise FormatError(f"p_value {self.p_value} outside [0, 1]")
        if self.omissions < 0 or self.false_alarms < 0:
            raise FormatError("event counts must be >= 0")

    @property
    def mean_fa_duration(self) -> float | None:
        return float(np.mean(self.fa_durations)) if self.fa_durations else None

    def with_monte_carlo(self, mc: MonteCarloResult) -> "SessionReport":
        d = self.to_dict()
        d.update(p_value=mc.p_value, n_mc=mc.n, null_max=float(mc.null_max.max()))
        return SessionReport.from_dict(d)

    def table_row(self) -> str:
        """Cross-correlation (lag), omissions, false alarms (mean duration)."""
        fa = f"{self.false_alarms}"
        if self.fa_durations:
            fa += f" ({self.mean_fa_duration:.2f})"
        return f"{self.xcorr_max:.3f} ({self.lag_at_max:.2f})  {self.omissions}  {fa}"

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["curve"] = [float(v) for v in self.curve]
        d["fa_durations"] = [float(v) for v in self.fa_durations]
        return {"format": REPORT_FORMAT, "version": REPORT_VERSION, **d}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "SessionReport":
        d = dict(d)
        if d.pop("format", REPORT_FORMAT) != REPORT_FORMAT:
            raise FormatError("not a session report")
        version = d.pop("version", REPORT_VERSION)
        if version != REPORT_VERSION:
            raise FormatError(f"unsupported session report version {version}")
        return cls(**d)

    @classmethod
    def loads(cls, text: str) -> "SessionReport":
        return cls.from_dict(json.loads(text))


def evaluate_session(cues: CueSchedule, plant_log: PlantLog | None = None, trace: StateTrace | None = None,
                     timeline=None, step: float = 0.25, max_lag: float = 30.0) -> SessionReport:
    """Score one session against its cues.

    The plant Walking timeline is the scored response; pass ``timeline``
    directly to score an arbitrary binary sequence.  With a decoder trace,
    the decoder-state correlation is reported as a diagnostic.
    """
    grid = time_grid(cues.total_duration, step)
    if timeline is None:
        if plant_log is None:
            raise ConfigurationError("need a plant log or a timeline")
        timeline = walking_timeline(plant_log, grid)
    timeline = np.asarray(timeline)
    cue = cues.state_at(grid)
    if len(timeline) != len(grid):
        raise AlignmentError(f"timeline has {len(timeline)} samples, cue span needs {len(grid)}")
    xc = cross_correlate(cue, timeline, step, max_lag)
    om, fa, durations = count_events(cues, timeline, step)
    dec_max = dec_lag = None
    if trace is not None:
        dx = cross_correlate(cue, state_on_grid(trace, grid), step, max_lag)
        dec_max, dec_lag = dx.max, dx.lag_at_max
    return SessionReport(xc.max, xc.lag_at_max, om, fa, durations, None, 0, None, dec_max, dec_lag,
                         step, max_lag, [float(v) for v in xc.curve])
