"""
Offline trainer: artifact-channel rejection, spatio-spectral trials,
stratified k-fold cross-validation, greedy frequency-band search and the
persisted prediction model.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .classifier import BayesModel, classify, fit_bayes, posterior
from .core import CueSchedule, Recording, label_epochs
from .errors import (
    ConfigurationError,
    DegenerateDataError,
    FormatError,
    InsufficientDataError,
)
from .features import BRANCHES, ClassSubspace, DiscriminantVector, FeatureExtractor, fit_feature_extractor
from .spectral import BinSpec, WindowSpec, band_slice, bin_powers, window_stack

__all__ = [
    "TrainConfig",
    "PredictionModel",
    "reject_channels",
    "extract_trials",
    "stratified_folds",
    "fit_model",
    "cross_validate",
    "search_band",
    "train",
    "MODEL_FORMAT",
    "MODEL_VERSION",
]

log = logging.getLogger(__name__)

MODEL_FORMAT = "gaitbci-prediction-model"
MODEL_VERSION = 1

# boundary moves in tie-break order: lower F_L, raise F_H, raise F_L, lower F_H
_MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))


@dataclass(frozen=True)
class TrainConfig:
    kappa: float = 0.9
    criterion: str = "aida"
    z_var: float = 4.0
    z_kurt: float = 4.0
    seed_band: tuple[float, float] = (6.0, 14.0)
    search_range: tuple[float, float] = (2.0, 40.0)
    bin_width: float = 2.0
    folds: int = 10
    seed: int = 0
    epsilon: float = 0.001
    guard: float = 0.0
    reg: float = 1e-6
    window: WindowSpec = field(default_factory=WindowSpec)
    taper: str = "hamming"

    def __post_init__(self):
        object.__setattr__(self, "seed_band", tuple(float(f) for f in self.seed_band))
        object.__setattr__(self, "search_range", tuple(float(f) for f in self.search_range))
        if isinstance(self.window, dict):
            object.__setattr__(self, "window", WindowSpec(**self.window))
        if self.folds < 2:
            raise ConfigurationError(f"folds: must be >= 2, got {self.folds}")
        if not (self.z_var > 0 and self.z_kurt > 0):
            raise ConfigurationError("z_var/z_kurt: thresholds must be positive")
        if not 0 < self.kappa <= 1:
            raise ConfigurationError(f"kappa: must be in (0, 1], got {self.kappa}")
        if self.criterion.lower() not in ("aida", "lda"):
            raise ConfigurationError(f"criterion: expected 'aida' or 'lda', got {self.criterion!r}")
        lo, hi = self.search_range
        try:
            BinSpec(lo, hi, self.bin_width)
        except ConfigurationError as exc:
            raise ConfigurationError(f"search_range: {exc}") from None
        a, b = self.seed_band
        if not (lo <= a < b <= hi):
            raise ConfigurationError(f"seed_band: [{a}, {b}) outside search range [{lo}, {hi})")
        try:
            BinSpec(a, b, self.bin_width)
        except ConfigurationError as exc:
            raise ConfigurationError(f"seed_band: {exc}") from None
        if abs((a - lo) / self.bin_width - round((a - lo) / self.bin_width)) > 1e-9:
            raise ConfigurationError(f"seed_band: [{a}, {b}) is not aligned to the bin grid")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"{sorted(unknown)[0]}: unknown TrainConfig field")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seed_band"] = list(self.seed_band)
        d["search_range"] = list(self.search_range)
        return d


def _robust_z(v: np.ndarray, what: str) -> np.ndarray:
    med = np.median(v)
    mad = np.median(np.abs(v - med)) * 1.4826
    if not mad > 0:
        raise DegenerateDataError(f"channels have identical {what}; cannot score artifacts")
    return (v - med) / mad


def reject_channels(rec: Recording, z_var: float = 4.0, z_kurt: float = 4.0) -> list[int]:
    """Indices of channels kept after robust z-scoring of log-variance and kurtosis."""
    if rec.n_channels < 2:
        raise InsufficientDataError("channel rejection needs at least 2 channels")
    var = rec.samples.var(axis=1)
    if not (var > 0).all():
        raise DegenerateDataError(f"channel(s) {np.flatnonzero(var <= 0).tolist()} are flat")
    zv = _robust_z(np.log(var), "variance")
    zk = _robust_z(stats.kurtosis(rec.samples, axis=1), "kurtosis")
    keep = (np.abs(zv) <= z_var) & (np.abs(zk) <= z_kurt)
    if not keep.any():
        keep[np.argmin(np.maximum(np.abs(zv) / z_var, np.abs(zk) / z_kurt))] = True
    return np.flatnonzero(keep).tolist()


def extract_trials(rec: Recording, cues: CueSchedule, channels, window: WindowSpec,
                   bins: BinSpec, guard: float = 0.0, taper: str = "hamming"):
    """Slice every labeled epoch into windows and reduce each to band power.

    Returns ``(X, y, starts)`` with ``X`` of shape (n_trials, bins, channels).
    """
    epochs = label_epochs(rec, cues, guard)
    x = rec.samples[list(channels)]
    Xs, ys, ts = [], [], []
    for ep in epochs:
        a = int(round(ep.start * rec.fs))
        b = int(round(ep.end * rec.fs))
        starts, stack = window_stack(x[:, a:b], rec.fs, window)
        Xs.append(bin_powers(stack, rec.fs, bins, taper))
        ys.append(np.full(len(starts), int(ep.label), dtype=np.int8))
        ts.append(rec.t0 + a / rec.fs + starts)
    return np.concatenate(Xs), np.concatenate(ys), np.concatenate(ts)


def stratified_folds(y: np.ndarray, k: int, seed: int = 0) -> np.ndarray:
    """Fold id per trial; each class is shuffled and dealt round-robin into k folds."""
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    folds = np.empty(y.size, dtype=np.intp)
    offset = 0
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        if idx.size < k:
            raise InsufficientDataError(f"class {c} has {idx.size} trials, fewer than {k} folds")
        perm = rng.permutation(idx)
        folds[perm] = (np.arange(idx.size) + offset) % k
        offset += idx.size
    return folds


def fit_model(X: np.ndarray, y: np.ndarray, cfg: TrainConfig, priors=None) -> tuple[FeatureExtractor, BayesModel]:
    """Fit the feature extractor and classifier on flattened trials (n, p)."""
    fx, feats = fit_feature_extractor(X, y, cfg.kappa, cfg.criterion, cfg.reg, cfg.seed)
    return fx, fit_bayes(feats, y, priors)


def predict(X: np.ndarray, fx: FeatureExtractor, bayes: BayesModel) -> np.ndarray:
    f, branch = fx.transform(X)
    return classify(f, branch, bayes)


def cross_validate(X: np.ndarray, y: np.ndarray, cfg: TrainConfig, folds=None) -> tuple[float, float]:
    """Stratified k-fold accuracy ``(mean, sd)``; every fit sees its training folds only."""
    X = np.asarray(X, dtype=np.float64).reshape(len(y), -1)
    y = np.asarray(y)
    if folds is None:
        folds = stratified_folds(y, cfg.folds, cfg.seed)
    acc = []
    for k in range(int(folds.max()) + 1):
        test = folds == k
        fx, bayes = fit_model(X[~test], y[~test], cfg)
        acc.append(float(np.mean(predict(X[test], fx, bayes) == y[test])))
    acc = np.array(acc)
    return float(acc.mean()), float(acc.std(ddof=1))


def search_band(X_full: np.ndarray, y: np.ndarray, full_bins: BinSpec, cfg: TrainConfig, folds=None):
    """Greedy single-boundary hill climbing over ``[F_L, F_H)``.

    ``X_full`` is (n, bins, channels) on ``full_bins``.  Starting from the seed
    band, each round applies the boundary move that most improves CV accuracy;
    the search stops when no move improves by more than ``cfg.epsilon``.

    Returns ``(band, (mean, sd), history)`` where ``history`` lists every
    evaluated ``(band, mean_accuracy)`` in evaluation order.
    """
    if folds is None:
        folds = stratified_folds(y, cfg.folds, cfg.seed)
    w = full_bins.bin_width
    lo_min, hi_max = full_bins.f_lo, full_bins.f_hi
    a, b = cfg.seed_band
    if not (lo_min <= a < b <= hi_max):
        raise ConfigurationError(f"seed band [{a}, {b}) is outside the available bins [{lo_min}, {hi_max})")
    cache: dict[tuple[float, float], tuple[float, float]] = {}
    history = []

    def score(band):
        if band not in cache:
            sl = band_slice(full_bins, *band)
            cache[band] = cross_validate(X_full[:, sl], y, cfg, folds)
            history.append((band, cache[band][0]))
            log.debug("band [%g, %g) -> %.4f", band[0], band[1], cache[band][0])
        return cache[band]

    current = (float(a), float(b))
    best = current
    cur_acc = score(current)[0]
    while True:
        cand_best, cand_acc = None, -np.inf
        for dl, dh in _MOVES:
            lo, hi = current[0] + dl * w, current[1] + dh * w
            if lo < lo_min - 1e-9 or hi > hi_max + 1e-9 or hi - lo < w - 1e-9:
                continue
            acc = score((lo, hi))[0]
            if acc > cand_acc:
                cand_best, cand_acc = (lo, hi), acc
        if cand_best is None or cand_acc <= cur_acc + cfg.epsilon:
            break
        current, cur_acc = cand_best, cand_acc
        if cur_acc > cache[best][0]:
            best = current
    return best, cache[best], history


@dataclass(frozen=True, eq=False)
class PredictionModel:
    retained_channels: tuple[int, ...]
    channel_labels: tuple[str, ...]
    band: tuple[float, float]
    bin_width: float
    window: WindowSpec
    fs: float
    feature_extractor: FeatureExtractor
    bayes: BayesModel
    cv_accuracy: tuple[float, float]
    training_fingerprint: str
    taper: str = "hamming"
    config: dict = field(default_factory=dict)
    n_input_channels: int = 0

    def __post_init__(self):
        if not self.retained_channels:
            raise ConfigurationError("a prediction model needs at least one retained channel")
        if self.n_input_channels <= 0:
            object.__setattr__(self, "n_input_channels", max(self.retained_channels) + 1)
        BinSpec(self.band[0], self.band[1], self.bin_width)
        lo, sd = self.cv_accuracy
        if not 0.0 <= lo <= 1.0:
            raise ConfigurationError(f"cv accuracy {lo} outside [0, 1]")

    @property
    def bins(self) -> BinSpec:
        return BinSpec(self.band[0], self.band[1], self.bin_width)

    def predict_proba(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """P(Walk) and branch for band-power trials shaped (n, bins, channels)."""
        X = np.asarray(X).reshape(len(X), -1)
        f, branch = self.feature_extractor.transform(X)
        return posterior(f, branch, self.bayes), branch

    def to_dict(self) -> dict:
        fx = self.feature_extractor
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "fs": self.fs,
            "n_input_channels": self.n_input_channels,
            "retained_channels": list(self.retained_channels),
            "channel_labels": list(self.channel_labels),
            "band": list(self.band),
            "bin_width": self.bin_width,
            "window": {"length": self.window.length, "step": self.window.step},
            "taper": self.taper,
            "cv_accuracy": {"mean": self.cv_accuracy[0], "sd": self.cv_accuracy[1]},
            "training_fingerprint": self.training_fingerprint,
            "config": self.config,
            "feature_extractor": {
                "kappa": fx.kappa,
                "criterion": fx.criterion,
                "branches": {
                    b.label: {
                        "mean": fx.subspaces[b].mean.tolist(),
                        "basis": fx.subspaces[b].basis.tolist(),
                        "eigvals": fx.subspaces[b].eigvals.tolist(),
                        "residual_var": fx.subspaces[b].residual_var,
                        "gauss_1d": list(fx.subspaces[b].gauss_1d),
                        "w": fx.discriminants[b].w.tolist(),
                    }
                    for b in BRANCHES
                },
            },
            "bayes": {
                "means": self.bayes.means.tolist(),
                "variances": self.bayes.variances.tolist(),
                "priors": self.bayes.priors.tolist(),
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PredictionModel":
        if d.get("format") != MODEL_FORMAT:
            raise FormatError(f"not a prediction model file (format={d.get('format')!r})")
        if d.get("version") != MODEL_VERSION:
            raise FormatError(f"model version {d.get('version')!r} is not supported (expected {MODEL_VERSION})")
        try:
            fxd = d["feature_extractor"]
            subspaces, discs = {}, {}
            for b in BRANCHES:
                e = fxd["branches"][b.label]
                subspaces[b] = ClassSubspace(
                    b,
                    np.array(e["mean"], dtype=np.float64),
                    np.array(e["basis"], dtype=np.float64).reshape(len(e["mean"]), -1),
                    np.array(e["eigvals"], dtype=np.float64),
                    float(e["residual_var"]),
                    tuple(e["gauss_1d"]),
                )
                discs[b] = DiscriminantVector(b, np.array(e["w"], dtype=np.float64))
            fx = FeatureExtractor(subspaces, discs, fxd["kappa"], fxd["criterion"])
            bd = d["bayes"]
            return cls(
                retained_channels=tuple(d["retained_channels"]),
                channel_labels=tuple(d["channel_labels"]),
                band=tuple(d["band"]),
                bin_width=d["bin_width"],
                window=WindowSpec(**d["window"]),
                fs=d["fs"],
                feature_extractor=fx,
                bayes=BayesModel(bd["means"], bd["variances"], bd["priors"]),
                cv_accuracy=(d["cv_accuracy"]["mean"], d["cv_accuracy"]["sd"]),
                training_fingerprint=d["training_fingerprint"],
                taper=d.get("taper", "hamming"),
                config=d.get("config", {}),
                n_input_channels=d["n_input_channels"],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed prediction model: {exc}") from None

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"

    def save(self, path) -> None:
        atomic_write_text(path, self.dumps())

    @classmethod
    def load(cls, path) -> "PredictionModel":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(d)


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary file in the same directory so readers never see a partial file."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fingerprint(rec: Recording, cues: CueSchedule, cfg: TrainConfig) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(rec.samples).tobytes())
    h.update(json.dumps({"fs": rec.fs, "t0": rec.t0, "labels": list(rec.channel_labels)}).encode())
    h.update(json.dumps([[int(s), d] for s, d in cues.entries]).encode())
    h.update(json.dumps(cfg.to_dict(), sort_keys=True).encode())
    return h.hexdigest()


def train(rec: Recording, cues: CueSchedule, cfg: TrainConfig | None = None) -> PredictionModel:
    """Channel rejection, band search, then a final fit on every trial in the chosen band."""
    cfg = cfg or TrainConfig()
    channels = reject_channels(rec, cfg.z_var, cfg.z_kurt)
    log.info("retained %d/%d channels", len(channels), rec.n_channels)
    full = BinSpec(cfg.search_range[0], min(cfg.search_range[1], rec.fs / 2), cfg.bin_width)
    X, y, _ = extract_trials(rec, cues, channels, cfg.window, full, cfg.guard, cfg.taper)
    folds = stratified_folds(y, cfg.folds, cfg.seed)
    band, acc, _ = search_band(X, y, full, cfg, folds)
    log.info("band [%g, %g) Hz, CV accuracy %.3f +/- %.3f", band[0], band[1], *acc)
    Xb = X[:, band_slice(full, *band)].reshape(len(y), -1)
    fx, bayes = fit_model(Xb, y, cfg)
    return PredictionModel(
        retained_channels=tuple(channels),
        channel_labels=tuple(rec.channel_labels[i] for i in channels),
        band=band,
        bin_width=cfg.bin_width,
        window=cfg.window,
        fs=rec.fs,
        feature_extractor=fx,
        bayes=bayes,
        cv_accuracy=acc,
        training_fingerprint=fingerprint(rec, cues, cfg),
        taper=cfg.taper,
        config=cfg.to_dict(),
        n_input_channels=rec.n_channels,
    )
