"""Two-class Gaussian Bayes rule on the scalar feature, one Gaussian pair per branch."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .core import State
from .errors import ConfigurationError, InsufficientDataError

__all__ = ["BayesModel", "posterior", "classify", "fit_bayes"]

_LOG_2PI = np.log(2 * np.pi)


@dataclass(frozen=True, eq=False)
class BayesModel:
    """Class-conditional Gaussians of the feature.

    ``means`` and ``variances`` are indexed ``[branch, class]``; ``priors`` by class.
    """

    means: np.ndarray
    variances: np.ndarray
    priors: np.ndarray

    def __post_init__(self):
        means = np.array(self.means, dtype=np.float64).reshape(2, 2)
        var = np.array(self.variances, dtype=np.float64).reshape(2, 2)
        priors = np.array(self.priors, dtype=np.float64).reshape(2)
        if not (var > 0).all() or not np.isfinite(var).all():
            raise ConfigurationError("feature variances must be positive and finite")
        if (priors < 0).any() or abs(priors.sum() - 1.0) > 1e-12:
            raise ConfigurationError(f"priors must be non-negative and sum to 1, got {priors.tolist()}")
        for a in (means, var, priors):
            a.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", var)
        object.__setattr__(self, "priors", priors)

    @classmethod
    def single(cls, mean_idle, var_idle, mean_walk, var_walk, priors=(0.5, 0.5)) -> "BayesModel":
        """Same Gaussian pair on both branches."""
        row = [[mean_idle, mean_walk], [var_idle, var_walk]]
        return cls([row[0], row[0]], [row[1], row[1]], priors)

    def log_joint(self, f, branch) -> tuple[np.ndarray, np.ndarray]:
        """``log(prior * likelihood)`` for Idle and Walk."""
        f = np.asarray(f, dtype=np.float64)
        b = np.asarray(branch, dtype=np.intp)
        with np.errstate(divide="ignore"):
            log_prior = np.log(self.priors)
        out = []
        for c in (State.IDLE, State.WALK):
            mu = self.means[b, c]
            var = self.variances[b, c]
            out.append(log_prior[c] - 0.5 * (_LOG_2PI + np.log(var) + (f - mu) ** 2 / var))
        return out[0], out[1]


def posterior(f, branch, model: BayesModel):
    """P(Walk | f) computed from the log-odds; P(Idle | f) is ``1 - P(Walk | f)``."""
    li, lw = model.log_joint(f, branch)
    with np.errstate(invalid="ignore"):
        p = expit(lw - li)
    p = np.where(np.isnan(p), 0.5, p)
    return float(p) if np.ndim(p) == 0 else p


def classify(f, branch, model: BayesModel):
    """Idle iff P(Idle|f) > P(Walk|f), Walk otherwise (ties go to Walk)."""
    p_walk = posterior(f, branch, model)
    p_idle = 1.0 - np.asarray(p_walk)
    out = np.where(p_idle > p_walk, int(State.IDLE), int(State.WALK))
    return State(int(out)) if np.ndim(out) == 0 else out


def fit_bayes(features: dict, y: np.ndarray, priors=None) -> BayesModel:
    """Per-branch class means/variances from every training trial's branch feature.

    ``features[b]`` holds all training trials projected through branch ``b``.
    """
    y = np.asarray(y)
    counts = np.array([(y == c).sum() for c in (State.IDLE, State.WALK)], dtype=float)
    if (counts < 2).any():
        raise InsufficientDataError("each class needs at least 2 trials")
    means = np.empty((2, 2))
    var = np.empty((2, 2))
    for b in (State.IDLE, State.WALK):
        f = np.asarray(features[b])
        for c in (State.IDLE, State.WALK):
            fc = f[y == c]
            means[b, c] = fc.mean()
            var[b, c] = fc.var()
    if not (var > 0).all():
        raise InsufficientDataError("a class has zero feature variance on some branch")
    if priors is None:
        priors = counts / counts.sum()
    return BayesModel(means, var, priors)
