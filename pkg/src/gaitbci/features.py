"""
Classwise PCA subspaces and 1-D information discriminants.

Each class gets its own PCA subspace.  A datum is routed to the branch
whose subspace Gaussian (in-subspace covariance plus an isotropic residual
term) gives it the higher log-likelihood, projected into that subspace and
reduced to a scalar by the branch's discriminant vector.  The result is a
piecewise-linear map from the flattened bins x channels matrix to R.

The discriminant maximizes a heteroscedastic two-class separability score of
the projected 1-D class distributions,

    J(w) = 1/2 ln(s_avg / sqrt(s_I s_W)) + 1/4 (m_I - m_W)^2 / s_avg,

with ``s_k = w' S_k w``, ``m_k = w' mu_k`` and ``s_avg = (s_I + s_W) / 2``.
J is scale invariant, so it is maximized over the unit sphere by projected
gradient ascent from the LDA direction and a handful of random starts.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import State
from .errors import (
    ConfigurationError,
    DegenerateDataError,
    GeometryError,
    InsufficientDataError,
    NumericalError,
)

__all__ = [
    "ClassSubspace",
    "DiscriminantVector",
    "FeatureExtractor",
    "fit_cpca",
    "fit_discriminant",
    "aida_objective",
    "aida_gradient",
    "lda_direction",
    "fit_feature_extractor",
]

CRITERIA = ("aida", "lda")
BRANCHES = (State.IDLE, State.WALK)


@dataclass(frozen=True, eq=False)
class ClassSubspace:
    label: State
    mean: np.ndarray          # (p,)
    basis: np.ndarray         # (p, m), orthonormal columns
    eigvals: np.ndarray       # (m,), regularized in-subspace variances
    residual_var: float       # per-dimension variance off the subspace
    gauss_1d: tuple[float, float] | None = None

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def project(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X) - self.mean) @ self.basis

    def log_likelihood(self, X: np.ndarray) -> np.ndarray:
        """Subspace Gaussian log-density up to a constant shared by both branches."""
        D = np.atleast_2d(X) - self.mean
        Z = D @ self.basis
        resid = np.einsum("ij,ij->i", D, D) - np.einsum("ij,ij->i", Z, Z)
        resid = np.maximum(resid, 0.0)
        p = self.mean.size
        m = self.dim
        quad = (Z * Z) @ (1.0 / self.eigvals)
        logdet = np.sum(np.log(self.eigvals)) + (p - m) * np.log(self.residual_var)
        return -0.5 * (quad + resid / self.residual_var + logdet)


@dataclass(frozen=True, eq=False)
class DiscriminantVector:
    branch: State
    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if abs(np.linalg.norm(w) - 1.0) > 1e-10:
            raise NumericalError(f"discriminant for {self.branch.label} is not unit norm")


def fit_cpca(X: np.ndarray, y: np.ndarray, kappa: float = 0.9, reg: float = 1e-6) -> dict[State, ClassSubspace]:
    """Per-class PCA subspaces retaining at least ``kappa`` of each class's variance.

    Parameters
    ----------
    X : (n, p) array
        Flattened trials.
    y : (n,) array of 0/1 labels
    kappa : float
        Retained-variance fraction in (0, 1].
    reg : float
        Ridge on the in-subspace eigenvalues and floor on the residual variance,
        both relative to the class's mean per-dimension variance.
    """
    if not 0 < kappa <= 1:
        raise ConfigurationError(f"kappa must be in (0, 1], got {kappa}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2:
        raise GeometryError(f"trials must be a 2-D (n, p) array, got shape {X.shape}")
    p = X.shape[1]
    out = {}
    for label in BRANCHES:
        Xc = X[y == label]
        n = Xc.shape[0]
        if n < 2:
            raise InsufficientDataError(f"class {label.label} has {n} trial(s); need at least 2")
        mean = Xc.mean(axis=0)
        _, s, vt = np.linalg.svd(Xc - mean, full_matrices=False)
        ev = s ** 2 / (n - 1)
        total = float(ev.sum())
        if not total > 0:
            raise DegenerateDataError(f"class {label.label} has zero variance")
        frac = np.cumsum(ev) / total
        m = int(np.searchsorted(frac, kappa - 1e-12) + 1)
        m = max(1, min(m, p, n - 1))
        basis = vt[:m].T.copy()
        floor = reg * total / p
        eigvals = ev[:m] + reg * float(ev[:m].sum()) / m
        resid = (total - float(ev[:m].sum())) / (p - m) if p > m else 0.0
        out[label] = ClassSubspace(label, mean, basis, eigvals, max(resid, floor))
    return out


def _regularized_cov(Z: np.ndarray, reg: float) -> np.ndarray:
    S = np.atleast_2d(np.cov(Z, rowvar=False, bias=True))
    m = S.shape[0]
    tr = np.trace(S)
    if not tr > 0:
        raise NumericalError("projected class covariance has zero trace")
    return S + reg * tr / m * np.eye(m)


def lda_direction(mu_i, mu_w, S_i, S_w, n_i: int, n_w: int) -> np.ndarray:
    """Unit Fisher direction ``pooled^-1 (mu_W - mu_I)``; raises if the means coincide."""
    pooled = (n_i * S_i + n_w * S_w) / (n_i + n_w)
    if np.linalg.norm(mu_w - mu_i) <= 1e-12 * np.sqrt(np.trace(pooled)):
        raise NumericalError("LDA direction is undefined: class means coincide")
    try:
        w = np.linalg.solve(pooled, mu_w - mu_i)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"pooled covariance is singular after regularization: {exc}") from None
    norm = np.linalg.norm(w)
    if not np.isfinite(norm) or norm <= 1e-300:
        raise NumericalError("LDA direction is undefined: class means coincide")
    return w / norm


def aida_objective(w, mu_i, mu_w, S_i, S_w) -> float:
    a = w @ S_i @ w
    b = w @ S_w @ w
    s = 0.5 * (a + b)
    d = w @ (mu_i - mu_w)
    return 0.5 * np.log(s) - 0.25 * np.log(a) - 0.25 * np.log(b) + 0.25 * d * d / s


def aida_gradient(w, mu_i, mu_w, S_i, S_w) -> np.ndarray:
    Siw = S_i @ w
    Sww = S_w @ w
    a = w @ Siw
    b = w @ Sww
    s = 0.5 * (a + b)
    dmu = mu_i - mu_w
    d = w @ dmu
    ds = Siw + Sww
    return (0.5 / s - 0.25 * d * d / (s * s)) * ds - 0.5 * Siw / a - 0.5 * Sww / b + 0.5 * d / s * dmu


def _ascend(w, args, tol: float, max_iter: int):
    w = w / np.linalg.norm(w)
    J = aida_objective(w, *args)
    step = 1.0
    for _ in range(max_iter):
        g = aida_gradient(w, *args)
        g = g - (g @ w) * w
        gn = np.linalg.norm(g)
        if gn < tol:
            break
        # Armijo backtracking along the tangent direction, retracting onto the sphere
        step = min(step * 2.0, 1e6)
        while True:
            cand = w + step * g
            cand /= np.linalg.norm(cand)
            Jc = aida_objective(cand, *args)
            if Jc >= J + 1e-4 * step * gn * gn or step < 1e-14:
                break
            step *= 0.5
        if not Jc >= J:
            break
        improved = Jc - J
        w, J = cand, Jc
        if improved < tol * max(1.0, abs(J)):
            break
    return w, J


def fit_discriminant(Z_idle: np.ndarray, Z_walk: np.ndarray, criterion: str = "aida", *,
                     branch: State = State.IDLE, reg: float = 1e-6, n_random: int = 8,
                     seed: int = 0, tol: float = 1e-8, max_iter: int = 500) -> DiscriminantVector:
    """Fit a unit discriminant vector on two classes of projected trials.

    The sign is fixed so that the Walk class projects above the Idle class
    (or, with equal projected means, so the largest-magnitude entry is positive).
    """
    criterion = criterion.lower()
    if criterion not in CRITERIA:
        raise ConfigurationError(f"criterion must be one of {CRITERIA}, got {criterion!r}")
    Z_idle = np.atleast_2d(np.asarray(Z_idle, dtype=np.float64))
    Z_walk = np.atleast_2d(np.asarray(Z_walk, dtype=np.float64))
    if Z_idle.shape[0] < 2 or Z_walk.shape[0] < 2:
        raise InsufficientDataError("both classes need at least 2 projected trials")
    if Z_idle.shape[1] != Z_walk.shape[1]:
        raise GeometryError("projected classes have different dimensions")
    m = Z_idle.shape[1]
    mu_i, mu_w = Z_idle.mean(axis=0), Z_walk.mean(axis=0)
    S_i, S_w = _regularized_cov(Z_idle, reg), _regularized_cov(Z_walk, reg)
    args = (mu_i, mu_w, S_i, S_w)

    if m == 1:
        w = np.ones(1)
    elif criterion == "lda":
        w = lda_direction(mu_i, mu_w, S_i, S_w, len(Z_idle), len(Z_walk))
    else:
        starts = []
        try:
            starts.append(lda_direction(mu_i, mu_w, S_i, S_w, len(Z_idle), len(Z_walk)))
        except NumericalError:
            pass
        rng = np.random.default_rng([seed, int(branch)])
        starts.extend(rng.standard_normal((n_random, m)))
        best_w, best_J = None, -np.inf
        for w0 in starts:
            w, J = _ascend(w0, args, tol, max_iter)
            if J > best_J:
                best_w, best_J = w, J
        w = best_w
    w = np.asarray(w, dtype=np.float64)
    sep = w @ (mu_w - mu_i)
    if sep < 0 or (sep == 0 and w[np.argmax(np.abs(w))] < 0):
        w = -w
    w = w / np.linalg.norm(w)
    return DiscriminantVector(branch, w)


@dataclass(frozen=True, eq=False)
class FeatureExtractor:
    """Piecewise-linear map from a flattened spectral sample to a scalar."""

    subspaces: dict
    discriminants: dict
    kappa: float = 0.9
    criterion: str = "aida"

    def __post_init__(self):
        if set(self.subspaces) != set(BRANCHES) or set(self.discriminants) != set(BRANCHES):
            raise GeometryError("a feature extractor needs exactly an Idle and a Walk branch")
        p = {s.mean.size for s in self.subspaces.values()}
        if len(p) != 1:
            raise GeometryError("branches were fitted on different geometries")

    @property
    def n_features(self) -> int:
        return self.subspaces[State.IDLE].mean.size

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.n_features:
            raise GeometryError(f"sample has {X.shape[-1]} values, model expects {self.n_features}")
        return X

    def select_branch(self, X: np.ndarray) -> np.ndarray:
        """Branch per row: Walk when its log-likelihood is at least Idle's."""
        X = np.atleast_2d(self._check(X))
        ll_i = self.subspaces[State.IDLE].log_likelihood(X)
        ll_w = self.subspaces[State.WALK].log_likelihood(X)
        return np.where(ll_w >= ll_i, int(State.WALK), int(State.IDLE))

    def project(self, X: np.ndarray, branch: State) -> np.ndarray:
        """Scalar feature of every row through the given branch."""
        X = np.atleast_2d(self._check(X))
        sub = self.subspaces[State(branch)]
        return sub.project(X) @ self.discriminants[State(branch)].w

    def transform(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Features and branches for a batch of rows."""
        X = np.atleast_2d(self._check(X))
        branch = self.select_branch(X)
        f = np.where(branch == State.WALK, self.project(X, State.WALK), self.project(X, State.IDLE))
        return f, branch

    def extract(self, x) -> tuple[float, State]:
        vec = getattr(x, "vector", None)
        vec = self._check(np.asarray(x if vec is None else vec, dtype=np.float64).reshape(-1))
        b = State(int(self.select_branch(vec[np.newaxis])[0]))
        sub = self.subspaces[b]
        f = float(((vec - sub.mean) @ sub.basis) @ self.discriminants[b].w)
        return f, b


def fit_feature_extractor(X: np.ndarray, y: np.ndarray, kappa: float = 0.9, criterion: str = "aida",
                          reg: float = 1e-6, seed: int = 0) -> tuple[FeatureExtractor, dict]:
    """Fit subspaces and discriminants; also return every training trial's feature per branch.

    The second value maps each branch to the (n,) array of training features
    projected through that branch, which the classifier uses for its
    per-branch class Gaussians.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    subspaces = fit_cpca(X, y, kappa, reg)
    discriminants, feats = {}, {}
    for b in BRANCHES:
        Z = subspaces[b].project(X)
        disc = fit_discriminant(Z[y == State.IDLE], Z[y == State.WALK], criterion,
                                branch=b, reg=reg, seed=seed)
        discriminants[b] = disc
        f = Z @ disc.w
        feats[b] = f
        own = f[y == b]
        subspaces[b] = replace(subspaces[b], gauss_1d=(float(own.mean()), float(own.var())))
    return FeatureExtractor(subspaces, discriminants, kappa, criterion), feats
