"""Per-class Gaussian mixtures over flattened trajectories.

A trajectory of ``T`` points is flattened to ``[x_1, y_1, ..., x_T, y_T]``.
Each homotopy class gets its own full-covariance mixture; predictions
condition every component on noisy position measurements and reweight it
by the class posterior and the measurement marginal likelihood.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from . import FORMAT_VERSION
from .errors import AllZeroWeights, DegenerateData, NumericalFailure, SingularCovariance
from .topology import Word

log = logging.getLogger(__name__)

LOG_2PI = math.log(2 * math.pi)
DEFAULT_SIGMA_Y = 0.1
DEFAULT_REL_REG = 1e-6
DEFAULT_MAX_COMPONENTS = 5


def word_key(h: Word):
    """Canonical class ordering: shorter first, then lexicographic."""
    return (len(h), tuple(h))


@dataclass(frozen=True)
class GaussianComponent:
    mean: np.ndarray
    cov: np.ndarray


@dataclass
class Gmm:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    log_likelihood_history: list[float] = field(default_factory=list, compare=False)
    converged: bool = field(default=True, compare=False)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def component(self, c: int) -> GaussianComponent:
        return GaussianComponent(self.means[c], self.covariances[c])

    def components(self) -> list[GaussianComponent]:
        return [self.component(c) for c in range(self.n_components)]

    def log_pdf(self, X: np.ndarray) -> np.ndarray:
        """Per-point mixture log-density."""
        X = np.atleast_2d(X)
        lp = np.column_stack(
            [math.log(w) + gaussian_log_pdf(X, m, S) if w > 0 else np.full(len(X), -np.inf)
             for w, m, S in zip(self.weights, self.means, self.covariances)]
        )
        return logsumexp(lp, axis=1)

    def score(self, X: np.ndarray) -> float:
        return float(self.log_pdf(X).sum())

    def n_parameters(self) -> int:
        k, d = self.n_components, self.dim
        return (k - 1) + k * d + k * d * (d + 1) // 2

    def bic(self, X: np.ndarray) -> float:
        return -2.0 * self.score(X) + self.n_parameters() * math.log(len(X))

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Gmm":
        return cls(
            weights=np.array(d["weights"], dtype=float),
            means=np.array(d["means"], dtype=float),
            covariances=np.array(d["covariances"], dtype=float),
        )

    def save(self, path, T: int | None = None, sigma_y: float | None = None) -> None:
        doc = {"format_version": FORMAT_VERSION, "kind": "gmm", "T": T, "sigma_y": sigma_y, **self.to_dict()}
        Path(path).write_text(json.dumps(doc) + "\n")

    @classmethod
    def load(cls, path) -> "Gmm":
        doc = json.loads(Path(path).read_text())
        if doc.get("format_version") != FORMAT_VERSION or doc.get("kind") != "gmm":
            raise ValueError(f"{path} is not a supported GMM document")
        return cls.from_dict(doc)


def _cholesky(S: np.ndarray, what: str = "covariance") -> np.ndarray:
    try:
        return linalg.cholesky(S, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise NumericalFailure(f"{what} is not positive definite") from exc


def gaussian_log_pdf(X: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Row-wise log N(x | mean, cov) via Cholesky."""
    X = np.atleast_2d(X)
    L = _cholesky(cov)
    z = linalg.solve_triangular(L, (X - mean).T, lower=True, check_finite=False)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return -0.5 * (X.shape[1] * LOG_2PI + logdet + np.sum(z * z, axis=0))


def default_reg(X: np.ndarray, rel: float = DEFAULT_REL_REG) -> float:
    """Covariance ridge scaled to the data's mean per-dimension variance."""
    scale = float(np.mean(np.var(X, axis=0))) if len(X) > 1 else 0.0
    return rel * (scale if scale > 0 else 1.0)


def _kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    idx = [int(rng.integers(n))]
    d2 = np.sum((X - X[idx[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            i = int(rng.choice(n, p=d2 / total))
        else:
            i = int(rng.integers(n))
        idx.append(i)
        d2 = np.minimum(d2, np.sum((X - X[i]) ** 2, axis=1))
    return X[idx].copy()


def fit_em(
    data: np.ndarray,
    k: int,
    reg: float | None = None,
    tol: float = 1e-6,
    max_iter: int = 200,
    seed: int | np.random.SeedSequence = 0,
) -> Gmm:
    """Fit a full-covariance mixture with EM.

    Means are seeded k-means++ style; every M-step adds ``reg * I`` to each
    covariance.  Iteration stops once the mean per-point log-likelihood
    improves by less than ``tol``.  ``log_likelihood_history`` holds the
    total log-likelihood before each M-step (plus the final value).
    """
    X = np.asarray(data, dtype=float)
    if X.ndim != 2:
        raise ValueError("data must be an (N, D) array")
    n, d = X.shape
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k:
        raise DegenerateData(f"{n} points cannot support {k} components")
    reg = default_reg(X) if reg is None else reg
    if reg <= 0:
        raise ValueError("reg must be positive")
    rng = np.random.default_rng(seed)
    ridge = reg * np.eye(d)

    means = _kmeans_pp(X, k, rng)
    shared = np.cov(X, rowvar=False, bias=True).reshape(d, d) + ridge
    covs = np.repeat(shared[None], k, axis=0)
    weights = np.full(k, 1.0 / k)

    history: list[float] = []
    prev = -np.inf
    converged = False
    for _ in range(max_iter):
        log_prob = _weighted_log_prob(X, weights, means, covs)
        ll_point = logsumexp(log_prob, axis=1)
        ll = float(ll_point.sum())
        history.append(ll)
        if ll / n - prev < tol:
            converged = True
            break
        prev = ll / n
        resp = np.exp(log_prob - ll_point[:, None])
        weights, means, covs = _m_step(X, resp, ridge)
    else:
        history.append(float(logsumexp(_weighted_log_prob(X, weights, means, covs), axis=1).sum()))
    if not converged:
        warnings.warn(f"EM did not converge in {max_iter} iterations", RuntimeWarning, stacklevel=2)
    return Gmm(weights, means, covs, log_likelihood_history=history, converged=converged)


def _weighted_log_prob(X, weights, means, covs) -> np.ndarray:
    cols = []
    for w, m, S in zip(weights, means, covs):
        if w <= 0:
            cols.append(np.full(len(X), -np.inf))
            continue
        try:
            cols.append(math.log(w) + gaussian_log_pdf(X, m, S))
        except NumericalFailure as exc:
            raise SingularCovariance("component covariance lost definiteness despite regularisation") from exc
    return np.column_stack(cols)


def _m_step(X, resp, ridge):
    nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
    weights = nk / len(X)
    means = (resp.T @ X) / nk[:, None]
    covs = np.empty((len(nk),) + ridge.shape)
    for c in range(len(nk)):
        diff = X - means[c]
        S = (resp[:, c, None] * diff).T @ diff / nk[c]
        covs[c] = 0.5 * (S + S.T) + ridge
    return weights, means, covs


def select_components_bic(
    data: np.ndarray,
    max_components: int = DEFAULT_MAX_COMPONENTS,
    reg: float | None = None,
    tol: float = 1e-6,
    max_iter: int = 200,
    seed: int | np.random.SeedSequence = 0,
) -> Gmm:
    """Fit k = 1..max_components and keep the lowest-BIC mixture."""
    X = np.asarray(data, dtype=float)
    best, best_bic = None, np.inf
    for k in range(1, min(max_components, len(X)) + 1):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            g = fit_em(X, k, reg=reg, tol=tol, max_iter=max_iter, seed=seed)
        b = g.bic(X)
        if b < best_bic:
            best, best_bic = g, b
    return best


def _class_seed(seed: int, h: Word) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, len(h), *(2 * abs(a) + (a < 0) for a in h)])


@dataclass
class HierarchicalGmm:
    per_class: dict[Word, Gmm]
    T: int
    sigma_y: float = DEFAULT_SIGMA_Y

    @property
    def classes(self) -> list[Word]:
        return sorted(self.per_class, key=word_key)

    def total_components(self) -> int:
        return sum(g.n_components for g in self.per_class.values())

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "hierarchical_gmm",
            "T": self.T,
            "sigma_y": self.sigma_y,
            "classes": [{"h": list(h), **self.per_class[h].to_dict()} for h in self.classes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HierarchicalGmm":
        if d.get("format_version") != FORMAT_VERSION or d.get("kind") != "hierarchical_gmm":
            raise ValueError("not a supported hierarchical GMM document")
        per_class = {tuple(c["h"]): Gmm.from_dict(c) for c in d["classes"]}
        return cls(per_class, T=int(d["T"]), sigma_y=float(d["sigma_y"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "HierarchicalGmm":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_hierarchical(
    dataset: Mapping[Word, np.ndarray],
    components_per_class: int | str = "bic",
    reg: float | None = None,
    tol: float = 1e-6,
    max_iter: int = 200,
    seed: int = 0,
    sigma_y: float = DEFAULT_SIGMA_Y,
    max_components: int = DEFAULT_MAX_COMPONENTS,
) -> HierarchicalGmm:
    """One mixture per class key.

    ``components_per_class`` is a fixed count (lowered to the class size
    when needed) or ``"bic"``.  Each class is seeded from ``seed`` and its
    key only, so the fit does not depend on class order.
    """
    per_class: dict[Word, Gmm] = {}
    dims = set()
    for h in sorted(dataset, key=word_key):
        X = np.asarray(dataset[h], dtype=float)
        if len(X) == 0:
            warnings.warn(f"class {h} has no trajectories; skipped", RuntimeWarning, stacklevel=2)
            continue
        X = X.reshape(len(X), -1)
        dims.add(X.shape[1])
        ss = _class_seed(seed, tuple(h))
        if components_per_class == "bic":
            per_class[tuple(h)] = select_components_bic(X, max_components, reg, tol, max_iter, ss)
        else:
            k = min(int(components_per_class), len(X))
            per_class[tuple(h)] = fit_em(X, k, reg, tol, max_iter, ss)
    if len(dims) > 1:
        raise ValueError(f"classes have different trajectory dimensions: {sorted(dims)}")
    if not per_class:
        raise DegenerateData("no non-empty classes to fit")
    return HierarchicalGmm(per_class, T=dims.pop() // 2, sigma_y=sigma_y)


# -- conditioning --------------------------------------------------------


@dataclass(frozen=True)
class Observation:
    """Measured positions at 1-based time indices."""

    positions: np.ndarray
    time_indices: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        idx = np.asarray(self.time_indices, dtype=int).reshape(-1)
        if len(pos) != len(idx):
            raise ValueError("positions and time indices differ in length")
        if np.any(np.diff(idx) <= 0):
            raise ValueError("time indices must be strictly increasing")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "time_indices", idx)

    @classmethod
    def prefix(cls, points: np.ndarray) -> "Observation":
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        return cls(points, np.arange(1, len(points) + 1))

    def __len__(self) -> int:
        return len(self.time_indices)

    def dims(self) -> np.ndarray:
        i = 2 * (self.time_indices - 1)
        return np.column_stack([i, i + 1]).reshape(-1)

    def values(self) -> np.ndarray:
        return self.positions.reshape(-1)


def condition_gaussian(
    mean: np.ndarray, cov: np.ndarray, obs_dims: Sequence[int], y: np.ndarray, noise_var: float
) -> tuple[np.ndarray, np.ndarray, float]:
    """Condition N(mean, cov) on ``y = x[obs_dims] + noise``.

    Returns the conditional mean and covariance of the full vector and the
    marginal log-likelihood log N(y | mean_O, cov_OO + noise_var I).
    """
    obs_dims = np.asarray(obs_dims, dtype=int)
    if len(obs_dims) == 0:
        return mean.copy(), cov.copy(), 0.0
    y = np.asarray(y, dtype=float)
    S = cov[np.ix_(obs_dims, obs_dims)] + noise_var * np.eye(len(obs_dims))
    L = _cholesky(S, "observed covariance block plus noise")
    resid = y - mean[obs_dims]
    cross = cov[:, obs_dims]
    # gain = cross S^-1, applied through the triangular factor
    A = linalg.solve_triangular(L, cross.T, lower=True, check_finite=False)
    z = linalg.solve_triangular(L, resid, lower=True, check_finite=False)
    cmean = mean + A.T @ z
    ccov = cov - A.T @ A
    ccov = 0.5 * (ccov + ccov.T)
    loglik = -0.5 * (len(y) * LOG_2PI + 2.0 * np.sum(np.log(np.diag(L))) + z @ z)
    return cmean, ccov, float(loglik)


def condition_component(
    comp: GaussianComponent, obs: Observation, sigma_y: float
) -> tuple[np.ndarray, np.ndarray, float]:
    T = len(comp.mean) // 2
    if len(obs) and (obs.time_indices[0] < 1 or obs.time_indices[-1] > T):
        raise ValueError(f"observation indices outside 1..{T}")
    return condition_gaussian(comp.mean, comp.cov, obs.dims(), obs.values(), sigma_y**2)


@dataclass
class PredictionTerm:
    h: Word | None
    c: int
    weight: float
    mean: np.ndarray
    cov: np.ndarray


@dataclass
class Prediction:
    terms: list[PredictionTerm]
    fallback: bool = False

    @property
    def weights(self) -> np.ndarray:
        return np.array([t.weight for t in self.terms])

    def weight_map(self) -> dict[tuple, float]:
        return {(t.h, t.c): t.weight for t in self.terms}

    def best(self) -> PredictionTerm:
        """Highest-weight term; ties go to the earliest (h, c)."""
        return self.terms[int(np.argmax(self.weights))]

    def to_dict(self) -> dict:
        return {
            "fallback": self.fallback,
            "terms": [
                {
                    "h": None if t.h is None else list(t.h),
                    "c": t.c,
                    "weight": t.weight,
                    "mean": t.mean.tolist(),
                    "cov": t.cov.tolist(),
                }
                for t in self.terms
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Prediction":
        terms = [
            PredictionTerm(
                None if t["h"] is None else tuple(t["h"]),
                int(t["c"]),
                float(t["weight"]),
                np.array(t["mean"], dtype=float),
                np.array(t["cov"], dtype=float),
            )
            for t in d["terms"]
        ]
        return cls(terms, fallback=bool(d.get("fallback", False)))


def _predict_terms(entries: Iterable[tuple], obs: Observation, sigma_y: float) -> Prediction:
    """``entries`` yields (h, c, log prior weight, component)."""
    raw = []
    for h, c, log_prior, comp in entries:
        cmean, ccov, ll = condition_component(comp, obs, sigma_y)
        raw.append((h, c, log_prior, ll, cmean, ccov))
    log_w = np.array([lp + ll for _, _, lp, ll, _, _ in raw])
    fallback = False
    if not np.any(np.isfinite(log_w)):
        log_w = np.array([lp for _, _, lp, _, _, _ in raw])
        fallback = True
        if not np.any(np.isfinite(log_w)):
            raise AllZeroWeights("every mixture term has zero prior weight")
        log.warning("all conditioned weights vanished; falling back to prior weights")
    w = np.exp(log_w - logsumexp(log_w))
    terms = [PredictionTerm(h, c, float(wi), m, S) for (h, c, _, _, m, S), wi in zip(raw, w)]
    return Prediction(terms, fallback=fallback)


def _log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def predict(model: HierarchicalGmm, obs: Observation, class_posterior: Mapping[Word, float]) -> Prediction:
    """Mixture over every (class, component) conditioned on ``obs``.

    Each term is weighted by its mixture weight, the class posterior and the
    marginal likelihood of the measurements, normalised in log space.
    """
    unknown = set(map(tuple, class_posterior)) - set(model.per_class)
    if unknown:
        raise ValueError(f"posterior has classes the model lacks: {sorted(unknown, key=word_key)}")
    post = {tuple(h): p for h, p in class_posterior.items()}

    def entries():
        for h in model.classes:
            g = model.per_class[h]
            for c in range(g.n_components):
                yield h, c, _log(g.weights[c]) + _log(post.get(h, 0.0)), g.component(c)

    return _predict_terms(entries(), obs, model.sigma_y)


def predict_flat(gmm: Gmm, obs: Observation, sigma_y: float) -> Prediction:
    """Same conditioning for a single mixture without class information."""
    entries = ((None, c, _log(gmm.weights[c]), gmm.component(c)) for c in range(gmm.n_components))
    return _predict_terms(entries, obs, sigma_y)


def time_marginal(pred: Prediction, t: int) -> list[tuple[float, np.ndarray, np.ndarray]]:
    """Per-term (weight, 2-vector mean, 2x2 covariance) at 1-based time ``t``."""
    T = len(pred.terms[0].mean) // 2
    if not 1 <= t <= T:
        raise ValueError(f"t must be in 1..{T}")
    i = 2 * (t - 1)
    return [(term.weight, term.mean[i : i + 2].copy(), term.cov[i : i + 2, i : i + 2].copy()) for term in pred.terms]
