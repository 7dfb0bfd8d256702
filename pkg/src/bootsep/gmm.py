"""Full-covariance Gaussian mixture fit by EM, with posteriors, density
evaluation, and seeded sampling.

Kept dimension-generic even though the separation pipeline feeds it 1-D
projected features.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .cluster import kmeans_plus_plus

_LOG_2PI = np.log(2.0 * np.pi)


class GmmError(ValueError):
    pass


@dataclass
class EmConfig:
    max_iter: int = 100
    tol: float = 1e-6
    cov_floor: float = 1e-6
    seed: int = 0


@dataclass
class EmTrace:
    log_likelihoods: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self):
        return len(self.log_likelihoods)


@dataclass
class GmmModel:
    means: np.ndarray  # (N, D)
    covariances: np.ndarray  # (N, D, D)
    mixing_weights: np.ndarray  # (N,)

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.covariances = np.asarray(self.covariances, dtype=np.float64)
        self.mixing_weights = np.asarray(self.mixing_weights, dtype=np.float64)

    @property
    def n_components(self):
        return self.means.shape[0]

    @property
    def dimension(self):
        return self.means.shape[1]

    def to_json(self):
        return json.dumps(
            {
                "means": self.means.tolist(),
                "covariances": self.covariances.tolist(),
                "mixing_weights": self.mixing_weights.tolist(),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(
            np.array(d["means"]),
            np.array(d["covariances"]),
            np.array(d["mixing_weights"]),
        )


def _as_points(data):
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    return data


def _component_log_pdfs(m: GmmModel, data):
    """Per-component Gaussian log densities, shape (M, N)."""
    data = _as_points(data)
    if data.shape[1] != m.dimension:
        raise GmmError(
            f"dimension mismatch: data D={data.shape[1]}, model D={m.dimension}"
        )
    out = np.empty((data.shape[0], m.n_components))
    for j in range(m.n_components):
        chol = np.linalg.cholesky(m.covariances[j])
        diff = data - m.means[j]
        sol = np.linalg.solve(chol, diff.T)
        maha = np.sum(sol**2, axis=0)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        out[:, j] = -0.5 * (m.dimension * _LOG_2PI + logdet + maha)
    return out


def log_density(m: GmmModel, points) -> np.ndarray:
    """Log mixture density per point, log-sum-exp stabilized."""
    lp = _component_log_pdfs(m, points)
    return logsumexp(lp + np.log(m.mixing_weights)[None, :], axis=1)


def posteriors(m: GmmModel, data) -> np.ndarray:
    """Responsibilities (M, N); each row sums to 1."""
    lp = _component_log_pdfs(m, data) + np.log(m.mixing_weights)[None, :]
    return np.exp(lp - logsumexp(lp, axis=1, keepdims=True))


def fit_em(data, n_components: int, config: EmConfig | None = None):
    """Run EM to convergence; returns (GmmModel, EmTrace).

    Means are initialized by k-means++ seeding with config.seed;
    covariances start at the (floored) global data covariance.
    """
    config = config or EmConfig()
    data = _as_points(data)
    m_points, dim = data.shape
    if not np.all(np.isfinite(data)):
        raise GmmError("non-finite data")
    if m_points < n_components:
        raise GmmError(f"need at least {n_components} points, got {m_points}")

    rng = np.random.default_rng(config.seed)
    means = kmeans_plus_plus(data, n_components, rng).copy()
    global_cov = np.cov(data.T, bias=True).reshape(dim, dim)
    global_cov = global_cov + config.cov_floor * np.eye(dim)
    covs = np.repeat(global_cov[None], n_components, axis=0)
    weights = np.full(n_components, 1.0 / n_components)
    model = GmmModel(means, covs, weights)

    trace = EmTrace()
    prev_ll = -np.inf
    for _ in range(config.max_iter):
        lp = _component_log_pdfs(model, data) + np.log(model.mixing_weights)
        per_point = logsumexp(lp, axis=1)
        ll = float(per_point.sum())
        trace.log_likelihoods.append(ll)
        resp = np.exp(lp - per_point[:, None])

        nk = resp.sum(axis=0)
        weights = np.maximum(nk / m_points, 1e-12)
        weights = weights / weights.sum()
        means = (resp.T @ data) / np.maximum(nk, 1e-300)[:, None]
        covs = np.empty_like(model.covariances)
        for j in range(n_components):
            diff = data - means[j]
            covs[j] = (resp[:, j][:, None] * diff).T @ diff / max(nk[j], 1e-300)
            covs[j] += config.cov_floor * np.eye(dim)
        model = GmmModel(means, covs, weights)

        if np.isfinite(prev_ll) and abs(ll - prev_ll) <= config.tol * abs(prev_ll):
            trace.converged = True
            break
        prev_ll = ll
    return model, trace


def sample(m: GmmModel, n: int, seed) -> np.ndarray:
    """Draw n points; component by mixing weight, then Gaussian."""
    rng = np.random.default_rng(seed)
    comps = rng.choice(m.n_components, size=n, p=m.mixing_weights)
    z = rng.standard_normal((n, m.dimension))
    chols = np.linalg.cholesky(m.covariances)
    return m.means[comps] + np.einsum("njk,nk->nj", chols[comps], z)
