"""Per-mixture confidence in a spatial clustering result.

Three components, each in [0, 1]:
  - cluster size equality: penalizes mode collapse,
  - clustering fit: Monte-Carlo Jensen-Shannon divergence (base-2 logs,
    so the range is [0, 1]) between 1-component and N-component fits,
  - posterior sharpness per bin.
Their product raised to a tunable exponent gives the per-bin map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gmm as gmm_mod
from .gmm import GmmModel


class ConfidenceError(ValueError):
    pass


def cluster_size_equality(posts: np.ndarray) -> float:
    """Balance of hard assignments: 1 for equal clusters, 0 for collapse."""
    posts = np.asarray(posts, dtype=np.float64)
    if posts.ndim != 2 or posts.shape[0] == 0:
        raise ConfidenceError("posterior matrix must be non-empty M x N")
    n = posts.shape[1]
    hard = posts.argmax(axis=1)  # argmax ties resolve to lowest index
    fractions = np.bincount(hard, minlength=n) / posts.shape[0]
    return float(np.sum(1.0 / n - np.abs(1.0 / n - fractions)))


def jsd_monte_carlo(p: GmmModel, q: GmmModel, n_samples: int, seed):
    """Monte-Carlo JSD estimate (base 2) and its standard error.

    Each KL term is the sample mean of log2(own density / midpoint
    density) over draws from the respective model, on independent
    seeded streams.
    """
    if p.dimension != q.dimension:
        raise ConfidenceError("models must share dimension")
    if n_samples < 1:
        raise ConfidenceError("n_samples must be >= 1")
    seed_p, seed_q = np.random.SeedSequence(seed).spawn(2)

    def kl_term(own, other, s):
        x = gmm_mod.sample(own, n_samples, s)
        lo = gmm_mod.log_density(own, x)
        lb = gmm_mod.log_density(other, x)
        mid = np.logaddexp(lo, lb) - np.log(2.0)
        t = (lo - mid) / np.log(2.0)
        return t.mean(), t.std(ddof=1) / np.sqrt(n_samples)

    kp, sp = kl_term(p, q, seed_p)
    kq, sq = kl_term(q, p, seed_q)
    est = 0.5 * (kp + kq)
    stderr = 0.5 * float(np.hypot(sp, sq))
    return float(np.clip(est, 0.0, 1.0)), stderr


def clustering_fit_jsd(
    p_single: GmmModel, q_multi: GmmModel, n_samples: int = 10_000, seed=0
) -> float:
    """JSD between the single-component and N-component fits, in [0, 1]."""
    est, _ = jsd_monte_carlo(p_single, q_multi, n_samples, seed)
    return est


def posterior_confidence(posts: np.ndarray) -> np.ndarray:
    """Sharpness of each assignment: 2*|max posterior - 1/2|, clamped to [0, 1]."""
    posts = np.asarray(posts, dtype=np.float64)
    c = 2.0 * np.abs(posts.max(axis=-1) - 0.5)
    # for N >= 3 the max posterior can fall below 1/2
    return np.clip(c, 0.0, 1.0)


@dataclass
class ConfidenceMap:
    c_cluster: float
    c_jsd: float
    c_post: np.ndarray  # (T, F)
    alpha: float
    combined: np.ndarray  # (T, F)
    mean_confidence: float


def combine(c_cl, c_jsd, c_post, alpha, active_mask=None) -> ConfidenceMap:
    """Elementwise (c_cl * c_jsd * c_post)^alpha.

    mean_confidence averages over active bins when a mask is given
    (silent bins carry arbitrary assignments); otherwise over all bins.
    """
    if alpha < 0:
        raise ConfidenceError("alpha must be >= 0")
    c_post = np.asarray(c_post, dtype=np.float64)
    combined = (c_cl * c_jsd * c_post) ** alpha
    if active_mask is not None and np.any(active_mask):
        mean_conf = float(combined[active_mask].mean())
    else:
        mean_conf = float(combined.mean())
    return ConfidenceMap(float(c_cl), float(c_jsd), c_post, float(alpha), combined, mean_conf)
