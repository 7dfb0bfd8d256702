"""Separation and label-quality metrics.

Scale-invariant SDR/SIR/SAR follow the projection-based decomposition
(no BSS-eval distortion filters): the estimate is split into a target
component (projection on the matched reference), an interference
component (remaining projection onto the reference subspace), and an
artifact residual. All ratios are capped at +/-100 dB.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy import stats

DB_CAP = 100.0


class MetricsError(ValueError):
    pass


def _db_ratio(num, den):
    if num <= 0:
        return -DB_CAP
    if den <= 0:
        return DB_CAP
    return float(np.clip(10.0 * np.log10(num / den), -DB_CAP, DB_CAP))


def _samples(w):
    arr = np.asarray(getattr(w, "samples", w), dtype=np.float64)
    return arr.reshape(-1)


def si_sdr(estimate, reference) -> float:
    """Scale-invariant SDR in dB; signals are not mean-centered."""
    e = _samples(estimate)
    r = _samples(reference)
    if e.shape != r.shape:
        raise MetricsError("estimate and reference lengths differ")
    r_energy = float(r @ r)
    if r_energy == 0:
        raise MetricsError("all-zero reference")
    s_target = (e @ r / r_energy) * r
    noise = e - s_target
    return _db_ratio(float(s_target @ s_target), float(noise @ noise))


@dataclass
class SeparationScores:
    si_sdr: np.ndarray  # per matched pair, dB
    si_sir: np.ndarray
    si_sar: np.ndarray
    permutation: tuple  # estimate j is scored against reference permutation[j]

    @property
    def mean_si_sdr(self):
        return float(np.mean(self.si_sdr))


def _decompose(e, refs, target_idx):
    r = refs[target_idx]
    s_target = (e @ r / (r @ r)) * r
    basis = refs.T  # (n, k)
    coef, _, rank, _ = np.linalg.lstsq(basis, e, rcond=None)
    if rank < refs.shape[0]:
        raise MetricsError("rank-deficient reference set")
    e_proj = basis @ coef
    e_interf = e_proj - s_target
    e_artif = e - e_proj
    st = float(s_target @ s_target)
    return (
        _db_ratio(st, float((e - s_target) @ (e - s_target))),
        _db_ratio(st, float(e_interf @ e_interf)),
        _db_ratio(st, float(e_artif @ e_artif)),
    )


def si_sir_sar(estimates, references) -> SeparationScores:
    """Permutation-resolved scores; best permutation by mean SI-SDR."""
    ests = [_samples(e) for e in estimates]
    refs = np.stack([_samples(r) for r in references])
    if len(ests) != refs.shape[0]:
        raise MetricsError("estimate and reference counts differ")
    best_perm, best_mean = None, -np.inf
    for perm in itertools.permutations(range(refs.shape[0])):
        mean_sdr = np.mean([si_sdr(ests[j], refs[perm[j]]) for j in range(len(ests))])
        if mean_sdr > best_mean:
            best_perm, best_mean = perm, mean_sdr
    sdrs, sirs, sars = [], [], []
    for j, e in enumerate(ests):
        sdr, sir, sar = _decompose(e, refs, best_perm[j])
        sdrs.append(sdr)
        sirs.append(sir)
        sars.append(sar)
    return SeparationScores(np.array(sdrs), np.array(sirs), np.array(sars), best_perm)


def label_quality(y_true, y_est, weights, k_true=2, k_est=2) -> float:
    """1 minus normalized chi-squared distance between weighted partitions.

    1 means the partitions agree on every positive-weight point, 0 means
    they are statistically independent.
    """
    y_true = np.asarray(y_true).reshape(-1)
    y_est = np.asarray(y_est).reshape(-1)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if not (y_true.shape == y_est.shape == w.shape):
        raise MetricsError("label/weight length mismatch")
    if np.any(w < 0):
        raise MetricsError("negative weights")
    total = w.sum()
    if total <= 0:
        raise MetricsError("all-zero weights")
    p = np.zeros((k_true, k_est))
    np.add.at(p, (y_true, y_est), w)
    p /= total
    pa = p.sum(axis=1)
    pb = p.sum(axis=0)
    mask = np.outer(pa > 0, pb > 0)
    chi_sum = float(np.sum(p[mask] ** 2 / np.outer(pa, pb)[mask]))
    d = k_true + k_est - 2.0 * chi_sum
    return float(1.0 - d / (k_true + k_est - 2.0))


def dataset_label_quality(per_mixture) -> float:
    """Aggregate quality, each mixture weighted by its total weight.

    per_mixture: iterable of (y_true, y_est, weights) triples.
    """
    num = den = 0.0
    for y_true, y_est, w in per_mixture:
        w = np.asarray(w, dtype=np.float64)
        q = label_quality(y_true, y_est, w)
        num += q * w.sum()
        den += w.sum()
    if den <= 0:
        raise MetricsError("all-zero weights across dataset")
    return num / den


def quantity(alpha_weight_sets, zero_weight_sets) -> float:
    """Effective fraction of the corpus retained by the alpha weighting."""
    num = sum(float(np.sum(w)) for w in alpha_weight_sets)
    den = sum(float(np.sum(w)) for w in zero_weight_sets)
    if den <= 0:
        raise MetricsError("zero-alpha weights sum to zero")
    return num / den


@dataclass
class ConfidenceSdrReport:
    rows: list  # (mixture_id, mean_confidence, log10_mean_confidence, si_sdr)
    pearson_r: float | None
    p_value: float | None
    degenerate: bool


def confidence_sdr_report(mixture_ids, mean_confidences, si_sdrs) -> ConfidenceSdrReport:
    """Per-mixture confidence vs. separation quality, with Pearson r.

    Correlation is computed on the raw confidence values; the log column
    is emitted only for plotting the lower tail.
    """
    conf = np.asarray(mean_confidences, dtype=np.float64)
    sdr = np.asarray(si_sdrs, dtype=np.float64)
    if not (len(mixture_ids) == conf.size == sdr.size):
        raise MetricsError("report input length mismatch")
    rows = [
        (mid, float(c), float(np.log10(max(c, 1e-300))), float(s))
        for mid, c, s in zip(mixture_ids, conf, sdr)
    ]
    if conf.size < 2 or np.ptp(conf) == 0 or np.ptp(sdr) == 0:
        return ConfidenceSdrReport(rows, None, None, True)
    r, p = stats.pearsonr(conf, sdr)
    return ConfidenceSdrReport(rows, float(r), float(p), False)
