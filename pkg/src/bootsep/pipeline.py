"""End-to-end spatial separation of one stereo mixture.

Chains STFT, IPD feature extraction, PCA, the two GMM fits (1 and N
components), confidence, masking, pseudo-labels, and training weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import confidence as conf_mod
from . import gmm as gmm_mod
from . import separation as sep_mod
from .config import RunConfig
from .confidence import ConfidenceMap
from .signal import ComplexSpectrogram, Waveform, stft
from .spatial import SpatialFeatureMap, compute_log_mag, extract_features


@dataclass
class SpatialSeparationResult:
    spectrogram: ComplexSpectrogram
    features: SpatialFeatureMap
    masks: sep_mod.MaskSet
    stems: list  # Waveform per source, same channel count as the mixture
    confidence: ConfidenceMap
    labels: np.ndarray  # (T, F)
    weights: np.ndarray  # (T, F)


def _degenerate_result(spec, feats, cfg: RunConfig, n_samples) -> SpatialSeparationResult:
    # no usable spatial variance: uniform masks, zero confidence
    n = cfg.n_components
    t, f = spec.n_frames, spec.n_freqs
    masks = sep_mod.MaskSet(np.full((n, t, f), 1.0 / n))
    stems = sep_mod.apply_masks(spec, masks, channel=None, n_samples=n_samples)
    cmap = conf_mod.combine(
        0.0, 0.0, np.zeros((t, f)), cfg.confidence.alpha, feats.active_mask
    )
    labels = sep_mod.make_pseudo_labels(masks)
    weights = sep_mod.make_weights(cmap, spec, channel=0)
    return SpatialSeparationResult(spec, feats, masks, stems, cmap, labels, weights)


def separate_stereo(mix: Waveform, cfg: RunConfig, seed=None) -> SpatialSeparationResult:
    """Run the full spatial algorithm on a stereo waveform."""
    if seed is None:
        seed = cfg.seed
    spec = stft(mix, cfg.stft.window_ms, cfg.stft.hop_ms)
    feats = extract_features(spec, cfg.confidence.tau_db)
    n_active = int(feats.active_mask.sum())
    if feats.degenerate or n_active < max(4, cfg.n_components):
        return _degenerate_result(spec, feats, cfg, mix.n_samples)

    phi_active = feats.phi[feats.active_mask][:, None]
    em_cfg = gmm_mod.EmConfig(
        max_iter=cfg.gmm.max_iter,
        tol=cfg.gmm.tol,
        cov_floor=cfg.gmm.cov_floor,
        seed=seed,
    )
    model_multi, _ = gmm_mod.fit_em(phi_active, cfg.n_components, em_cfg)
    model_single, _ = gmm_mod.fit_em(phi_active, 1, em_cfg)

    phi_all = feats.phi.reshape(-1, 1)
    posts_all = gmm_mod.posteriors(model_multi, phi_all)
    posts_active = gmm_mod.posteriors(model_multi, phi_active)

    c_cl = conf_mod.cluster_size_equality(posts_active)
    c_jsd = conf_mod.clustering_fit_jsd(
        model_single, model_multi, cfg.confidence.jsd_samples, seed
    )
    c_post = conf_mod.posterior_confidence(posts_all).reshape(
        spec.n_frames, spec.n_freqs
    )
    cmap = conf_mod.combine(
        c_cl, c_jsd, c_post, cfg.confidence.alpha, feats.active_mask
    )

    masks = sep_mod.make_masks(posts_all, (spec.n_frames, spec.n_freqs))
    stems = sep_mod.apply_masks(spec, masks, channel=None, n_samples=mix.n_samples)
    labels = sep_mod.make_pseudo_labels(masks)
    weights = sep_mod.make_weights(cmap, spec, channel=0)
    return SpatialSeparationResult(spec, feats, masks, stems, cmap, labels, weights)


def ground_truth_labels(stems, cfg: RunConfig) -> np.ndarray:
    """Label each bin by the dominant source, from the stems' first channel."""
    mags = []
    for stem in stems:
        spec = stft(stem.channel(0), cfg.stft.window_ms, cfg.stft.hop_ms)
        mags.append(np.abs(spec.bins[0]))
    return np.argmax(np.stack(mags), axis=0)


def log_mag_features(mix: Waveform, cfg: RunConfig) -> np.ndarray:
    """Network input features for the first channel of a mixture."""
    spec = stft(mix.channel(0), cfg.stft.window_ms, cfg.stft.hop_ms)
    return compute_log_mag(spec, channel=0)
