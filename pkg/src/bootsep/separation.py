"""From GMM posteriors to masks, separated stems, pseudo-labels, and
training weights.

Soft (posterior) masks are used for audio reconstruction; hard argmax
over masks defines the pseudo-label of each T-F bin. Training weights
multiply the per-bin confidence by the mixture-normalized magnitude.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .confidence import ConfidenceMap
from .signal import ComplexSpectrogram, Waveform, istft


class SeparationError(ValueError):
    pass


@dataclass
class MaskSet:
    """N soft masks, each (T, F), summing to 1 per bin."""

    masks: np.ndarray  # (N, T, F)

    def __post_init__(self):
        self.masks = np.asarray(self.masks, dtype=np.float64)

    @property
    def n_sources(self):
        return self.masks.shape[0]


@dataclass
class ConfidenceWeightedLabels:
    labels: np.ndarray  # (T, F) int source indices
    weights: np.ndarray  # (T, F) non-negative
    alpha: float


def make_masks(posts: np.ndarray, shape) -> MaskSet:
    """Scatter posterior rows (T*F, N) back onto the (T, F) grid."""
    posts = np.asarray(posts, dtype=np.float64)
    t, f = shape
    if posts.shape[0] != t * f:
        raise SeparationError("posterior row count does not match grid")
    return MaskSet(posts.T.reshape(posts.shape[1], t, f))


def apply_masks(x: ComplexSpectrogram, m: MaskSet, channel=0, n_samples=None):
    """Mask and invert; returns one Waveform per source.

    With an integer channel the stems are mono reconstructions of that
    channel; with channel=None the same mask is applied to every channel
    and the stems keep the input's channel count.
    """
    if channel is None:
        selected = x.bins
    elif 0 <= channel < x.n_channels:
        selected = x.bins[channel : channel + 1]
    else:
        raise SeparationError(f"invalid channel {channel}")
    if m.masks.shape[1:] != x.bins.shape[1:]:
        raise SeparationError("mask/spectrogram shape mismatch")
    stems = []
    for j in range(m.n_sources):
        masked = ComplexSpectrogram(
            m.masks[j][None] * selected,
            x.frame_hop,
            x.window_size,
            x.sample_rate,
        )
        stems.append(istft(masked, n_samples=n_samples))
    return stems


def make_pseudo_labels(m: MaskSet) -> np.ndarray:
    """Hard source index per bin; ties go to the lowest index."""
    return m.masks.argmax(axis=0)


def make_weights(c: ConfidenceMap, x: ComplexSpectrogram, channel: int = 0) -> np.ndarray:
    """Per-bin weight: confidence times magnitude normalized over the mixture."""
    if not 0 <= channel < x.n_channels:
        raise SeparationError(f"invalid channel {channel}")
    mag = np.abs(x.bins[channel])
    total = mag.sum()
    if total <= 0:
        raise SeparationError("all-zero spectrogram has no magnitude normalizer")
    return c.combined * (mag / total)


def magnitude_weights(x: ComplexSpectrogram, channel: int = 0) -> np.ndarray:
    """Pure magnitude weighting (confidence identically 1); sums to 1."""
    mag = np.abs(x.bins[channel])
    total = mag.sum()
    if total <= 0:
        raise SeparationError("all-zero spectrogram has no magnitude normalizer")
    return mag / total
