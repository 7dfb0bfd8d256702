"""Inter-channel spatial features for clustering stereo mixtures.

The feature chain: per-bin inter-channel phase difference (IPD), its
cosine/sine pair, and a 1-D PCA projection of that pair. Bins with log
magnitude above a threshold are "active" and drive the PCA/GMM fitting;
the projection itself is evaluated everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signal import ComplexSpectrogram

LOG_MAG_FLOOR = 1e-6  # magnitude clamp, -120 dB floor


class SpatialError(ValueError):
    pass


class DegenerateFeaturesError(SpatialError):
    """Raised when the active features carry no usable variance."""


def compute_ipd(x: ComplexSpectrogram) -> np.ndarray:
    """Per-bin phase angle between the two channels, in (-pi, pi].

    Bins where either channel is exactly zero get 0 by convention.
    """
    if x.n_channels != 2:
        raise SpatialError(f"expected 2 channels, got {x.n_channels}")
    prod = x.bins[0] * np.conj(x.bins[1])
    theta = np.angle(prod)
    theta[prod == 0] = 0.0
    return theta


def compute_log_mag(x: ComplexSpectrogram, channel: int = 0) -> np.ndarray:
    """20*log10 magnitude of one channel, clamped at -120 dB."""
    if not 0 <= channel < x.n_channels:
        raise SpatialError(f"invalid channel {channel}")
    mag = np.maximum(np.abs(x.bins[channel]), LOG_MAG_FLOOR)
    return 20.0 * np.log10(mag)


@dataclass
class PcaProjector:
    """1-D projection onto the principal axis of the (cosIPD, sinIPD) cloud."""

    mean: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.direction = np.asarray(self.direction, dtype=np.float64)


def fit_pca(cos_ipd, sin_ipd, active_mask) -> PcaProjector:
    """Fit the projector on active bins only.

    The principal axis sign is fixed so its first nonzero component is
    positive, which makes the fit deterministic.
    """
    feats = np.stack(
        [np.asarray(cos_ipd)[active_mask], np.asarray(sin_ipd)[active_mask]], axis=1
    )
    if feats.shape[0] < 2:
        raise DegenerateFeaturesError("fewer than 2 active bins")
    mean = feats.mean(axis=0)
    cov = np.cov(feats.T, bias=True)
    eigvals, eigvecs = np.linalg.eigh(cov)
    if eigvals[-1] <= 1e-15:
        raise DegenerateFeaturesError("zero covariance over active bins")
    direction = eigvecs[:, -1]
    nz = np.flatnonzero(np.abs(direction) > 1e-12)
    if direction[nz[0]] < 0:
        direction = -direction
    return PcaProjector(mean, direction)


def project(p: PcaProjector, cos_ipd, sin_ipd) -> np.ndarray:
    """Project every bin (active or not) onto the fitted axis."""
    dc = np.asarray(cos_ipd) - p.mean[0]
    ds = np.asarray(sin_ipd) - p.mean[1]
    return dc * p.direction[0] + ds * p.direction[1]


@dataclass
class SpatialFeatureMap:
    ipd: np.ndarray
    log_mag: np.ndarray
    cos_ipd: np.ndarray
    sin_ipd: np.ndarray
    phi: np.ndarray
    active_mask: np.ndarray
    projector: PcaProjector | None
    threshold_db: float

    @property
    def degenerate(self):
        return self.projector is None


def extract_features(
    x: ComplexSpectrogram, threshold_db: float = -10.0
) -> SpatialFeatureMap:
    """Full feature extraction for one stereo spectrogram.

    When the active features are degenerate (e.g. perfectly co-located
    sources give a constant IPD), phi is set to zero everywhere and the
    map is flagged; downstream confidence then collapses naturally.
    """
    ipd = compute_ipd(x)
    log_mag = compute_log_mag(x, channel=0)
    cos_ipd = np.cos(ipd)
    sin_ipd = np.sin(ipd)
    active = log_mag > threshold_db
    projector = None
    try:
        projector = fit_pca(cos_ipd, sin_ipd, active)
        phi = project(projector, cos_ipd, sin_ipd)
    except DegenerateFeaturesError:
        phi = np.zeros_like(ipd)
    return SpatialFeatureMap(
        ipd, log_mag, cos_ipd, sin_ipd, phi, active, projector, threshold_db
    )
