"""Per-mixture mediation between the stereo spatial algorithm and the
bootstrapped single-channel model.

The confidence policy keeps the spatial output when its mean confidence
is strictly above a threshold calibrated as the bottom quartile of
validation confidences; at or below the threshold it falls back to the
learned model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

POLICY_KINDS = ("confidence", "oracle", "random")


class EnsembleError(ValueError):
    pass


@dataclass
class EnsemblePolicy:
    kind: str
    threshold: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise EnsembleError(f"unknown policy kind '{self.kind}'")
        if not np.isfinite(self.threshold):
            raise EnsembleError("threshold must be finite")
        self._rng = np.random.default_rng(self.seed)


def calibrate_threshold(mean_confidences) -> float:
    """Bottom quartile (linear-interpolation percentile) of the inputs."""
    values = np.asarray(mean_confidences, dtype=np.float64)
    if values.size < 4:
        raise EnsembleError("need at least 4 validation confidences")
    return float(np.percentile(values, 25.0))


@dataclass
class Candidate:
    spatial_stems: list
    dc_stems: list
    mean_confidence: float
    spatial_score: float | None = None  # SI-SDR, oracle policy only
    dc_score: float | None = None


def select(policy: EnsemblePolicy, mixture: Candidate):
    """Choose one system's stems; returns (stems, provenance_tag)."""
    if policy.kind == "confidence":
        if mixture.mean_confidence > policy.threshold:
            return mixture.spatial_stems, "spatial"
        return mixture.dc_stems, "dc"
    if policy.kind == "oracle":
        if mixture.spatial_score is None or mixture.dc_score is None:
            raise EnsembleError("oracle policy requires true scores for both systems")
        if mixture.spatial_score >= mixture.dc_score:
            return mixture.spatial_stems, "spatial"
        return mixture.dc_stems, "dc"
    if policy._rng.random() < 0.5:
        return mixture.spatial_stems, "spatial"
    return mixture.dc_stems, "dc"
