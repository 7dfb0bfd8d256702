"""Synthetic anechoic stereo two-source mixtures with ground truth.

Spatialization is constant-power panning plus a sub-sample
inter-channel delay on the far channel, which is exactly the level/phase
difference structure the IPD clustering consumes. Sources come from
bundled generators (sinusoid banks, filtered noise, chirps, fixed tone
pairs) so no external data is required.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .signal import Waveform

SOURCE_KINDS = ("sine_bank", "noise", "chirp", "tone")
# Sub-sample delay at +/-90 degrees. Keeping the inter-channel phase
# ramp under one sample means the per-bin phase difference stays inside
# (-pi, pi] over the whole band, so angular separation maps monotonically
# onto feature-space separation instead of wrapping around the circle.
MAX_DELAY_SAMPLES = 1.0


class MixgenError(ValueError):
    pass


@dataclass
class SourceSpec:
    kind: str = "sine_bank"
    seed: int = 0
    freqs: list = field(default_factory=list)  # tone kind: explicit Hz

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise MixgenError(f"unknown source kind '{self.kind}'")


@dataclass
class MixSpec:
    source_a: SourceSpec
    source_b: SourceSpec
    angle_a: float
    angle_b: float
    gain_a_db: float = 0.0
    gain_b_db: float = 0.0
    duration: float = 1.0
    sample_rate: int = 8000
    mixture_id: str = "mix"

    def __post_init__(self):
        for angle in (self.angle_a, self.angle_b):
            if not -90.0 <= angle <= 90.0:
                raise MixgenError(f"angle {angle} outside [-90, 90]")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["source_a"] = SourceSpec(**d["source_a"])
        d["source_b"] = SourceSpec(**d["source_b"])
        return cls(**d)


@dataclass
class MixtureRecord:
    mixture: Waveform  # stereo
    stems: list  # per-source stereo Waveform
    spec: MixSpec


def render_source(spec: SourceSpec, n_samples: int, sample_rate: int) -> np.ndarray:
    """Mono source signal, peak-normalized to 0.7."""
    rng = np.random.default_rng(spec.seed)
    t = np.arange(n_samples) / sample_rate
    if spec.kind == "tone":
        if not spec.freqs:
            raise MixgenError("tone source requires explicit freqs")
        x = sum(np.sin(2 * np.pi * f * t) for f in spec.freqs)
    elif spec.kind == "sine_bank":
        n_partials = int(rng.integers(2, 5))
        freqs = rng.uniform(200.0, 3500.0, size=n_partials)
        amps = rng.uniform(0.3, 1.0, size=n_partials)
        phases = rng.uniform(0, 2 * np.pi, size=n_partials)
        x = sum(a * np.sin(2 * np.pi * f * t + p) for a, f, p in zip(amps, freqs, phases))
    elif spec.kind == "noise":
        white = rng.standard_normal(n_samples)
        spectrum = np.fft.rfft(white)
        freqs = np.fft.rfftfreq(n_samples, 1.0 / sample_rate)
        lo = rng.uniform(200.0, 1500.0)
        hi = lo + rng.uniform(400.0, 1500.0)
        spectrum[(freqs < lo) | (freqs > hi)] = 0.0
        x = np.fft.irfft(spectrum, n=n_samples)
    else:  # chirp
        f0 = rng.uniform(200.0, 1000.0)
        f1 = rng.uniform(1200.0, 3500.0)
        x = np.sin(2 * np.pi * (f0 * t + 0.5 * (f1 - f0) / t[-1] * t**2))
    peak = np.max(np.abs(x))
    if peak <= 0:
        raise MixgenError("generated source is silent")
    return 0.7 * x / peak


def pan_gains(angle: float):
    """Constant-power left/right gains; g_L^2 + g_R^2 = 1."""
    a = np.pi / 4.0 * (1.0 + angle / 90.0)
    return float(np.cos(a)), float(np.sin(a))


def spatialize(source: np.ndarray, angle: float, gain_db: float, sample_rate: int) -> np.ndarray:
    """Pan a mono source into a stereo stem (2, n)."""
    if not -90.0 <= angle <= 90.0:
        raise MixgenError(f"angle {angle} outside [-90, 90]")
    g_l, g_r = pan_gains(angle)
    gain = 10.0 ** (gain_db / 20.0)
    n = len(source)
    stem = np.zeros((2, n))
    stem[0] = g_l * gain * source
    stem[1] = g_r * gain * source
    delay = abs(angle) / 90.0 * MAX_DELAY_SAMPLES
    far = 0 if angle > 0 else 1  # delay the channel facing away from the source
    if delay != 0.0:
        spectrum = np.fft.rfft(stem[far])
        freqs = np.fft.rfftfreq(n, d=1.0)  # cycles per sample
        stem[far] = np.fft.irfft(spectrum * np.exp(-2j * np.pi * freqs * delay), n=n)
    return stem


def make_mixture(spec: MixSpec) -> MixtureRecord:
    n = int(round(spec.duration * spec.sample_rate))
    src_a = render_source(spec.source_a, n, spec.sample_rate)
    src_b = render_source(spec.source_b, n, spec.sample_rate)
    n = min(len(src_a), len(src_b))
    stem_a = spatialize(src_a[:n], spec.angle_a, spec.gain_a_db, spec.sample_rate)
    stem_b = spatialize(src_b[:n], spec.angle_b, spec.gain_b_db, spec.sample_rate)
    mixture = stem_a + stem_b
    return MixtureRecord(
        Waveform(mixture, spec.sample_rate),
        [Waveform(stem_a, spec.sample_rate), Waveform(stem_b, spec.sample_rate)],
        spec,
    )


def make_corpus_specs(
    n_mixtures: int,
    seed: int,
    duration: float = 1.0,
    sample_rate: int = 8000,
    source_kinds=("sine_bank", "noise", "chirp"),
    angle_range=(-90.0, 90.0),
    prefix: str = "mix",
):
    """Deterministic list of MixSpec with per-mixture derived seeds."""
    root = np.random.SeedSequence(seed)
    children = root.spawn(n_mixtures)
    specs = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        kinds = rng.choice(len(source_kinds), size=2)
        angles = rng.uniform(angle_range[0], angle_range[1], size=2)
        seeds = rng.integers(0, 2**31 - 1, size=2)
        specs.append(
            MixSpec(
                source_a=SourceSpec(source_kinds[kinds[0]], int(seeds[0])),
                source_b=SourceSpec(source_kinds[kinds[1]], int(seeds[1])),
                angle_a=float(angles[0]),
                angle_b=float(angles[1]),
                duration=duration,
                sample_rate=sample_rate,
                mixture_id=f"{prefix}{i:05d}",
            )
        )
    return specs


def split_specs(specs, fractions=(0.7, 0.15, 0.15)):
    """Deterministic contiguous train/validation/test split by mixture id."""
    n = len(specs)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return {
        "train": specs[:n_train],
        "validation": specs[n_train : n_train + n_val],
        "test": specs[n_train + n_val :],
    }


def write_manifest(path, split_map):
    with open(path, "w") as f:
        for split, specs in split_map.items():
            for spec in specs:
                f.write(json.dumps({"split": split, "spec": spec.to_dict()}, sort_keys=True) + "\n")


def read_manifest(path):
    out = {}
    with open(path) as f:
        for line in f:
            rec = json.loads(line)
            out.setdefault(rec["split"], []).append(MixSpec.from_dict(rec["spec"]))
    return out
