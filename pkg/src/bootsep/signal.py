"""Time-frequency analysis/synthesis and WAV file I/O.

STFT convention: square-root Hann analysis and synthesis windows,
centered frames (half a window of zero padding at both ends), one-sided
spectrum. Reconstruction divides by the accumulated squared synthesis
window, so istft(stft(x)) is exact wherever the window sum is nonzero.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np


class SignalError(ValueError):
    pass


class WavFormatError(SignalError):
    """Malformed or unsupported WAV file."""


@dataclass
class Waveform:
    """Multi-channel audio signal, samples shaped (channels, n)."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if self.sample_rate <= 0:
            raise SignalError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise SignalError("waveform contains non-finite samples")

    @property
    def n_channels(self):
        return self.samples.shape[0]

    @property
    def n_samples(self):
        return self.samples.shape[1]

    @property
    def duration(self):
        return self.n_samples / self.sample_rate

    def channel(self, c):
        return Waveform(self.samples[c : c + 1].copy(), self.sample_rate)


@dataclass
class ComplexSpectrogram:
    """One-sided complex STFT, bins shaped (channels, T, F)."""

    bins: np.ndarray
    frame_hop: int
    window_size: int
    sample_rate: int

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=np.complex128)
        if self.bins.ndim != 3:
            raise SignalError("bins must be (channels, T, F)")
        if self.bins.shape[2] != self.window_size // 2 + 1:
            raise SignalError("F must equal window_size/2 + 1")
        if self.frame_hop > self.window_size:
            raise SignalError("hop larger than window")
        if not np.all(np.isfinite(self.bins)):
            raise SignalError("spectrogram contains non-finite values")

    @property
    def n_channels(self):
        return self.bins.shape[0]

    @property
    def n_frames(self):
        return self.bins.shape[1]

    @property
    def n_freqs(self):
        return self.bins.shape[2]


def _sqrt_hann(n):
    # periodic Hann so that w^2 satisfies COLA at 75% overlap
    t = np.arange(n)
    return np.sqrt(0.5 * (1.0 - np.cos(2.0 * np.pi * t / n)))


def _stft_geometry(n_samples, window, hop):
    pad = window // 2
    span = n_samples + 2 * pad - window
    n_frames = 1 + int(np.ceil(span / hop)) if span > 0 else 1
    padded_len = (n_frames - 1) * hop + window
    return pad, n_frames, padded_len


def stft(w: Waveform, window_ms: float = 32.0, hop_ms: float = 8.0) -> ComplexSpectrogram:
    """Forward STFT of all channels with sqrt-Hann analysis window."""
    if w.n_samples == 0:
        raise SignalError("empty waveform")
    window = window_ms * w.sample_rate / 1000.0
    hop = hop_ms * w.sample_rate / 1000.0
    if abs(window - round(window)) > 1e-9 or abs(hop - round(hop)) > 1e-9:
        raise SignalError("window/hop do not convert to integer sample counts")
    window = int(round(window))
    hop = int(round(hop))
    if window % 2 != 0:
        raise SignalError("window sample count must be even")
    if hop > window:
        raise SignalError("hop larger than window")
    if window % hop != 0:
        raise SignalError("hop must divide window")

    pad, n_frames, padded_len = _stft_geometry(w.n_samples, window, hop)
    win = _sqrt_hann(window)
    n_freq = window // 2 + 1
    out = np.empty((w.n_channels, n_frames, n_freq), dtype=np.complex128)
    for c in range(w.n_channels):
        x = np.zeros(padded_len)
        x[pad : pad + w.n_samples] = w.samples[c]
        idx = np.arange(window)[None, :] + hop * np.arange(n_frames)[:, None]
        out[c] = np.fft.rfft(x[idx] * win, axis=1)
    return ComplexSpectrogram(out, hop, window, w.sample_rate)


def istft(s: ComplexSpectrogram, n_samples: int | None = None) -> Waveform:
    """Overlap-add inverse STFT with sqrt-Hann synthesis window.

    n_samples optionally trims the output to the original signal length.
    """
    window, hop = s.window_size, s.frame_hop
    if window % 2 != 0 or hop > window or window % hop != 0:
        raise SignalError("inconsistent window/hop metadata")
    win = _sqrt_hann(window)
    pad = window // 2
    padded_len = (s.n_frames - 1) * hop + window
    out = np.zeros((s.n_channels, padded_len))
    norm = np.zeros(padded_len)
    starts = hop * np.arange(s.n_frames)
    for t, st in enumerate(starts):
        norm[st : st + window] += win * win
    for c in range(s.n_channels):
        frames = np.fft.irfft(s.bins[c], n=window, axis=1)
        for t, st in enumerate(starts):
            out[c, st : st + window] += frames[t] * win
    nz = norm > 1e-12
    out[:, nz] /= norm[nz]
    out = out[:, pad : padded_len - pad]
    if n_samples is not None:
        out = out[:, :n_samples]
    return Waveform(out, s.sample_rate)


# ---------------------------------------------------------------------------
# WAV (RIFF) reader/writer: PCM 16-bit and IEEE float 32-bit.

_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_IEEE_FLOAT = 3
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


def read_wav(path) -> Waveform:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12 or raw[:4] != b"RIFF":
        raise WavFormatError("missing RIFF header")
    if raw[8:12] != b"WAVE":
        raise WavFormatError("missing WAVE identifier")
    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos : pos + 4]
        (size,) = struct.unpack("<I", raw[pos + 4 : pos + 8])
        body = raw[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise WavFormatError(f"truncated '{cid.decode('ascii', 'replace')}' chunk")
        if cid == b"fmt ":
            if size < 16:
                raise WavFormatError("truncated 'fmt ' chunk")
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif cid == b"data":
            data = body
        pos += 8 + size + (size % 2)
    if fmt is None:
        raise WavFormatError("missing 'fmt ' chunk")
    if data is None:
        raise WavFormatError("missing 'data' chunk")
    audio_format, n_channels, sample_rate, _, _, bits = fmt
    if audio_format == _WAVE_FORMAT_EXTENSIBLE:
        raise WavFormatError("WAVE_FORMAT_EXTENSIBLE not supported")
    if not 1 <= n_channels <= 8:
        raise WavFormatError(f"unsupported channel count {n_channels}")
    if audio_format == _WAVE_FORMAT_PCM and bits == 16:
        ints = np.frombuffer(data, dtype="<i2")
        samples = ints.astype(np.float64) / 32768.0
    elif audio_format == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        samples = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        raise WavFormatError(f"unsupported codec (format={audio_format}, bits={bits})")
    n = len(samples) // n_channels
    samples = samples[: n * n_channels].reshape(n, n_channels).T
    return Waveform(samples.copy(), sample_rate)


def write_wav(path, w: Waveform, fmt: str = "float32"):
    if fmt == "pcm16":
        audio_format, bits = _WAVE_FORMAT_PCM, 16
        interleaved = w.samples.T.reshape(-1)
        ints = np.clip(np.round(interleaved * 32768.0), -32768, 32767).astype("<i2")
        payload = ints.tobytes()
    elif fmt == "float32":
        audio_format, bits = _WAVE_FORMAT_IEEE_FLOAT, 32
        payload = w.samples.T.reshape(-1).astype("<f4").tobytes()
    else:
        raise WavFormatError(f"unknown sample format '{fmt}'")
    block_align = w.n_channels * bits // 8
    header = struct.pack(
        "<HHIIHH",
        audio_format,
        w.n_channels,
        w.sample_rate,
        w.sample_rate * block_align,
        block_align,
        bits,
    )
    with open(path, "wb") as f:
        f.write(b"RIFF")
        f.write(struct.pack("<I", 4 + 8 + len(header) + 8 + len(payload)))
        f.write(b"WAVE")
        f.write(b"fmt ")
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(b"data")
        f.write(struct.pack("<I", len(payload)))
        f.write(payload)
