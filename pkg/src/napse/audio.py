"""Waveform container and WAV file I/O.

All audio in this package is mono. Files are resampled to 48 kHz on load
with a Kaiser-windowed-sinc polyphase resampler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

DEFAULT_SAMPLE_RATE = 48000


class AudioError(ValueError):
    """Invalid audio data or unsupported file content."""


@dataclass(frozen=True)
class Waveform:
    """Mono waveform: 1-D float sample array plus its sample rate."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise AudioError(f"waveform must be mono 1-D, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise AudioError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise AudioError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    @property
    def num_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return self.num_samples / self.sample_rate


def resample(wave: Waveform, target_rate: int) -> Waveform:
    """Windowed-sinc (Kaiser) polyphase resampling to ``target_rate``."""
    if wave.sample_rate == target_rate:
        return wave
    g = math.gcd(wave.sample_rate, target_rate)
    up, down = target_rate // g, wave.sample_rate // g
    out = resample_poly(wave.samples, up, down)
    return Waveform(out, target_rate)


def load_wav(path, target_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Load a mono PCM16/PCM32/float32 WAV file, resampled to ``target_rate``.

    Resampling to 48 kHz on load is the package-wide convention; pass a
    different ``target_rate`` only for diagnostic work.
    """
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise AudioError(f"cannot read WAV file {path}: {exc}") from exc
    if data.ndim != 1:
        raise AudioError(f"{path}: only mono WAV files are supported (got {data.ndim} channels)")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise AudioError(f"{path}: unsupported WAV sample format {data.dtype}")
    return resample(Waveform(samples, int(rate)), target_rate)


def save_wav(path, wave: Waveform, fmt: str = "float32") -> None:
    """Write a waveform as mono WAV; ``fmt`` is 'float32' or 'pcm16'."""
    if fmt == "float32":
        wavfile.write(path, wave.sample_rate, wave.samples.astype(np.float32))
    elif fmt == "pcm16":
        clipped = np.clip(wave.samples, -1.0, 1.0 - 1.0 / 32768.0)
        wavfile.write(path, wave.sample_rate, (clipped * 32768.0).astype(np.int16))
    else:
        raise AudioError(f"unsupported WAV format {fmt!r}")
