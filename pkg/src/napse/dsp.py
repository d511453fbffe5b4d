"""Deterministic spectral kernels: STFT/iSTFT and log-mel filterbank features.

Two window conventions are used package-wide:

* ``sqrt_hann`` — square-root periodic Hann applied on both analysis and
  synthesis; the enhancement path uses it so that the least-squares
  overlap-add inverse is a perfect reconstruction.
* ``hann`` — plain periodic Hann for loss-only spectrogram computations,
  which are never inverted.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch

from napse.audio import Waveform

WINDOW_KINDS = ("hann", "sqrt_hann")

LOG_MEL_FLOOR = 1e-10


class DspError(ValueError):
    """Invalid spectral configuration or geometry."""


@dataclass(frozen=True)
class StftConfig:
    """Short-time Fourier transform geometry.

    Rejected at construction when the window/hop combination has a
    vanishing overlap-add envelope (no least-squares inverse exists).
    """

    n_fft: int
    hop: int
    win_length: int
    window: str = "sqrt_hann"
    center: bool = True

    def __post_init__(self):
        if self.n_fft <= 0 or self.hop <= 0 or self.win_length <= 0:
            raise DspError("n_fft, hop and win_length must be positive")
        if self.win_length > self.n_fft:
            raise DspError(f"win_length {self.win_length} exceeds n_fft {self.n_fft}")
        if self.hop > self.win_length:
            raise DspError(f"hop {self.hop} exceeds win_length {self.win_length}")
        if self.window not in WINDOW_KINDS:
            raise DspError(f"unknown window kind {self.window!r}; expected one of {WINDOW_KINDS}")
        if not _nola_holds(self.win_length, self.hop, self.window):
            raise DspError(
                f"window {self.window!r} with hop {self.hop} violates the "
                "overlap-add invertibility condition"
            )

    @property
    def num_bins(self) -> int:
        return self.n_fft // 2 + 1

    def num_frames(self, num_samples: int) -> int:
        if self.center:
            return num_samples // self.hop + 1
        return max(0, (num_samples - self.win_length) // self.hop + 1)


def _window_array(kind: str, win_length: int) -> np.ndarray:
    n = np.arange(win_length)
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / win_length)  # periodic
    if kind == "hann":
        return hann
    return np.sqrt(hann)


@lru_cache(maxsize=64)
def _nola_holds(win_length: int, hop: int, kind: str) -> bool:
    # envelope of squared windows over the steady-state interior
    w2 = _window_array(kind, win_length) ** 2
    span = 8 * win_length
    env = np.zeros(span + win_length)
    for start in range(0, span, hop):
        env[start : start + win_length] += w2
    interior = env[2 * win_length : span - 2 * win_length]
    return bool(interior.min() > 1e-8)


@lru_cache(maxsize=64)
def _window_tensor_cached(kind: str, win_length: int, dtype: torch.dtype) -> torch.Tensor:
    return torch.from_numpy(_window_array(kind, win_length)).to(dtype)


def window_tensor(config: StftConfig, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    return _window_tensor_cached(config.window, config.win_length, dtype)


@dataclass(frozen=True)
class ComplexSpectrogram:
    """Complex STFT laid out as [frames, bins] plus its configuration."""

    data: torch.Tensor
    config: StftConfig

    def __post_init__(self):
        if self.data.ndim != 2:
            raise DspError(f"spectrogram must be [frames, bins], got shape {tuple(self.data.shape)}")
        if not self.data.is_complex():
            raise DspError("spectrogram data must be complex-valued")
        if self.data.shape[1] != self.config.num_bins:
            raise DspError(
                f"bin count {self.data.shape[1]} does not match config "
                f"n_fft//2+1 = {self.config.num_bins}"
            )

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    def magnitude(self) -> torch.Tensor:
        return self.data.abs()


def stft_tensor(x: torch.Tensor, config: StftConfig) -> torch.Tensor:
    """Differentiable STFT of a [T] or [batch, T] tensor -> [..., frames, bins]."""
    if x.shape[-1] == 0:
        raise DspError("cannot compute STFT of an empty signal")
    real_dtype = x.dtype
    w = window_tensor(config, real_dtype)
    squeeze = x.ndim == 1
    if squeeze:
        x = x.unsqueeze(0)
    spec = torch.stft(
        x,
        n_fft=config.n_fft,
        hop_length=config.hop,
        win_length=config.win_length,
        window=w,
        center=config.center,
        pad_mode="constant",
        return_complex=True,
    )
    spec = spec.transpose(-1, -2)  # [batch, frames, bins]
    return spec.squeeze(0) if squeeze else spec


def istft_tensor(spec: torch.Tensor, config: StftConfig, length: int | None = None) -> torch.Tensor:
    """Least-squares overlap-add inverse of :func:`stft_tensor`."""
    if spec.shape[-1] != config.num_bins:
        raise DspError(
            f"bin count {spec.shape[-1]} inconsistent with n_fft {config.n_fft}"
        )
    if spec.shape[-2] < 2:
        raise DspError("istft needs at least two frames")
    real_dtype = torch.float64 if spec.dtype == torch.complex128 else torch.float32
    w = window_tensor(config, real_dtype)
    squeeze = spec.ndim == 2
    if squeeze:
        spec = spec.unsqueeze(0)
    wave = torch.istft(
        spec.transpose(-1, -2),
        n_fft=config.n_fft,
        hop_length=config.hop,
        win_length=config.win_length,
        window=w,
        center=config.center,
        length=length,
    )
    return wave.squeeze(0) if squeeze else wave


def stft(wave: Waveform, config: StftConfig) -> ComplexSpectrogram:
    if wave.num_samples == 0:
        raise DspError("cannot compute STFT of an empty waveform")
    x = torch.from_numpy(wave.samples)
    return ComplexSpectrogram(stft_tensor(x, config), config)


def istft(spec: ComplexSpectrogram, sample_rate: int, length: int | None = None) -> Waveform:
    wave = istft_tensor(spec.data, spec.config, length=length)
    return Waveform(wave.numpy(), sample_rate)


# ---------------------------------------------------------------------------
# log-mel filterbank features


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=16)
def mel_filter_matrix(sample_rate: int, n_fft: int, n_mels: int,
                      fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular mel filterbank, [n_mels, n_fft//2+1]."""
    if fmax is None:
        fmax = sample_rate / 2.0
    mel_pts = np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2)
    hz_pts = _mel_to_hz(mel_pts)
    bins = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    fb = np.zeros((n_mels, bins.shape[0]))
    for i in range(n_mels):
        lo, center, hi = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        up = (bins - lo) / max(center - lo, 1e-12)
        down = (hi - bins) / max(hi - center, 1e-12)
        fb[i] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def fbank(wave: Waveform, n_mels: int = 80,
          win_ms: float = 25.0, hop_ms: float = 10.0) -> np.ndarray:
    """Log-mel energies of the power spectrum, [frames, n_mels].

    Frames are taken without centering (25 ms window / 10 ms hop by
    default), so the input must cover at least one full window. Mel
    powers are floored at 1e-10 before the natural log.
    """
    win = int(round(win_ms * 1e-3 * wave.sample_rate))
    hop = int(round(hop_ms * 1e-3 * wave.sample_rate))
    if wave.num_samples < win:
        raise DspError(
            f"fbank needs at least one {win}-sample frame, got {wave.num_samples} samples"
        )
    n_fft = 1 << (win - 1).bit_length()
    num_frames = (wave.num_samples - win) // hop + 1
    idx = np.arange(win)[None, :] + hop * np.arange(num_frames)[:, None]
    frames = wave.samples[idx] * _window_array("hann", win)[None, :]
    power = np.abs(np.fft.rfft(frames, n=n_fft, axis=1)) ** 2
    mel = power @ mel_filter_matrix(wave.sample_rate, n_fft, n_mels).T
    return np.log(np.maximum(mel, LOG_MEL_FLOOR))


def loss_scale_presets() -> list[StftConfig]:
    """The three plain-Hann spectral-loss scales used by the multi-scale losses."""
    return [
        StftConfig(n_fft=512, hop=240, win_length=480, window="hann"),
        StftConfig(n_fft=1024, hop=480, win_length=960, window="hann"),
        StftConfig(n_fft=2048, hop=960, win_length=1920, window="hann"),
    ]


def main_stft_config(sample_rate: int = 48000,
                     win_ms: float = 20.0, hop_ms: float = 10.0) -> StftConfig:
    """Enhancement-path STFT: 20 ms sqrt-Hann window, 10 ms hop."""
    win = int(round(win_ms * 1e-3 * sample_rate))
    hop = int(round(hop_ms * 1e-3 * sample_rate))
    return StftConfig(n_fft=win, hop=hop, win_length=win, window="sqrt_hann")
