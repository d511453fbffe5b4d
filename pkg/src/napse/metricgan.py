"""Metric-predicting adversarial training.

A small convolutional discriminator learns to predict a normalized speech
quality score from magnitude spectrograms; the enhancement model then chases
the discriminator's idea of a perfect score. Two flavours: intrusive
(PESQ-like, needs the clean reference as a second input channel) and
non-intrusive (MOS-like, estimate only). Desk-scale surrogate metrics stand
in for the real scorers, and an external-command provider lets real tools be
wired in when available.
"""

from __future__ import annotations

import subprocess
import sys
import tempfile
import warnings
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from torch import nn

from napse.audio import Waveform, save_wav
from napse.dsp import StftConfig, stft_tensor

PESQ_RANGE = (-0.5, 4.5)
MOS_RANGE = (1.0, 5.0)
SEG_SNR_RANGE = (-10.0, 35.0)
REPLAY_CAPACITY = 200
METRIC_STFT = StftConfig(n_fft=256, hop=128, win_length=256, window="hann")


class MetricGanError(ValueError):
    """Mismatched discriminator/provider variants or malformed scores."""


# ---------------------------------------------------------------------------
# score normalization


def _clamp_with_warning(value: float, lo: float, hi: float, what: str) -> float:
    if value < lo or value > hi:
        warnings.warn(f"{what} score {value:.3f} outside [{lo}, {hi}]; clamping")
        return float(min(max(value, lo), hi))
    return float(value)


def normalize_pesq(p: float) -> float:
    """Affine map of a PESQ-style score onto [0, 1]."""
    p = _clamp_with_warning(p, *PESQ_RANGE, what="PESQ-like")
    return (p + 0.5) / 5.0


def normalize_dnsmos(d: float) -> float:
    """Affine map of a MOS-style score onto [0, 1]."""
    d = _clamp_with_warning(d, *MOS_RANGE, what="MOS-like")
    return (d - 1.0) / 4.0


# ---------------------------------------------------------------------------
# metric providers


@dataclass(frozen=True)
class MetricProvider:
    """A raw-score source plus the bookkeeping to normalize it."""

    name: str
    kind: str  # "intrusive" | "non_intrusive"
    raw_range: tuple
    fn: Callable

    def __post_init__(self):
        if self.kind not in ("intrusive", "non_intrusive"):
            raise MetricGanError(f"unknown provider kind {self.kind!r}")
        lo, hi = self.raw_range
        if not lo < hi:
            raise MetricGanError("raw_range must be an ordered pair")

    def score(self, est: np.ndarray, ref: np.ndarray | None,
              sample_rate: int) -> float:
        if self.kind == "intrusive" and ref is None:
            raise MetricGanError(f"{self.name} is intrusive and needs a reference")
        raw = float(self.fn(est, ref, sample_rate))
        return _clamp_with_warning(raw, *self.raw_range, what=self.name)

    def normalized(self, est: np.ndarray, ref: np.ndarray | None,
                   sample_rate: int) -> float:
        lo, hi = self.raw_range
        return (self.score(est, ref, sample_rate) - lo) / (hi - lo)


def segmental_snr(est: np.ndarray, ref: np.ndarray, sample_rate: int,
                  frame_ms: float = 20.0) -> float:
    """Frame-wise SNR in dB, each frame clamped to [-10, 35], averaged."""
    frame = int(sample_rate * frame_ms / 1000.0)
    n = min(len(est), len(ref)) // frame * frame
    if n == 0:
        raise MetricGanError("signals shorter than one metric frame")
    e = est[:n].reshape(-1, frame)
    r = ref[:n].reshape(-1, frame)
    num = (r ** 2).sum(axis=1) + 1e-12
    den = ((e - r) ** 2).sum(axis=1) + 1e-12
    snr = np.clip(10.0 * np.log10(num / den), *SEG_SNR_RANGE)
    return float(snr.mean())


def _seg_snr_raw(est, ref, sample_rate):
    seg = segmental_snr(est, ref, sample_rate)
    lo, hi = SEG_SNR_RANGE
    plo, phi = PESQ_RANGE
    return plo + (phi - plo) * (seg - lo) / (hi - lo)


def _frame_power(est: np.ndarray, sample_rate: int, frame_ms: float = 20.0):
    frame = int(sample_rate * frame_ms / 1000.0)
    n = len(est) // frame * frame
    if n == 0:
        raise MetricGanError("signal shorter than one metric frame")
    return est[:n].reshape(-1, frame)


def _sig_raw(est, ref, sample_rate):
    # harmonic structure concentrates spectra, so low flatness reads as speech
    frames = _frame_power(est, sample_rate)
    power = np.abs(np.fft.rfft(frames, axis=1)) ** 2 + 1e-12
    flatness = np.exp(np.mean(np.log(power), axis=1)) / power.mean(axis=1)
    sharpness = -np.log(np.mean(flatness))
    return 1.0 + 4.0 * np.clip(sharpness / 5.0, 0.0, 1.0)


def _bak_raw(est, ref, sample_rate):
    # a raised noise floor compresses the frame-energy dynamic range
    frames = _frame_power(est, sample_rate)
    level_db = 10.0 * np.log10((frames ** 2).sum(axis=1) + 1e-12)
    spread = np.percentile(level_db, 90) - np.percentile(level_db, 10)
    return 1.0 + 4.0 * np.clip(spread / 40.0, 0.0, 1.0)


def _ovrl_raw(est, ref, sample_rate):
    return 0.5 * (_sig_raw(est, ref, sample_rate) + _bak_raw(est, ref, sample_rate))


def pesq_surrogate() -> MetricProvider:
    return MetricProvider("pesq_surrogate", "intrusive", PESQ_RANGE, _seg_snr_raw)


def ovrl_surrogate() -> MetricProvider:
    return MetricProvider("ovrl_surrogate", "non_intrusive", MOS_RANGE, _ovrl_raw)


def sig_surrogate() -> MetricProvider:
    return MetricProvider("sig_surrogate", "non_intrusive", MOS_RANGE, _sig_raw)


def bak_surrogate() -> MetricProvider:
    return MetricProvider("bak_surrogate", "non_intrusive", MOS_RANGE, _bak_raw)


def command_provider(name: str, argv: list, kind: str,
                     raw_range: tuple) -> MetricProvider:
    """Wrap an external scorer: argv gets est (and ref) wav paths appended and
    must print one float."""

    def run(est, ref, sample_rate):
        with tempfile.TemporaryDirectory() as tmp:
            est_path = Path(tmp) / "est.wav"
            save_wav(est_path, Waveform(np.asarray(est, dtype=np.float64), sample_rate))
            cmd = [*argv, str(est_path)]
            if ref is not None:
                ref_path = Path(tmp) / "ref.wav"
                save_wav(ref_path, Waveform(np.asarray(ref, dtype=np.float64), sample_rate))
                cmd.append(str(ref_path))
            out = subprocess.run(cmd, capture_output=True, text=True, check=True)
        try:
            return float(out.stdout.strip().splitlines()[-1])
        except (ValueError, IndexError) as exc:
            raise MetricGanError(f"{name} returned unparsable output {out.stdout!r}") from exc

    return MetricProvider(name, kind, tuple(raw_range), run)


# ---------------------------------------------------------------------------
# discriminator


def metric_spectrogram(wave: torch.Tensor, stft: StftConfig = METRIC_STFT) -> torch.Tensor:
    """[batch, T] -> compressed magnitude [batch, frames, bins]."""
    return stft_tensor(wave, stft).abs().clamp_min(1e-12) ** 0.5


class Discriminator(nn.Module):
    """Four conv blocks, global average pooling, sigmoid score in [0, 1]."""

    def __init__(self, intrusive: bool, base_channels: int = 8):
        super().__init__()
        self.intrusive = intrusive
        chans = [2 if intrusive else 1] + [base_channels * 2 ** i for i in range(4)]
        blocks = []
        for cin, cout in zip(chans[:-1], chans[1:]):
            blocks += [
                nn.Conv2d(cin, cout, kernel_size=3, stride=2, padding=1),
                nn.GroupNorm(1, cout),
                nn.PReLU(cout),
            ]
        self.blocks = nn.Sequential(*blocks)
        self.head = nn.Linear(chans[-1], 1)

    def forward(self, est_mag: torch.Tensor,
                ref_mag: torch.Tensor | None = None) -> torch.Tensor:
        if self.intrusive:
            if ref_mag is None:
                raise MetricGanError("intrusive discriminator needs a reference")
            x = torch.stack([est_mag, ref_mag], dim=1)
        else:
            if ref_mag is not None:
                raise MetricGanError("non-intrusive discriminator takes no reference")
            x = est_mag.unsqueeze(1)
        h = self.blocks(x).mean(dim=(2, 3))
        return torch.sigmoid(self.head(h)).squeeze(1)


# ---------------------------------------------------------------------------
# replay buffer


class ReplayBuffer:
    """Bounded FIFO of (est magnitude, ref magnitude | None, target) triples."""

    def __init__(self, capacity: int = REPLAY_CAPACITY):
        if capacity < 1:
            raise MetricGanError("capacity must be positive")
        self.capacity = capacity
        self._items: deque = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def push(self, est_mag: torch.Tensor, ref_mag: torch.Tensor | None,
             target: float) -> None:
        ref = None if ref_mag is None else ref_mag.detach().clone()
        self._items.append((est_mag.detach().clone(), ref, float(target)))

    def sample(self, count: int, gen: np.random.Generator, shape=None) -> list:
        pool = [item for item in self._items if shape is None or item[0].shape == shape]
        if not pool or count <= 0:
            return []
        picks = gen.integers(len(pool), size=min(count, len(pool)))
        return [pool[i] for i in picks]


# ---------------------------------------------------------------------------
# adversarial losses


def _targets(provider: MetricProvider, est: torch.Tensor,
             ref: torch.Tensor | None, sample_rate: int) -> list:
    est_np = est.detach().cpu().double().numpy()
    ref_np = None if ref is None else ref.detach().cpu().double().numpy()
    out = []
    for i in range(est_np.shape[0]):
        r = None if ref_np is None else ref_np[i]
        out.append(provider.normalized(est_np[i], r, sample_rate))
    return out


def discriminator_loss(disc: Discriminator, est: torch.Tensor,
                       ref: torch.Tensor | None, provider: MetricProvider,
                       sample_rate: int, stft: StftConfig = METRIC_STFT,
                       buffer: ReplayBuffer | None = None,
                       gen: np.random.Generator | None = None) -> torch.Tensor:
    """Squared error between D's prediction and the normalized metric.

    Intrusive variants also see the (ref, ref) anchor with target 1.0. When a
    replay buffer is supplied, past pairs worth half a batch join the loss and
    the current pairs are pushed afterwards.
    """
    if disc.intrusive != (provider.kind == "intrusive"):
        raise MetricGanError(
            f"provider {provider.name} ({provider.kind}) does not match the "
            f"{'intrusive' if disc.intrusive else 'non-intrusive'} discriminator"
        )
    est_mag = metric_spectrogram(est.detach(), stft)
    ref_mag = None if ref is None else metric_spectrogram(ref.detach(), stft)
    targets = _targets(provider, est, ref if disc.intrusive else None, sample_rate)

    pairs = [(est_mag[i], None if ref_mag is None else ref_mag[i], targets[i])
             for i in range(est_mag.shape[0])]
    if disc.intrusive:
        pairs += [(ref_mag[i], ref_mag[i], 1.0) for i in range(ref_mag.shape[0])]
    replayed = []
    if buffer is not None:
        replayed = buffer.sample(len(pairs) // 2, gen or np.random.default_rng(),
                                 shape=est_mag[0].shape)
        for i in range(est_mag.shape[0]):
            buffer.push(est_mag[i], None if ref_mag is None else ref_mag[i], targets[i])

    losses = []
    for shape in {e.shape for e, _, _ in pairs + replayed}:  # batch per shape
        group = [item for item in pairs + replayed if item[0].shape == shape]
        e_batch = torch.stack([e for e, _, _ in group])
        r_batch = None
        if disc.intrusive:
            r_batch = torch.stack([r for _, r, _ in group])
        target = torch.tensor([t for _, _, t in group], dtype=e_batch.dtype)
        pred = disc(e_batch, r_batch)
        losses.append((pred - target) ** 2)
    return torch.cat(losses).mean()


def generator_loss(disc: Discriminator, est: torch.Tensor,
                   ref: torch.Tensor | None = None,
                   stft: StftConfig = METRIC_STFT) -> torch.Tensor:
    """Squared distance of D's prediction from the ideal score 1.0."""
    est_mag = metric_spectrogram(est, stft)
    ref_mag = None if ref is None else metric_spectrogram(ref.detach(), stft)
    pred = disc(est_mag, ref_mag)
    return ((pred - 1.0) ** 2).mean()


def multi_discriminator_step(est: torch.Tensor, ref: torch.Tensor | None,
                             discs: dict, providers: dict, optimizers: dict,
                             sample_rate: int, stft: StftConfig = METRIC_STFT,
                             buffers: dict | None = None,
                             gen: np.random.Generator | None = None):
    """Train each named discriminator on its own metric, then hand the
    generator the mean of their adversarial terms.

    Returns (d_losses: {name: float}, g_loss: differentiable scalar).
    """
    if discs.keys() != providers.keys() or discs.keys() != optimizers.keys():
        raise MetricGanError("discriminators, providers, and optimizers must align")
    d_losses = {}
    for name, disc in discs.items():
        opt = optimizers[name]
        opt.zero_grad()
        buf = None if buffers is None else buffers.get(name)
        loss = discriminator_loss(disc, est, ref, providers[name], sample_rate,
                                  stft, buffer=buf, gen=gen)
        loss.backward()
        opt.step()
        d_losses[name] = float(loss.detach())
    g_terms = []
    for name, disc in discs.items():
        pair_ref = ref if disc.intrusive else None
        g_terms.append(generator_loss(disc, est, pair_ref, stft))
    return d_losses, torch.stack(g_terms).mean()
