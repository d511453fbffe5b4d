"""Supervised training losses and the per-stage totals.

Every term is differentiable w.r.t. the estimate and dtype-generic: float32
for training, float64 when tests recompute values against brute-force
oracles. Totals are unweighted sums — stage one combines SI-SNR, the
multi-scale magnitude and asymmetric terms, and the adversarial term;
stage two adds the compressed real/imaginary term at every scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json

import torch

from napse.audio import Waveform
from napse.dsp import StftConfig, loss_scale_presets, stft_tensor

SI_SNR_EPS = 1e-10
SILENCE_ENERGY = 1e-8
DEFAULT_COMPRESSION = 0.5


class LossError(ValueError):
    """Invalid loss inputs: silent reference or mismatched geometry."""


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, Waveform):
        return torch.from_numpy(x.samples)
    return x


def _check_same_shape(est: torch.Tensor, ref: torch.Tensor, what: str) -> None:
    if est.shape != ref.shape:
        raise LossError(f"{what} shapes differ: {tuple(est.shape)} vs {tuple(ref.shape)}")


# ---------------------------------------------------------------------------
# time-domain loss


def si_snr_loss(est, ref) -> torch.Tensor:
    """Negative scale-invariant SNR in dB, batch-averaged.

    Both signals are zero-meaned, then the estimate is decomposed against
    the projection onto the reference; scaling the estimate by any α > 0
    leaves the value unchanged.
    """
    est, ref = _as_tensor(est), _as_tensor(ref)
    _check_same_shape(est, ref, "waveform")
    if (ref**2).sum(dim=-1).min().item() <= SILENCE_ENERGY:
        raise LossError("silent reference: SI-SNR undefined")
    est = est - est.mean(dim=-1, keepdim=True)
    ref = ref - ref.mean(dim=-1, keepdim=True)
    dot = (est * ref).sum(dim=-1, keepdim=True)
    target = dot * ref / (ref**2).sum(dim=-1, keepdim=True)
    residual = est - target
    ratio = ((target**2).sum(dim=-1) + SI_SNR_EPS) / ((residual**2).sum(dim=-1) + SI_SNR_EPS)
    return (-10.0 * torch.log10(ratio)).mean()


# ---------------------------------------------------------------------------
# spectral losses (operate on complex [.., frames, bins] tensors)


def _compressed_magnitude(spec: torch.Tensor, c: float) -> torch.Tensor:
    return spec.abs() ** c


def mag_loss(est_spec: torch.Tensor, ref_spec: torch.Tensor,
             compression: float = DEFAULT_COMPRESSION) -> torch.Tensor:
    """MSE between power-compressed magnitude spectra."""
    _check_same_shape(est_spec, ref_spec, "spectrogram")
    diff = _compressed_magnitude(est_spec, compression) - _compressed_magnitude(ref_spec, compression)
    return (diff**2).mean()


def asym_loss(est_spec: torch.Tensor, ref_spec: torch.Tensor,
              compression: float = DEFAULT_COMPRESSION) -> torch.Tensor:
    """One-sided magnitude penalty: only under-estimation (suppression) counts."""
    _check_same_shape(est_spec, ref_spec, "spectrogram")
    short = _compressed_magnitude(ref_spec, compression) - _compressed_magnitude(est_spec, compression)
    return (torch.clamp(short, min=0.0) ** 2).mean()


def ri_loss(est_spec: torch.Tensor, ref_spec: torch.Tensor,
            compression: float = DEFAULT_COMPRESSION) -> torch.Tensor:
    """MSE on magnitude-compressed real and imaginary parts, summed over parts."""
    _check_same_shape(est_spec, ref_spec, "spectrogram")

    def compress(spec):
        mag = spec.abs()
        scale = (mag + 1e-12) ** (compression - 1.0)
        return spec * scale  # |S|^c with original phase

    d = compress(est_spec) - compress(ref_spec)
    return (d.real**2).mean() + (d.imag**2).mean()


_SPECTRAL_TERMS = {"mag": mag_loss, "asym": asym_loss, "ri": ri_loss}


def multi_scale(term: str, est_wave, ref_wave,
                scales: list[StftConfig] | None = None,
                compression: float = DEFAULT_COMPRESSION) -> torch.Tensor:
    """Mean of a spectral term over the STFT scale set (default: three presets)."""
    if term not in _SPECTRAL_TERMS:
        raise LossError(f"unknown loss term {term!r}; expected one of {sorted(_SPECTRAL_TERMS)}")
    if scales is None:
        scales = loss_scale_presets()
    if not scales:
        raise LossError("empty scale set")
    est, ref = _as_tensor(est_wave), _as_tensor(ref_wave)
    _check_same_shape(est, ref, "waveform")
    fn = _SPECTRAL_TERMS[term]
    values = [fn(stft_tensor(est, cfg), stft_tensor(ref, cfg), compression) for cfg in scales]
    return torch.stack(values).mean()


# ---------------------------------------------------------------------------
# stage totals


@dataclass(frozen=True)
class LossBreakdown:
    """Scalar record of one loss evaluation; ``tensor`` keeps the graph alive."""

    si_snr: float
    mag: tuple
    asym: tuple
    ri: tuple
    gan: float
    total: float
    tensor: torch.Tensor | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        columns = [self.mag, self.asym] + ([self.ri] if self.ri else [])
        per_scale = [sum(parts) for parts in zip(*columns)]
        recombined = self.si_snr + sum(per_scale) / len(self.mag) + self.gan
        if abs(recombined - self.total) > 1e-6 * max(1.0, abs(self.total)):
            raise LossError(
                f"inconsistent breakdown: recombined {recombined!r} != total {self.total!r}"
            )

    def to_json(self) -> str:
        return json.dumps({
            "si_snr": self.si_snr, "mag": list(self.mag), "asym": list(self.asym),
            "ri": list(self.ri), "gan": self.gan, "total": self.total,
        })


def _stage_total(est, ref, gan_term, scales, compression, with_ri: bool) -> LossBreakdown:
    if scales is None:
        scales = loss_scale_presets()
    if not scales:
        raise LossError("empty scale set")
    est, ref = _as_tensor(est), _as_tensor(ref)
    gan = gan_term if torch.is_tensor(gan_term) else torch.as_tensor(float(gan_term))
    sisnr = si_snr_loss(est, ref)
    mags, asyms, ris = [], [], []
    for cfg in scales:
        e, r = stft_tensor(est, cfg), stft_tensor(ref, cfg)
        mags.append(mag_loss(e, r, compression))
        asyms.append(asym_loss(e, r, compression))
        if with_ri:
            ris.append(ri_loss(e, r, compression))
    per_scale = torch.stack([m + a for m, a in zip(mags, asyms)])
    if with_ri:
        per_scale = per_scale + torch.stack(ris)
    total = sisnr + per_scale.mean() + gan
    return LossBreakdown(
        si_snr=sisnr.item(),
        mag=tuple(m.item() for m in mags),
        asym=tuple(a.item() for a in asyms),
        ri=tuple(r.item() for r in ris),
        gan=gan.item(),
        total=total.item(),
        tensor=total,
    )


def stage1_total(est, ref, gan_term=0.0, scales: list[StftConfig] | None = None,
                 compression: float = DEFAULT_COMPRESSION) -> LossBreakdown:
    """SI-SNR + scale-mean(mag + asym) + adversarial term, all unweighted."""
    return _stage_total(est, ref, gan_term, scales, compression, with_ri=False)


def stage2_total(est, ref, gan_term=0.0, scales: list[StftConfig] | None = None,
                 compression: float = DEFAULT_COMPRESSION) -> LossBreakdown:
    """Stage-one total plus the compressed real/imaginary term at every scale."""
    return _stage_total(est, ref, gan_term, scales, compression, with_ri=True)
