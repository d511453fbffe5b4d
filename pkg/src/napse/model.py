"""Two-stage personalized enhancement network.

Stage one (MAG-Net) estimates a bounded magnitude mask on PQMF-subband
spectra and reuses the mixture phase; stage two (COM-Net) refines the
stage-one complex spectrum additively through dual real/imaginary decoder
heads. Both stages share an encoder layout — frequency-downsampling
convolutions gated by the fused speaker embedding, a stack of gated causal
temporal convolution modules, and frequency-upsampling decoders with U-Net
skips — and every layer is strictly causal along the frame axis.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from napse.audio import Waveform
from napse.dsp import StftConfig, istft_tensor, main_stft_config, stft_tensor
from napse.pqmf import PqmfFilterbank, design_pqmf, pqmf_analysis_tensor, pqmf_synthesis_tensor
from napse.speaker import EMBEDDING_DIM, FusionLayer, embed as speaker_embed, enrollment_stats

CHECKPOINT_VERSION = 1
TRAINING_PHASES = ("stage1", "stage2", "joint")


class ModelError(ValueError):
    """Invalid model configuration or input geometry."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; defaults are the full-scale layout."""

    sample_rate: int = 48000
    num_subbands: int = 4
    pqmf_taps: int = 64
    win_ms: float = 20.0
    hop_ms: float = 10.0
    fd_channels: tuple = (64, 128, 256)
    gtcm_blocks: int = 4
    gtcm_kernel: int = 3
    gtcm_dilations: tuple = (1, 2, 5, 9)
    tcn_dim: int = 128
    embedding_dim: int = EMBEDDING_DIM
    mask_ceiling: float = 2.0

    def __post_init__(self):
        if len(self.fd_channels) != 3:
            raise ModelError(f"exactly three FD layers required, got {len(self.fd_channels)}")
        if self.gtcm_blocks != 4:
            raise ModelError(f"exactly four S-GTCM stacks required, got {self.gtcm_blocks}")
        if self.sample_rate % self.num_subbands != 0:
            raise ModelError("sample_rate must divide evenly into subbands")
        if self.gtcm_kernel < 2 or not self.gtcm_dilations:
            raise ModelError("S-GTCM needs kernel ≥ 2 and a non-empty dilation list")

    @property
    def subband_rate(self) -> int:
        return self.sample_rate // self.num_subbands

    def stft_config(self) -> StftConfig:
        return main_stft_config(self.subband_rate, self.win_ms, self.hop_ms)


def toy_config(sample_rate: int = 12000) -> ModelConfig:
    """Desk-scale layout used by tests and the bundled experiments."""
    return ModelConfig(sample_rate=sample_rate, fd_channels=(16, 32, 64), tcn_dim=32)


# ---------------------------------------------------------------------------
# building blocks


class ChannelLayerNorm(nn.Module):
    """LayerNorm over the channel axis only — no peeking across frames."""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.gamma = nn.Parameter(torch.ones(1, channels, 1, 1))
        self.beta = nn.Parameter(torch.zeros(1, channels, 1, 1))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mu = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        return (x - mu) / torch.sqrt(var + self.eps) * self.gamma + self.beta


class EmbeddingGate(nn.Module):
    """Per-channel multiplicative sigmoid gate computed from the fused vector."""

    def __init__(self, embedding_dim: int, channels: int):
        super().__init__()
        self.proj = nn.Linear(embedding_dim, channels)

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        gate = torch.sigmoid(self.proj(emb))[:, :, None, None]
        return x * gate


class FreqDown(nn.Module):
    """Frequency-downsampling conv (stride 2 in frequency, causal in time)."""

    def __init__(self, in_ch: int, out_ch: int, embedding_dim: int):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, kernel_size=(2, 3), stride=(1, 2))
        self.norm = ChannelLayerNorm(out_ch)
        self.act = nn.PReLU(out_ch)
        self.gate = EmbeddingGate(embedding_dim, out_ch)

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        x = nn.functional.pad(x, (1, 1, 1, 0))  # freq both sides, time left only
        return self.gate(self.act(self.norm(self.conv(x))), emb)


class FreqUp(nn.Module):
    """Transposed counterpart of FreqDown, consuming the matching skip."""

    def __init__(self, in_ch: int, skip_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.ConvTranspose2d(in_ch + skip_ch, out_ch,
                                       kernel_size=(2, 3), stride=(1, 2))
        self.norm = ChannelLayerNorm(out_ch)
        self.act = nn.PReLU(out_ch)

    def forward(self, x: torch.Tensor, skip: torch.Tensor, freq_out: int) -> torch.Tensor:
        x = torch.cat([x, skip], dim=1)
        y = self.conv(x)
        # transposed conv emits one trailing frame and freq padding: crop to
        # the encoder geometry, keeping time alignment causal
        y = y[:, :, : x.shape[2], 1 : 1 + freq_out]
        return self.act(self.norm(y))


class GtcmBlock(nn.Module):
    """Gated dilated causal temporal conv with a residual connection."""

    def __init__(self, dim: int, kernel: int, dilation: int):
        super().__init__()
        self.pad = (kernel - 1) * dilation
        self.filt = nn.Conv1d(dim, dim, kernel, dilation=dilation)
        self.gate = nn.Conv1d(dim, dim, kernel, dilation=dilation)
        self.out = nn.Conv1d(dim, dim, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = nn.functional.pad(x, (self.pad, 0))
        h = torch.tanh(self.filt(h)) * torch.sigmoid(self.gate(h))
        return x + self.out(h)


class SGtcmStack(nn.Module):
    """One S-GTCM: gated blocks at each dilation, applied in sequence."""

    def __init__(self, dim: int, kernel: int, dilations: tuple):
        super().__init__()
        self.blocks = nn.ModuleList(GtcmBlock(dim, kernel, d) for d in dilations)

    @property
    def receptive_field(self) -> int:
        k = self.blocks[0].filt.kernel_size[0]
        return 1 + (k - 1) * sum(b.filt.dilation[0] for b in self.blocks)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            x = block(x)
        return x


class _StageNet(nn.Module):
    """Shared encoder/TCN/decoder skeleton for both stages."""

    def __init__(self, cfg: ModelConfig, in_ch: int, head_ch: int, num_heads: int):
        super().__init__()
        self.cfg = cfg
        chans = [in_ch, *cfg.fd_channels]
        self.encoder = nn.ModuleList(
            FreqDown(chans[i], chans[i + 1], cfg.embedding_dim) for i in range(3)
        )
        bins = cfg.stft_config().num_bins
        sizes = [bins]
        for _ in range(3):
            sizes.append((sizes[-1] + 2 - 3) // 2 + 1)
        self.freq_sizes = sizes  # per encoder level, input first
        flat = cfg.fd_channels[-1] * sizes[-1]
        self.tcn_in = nn.Conv1d(flat, cfg.tcn_dim, 1)
        self.stacks = nn.ModuleList(
            SGtcmStack(cfg.tcn_dim, cfg.gtcm_kernel, cfg.gtcm_dilations)
            for _ in range(cfg.gtcm_blocks)
        )
        self.tcn_out = nn.Conv1d(cfg.tcn_dim, flat, 1)
        self.decoders = nn.ModuleList()
        self.heads = nn.ModuleList()
        for _ in range(num_heads):
            ups = nn.ModuleList([
                FreqUp(cfg.fd_channels[2], cfg.fd_channels[2], cfg.fd_channels[1]),
                FreqUp(cfg.fd_channels[1], cfg.fd_channels[1], cfg.fd_channels[0]),
                FreqUp(cfg.fd_channels[0], cfg.fd_channels[0], cfg.fd_channels[0]),
            ])
            self.decoders.append(ups)
            self.heads.append(nn.Conv2d(cfg.fd_channels[0], head_ch, kernel_size=1))

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> list[torch.Tensor]:
        skips = []
        for fd in self.encoder:
            x = fd(x, emb)
            skips.append(x)
        b, c, t, f = skips[-1].shape
        h = skips[-1].permute(0, 1, 3, 2).reshape(b, c * f, t)
        h = self.tcn_in(h)
        for stack in self.stacks:
            h = stack(h)
        h = self.tcn_out(h).reshape(b, c, f, t).permute(0, 1, 3, 2)
        outs = []
        for ups, head in zip(self.decoders, self.heads):
            y = h
            for level, up in enumerate(ups):
                y = up(y, skips[2 - level], self.freq_sizes[2 - level])
            outs.append(head(y))
        return outs


class MagNet(nn.Module):
    """Stage one: bounded magnitude mask on the mixture subband spectra."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.net = _StageNet(cfg, in_ch=cfg.num_subbands,
                             head_ch=cfg.num_subbands, num_heads=1)

    def forward(self, mix_spec: torch.Tensor, emb: torch.Tensor,
                mask_override: torch.Tensor | None = None) -> torch.Tensor:
        """Complex [batch, band, frame, bin] -> masked complex spectra."""
        if mask_override is None:
            logits = self.net(mix_spec.abs(), emb)[0]
            mask = self.cfg.mask_ceiling * torch.sigmoid(logits)
        else:
            mask = mask_override
        return mix_spec * mask  # real mask: scales magnitude, keeps phase


class ComNet(nn.Module):
    """Stage two: additive real/imaginary refinement of the stage-one spectra.

    Both decoder heads are zero-initialized so a fresh stage two is exactly
    the identity on the stage-one output.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        k = cfg.num_subbands
        self.net = _StageNet(cfg, in_ch=4 * k, head_ch=k, num_heads=2)
        for head in self.net.heads:
            nn.init.zeros_(head.weight)
            nn.init.zeros_(head.bias)

    def forward(self, mix_spec: torch.Tensor, stage1_spec: torch.Tensor,
                emb: torch.Tensor) -> torch.Tensor:
        feats = torch.cat([mix_spec.real, mix_spec.imag,
                           stage1_spec.real, stage1_spec.imag], dim=1)
        delta_r, delta_i = self.net(feats, emb)
        return stage1_spec + torch.complex(delta_r, delta_i)


# ---------------------------------------------------------------------------
# full model


@dataclass(frozen=True)
class StageOutput:
    """Per-stage waveforms plus the spectra the losses are computed from."""

    stage1_wave: Waveform
    stage2_wave: Waveform
    stage1_spec: torch.Tensor
    stage2_spec: torch.Tensor


class TwoStageModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.mag_net = MagNet(cfg)
        self.com_net = ComNet(cfg)
        self.fusion = FusionLayer()
        fb = design_pqmf(cfg.num_subbands, cfg.pqmf_taps)
        self._filterbank = fb
        self._stft = cfg.stft_config()

    @property
    def filterbank(self) -> PqmfFilterbank:
        return self._filterbank

    def _padded_length(self, length: int) -> int:
        """Input length + synthesis-delay headroom, rounded to a band multiple."""
        k = self.cfg.num_subbands
        return -(-(length + self._filterbank.delay) // k) * k

    def split(self, wave: torch.Tensor) -> torch.Tensor:
        """[batch, T] -> complex [batch, band, frame, bin] at the subband rate.

        The input is right-padded so the synthesis delay can be compensated
        without losing tail samples.
        """
        padded = self._padded_length(wave.shape[-1])
        wave = nn.functional.pad(wave, (0, padded - wave.shape[-1]))
        sub = pqmf_analysis_tensor(wave, self._filterbank)
        b, bands, length = sub.shape
        spec = stft_tensor(sub.reshape(b * bands, length), self._stft)
        return spec.reshape(b, bands, *spec.shape[-2:])

    def merge(self, spec: torch.Tensor, length: int) -> torch.Tensor:
        """Inverse of :meth:`split`: spectra -> delay-compensated [batch, T]."""
        b, bands, frames, bins = spec.shape
        k = self.cfg.num_subbands
        sub_len = self._padded_length(length) // k
        sub = istft_tensor(spec.reshape(b * bands, frames, bins), self._stft, length=sub_len)
        wave = pqmf_synthesis_tensor(sub.reshape(b, bands, sub_len), self._filterbank)
        d = self._filterbank.delay
        return wave[:, d : d + length]

    def forward(self, mixture: torch.Tensor, emb: torch.Tensor):
        """[batch, T] mixture + [batch, 256] fused embedding -> stage outputs."""
        if mixture.ndim != 2:
            raise ModelError(f"mixture must be [batch, time], got {tuple(mixture.shape)}")
        if emb.shape != (mixture.shape[0], self.cfg.embedding_dim):
            raise ModelError(
                f"embedding must be [batch, {self.cfg.embedding_dim}], got {tuple(emb.shape)}"
            )
        length = mixture.shape[1]
        mix_spec = self.split(mixture)
        s1_spec = self.mag_net(mix_spec, emb)
        s1_wave = self.merge(s1_spec, length)
        s2_spec = self.com_net(mix_spec, s1_spec, emb)
        s2_wave = self.merge(s2_spec, length)
        return s1_wave, s2_wave, s1_spec, s2_spec

    def fuse_condition(self, embedding: torch.Tensor, stats: torch.Tensor) -> torch.Tensor:
        return self.fusion(embedding, stats)

    def set_stage_trainable(self, stage1: bool, stage2: bool) -> None:
        """Fusion stays trainable in every phase; stages toggle independently."""
        for p in self.mag_net.parameters():
            p.requires_grad_(stage1)
        for p in self.com_net.parameters():
            p.requires_grad_(stage2)
        for p in self.fusion.parameters():
            p.requires_grad_(True)


def count_params(model: TwoStageModel) -> dict:
    """Exact parameter counts per component."""
    parts = {
        "mag_net": sum(p.numel() for p in model.mag_net.parameters()),
        "com_net": sum(p.numel() for p in model.com_net.parameters()),
        "fusion": sum(p.numel() for p in model.fusion.parameters()),
    }
    parts["total"] = sum(parts.values())
    return parts


# ---------------------------------------------------------------------------
# end-to-end enhancement


def enhance(mixture: Waveform, enrollment: Waveform, model: TwoStageModel,
            provider, utterance_id: str | None = None) -> StageOutput:
    """Embed, fuse, split, enhance, merge — deterministic in eval mode."""
    if mixture.sample_rate != model.cfg.sample_rate:
        raise ModelError(
            f"mixture rate {mixture.sample_rate} != model rate {model.cfg.sample_rate}"
        )
    if enrollment.sample_rate != model.cfg.sample_rate:
        raise ModelError("enrollment sample rate differs from the model's")
    emb = speaker_embed(enrollment, provider, utterance_id)
    stats = enrollment_stats(enrollment).vector()
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            dtype = next(model.parameters()).dtype
            emb_t = torch.as_tensor(emb, dtype=dtype).unsqueeze(0)
            stats_t = torch.as_tensor(stats, dtype=dtype).unsqueeze(0)
            fused = model.fuse_condition(emb_t, stats_t)
            mix_t = torch.as_tensor(mixture.samples, dtype=dtype).unsqueeze(0)
            s1_wave, s2_wave, s1_spec, s2_spec = model(mix_t, fused)
    finally:
        model.train(was_training)
    rate = mixture.sample_rate
    return StageOutput(
        stage1_wave=Waveform(s1_wave[0].double().numpy(), rate),
        stage2_wave=Waveform(s2_wave[0].double().numpy(), rate),
        stage1_spec=s1_spec[0],
        stage2_spec=s2_spec[0],
    )


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: TwoStageModel, phase: str, step: int,
                    extra: dict | None = None) -> None:
    if phase not in TRAINING_PHASES:
        raise ModelError(f"phase must be one of {TRAINING_PHASES}, got {phase!r}")
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "fusion_scope": "shared",  # one fusion layer conditions both stages
        "config": asdict(model.cfg),
        "state_dict": model.state_dict(),
        "phase": phase,
        "step": int(step),
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[TwoStageModel, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ModelError(f"unsupported checkpoint version {version!r}")
    cfg_dict = dict(payload["config"])
    for key in ("fd_channels", "gtcm_dilations"):
        cfg_dict[key] = tuple(cfg_dict[key])
    model = TwoStageModel(ModelConfig(**cfg_dict))
    model.load_state_dict(payload["state_dict"])
    meta = {"phase": payload["phase"], "step": payload["step"], "extra": payload["extra"]}
    return model, meta
