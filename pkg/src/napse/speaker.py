"""Speaker conditioning: embedding providers, enrollment statistics, fusion.

The embedding side is pluggable — a deterministic stub, a small trainable
convolutional encoder for desk-scale experiments, or embeddings read from a
record file produced by an external encoder. Providers are frozen with
respect to enhancement training; only the fusion layer learns.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from napse.audio import Waveform
from napse.dsp import fbank

EMBEDDING_DIM = 256
N_MELS = 80
STATS_DIM = 2 * N_MELS
MIN_ENROLLMENT_SECONDS = 1.0


class SpeakerError(ValueError):
    """Invalid enrollment audio or provider configuration."""


# ---------------------------------------------------------------------------
# enrollment statistics


@dataclass(frozen=True)
class FbankStats:
    """Utterance-level mean and population standard deviation per mel bin."""

    mean: np.ndarray  # [80]
    std: np.ndarray  # [80]

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        if mean.shape != (N_MELS,) or std.shape != (N_MELS,):
            raise SpeakerError(
                f"stats must be [{N_MELS}]-dim, got {mean.shape} / {std.shape}"
            )
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(std))):
            raise SpeakerError("non-finite enrollment statistics")
        if np.any(std < 0):
            raise SpeakerError("negative standard deviation")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def vector(self) -> np.ndarray:
        """Concatenated [mean ‖ std], the 160-dim fusion input."""
        return np.concatenate([self.mean, self.std])


def stats_from_features(features: np.ndarray) -> FbankStats:
    """Population statistics over the frame axis of [frames, 80] features."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != N_MELS:
        raise SpeakerError(f"expected [frames, {N_MELS}] features, got {features.shape}")
    if features.shape[0] < 2:
        raise SpeakerError(f"need at least 2 frames, got {features.shape[0]}")
    std = features.std(axis=0)
    std[np.ptp(features, axis=0) == 0.0] = 0.0  # constant bins: exactly zero spread
    return FbankStats(mean=features.mean(axis=0), std=std)


def enrollment_stats(enrollment: Waveform) -> FbankStats:
    return stats_from_features(fbank(enrollment, n_mels=N_MELS))


# ---------------------------------------------------------------------------
# embedding providers


class StubProvider:
    """Deterministic content-hashed pseudo-embedding; no learned parameters.

    The embedding is a unit-norm vector drawn from an RNG seeded by the
    audio content, so identical utterances map to identical vectors and
    distinct utterances decorrelate. Useful as a fixed, data-free stand-in.
    """

    kind = "stub"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def __call__(self, wave: Waveform, utterance_id: str | None = None) -> np.ndarray:
        digest = hashlib.sha256(np.ascontiguousarray(wave.samples).tobytes()).digest()
        content = int.from_bytes(digest[:8], "little")
        gen = np.random.default_rng(np.random.SeedSequence(entropy=(self.seed, content)))
        v = gen.standard_normal(EMBEDDING_DIM)
        return v / np.linalg.norm(v)


class ToyEncoder(nn.Module):
    """Tiny convolutional utterance encoder over log-mel frames."""

    def __init__(self, channels: int = 32):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv1d(N_MELS, channels, kernel_size=5, padding=2),
            nn.ReLU(),
            nn.Conv1d(channels, channels, kernel_size=5, padding=2, stride=2),
            nn.ReLU(),
            nn.Conv1d(channels, channels, kernel_size=3, padding=1),
            nn.ReLU(),
        )
        self.proj = nn.Linear(channels, EMBEDDING_DIM)

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        """[batch, frames, 80] -> [batch, 256], unit norm."""
        h = self.net(feats.transpose(1, 2)).mean(dim=-1)
        e = self.proj(h)
        return e / e.norm(dim=-1, keepdim=True).clamp_min(1e-12)


class ToyTrainableProvider:
    """Convolutional encoder pretrained on labelled clips, then frozen."""

    kind = "toy"

    def __init__(self, encoder: ToyEncoder | None = None):
        self.encoder = encoder if encoder is not None else ToyEncoder()
        self.freeze()

    def freeze(self) -> None:
        self.encoder.eval()
        for p in self.encoder.parameters():
            p.requires_grad_(False)

    def __call__(self, wave: Waveform, utterance_id: str | None = None) -> np.ndarray:
        feats = torch.from_numpy(fbank(wave, n_mels=N_MELS)).float().unsqueeze(0)
        with torch.no_grad():
            e = self.encoder(feats)[0]
        return e.double().numpy()


def train_toy_provider(clips: list[Waveform], labels: list[int],
                       epochs: int = 30, lr: float = 1e-3,
                       seed: int = 0) -> ToyTrainableProvider:
    """Pretrain a ToyEncoder with a cosine-logit classification loss.

    Per-clip log-mel features are padded to a common frame count; the
    encoder is frozen before being handed back as a provider.
    """
    if len(clips) != len(labels) or not clips:
        raise SpeakerError("clips and labels must be equal-length and non-empty")
    torch.manual_seed(seed)
    encoder = ToyEncoder()
    num_classes = max(labels) + 1
    head = nn.Linear(EMBEDDING_DIM, num_classes, bias=False)
    feats = [torch.from_numpy(fbank(c, n_mels=N_MELS)).float() for c in clips]
    frames = max(f.shape[0] for f in feats)
    batch = torch.stack([
        torch.cat([f, f.new_zeros(frames - f.shape[0], N_MELS)]) for f in feats
    ])
    target = torch.tensor(labels)
    opt = torch.optim.Adam(list(encoder.parameters()) + list(head.parameters()), lr=lr)
    for _ in range(epochs):
        opt.zero_grad()
        logits = head(encoder(batch)) * 10.0  # sharpen cosine logits
        loss = nn.functional.cross_entropy(logits, target)
        loss.backward()
        opt.step()
    return ToyTrainableProvider(encoder)


class ExternalFileProvider:
    """Embeddings precomputed by an external encoder, keyed by utterance id.

    Record file: one JSON object per line, {"utterance_id": ..., "embedding":
    [256 floats]}.
    """

    kind = "external-file"

    def __init__(self, path):
        path = Path(path)
        if not path.exists():
            raise SpeakerError(f"embedding record file not found: {path}")
        self.table: dict[str, np.ndarray] = {}
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                v = np.asarray(rec["embedding"], dtype=np.float64)
                if v.shape != (EMBEDDING_DIM,):
                    raise SpeakerError(
                        f"embedding for {rec['utterance_id']!r} has dim {v.shape}, "
                        f"expected ({EMBEDDING_DIM},)"
                    )
                self.table[rec["utterance_id"]] = v
        if not self.table:
            raise SpeakerError(f"no embeddings in {path}")

    def __call__(self, wave: Waveform, utterance_id: str | None = None) -> np.ndarray:
        if utterance_id is None:
            raise SpeakerError("external-file provider needs an utterance_id")
        if utterance_id not in self.table:
            raise SpeakerError(f"no embedding recorded for {utterance_id!r}")
        return self.table[utterance_id]


def embed(enrollment: Waveform, provider, utterance_id: str | None = None) -> np.ndarray:
    """Unit-norm 256-dim speaker embedding of an enrollment utterance."""
    if enrollment.duration < MIN_ENROLLMENT_SECONDS:
        raise SpeakerError(
            f"enrollment too short: {enrollment.duration:.2f} s < {MIN_ENROLLMENT_SECONDS} s"
        )
    v = np.asarray(provider(enrollment, utterance_id), dtype=np.float64)
    if v.shape != (EMBEDDING_DIM,):
        raise SpeakerError(f"provider returned dim {v.shape}, expected ({EMBEDDING_DIM},)")
    norm = np.linalg.norm(v)
    if norm == 0:
        raise SpeakerError("provider returned a zero embedding")
    return v / norm


# ---------------------------------------------------------------------------
# fusion


@dataclass(frozen=True)
class FusedEmbedding:
    """Conditioning vector produced by the fusion layer."""

    vector: np.ndarray  # [256]

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        if v.shape != (EMBEDDING_DIM,):
            raise SpeakerError(f"fused vector must be [{EMBEDDING_DIM}], got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise SpeakerError("non-finite fused embedding")
        object.__setattr__(self, "vector", v)


class FusionLayer(nn.Module):
    """Affine map of [embedding ‖ mean ‖ std] (416) to the 256-dim conditioner."""

    def __init__(self):
        super().__init__()
        self.dense = nn.Linear(EMBEDDING_DIM + STATS_DIM, EMBEDDING_DIM)

    def forward(self, embedding: torch.Tensor, stats: torch.Tensor) -> torch.Tensor:
        if embedding.shape[-1] != EMBEDDING_DIM or stats.shape[-1] != STATS_DIM:
            raise SpeakerError(
                f"fusion inputs must be [{EMBEDDING_DIM}] and [{STATS_DIM}], "
                f"got {embedding.shape[-1]} and {stats.shape[-1]}"
            )
        return self.dense(torch.cat([embedding, stats], dim=-1))


def fuse(embedding: np.ndarray, stats: FbankStats, fusion: FusionLayer) -> FusedEmbedding:
    emb_t = torch.as_tensor(embedding, dtype=torch.float32).unsqueeze(0)
    stats_t = torch.as_tensor(stats.vector(), dtype=torch.float32).unsqueeze(0)
    with torch.no_grad():
        out = fusion(emb_t, stats_t)[0]
    return FusedEmbedding(out.double().numpy())
