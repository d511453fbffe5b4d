"""Personalized speech enhancement: two-stage subband enhancement conditioned
on fused speaker representations, trained with multi-scale spectral losses and
metric-predicting adversarial discriminators."""

__version__ = "0.1.0"

from napse.audio import Waveform, load_wav, save_wav
from napse.datasim import SimSpec, build_manifest, simulate_example
from napse.dsp import ComplexSpectrogram, StftConfig, fbank, istft, stft
from napse.losses import si_snr_loss, stage1_total, stage2_total
from napse.model import (
    ModelConfig,
    TwoStageModel,
    count_params,
    enhance,
    load_checkpoint,
    save_checkpoint,
    toy_config,
)
from napse.pipeline import PhaseRunner, TrainConfig, ablation_suite, benchmark_rtf, evaluate, run_schedule
from napse.pqmf import PqmfFilterbank, design_pqmf, pqmf_analysis, pqmf_synthesis

__all__ = [
    "Waveform",
    "load_wav",
    "save_wav",
    "StftConfig",
    "ComplexSpectrogram",
    "stft",
    "istft",
    "fbank",
    "PqmfFilterbank",
    "design_pqmf",
    "pqmf_analysis",
    "pqmf_synthesis",
    "SimSpec",
    "simulate_example",
    "build_manifest",
    "si_snr_loss",
    "stage1_total",
    "stage2_total",
    "ModelConfig",
    "TwoStageModel",
    "toy_config",
    "count_params",
    "enhance",
    "save_checkpoint",
    "load_checkpoint",
    "TrainConfig",
    "PhaseRunner",
    "run_schedule",
    "evaluate",
    "ablation_suite",
    "benchmark_rtf",
]
