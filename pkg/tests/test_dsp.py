import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from napse.audio import Waveform
from napse.dsp import (
    LOG_MEL_FLOOR,
    ComplexSpectrogram,
    DspError,
    StftConfig,
    fbank,
    istft,
    istft_tensor,
    loss_scale_presets,
    main_stft_config,
    stft,
    stft_tensor,
)


def snr_db(ref: np.ndarray, est: np.ndarray) -> float:
    return 10.0 * np.log10(np.sum(ref**2) / np.sum((ref - est) ** 2))


# ---------------------------------------------------------------------------
# configuration validation


def test_config_rejects_win_longer_than_nfft():
    with pytest.raises(DspError):
        StftConfig(n_fft=256, hop=128, win_length=512)


def test_config_rejects_hop_longer_than_win():
    with pytest.raises(DspError):
        StftConfig(n_fft=512, hop=768, win_length=512)


def test_config_rejects_overlap_add_violation():
    # non-overlapping Hann frames have zero-valued joins: not invertible
    with pytest.raises(DspError, match="overlap"):
        StftConfig(n_fft=512, hop=512, win_length=512, window="hann")


def test_config_rejects_unknown_window():
    with pytest.raises(DspError, match="window"):
        StftConfig(n_fft=512, hop=256, win_length=512, window="hamming")


def test_main_config_is_20ms_10ms():
    cfg = main_stft_config(48000)
    assert (cfg.n_fft, cfg.hop, cfg.win_length) == (960, 480, 960)
    assert cfg.window == "sqrt_hann"
    cfg12 = main_stft_config(12000)
    assert (cfg12.n_fft, cfg12.hop, cfg12.win_length) == (240, 120, 240)


def test_loss_scale_presets():
    shapes = [(c.n_fft, c.hop, c.win_length) for c in loss_scale_presets()]
    assert shapes == [(512, 240, 480), (1024, 480, 960), (2048, 960, 1920)]
    assert all(c.window == "hann" for c in loss_scale_presets())


# ---------------------------------------------------------------------------
# forward transform


def test_stft_zero_waveform_gives_zero_spectrogram():
    cfg = main_stft_config(48000)
    spec = stft(Waveform(np.zeros(48000), 48000), cfg)
    assert spec.data.abs().max().item() == 0.0
    assert spec.num_frames == cfg.num_frames(48000)


def test_stft_rejects_empty():
    with pytest.raises(DspError, match="empty"):
        stft(Waveform(np.zeros(0), 48000), main_stft_config(48000))


def test_spectrogram_rejects_bin_mismatch():
    cfg = main_stft_config(48000)
    with pytest.raises(DspError, match="bin"):
        ComplexSpectrogram(torch.zeros(10, 5, dtype=torch.complex64), cfg)


def test_spectrogram_rejects_real_data():
    cfg = main_stft_config(48000)
    with pytest.raises(DspError, match="complex"):
        ComplexSpectrogram(torch.zeros(10, cfg.num_bins), cfg)


@given(seed=st.integers(0, 2**32 - 1), a=st.floats(-3, 3), b=st.floats(-3, 3))
@settings(max_examples=20, deadline=None)
def test_stft_linearity(seed, a, b):
    cfg = StftConfig(n_fft=512, hop=240, win_length=480, window="hann")
    gen = np.random.default_rng(seed)
    x = torch.from_numpy(gen.standard_normal(4800))
    y = torch.from_numpy(gen.standard_normal(4800))
    lhs = stft_tensor(a * x + b * y, cfg)
    rhs = a * stft_tensor(x, cfg) + b * stft_tensor(y, cfg)
    scale = rhs.abs().max().item()
    if scale > 0:
        assert (lhs - rhs).abs().max().item() / scale < 1e-6


# ---------------------------------------------------------------------------
# inverse transform


def test_istft_zero_spectrogram_gives_zero_waveform():
    cfg = main_stft_config(48000)
    spec = ComplexSpectrogram(torch.zeros(11, cfg.num_bins, dtype=torch.complex128), cfg)
    wave = istft(spec, 48000, length=4800)
    assert np.all(wave.samples == 0.0)


def test_istft_rejects_single_frame():
    cfg = main_stft_config(48000)
    with pytest.raises(DspError, match="frames"):
        istft_tensor(torch.zeros(1, cfg.num_bins, dtype=torch.complex64), cfg)


def test_round_trip_default_config(rng):
    cfg = main_stft_config(48000)
    x = torch.from_numpy(rng.standard_normal(48000)).float()
    y = istft_tensor(stft_tensor(x, cfg), cfg, length=48000)
    assert snr_db(x.numpy(), y.numpy()) >= 60.0


@pytest.mark.parametrize("cfg", loss_scale_presets(), ids=lambda c: f"fft{c.n_fft}")
def test_round_trip_loss_presets(rng, cfg):
    x = torch.from_numpy(rng.standard_normal(48000)).float()
    y = istft_tensor(stft_tensor(x, cfg), cfg, length=48000)
    assert snr_db(x.numpy(), y.numpy()) >= 60.0


def test_round_trip_batched(rng):
    cfg = main_stft_config(12000)
    x = torch.from_numpy(rng.standard_normal((3, 12000))).float()
    y = istft_tensor(stft_tensor(x, cfg), cfg, length=12000)
    assert y.shape == x.shape
    assert snr_db(x.numpy().ravel(), y.numpy().ravel()) >= 60.0


def test_istft_analytic_sinusoid_oracle():
    """Invert the exact analytic spectrogram of a pure sinusoid.

    For a periodic-Hann window of length N == n_fft and a bin-aligned
    sinusoid g·cos(2πk0·t/N + φ), the windowed DFT of every frame has
    exactly three nonzero bins:

        S[m, k0]    = 0.25·N·g·e^{jα_m}
        S[m, k0±1]  = −0.125·N·g·e^{jα_m},   α_m = 2πk0(m·hop − N/2)/N + φ

    (window main lobe: W[0] = N/2, W[±1] = −N/4; centered frames put the
    window origin at m·hop − N/2). The least-squares inverse of this
    oracle spectrogram must reproduce the sinusoid itself.
    """
    n_fft, hop, length = 512, 256, 8192
    cfg = StftConfig(n_fft=n_fft, hop=hop, win_length=n_fft, window="hann")
    k0, g, phi = 19, 0.7, 0.9
    frames = cfg.num_frames(length)
    m = np.arange(frames)
    alpha = 2.0 * np.pi * k0 * (m * hop - n_fft / 2) / n_fft + phi
    spec = np.zeros((frames, cfg.num_bins), dtype=np.complex128)
    spec[:, k0] = 0.25 * n_fft * g * np.exp(1j * alpha)
    spec[:, k0 - 1] = -0.125 * n_fft * g * np.exp(1j * alpha)
    spec[:, k0 + 1] = -0.125 * n_fft * g * np.exp(1j * alpha)
    wave = istft_tensor(torch.from_numpy(spec), cfg, length=length)
    t = np.arange(length)
    ref = g * np.cos(2.0 * np.pi * k0 * t / n_fft + phi)
    assert np.max(np.abs(wave.numpy() - ref)) < 1e-9


def test_waveform_level_round_trip(rng):
    cfg = main_stft_config(48000)
    w = Waveform(rng.standard_normal(24000), 48000)
    back = istft(stft(w, cfg), 48000, length=24000)
    assert back.sample_rate == 48000
    assert snr_db(w.samples, back.samples) >= 60.0


# ---------------------------------------------------------------------------
# filterbank features


def test_fbank_silence_hits_log_floor():
    w = Waveform(np.zeros(16000), 16000)
    out = fbank(w)
    assert out.shape[1] == 80
    assert np.all(out == np.log(LOG_MEL_FLOOR))


def test_fbank_width_and_frame_count(rng):
    w = Waveform(rng.standard_normal(48000), 48000)
    out = fbank(w, n_mels=80)
    win, hop = 1200, 480  # 25 ms / 10 ms at 48 kHz
    assert out.shape == ((48000 - win) // hop + 1, 80)
    assert np.all(np.isfinite(out))


def test_fbank_amplitude_doubling_shifts_by_log4(rng):
    x = rng.standard_normal(16000)
    base = fbank(Waveform(x, 16000))
    loud = fbank(Waveform(2.0 * x, 16000))
    # power quadruples; all bins far above the floor for unit-variance noise
    assert np.allclose(loud - base, np.log(4.0), atol=1e-9)


def test_fbank_rejects_short_input():
    with pytest.raises(DspError, match="frame"):
        fbank(Waveform(np.zeros(100), 16000))
