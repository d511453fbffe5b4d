"""Near-perfect-reconstruction pseudo-QMF filterbank.

The prototype is a Kaiser-windowed sinc lowpass whose cutoff is tuned by a
golden-section search that minimizes the analysis→synthesis reconstruction
error of a unit impulse. Cosine modulation with alternating ±π/4 phase
offsets produces the per-band analysis/synthesis filters; both sides carry a
√num_bands gain so the decimated subbands preserve signal energy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from napse.audio import Waveform

DEFAULT_NUM_BANDS = 4
DEFAULT_TAPS = 64
DEFAULT_BETA = 9.0


class PqmfError(ValueError):
    """Invalid filterbank design parameters or band geometry."""


@dataclass(frozen=True)
class PqmfFilterbank:
    """Cosine-modulated filterbank: prototype plus derived per-band filters."""

    num_bands: int
    prototype: np.ndarray  # [taps], symmetric
    analysis: np.ndarray  # [num_bands, taps]
    synthesis: np.ndarray  # [num_bands, taps]
    cutoff: float
    beta: float
    _torch_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def taps(self) -> int:
        return self.prototype.shape[0]

    @property
    def delay(self) -> int:
        """Round-trip group delay in full-rate samples."""
        return self.taps - 1

    def filters(self, which: str, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        """Conv1d-ready filter weights [num_bands, 1, taps], flipped for true convolution."""
        key = (which, dtype)
        if key not in self._torch_cache:
            bank = self.analysis if which == "analysis" else self.synthesis
            w = torch.from_numpy(np.ascontiguousarray(bank[:, ::-1])).to(dtype)
            self._torch_cache[key] = w.unsqueeze(1)
        return self._torch_cache[key]


def _prototype(taps: int, cutoff: float, beta: float) -> np.ndarray:
    n = np.arange(taps, dtype=np.float64)
    center = (taps - 1) / 2.0
    h = 2.0 * cutoff * np.sinc(2.0 * cutoff * (n - center))
    return h * np.kaiser(taps, beta)


def _modulate(proto: np.ndarray, num_bands: int) -> tuple[np.ndarray, np.ndarray]:
    taps = proto.shape[0]
    n = np.arange(taps, dtype=np.float64)
    center = (taps - 1) / 2.0
    k = np.arange(num_bands, dtype=np.float64)[:, None]
    arg = (2.0 * k + 1.0) * np.pi / (2.0 * num_bands) * (n[None, :] - center)
    phase = ((-1.0) ** k) * np.pi / 4.0
    # analysis·synthesis passband product must be 4·num_bands for a unity
    # round trip (each cos halves the gain, decimation adds 1/num_bands)
    gain = 2.0 * np.sqrt(num_bands)
    analysis = gain * proto[None, :] * np.cos(arg + phase)
    synthesis = gain * proto[None, :] * np.cos(arg - phase)
    return analysis, synthesis


def _impulse_error(num_bands: int, taps: int, cutoff: float, beta: float) -> float:
    """Reconstruction error of a delayed impulse through the full filterbank."""
    analysis, synthesis = _modulate(_prototype(taps, cutoff, beta), num_bands)
    length = 4 * taps
    x = np.zeros(length)
    x[0] = 1.0
    y = np.zeros(length + taps - 1)
    for b in range(num_bands):
        sub = np.convolve(x, analysis[b])[:length][::num_bands]
        up = np.zeros(length)
        up[:: num_bands][: sub.shape[0]] = sub
        y += np.convolve(up, synthesis[b])
    target = np.zeros_like(y)
    target[taps - 1] = 1.0
    return float(np.sum((y - target) ** 2))


def _golden_section(objective, lo: float, hi: float, iters: int = 60) -> float:
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = objective(c), objective(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = objective(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = objective(d)
    return (a + b) / 2.0


def design_pqmf(num_bands: int = DEFAULT_NUM_BANDS, taps: int = DEFAULT_TAPS,
                cutoff: float | None = None, beta: float = DEFAULT_BETA) -> PqmfFilterbank:
    """Design a near-PR filterbank; ``cutoff=None`` optimizes it automatically.

    Parameters
    ----------
    num_bands : number of uniform subbands (≥ 2).
    taps : prototype length; must be a multiple of num_bands and at least
        8·num_bands for usable stopband attenuation.
    cutoff : normalized prototype cutoff in cycles/sample. When omitted a
        golden-section search minimizes the impulse reconstruction error
        around the nominal 1/(2·num_bands) band edge.
    beta : Kaiser window shape parameter.
    """
    if num_bands < 2:
        raise PqmfError(f"num_bands must be >= 2, got {num_bands}")
    if taps % num_bands != 0:
        raise PqmfError(f"taps {taps} must be a multiple of num_bands {num_bands}")
    if taps < 8 * num_bands:
        raise PqmfError(f"taps {taps} too short; need at least {8 * num_bands}")
    if cutoff is None:
        nominal = 1.0 / (4.0 * num_bands)  # band-edge frequency in cycles/sample
        cutoff = _golden_section(
            lambda c: _impulse_error(num_bands, taps, c, beta),
            0.7 * nominal, 1.6 * nominal,
        )
    elif not 0.0 < cutoff < 0.5:
        raise PqmfError(f"cutoff must lie in (0, 0.5), got {cutoff}")
    proto = _prototype(taps, cutoff, beta)
    analysis, synthesis = _modulate(proto, num_bands)
    return PqmfFilterbank(num_bands=num_bands, prototype=proto,
                          analysis=analysis, synthesis=synthesis,
                          cutoff=float(cutoff), beta=beta)


def pqmf_analysis_tensor(x: torch.Tensor, fb: PqmfFilterbank) -> torch.Tensor:
    """Split [batch, T] into subbands [batch, num_bands, T/num_bands].

    The input is zero-padded on the right to a multiple of num_bands; the
    causal left pad realizes negative-index filter history.
    """
    if x.ndim != 2:
        raise PqmfError(f"expected [batch, time], got shape {tuple(x.shape)}")
    if x.shape[-1] < fb.taps:
        raise PqmfError(f"input length {x.shape[-1]} shorter than filter ({fb.taps} taps)")
    k = fb.num_bands
    pad_right = (-x.shape[-1]) % k
    x = F.pad(x.unsqueeze(1), (fb.taps - 1, pad_right))
    filtered = F.conv1d(x, fb.filters("analysis", x.dtype))
    return filtered[:, :, ::k]


def pqmf_synthesis_tensor(subbands: torch.Tensor, fb: PqmfFilterbank) -> torch.Tensor:
    """Merge [batch, num_bands, frames] back to [batch, frames·num_bands].

    The result trails the original analysis input by ``fb.delay`` samples.
    """
    if subbands.ndim != 3 or subbands.shape[1] != fb.num_bands:
        raise PqmfError(
            f"expected [batch, {fb.num_bands}, frames], got shape {tuple(subbands.shape)}"
        )
    k = fb.num_bands
    batch, _, frames = subbands.shape
    up = subbands.new_zeros((batch, k, frames * k))
    up[:, :, ::k] = subbands
    up = F.pad(up, (fb.taps - 1, 0))
    # one conv per band, summed: groups=k then sum over channel axis
    merged = F.conv1d(up, fb.filters("synthesis", up.dtype).transpose(0, 1))
    return merged.squeeze(1)


def pqmf_analysis(wave: Waveform, fb: PqmfFilterbank) -> list[Waveform]:
    """Waveform wrapper over :func:`pqmf_analysis_tensor` (float64)."""
    x = torch.from_numpy(wave.samples).unsqueeze(0)
    bands = pqmf_analysis_tensor(x, fb).squeeze(0).numpy()
    rate = wave.sample_rate // fb.num_bands
    return [Waveform(bands[b], rate) for b in range(fb.num_bands)]


def pqmf_synthesis(subbands: list[Waveform], fb: PqmfFilterbank) -> Waveform:
    if len(subbands) != fb.num_bands:
        raise PqmfError(f"expected {fb.num_bands} subbands, got {len(subbands)}")
    lengths = {w.num_samples for w in subbands}
    if len(lengths) != 1:
        raise PqmfError(f"subband lengths differ: {sorted(lengths)}")
    stack = torch.from_numpy(np.stack([w.samples for w in subbands])).unsqueeze(0)
    merged = pqmf_synthesis_tensor(stack, fb).squeeze(0).numpy()
    return Waveform(merged, subbands[0].sample_rate * fb.num_bands)
