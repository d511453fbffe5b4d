"""Deterministic mixture simulation for personalized-enhancement training.

Examples are target + optional interfering speaker + optional noise, each
optionally reverberated, with exact post-hoc SNR/SIR gains. A bundled
synthetic multi-formant speaker generator and noise/RIR surrogates let the
whole pipeline run with zero external data; real WAV corpora can be dropped
in via the documented directory layout (clean/, noise/, rir/).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve, lfilter

from napse.audio import Waveform, load_wav, save_wav

SNR_CLEAN = math.inf  # sentinel: no noise added
DECAY_60DB = 3.0 * math.log(10.0)  # amplitude e-folding for a 60 dB drop
LABEL_KINDS = ("early", "dry", "reverberant")


class SimError(ValueError):
    """Invalid simulation spec or missing source material."""


def _seed_seq(*parts) -> np.random.SeedSequence:
    """SeedSequence over mixed int/str entropy (strings hashed to ints)."""
    entropy = tuple(
        int.from_bytes(hashlib.sha256(p.encode()).digest()[:8], "little")
        if isinstance(p, str) else int(p)
        for p in parts
    )
    return np.random.SeedSequence(entropy=entropy)


@dataclass(frozen=True)
class SimSpec:
    """Sampling ranges and switch probabilities for mixture simulation."""

    snr_range: tuple = (-5.0, 20.0)
    sir_range: tuple = (-5.0, 20.0)
    rt60_range: tuple = (0.1, 1.2)
    p_interferer: float = 0.5
    p_reverb: float = 0.5
    target_level_range: tuple = (-25.0, -15.0)  # dBFS of the target component
    label: str = "early"
    early_ms: float = 50.0
    seed: int = 0

    def __post_init__(self):
        for name in ("snr_range", "sir_range", "rt60_range", "target_level_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise SimError(f"{name} must be ordered, got ({lo}, {hi})")
        for name in ("p_interferer", "p_reverb"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise SimError(f"{name} must be in [0, 1], got {p}")
        if self.label not in LABEL_KINDS:
            raise SimError(f"label must be one of {LABEL_KINDS}, got {self.label!r}")


@dataclass(frozen=True)
class MixtureExample:
    mixture: Waveform
    label: Waveform
    enrollment: Waveform
    meta: dict
    components: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        rates = {self.mixture.sample_rate, self.label.sample_rate, self.enrollment.sample_rate}
        if len(rates) != 1:
            raise SimError(f"sample rates differ across example parts: {sorted(rates)}")
        if self.mixture.num_samples != self.label.num_samples:
            raise SimError("label must be time-aligned with the mixture (equal length)")


# ---------------------------------------------------------------------------
# source material synthesis


@dataclass(frozen=True)
class SyntheticSpeaker:
    """Fixed vocal-tract pattern: pitch plus formant resonances."""

    speaker_id: int
    f0: float
    formants: tuple
    bandwidths: tuple


def synthetic_speaker(speaker_id: int) -> SyntheticSpeaker:
    gen = np.random.default_rng(_seed_seq("speaker", speaker_id))
    f0 = gen.uniform(85.0, 255.0)
    formants = (
        gen.uniform(320.0, 800.0),
        gen.uniform(900.0, 2200.0),
        gen.uniform(2300.0, 3400.0),
    )
    bandwidths = tuple(gen.uniform(60.0, 140.0) for _ in formants)
    return SyntheticSpeaker(speaker_id, f0, formants, bandwidths)


def _resonator(x: np.ndarray, freq: float, bw: float, rate: int) -> np.ndarray:
    r = math.exp(-math.pi * bw / rate)
    theta = 2.0 * math.pi * freq / rate
    b = [1.0 - r]
    a = [1.0, -2.0 * r * math.cos(theta), r * r]
    return lfilter(b, a, x)


def speak(speaker: SyntheticSpeaker, duration: float, seed: int,
          sample_rate: int = 48000) -> Waveform:
    """One synthetic utterance: jittered glottal pulses through the formants."""
    gen = np.random.default_rng(_seed_seq("utterance", speaker.speaker_id, seed))
    n = int(round(duration * sample_rate))
    excitation = np.zeros(n)
    t = 0.0
    while t < n:
        excitation[int(t)] = 1.0
        jitter = gen.uniform(0.96, 1.04)
        t += sample_rate / (speaker.f0 * jitter)
    excitation += 0.02 * gen.standard_normal(n)  # aspiration noise
    out = excitation
    for freq, bw in zip(speaker.formants, speaker.bandwidths):
        out = _resonator(out, freq, bw, sample_rate)
    # slow syllabic energy contour so utterances are non-stationary
    phase = gen.uniform(0.0, 2.0 * math.pi)
    contour = 0.55 + 0.45 * np.sin(2.0 * math.pi * 3.0 * np.arange(n) / sample_rate + phase)
    out = out * contour
    out = out / (np.sqrt(np.mean(out**2)) + 1e-12) * 0.05
    return Waveform(out, sample_rate)


def synth_noise(duration: float, seed: int, sample_rate: int = 48000,
                color: str = "pink") -> Waveform:
    """Gaussian noise, optionally 1/f-shaped, at RMS 0.05."""
    gen = np.random.default_rng(_seed_seq("noise", seed))
    n = int(round(duration * sample_rate))
    x = gen.standard_normal(n)
    if color == "pink":
        spec = np.fft.rfft(x)
        f = np.fft.rfftfreq(n, 1.0 / sample_rate)
        f[0] = f[1]
        x = np.fft.irfft(spec / np.sqrt(f), n)
    elif color != "white":
        raise SimError(f"unknown noise color {color!r}")
    x = x / (np.sqrt(np.mean(x**2)) + 1e-12) * 0.05
    return Waveform(x, sample_rate)


def synth_rir(rt60: float, seed: int, sample_rate: int = 48000) -> Waveform:
    """Exponentially decaying noise surrogate with a unit direct path.

    The tail envelope is exp(−t·3ln10/rt60), i.e. −60 dB at t = rt60.
    """
    if rt60 <= 0:
        raise SimError(f"rt60 must be positive, got {rt60}")
    gen = np.random.default_rng(_seed_seq("rir", seed))
    n = int(round(1.2 * rt60 * sample_rate))
    t = np.arange(n) / sample_rate
    h = gen.standard_normal(n) * np.exp(-t * DECAY_60DB / rt60)
    h[0] = 1.0  # direct path
    # keep the tail below the direct path so lag-0 stays the alignment anchor
    tail_peak = np.max(np.abs(h[1:])) if n > 1 else 0.0
    if tail_peak >= 1.0:
        h[1:] *= 0.9 / tail_peak
    return Waveform(h, sample_rate)


# ---------------------------------------------------------------------------
# mixing


def _convolve_trim(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    return fftconvolve(x, h)[: x.shape[0]]


def _fit_length(x: np.ndarray, n: int) -> np.ndarray:
    if x.shape[0] >= n:
        return x[:n]
    reps = int(np.ceil(n / x.shape[0]))
    return np.tile(x, reps)[:n]


def _gain_for_ratio(ref_energy: float, other_energy: float, ratio_db: float) -> float:
    if other_energy <= 0:
        raise SimError("cannot set a level ratio against silent material")
    return math.sqrt(ref_energy / (other_energy * 10.0 ** (ratio_db / 10.0)))


def _draw(gen, bounds) -> float:
    lo, hi = bounds
    return float(lo) if lo == hi else float(gen.uniform(lo, hi))


def simulate_example(target: Waveform, enrollment: Waveform,
                     interferer: Waveform | None, noise: Waveform | None,
                     rir: Waveform | None, spec: SimSpec, seed: int) -> MixtureExample:
    """Build one (mixture, label, enrollment) triple, deterministic in seed.

    The label follows ``spec.label``: early-reverberated target (RIR
    truncated at ``early_ms``), dry target, or fully reverberated target.
    SNR/SIR gains are exact for the component signals as they appear in
    the mixture. If the scaled mixture would clip, everything is peak-
    normalized together and flagged in the metadata.
    """
    if target.duration < 3.0:
        raise SimError(f"target must be ≥ 3 s, got {target.duration:.2f} s")
    rate = target.sample_rate
    gen = np.random.default_rng(_seed_seq("mix", spec.seed, seed))
    n = target.num_samples

    use_interferer = gen.random() < spec.p_interferer
    use_reverb = gen.random() < spec.p_reverb
    snr_db = _draw(gen, spec.snr_range)
    sir_db = _draw(gen, spec.sir_range)
    rt60 = _draw(gen, spec.rt60_range)
    level_db = _draw(gen, spec.target_level_range)
    if use_interferer and interferer is None:
        raise SimError("spec drew an interfering speaker but none was provided")

    meta = {"seed": int(seed), "sample_rate": rate,
            "snr_db": None, "sir_db": None, "rt60_s": None,
            "target_level_dbfs": float(level_db), "peak_normalized": False,
            "reverberant": bool(use_reverb), "has_interferer": bool(use_interferer),
            "label_kind": spec.label}

    if use_reverb:
        if rir is None:
            rir = synth_rir(rt60, seed=int(gen.integers(2**31)), sample_rate=rate)
            meta["rt60_s"] = rt60
        target_comp = _convolve_trim(target.samples, rir.samples)
        early = rir.samples[: max(1, int(round(spec.early_ms * 1e-3 * rate)))]
        if spec.label == "early":
            label = _convolve_trim(target.samples, early)
        elif spec.label == "dry":
            label = target.samples.copy()
        else:
            label = target_comp.copy()
    else:
        target_comp = target.samples.copy()
        label = target.samples.copy()

    parts = {"target": target_comp}
    target_energy = float(np.sum(target_comp**2))

    if use_interferer:
        i_samples = _fit_length(interferer.samples, n)
        if use_reverb:
            # same room, different position: fresh tail at the same RT60
            i_rir = synth_rir(rt60, seed=int(gen.integers(2**31)), sample_rate=rate)
            i_samples = _convolve_trim(i_samples, i_rir.samples)
        g = _gain_for_ratio(target_energy, float(np.sum(i_samples**2)), sir_db)
        parts["interferer"] = g * i_samples
        meta["sir_db"] = float(sir_db)

    if noise is not None and not math.isinf(snr_db):
        n_samples = _fit_length(noise.samples, n)
        g = _gain_for_ratio(target_energy, float(np.sum(n_samples**2)), snr_db)
        parts["noise"] = g * n_samples
        meta["snr_db"] = float(snr_db)

    mixture = np.sum(list(parts.values()), axis=0)

    # scale the target component to the drawn level; common gain preserves ratios
    rms = math.sqrt(target_energy / n)
    scale = 10.0 ** (level_db / 20.0) / max(rms, 1e-12)
    peak = float(np.max(np.abs(mixture))) * scale
    if peak > 1.0:
        scale /= peak
        meta["peak_normalized"] = True
    mixture = mixture * scale
    label = label * scale
    parts = {k: v * scale for k, v in parts.items()}

    return MixtureExample(
        mixture=Waveform(mixture, rate),
        label=Waveform(label, rate),
        enrollment=enrollment,
        meta=meta,
        components={k: Waveform(v, rate) for k, v in parts.items()},
    )


# ---------------------------------------------------------------------------
# manifests


def _record_seed(global_seed: int, index: int) -> int:
    return int(_seed_seq("record", global_seed, index).generate_state(1)[0])


def _list_wavs(directory: Path) -> list[Path]:
    return sorted(directory.glob("*.wav"))


def build_manifest(out_dir, spec: SimSpec, count: int, seed: int,
                   source_dir=None, num_speakers: int = 8,
                   duration: float = 3.0, sample_rate: int = 48000) -> Path:
    """Simulate ``count`` examples to WAV and write a line-delimited manifest.

    With ``source_dir=None`` all material is synthetic. Otherwise the layout
    is ``clean/<speaker>_<utt>.wav`` (speakers need ≥ 2 utterances so the
    enrollment can differ from the target), plus optional ``noise/`` and
    ``rir/`` pools.
    """
    out_dir = Path(out_dir)
    audio_dir = out_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "manifest.jsonl"

    clean_by_speaker: dict[str, list[Path]] = {}
    noise_pool: list[Path] = []
    rir_pool: list[Path] = []
    if source_dir is not None:
        source_dir = Path(source_dir)
        for wav in _list_wavs(source_dir / "clean"):
            speaker_key = wav.stem.split("_")[0]
            clean_by_speaker.setdefault(speaker_key, []).append(wav)
        clean_by_speaker = {k: v for k, v in clean_by_speaker.items() if len(v) >= 2}
        if not clean_by_speaker:
            raise SimError(f"no speaker in {source_dir}/clean has ≥ 2 utterances")
        noise_pool = _list_wavs(source_dir / "noise")
        rir_pool = _list_wavs(source_dir / "rir")

    records = []
    with open(manifest_path, "w") as fh:
        for idx in range(count):
            rec_seed = _record_seed(seed, idx)
            gen = np.random.default_rng(rec_seed)
            if source_dir is None:
                ids = gen.choice(num_speakers, size=2, replace=False)
                tgt_spk, int_spk = (synthetic_speaker(int(i)) for i in ids)
                target = speak(tgt_spk, duration, seed=2 * idx, sample_rate=sample_rate)
                enroll = speak(tgt_spk, max(duration, 1.5), seed=2 * idx + 1,
                               sample_rate=sample_rate)
                interferer = speak(int_spk, duration, seed=3 * idx + 7,
                                   sample_rate=sample_rate)
                noise = synth_noise(duration, seed=rec_seed, sample_rate=sample_rate)
                rir = None
                sources = {"target": f"synthetic:{tgt_spk.speaker_id}",
                           "interferer": f"synthetic:{int_spk.speaker_id}"}
            else:
                speaker_key = str(gen.choice(sorted(clean_by_speaker)))
                utts = clean_by_speaker[speaker_key]
                tgt_path, enr_path = (utts[int(i)] for i in
                                      gen.choice(len(utts), size=2, replace=False))
                others = [k for k in sorted(clean_by_speaker) if k != speaker_key]
                target = load_wav(tgt_path, target_rate=sample_rate)
                enroll = load_wav(enr_path, target_rate=sample_rate)
                interferer = None
                sources = {"target": str(tgt_path), "enrollment": str(enr_path)}
                if others:
                    other_key = str(gen.choice(others))
                    int_path = clean_by_speaker[other_key][
                        int(gen.integers(len(clean_by_speaker[other_key])))]
                    interferer = load_wav(int_path, target_rate=sample_rate)
                    sources["interferer"] = str(int_path)
                noise = (load_wav(noise_pool[int(gen.integers(len(noise_pool)))],
                                  target_rate=sample_rate) if noise_pool else None)
                rir = (load_wav(rir_pool[int(gen.integers(len(rir_pool)))],
                                target_rate=sample_rate) if rir_pool else None)

            example = simulate_example(target, enroll, interferer, noise, rir,
                                       spec, seed=rec_seed)
            example_id = f"ex{idx:06d}"
            paths = {}
            for part in ("mixture", "label", "enrollment"):
                path = audio_dir / f"{example_id}_{part}.wav"
                save_wav(path, getattr(example, part))
                paths[part] = str(path.relative_to(out_dir))
            record = {"example_id": example_id, **paths,
                      "meta": example.meta, "sources": sources}
            fh.write(json.dumps(record) + "\n")
            records.append(record)

    ids = [r["example_id"] for r in records]
    if len(set(ids)) != len(ids):
        raise SimError("duplicate example ids in manifest")
    return manifest_path


def load_manifest(path):
    """Validate and stream a manifest as MixtureExample values."""
    path = Path(path)
    if not path.exists():
        raise SimError(f"manifest not found: {path}")
    root = path.parent
    records = []
    seen = set()
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec["example_id"] in seen:
                raise SimError(f"duplicate example id {rec['example_id']!r}")
            seen.add(rec["example_id"])
            for part in ("mixture", "label", "enrollment"):
                if not (root / rec[part]).exists():
                    raise SimError(f"{rec['example_id']}: missing file {rec[part]}")
            records.append(rec)

    def generate():
        for rec in records:
            rate = rec["meta"].get("sample_rate", 48000)
            waves = {part: load_wav(root / rec[part], target_rate=rate)
                     for part in ("mixture", "label", "enrollment")}
            yield MixtureExample(meta=rec["meta"], **waves)

    return generate()
