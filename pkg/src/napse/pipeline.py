"""Three-phase training schedule, adversarial interleaving, evaluation,
ablation ladder, and the real-time-factor benchmark.

The schedule is stage1 (magnitude stage alone) → stage2_frozen1 (complex
stage with stage one frozen) → joint (both, lower learning rate). The fusion
layer trains in every phase. Adversarial terms piggyback on the supervised
totals: each step trains the active discriminators first, then the
enhancement model — strictly D-then-G.
"""

from __future__ import annotations

import hashlib
import json
import platform
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch

from napse.dsp import StftConfig, main_stft_config
from napse.losses import si_snr_loss, stage1_total, stage2_total
from napse.metricgan import (
    Discriminator,
    ReplayBuffer,
    bak_surrogate,
    generator_loss,
    multi_discriminator_step,
    ovrl_surrogate,
    pesq_surrogate,
    sig_surrogate,
)
from napse.model import ModelConfig, TwoStageModel, enhance, save_checkpoint
from napse.speaker import StubProvider, embed as speaker_embed, enrollment_stats

PHASE_ORDER = ("stage1", "stage2_frozen1", "joint")
PHASE_TAGS = {"stage1": "stage1", "stage2_frozen1": "stage2", "joint": "joint"}
DEFAULT_LR = {"stage1": 1e-3, "stage2_frozen1": 1e-3, "joint": 1e-4}
GAN_FLAGS = ("pesq", "ovrl", "sig", "bak")
ABLATION_LADDER = ("base", "+Fbank", "+Multi-loss", "+PESQ", "+OVRL", "+SIG&BAK")


class PipelineError(ValueError):
    """Bad training configuration or phase-order violation."""


@dataclass(frozen=True)
class TrainConfig:
    phase: str = "stage1"
    steps: int = 100
    batch_size: int = 2
    lr: float | None = None  # None = per-phase default
    crop_seconds: float = 0.5
    gan: tuple = ()
    gan_in_stage1: bool = False
    multi_scale: bool = True
    joint_loss: str = "sum"  # or "stage2_only"
    replay: bool = True
    fbank_stats: bool = True
    eval_every: int = 0  # 0 disables mid-phase dev evaluation
    lr_halve_patience: int = 2  # dev evaluations without improvement
    seed: int = 0

    def __post_init__(self):
        if self.phase not in PHASE_ORDER:
            raise PipelineError(f"phase must be one of {PHASE_ORDER}, got {self.phase!r}")
        if self.steps < 1 or self.batch_size < 1:
            raise PipelineError("steps and batch_size must be positive")
        if self.crop_seconds <= 0:
            raise PipelineError("crop_seconds must be positive")
        unknown = set(self.gan) - set(GAN_FLAGS)
        if unknown:
            raise PipelineError(f"unknown GAN flags {sorted(unknown)}; valid: {GAN_FLAGS}")
        if self.joint_loss not in ("sum", "stage2_only"):
            raise PipelineError("joint_loss must be 'sum' or 'stage2_only'")

    @property
    def effective_lr(self) -> float:
        return DEFAULT_LR[self.phase] if self.lr is None else self.lr

    @property
    def gan_active(self) -> bool:
        if not self.gan:
            return False
        return self.phase != "stage1" or self.gan_in_stage1


class RunLedger:
    """Append-only training record with a monotone step counter.

    Wall-clock timings are kept out of the canonical serialization so that
    fixed-seed reruns produce bit-identical ledgers.
    """

    def __init__(self):
        self.records: list = []
        self.evals: list = []
        self.transitions: list = []
        self.timings: list = []
        self._last_step = -1

    def record_step(self, step: int, phase: str, losses: dict, lr: float) -> None:
        if step <= self._last_step:
            raise PipelineError(f"step {step} not after {self._last_step}; ledger is append-only")
        self._last_step = step
        self.records.append({"step": step, "phase": phase, "losses": losses, "lr": lr})

    def record_eval(self, step: int, snapshot: dict) -> None:
        self.evals.append({"step": step, **snapshot})

    def record_transition(self, phase: str, step: int) -> None:
        self.transitions.append({"phase": phase, "step": step})

    def record_timing(self, step: int, seconds: float) -> None:
        self.timings.append({"step": step, "seconds": seconds})

    def state(self) -> dict:
        return {"records": self.records, "evals": self.evals,
                "transitions": self.transitions, "last_step": self._last_step}

    @classmethod
    def from_state(cls, state: dict) -> "RunLedger":
        ledger = cls()
        ledger.records = list(state["records"])
        ledger.evals = list(state["evals"])
        ledger.transitions = list(state["transitions"])
        ledger._last_step = state["last_step"]
        return ledger

    def to_json(self, include_timing: bool = False) -> str:
        doc = {"records": self.records, "evals": self.evals,
               "transitions": self.transitions}
        if include_timing:
            doc["timings"] = self.timings
        return json.dumps(doc, sort_keys=True)


def _phase_seed(seed: int, phase: str) -> int:
    digest = hashlib.sha256(f"{seed}:{phase}".encode()).digest()
    return int.from_bytes(digest[:6], "big")


def si_snr_db(est, ref) -> float:
    """Positive-orientation SI-SNR in dB."""
    return -float(si_snr_loss(est, ref))


def _gan_members(name: str):
    if name == "pesq":
        return Discriminator(intrusive=True), pesq_surrogate()
    if name == "ovrl":
        return Discriminator(intrusive=False), ovrl_surrogate()
    if name == "sig":
        return Discriminator(intrusive=False), sig_surrogate()
    return Discriminator(intrusive=False), bak_surrogate()


@dataclass
class _Example:
    mixture: torch.Tensor
    label: torch.Tensor
    embedding: torch.Tensor
    stats: torch.Tensor


class PhaseRunner:
    """Runs one training phase; supports exact checkpoint resume."""

    def __init__(self, model: TwoStageModel, config: TrainConfig, examples,
                 speaker_provider=None, prior_phase: str | None = None,
                 dev_examples=None):
        _check_phase_order(config.phase, prior_phase)
        if not examples:
            raise PipelineError("no training examples")
        self.model = model
        self.config = config
        self.provider = speaker_provider or StubProvider()
        self.rate = examples[0].mixture.sample_rate
        self.examples = [self._prepare(ex) for ex in examples]
        self.dev_examples = [self._prepare(ex) for ex in dev_examples] if dev_examples else []
        self.ledger = RunLedger()
        self.step_count = 0
        torch.manual_seed(_phase_seed(config.seed, config.phase))
        self.gen = np.random.default_rng(np.random.SeedSequence(_phase_seed(config.seed, config.phase)))
        stage1_on = config.phase in ("stage1", "joint")
        stage2_on = config.phase in ("stage2_frozen1", "joint")
        model.set_stage_trainable(stage1=stage1_on, stage2=stage2_on)
        self.optimizer = torch.optim.Adam(
            [p for p in model.parameters() if p.requires_grad], lr=config.effective_lr
        )
        self.discs, self.providers, self.d_opts, self.buffers = {}, {}, {}, {}
        if config.gan_active:
            for name in config.gan:
                disc, provider = _gan_members(name)
                self.discs[name] = disc
                self.providers[name] = provider
                self.d_opts[name] = torch.optim.Adam(disc.parameters(), lr=1e-3)
                if config.replay:
                    self.buffers[name] = ReplayBuffer()
        self._halver = _PlateauHalver(config.lr_halve_patience)
        self.ledger.record_transition(config.phase, self.step_count)

    def _prepare(self, ex) -> _Example:
        emb = speaker_embed(ex.enrollment, self.provider)
        stats = enrollment_stats(ex.enrollment).vector()
        if not self.config.fbank_stats:
            stats = np.zeros_like(stats)
        return _Example(
            mixture=torch.as_tensor(ex.mixture.samples, dtype=torch.float32),
            label=torch.as_tensor(ex.label.samples, dtype=torch.float32),
            embedding=torch.as_tensor(emb, dtype=torch.float32),
            stats=torch.as_tensor(stats, dtype=torch.float32),
        )

    def _scales(self) -> list[StftConfig] | None:
        if self.config.multi_scale:
            return None  # stage totals fall back to the three presets
        return [main_stft_config(self.rate)]

    def _draw_batch(self):
        crop = int(self.config.crop_seconds * self.rate)
        idx = self.gen.integers(len(self.examples), size=self.config.batch_size)
        mixes, labels, embs, stats = [], [], [], []
        for i in idx:
            ex = self.examples[int(i)]
            total = ex.mixture.shape[0]
            if total < crop:
                raise PipelineError("crop_seconds longer than the training clips")
            start = int(self.gen.integers(total - crop + 1))
            mixes.append(ex.mixture[start : start + crop])
            labels.append(ex.label[start : start + crop])
            embs.append(ex.embedding)
            stats.append(ex.stats)
        return (torch.stack(mixes), torch.stack(labels),
                torch.stack(embs), torch.stack(stats))

    def step(self) -> dict:
        losses = adversarial_step(
            self.model, self.optimizer, self._draw_batch(), self.config,
            self.discs, self.providers, self.d_opts, self.buffers,
            self.rate, self._scales(), self.gen,
        )
        self.step_count += 1
        lr = self.optimizer.param_groups[0]["lr"]
        self.ledger.record_step(self.step_count, self.config.phase, losses, lr)
        if self.config.eval_every and self.dev_examples \
                and self.step_count % self.config.eval_every == 0:
            score = self.dev_si_snr()
            self.ledger.record_eval(self.step_count, {"dev_si_snr_db": score})
            if self._halver.update(score):
                for group in self.optimizer.param_groups:
                    group["lr"] /= 2.0
        return losses

    def run(self) -> RunLedger:
        for _ in range(self.config.steps):
            t0 = time.perf_counter()
            self.step()
            self.ledger.record_timing(self.step_count, time.perf_counter() - t0)
        return self.ledger

    def dev_si_snr(self, examples=None) -> float:
        if examples is not None:
            prepared = [self._prepare(ex) for ex in examples]
        else:
            prepared = self.dev_examples or [self.examples[0]]
        use_stage2 = self.config.phase != "stage1"
        scores = []
        self.model.eval()
        with torch.no_grad():
            for ex in prepared:
                fused = self.model.fuse_condition(
                    ex.embedding.unsqueeze(0), ex.stats.unsqueeze(0))
                s1, s2, _, _ = self.model(ex.mixture.unsqueeze(0), fused)
                est = s2 if use_stage2 else s1
                scores.append(si_snr_db(est[0], ex.label))
        self.model.train()
        return float(np.mean(scores))

    # -- persistence --

    def save(self, path) -> None:
        extra = {
            "train_config": asdict(self.config),
            "optimizer": self.optimizer.state_dict(),
            "torch_rng": torch.get_rng_state(),
            "numpy_rng": self.gen.bit_generator.state,
            "ledger": self.ledger.state(),
            "halver": self._halver.state(),
            "discs": {k: d.state_dict() for k, d in self.discs.items()},
            "d_opts": {k: o.state_dict() for k, o in self.d_opts.items()},
            "buffers": {k: list(b._items) for k, b in self.buffers.items()},
        }
        save_checkpoint(path, self.model, phase=PHASE_TAGS[self.config.phase],
                        step=self.step_count, extra=extra)

    @classmethod
    def restore(cls, path, examples, speaker_provider=None, dev_examples=None):
        from napse.model import load_checkpoint

        model, meta = load_checkpoint(path)
        extra = meta["extra"]
        cfg_dict = dict(extra["train_config"])
        cfg_dict["gan"] = tuple(cfg_dict["gan"])
        config = TrainConfig(**cfg_dict)
        prior = {"stage1": None, "stage2_frozen1": "stage1", "joint": "stage2"}[config.phase]
        runner = cls(model, config, examples, speaker_provider, prior_phase=prior,
                     dev_examples=dev_examples)
        runner.step_count = meta["step"]
        runner.optimizer.load_state_dict(extra["optimizer"])
        torch.set_rng_state(extra["torch_rng"])
        runner.gen.bit_generator.state = extra["numpy_rng"]
        runner.ledger = RunLedger.from_state(extra["ledger"])
        runner._halver.load(extra["halver"])
        for name, state in extra["discs"].items():
            runner.discs[name].load_state_dict(state)
        for name, state in extra["d_opts"].items():
            runner.d_opts[name].load_state_dict(state)
        for name, items in extra["buffers"].items():
            runner.buffers[name]._items.extend(items)
        return runner


class _PlateauHalver:
    """Tracks a dev score; asks for a halving after `patience` stalls."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -np.inf
        self.stalls = 0

    def update(self, score: float) -> bool:
        if score > self.best:
            self.best = score
            self.stalls = 0
            return False
        self.stalls += 1
        if self.stalls >= self.patience:
            self.stalls = 0
            return True
        return False

    def state(self) -> dict:
        return {"patience": self.patience, "best": self.best, "stalls": self.stalls}

    def load(self, state: dict) -> None:
        self.patience = state["patience"]
        self.best = state["best"]
        self.stalls = state["stalls"]


def _check_phase_order(phase: str, prior: str | None) -> None:
    allowed = {
        "stage1": (None, "stage1"),
        "stage2_frozen1": ("stage1", "stage2"),
        "joint": ("stage2", "joint"),
    }[phase]
    if prior not in allowed:
        raise PipelineError(
            f"phase {phase!r} cannot start from {prior!r}; needs one of {allowed}"
        )


def adversarial_step(model, optimizer, batch, config: TrainConfig,
                     discs, providers, d_opts, buffers,
                     sample_rate: int, scales, gen) -> dict:
    """One training step: discriminators first, then the enhancement model.

    With no active discriminators this is a plain supervised step and the
    adversarial term is exactly zero.
    """
    mix, label, emb, stats = batch
    fused = model.fuse_condition(emb, stats)
    s1, s2, _, _ = model(mix, fused)

    gan_s1: torch.Tensor | float = 0.0
    gan_s2: torch.Tensor | float = 0.0
    if discs:
        d_target = s1 if config.phase == "stage1" else s2
        d_losses, _g = multi_discriminator_step(
            d_target, label, discs, providers, d_opts, sample_rate,
            buffers=buffers if config.replay else None, gen=gen,
        )
        if config.phase == "stage1" or config.phase == "joint":
            gan_s1 = _generator_terms(discs, s1, label)
        if config.phase != "stage1":
            gan_s2 = _generator_terms(discs, s2, label)
    else:
        d_losses = {}

    breakdowns: dict = {}
    if config.phase == "stage1":
        bd = stage1_total(s1, label, gan_term=gan_s1, scales=scales)
        total = bd.tensor
        breakdowns["stage1"] = json.loads(bd.to_json())
    elif config.phase == "stage2_frozen1":
        bd = stage2_total(s2, label, gan_term=gan_s2, scales=scales)
        total = bd.tensor
        breakdowns["stage2"] = json.loads(bd.to_json())
    else:
        bd2 = stage2_total(s2, label, gan_term=gan_s2, scales=scales)
        breakdowns["stage2"] = json.loads(bd2.to_json())
        if config.joint_loss == "sum":
            bd1 = stage1_total(s1, label, gan_term=gan_s1, scales=scales)
            breakdowns["stage1"] = json.loads(bd1.to_json())
            total = bd1.tensor + bd2.tensor
        else:
            total = bd2.tensor

    optimizer.zero_grad()
    total.backward()
    optimizer.step()
    return {"total": float(total.detach()), "d_losses": d_losses, **breakdowns}


def _generator_terms(discs, est, ref) -> torch.Tensor:
    terms = []
    for disc in discs.values():
        terms.append(generator_loss(disc, est, ref if disc.intrusive else None))
    return torch.stack(terms).mean()


def train_phase(model, config: TrainConfig, examples, speaker_provider=None,
                prior_phase: str | None = None, dev_examples=None) -> tuple:
    """Run one phase; returns (ledger, checkpoint phase tag)."""
    runner = PhaseRunner(model, config, examples, speaker_provider,
                         prior_phase=prior_phase, dev_examples=dev_examples)
    ledger = runner.run()
    return ledger, PHASE_TAGS[config.phase]


def run_schedule(model, configs, examples, speaker_provider=None,
                 dev_examples=None) -> dict:
    """Run phases in order, recording a dev SI-SNR snapshot at each boundary."""
    phases = [c.phase for c in configs]
    if phases != [p for p in PHASE_ORDER if p in phases] or len(set(phases)) != len(phases):
        raise PipelineError(f"phases must follow {PHASE_ORDER}, got {phases}")
    prior = None
    ledgers, boundary_scores = {}, {}
    for config in configs:
        runner = PhaseRunner(model, config, examples, speaker_provider,
                             prior_phase=prior, dev_examples=dev_examples)
        ledgers[config.phase] = runner.run()
        if dev_examples:
            boundary_scores[config.phase] = runner.dev_si_snr(dev_examples)
        prior = PHASE_TAGS[config.phase]
    return {"ledgers": ledgers, "boundary_dev_si_snr": boundary_scores, "final_phase": prior}


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    columns: list
    rows: list = field(default_factory=list)
    per_example: dict = field(default_factory=dict)

    def add_row(self, name: str, per_example: list) -> None:
        means = {col: float(np.mean([ex[col] for ex in per_example]))
                 for col in self.columns}
        self.rows.append({"name": name, "values": means})
        self.per_example[name] = per_example

    def render(self) -> str:
        width = max(len(r["name"]) for r in self.rows) + 2
        header = "system".ljust(width) + "".join(c.rjust(14) for c in self.columns)
        lines = [header, "-" * len(header)]
        for row in self.rows:
            cells = "".join(f"{row['values'][c]:14.3f}" for c in self.columns)
            lines.append(row["name"].ljust(width) + cells)
        return "\n".join(lines)

    def to_csv(self) -> str:
        lines = ["system," + ",".join(self.columns)]
        for row in self.rows:
            lines.append(row["name"] + "," +
                         ",".join(repr(row["values"][c]) for c in self.columns))
        return "\n".join(lines)


def _example_metrics(est: np.ndarray, ex, metric_providers, rate) -> dict:
    values = {"si_snr_db": si_snr_db(torch.as_tensor(est), torch.as_tensor(ex.label.samples))}
    for provider in metric_providers:
        ref = ex.label.samples if provider.kind == "intrusive" else None
        values[provider.name] = provider.score(est, ref, rate)
    return values


def evaluate(model, examples, metric_providers=(), speaker_provider=None,
             label: str = "Enhanced") -> EvalReport:
    """Score the noisy baseline and the model; the Noisy row comes first.

    ``model=None`` evaluates the identity system (output = input), pinning
    the trivial baseline: its SI-SNR gain over Noisy is exactly zero.
    """
    examples = list(examples)
    if not examples:
        raise PipelineError("no evaluation examples")
    provider = speaker_provider or StubProvider()
    columns = ["si_snr_db"] + [p.name for p in metric_providers]
    report = EvalReport(columns=columns)
    rate = examples[0].mixture.sample_rate

    noisy_rows = [_example_metrics(ex.mixture.samples, ex, metric_providers, rate)
                  for ex in examples]
    report.add_row("Noisy", noisy_rows)

    enhanced_rows = []
    for ex in examples:
        if model is None:
            est = ex.mixture.samples
        else:
            est = enhance(ex.mixture, ex.enrollment, model, provider).stage2_wave.samples
        enhanced_rows.append(_example_metrics(est, ex, metric_providers, rate))
    report.add_row(label, enhanced_rows)
    return report


# ---------------------------------------------------------------------------
# RTF benchmark


def rtf(processing_seconds: float, audio_seconds: float) -> float:
    if audio_seconds <= 0:
        raise PipelineError("audio duration must be positive")
    return processing_seconds / audio_seconds


def estimate_macs(model: TwoStageModel, seconds: float = 1.0) -> int:
    """Multiply-accumulate count for `seconds` of audio, from forward hooks."""
    counts = []

    def hook(module, args, output):
        out = output[0] if isinstance(output, tuple) else output
        if isinstance(module, (torch.nn.Conv1d, torch.nn.Conv2d,
                               torch.nn.ConvTranspose1d, torch.nn.ConvTranspose2d)):
            kernel = int(np.prod(module.kernel_size))
            per_out = module.in_channels // module.groups * kernel
            counts.append(out.numel() * per_out)
        elif isinstance(module, torch.nn.Linear):
            counts.append(out.numel() * module.in_features)

    handles = [m.register_forward_hook(hook) for m in model.modules()
               if isinstance(m, (torch.nn.Conv1d, torch.nn.Conv2d, torch.nn.ConvTranspose1d,
                                 torch.nn.ConvTranspose2d, torch.nn.Linear))]
    try:
        length = int(seconds * model.cfg.sample_rate)
        mix = torch.zeros(1, length)
        emb = torch.zeros(1, model.cfg.embedding_dim)
        with torch.no_grad():
            model(mix, emb)
    finally:
        for h in handles:
            h.remove()
    return int(sum(counts))


def benchmark_rtf(model: TwoStageModel, duration: float = 4.0,
                  repetitions: int = 5, seed: int = 0) -> dict:
    """Median RTF over repetitions, single-threaded, plus a MACs estimate."""
    if repetitions < 1:
        raise PipelineError("repetitions must be positive")
    gen = np.random.default_rng(seed)
    length = int(duration * model.cfg.sample_rate)
    mix = torch.as_tensor(gen.uniform(-0.3, 0.3, size=(1, length)), dtype=torch.float32)
    emb = torch.as_tensor(gen.standard_normal((1, model.cfg.embedding_dim)),
                          dtype=torch.float32)
    old_threads = torch.get_num_threads()
    torch.set_num_threads(1)
    was_training = model.training
    model.eval()
    times = []
    try:
        with torch.no_grad():
            model(mix, emb)  # warm-up
            for _ in range(repetitions):
                t0 = time.perf_counter()
                model(mix, emb)
                times.append(time.perf_counter() - t0)
    finally:
        torch.set_num_threads(old_threads)
        model.train(was_training)
    return {
        "rtf_median": float(np.median([rtf(t, duration) for t in times])),
        "rtf_runs": [rtf(t, duration) for t in times],
        "duration_s": duration,
        "repetitions": repetitions,
        "threads": 1,
        "sample_rate": model.cfg.sample_rate,
        "hardware": {"platform": platform.platform(), "machine": platform.machine(),
                     "torch": torch.__version__},
        "macs_per_audio_second": estimate_macs(model, seconds=1.0),
        "params": sum(p.numel() for p in model.parameters()),
    }


# ---------------------------------------------------------------------------
# ablation ladder


def ladder_config(base: TrainConfig, row: str) -> TrainConfig:
    """Cumulative feature ladder; later GAN rows swap the non-intrusive head."""
    if row == "base":
        return replace(base, fbank_stats=False, multi_scale=False, gan=())
    if row == "+Fbank":
        return replace(ladder_config(base, "base"), fbank_stats=True)
    if row == "+Multi-loss":
        return replace(ladder_config(base, "+Fbank"), multi_scale=True)
    if row == "+PESQ":
        return replace(ladder_config(base, "+Multi-loss"), gan=("pesq",))
    if row == "+OVRL":
        return replace(ladder_config(base, "+Multi-loss"), gan=("pesq", "ovrl"))
    if row == "+SIG&BAK":
        return replace(ladder_config(base, "+Multi-loss"), gan=("pesq", "sig", "bak"))
    raise PipelineError(f"unknown ablation row {row!r}")


def config_diff(a: TrainConfig, b: TrainConfig) -> dict:
    da, db = asdict(a), asdict(b)
    return {k: (da[k], db[k]) for k in da if da[k] != db[k]}


def ablation_suite(model_config: ModelConfig, base: TrainConfig, examples,
                   dev_examples, variants=ABLATION_LADDER,
                   metric_providers=(), speaker_provider=None) -> dict:
    """Train each ladder row from the same seed and score it on the dev set."""
    variants = tuple(variants) or ("base",)
    rows = []
    for name in variants:
        cfg = ladder_config(base, name)
        torch.manual_seed(cfg.seed)
        model = TwoStageModel(model_config)
        configs = [replace(cfg, phase=p) for p in PHASE_ORDER]
        run_schedule(model, configs, examples, speaker_provider, dev_examples)
        report = evaluate(model, dev_examples, metric_providers,
                          speaker_provider, label=name)
        rows.append({"name": name, "config": asdict(cfg),
                     "metrics": report.rows[-1]["values"],
                     "noisy": report.rows[0]["values"]})
    return {"rows": rows, "variants": list(variants)}


def render_ablation(result: dict) -> str:
    if not result["rows"]:
        return "(no rows)"
    columns = list(result["rows"][0]["metrics"])
    width = max(len(r["name"]) for r in result["rows"]) + 2
    header = "variant".ljust(width) + "".join(c.rjust(14) for c in columns)
    lines = [header, "-" * len(header)]
    noisy = result["rows"][0]["noisy"]
    lines.append("Noisy".ljust(width) + "".join(f"{noisy[c]:14.3f}" for c in columns))
    for row in result["rows"]:
        lines.append(row["name"].ljust(width)
                     + "".join(f"{row['metrics'][c]:14.3f}" for c in columns))
    return "\n".join(lines)
