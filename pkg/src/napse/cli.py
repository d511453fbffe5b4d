"""Command-line front end: simulate, train, enhance, evaluate, ablate,
bench-rtf. Every subcommand takes ``--config`` (YAML), ``--seed``, and
``--out``; reports land as line-delimited metric logs plus rendered
text/CSV tables, with ``--plot`` adding images.
"""

from __future__ import annotations

import argparse
import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch
import yaml

from napse.audio import load_wav, save_wav
from napse.datasim import SimSpec, build_manifest, load_manifest
from napse.metricgan import (
    bak_surrogate,
    command_provider,
    ovrl_surrogate,
    pesq_surrogate,
    sig_surrogate,
)
from napse.model import (
    ModelConfig,
    TwoStageModel,
    count_params,
    enhance as run_enhance,
    load_checkpoint,
    toy_config,
)
from napse.pipeline import (
    ABLATION_LADDER,
    PHASE_TAGS,
    PhaseRunner,
    TrainConfig,
    ablation_suite,
    benchmark_rtf,
    evaluate,
    render_ablation,
)
from napse.speaker import ExternalFileProvider, StubProvider

SURROGATES = {
    "pesq": pesq_surrogate,
    "sig": sig_surrogate,
    "bak": bak_surrogate,
    "ovrl": ovrl_surrogate,
}


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as handle:
        return yaml.safe_load(handle) or {}


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _model_config(config: dict) -> ModelConfig:
    section = dict(config.get("model", {}))
    if section.pop("toy", True):
        base = toy_config(section.pop("sample_rate", 12000))
        for key in ("fd_channels", "gtcm_dilations"):
            if key in section:
                section[key] = tuple(section[key])
        return replace(base, **section) if section else base
    for key in ("fd_channels", "gtcm_dilations"):
        if key in section:
            section[key] = tuple(section[key])
    return ModelConfig(**section)


def _speaker_provider(config: dict):
    section = config.get("speaker", {})
    kind = section.get("provider", "stub")
    if kind == "stub":
        return StubProvider(seed=section.get("seed", 0))
    if kind == "file":
        return ExternalFileProvider(section["path"])
    raise ValueError(f"unknown speaker provider {kind!r}")


def _metric_providers(config: dict) -> list:
    providers = []
    for name in config.get("metrics", []):
        if isinstance(name, str):
            providers.append(SURROGATES[name]())
        else:  # {name, argv, kind, raw_range} external command
            providers.append(command_provider(
                name["name"], name["argv"], name["kind"], tuple(name["raw_range"])))
    return providers


def _train_configs(config: dict, seed: int) -> list:
    phases = config.get("train", {}).get("phases")
    if not phases:
        phases = [{"phase": "stage1", "steps": 50},
                  {"phase": "stage2_frozen1", "steps": 50},
                  {"phase": "joint", "steps": 25}]
    out = []
    for entry in phases:
        entry = dict(entry)
        entry.setdefault("seed", seed)
        if "gan" in entry:
            entry["gan"] = tuple(entry["gan"])
        out.append(TrainConfig(**entry))
    return out


def _plot_losses(records, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    steps = [r["step"] for r in records]
    totals = [r["losses"]["total"] for r in records]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, totals, marker=".")
    ax.set_xlabel("step")
    ax.set_ylabel("loss total")
    ax.set_title("training loss")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _plot_table(rows, columns, path: Path, title: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, len(columns), figsize=(4 * len(columns), 3.5),
                             squeeze=False)
    names = [row["name"] for row in rows]
    for ax, col in zip(axes[0], columns):
        ax.bar(names, [row["values"][col] for row in rows])
        ax.set_title(col)
        ax.tick_params(axis="x", rotation=30)
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


# ---------------------------------------------------------------------------
# subcommands


def _cmd_simulate(args) -> int:
    config = _load_config(args.config)
    section = dict(config.get("simulate", {}))
    spec_dict = dict(section.get("spec", {}))
    for key in ("snr_range", "sir_range", "rt60_range", "target_level_range"):
        if key in spec_dict:
            spec_dict[key] = tuple(spec_dict[key])
    spec = SimSpec(seed=args.seed, **spec_dict)
    out = _out_dir(args)
    manifest = build_manifest(
        out, spec,
        count=section.get("count", 8),
        seed=args.seed,
        source_dir=section.get("source_dir"),
        num_speakers=section.get("num_speakers", 8),
        duration=section.get("duration", 3.0),
        sample_rate=section.get("sample_rate", 12000),
    )
    print(f"wrote {manifest}")
    return 0


def _cmd_train(args) -> int:
    config = _load_config(args.config)
    out = _out_dir(args)
    train_section = config.get("train", {})
    if "manifest" not in train_section:
        raise ValueError("train config needs a 'manifest' path")
    examples = list(load_manifest(train_section["manifest"]))
    dev = (list(load_manifest(train_section["dev_manifest"]))
           if train_section.get("dev_manifest") else None)
    provider = _speaker_provider(config)
    torch.manual_seed(args.seed)
    model = TwoStageModel(_model_config(config))
    print(f"parameters: {count_params(model)}")

    prior = None
    metrics_log = out / "metrics.log"
    with open(metrics_log, "w") as log:
        for cfg in _train_configs(config, args.seed):
            runner = PhaseRunner(model, cfg, examples, provider,
                                 prior_phase=prior, dev_examples=dev)
            ledger = runner.run()
            for record in ledger.records:
                log.write(json.dumps(record, sort_keys=True) + "\n")
            ckpt = out / f"checkpoint_{cfg.phase}.pt"
            runner.save(ckpt)
            (out / f"ledger_{cfg.phase}.json").write_text(ledger.to_json(include_timing=True))
            if args.plot:
                _plot_losses(ledger.records, out / f"loss_{cfg.phase}.png")
            prior = PHASE_TAGS[cfg.phase]
            final = runner
            print(f"{cfg.phase}: {cfg.steps} steps, "
                  f"final loss {ledger.records[-1]['losses']['total']:.4f}")
    final.save(out / "checkpoint.pt")
    print(f"wrote {out / 'checkpoint.pt'}")
    return 0


def _cmd_enhance(args) -> int:
    config = _load_config(args.config)
    model, _meta = load_checkpoint(args.checkpoint)
    rate = model.cfg.sample_rate
    mixture = load_wav(args.mixture, target_rate=rate)
    enrollment = load_wav(args.enroll, target_rate=rate)
    provider = _speaker_provider(config)
    utterance = config.get("speaker", {}).get("utterance_id")
    out = _out_dir(args)
    result = run_enhance(mixture, enrollment, model, provider, utterance)
    save_wav(out / "enhanced.wav", result.stage2_wave)
    save_wav(out / "stage1.wav", result.stage1_wave)
    print(f"wrote {out / 'enhanced.wav'}")
    return 0


def _cmd_evaluate(args) -> int:
    config = _load_config(args.config)
    eval_section = config.get("evaluate", {})
    manifest = eval_section.get("manifest")
    if manifest is None:
        raise ValueError("evaluate config needs a 'manifest' path")
    examples = list(load_manifest(manifest))
    if args.checkpoint:
        model, _ = load_checkpoint(args.checkpoint)
        label = eval_section.get("label", "Enhanced")
    else:
        model, label = None, "Identity"
    providers = _metric_providers(eval_section)
    report = evaluate(model, examples, providers, _speaker_provider(config), label)
    out = _out_dir(args)
    (out / "table.txt").write_text(report.render() + "\n")
    (out / "table.csv").write_text(report.to_csv() + "\n")
    with open(out / "metrics.log", "w") as log:
        for name, rows in report.per_example.items():
            for i, row in enumerate(rows):
                log.write(json.dumps({"system": name, "example": i, **row},
                                     sort_keys=True) + "\n")
    if args.plot:
        _plot_table(report.rows, report.columns, out / "table.png", "evaluation")
    print(report.render())
    return 0


def _cmd_ablate(args) -> int:
    config = _load_config(args.config)
    section = config.get("ablate", {})
    if "manifest" not in section:
        raise ValueError("ablate config needs a 'manifest' path")
    examples = list(load_manifest(section["manifest"]))
    dev = (list(load_manifest(section["dev_manifest"]))
           if section.get("dev_manifest") else examples)
    base_dict = dict(section.get("base", {"steps": 4, "batch_size": 1}))
    base_dict.setdefault("seed", args.seed)
    if "gan" in base_dict:
        base_dict["gan"] = tuple(base_dict["gan"])
    base = TrainConfig(**base_dict)
    variants = tuple(section.get("variants", ABLATION_LADDER))
    providers = _metric_providers(section)
    result = ablation_suite(_model_config(config), base, examples, dev,
                            variants, providers, _speaker_provider(config))
    out = _out_dir(args)
    table = render_ablation(result)
    (out / "ablation.txt").write_text(table + "\n")
    (out / "ablation.json").write_text(json.dumps(result, sort_keys=True, indent=2))
    if args.plot:
        rows = [{"name": r["name"], "values": r["metrics"]} for r in result["rows"]]
        columns = list(result["rows"][0]["metrics"])
        _plot_table(rows, columns, out / "ablation.png", "ablation ladder")
    print(table)
    return 0


def _cmd_bench_rtf(args) -> int:
    config = _load_config(args.config)
    if args.checkpoint:
        model, _ = load_checkpoint(args.checkpoint)
    else:
        torch.manual_seed(args.seed)
        model = TwoStageModel(_model_config(config))
    section = config.get("bench", {})
    report = benchmark_rtf(
        model,
        duration=section.get("duration", 4.0),
        repetitions=section.get("repetitions", 5),
        seed=args.seed,
    )
    out = _out_dir(args)
    (out / "rtf.json").write_text(json.dumps(report, sort_keys=True, indent=2))
    print(f"RTF median {report['rtf_median']:.4f} over {report['repetitions']} runs "
          f"({report['duration_s']} s audio, single thread)")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="napse",
                                     description="personalized speech enhancement toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="YAML config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="out", help="output directory")

    p = sub.add_parser("simulate", help="synthesize a training/eval manifest")
    common(p)
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("train", help="run the three-phase schedule")
    common(p)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("enhance", help="enhance one mixture")
    common(p)
    p.add_argument("--mixture", required=True)
    p.add_argument("--enroll", required=True)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(fn=_cmd_enhance)

    p = sub.add_parser("evaluate", help="score a checkpoint on a manifest")
    common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("ablate", help="run the feature ladder")
    common(p)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("bench-rtf", help="single-thread real-time factor")
    common(p)
    p.add_argument("--checkpoint", default=None)
    p.set_defaults(fn=_cmd_bench_rtf)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
