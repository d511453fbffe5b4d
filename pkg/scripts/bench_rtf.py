#!/usr/bin/env python3
"""Single-thread real-time-factor benchmark.

Times the toy and full-scale models on synthetic input and prints the median
RTF with a MACs estimate and hardware descriptor. Numbers are hardware
dependent; treat them as regression baselines, not targets.
"""

import argparse
import json
from pathlib import Path

import torch

from napse.model import ModelConfig, TwoStageModel, toy_config
from napse.pipeline import benchmark_rtf


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=None, help="optional JSON report path")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--duration", type=float, default=4.0)
    ap.add_argument("--repetitions", type=int, default=5)
    ap.add_argument("--full-scale", action="store_true",
                    help="also time the 48 kHz configuration (slow)")
    args = ap.parse_args()

    configs = {"toy_12k": toy_config(12000)}
    if args.full_scale:
        configs["full_48k"] = ModelConfig()

    results = {}
    for name, cfg in configs.items():
        torch.manual_seed(args.seed)
        model = TwoStageModel(cfg)
        stats = benchmark_rtf(model, duration=args.duration,
                              repetitions=args.repetitions, seed=args.seed)
        results[name] = stats
        print(f"{name}: RTF {stats['rtf_median']:.3f}  ({stats['params']:,} params, "
              f"{stats['macs_per_audio_second']/1e6:.0f} MMACs/s)")

    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps(results, indent=2))
        print(f"report written to {args.out}")


if __name__ == "__main__":
    main()
