#!/usr/bin/env python3
"""Feature-ladder ablation on a synthetic toy set.

Each row toggles one feature on top of the previous (speaker stats, the
multi-scale loss, then the adversarial metric heads) with shared seeds, and
the comparative table is printed and saved as CSV.
"""

import argparse
import json
from pathlib import Path

import torch

from napse.model import toy_config
from napse.pipeline import ABLATION_LADDER, TrainConfig, ablation_suite, render_ablation
from run_toy_pipeline import make_examples


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("runs/ablation"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, default=60, help="steps per phase per row")
    ap.add_argument("--rate", type=int, default=12000)
    ap.add_argument("--variants", nargs="*", default=list(ABLATION_LADDER))
    args = ap.parse_args()

    torch.set_num_threads(1)
    train = make_examples(6, 1000, args.rate)
    dev = make_examples(3, 2000, args.rate)

    base = TrainConfig(steps=args.steps, batch_size=2, crop_seconds=0.75, seed=args.seed)
    result = ablation_suite(toy_config(args.rate), base, train, dev,
                            variants=args.variants)

    table = render_ablation(result)
    print(table)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "ablation.txt").write_text(table + "\n")
    (args.out / "ablation.json").write_text(json.dumps(result, indent=2, default=str))
    print(f"artifacts in {args.out}")


if __name__ == "__main__":
    main()
