#!/usr/bin/env python3
"""Fusion x classifier ablation on synthetic classes: four cases, same
plan and seeds, one table. Mirrors `ffcac ablate` but stays in-process.

    python3 scripts/ablation_table.py --repeats 5 --epochs 50
"""

import argparse
import dataclasses

from ffcac.config import ClassifierConfig, ExperimentConfig, RunConfig, SynthSection, TrainConfig
from ffcac.sessions import run_repeated


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--seed", type=int, default=100)
    args = ap.parse_args()

    base = ExperimentConfig(
        train=TrainConfig(epochs=args.epochs),
        classifier=ClassifierConfig(lam="cv"),
        synth=SynthSection(num_classes=10, clips_per_class=25, train_per_class=15),
        run=RunConfig(seed=args.seed, repeats=args.repeats),
    )
    print("fusion  classifier  " + "  ".join(f"A_{m}" for m in range(2)) + "      AA      PD")
    for kind in ("pbc", "rrc"):
        for fusion in (False, True):
            cfg = dataclasses.replace(
                base,
                encoder=dataclasses.replace(base.encoder, use_fusion=fusion),
                classifier=dataclasses.replace(base.classifier, kind=kind),
            )
            rep = run_repeated(cfg)
            accs = "  ".join(f"{a:.3f}" for a in rep.mean_accuracies)
            print(f"{'on' if fusion else 'off':6}  {kind:10}  {accs}  {rep.mean_aa:.4f}  {rep.mean_pd:.4f}")


if __name__ == "__main__":
    main()
