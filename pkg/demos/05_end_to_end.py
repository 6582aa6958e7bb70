#!/usr/bin/env python3
"""Generate data, train, evaluate, sweep: the whole pipeline in one run.

Mirrors what the `kkt` CLI does, but through the library API so each
intermediate object is visible. Takes about half a minute.
"""

import argparse
import tempfile
from pathlib import Path

from kkt.data import gen_synthetic, write_bundle
from kkt.training import RunConfig, ablation_sweep, evaluate, train


def main() -> None:
    parser = argparse.ArgumentParser(description="Train a small model on generated dialogues")
    parser.add_argument("--out", type=Path, default=None, help="Run directory (default: a temp dir)")
    parser.add_argument("--epochs", type=int, default=3)
    args = parser.parse_args()

    with tempfile.TemporaryDirectory() as td:
        out = args.out or Path(td) / "run"
        bundle = gen_synthetic(seed=7, n=48, mode="mixed", split="train")
        dev = gen_synthetic(seed=7, n=24, mode="mixed", split="dev")
        paths = write_bundle(bundle, Path(td) / "bundle")
        print(f"generated {len(bundle.dataset.examples)} train / {len(dev.dataset.examples)} dev examples")

        config = RunConfig(
            d_model=16, h=2, layers=1, k=2, p=2, epochs=args.epochs, batch_size=8,
            max_length=96, warmup_steps=10, learning_rate=2e-3,
            key_turn_provider="leading", seed=0,
        )
        result = train(
            config, bundle.dataset,
            kg_path=paths["kg"], dev_dataset=dev.dataset, out_dir=out,
            surfaces_path=paths["surfaces"], lexicon_path=paths["lexicon"],
            log=lambda rec: print(
                f"  epoch {rec['epoch']}: loss {rec['train_loss']:.3f} "
                f"train {rec['train_accuracy']:.2f} dev {rec['dev_accuracy']:.2f}"
            ),
        )
        print(f"best epoch {result.best['epoch']} (dev {result.best['dev_accuracy']:.2f})")
        print(f"run files in {out}: vocab.txt, config.json, model.kkt, report.json")

        report = evaluate(
            out / "model.kkt", config, result.vocab, dev.dataset,
            kg_path=paths["kg"],
            surfaces_path=paths["surfaces"], lexicon_path=paths["lexicon"],
        )
        sample = report.predictions[0]
        print(f"dev accuracy from checkpoint: {report.accuracy:.2f} "
              f"(fingerprint {report.fingerprint[:12]}...)")
        print(f"sample prediction: {sample['example_id']} -> option {sample['predicted']} "
              f"(gold {sample['gold']})")

        # k and p are inference knobs, so the sweep trains once and re-scores.
        rows = ablation_sweep(
            config, bundle.dataset, dev.dataset, kg_path=paths["kg"],
            grid={"k": [1, 2, 4], "p": [2]},
            surfaces_path=paths["surfaces"], lexicon_path=paths["lexicon"],
        )
        print("k/p sweep on dev:")
        for row in rows:
            print(f"  k={row['k']} p={row['p']}: {row['accuracy']:.2f}")


if __name__ == "__main__":
    main()
