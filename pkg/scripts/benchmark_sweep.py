#!/usr/bin/env python3
"""Multi-seed sweep on the synthetic benchmark.

Trains the inductive, transductive, and reconstruction-only-unlabeled
regimes for each seed and prints a per-seed accuracy table plus means,
mirroring the end-to-end gates in tests/test_acceptance.py but with the
knobs exposed.

Example:
    python3 scripts/benchmark_sweep.py --seeds 0 1 2 3 4 --epochs 120
"""

import argparse
import json
import time

import numpy as np

from dgzsl.config import TrainConfig
from dgzsl.data import SynthSpec, synth_generate
from dgzsl.inference import accuracy
from dgzsl.train import train_model

REGIMES = {
    "inductive": dict(regime="inductive"),
    "transductive": dict(regime="transductive"),
    "recon-only": dict(regime="transductive", recon_only_unlabeled=True),
}


def unseen_acc(model, ds) -> float:
    return accuracy(
        ds.test_features, ds.test_labels, ds.unseen_classes, ds.attributes, model
    )


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    parser.add_argument("--epochs", type=int, default=120)
    parser.add_argument("--pretrain-epochs", type=int, default=40)
    parser.add_argument("--latent-dim", type=int, default=16)
    parser.add_argument("--hidden", type=int, nargs="+", default=[64, 64])
    parser.add_argument("--batch-size", type=int, default=100)
    parser.add_argument("--keep-prob", type=float, default=0.8)
    parser.add_argument("--regimes", nargs="+", choices=sorted(REGIMES), default=sorted(REGIMES))
    parser.add_argument("--out", help="optional JSON results file")
    args = parser.parse_args()

    results = {}
    for name in args.regimes:
        extra = dict(REGIMES[name])
        if extra["regime"] == "transductive":
            extra["pretrain_epochs"] = args.pretrain_epochs
        accs = {}
        t0 = time.perf_counter()
        for seed in args.seeds:
            ds = synth_generate(SynthSpec(seed=seed))
            cfg = TrainConfig(
                latent_dim=args.latent_dim,
                hidden_dims=tuple(args.hidden),
                batch_size=args.batch_size,
                keep_prob=args.keep_prob,
                epochs=args.epochs,
                seed=seed,
                **extra,
            )
            result = train_model(ds, cfg)
            accs[seed] = unseen_acc(result.model, ds)
            print(f"  {name:>12}  seed {seed}: {accs[seed]:.3f}", flush=True)
        results[name] = {
            "per_seed": accs,
            "mean": float(np.mean(list(accs.values()))),
            "seconds": time.perf_counter() - t0,
        }

    print()
    print(f"{'regime':>12}  " + "  ".join(f"s{seed}" for seed in args.seeds) + "   mean")
    for name, entry in results.items():
        row = "  ".join(f"{entry['per_seed'][s]:.2f}" for s in args.seeds)
        print(f"{name:>12}  {row}   {entry['mean']:.3f}  ({entry['seconds']:.0f}s)")

    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(
                {
                    name: {
                        "per_seed": {str(k): v for k, v in entry["per_seed"].items()},
                        "mean": entry["mean"],
                        "seconds": entry["seconds"],
                    }
                    for name, entry in results.items()
                },
                fh,
                indent=2,
                sort_keys=True,
            )
            fh.write("\n")
        print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
