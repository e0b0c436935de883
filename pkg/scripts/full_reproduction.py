#!/usr/bin/env python3
"""Full SVHN reproduction pipeline (CPU-hours, not CI).

Trains the classifier twice for 50 epochs (with and without weight decay),
evaluates clean accuracy/information on a 1000-image test subset, sweeps
AWGN, BIM-L2 and BIM-Linf under all three objectives plus the spatial fault,
and crafts fooling images at sigma 0.1 and 0.01 with cross-model margins.

Outputs land under --out in the layout the gated acceptance tests read:

    wd/ nowd/          models + eval.json
    curves/            <attack>-<objective>-<tag>.csv/.svg
    fool/<tag>-s<sig>/ fooling images + reports

Afterwards:  FTCURVES_REPRO_DIR=<out> pytest tests/test_acceptance.py -s

Expects svhn-train.ftc / svhn-test.ftc (see the svhn-converter package) on
disk or under $FTC_DATA_DIR. --quick shrinks every knob for a smoke run.
"""

import argparse
import sys
from pathlib import Path

from ftcurves import cli

# denser than the CLI default so the sharp all-tgt confusion minimum and the
# one-tgt transition point are actually sampled
SNR_GRID = "40,35,30,28,26,24,22,20,18,16,14,12,10,8,6,4,3,2,1.5,1"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--train-data", default="svhn-train.ftc")
    parser.add_argument("--test-data", default="svhn-test.ftc")
    parser.add_argument("--out", default="repro-out")
    parser.add_argument("--epochs", type=int, default=50)
    parser.add_argument("--subset-size", type=int, default=1000)
    parser.add_argument("--steps", type=int, default=40)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=4)
    parser.add_argument("--skip-train", action="store_true", help="reuse existing models")
    parser.add_argument("--quick", action="store_true", help="tiny smoke-run sizes")
    args = parser.parse_args()

    if args.quick:
        args.epochs = min(args.epochs, 2)
        args.subset_size = min(args.subset_size, 60)
        args.steps = min(args.steps, 4)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def run(argv):
        print("+ ftcurves", " ".join(argv), flush=True)
        rc = cli.main(argv)
        if rc != 0:
            raise SystemExit(rc)

    models = {}
    for tag, decay in (("wd", 1e-2), ("nowd", 0.0)):
        model_dir = out / tag
        model_path = model_dir / f"{tag}.ftm"
        models[tag] = model_path
        if not (args.skip_train and model_path.exists()):
            run(
                [
                    "train", "--data", args.train_data, "--out", str(model_dir),
                    "--epochs", str(args.epochs), "--weight-decay", str(decay),
                    "--seed", str(args.seed), "--model-name", f"{tag}.ftm",
                ]
            )
        run(
            [
                "eval", "--model", str(model_path), "--data", args.test_data,
                "--out", str(model_dir), "--subset-size", str(args.subset_size),
                "--seed", str(args.seed),
            ]
        )

    curve_dir = out / "curves"
    for tag, model_path in models.items():
        common = [
            "--model", str(model_path), "--data", args.test_data,
            "--out", str(curve_dir), "--subset-size", str(args.subset_size),
            "--seed", str(args.seed), "--threads", str(args.threads),
            "--snr-grid", SNR_GRID, "--steps", str(args.steps),
        ]
        run(["curve", *common, "--attack", "awgn"])
        for attack in ("bim-l2", "bim-linf"):
            for objective in ("miscls", "one-tgt", "all-tgt"):
                run(["curve", *common, "--attack", attack, "--objective", objective])
        run(
            [
                "curve", *common, "--attack", "spatial",
                "--spatial-budgets", "0:0,10:1,20:2,30:3",
            ]
        )

    other = {"wd": "nowd", "nowd": "wd"}
    for tag, model_path in models.items():
        for sigma in (0.1, 0.01):
            run(
                [
                    "fool", "--model", str(model_path),
                    "--eval-model", str(models[other[tag]]),
                    "--sigma", str(sigma), "--max-iters", "2000",
                    "--seed", str(args.seed),
                    "--out", str(out / "fool" / f"{tag}-s{sigma}"),
                ]
            )

    print(f"\nreproduction artifacts in {out}")
    print(f"verify with: FTCURVES_REPRO_DIR={out} pytest tests/test_acceptance.py -s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
