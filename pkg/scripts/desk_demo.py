#!/usr/bin/env python3
"""End-to-end desk-scale demo on the synthetic digit set (no SVHN needed).

Generates train/test containers, trains for a few epochs, sweeps AWGN and
BIM-L2 (one-tgt), runs the worst-of-grid spatial fault, and synthesizes
fooling images. Everything lands under --out (default ./desk-out).
"""

import argparse
import sys
from pathlib import Path

from ftcurves import cli, data


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="desk-out")
    parser.add_argument("--epochs", type=int, default=5)
    parser.add_argument("--train-size", type=int, default=4000)
    parser.add_argument("--test-size", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=3)
    parser.add_argument("--threads", type=int, default=2)
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_ftc = out / "synth-train.ftc"
    test_ftc = out / "synth-test.ftc"
    for path, n, seed in ((train_ftc, args.train_size, 7), (test_ftc, args.test_size, 8)):
        raw = data.synthetic_digits(n, seed=seed)
        data.write_container(raw.images, raw.labels, path)
        print(f"wrote {path} ({n} images)")

    def run(argv):
        print("+ ftcurves", " ".join(argv))
        rc = cli.main(argv)
        if rc != 0:
            raise SystemExit(rc)

    model_dir = out / "model"
    run(
        [
            "train", "--data", str(train_ftc), "--out", str(model_dir),
            "--epochs", str(args.epochs), "--seed", str(args.seed),
            "--model-name", "desk.ftm",
        ]
    )
    model_path = model_dir / "desk.ftm"

    run(["eval", "--model", str(model_path), "--data", str(test_ftc), "--out", str(out / "eval")])

    common = [
        "--model", str(model_path), "--data", str(test_ftc),
        "--seed", str(args.seed), "--threads", str(args.threads),
    ]
    run(["curve", *common, "--attack", "awgn", "--out", str(out / "curves")])
    run(
        [
            "curve", *common, "--attack", "bim-l2", "--objective", "one-tgt",
            "--subset-size", "200", "--steps", "20",
            "--snr-grid", "40,30,20,12,6,3,1.5", "--out", str(out / "curves"),
        ]
    )
    run(
        [
            "curve", *common, "--attack", "spatial", "--subset-size", "200",
            "--spatial-budgets", "0:0,10:1,20:2,30:3", "--out", str(out / "curves"),
        ]
    )
    run(
        [
            "fool", "--model", str(model_path), "--sigma", "0.1",
            "--max-iters", "400", "--seed", str(args.seed), "--out", str(out / "fool"),
        ]
    )
    print(f"\ndone; inspect {out}/curves/*.svg and {out}/fool/*.pgm")
    return 0


if __name__ == "__main__":
    sys.exit(main())
