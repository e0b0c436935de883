#!/usr/bin/env python3
"""Targeted adversarial-example grid.

Takes one correctly classified image per source class, runs the L2 iterative
attack toward every other class, and stops at the least number of iterations
that reaches the requested mean prediction margin (default 91%). Writes one
PGM per grid cell plus a single 10x10 montage: source class down the rows,
target class across the columns, clean originals on the diagonal.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from ftcurves import attacks, data, model
from ftcurves.attacks import BimConfig
from ftcurves.metrics import delta_norm_for_snr


def pick_per_class(net, ds):
    """First correctly classified image of each class (falls back to the
    first occurrence if the model never gets a class right)."""
    preds, _ = model.predict(net, ds.images)
    picks = []
    for cls in range(10):
        idx = np.flatnonzero((ds.labels == cls) & (preds == cls))
        if idx.size == 0:
            idx = np.flatnonzero(ds.labels == cls)
        if idx.size == 0:
            raise SystemExit(f"class {cls} missing from the dataset")
        picks.append(int(idx[0]))
    return np.array(picks)


def tile_montage(cells, gap=2):
    """cells[s][t] are (h, w) arrays; returns one canvas with per-tile
    affine mapping to 0..255 (matching the single-image PGM convention)."""
    h, w = cells[0][0].shape
    rows = len(cells)
    cols = len(cells[0])
    canvas = np.zeros((rows * h + (rows - 1) * gap, cols * w + (cols - 1) * gap))
    for s in range(rows):
        for t in range(cols):
            img = cells[s][t]
            lo, hi = img.min(), img.max()
            mapped = (img - lo) / (hi - lo) * 255.0 if hi > lo else np.full_like(img, 128.0)
            canvas[s * (h + gap) : s * (h + gap) + h, t * (w + gap) : t * (w + gap) + w] = mapped
    return canvas


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--model", required=True)
    parser.add_argument("--data", required=True)
    parser.add_argument("--out", default="advex-grid")
    parser.add_argument("--stop-mean-margin", type=float, default=0.91)
    parser.add_argument("--max-steps", type=int, default=300)
    parser.add_argument("--budget-snr", type=float, default=3.0,
                        help="generous L2 budget as an SNR in dB; the margin stop usually binds first")
    parser.add_argument("--subset-size", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    net = model.load_model(args.model)
    ds = data.prepare_dataset(data.load_container(args.data))
    subset = data.sample_subset(ds, min(args.subset_size, len(ds)), args.seed)
    picks = pick_per_class(net, subset)
    sources = subset.images[picks]

    # batch of 90: source s attacked toward each target t != s
    xs, targets, pairs = [], [], []
    for s in range(10):
        for t in range(10):
            if t != s:
                xs.append(sources[s])
                targets.append(t)
                pairs.append((s, t))
    x = np.stack(xs)
    targets = np.array(targets)
    eps = np.array(
        [delta_norm_for_snr(float(np.linalg.norm(img.ravel())), args.budget_snr) for img in x]
    )
    cfg = BimConfig(
        norm=attacks.L2,
        epsilon=eps,
        steps=args.max_steps,
        objective=attacks.MISCLS,  # unused by bim_targeted; targets are explicit
        stop_mean_margin=args.stop_mean_margin,
    )
    result = attacks.bim_targeted(net, x, targets, cfg)
    _, probs = model.predict(net, result.adversarial)
    margins = model.margins(probs)
    hit = (result.preds == targets).mean()
    print(f"mean margin {margins.mean():.4f}, target hit rate {hit:.2%}, "
          f"mean achieved SNR {result.achieved_snr:.2f} dB")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cells = [[None] * 10 for _ in range(10)]
    for s in range(10):
        cells[s][s] = sources[s, 0]
    for (s, t), img in zip(pairs, result.adversarial[:, 0]):
        cells[s][t] = img
        attacks.write_pgm(img, out / f"advex-s{s}-t{t}.pgm")
    for s in range(10):
        attacks.write_pgm(sources[s, 0], out / f"advex-s{s}-t{s}.pgm")
    montage = tile_montage(cells)
    attacks.write_pgm(montage, out / "advex-grid.pgm")
    print(f"wrote {out}/advex-grid.pgm and 100 cell images")
    return 0


if __name__ == "__main__":
    sys.exit(main())
