"""Sweep orchestration: characteristic information/accuracy curves vs fault
strength, CSV emission, and a minimal SVG renderer for the line charts."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from . import attacks, metrics, model
from .attacks import AttackResult, BimConfig, Objective
from .data import Dataset
from .metrics import SNR_CAP_DB

DEFAULT_SNR_GRID = (40.0, 35.0, 30.0, 25.0, 20.0, 15.0, 10.0, 5.0, 2.0, 1.0)

MI_AXIS_MAX = math.log2(10)

AWGN = "awgn"
BIM_L2 = "bim-l2"
BIM_LINF = "bim-linf"
SPATIAL = "spatial"
SNR_ATTACKS = (AWGN, BIM_L2, BIM_LINF)
NO_OBJECTIVE = "none"


@dataclass(frozen=True)
class CurvePoint:
    strength: float  # dB for SNR-parameterized faults, degrees for spatial
    mi_bits: float
    accuracy: float
    n: int
    attack: str
    objective: str
    # archived joint (rows=prediction, cols=label) so mi/accuracy can be
    # re-derived for audits; not part of the CSV row format
    counts: Optional[tuple] = None

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 1]")
        if not 0.0 <= self.mi_bits <= MI_AXIS_MAX + 1e-9:
            raise ValueError(f"mi_bits {self.mi_bits} outside [0, log2(10)]")
        if self.n < 1:
            raise ValueError("n must be >= 1")


class SweepAborted(RuntimeError):
    """A point's attack failed; .points carries the completed prefix."""

    def __init__(self, message: str, points):
        super().__init__(message)
        self.points = points


@dataclass
class SnrSweepConfig:
    attack: str = AWGN
    objective: Optional[Objective] = None
    snr_grid: Sequence[float] = DEFAULT_SNR_GRID
    steps: int = 40
    step_size: Optional[float] = None
    stop_mean_margin: Optional[float] = None
    seed: int = 0
    threads: int = 1
    chunk: int = 256

    def __post_init__(self):
        if self.attack not in SNR_ATTACKS:
            raise ValueError(f"unknown SNR-parameterized attack {self.attack!r}")
        grid = tuple(float(s) for s in self.snr_grid)
        if any(s <= 0 for s in grid):
            raise ValueError("snr grid values must be > 0 dB")
        if any(a <= b for a, b in zip(grid, grid[1:])):
            raise ValueError("snr grid must be strictly decreasing")
        if self.attack == AWGN:
            if self.objective is not None:
                raise ValueError("objective applies only to bim attacks")
        elif self.objective is None:
            self.objective = attacks.MISCLS
        self.snr_grid = grid


def _objective_label(cfg_objective: Optional[Objective]) -> str:
    return cfg_objective.label if cfg_objective is not None else NO_OBJECTIVE


def _freeze_counts(joint: metrics.JointCounts) -> tuple:
    return tuple(tuple(int(v) for v in row) for row in joint.counts)


def _point_from_result(result: AttackResult, labels, attack: str, objective: str) -> CurvePoint:
    eval_labels = result.eval_labels if result.eval_labels is not None else labels
    joint = metrics.joint_counts(result.preds, eval_labels)
    return CurvePoint(
        strength=result.achieved_snr,
        mi_bits=metrics.mutual_information(joint),
        accuracy=metrics.accuracy(joint),
        n=joint.n,
        attack=attack,
        objective=objective,
        counts=_freeze_counts(joint),
    )


def clean_point(network, subset: Dataset, attack: str, objective: str) -> CurvePoint:
    preds, _ = model.predict(network, subset.images)
    joint = metrics.joint_counts(preds, subset.labels)
    return CurvePoint(
        strength=SNR_CAP_DB,
        mi_bits=metrics.mutual_information(joint),
        accuracy=metrics.accuracy(joint),
        n=joint.n,
        attack=attack,
        objective=objective,
        counts=_freeze_counts(joint),
    )


def _merge_results(parts) -> AttackResult:
    return AttackResult(
        adversarial=np.concatenate([p.adversarial for p in parts]),
        achieved_snr=float(
            np.concatenate([p.per_example_snr for p in parts]).mean()
        ),
        preds=np.concatenate([p.preds for p in parts]),
        per_example_norms=np.concatenate([p.per_example_norms for p in parts]),
        per_example_snr=np.concatenate([p.per_example_snr for p in parts]),
        eval_labels=(
            np.concatenate([p.eval_labels for p in parts])
            if parts[0].eval_labels is not None
            else None
        ),
    )


def _snr_point(network, subset: Dataset, cfg: SnrSweepConfig, grid_index: int) -> CurvePoint:
    snr = cfg.snr_grid[grid_index]
    x = subset.images
    labels = subset.labels
    parts = []
    for start in range(0, len(subset), cfg.chunk):
        xb = x[start : start + cfg.chunk]
        yb = labels[start : start + cfg.chunk]
        if cfg.attack == AWGN:
            # per-image substreams are salted with the absolute image index so
            # chunking cannot change the draws
            part = _awgn_chunk(network, xb, snr, cfg.seed, grid_index, start)
        else:
            x_norms = np.linalg.norm(
                xb.astype(np.float64).reshape(xb.shape[0], -1), axis=1
            )
            eps = np.array(
                [metrics.delta_norm_for_snr(v, snr) if v > 0 else attacks.GRAD_EPS for v in x_norms]
            )
            if cfg.attack == BIM_LINF:
                eps = eps / math.sqrt(xb[0].size)
            bim_cfg = BimConfig(
                norm=attacks.L2 if cfg.attack == BIM_L2 else attacks.LINF,
                epsilon=eps,
                steps=cfg.steps,
                step_size=cfg.step_size,
                objective=cfg.objective,
                seed=cfg.seed,
                stop_mean_margin=cfg.stop_mean_margin,
            )
            part = attacks.bim(network, xb, yb, bim_cfg)
        if part.eval_labels is None:
            part.eval_labels = yb
        parts.append(part)
    merged = _merge_results(parts)
    return _point_from_result(merged, labels, cfg.attack, _objective_label(cfg.objective))


def _awgn_chunk(network, xb, snr, seed, grid_index, start):
    n = xb.shape[0]
    delta = np.empty_like(xb)
    for i in range(n):
        rng = attacks.substream(seed, "awgn", grid_index, start + i)
        noise = rng.standard_normal(size=xb.shape[1:])
        xn = float(np.linalg.norm(xb[i].astype(np.float64).ravel()))
        nn = float(np.linalg.norm(noise.ravel()))
        want = metrics.delta_norm_for_snr(xn, snr) if xn > 0 else 0.0
        delta[i] = (noise * (want / nn if nn > 0 else 0.0)).astype(xb.dtype)
    adv = xb + delta
    preds, _ = model.predict(network, adv)
    per_snr = attacks._per_image_snr(xb, delta)
    return AttackResult(
        adversarial=adv,
        achieved_snr=float(per_snr.mean()),
        preds=preds,
        per_example_norms=np.linalg.norm(
            delta.astype(np.float64).reshape(n, -1), axis=1
        ),
        per_example_snr=per_snr,
    )


def sweep_snr(network, subset: Dataset, cfg: SnrSweepConfig):
    """One CurvePoint per grid SNR, preceded by the clean point at the SNR cap.

    Points are independent and may be computed in parallel; the recorded
    strength is the achieved mean SNR, not the nominal budget.
    """
    objective_label = _objective_label(cfg.objective)
    points = [clean_point(network, subset, cfg.attack, objective_label)]
    indices = range(len(cfg.snr_grid))
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            futures = [pool.submit(_snr_point, network, subset, cfg, i) for i in indices]
            results = []
            for i, fut in enumerate(futures):
                try:
                    results.append(fut.result())
                except Exception as exc:
                    raise SweepAborted(
                        f"attack failed at grid point {i} ({cfg.snr_grid[i]} dB): {exc}",
                        points + results,
                    ) from exc
    else:
        results = []
        for i in indices:
            try:
                results.append(_snr_point(network, subset, cfg, i))
            except Exception as exc:
                raise SweepAborted(
                    f"attack failed at grid point {i} ({cfg.snr_grid[i]} dB): {exc}",
                    points + results,
                ) from exc
    return points + results


def sweep_spatial(network, subset: Dataset, budgets, rot_step: float = 5.0, threads: int = 1):
    """One CurvePoint per (max rotation deg, max translation px) budget;
    strength is scalarized as the rotation budget in degrees."""
    budgets = [(float(r), int(t)) for r, t in budgets]
    for (r0, t0), (r1, t1) in zip(budgets, budgets[1:]):
        if r1 < r0 or t1 < t0:
            raise ValueError("budgets must be non-decreasing")

    def worker(budget):
        rot, trans = budget
        result = attacks.spatial_worst_of_grid(
            network, subset.images, subset.labels, rot, trans, rot_step
        )
        joint = metrics.joint_counts(result.preds, subset.labels)
        return CurvePoint(
            strength=rot,
            mi_bits=metrics.mutual_information(joint),
            accuracy=metrics.accuracy(joint),
            n=joint.n,
            attack=SPATIAL,
            objective=NO_OBJECTIVE,
            counts=_freeze_counts(joint),
        )

    points = []
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(worker, b) for b in budgets]
            for i, fut in enumerate(futures):
                try:
                    points.append(fut.result())
                except Exception as exc:
                    raise SweepAborted(f"spatial budget {budgets[i]} failed: {exc}", points) from exc
    else:
        for b in budgets:
            try:
                points.append(worker(b))
            except Exception as exc:
                raise SweepAborted(f"spatial budget {b} failed: {exc}", points) from exc
    return points


def _fmt(v: float) -> str:
    return format(float(v), ".6g")


def emit_csv(points, path) -> None:
    """attack,objective,strength,mi_bits,accuracy,n; 6 significant digits, LF."""
    with open(path, "w", newline="\n") as f:
        f.write("attack,objective,strength,mi_bits,accuracy,n\n")
        for p in points:
            f.write(
                f"{p.attack},{p.objective},{_fmt(p.strength)},{_fmt(p.mi_bits)},"
                f"{_fmt(p.accuracy)},{p.n}\n"
            )


def emit_counts_json(points, path) -> None:
    """Audit companion to the CSV: the archived joint of every point, from
    which mi_bits and accuracy are exactly re-derivable."""
    import json

    rows = [
        {
            "attack": p.attack,
            "objective": p.objective,
            "strength": float(p.strength),
            "counts": [list(r) for r in p.counts] if p.counts is not None else None,
        }
        for p in points
    ]
    with open(path, "w", newline="\n") as f:
        json.dump(rows, f, indent=1)
        f.write("\n")


def parse_csv(path):
    """Inverse of emit_csv, for audits and tests."""
    points = []
    with open(path, "r", newline="") as f:
        header = f.readline().strip()
        if header != "attack,objective,strength,mi_bits,accuracy,n":
            raise ValueError(f"unexpected header {header!r}")
        for line in f:
            attack, objective, strength, mi, acc, n = line.strip().split(",")
            points.append(
                CurvePoint(
                    strength=float(strength),
                    mi_bits=float(mi),
                    accuracy=float(acc),
                    n=int(n),
                    attack=attack,
                    objective=objective,
                )
            )
    return points


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def render_svg(points_by_series, path, width: int = 640, height: int = 440) -> None:
    """One chart: MI as solid polylines (left axis, bits) and accuracy as
    dashed polylines (right axis) over a shared strength axis.

    SNR-style sweeps arrive with decreasing strength; the x axis follows the
    point order of the first series so attack strength always grows to the
    right.
    """
    if not points_by_series:
        raise ValueError("need at least one series")
    for name, pts in points_by_series.items():
        if not pts:
            raise ValueError(f"series {name!r} has no points")

    ml, mr, mt, mb = 52, 52, 28, 40
    pw, ph = width - ml - mr, height - mt - mb
    all_strengths = [p.strength for pts in points_by_series.values() for p in pts]
    smin, smax = min(all_strengths), max(all_strengths)
    if smin == smax:
        smin, smax = smin - 0.5, smax + 0.5
    first = next(iter(points_by_series.values()))
    descending = first[0].strength > first[-1].strength if len(first) > 1 else False

    def sx(s: float) -> float:
        t = (s - smin) / (smax - smin)
        if descending:
            t = 1.0 - t
        return ml + t * pw

    def sy_mi(v: float) -> float:
        return mt + ph - (v / MI_AXIS_MAX) * ph

    def sy_acc(v: float) -> float:
        return mt + ph - v * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">'
    ]
    # axes
    parts.append(
        f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>'
    )
    parts.append(f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>')
    parts.append(
        f'<line x1="{ml + pw}" y1="{mt}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>'
    )
    left_label, right_label = (smax, smin) if descending else (smin, smax)
    parts.append(
        f'<text x="{ml}" y="{height - 8}" text-anchor="middle">{_fmt(left_label)}</text>'
    )
    parts.append(
        f'<text x="{ml + pw}" y="{height - 8}" text-anchor="middle">{_fmt(right_label)}</text>'
    )
    parts.append(
        f'<text x="{ml + pw / 2}" y="{height - 8}" text-anchor="middle">strength</text>'
    )
    parts.append(
        f'<text x="14" y="{mt + ph / 2}" text-anchor="middle" '
        f'transform="rotate(-90 14 {mt + ph / 2})">information (bits)</text>'
    )
    parts.append(
        f'<text x="{width - 14}" y="{mt + ph / 2}" text-anchor="middle" '
        f'transform="rotate(90 {width - 14} {mt + ph / 2})">accuracy</text>'
    )
    for frac, label in ((0.0, "0"), (1.0, _fmt(MI_AXIS_MAX))):
        parts.append(
            f'<text x="{ml - 6}" y="{mt + ph - frac * ph + 4}" text-anchor="end">{label}</text>'
        )
    for frac, label in ((0.0, "0"), (1.0, "1")):
        parts.append(
            f'<text x="{ml + pw + 6}" y="{mt + ph - frac * ph + 4}" text-anchor="start">{label}</text>'
        )

    for si, (name, pts) in enumerate(points_by_series.items()):
        color = _COLORS[si % len(_COLORS)]
        mi_pts = " ".join(f"{sx(p.strength):.2f},{sy_mi(p.mi_bits):.2f}" for p in pts)
        acc_pts = " ".join(f"{sx(p.strength):.2f},{sy_acc(p.accuracy):.2f}" for p in pts)
        parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.6" points="{mi_pts}"/>'
        )
        parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.4" '
            f'stroke-dasharray="6,4" points="{acc_pts}"/>'
        )
        ly = mt + 14 + 14 * si
        parts.append(
            f'<line x1="{ml + 8}" y1="{ly - 4}" x2="{ml + 30}" y2="{ly - 4}" '
            f'stroke="{color}" stroke-width="1.6"/>'
        )
        parts.append(f'<text x="{ml + 36}" y="{ly}">{escape(name)}</text>')
    parts.append("</svg>")
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(parts) + "\n")
