"""Information and signal metrics: joint counts, plug-in MI, accuracy, SNR algebra.

All estimates are computed in float64 regardless of the engine precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Reported SNR for a zero perturbation; keeps CSV output numeric instead of
# infinite. Values above the cap are clamped to it.
SNR_CAP_DB = 300.0


@dataclass(frozen=True)
class JointCounts:
    """Empirical joint of (prediction T, label Y): rows are T, columns are Y."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or (c < 0).any():
            raise ValueError("counts must be a non-negative 2-d matrix")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: "JointCounts") -> "JointCounts":
        return JointCounts(self.counts + other.counts)

    def transpose(self) -> "JointCounts":
        return JointCounts(self.counts.T)


def joint_counts(preds, labels, n_classes: int = 10) -> JointCounts:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError("preds and labels must have equal length")
    if preds.size and (
        preds.min() < 0 or preds.max() >= n_classes or labels.min() < 0 or labels.max() >= n_classes
    ):
        raise ValueError(f"values out of range 0..{n_classes - 1}")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (preds, labels), 1)
    return JointCounts(counts)


def mutual_information(joint: JointCounts) -> float:
    """Plug-in I(T;Y) in bits from the empirical joint.

    Cell terms are paired as (i,j)+(j,i) before accumulation so the result is
    bitwise invariant under transposition; 0*log(0) terms contribute 0.
    """
    c = joint.counts
    n = int(c.sum())
    if n < 1:
        raise ValueError("empty joint")
    rows = c.sum(axis=1)
    cols = c.sum(axis=0)

    def term(t: int, y: int) -> float:
        cty = int(c[t, y])
        if cty == 0:
            return 0.0
        return cty / n * math.log2(cty * n / (rows[t] * cols[y]))

    total = 0.0
    k = c.shape[0]
    for i in range(k):
        total += term(i, i)
        for j in range(i + 1, k):
            total += term(i, j) + term(j, i)
    return total if total > 0.0 else 0.0


def accuracy(joint: JointCounts) -> float:
    n = joint.n
    if n < 1:
        raise ValueError("empty joint")
    return float(np.trace(joint.counts)) / n


def entropy_bits(counts) -> float:
    """Plug-in Shannon entropy in bits of a count vector."""
    c = np.asarray(counts, dtype=np.float64)
    total = c.sum()
    if total <= 0:
        raise ValueError("empty counts")
    p = c[c > 0] / total
    return float(-(p * np.log2(p)).sum())


def snr_db(x: np.ndarray, delta: np.ndarray) -> float:
    """20*log10(1 + ||x||/||delta||) in dB over the flattened L2 norms.

    0 dB means the perturbation fully dominates; a zero perturbation reports
    the SNR cap.
    """
    x = np.asarray(x)
    delta = np.asarray(delta)
    if x.shape != delta.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {delta.shape}")
    dn = float(np.linalg.norm(delta.astype(np.float64).ravel()))
    if dn == 0.0:
        return SNR_CAP_DB
    xn = float(np.linalg.norm(x.astype(np.float64).ravel()))
    return min(20.0 * math.log10(1.0 + xn / dn), SNR_CAP_DB)


def delta_norm_for_snr(x_norm: float, snr: float) -> float:
    """Perturbation norm that realizes the given SNR against a signal norm."""
    if snr <= 0:
        raise ValueError("snr must be > 0 dB (0 dB is an unreachable budget)")
    return x_norm / (10.0 ** (snr / 20.0) - 1.0)
