"""Input-fault injectors.

AWGN rescaled to an exact per-image SNR, the basic iterative gradient attack
(L2 and Linf, untargeted or targeted), fooling-image synthesis from pure
noise, and a worst-of-grid rotation/translation search. Inputs are
standardized real images; there is no pixel-box clipping because the
standardized domain is unbounded.

All attacks are deterministic given (model, inputs, config, seed); random
draws come from per-image substreams, so results do not depend on batch
chunking or thread scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from . import engine, model
from .metrics import SNR_CAP_DB, delta_norm_for_snr, snr_db
from .rng import substream

GRAD_EPS = 1e-12  # iteration stops for an image once its gradient norm sinks below this

L2 = "l2"
LINF = "linf"

MISCLS_KIND = "miscls"
ONE_TGT_KIND = "one-tgt"
ALL_TGT_KIND = "all-tgt"

DEFAULT_SHIFT = tuple((k + 1) % 10 for k in range(10))


@dataclass(frozen=True)
class Objective:
    """What the attack tries to make the model predict.

    miscls: anything but the true label (ascent on the true-label loss).
    one-tgt: a fixed label permutation target per class (descent on the
    target loss); the permutation must be a fixed-point-free bijection.
    all-tgt: every one of the 9 incorrect labels in turn.
    """

    kind: str
    permutation: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in (MISCLS_KIND, ONE_TGT_KIND, ALL_TGT_KIND):
            raise ValueError(f"unknown objective {self.kind!r}")
        if self.kind == ONE_TGT_KIND:
            perm = self.permutation if self.permutation is not None else DEFAULT_SHIFT
            perm = tuple(int(p) for p in perm)
            if sorted(perm) != list(range(len(perm))):
                raise ValueError("permutation must be a bijection over 0..9")
            if any(p == i for i, p in enumerate(perm)):
                raise ValueError("permutation must have no fixed points")
            object.__setattr__(self, "permutation", perm)
        elif self.permutation is not None:
            raise ValueError(f"{self.kind} takes no permutation")

    @property
    def label(self) -> str:
        return self.kind


MISCLS = Objective(MISCLS_KIND)
ALL_TGT = Objective(ALL_TGT_KIND)


def one_tgt(permutation=None) -> Objective:
    return Objective(ONE_TGT_KIND, tuple(permutation) if permutation is not None else DEFAULT_SHIFT)


def parse_objective(label: str) -> Objective:
    if label == MISCLS_KIND:
        return MISCLS
    if label == ONE_TGT_KIND:
        return one_tgt()
    if label == ALL_TGT_KIND:
        return ALL_TGT
    raise ValueError(f"unknown objective {label!r}")


@dataclass
class BimConfig:
    """Iterative gradient attack configuration.

    epsilon is the per-image budget: an L2 norm bound or an Linf max-abs
    bound, scalar or one value per image. step_size defaults to
    2.5*epsilon/steps.
    """

    norm: str = L2
    epsilon: Union[float, np.ndarray] = 1.0
    steps: int = 40
    step_size: Optional[Union[float, np.ndarray]] = None
    objective: Objective = MISCLS
    seed: int = 0
    stop_mean_margin: Optional[float] = None

    def __post_init__(self):
        if self.norm not in (L2, LINF):
            raise ValueError(f"norm must be '{L2}' or '{LINF}'")
        if np.any(np.asarray(self.epsilon) <= 0):
            raise ValueError("epsilon must be > 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.step_size is not None and np.any(np.asarray(self.step_size) <= 0):
            raise ValueError("step_size must be > 0")


@dataclass
class AttackResult:
    """Perturbed batch plus strength bookkeeping.

    per_example_norms uses the attack's own budget norm (L2 norm for L2 and
    AWGN, max-abs for Linf); per_example_snr is always the L2-based SNR.
    eval_labels aligns with preds for metrics; it is the original labels,
    tiled when an attack emits several variants per input.
    """

    adversarial: np.ndarray
    achieved_snr: float
    preds: Optional[np.ndarray]
    per_example_norms: np.ndarray
    per_example_snr: np.ndarray
    eval_labels: Optional[np.ndarray] = None


def _flat_norms(arr: np.ndarray) -> np.ndarray:
    return np.linalg.norm(arr.astype(np.float64).reshape(arr.shape[0], -1), axis=1)


def _per_image_snr(x: np.ndarray, delta: np.ndarray) -> np.ndarray:
    xn = _flat_norms(x)
    dn = _flat_norms(delta)
    out = np.full(x.shape[0], SNR_CAP_DB)
    nz = dn > 0
    out[nz] = np.minimum(20.0 * np.log10(1.0 + xn[nz] / dn[nz]), SNR_CAP_DB)
    return out


def awgn(
    x_batch: np.ndarray,
    target_snr: float,
    seed: int,
    network: Optional[engine.Network] = None,
    salt: int = 0,
) -> AttackResult:
    """White Gaussian noise rescaled per image so snr_db(x, delta) hits the
    target exactly. salt separates streams when one seed drives several
    sweeps' draws."""
    if target_snr <= 0:
        raise ValueError("target_snr must be > 0 dB")
    n = x_batch.shape[0]
    delta = np.empty_like(x_batch)
    for i in range(n):
        rng = substream(seed, "awgn", salt, i)
        noise = rng.standard_normal(size=x_batch.shape[1:])
        xn = float(np.linalg.norm(x_batch[i].astype(np.float64).ravel()))
        nn = float(np.linalg.norm(noise.ravel()))
        want = delta_norm_for_snr(xn, target_snr) if xn > 0 else 0.0
        scale = want / nn if nn > 0 else 0.0
        delta[i] = (noise * scale).astype(x_batch.dtype)
    adv = x_batch + delta
    preds = model.predict(network, adv)[0] if network is not None else None
    per_snr = _per_image_snr(x_batch, delta)
    return AttackResult(
        adversarial=adv,
        achieved_snr=float(per_snr.mean()),
        preds=preds,
        per_example_norms=_flat_norms(delta),
        per_example_snr=per_snr,
    )


def _bim_run(
    network: engine.Network,
    x: np.ndarray,
    loss_labels: np.ndarray,
    sign: float,
    eps: np.ndarray,
    alpha: np.ndarray,
    cfg: BimConfig,
) -> np.ndarray:
    """Shared iteration: step along the per-example loss gradient, then
    project the accumulated perturbation back onto the budget ball."""
    x0 = x.astype(x.dtype, copy=True)
    xa = x0.copy()
    n = x.shape[0]
    eps_b = eps.reshape(n, 1, 1, 1)
    alpha_b = alpha.reshape(n, 1, 1, 1)
    for _ in range(cfg.steps):
        g = engine.input_gradient(network, xa, loss_labels, reduction="sum")
        gn = _flat_norms(g)
        active = gn >= GRAD_EPS
        if not active.any():
            break
        if cfg.norm == L2:
            direction = g / np.maximum(gn, GRAD_EPS).reshape(n, 1, 1, 1)
        else:
            direction = np.sign(g)
        step = sign * alpha_b * direction
        xa = np.where(active.reshape(n, 1, 1, 1), xa + step, xa).astype(x.dtype)

        delta = xa - x0
        if cfg.norm == L2:
            dn = _flat_norms(delta)
            scale = np.minimum(1.0, eps / np.maximum(dn, GRAD_EPS)).reshape(n, 1, 1, 1)
            delta = delta * scale
        else:
            delta = np.clip(delta, -eps_b, eps_b)
        xa = (x0 + delta).astype(x.dtype)

        if cfg.stop_mean_margin is not None:
            _, probs = model.predict(network, xa)
            if float(model.margins(probs).mean()) >= cfg.stop_mean_margin:
                break
    return xa


def bim_targeted(
    network: engine.Network,
    x_batch: np.ndarray,
    targets: np.ndarray,
    cfg: BimConfig,
) -> AttackResult:
    """Descent on the cross entropy of explicit per-image target labels.

    The grid-style figures (every source digit driven toward every other
    class under a margin stop) need arbitrary target assignments that no
    label permutation expresses.
    """
    n = x_batch.shape[0]
    targets = np.asarray(targets)
    eps = np.broadcast_to(np.asarray(cfg.epsilon, dtype=np.float64), (n,)).copy()
    if cfg.step_size is not None:
        alpha = np.broadcast_to(np.asarray(cfg.step_size, dtype=np.float64), (n,)).copy()
    else:
        alpha = 2.5 * eps / cfg.steps
    adv = _bim_run(network, x_batch, targets, -1.0, eps, alpha, cfg)
    delta = adv - x_batch
    if cfg.norm == L2:
        norms = _flat_norms(delta)
    else:
        norms = np.abs(delta.astype(np.float64)).reshape(n, -1).max(axis=1)
    preds, _ = model.predict(network, adv)
    per_snr = _per_image_snr(x_batch, delta)
    return AttackResult(
        adversarial=adv,
        achieved_snr=float(per_snr.mean()),
        preds=preds,
        per_example_norms=norms,
        per_example_snr=per_snr,
    )


def bim(
    network: engine.Network,
    x_batch: np.ndarray,
    labels: np.ndarray,
    cfg: BimConfig,
) -> AttackResult:
    """Basic iterative gradient attack under an L2 or Linf budget.

    Under all-tgt, each input yields 9 variants (one per incorrect target);
    preds and eval_labels cover all of them, pooled in input-major order by
    target shift.
    """
    n = x_batch.shape[0]
    labels = np.asarray(labels)
    eps = np.broadcast_to(np.asarray(cfg.epsilon, dtype=np.float64), (n,)).copy()
    if cfg.step_size is not None:
        alpha = np.broadcast_to(np.asarray(cfg.step_size, dtype=np.float64), (n,)).copy()
    else:
        alpha = 2.5 * eps / cfg.steps

    obj = cfg.objective
    if obj.kind == MISCLS_KIND:
        runs = [(labels, +1.0)]
    elif obj.kind == ONE_TGT_KIND:
        perm = np.asarray(obj.permutation)
        runs = [(perm[labels], -1.0)]
    else:
        runs = [((labels + shift) % 10, -1.0) for shift in range(1, 10)]

    adv_parts = []
    for loss_labels, sign in runs:
        adv_parts.append(_bim_run(network, x_batch, loss_labels, sign, eps, alpha, cfg))
    adv = np.concatenate(adv_parts, axis=0)
    reps = len(runs)
    x_rep = np.concatenate([x_batch] * reps, axis=0)
    delta = adv - x_rep

    if cfg.norm == L2:
        norms = _flat_norms(delta)
    else:
        norms = np.abs(delta.astype(np.float64)).reshape(reps * n, -1).max(axis=1)
    preds, _ = model.predict(network, adv)
    per_snr = _per_image_snr(x_rep, delta)
    return AttackResult(
        adversarial=adv,
        achieved_snr=float(per_snr.mean()),
        preds=preds,
        per_example_norms=norms,
        per_example_snr=per_snr,
        eval_labels=np.concatenate([labels] * reps) if reps > 1 else labels.copy(),
    )


@dataclass
class FoolingResult:
    images: np.ndarray  # (k, 1, h, w)
    targets: np.ndarray
    iterations: np.ndarray
    margins: np.ndarray
    preds: np.ndarray
    initial_snr_db: np.ndarray
    converged: np.ndarray


def fooling_images(
    network: engine.Network,
    sigma: float,
    targets: Sequence[int] = tuple(range(10)),
    stop_margin: float = model.FULL_CONFIDENCE_MARGIN,
    max_iters: int = 500,
    step_size: float = 0.5,
    seed: int = 0,
    shape: tuple = (1, 32, 32),
) -> FoolingResult:
    """Synthesize one image per target from pure N(0, sigma^2) noise by
    iterated targeted gradient descent until the prediction margin reaches
    stop_margin.

    Non-convergence is reported in the result (converged flag and final
    margin), not raised. initial_snr_db measures the starting noise against
    the unit-variance training-data convention (reference norm sqrt(d)).
    """
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    targets = np.asarray(list(targets), dtype=np.int64)
    k = len(targets)
    dtype = network.dtype
    x = np.empty((k,) + tuple(shape), dtype=dtype)
    for i in range(k):
        rng = substream(seed, "fool", i)
        x[i] = (sigma * rng.standard_normal(size=shape)).astype(dtype)

    d = int(np.prod(shape))
    ref = math.sqrt(d)
    norms0 = _flat_norms(x)
    initial_snr = np.where(
        norms0 > 0, 20.0 * np.log10(1.0 + ref / np.maximum(norms0, 1e-300)), SNR_CAP_DB
    )

    iterations = np.full(k, -1, dtype=np.int64)
    done = np.zeros(k, dtype=bool)
    preds = np.zeros(k, dtype=np.int64)
    marg = np.zeros(k)
    for it in range(max_iters + 1):
        preds, probs = model.predict(network, x)
        marg = model.margins(probs)
        newly = (~done) & (preds == targets) & (marg >= stop_margin)
        iterations[newly] = it
        done |= newly
        if done.all() or it == max_iters:
            break
        g = engine.input_gradient(network, x, targets, reduction="sum")
        gn = _flat_norms(g)
        active = (~done) & (gn >= GRAD_EPS)
        if not active.any():
            break
        step = step_size * g / np.maximum(gn, GRAD_EPS).reshape(k, 1, 1, 1)
        x = np.where(active.reshape(k, 1, 1, 1), x - step, x).astype(dtype)

    iterations = np.where(done, iterations, max_iters)
    return FoolingResult(
        images=x,
        targets=targets,
        iterations=iterations,
        margins=marg,
        preds=preds,
        initial_snr_db=initial_snr,
        converged=done,
    )


def _bilinear_transform(x: np.ndarray, rot_deg: float, tx: int, ty: int) -> np.ndarray:
    """Rotate about the image center then translate by (tx, ty) pixels, with
    bilinear interpolation and zero fill outside the frame."""
    n, c, h, w = x.shape
    theta = math.radians(rot_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dx = xx - cx - tx
    dy = yy - cy - ty
    xs = cos_t * dx + sin_t * dy + cx
    ys = -sin_t * dx + cos_t * dy + cy

    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0

    out = np.zeros_like(x)
    for oy, ox, wgt in (
        (y0, x0, (1 - fx) * (1 - fy)),
        (y0, x0 + 1, fx * (1 - fy)),
        (y0 + 1, x0, (1 - fx) * fy),
        (y0 + 1, x0 + 1, fx * fy),
    ):
        valid = (oy >= 0) & (oy < h) & (ox >= 0) & (ox < w)
        oyc = np.clip(oy, 0, h - 1)
        oxc = np.clip(ox, 0, w - 1)
        sample = x[:, :, oyc, oxc]
        out += sample * np.where(valid, wgt, 0.0).astype(x.dtype)
    return out


def _transform_grid(max_rot_deg: float, max_trans_px: int, rot_step: float):
    """Identity first, then the rest of the symmetric grid in sorted order."""
    rots = {0.0}
    r = rot_step
    while r <= max_rot_deg + 1e-9:
        rots.update((r, -r))
        r += rot_step
    trans = range(-int(max_trans_px), int(max_trans_px) + 1)
    grid = [(0.0, 0, 0)]
    for rot in sorted(rots):
        for tx in trans:
            for ty in trans:
                if (rot, tx, ty) != (0.0, 0, 0):
                    grid.append((rot, tx, ty))
    return grid


def spatial_worst_of_grid(
    network: engine.Network,
    x_batch: np.ndarray,
    labels: np.ndarray,
    max_rot_deg: float,
    max_trans_px: int,
    rot_step: float = 5.0,
) -> AttackResult:
    """Per image, the rotation/translation within budget that maximizes the
    true-label cross-entropy. The grid always contains the identity, so the
    worst-of-grid loss can never undercut the clean loss."""
    if max_rot_deg < 0 or max_trans_px < 0:
        raise ValueError("budgets must be >= 0")
    labels = np.asarray(labels)
    n = x_batch.shape[0]
    best_loss = np.full(n, -np.inf)
    best = x_batch.copy()
    for rot, tx, ty in _transform_grid(max_rot_deg, max_trans_px, rot_step):
        xt = x_batch if (rot, tx, ty) == (0.0, 0, 0) else _bilinear_transform(x_batch, rot, tx, ty)
        _, probs = model.predict(network, xt)
        p_true = np.maximum(probs[np.arange(n), labels].astype(np.float64), 1e-300)
        loss = -np.log(p_true)
        upd = loss > best_loss
        best_loss[upd] = loss[upd]
        best[upd] = xt[upd]
    preds, _ = model.predict(network, best)
    delta = best - x_batch
    per_snr = _per_image_snr(x_batch, delta)
    return AttackResult(
        adversarial=best,
        achieved_snr=float(per_snr.mean()),
        preds=preds,
        per_example_norms=_flat_norms(delta),
        per_example_snr=per_snr,
        eval_labels=labels.copy(),
    )


def write_pgm(image: np.ndarray, path) -> None:
    """Export one greyscale image as binary PGM, values affinely mapped to
    0..255 (a constant image maps to mid-grey)."""
    img = np.asarray(image, dtype=np.float64)
    img = img.reshape(img.shape[-2], img.shape[-1])
    lo, hi = float(img.min()), float(img.max())
    if hi > lo:
        mapped = np.round((img - lo) / (hi - lo) * 255.0)
    else:
        mapped = np.full_like(img, 128.0)
    data = mapped.astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        f.write(data.tobytes())
