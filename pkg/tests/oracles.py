"""Independent reference implementations the tests check the package against.

Everything here is deliberately naive (loops, direct formulas, finite
differences) and shares no code with the implementation paths it verifies.
"""

import math

import numpy as np


def naive_conv2d(x, kernel, bias, stride, padding):
    """Quadruple-loop cross-correlation with its own padding arithmetic."""
    n, c, h, w = x.shape
    co, ci, kh, kw = kernel.shape
    assert c == ci
    if padding == "same":
        ho, wo = math.ceil(h / stride), math.ceil(w / stride)
        pad_h = max((ho - 1) * stride + kh - h, 0)
        pad_w = max((wo - 1) * stride + kw - w, 0)
        xp = np.zeros((n, c, h + pad_h, w + pad_w), dtype=np.float64)
        xp[:, :, pad_h // 2 : pad_h // 2 + h, pad_w // 2 : pad_w // 2 + w] = x
    else:
        ho, wo = (h - kh) // stride + 1, (w - kw) // stride + 1
        xp = x.astype(np.float64)
    out = np.zeros((n, co, ho, wo), dtype=np.float64)
    for b in range(n):
        for o in range(co):
            for oy in range(ho):
                for ox in range(wo):
                    acc = 0.0
                    for i in range(ci):
                        for ky in range(kh):
                            for kx in range(kw):
                                acc += (
                                    xp[b, i, oy * stride + ky, ox * stride + kx]
                                    * kernel[o, i, ky, kx]
                                )
                    out[b, o, oy, ox] = acc + bias[o]
    return out


def central_difference(f, arr, h=1e-5):
    """Elementwise central finite differences of a scalar function of arr.

    Mutates arr entries temporarily; arr must be float64 for the stated
    accuracy.
    """
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_relative_error(analytic, numeric, floor=1e-4):
    """Elementwise |a-n| / max(|a|, |n|, floor), maximized over the tensor.

    Central differences with step 1e-5 carry ~1e-10 absolute truncation
    noise regardless of the gradient's size, so the floor treats entries
    below ~1e-8 as zero-equivalent; everything larger is compared at full
    relative precision.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def mi_ratio_sum(counts):
    """Brute-force sum over p(t,y)*log2(p(t,y)/(p(t)p(y))) from probabilities."""
    c = np.asarray(counts, dtype=np.float64)
    n = c.sum()
    p = c / n
    pt = p.sum(axis=1)
    py = p.sum(axis=0)
    total = 0.0
    for t in range(c.shape[0]):
        for y in range(c.shape[1]):
            if p[t, y] > 0:
                total += p[t, y] * math.log2(p[t, y] / (pt[t] * py[y]))
    return total


def mi_entropy_form(counts):
    """H(Y) - H(Y|T) from entropies, a second route to the same quantity."""
    c = np.asarray(counts, dtype=np.float64)
    n = c.sum()

    def entropy(v):
        p = v[v > 0] / v.sum()
        return float(-(p * np.log2(p)).sum())

    h_y = entropy(c.sum(axis=0))
    h_y_given_t = 0.0
    for t in range(c.shape[0]):
        row = c[t]
        if row.sum() > 0:
            h_y_given_t += (row.sum() / n) * entropy(row)
    return h_y - h_y_given_t


def direct_weighted_ce(logits, labels, weights):
    """64-bit direct evaluation of the weighted cross-entropy formula."""
    logits = np.asarray(logits, dtype=np.float64)
    total = 0.0
    for i, y in enumerate(labels):
        p = np.exp(logits[i]) / np.exp(logits[i]).sum()
        total += weights[y] * (-math.log(p[y]))
    return total / len(labels)
