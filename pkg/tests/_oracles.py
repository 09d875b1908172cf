"""Independent reference computations the tests compare the library against.

Everything here is written the slow, obvious way (explicit loops, the
definition rather than the algorithm) so that agreement with the library is
evidence and not tautology. Keep these free of any import from the package's
internals beyond plain numpy.
"""

from __future__ import annotations

import numpy as np


def pairwise_auc(scores: np.ndarray, truths: np.ndarray) -> float:
    """AUC straight from the definition: compare every (positive, negative)
    pair, counting ties as half a win."""
    scores = np.asarray(scores, dtype=np.float64)
    truths = np.asarray(truths, dtype=bool)
    pos = scores[truths]
    neg = scores[~truths]
    wins = 0.0
    for p in pos:
        wins += float(np.sum(p > neg)) + 0.5 * float(np.sum(p == neg))
    return wins / (len(pos) * len(neg))


def central_difference(f, params, block_name: str, flat_index: int, step: float) -> float:
    """Central finite difference of scalar f at one entry of one block.

    Perturbs a copy, never the caller's params object.
    """
    plus = params.copy()
    arr = plus.get(block_name).copy()
    flat = arr.reshape(-1)
    flat[flat_index] += step
    plus.set(block_name, arr)
    minus = params.copy()
    arr = minus.get(block_name).copy()
    flat = arr.reshape(-1)
    flat[flat_index] -= step
    minus.set(block_name, arr)
    return (f(plus) - f(minus)) / (2.0 * step)


def bilinear_direct(src: np.ndarray, out_size: tuple[int, int]) -> np.ndarray:
    """Half-pixel bilinear resize, one output pixel at a time."""
    h_in, w_in = src.shape
    h_out, w_out = out_size
    out = np.empty((h_out, w_out), dtype=np.float64)
    for r in range(h_out):
        sy = (r + 0.5) * (h_in / h_out) - 0.5
        y0 = int(np.floor(sy))
        ty = sy - y0
        y0c = min(max(y0, 0), h_in - 1)
        y1c = min(max(y0 + 1, 0), h_in - 1)
        for c in range(w_out):
            sx = (c + 0.5) * (w_in / w_out) - 0.5
            x0 = int(np.floor(sx))
            tx = sx - x0
            x0c = min(max(x0, 0), w_in - 1)
            x1c = min(max(x0 + 1, 0), w_in - 1)
            top = src[y0c, x0c] * (1 - tx) + src[y0c, x1c] * tx
            bot = src[y1c, x0c] * (1 - tx) + src[y1c, x1c] * tx
            out[r, c] = top * (1 - ty) + bot * ty
    return out


def weighted_mean_map(maps: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """sum_i weights[i] * maps[i] / n, accumulated in float64 one by one."""
    acc = np.zeros(maps.shape[1:], dtype=np.float64)
    for i in range(maps.shape[0]):
        acc = acc + np.float64(weights[i]) * maps[i].astype(np.float64)
    return acc / maps.shape[0]


def mean_of_maps(maps: list[np.ndarray]) -> np.ndarray:
    acc = np.zeros(maps[0].shape, dtype=np.float64)
    for m in maps:
        acc = acc + m.astype(np.float64)
    return acc / len(maps)


def reference_adam(params_flat, grads_seq, lr, beta1, beta2, eps):
    """Textbook Adam on a flat vector; grads_seq is a list of gradients."""
    x = params_flat.astype(np.float64).copy()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    for t, g in enumerate(grads_seq, start=1):
        g = g.astype(np.float64)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        x = x - lr * m_hat / (np.sqrt(v_hat) + eps)
    return x
