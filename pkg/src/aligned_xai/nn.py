"""Array-level neural net ops: conv, pooling, activations, and their gradients.

All image tensors are (N, H, W, C). Convolutions are stride-1 with "same"
zero padding and are lowered to one matmul per layer via im2col; the matching
col2im accumulates k*k shifted adds, so forward and backward cost the same
order of work. Everything runs in the dtype of its inputs, which lets the
gradient checks run the whole stack in float64.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError


def im2col(x: np.ndarray, kernel: int) -> np.ndarray:
    """Lower (N, H, W, C) to (N*H*W, kernel*kernel*C) patch rows.

    Patches are read from the zero-padded input so every output pixel has a
    full kernel*kernel neighbourhood (stride 1, same padding; kernel odd).
    """
    if kernel % 2 != 1:
        raise ContractError(f"kernel must be odd, got {kernel}")
    n, h, w, c = x.shape
    pad = kernel // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(xp, (kernel, kernel), axis=(1, 2))
    # (N, H, W, C, k, k) -> (N, H, W, k, k, C) so rows match w.reshape(k*k*C, -1)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * h * w, kernel * kernel * c)


def col2im(dcols: np.ndarray, x_shape: tuple[int, int, int, int], kernel: int) -> np.ndarray:
    """Adjoint of im2col: scatter patch-row gradients back onto the image."""
    n, h, w, c = x_shape
    pad = kernel // 2
    dxp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=dcols.dtype)
    d6 = dcols.reshape(n, h, w, kernel, kernel, c)
    for ky in range(kernel):
        for kx in range(kernel):
            dxp[:, ky : ky + h, kx : kx + w, :] += d6[:, :, :, ky, kx, :]
    return dxp[:, pad : pad + h, pad : pad + w, :]


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Same-padded stride-1 convolution.

    weight is (k, k, C_in, C_out); returns (output, cols) where cols is the
    im2col buffer the backward pass reuses.
    """
    n, h, w, c_in = x.shape
    k, k2, wc_in, c_out = weight.shape
    if k != k2 or wc_in != c_in:
        raise ContractError(f"weight shape {weight.shape} does not match input channels {c_in}")
    cols = im2col(x, k)
    out = cols @ weight.reshape(k * k * c_in, c_out)
    out += bias
    return out.reshape(n, h, w, c_out), cols


def conv2d_backward(
    dout: np.ndarray,
    cols: np.ndarray,
    weight: np.ndarray,
    x_shape: tuple[int, int, int, int],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dx, dweight, dbias) for conv2d."""
    n, h, w, c_in = x_shape
    k = weight.shape[0]
    c_out = weight.shape[3]
    dflat = dout.reshape(n * h * w, c_out)
    dbias = dflat.sum(axis=0)
    dweight = (cols.T @ dflat).reshape(weight.shape)
    dcols = dflat @ weight.reshape(k * k * c_in, c_out).T
    dx = col2im(dcols, x_shape, k)
    return dx, dweight, dbias


def avgpool2(x: np.ndarray) -> np.ndarray:
    """2x2 average pooling with stride 2; spatial dims must be even."""
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ContractError(f"avgpool2 needs even spatial dims, got {h}x{w}")
    return x.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))


def avgpool2_backward(dout: np.ndarray, x_shape: tuple[int, int, int, int]) -> np.ndarray:
    n, h, w, c = x_shape
    spread = np.broadcast_to(
        dout[:, :, None, :, None, :] * 0.25, (n, h // 2, 2, w // 2, 2, c)
    )
    return spread.reshape(n, h, w, c)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """(N, H, W, C) -> (N, C) spatial mean."""
    return x.mean(axis=(1, 2))


def global_avg_pool_backward(dout: np.ndarray, x_shape: tuple[int, int, int, int]) -> np.ndarray:
    n, h, w, c = x_shape
    return np.broadcast_to(dout[:, None, None, :] / (h * w), x_shape).copy()


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dout * (x > 0)


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic: never exponentiates a positive argument."""
    z = np.asarray(z)
    out = np.empty_like(z, dtype=z.dtype)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out
