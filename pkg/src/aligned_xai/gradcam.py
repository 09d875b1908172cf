"""Gradient-weighted class activation maps for the conv net.

Channel weights are the spatial mean of d(logit)/d(activation) at the last
conv block's ReLU output; the weighted activation sum is rectified, upsampled
to input resolution with half-pixel bilinear interpolation, and normalised so
the peak is 1. Differentiating the logit rather than the sigmoid keeps the
map invariant to how saturated the predicted probability is.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import model, nn
from .errors import ContractError, EmptyInputError


class Normalization(Enum):
    MAX_ONE = "MaxOne"
    RAW = "Raw"


@dataclass
class ExplanationMap:
    """One sample's importance map for one label, at input resolution."""

    sample_id: str
    label_name: str
    values: np.ndarray  # (H, W) float32, non-negative
    normalization: Normalization


def upsample_bilinear(src: np.ndarray, out_size: tuple[int, int]) -> np.ndarray:
    """Half-pixel ("align corners false") bilinear resize of a 2-D map.

    Source coordinate of output pixel d is (d + 0.5) * (in/out) - 0.5; the
    four neighbours are edge-clamped, so borders replicate.
    """
    if src.ndim != 2:
        raise ContractError(f"expected a 2-D map, got shape {src.shape}")
    h_in, w_in = src.shape
    h_out, w_out = out_size
    if h_out < 1 or w_out < 1:
        raise ContractError(f"bad output size {out_size}")
    ys = (np.arange(h_out, dtype=np.float64) + 0.5) * (h_in / h_out) - 0.5
    xs = (np.arange(w_out, dtype=np.float64) + 0.5) * (w_in / w_out) - 0.5
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    ty = ys - y0
    tx = xs - x0
    y0c = np.clip(y0, 0, h_in - 1)
    y1c = np.clip(y0 + 1, 0, h_in - 1)
    x0c = np.clip(x0, 0, w_in - 1)
    x1c = np.clip(x0 + 1, 0, w_in - 1)
    top = src[y0c, :][:, x0c] * (1.0 - tx) + src[y0c, :][:, x1c] * tx
    bot = src[y1c, :][:, x0c] * (1.0 - tx) + src[y1c, :][:, x1c] * tx
    out = top * (1.0 - ty)[:, None] + bot * ty[:, None]
    return out.astype(src.dtype)


def normalize_map(values: np.ndarray, normalization: Normalization) -> np.ndarray:
    """MaxOne scales the peak to 1; an all-zero map stays all-zero."""
    if normalization is Normalization.RAW:
        return values
    peak = values.max()
    if peak > 0:
        return values / peak
    return values


def gradcam_batch(
    params: model.ModelParams,
    images: np.ndarray,
    label_index: int,
    normalization: Normalization = Normalization.MAX_ONE,
    chunk: int = model.PREDICT_CHUNK,
) -> np.ndarray:
    """Importance maps for a batch: (N, H, W) float32 at input resolution.

    Per sample: alpha_k = spatial mean of d logit / d A_k over the last conv
    map A, then map = ReLU(sum_k alpha_k A_k), upsampled and normalised.
    """
    if images.shape[0] == 0:
        raise EmptyInputError("no images to explain")
    h, w = params.arch.image_size
    out = np.empty((images.shape[0], h, w), dtype=np.float32)
    pos = 0
    for start in range(0, images.shape[0], chunk):
        batch = images[start : start + chunk]
        _, cache = model.forward(params, batch, want_cache=True)
        acts = cache.target_activations  # (n, th, tw, C)
        grads = model.grad_wrt_target_activations(params, cache, label_index)
        alphas = grads.mean(axis=(1, 2))  # (n, C)
        coarse = nn.relu(np.einsum("nhwc,nc->nhw", acts, alphas))
        for i in range(coarse.shape[0]):
            big = upsample_bilinear(coarse[i].astype(np.float32), (h, w))
            out[pos] = normalize_map(big, normalization)
            pos += 1
    return out


def explain_samples(
    params: model.ModelParams,
    images: np.ndarray,
    sample_ids: list[str],
    label_index: int,
    label_name: str,
    normalization: Normalization = Normalization.MAX_ONE,
) -> list[ExplanationMap]:
    """gradcam_batch wrapped into per-sample ExplanationMap records."""
    if images.shape[0] != len(sample_ids):
        raise ContractError(f"{images.shape[0]} images vs {len(sample_ids)} sample ids")
    maps = gradcam_batch(params, images, label_index, normalization)
    return [
        ExplanationMap(sample_id=sid, label_name=label_name, values=maps[i], normalization=normalization)
        for i, sid in enumerate(sample_ids)
    ]
