"""Multi-label conv net: definition, training, prediction, checkpoints.

The net is a stack of conv(3x3, same) -> ReLU -> avgpool(2x2) blocks followed
by global average pooling and a single linear head producing one logit per
label; each logit passes through an independent sigmoid. Everything is plain
numpy, so the same code runs in float32 for training and float64 for gradient
verification.

The linear head is initialised to zero. With a zero head every logit starts
at exactly the bias, and the channel weights the explanations later rely on
are entirely the product of training rather than of a random projection.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .errors import ConfigError, ContractError, EmptyInputError, FormatError, TrainingError
from .seeding import STREAM_AUGMENT, STREAM_INIT, STREAM_SHUFFLE, stream

PROB_CLAMP_EPS = 1e-7
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
PREDICT_CHUNK = 64  # fixed so repeated inference over the same data is bit-identical


@dataclass(frozen=True)
class ArchitectureDescriptor:
    """Shape-level description of the net; everything else is derived."""

    image_size: tuple[int, int] = (64, 64)
    in_channels: int = 1
    n_labels: int = 3
    conv_channels: tuple[int, ...] = (8, 16, 32, 32)
    kernel_size: int = 3

    def validate(self) -> None:
        h, w = self.image_size
        b = len(self.conv_channels)
        if b < 1:
            raise ConfigError("need at least one conv block")
        if self.n_labels < 1:
            raise ConfigError("need at least one label")
        if self.kernel_size % 2 != 1 or self.kernel_size < 1:
            raise ConfigError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if h % (1 << b) or w % (1 << b):
            raise ConfigError(f"image size {h}x{w} must be divisible by 2^{b} for {b} pooling stages")
        # The last conv map is the explanation target; keep it big enough
        # to carry spatial structure.
        th, tw = self.target_map_size
        if th < 4 or tw < 4:
            raise ConfigError(f"last conv map is {th}x{tw}; needs to be at least 4x4")

    @property
    def target_map_size(self) -> tuple[int, int]:
        """Spatial size of the last conv block's activation (pre-pool)."""
        shrink = 1 << (len(self.conv_channels) - 1)
        return self.image_size[0] // shrink, self.image_size[1] // shrink

    @property
    def feature_dim(self) -> int:
        return self.conv_channels[-1]

    def to_json_dict(self) -> dict:
        return {
            "image_size": list(self.image_size),
            "in_channels": self.in_channels,
            "n_labels": self.n_labels,
            "conv_channels": list(self.conv_channels),
            "kernel_size": self.kernel_size,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ArchitectureDescriptor":
        try:
            return cls(
                image_size=tuple(d["image_size"]),
                in_channels=int(d["in_channels"]),
                n_labels=int(d["n_labels"]),
                conv_channels=tuple(d["conv_channels"]),
                kernel_size=int(d["kernel_size"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad architecture descriptor: {exc}") from exc


@dataclass
class ModelParams:
    arch: ArchitectureDescriptor
    conv_w: list[np.ndarray]
    conv_b: list[np.ndarray]
    head_w: np.ndarray  # (feature_dim, n_labels)
    head_b: np.ndarray  # (n_labels,)

    def blocks(self):
        """(name, array) pairs in a fixed order shared by the optimiser,
        the L2 penalty, the checkpoint format, and the gradient checks."""
        for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b)):
            yield f"conv{i}.w", w
            yield f"conv{i}.b", b
        yield "head.w", self.head_w
        yield "head.b", self.head_b

    def get(self, name: str) -> np.ndarray:
        for block_name, arr in self.blocks():
            if block_name == name:
                return arr
        raise ContractError(f"no parameter block named '{name}'")

    def set(self, name: str, value: np.ndarray) -> None:
        if name == "head.w":
            self.head_w = value
            return
        if name == "head.b":
            self.head_b = value
            return
        kind = name.split(".")
        if len(kind) == 2 and kind[0].startswith("conv"):
            idx = int(kind[0][4:])
            if kind[1] == "w":
                self.conv_w[idx] = value
                return
            if kind[1] == "b":
                self.conv_b[idx] = value
                return
        raise ContractError(f"no parameter block named '{name}'")

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            arch=self.arch,
            conv_w=[w.astype(dtype) for w in self.conv_w],
            conv_b=[b.astype(dtype) for b in self.conv_b],
            head_w=self.head_w.astype(dtype),
            head_b=self.head_b.astype(dtype),
        )

    def copy(self) -> "ModelParams":
        return self.astype(self.head_w.dtype)


def init_params(arch: ArchitectureDescriptor, seed: int, dtype=np.float32) -> ModelParams:
    """He-normal conv weights, zero conv biases, zero linear head."""
    arch.validate()
    rng = stream(seed, STREAM_INIT)
    conv_w: list[np.ndarray] = []
    conv_b: list[np.ndarray] = []
    c_in = arch.in_channels
    k = arch.kernel_size
    for c_out in arch.conv_channels:
        std = np.sqrt(2.0 / (k * k * c_in))
        conv_w.append(rng.normal(0.0, std, size=(k, k, c_in, c_out)).astype(dtype))
        conv_b.append(np.zeros(c_out, dtype=dtype))
        c_in = c_out
    head_w = np.zeros((arch.feature_dim, arch.n_labels), dtype=dtype)
    head_b = np.zeros(arch.n_labels, dtype=dtype)
    return ModelParams(arch, conv_w, conv_b, head_w, head_b)


@dataclass
class ForwardCache:
    """Per-layer activations needed by the backward pass.

    Valid only for the exact params object that produced it; backward()
    checks the identity to catch stale caches.
    """

    params_id: int
    x_centered: np.ndarray
    cols: list[np.ndarray]
    pre_relu: list[np.ndarray]
    post_relu: list[np.ndarray]
    pooled: list[np.ndarray]
    gap_out: np.ndarray
    logits: np.ndarray

    @property
    def target_activations(self) -> np.ndarray:
        """Last conv block's ReLU output before its pooling stage."""
        return self.post_relu[-1]


def forward(params: ModelParams, x: np.ndarray, want_cache: bool = False):
    """Run the net on (N, H, W, C) inputs in [0, 1]; returns logits (N, L).

    Inputs are shifted by -0.5 so the background sits near zero mean.
    With want_cache=True returns (logits, ForwardCache).
    """
    if x.ndim != 4:
        raise ContractError(f"expected (N, H, W, C) input, got shape {x.shape}")
    if x.shape[0] == 0:
        raise EmptyInputError("empty batch")
    arch = params.arch
    if x.shape[1:] != (*arch.image_size, arch.in_channels):
        raise ContractError(
            f"input shape {x.shape[1:]} does not match architecture "
            f"{(*arch.image_size, arch.in_channels)}"
        )
    dtype = params.head_w.dtype
    h = x.astype(dtype) - dtype.type(0.5)
    x_centered = h
    cols_list: list[np.ndarray] = []
    pre_list: list[np.ndarray] = []
    post_list: list[np.ndarray] = []
    pooled_list: list[np.ndarray] = []
    for w, b in zip(params.conv_w, params.conv_b):
        z, cols = nn.conv2d(h, w, b)
        a = nn.relu(z)
        h = nn.avgpool2(a)
        if want_cache:
            cols_list.append(cols)
            pre_list.append(z)
            post_list.append(a)
            pooled_list.append(h)
    gap_out = nn.global_avg_pool(h)
    logits = gap_out @ params.head_w + params.head_b
    if not want_cache:
        return logits
    cache = ForwardCache(
        params_id=id(params),
        x_centered=x_centered,
        cols=cols_list,
        pre_relu=pre_list,
        post_relu=post_list,
        pooled=pooled_list,
        gap_out=gap_out,
        logits=logits,
    )
    return logits, cache


def bce_loss(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy over every (sample, label) cell.

    Probabilities are clamped to [eps, 1-eps] before the log; the returned
    gradient is the exact gradient of the clamped loss, i.e. zero wherever
    the clamp is active.
    """
    if logits.shape != targets.shape:
        raise ContractError(f"logits {logits.shape} vs targets {targets.shape}")
    t = targets.astype(logits.dtype)
    p = nn.sigmoid(logits)
    clipped_lo = p < PROB_CLAMP_EPS
    clipped_hi = p > 1.0 - PROB_CLAMP_EPS
    pc = np.clip(p, PROB_CLAMP_EPS, 1.0 - PROB_CLAMP_EPS)
    loss = float(-(t * np.log(pc) + (1.0 - t) * np.log1p(-pc)).mean())
    dlogits = (p - t) / logits.size
    dlogits = np.where(clipped_lo | clipped_hi, 0.0, dlogits).astype(logits.dtype)
    return loss, dlogits


def l2_penalty(params: ModelParams, l2: float) -> float:
    """lambda * sum of squared weights; biases are exempt."""
    total = 0.0
    for name, arr in params.blocks():
        if name.endswith(".w"):
            total += float(np.sum(arr.astype(np.float64) ** 2))
    return l2 * total


def backward(params: ModelParams, cache: ForwardCache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar through the logits, keyed by block name."""
    if cache.params_id != id(params):
        raise ContractError("forward cache does not belong to these params")
    grads: dict[str, np.ndarray] = {}
    grads["head.w"] = cache.gap_out.T @ dlogits
    grads["head.b"] = dlogits.sum(axis=0)
    dgap = dlogits @ params.head_w.T
    dh = nn.global_avg_pool_backward(dgap, cache.pooled[-1].shape)
    for i in reversed(range(len(params.conv_w))):
        da = nn.avgpool2_backward(dh, cache.post_relu[i].shape)
        dz = nn.relu_backward(da, cache.pre_relu[i])
        x_shape = cache.x_centered.shape if i == 0 else cache.pooled[i - 1].shape
        dh, dw, db = nn.conv2d_backward(dz, cache.cols[i], params.conv_w[i], x_shape)
        grads[f"conv{i}.w"] = dw
        grads[f"conv{i}.b"] = db
    return grads


def loss_and_grads(
    params: ModelParams, x: np.ndarray, targets: np.ndarray, l2: float
) -> tuple[float, dict[str, np.ndarray]]:
    """Full training objective (clamped BCE + L2) and its exact gradients."""
    logits, cache = forward(params, x, want_cache=True)
    loss, dlogits = bce_loss(logits, targets)
    grads = backward(params, cache, dlogits)
    if l2 > 0:
        for name, arr in params.blocks():
            if name.endswith(".w"):
                grads[name] = grads[name] + (2.0 * l2) * arr
        loss += l2_penalty(params, l2)
    return loss, grads


def grad_wrt_target_activations(params: ModelParams, cache: ForwardCache, label_index: int) -> np.ndarray:
    """d logit[label] / d (last conv ReLU map), per sample.

    This differentiates the raw logit, not the sigmoid output, so the result
    is independent of how saturated the probability is.
    """
    if not (0 <= label_index < params.arch.n_labels):
        raise ContractError(f"label index {label_index} out of range")
    if cache.params_id != id(params):
        raise ContractError("forward cache does not belong to these params")
    n = cache.gap_out.shape[0]
    dgap = np.broadcast_to(params.head_w[:, label_index], (n, params.arch.feature_dim)).astype(
        params.head_w.dtype
    )
    dh = nn.global_avg_pool_backward(dgap, cache.pooled[-1].shape)
    return nn.avgpool2_backward(dh, cache.post_relu[-1].shape)


# ---------------------------------------------------------------------------
# Optimisation
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: ModelParams) -> "AdamState":
        return cls(
            m={name: np.zeros_like(arr) for name, arr in params.blocks()},
            v={name: np.zeros_like(arr) for name, arr in params.blocks()},
        )


def adam_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> None:
    """One Adam update in place, with bias-corrected moments."""
    state.t += 1
    t = state.t
    for name, arr in params.blocks():
        g = grads[name]
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        m_hat = state.m[name] / (1.0 - beta1**t)
        v_hat = state.v[name] / (1.0 - beta2**t)
        arr -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(arr.dtype)


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------


def random_erasing(
    image: np.ndarray,
    rng: np.random.Generator,
    prob: float = 0.3,
    area_range: tuple[float, float] = (0.05, 0.40),
    aspect_range: tuple[float, float] = (0.3, 3.3),
    max_tries: int = 10,
) -> np.ndarray:
    """Erase one random rectangle, refilling it with uniform noise.

    The realised rectangle (after rounding to whole pixels) must fit and must
    still cover a fraction of the image inside area_range; otherwise the draw
    is retried, up to max_tries, after which the image passes through
    unchanged.
    """
    if rng.random() >= prob:
        return image
    h, w, c = image.shape
    for _ in range(max_tries):
        area = rng.uniform(*area_range) * h * w
        aspect = rng.uniform(*aspect_range)
        eh = int(round(np.sqrt(area * aspect)))
        ew = int(round(np.sqrt(area / aspect)))
        if eh < 1 or ew < 1 or eh > h or ew > w:
            continue
        realized = (eh * ew) / (h * w)
        if not (area_range[0] <= realized <= area_range[1]):
            continue
        top = int(rng.integers(0, h - eh + 1))
        left = int(rng.integers(0, w - ew + 1))
        out = image.copy()
        out[top : top + eh, left : left + ew, :] = rng.random((eh, ew, c)).astype(image.dtype)
        return out
    return image


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    learning_rate: float = 5e-5
    adam_beta1: float = ADAM_BETA1
    adam_beta2: float = ADAM_BETA2
    l2_lambda: float = 5e-5
    batch_size: int = 32
    epochs: int = 5
    erasing_prob: float = 0.3
    erasing_area: tuple[float, float] = (0.05, 0.40)
    erasing_aspect: tuple[float, float] = (0.3, 3.3)
    seed: int = 7

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not (0.0 < self.adam_beta1 < 1.0 and 0.0 < self.adam_beta2 < 1.0):
            raise ConfigError("adam betas must lie in (0,1)")
        if self.l2_lambda < 0:
            raise ConfigError("l2_lambda must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not (0.0 <= self.erasing_prob <= 1.0):
            raise ConfigError("erasing_prob must be in [0,1]")
        if not (0.0 < self.erasing_area[0] <= self.erasing_area[1] <= 1.0):
            raise ConfigError(f"bad erasing_area {self.erasing_area}")
        if not (0.0 < self.erasing_aspect[0] <= self.erasing_aspect[1]):
            raise ConfigError(f"bad erasing_aspect {self.erasing_aspect}")


def train(
    arch: ArchitectureDescriptor,
    images: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig | None = None,
    val_images: np.ndarray | None = None,
    val_labels: np.ndarray | None = None,
    label_names: tuple[str, ...] | None = None,
    dtype=np.float32,
    log_fn=None,
) -> tuple[ModelParams, list[dict]]:
    """Train from scratch; deterministic in (arch, data, config, dtype).

    Shuffling and augmentation draw from separate named streams keyed by
    (seed, epoch), so disabling augmentation never perturbs the shuffle.
    History records mean batch loss per epoch, plus per-label validation
    AUC when a validation set is supplied.
    """
    from .metrics import roc_auc_per_label

    config = config or TrainConfig()
    config.validate()
    if images.shape[0] != labels.shape[0]:
        raise ContractError(f"{images.shape[0]} images vs {labels.shape[0]} label rows")
    if images.shape[0] == 0:
        raise EmptyInputError("no training samples")
    n = images.shape[0]
    seed = config.seed
    params = init_params(arch, seed, dtype=dtype)
    targets = labels.astype(dtype)
    # Start the head bias at the empirical prior log-odds. Logits then match
    # the base rates from step one, so head-weight gradients carry the
    # feature-label covariance instead of a uniform prior shift; with
    # non-negative GAP features that shift would drag every channel weight
    # the same way and leave nothing for the channel-weighted explanations.
    prior = np.clip(targets.mean(axis=0), 1e-3, 1.0 - 1e-3)
    params.head_b = (np.log(prior) - np.log1p(-prior)).astype(dtype)
    state = AdamState.for_params(params)
    history: list[dict] = []
    for epoch in range(config.epochs):
        shuffle_rng = stream(seed, STREAM_SHUFFLE, epoch)
        augment_rng = stream(seed, STREAM_AUGMENT, epoch)
        order = shuffle_rng.permutation(n)
        batch_losses: list[float] = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = np.stack(
                [
                    random_erasing(
                        images[i],
                        augment_rng,
                        prob=config.erasing_prob,
                        area_range=config.erasing_area,
                        aspect_range=config.erasing_aspect,
                    )
                    for i in idx
                ]
            )
            loss, grads = loss_and_grads(params, batch, targets[idx], config.l2_lambda)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch start {start}")
            adam_step(params, grads, state, config.learning_rate, config.adam_beta1, config.adam_beta2)
            batch_losses.append(loss)
        entry: dict = {"epoch": epoch, "mean_loss": float(np.mean(batch_losses))}
        if val_images is not None and val_labels is not None:
            val_probs = predict_probs(params, val_images)
            names = label_names or tuple(f"label_{i}" for i in range(arch.n_labels))
            aucs = roc_auc_per_label(val_probs, val_labels, names)
            for name, auc in zip(names, aucs):
                entry[f"val_auc_{name}"] = float(auc)
        history.append(entry)
        if log_fn is not None:
            parts = [f"epoch {epoch}: mean loss {entry['mean_loss']:.6f}"]
            parts += [f"{k}={v:.4f}" for k, v in entry.items() if k.startswith("val_auc_")]
            log_fn(" ".join(parts))
    return params, history


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------


def predict_logits(params: ModelParams, images: np.ndarray, chunk: int = PREDICT_CHUNK) -> np.ndarray:
    """Forward in fixed-size chunks; identical chunking keeps reruns bit-equal."""
    if images.shape[0] == 0:
        raise EmptyInputError("no samples to predict")
    outs = [forward(params, images[i : i + chunk]) for i in range(0, images.shape[0], chunk)]
    return np.concatenate(outs, axis=0)


def predict_probs(params: ModelParams, images: np.ndarray, chunk: int = PREDICT_CHUNK) -> np.ndarray:
    return nn.sigmoid(predict_logits(params, images, chunk=chunk))


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"AXM1"


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    """Binary checkpoint: magic, JSON descriptor, then f32 blocks in order."""
    names = [name for name, _ in params.blocks()]
    descriptor = {
        "architecture": params.arch.to_json_dict(),
        "blocks": names,
    }
    desc_bytes = json.dumps(descriptor, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(desc_bytes)))
        fh.write(desc_bytes)
        for _, arr in params.blocks():
            a32 = np.ascontiguousarray(arr, dtype="<f4")
            fh.write(struct.pack("<I", a32.ndim))
            fh.write(struct.pack(f"<{a32.ndim}I", *a32.shape))
            fh.write(a32.tobytes())


def load_checkpoint(path: str | Path) -> ModelParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {blob[:4]!r}")
    if len(blob) < 8:
        raise FormatError(f"{path}: truncated checkpoint header")
    (desc_len,) = struct.unpack_from("<I", blob, 4)
    desc_end = 8 + desc_len
    if len(blob) < desc_end:
        raise FormatError(f"{path}: descriptor runs past end of file")
    try:
        descriptor = json.loads(blob[8:desc_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad descriptor JSON: {exc}") from exc
    arch = ArchitectureDescriptor.from_json_dict(descriptor.get("architecture", {}))
    arch.validate()
    names = descriptor.get("blocks")
    if not isinstance(names, list):
        raise FormatError(f"{path}: descriptor lacks a block list")
    offset = desc_end
    arrays: dict[str, np.ndarray] = {}
    for name in names:
        if offset + 4 > len(blob):
            raise FormatError(f"{path}: truncated at block '{name}' (offset {offset})")
        (ndim,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        if ndim > 8:
            raise FormatError(f"{path}: implausible ndim {ndim} for block '{name}'")
        if offset + 4 * ndim > len(blob):
            raise FormatError(f"{path}: truncated dims for block '{name}'")
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        nbytes = 4 * count
        if offset + nbytes > len(blob):
            raise FormatError(f"{path}: truncated payload for block '{name}'")
        arrays[name] = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes after last block")
    params = init_params(arch, seed=0)
    expected = [name for name, _ in params.blocks()]
    if names != expected:
        raise FormatError(f"{path}: block list {names} does not match architecture {expected}")
    for name in names:
        want = params.get(name).shape
        if arrays[name].shape != want:
            raise FormatError(f"{path}: block '{name}' has shape {arrays[name].shape}, expected {want}")
        params.set(name, arrays[name])
    return params
