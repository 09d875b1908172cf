"""Progressive erasure and restoration probing of an importance map.

The overall importance map induces a pixel ranking (stable: ties break by
ascending row-major index). Sweeping a quantile v from 0 to 1:

  erasure     removes the v*H*W least-important pixels, retaining the most
              important;
  restoration retains the exact complement, so only the least-important
              pixels are present and the most-important return last.

Removed pixels are refilled with uniform noise or the pixel-wise training-set
mean image, the frozen model is re-scored, and per-label AUC plus retained
importance mass are recorded at every step. No retraining happens anywhere;
v = 0 erasure is literally the unmodified evaluation pass.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from . import model
from .errors import ConfigError, ContractError, DegenerateInputError, NumericError, ParseError
from .metrics import roc_auc_per_label
from .seeding import STREAM_PEPPR, stream


class Direction(Enum):
    ERASURE = "erasure"
    RESTORATION = "restoration"


class Fill(Enum):
    RANDOM_NOISE = "noise"
    TRAIN_MEAN = "train-mean"


def quantile_grid(step: float = 0.05) -> np.ndarray:
    """Evenly spaced quantiles 0, step, ..., 1; step must divide 1 evenly."""
    if not (0.0 < step <= 0.5):
        raise ConfigError(f"quantile step must be in (0, 0.5], got {step}")
    n = int(round(1.0 / step))
    if abs(n * step - 1.0) > 1e-9:
        raise ConfigError(f"quantile step {step} does not divide 1 evenly")
    return np.arange(n + 1, dtype=np.float64) / n


def erase_count(v: float, n_pixels: int) -> int:
    """Pixels removed at quantile v: round-half-up of v * n_pixels."""
    return int(np.floor(v * n_pixels + 0.5))


@dataclass
class QuantileMaskSeries:
    """Nested retained-pixel masks per quantile, erasure-direction convention.

    masks[i] is True where a pixel SURVIVES erasure at quantiles[i]; the
    restoration direction retains the complement. Retained sets shrink as the
    quantile grows, and pixel ranking ties break by ascending row-major
    index, so per-step counts are exact.
    """

    quantiles: np.ndarray  # (S,)
    masks: np.ndarray  # (S, H, W) bool, True = retained under erasure
    order: np.ndarray  # (H*W,) ascending-importance pixel ranking

    def retained_mask(self, step_index: int, direction: Direction) -> np.ndarray:
        if direction is Direction.ERASURE:
            return self.masks[step_index]
        return ~self.masks[step_index]


def quantile_masks(importance: np.ndarray, step: float = 0.05) -> QuantileMaskSeries:
    """Rank pixels by importance and build the nested retained-mask series.

    At quantile v the floor(v*H*W + 0.5) least-important pixels are erased;
    v = 0 retains everything, v = 1 nothing.
    """
    if importance.ndim != 2:
        raise ContractError(f"importance map must be 2-D, got shape {importance.shape}")
    if not np.all(np.isfinite(importance)):
        raise NumericError("importance map contains non-finite values")
    quantiles = quantile_grid(step)
    h, w = importance.shape
    flat = importance.reshape(-1)
    order = np.argsort(flat, kind="stable")
    n = h * w
    masks = np.zeros((len(quantiles), h, w), dtype=bool)
    for i, v in enumerate(quantiles):
        k = erase_count(float(v), n)
        retained_flat = np.ones(n, dtype=bool)
        retained_flat[order[:k]] = False
        masks[i] = retained_flat.reshape(h, w)
    return QuantileMaskSeries(quantiles=quantiles, masks=masks, order=order)


def retained_importance(importance: np.ndarray, retained: np.ndarray) -> float:
    """Importance mass inside the retained set, as a fraction of the total."""
    if retained.shape != importance.shape:
        raise ContractError(f"mask shape {retained.shape} vs map shape {importance.shape}")
    imp = importance.astype(np.float64)
    total = float(imp.sum())
    if total <= 0.0:
        raise DegenerateInputError("importance map has no positive mass")
    return float(imp[retained].sum()) / total


def apply_mask(
    image: np.ndarray,
    retained: np.ndarray,
    fill: Fill,
    train_mean: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Copy retained pixels; refill the rest across all channels.

    TrainMean writes the pixel-wise training mean image into the erased
    positions; RandomNoise draws a fresh uniform-[0,1) frame from rng and
    keeps its erased part, so a pixel erased under a mask and under the
    mask's complement would receive the same value from the same rng.
    """
    if image.ndim != 3:
        raise ContractError(f"expected an (H, W, C) image, got shape {image.shape}")
    if retained.shape != image.shape[:2]:
        raise ContractError(f"mask shape {retained.shape} vs image plane {image.shape[:2]}")
    if retained.all():
        return image
    removed = ~retained
    out = image.copy()
    if fill is Fill.TRAIN_MEAN:
        if train_mean is None:
            raise ConfigError("train-mean fill requires the training-set mean image")
        if train_mean.shape != image.shape:
            raise ContractError(f"train mean shape {train_mean.shape} vs image {image.shape}")
        out[removed] = train_mean.astype(image.dtype)[removed]
        return out
    if rng is None:
        raise ConfigError("noise fill requires an rng")
    field = rng.random(image.shape, dtype=np.float64).astype(image.dtype)
    out[removed] = field[removed]
    return out


@dataclass
class PepprCurves:
    """One direction's sweep: per-label AUC and retained mass per quantile."""

    direction: Direction
    quantiles: np.ndarray  # (S,)
    label_names: tuple[str, ...]
    auc: np.ndarray  # (S, L)
    retained: np.ndarray  # (S,)
    baseline_auc: np.ndarray  # (L,)

    def label_series(self, label_name: str) -> np.ndarray:
        if label_name not in self.label_names:
            raise ContractError(f"no label named '{label_name}'")
        return self.auc[:, self.label_names.index(label_name)]


def _masked_pass(
    params: model.ModelParams,
    images: np.ndarray,
    retained: np.ndarray,
    fill: Fill,
    sample_ids: list[str],
    seed: int,
    train_mean: np.ndarray | None,
) -> np.ndarray:
    """Mask every image with the shared retained set and re-score.

    The noise stream is keyed by sample id alone, not by quantile step: each
    sample keeps one fixed noise field for the whole sweep, so adjacent steps
    differ only in the pixels that switch between image and fill. Redrawing
    per step would add redraw variance to every step-to-step AUC difference
    and mask the signal the sweep is meant to expose.
    """
    if retained.all():
        return model.predict_probs(params, images)
    modified = np.empty_like(images)
    for i, sid in enumerate(sample_ids):
        rng = stream(seed, STREAM_PEPPR, sid)
        modified[i] = apply_mask(images[i], retained, fill, train_mean=train_mean, rng=rng)
    return model.predict_probs(params, modified)


def run_peppr(
    params: model.ModelParams,
    images: np.ndarray,
    labels: np.ndarray,
    sample_ids: list[str],
    label_names: tuple[str, ...],
    importance: np.ndarray,
    seed: int,
    step: float = 0.05,
    fill: Fill = Fill.RANDOM_NOISE,
    train_mean: np.ndarray | None = None,
) -> tuple[PepprCurves, PepprCurves]:
    """Both sweep directions over a frozen model; returns (erasure, restoration).

    The importance map (normally the overall global explanation of a held-out
    split) is shared across samples. Noise streams are keyed by (seed, sample
    id), so scheduling order cannot change results and every step of both
    directions reuses the same noise frame per sample.
    """
    if images.shape[0] != labels.shape[0]:
        raise ContractError(f"{images.shape[0]} images vs {labels.shape[0]} label rows")
    if images.shape[0] != len(sample_ids):
        raise ContractError(f"{images.shape[0]} images vs {len(sample_ids)} sample ids")
    if labels.shape[1] != len(label_names):
        raise ContractError(f"{labels.shape[1]} label columns vs {len(label_names)} names")
    series = quantile_masks(importance, step)
    baseline = roc_auc_per_label(model.predict_probs(params, images), labels, label_names)
    results: list[PepprCurves] = []
    for direction in (Direction.ERASURE, Direction.RESTORATION):
        aucs = np.empty((len(series.quantiles), len(label_names)), dtype=np.float64)
        kept = np.empty(len(series.quantiles), dtype=np.float64)
        for si in range(len(series.quantiles)):
            retained = series.retained_mask(si, direction)
            probs = _masked_pass(params, images, retained, fill, sample_ids, seed, train_mean)
            aucs[si] = roc_auc_per_label(probs, labels, label_names)
            kept[si] = retained_importance(importance, retained)
        results.append(
            PepprCurves(
                direction=direction,
                quantiles=series.quantiles.copy(),
                label_names=label_names,
                auc=aucs,
                retained=kept,
                baseline_auc=np.asarray(baseline, dtype=np.float64),
            )
        )
    return results[0], results[1]


# ---------------------------------------------------------------------------
# Curve CSV round-trip
# ---------------------------------------------------------------------------

CURVES_HEADER = ["direction", "quantile", "label", "auc", "retained_importance", "baseline_auc"]


def save_curves(erasure: PepprCurves, restoration: PepprCurves, path: str | Path) -> None:
    """One CSV row per (direction, quantile, label); floats via repr."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CURVES_HEADER)
        for curves in (erasure, restoration):
            for si, v in enumerate(curves.quantiles):
                for li, label in enumerate(curves.label_names):
                    writer.writerow(
                        [
                            curves.direction.value,
                            repr(float(v)),
                            label,
                            repr(float(curves.auc[si, li])),
                            repr(float(curves.retained[si])),
                            repr(float(curves.baseline_auc[li])),
                        ]
                    )


def load_curves(path: str | Path) -> tuple[PepprCurves, PepprCurves]:
    """Inverse of save_curves; tolerant of row order within a direction."""
    rows: dict[Direction, list[tuple[float, str, float, float, float]]] = {
        Direction.ERASURE: [],
        Direction.RESTORATION: [],
    }
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"line 1: empty curves file {path}")
        if header != CURVES_HEADER:
            raise ParseError(f"line 1: bad curves header {','.join(header)!r}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CURVES_HEADER):
                raise ParseError(f"line {line_no}: expected {len(CURVES_HEADER)} fields, got {len(row)}")
            dir_tok, q_tok, label, auc_tok, ret_tok, base_tok = row
            direction = next((m for m in Direction if m.value == dir_tok), None)
            if direction is None:
                raise ParseError(f"line {line_no}: unknown direction '{dir_tok}'")
            try:
                rows[direction].append(
                    (float(q_tok), label, float(auc_tok), float(ret_tok), float(base_tok))
                )
            except ValueError as exc:
                raise ParseError(f"line {line_no}: bad number: {exc}") from exc
    out: list[PepprCurves] = []
    for direction in (Direction.ERASURE, Direction.RESTORATION):
        entries = rows[direction]
        if not entries:
            raise ParseError(f"curves file {path} has no {direction.value} rows")
        label_names = tuple(dict.fromkeys(label for _, label, _, _, _ in entries))
        quantiles = np.array(sorted({q for q, _, _, _, _ in entries}), dtype=np.float64)
        q_index = {q: i for i, q in enumerate(quantiles)}
        l_index = {name: i for i, name in enumerate(label_names)}
        auc = np.full((len(quantiles), len(label_names)), np.nan)
        retained = np.full(len(quantiles), np.nan)
        baseline = np.full(len(label_names), np.nan)
        for q, label, a, r, b in entries:
            auc[q_index[q], l_index[label]] = a
            retained[q_index[q]] = r
            baseline[l_index[label]] = b
        if np.isnan(auc).any():
            raise ParseError(f"curves file {path}: missing (quantile, label) cells for {direction.value}")
        out.append(
            PepprCurves(
                direction=direction,
                quantiles=quantiles,
                label_names=label_names,
                auc=auc,
                retained=retained,
                baseline_auc=baseline,
            )
        )
    return out[0], out[1]
