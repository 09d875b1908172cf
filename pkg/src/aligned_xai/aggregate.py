"""Aggregation of per-sample importance maps into label and overall maps.

For one label l with ground-truth positive samples i = 1..n(l), the label
map is

    E_l = (1 / n(l)) * sum_i p_hat_i * E_i

where p_hat_i is the model's predicted probability for that sample and label.
The divisor is the count n(l), not the probability sum, so poorly predicted
positives genuinely dilute the map. The overall map is the unweighted mean of
the label maps. Sums run in float64 and in a fixed input order, making the
result independent of chunking and exactly reproducible.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from . import floatmap, gradcam, model
from .errors import ContractError, DegenerateInputError, EmptyInputError, ParseError
from .synthdata import DatasetManifest, Split, load_split_images


class Weighting(Enum):
    PROB = "prob"  # weight each positive by its predicted probability
    UNIFORM = "uniform"  # plain mean over positives


@dataclass
class SplitExplanation:
    """All aggregation outputs for one evaluation split."""

    split: Split
    label_names: tuple[str, ...]
    label_maps: list[np.ndarray]  # (H, W) float32 each
    overall_map: np.ndarray  # (H, W) float32
    n_positives: list[int]
    weight_sums: list[float]


def select_positives(labels: np.ndarray, label_index: int) -> np.ndarray:
    """Indices of ground-truth positives for one label, in input order."""
    if labels.ndim != 2:
        raise ContractError(f"labels must be (N, L), got shape {labels.shape}")
    return np.flatnonzero(labels[:, label_index])


def label_global(
    maps: np.ndarray,
    probs: np.ndarray,
    label_name: str = "",
    weighting: Weighting = Weighting.PROB,
) -> np.ndarray:
    """Probability-weighted mean map over one label's positives.

    maps is (n, H, W) for the n positives, probs their predicted
    probabilities. Raises if there are no positives or a probability is
    outside (0, 1].
    """
    if maps.shape[0] == 0:
        raise EmptyInputError(f"label '{label_name}': no ground-truth positives to aggregate")
    if probs.shape != (maps.shape[0],):
        raise ContractError(f"label '{label_name}': {maps.shape[0]} maps vs probs shape {probs.shape}")
    p = probs.astype(np.float64)
    if np.any(p <= 0.0) or np.any(p > 1.0):
        raise DegenerateInputError(f"label '{label_name}': probabilities must lie in (0, 1]")
    weights = p if weighting is Weighting.PROB else np.ones_like(p)
    acc = np.zeros(maps.shape[1:], dtype=np.float64)
    for i in range(maps.shape[0]):
        acc += weights[i] * maps[i].astype(np.float64)
    return (acc / maps.shape[0]).astype(np.float32)


def overall_global(label_maps: list[np.ndarray]) -> np.ndarray:
    """Unweighted mean of the label maps: every label counts equally."""
    if not label_maps:
        raise EmptyInputError("no label maps to combine")
    shape = label_maps[0].shape
    acc = np.zeros(shape, dtype=np.float64)
    for m in label_maps:
        if m.shape != shape:
            raise ContractError(f"label map shapes differ: {m.shape} vs {shape}")
        acc += m.astype(np.float64)
    return (acc / len(label_maps)).astype(np.float32)


def explain_split(
    params: model.ModelParams,
    manifest: DatasetManifest,
    split: Split,
    image_root,
    normalization: gradcam.Normalization = gradcam.Normalization.MAX_ONE,
    weighting: Weighting = Weighting.PROB,
    flip: bool = True,
) -> SplitExplanation:
    """Run the full explanation pass over one split.

    Images are aligned (laterality flip) unless flip=False, probabilities and
    maps are computed in manifest order, and each label aggregates over its
    ground-truth positives only.
    """
    images, labels, _ = load_split_images(manifest, split, image_root, flip=flip)
    probs = model.predict_probs(params, images)
    label_maps: list[np.ndarray] = []
    n_positives: list[int] = []
    weight_sums: list[float] = []
    for li, name in enumerate(manifest.label_names):
        pos = select_positives(labels, li)
        if pos.size == 0:
            raise EmptyInputError(f"label '{name}': split {split.value} has no positives")
        maps = gradcam.gradcam_batch(params, images[pos], li, normalization)
        p = probs[pos, li]
        label_maps.append(label_global(maps, p, label_name=name, weighting=weighting))
        n_positives.append(int(pos.size))
        weight_sums.append(float(p.astype(np.float64).sum()))
    overall = overall_global(label_maps)
    return SplitExplanation(
        split=split,
        label_names=manifest.label_names,
        label_maps=label_maps,
        overall_map=overall,
        n_positives=n_positives,
        weight_sums=weight_sums,
    )


# ---------------------------------------------------------------------------
# Per-sample artifact round-trip (explain stage output, aggregate stage input)
# ---------------------------------------------------------------------------

WEIGHTS_HEADER = ["sample_id", "prob"]


def save_sample_maps(maps: np.ndarray, path: str | Path) -> None:
    """Stack (n, H, W) per-sample maps into one float-map file (H, W, n)."""
    if maps.ndim != 3:
        raise ContractError(f"expected (n, H, W) maps, got shape {maps.shape}")
    floatmap.write_float_map(np.transpose(maps, (1, 2, 0)), path)


def load_sample_maps(path: str | Path) -> np.ndarray:
    """Inverse of save_sample_maps: returns (n, H, W)."""
    arr = floatmap.read_float_map(path)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return np.ascontiguousarray(np.transpose(arr, (2, 0, 1)))


def save_sample_weights(sample_ids: list[str], probs: np.ndarray, path: str | Path) -> None:
    """CSV of (sample_id, predicted probability), in aggregation order."""
    if len(sample_ids) != probs.shape[0]:
        raise ContractError(f"{len(sample_ids)} sample ids vs {probs.shape[0]} probabilities")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(WEIGHTS_HEADER)
        for sid, p in zip(sample_ids, probs):
            writer.writerow([sid, repr(float(p))])


def load_sample_weights(path: str | Path) -> tuple[list[str], np.ndarray]:
    sample_ids: list[str] = []
    probs: list[float] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"line 1: empty weights file {path}")
        if header != WEIGHTS_HEADER:
            raise ParseError(f"line 1: bad weights header {','.join(header)!r}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(f"line {line_no}: expected 2 fields, got {len(row)}")
            sample_ids.append(row[0])
            try:
                probs.append(float(row[1]))
            except ValueError as exc:
                raise ParseError(f"line {line_no}: bad probability: {exc}") from exc
    return sample_ids, np.array(probs, dtype=np.float64)
