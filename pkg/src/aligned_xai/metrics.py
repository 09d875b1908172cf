"""Label-wise ROC AUC with exact tie handling.

Uses the probabilistic (Mann-Whitney) definition: the probability that a
random positive is scored above a random negative, counting exact score ties
as half. Computed from average ranks in O(n log n); ties are resolved by
averaging ranks, which makes the rank form agree exactly with the pairwise
definition.
"""

from __future__ import annotations

import numpy as np

from .errors import MetricError


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values all receive the mean of their rank run."""
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    n = len(values)
    # Boundaries of runs of equal value in the sorted sequence.
    is_run_start = np.empty(n, dtype=bool)
    is_run_start[0] = True
    is_run_start[1:] = sorted_vals[1:] != sorted_vals[:-1]
    starts = np.flatnonzero(is_run_start)
    ends = np.append(starts[1:], n)
    # Average 1-based rank of each run = (start + end + 1) / 2.
    run_rank = (starts + ends + 1) / 2.0
    run_index = np.cumsum(is_run_start) - 1
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = run_rank[run_index]
    return ranks


def roc_auc(scores: np.ndarray, truths: np.ndarray) -> float:
    """AUC = P(score+ > score-) + 0.5 * P(score+ == score-).

    Raises MetricError unless both classes are present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truths = np.asarray(truths, dtype=bool)
    if scores.shape != truths.shape or scores.ndim != 1:
        raise MetricError(
            f"scores and truths must be equal-length vectors, got {scores.shape} vs {truths.shape}"
        )
    n_pos = int(truths.sum())
    n_neg = len(truths) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError(
            f"AUC undefined: need at least one positive and one negative, got {n_pos} pos / {n_neg} neg"
        )
    ranks = _average_ranks(scores)
    pos_rank_sum = float(ranks[truths].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def roc_auc_per_label(
    scores: np.ndarray, truths: np.ndarray, label_names: list[str] | None = None
) -> np.ndarray:
    """Column-wise AUC for (n_samples, n_labels) score/truth matrices.

    A single-class column raises MetricError naming the offending label.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truths = np.asarray(truths, dtype=bool)
    if scores.shape != truths.shape or scores.ndim != 2:
        raise MetricError(
            f"expected matching (n_samples, n_labels) matrices, got {scores.shape} vs {truths.shape}"
        )
    out = np.empty(scores.shape[1], dtype=np.float64)
    for j in range(scores.shape[1]):
        name = label_names[j] if label_names else f"label_{j}"
        try:
            out[j] = roc_auc(scores[:, j], truths[:, j])
        except MetricError as exc:
            raise MetricError(f"label '{name}': {exc}") from None
    return out
