"""Named, independent RNG streams derived from one master seed.

Every source of randomness in the pipeline pulls from its own stream so that
toggling one feature (say, augmentation) never perturbs another (say, the
epoch shuffle). Streams are keyed by a small integer namespace plus optional
integer path components; string keys are folded to integers with CRC32 so the
same sample id always maps to the same stream.
"""

from __future__ import annotations

import zlib

import numpy as np

# Stream namespaces. Values are arbitrary but frozen: changing them changes
# every generated artifact.
STREAM_LABELS = 1
STREAM_IMAGE = 2
STREAM_SPLIT = 3
STREAM_SHUFFLE = 4
STREAM_AUGMENT = 5
STREAM_PEPPR = 6
STREAM_INIT = 7


def key_of(token: int | str) -> int:
    """Fold a path component into a non-negative 32-bit integer."""
    if isinstance(token, str):
        return zlib.crc32(token.encode("utf-8"))
    if token < 0:
        raise ValueError(f"stream path components must be non-negative, got {token}")
    return int(token)


def stream(master_seed: int, namespace: int, *path: int | str) -> np.random.Generator:
    """Return the generator for (seed, namespace, *path).

    Deterministic across runs and platforms; independent for distinct paths.
    """
    entropy = (int(master_seed), int(namespace)) + tuple(key_of(p) for p in path)
    return np.random.default_rng(np.random.SeedSequence(entropy))
