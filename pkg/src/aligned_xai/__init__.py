"""Global explanations for aligned image modalities, validated by erasure.

Per-sample GradCAM maps are aggregated into label-wise and overall global
importance maps, then stress-tested by progressively erasing and restoring
pixels in importance order while re-scoring a frozen classifier. Ships with
a synthetic aligned dataset generator and a from-scratch numpy conv net so
the whole pipeline runs end to end on a CPU.

Submodules import lazily so the command line can pin thread environment
variables before numpy first loads.
"""

from __future__ import annotations

import importlib

__version__ = "0.1.0"

_SUBMODULES = frozenset(
    {
        "aggregate",
        "cli",
        "errors",
        "floatmap",
        "gradcam",
        "metrics",
        "model",
        "nn",
        "peppr",
        "report",
        "rundir",
        "seeding",
        "synthdata",
    }
)


def __getattr__(name: str):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(set(globals()) | _SUBMODULES)
