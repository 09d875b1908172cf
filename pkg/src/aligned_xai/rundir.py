"""Run directory layout shared by every pipeline stage.

A run directory holds one stage subdirectory per pipeline step plus a single
config.json recording the settings each stage actually used. Re-running a
stage wipes its own subdirectory first, so stale artifacts can never leak
into a fresh run, and each stage finishes by writing files.txt listing what
it produced. Nothing in the tree carries timestamps, which keeps two runs
with identical inputs byte-identical.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass
from pathlib import Path

from .errors import ParseError, PrerequisiteError

STAGE_DATA = "data"
STAGE_TRAIN = "train"
STAGE_EXPLAIN = "explain"
STAGE_AGGREGATE = "aggregate"
STAGE_PEPPR = "peppr"
STAGE_REPORT = "report"

ALL_STAGES = (STAGE_DATA, STAGE_TRAIN, STAGE_EXPLAIN, STAGE_AGGREGATE, STAGE_PEPPR, STAGE_REPORT)


@dataclass(frozen=True)
class RunPaths:
    root: Path

    @property
    def config(self) -> Path:
        return self.root / "config.json"

    # data stage
    @property
    def data_dir(self) -> Path:
        return self.root / STAGE_DATA

    @property
    def manifest(self) -> Path:
        return self.data_dir / "manifest.csv"

    # train stage
    @property
    def train_dir(self) -> Path:
        return self.root / STAGE_TRAIN

    @property
    def checkpoint(self) -> Path:
        return self.train_dir / "checkpoint.axm"

    @property
    def metrics(self) -> Path:
        return self.train_dir / "metrics.txt"

    @property
    def history(self) -> Path:
        return self.train_dir / "history.txt"

    @property
    def train_mean_image(self) -> Path:
        return self.train_dir / "mean_image.axf"

    # explain stage: per-sample maps and weights for each label's positives
    @property
    def explain_dir(self) -> Path:
        return self.root / STAGE_EXPLAIN

    def sample_maps(self, label_name: str) -> Path:
        return self.explain_dir / f"maps_{label_name}.axf"

    def sample_weights(self, label_name: str) -> Path:
        return self.explain_dir / f"weights_{label_name}.csv"

    @property
    def explain_summary(self) -> Path:
        return self.explain_dir / "summary.txt"

    # aggregate stage: label-wise and overall global maps
    @property
    def aggregate_dir(self) -> Path:
        return self.root / STAGE_AGGREGATE

    def label_map(self, label_name: str) -> Path:
        return self.aggregate_dir / f"label_{label_name}.axf"

    @property
    def overall_map(self) -> Path:
        return self.aggregate_dir / "overall.axf"

    @property
    def aggregate_summary(self) -> Path:
        return self.aggregate_dir / "summary.txt"

    # peppr stage
    @property
    def peppr_dir(self) -> Path:
        return self.root / STAGE_PEPPR

    @property
    def curves(self) -> Path:
        return self.peppr_dir / "curves.csv"

    @property
    def peppr_summary(self) -> Path:
        return self.peppr_dir / "summary.txt"

    # report stage
    @property
    def report_dir(self) -> Path:
        return self.root / STAGE_REPORT

    @property
    def report_text(self) -> Path:
        return self.report_dir / "report.txt"


def paths(run_dir: str | Path) -> RunPaths:
    return RunPaths(Path(run_dir))


def prepare_stage(run_dir: str | Path, stage: str) -> Path:
    """Create a clean stage subdirectory, removing any previous contents."""
    if stage not in ALL_STAGES:
        raise PrerequisiteError(f"unknown stage '{stage}'")
    stage_dir = Path(run_dir) / stage
    if stage_dir.exists():
        shutil.rmtree(stage_dir)
    stage_dir.mkdir(parents=True)
    return stage_dir


def write_stage_manifest(stage_dir: Path) -> Path:
    """List every file the stage produced, sorted, into files.txt."""
    listing = sorted(
        p.relative_to(stage_dir).as_posix()
        for p in stage_dir.rglob("*")
        if p.is_file() and p.name != "files.txt"
    )
    out = stage_dir / "files.txt"
    with open(out, "w", encoding="utf-8", newline="") as fh:
        for rel in listing:
            fh.write(rel + "\n")
    return out


def require(path: Path, hint: str) -> Path:
    """Fail with the producing stage named when an input artifact is absent."""
    if not path.exists():
        raise PrerequisiteError(f"missing {path} (run the {hint} stage first)")
    return path


def update_config(run_dir: str | Path, section: str, values: dict) -> None:
    """Merge one stage's settings into config.json (sorted, LF, no times)."""
    path = Path(run_dir) / "config.json"
    config: dict = {}
    if path.exists():
        config = read_config(run_dir)
    config[section] = values
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_config(run_dir: str | Path) -> dict:
    path = Path(run_dir) / "config.json"
    require(path, "generate-data")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: bad JSON: {exc}") from exc


def write_keyvalues(path: Path, pairs: list[tuple[str, object]]) -> None:
    """key=value sidecar, one pair per line, in the given order."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for key, value in pairs:
            if isinstance(value, float):
                fh.write(f"{key}={value!r}\n")
            else:
                fh.write(f"{key}={value}\n")


def read_keyvalues(path: Path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"{path} line {line_no}: expected key=value, got '{line}'")
            key, value = line.split("=", 1)
            out[key] = value
    return out
