"""Human-readable run summary and visual exports.

Renders the aggregated maps as 8-bit images, bins the overall map into
importance deciles using the same ranking and rounding the probing masks
use (so band unions reproduce the retained sets exactly), and writes a
plain-text report with a fixed field order so identical runs produce
identical bytes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import floatmap, peppr, rundir, synthdata
from .errors import ContractError


def render_decile_bands(
    importance: np.ndarray,
    background: np.ndarray | None = None,
    n_bands: int = 10,
) -> np.ndarray:
    """Bin pixels into importance bands; top decile brightest; uint8 (H, W).

    Band boundaries are the erase counts of the probing sweep at quantiles
    k/n_bands, so the union of the top d bands equals the retained set at
    erased fraction 1 - d/n_bands. With a background image the bands are
    blended 50/50 with its luminance.
    """
    if importance.ndim != 2:
        raise ContractError(f"importance map must be 2-D, got shape {importance.shape}")
    if n_bands < 2:
        raise ContractError(f"need at least 2 bands, got {n_bands}")
    n = importance.size
    order = np.argsort(importance.reshape(-1), kind="stable")
    ranks = np.empty(n, dtype=np.int64)
    ranks[order] = np.arange(n)
    boundaries = np.array([peppr.erase_count(k / n_bands, n) for k in range(1, n_bands)])
    bands = np.searchsorted(boundaries, ranks, side="right").reshape(importance.shape)
    levels = bands * (255.0 / (n_bands - 1))
    if background is not None:
        bg = np.asarray(background, dtype=np.float64)
        if bg.ndim == 3:
            bg = bg.mean(axis=2)
        if bg.shape != importance.shape:
            raise ContractError(f"background shape {bg.shape} vs map shape {importance.shape}")
        levels = 0.5 * levels + 0.5 * (bg * 255.0)
    return np.clip(np.rint(levels), 0, 255).astype(np.uint8)


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def _curve_table(erasure: peppr.PepprCurves, restoration: peppr.PepprCurves) -> list[str]:
    """One line per (direction, quantile, label), full sweep."""
    lines = ["  direction quantile label auc retained_importance baseline_auc"]
    for curves in (erasure, restoration):
        for si, v in enumerate(curves.quantiles):
            for li, label in enumerate(curves.label_names):
                lines.append(
                    f"  {curves.direction.value} {v:.2f} {label} "
                    f"{_fmt(curves.auc[si, li])} {_fmt(curves.retained[si])} "
                    f"{_fmt(curves.baseline_auc[li])}"
                )
    return lines


def summarize_run(run_dir: str | Path, flip: bool = True) -> Path:
    """Build the report stage from the artifacts of the earlier stages.

    Exports: the aligned validation mean image (the alignment diagnostic),
    overall and per-label importance maps as PGM, decile bands over the mean
    image, and report.txt. Fails naming the first missing prerequisite.
    """
    rp = rundir.paths(run_dir)
    rundir.require(rp.config, "generate-data")
    rundir.require(rp.manifest, "generate-data")
    rundir.require(rp.metrics, "train")
    rundir.require(rp.overall_map, "aggregate")
    rundir.require(rp.aggregate_summary, "aggregate")
    rundir.require(rp.curves, "peppr")

    config = rundir.read_config(run_dir)
    # Label names are recorded at generation time; the manifest csv itself
    # only stores the 0/1 flags.
    stored = config.get("generate-data", {}).get("label_names")
    manifest = synthdata.load_manifest(rp.manifest, label_names=tuple(stored) if stored else None)
    metrics = rundir.read_keyvalues(rp.metrics)
    aggregate_meta = rundir.read_keyvalues(rp.aggregate_summary)
    erasure, restoration = peppr.load_curves(rp.curves)
    overall = floatmap.read_float_map(rp.overall_map)

    label_maps: dict[str, np.ndarray] = {}
    for name in manifest.label_names:
        label_path = rp.label_map(name)
        rundir.require(label_path, "aggregate")
        label_maps[name] = floatmap.read_float_map(label_path)

    report_dir = rundir.prepare_stage(run_dir, rundir.STAGE_REPORT)

    mean_val = synthdata.mean_image(manifest, synthdata.Split.VAL, rp.data_dir, flip=flip)
    floatmap.write_pgm(mean_val, report_dir / "mean_val.pgm")
    peak = overall.max()
    floatmap.write_pgm(overall / peak if peak > 0 else overall, report_dir / "overall.pgm")
    bands = render_decile_bands(overall, background=mean_val)
    floatmap.write_pgm(bands, report_dir / "overall_deciles.pgm")
    for name, label_map in label_maps.items():
        lpeak = label_map.max()
        floatmap.write_pgm(
            label_map / lpeak if lpeak > 0 else label_map, report_dir / f"label_{name}.pgm"
        )

    lines: list[str] = []
    lines.append("RUN SUMMARY")
    lines.append("")
    lines.append("[config]")
    for section in sorted(config):
        for key in sorted(config[section]):
            lines.append(f"  {section}.{key}={config[section][key]}")
    lines.append("")
    lines.append("[data]")
    for split in (synthdata.Split.TRAIN, synthdata.Split.VAL, synthdata.Split.TEST):
        recs = manifest.split_records(split)
        lines.append(f"  {split.value}: {len(recs)} samples")
    label_matrix = manifest.label_matrix()
    for li, name in enumerate(manifest.label_names):
        frac = float(label_matrix[:, li].mean()) if len(label_matrix) else 0.0
        lines.append(f"  prevalence {name}: {_fmt(frac)}")
    lines.append("")
    lines.append("[train]")
    for key, value in metrics.items():
        lines.append(f"  {key}={value}")
    lines.append("")
    lines.append("[aggregate]")
    for key, value in aggregate_meta.items():
        lines.append(f"  {key}={value}")
    lines.append("")
    lines.append("[probing]")
    lines.extend(_curve_table(erasure, restoration))
    lines.append("")
    lines.append("[artifacts]")
    root = Path(run_dir)
    for path in sorted(root.rglob("*")):
        if path.is_file() and rundir.STAGE_REPORT not in path.relative_to(root).parts:
            lines.append(f"  {path.relative_to(root).as_posix()} ({path.stat().st_size} bytes)")
    lines.append("")

    with open(rp.report_text, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines))
    rundir.write_stage_manifest(report_dir)
    return rp.report_text
