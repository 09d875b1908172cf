"""Command-line pipeline: data, training, explanation, probing, reporting.

Each subcommand is one pipeline stage writing artifacts into a run directory
(see rundir); run-all chains the full sequence. Exit codes: 0 success, 2 for
configuration / prerequisite / parse problems, 3 for runtime failures inside
a stage, 1 for anything unexpected. Every failure prints a single
machine-parseable line: `error: <class>: <message>`.

Thread environment variables are pinned before numpy loads, so the heavy
imports happen inside the stage handlers, never at module import time.
"""

from __future__ import annotations

import argparse
import os
import sys

from .errors import ConfigError, ToolkitError

DEFAULT_SEED = 7
SEED_ENV_VAR = "ALIGNED_XAI_SEED"


def _resolve_seed(args: argparse.Namespace) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got '{env}'")
    return DEFAULT_SEED


def _pin_threads(n: int) -> None:
    """Cap BLAS/OpenMP pools; must run before numpy is first imported."""
    if n < 1:
        raise ConfigError(f"threads must be >= 1, got {n}")
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "VECLIB_MAXIMUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ[var] = str(n)


def _split_from_token(token: str):
    from . import synthdata

    return synthdata.Split.VAL if token == "val" else synthdata.Split.TEST


def _load_manifest(run_dir: str):
    """Load the dataset manifest, restoring label names from config.json.

    The manifest csv carries per-sample label flags but not the label names;
    those are recorded by generate-data in the run config. Falls back to
    positional names for run dirs whose config predates the record.
    """
    from . import rundir, synthdata

    rp = rundir.paths(run_dir)
    rundir.require(rp.manifest, "generate-data")
    stored = rundir.read_config(run_dir).get("generate-data", {}).get("label_names")
    names = tuple(stored) if stored else None
    return synthdata.load_manifest(rp.manifest, label_names=names)


# ---------------------------------------------------------------------------
# Stage handlers
# ---------------------------------------------------------------------------


def _cmd_generate_data(args: argparse.Namespace) -> None:
    from . import rundir, synthdata

    seed = _resolve_seed(args)
    config = synthdata.default_config(n_labels=args.labels, image_size=args.image_size)
    config.validate()
    data_dir = rundir.prepare_stage(args.out, rundir.STAGE_DATA)
    manifest = synthdata.generate_dataset(config, seed, data_dir)
    rundir.write_stage_manifest(data_dir)
    rundir.update_config(
        args.out,
        "generate-data",
        {
            "seed": seed,
            "image_size": args.image_size,
            "labels": args.labels,
            # The manifest csv stores label flags only, so the names live here.
            "label_names": list(manifest.label_names),
        },
    )
    counts = {s.value: len(manifest.split_records(s)) for s in synthdata.Split}
    print(f"generated {len(manifest.records)} samples ({counts})")


def _cmd_train(args: argparse.Namespace) -> None:
    import numpy as np

    from . import floatmap, model, rundir, synthdata
    from .metrics import roc_auc_per_label

    seed = _resolve_seed(args)
    rp = rundir.paths(args.out)
    manifest = _load_manifest(args.out)
    train_images, train_labels, _ = synthdata.load_split_images(
        manifest, synthdata.Split.TRAIN, rp.data_dir
    )
    val_images, val_labels, _ = synthdata.load_split_images(
        manifest, synthdata.Split.VAL, rp.data_dir
    )
    h, w, c = train_images.shape[1:]
    arch = model.ArchitectureDescriptor(
        image_size=(h, w), in_channels=c, n_labels=len(manifest.label_names)
    )
    config = model.TrainConfig(
        learning_rate=args.lr,
        l2_lambda=args.l2,
        batch_size=args.batch_size,
        epochs=args.epochs,
        erasing_prob=args.erasing_prob,
        seed=seed,
    )
    dtype = np.float64 if args.precision == "f64" else np.float32
    train_dir = rundir.prepare_stage(args.out, rundir.STAGE_TRAIN)
    params, history = model.train(
        arch,
        train_images,
        train_labels,
        config,
        val_images=val_images,
        val_labels=val_labels,
        label_names=manifest.label_names,
        dtype=dtype,
        log_fn=print,
    )
    model.save_checkpoint(params, rp.checkpoint)
    mean_img = synthdata.mean_image(manifest, synthdata.Split.TRAIN, rp.data_dir, flip=True)
    floatmap.write_float_map(mean_img, rp.train_mean_image)

    test_images, test_labels, _ = synthdata.load_split_images(
        manifest, synthdata.Split.TEST, rp.data_dir
    )
    val_auc = roc_auc_per_label(model.predict_probs(params, val_images), val_labels, manifest.label_names)
    test_auc = roc_auc_per_label(model.predict_probs(params, test_images), test_labels, manifest.label_names)

    pairs: list[tuple[str, object]] = [("final_train_loss", history[-1]["mean_loss"])]
    for name, auc in zip(manifest.label_names, val_auc):
        pairs.append((f"val_auc_{name}", float(auc)))
    for name, auc in zip(manifest.label_names, test_auc):
        pairs.append((f"test_auc_{name}", float(auc)))
    rundir.write_keyvalues(rp.metrics, pairs)
    with open(rp.history, "w", encoding="utf-8", newline="") as fh:
        for entry in history:
            cells = [f"epoch={entry['epoch']}", f"mean_loss={entry['mean_loss']!r}"]
            cells += [f"{k}={v!r}" for k, v in entry.items() if k.startswith("val_auc_")]
            fh.write(" ".join(cells) + "\n")
    rundir.write_stage_manifest(train_dir)
    rundir.update_config(
        args.out,
        "train",
        {
            "seed": seed,
            "epochs": args.epochs,
            "lr": args.lr,
            "l2": args.l2,
            "batch_size": args.batch_size,
            "erasing_prob": args.erasing_prob,
            "precision": args.precision,
        },
    )
    for name, vauc, tauc in zip(manifest.label_names, val_auc, test_auc):
        print(f"{name}: val auc {vauc:.4f}, test auc {tauc:.4f}")


def _cmd_explain(args: argparse.Namespace) -> None:
    from . import aggregate, gradcam, model, rundir, synthdata
    from .errors import EmptyInputError

    rp = rundir.paths(args.out)
    rundir.require(rp.checkpoint, "train")
    manifest = _load_manifest(args.out)
    params = model.load_checkpoint(rp.checkpoint)
    split = _split_from_token(args.split)
    images, labels, records = synthdata.load_split_images(manifest, split, rp.data_dir)
    norm = (
        gradcam.Normalization.MAX_ONE if args.gradcam_norm == "max-one" else gradcam.Normalization.RAW
    )
    probs = model.predict_probs(params, images)
    explain_dir = rundir.prepare_stage(args.out, rundir.STAGE_EXPLAIN)
    pairs: list[tuple[str, object]] = [
        ("split", split.value),
        ("normalization", norm.value),
    ]
    for li, name in enumerate(manifest.label_names):
        pos = aggregate.select_positives(labels, li)
        if pos.size == 0:
            raise EmptyInputError(f"label '{name}': split {split.value} has no positives")
        maps = gradcam.gradcam_batch(params, images[pos], li, norm)
        aggregate.save_sample_maps(maps, rp.sample_maps(name))
        aggregate.save_sample_weights(
            [records[i].sample_id for i in pos], probs[pos, li], rp.sample_weights(name)
        )
        pairs.append((f"n_positives_{name}", int(pos.size)))
    rundir.write_keyvalues(rp.explain_summary, pairs)
    rundir.write_stage_manifest(explain_dir)
    rundir.update_config(
        args.out, "explain", {"split": args.split, "gradcam_norm": args.gradcam_norm}
    )
    print(f"explained {split.value} split: per-sample maps for {len(manifest.label_names)} labels")


def _cmd_aggregate(args: argparse.Namespace) -> None:
    import numpy as np

    from . import aggregate, floatmap, rundir, synthdata

    rp = rundir.paths(args.out)
    rundir.require(rp.explain_summary, "explain")
    manifest = _load_manifest(args.out)
    explain_meta = rundir.read_keyvalues(rp.explain_summary)
    weighting = aggregate.Weighting.PROB if args.weighting == "prob" else aggregate.Weighting.UNIFORM
    agg_dir = rundir.prepare_stage(args.out, rundir.STAGE_AGGREGATE)
    label_maps: list[np.ndarray] = []
    pairs: list[tuple[str, object]] = [
        ("split", explain_meta.get("split", "")),
        ("weighting", weighting.value),
    ]
    for name in manifest.label_names:
        rundir.require(rp.sample_maps(name), "explain")
        rundir.require(rp.sample_weights(name), "explain")
        maps = aggregate.load_sample_maps(rp.sample_maps(name))
        _, probs = aggregate.load_sample_weights(rp.sample_weights(name))
        label_map = aggregate.label_global(maps, probs, label_name=name, weighting=weighting)
        floatmap.write_float_map(label_map, rp.label_map(name))
        label_maps.append(label_map)
        pairs.append((f"n_positives_{name}", maps.shape[0]))
        pairs.append((f"weight_sum_{name}", float(probs.sum())))
    overall = aggregate.overall_global(label_maps)
    floatmap.write_float_map(overall, rp.overall_map)
    pairs.append(("n_labels", len(label_maps)))
    rundir.write_keyvalues(rp.aggregate_summary, pairs)
    rundir.write_stage_manifest(agg_dir)
    rundir.update_config(args.out, "aggregate", {"weighting": args.weighting})
    print(f"aggregated {len(label_maps)} label maps into overall map")


def _cmd_peppr(args: argparse.Namespace) -> None:
    from . import floatmap, model, peppr, rundir, synthdata

    seed = _resolve_seed(args)
    rp = rundir.paths(args.out)
    rundir.require(rp.overall_map, "aggregate")
    rundir.require(rp.checkpoint, "train")
    manifest = _load_manifest(args.out)
    params = model.load_checkpoint(rp.checkpoint)
    split = _split_from_token(args.split)
    images, labels, records = synthdata.load_split_images(manifest, split, rp.data_dir)
    importance = floatmap.read_float_map(rp.overall_map)
    fill = peppr.Fill.RANDOM_NOISE if args.fill == "noise" else peppr.Fill.TRAIN_MEAN
    train_mean = None
    if fill is peppr.Fill.TRAIN_MEAN:
        rundir.require(rp.train_mean_image, "train")
        train_mean = floatmap.read_float_map(rp.train_mean_image)
        if train_mean.ndim == 2:
            train_mean = train_mean[:, :, None]
    peppr_dir = rundir.prepare_stage(args.out, rundir.STAGE_PEPPR)
    erasure, restoration = peppr.run_peppr(
        params,
        images,
        labels,
        [rec.sample_id for rec in records],
        manifest.label_names,
        importance,
        seed,
        step=args.peppr_step,
        fill=fill,
        train_mean=train_mean,
    )
    peppr.save_curves(erasure, restoration, rp.curves)
    pairs: list[tuple[str, object]] = [
        ("split", split.value),
        ("fill", fill.value),
        ("step", repr(float(args.peppr_step))),
        ("n_quantiles", len(erasure.quantiles)),
    ]
    for li, name in enumerate(manifest.label_names):
        pairs.append((f"baseline_auc_{name}", float(erasure.baseline_auc[li])))
    rundir.write_keyvalues(rp.peppr_summary, pairs)
    rundir.write_stage_manifest(peppr_dir)
    rundir.update_config(
        args.out,
        "peppr",
        {"seed": seed, "split": args.split, "step": args.peppr_step, "fill": args.fill},
    )
    print(f"probed {split.value} split at {len(erasure.quantiles)} quantiles per direction")


def _cmd_report(args: argparse.Namespace) -> None:
    from . import report

    path = report.summarize_run(args.out, flip=not args.no_flip)
    print(f"wrote {path}")


def _cmd_run_all(args: argparse.Namespace) -> None:
    """Chain every stage; explanations aggregate on Val, probing scores Test."""
    import copy

    _cmd_generate_data(args)
    _cmd_train(args)
    explain_args = copy.copy(args)
    explain_args.split = "val"
    _cmd_explain(explain_args)
    _cmd_aggregate(args)
    peppr_args = copy.copy(args)
    peppr_args.split = "test"
    _cmd_peppr(peppr_args)
    _cmd_report(args)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--out", default="run", help="run directory for stage artifacts")
    sub.add_argument(
        "--threads", type=int, default=1, help="BLAS/OpenMP thread cap (1 = deterministic mode)"
    )


def _add_seed(sub: argparse.ArgumentParser) -> None:
    sub.add_argument(
        "--seed",
        type=int,
        default=None,
        help=f"master seed (default: ${SEED_ENV_VAR} if set, else {DEFAULT_SEED})",
    )


def _add_generate_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--image-size", type=int, default=64, help="square image side in pixels")
    sub.add_argument("--labels", type=int, default=3, help="number of lesion labels")


def _add_train_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--epochs", type=int, default=5, help="training epochs")
    sub.add_argument("--lr", type=float, default=5e-5, help="Adam learning rate")
    sub.add_argument("--l2", type=float, default=5e-5, help="L2 penalty weight (biases exempt)")
    sub.add_argument("--batch-size", type=int, default=32, help="minibatch size")
    sub.add_argument(
        "--erasing-prob", type=float, default=0.3, help="probability of random erasing per sample"
    )
    sub.add_argument(
        "--precision",
        choices=("f32", "f64"),
        default="f32",
        help="training dtype (f64 is the verification mode)",
    )


def _add_split_flag(sub: argparse.ArgumentParser, default_split: str) -> None:
    sub.add_argument(
        "--split",
        choices=("val", "test"),
        default=default_split,
        help="which held-out split the stage works on",
    )


def _add_norm_flag(sub: argparse.ArgumentParser) -> None:
    sub.add_argument(
        "--gradcam-norm",
        choices=("max-one", "raw"),
        default="max-one",
        help="per-sample map normalization",
    )


def _add_aggregate_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument(
        "--weighting",
        choices=("prob", "uniform"),
        default="prob",
        help="weight positives by predicted probability or equally",
    )


def _add_peppr_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--peppr-step", type=float, default=0.05, help="quantile step of the sweep")
    sub.add_argument(
        "--fill",
        choices=("noise", "train-mean"),
        default="noise",
        help="replacement for erased pixels",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aligned-xai",
        description="Global explanation aggregation and erase/restore probing "
        "for aligned image modalities, end to end on a synthetic dataset.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    def sub(name: str, help_text: str) -> argparse.ArgumentParser:
        return subparsers.add_parser(
            name, help=help_text, formatter_class=argparse.ArgumentDefaultsHelpFormatter
        )

    p = sub("generate-data", "render the synthetic dataset and its manifest")
    _add_common(p)
    _add_seed(p)
    _add_generate_flags(p)
    p.set_defaults(handler=_cmd_generate_data)

    p = sub("train", "train the classifier on the Train split")
    _add_common(p)
    _add_seed(p)
    _add_train_flags(p)
    p.set_defaults(handler=_cmd_train)

    p = sub("explain", "compute per-sample importance maps for each label's positives")
    _add_common(p)
    _add_split_flag(p, default_split="val")
    _add_norm_flag(p)
    p.set_defaults(handler=_cmd_explain)

    p = sub("aggregate", "combine per-sample maps into label and overall maps")
    _add_common(p)
    _add_aggregate_flags(p)
    p.set_defaults(handler=_cmd_aggregate)

    p = sub("peppr", "erase/restore sweep scoring the frozen model per quantile")
    _add_common(p)
    _add_seed(p)
    _add_split_flag(p, default_split="test")
    _add_peppr_flags(p)
    p.set_defaults(handler=_cmd_peppr)

    p = sub("report", "render report.txt and visual exports from run artifacts")
    _add_common(p)
    p.add_argument(
        "--no-flip",
        action="store_true",
        help="skip laterality alignment in the mean-image diagnostic",
    )
    p.set_defaults(handler=_cmd_report)

    p = sub("run-all", "run every stage in order in one process")
    _add_common(p)
    _add_seed(p)
    _add_generate_flags(p)
    _add_train_flags(p)
    _add_norm_flag(p)
    _add_aggregate_flags(p)
    _add_peppr_flags(p)
    p.add_argument(
        "--no-flip",
        action="store_true",
        help="skip laterality alignment in the mean-image diagnostic",
    )
    p.set_defaults(handler=_cmd_run_all)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _pin_threads(args.threads)
        args.handler(args)
        return 0
    except ToolkitError as exc:
        print(f"error: {exc.error_class}: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:
        print(f"error: unexpected: {exc.__class__.__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
