"""Shared fixtures: a miniature dataset and a cheap end-to-end run directory."""

from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from aligned_xai import cli, rundir, synthdata

TINY_SEED = 3


def tiny_config(image_size: int = 32) -> synthdata.SynthConfig:
    """Default modality shrunk to 60 subjects at 32 px; trains in seconds."""
    base = synthdata.default_config(n_labels=3, image_size=image_size)
    return dataclasses.replace(base, n_subjects=(40, 10, 10))


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Small generated dataset: (manifest, config, data_dir)."""
    data_dir = tmp_path_factory.mktemp("tiny") / "data"
    config = tiny_config()
    manifest = synthdata.generate_dataset(config, TINY_SEED, data_dir)
    return manifest, config, data_dir


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory, tiny_dataset):
    """Full run directory built by driving every CLI stage after the data one.

    The data stage is seeded from the session's small dataset rather than the
    CLI default (which renders the full-size dataset); from there each stage
    runs through the real command-line entry point.
    """
    manifest, config, data_dir = tiny_dataset
    run_dir = tmp_path_factory.mktemp("tiny_run")
    stage_dir = rundir.prepare_stage(run_dir, rundir.STAGE_DATA)
    dst = rundir.paths(run_dir)
    # Re-generate into the run directory: cheaper than copying and still
    # byte-deterministic in (config, seed).
    synthdata.generate_dataset(config, TINY_SEED, stage_dir)
    rundir.write_stage_manifest(stage_dir)
    rundir.update_config(
        run_dir,
        "generate-data",
        {
            "seed": TINY_SEED,
            "image_size": config.image_size[0],
            "labels": len(config.labels),
            "label_names": list(config.label_names),
        },
    )
    common = ["--out", str(run_dir), "--threads", "1"]
    assert cli.main(["train", "--epochs", "1", "--seed", str(TINY_SEED)] + common) == 0
    assert cli.main(["explain", "--split", "val"] + common) == 0
    assert cli.main(["aggregate"] + common) == 0
    assert cli.main(["peppr", "--split", "test", "--seed", str(TINY_SEED)] + common) == 0
    assert cli.main(["report"] + common) == 0
    assert dst.report_text.exists()
    return run_dir


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
