"""Synthetic modality generator: manifests, rendering, alignment, geometry."""

from __future__ import annotations

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aligned_xai import synthdata
from aligned_xai.errors import ConfigError, ContractError, EmptyInputError, ParseError
from aligned_xai.seeding import STREAM_IMAGE, stream
from aligned_xai.synthdata import Laterality, Split

from conftest import TINY_SEED, tiny_config


# ---------------------------------------------------------------------------
# Config validation
# ---------------------------------------------------------------------------


def test_default_config_is_valid():
    config = synthdata.default_config()
    config.validate()
    assert config.label_names == ("focal", "scatter", "quadrant")


def test_label_cycling_beyond_three():
    specs = synthdata.default_lesion_specs(5)
    assert len(specs) == 5
    assert specs[3].name == "focal_3"
    # Mirrored landmark, same placement family as the base label.
    assert specs[3].placement == specs[0].placement
    assert specs[3].landmark_center[1] == pytest.approx(1.0 - specs[0].landmark_center[1])


def test_config_rejects_bad_values():
    good = synthdata.default_config()
    with pytest.raises(ConfigError):
        dataclasses.replace(good, image_size=(8, 8)).validate()
    with pytest.raises(ConfigError):
        dataclasses.replace(good, labels=()).validate()
    with pytest.raises(ConfigError):
        dataclasses.replace(good, co_occurrence_prob=1.5).validate()
    with pytest.raises(ConfigError):
        dataclasses.replace(good, noise_sigma=-0.1).validate()
    with pytest.raises(ConfigError):
        dataclasses.replace(good, surround_intensity=good.field_intensity + 0.1).validate()


def test_lesion_spec_rejects_bad_values():
    spec = synthdata.default_lesion_specs(1)[0]
    with pytest.raises(ConfigError):
        dataclasses.replace(spec, prevalence=1.2).validate()
    with pytest.raises(ConfigError):
        dataclasses.replace(spec, spread_sigma=0.0).validate()
    with pytest.raises(ConfigError):
        dataclasses.replace(spec, lesion_count_range=(3, 1)).validate()
    with pytest.raises(ConfigError):
        dataclasses.replace(spec, lesion_radius_range=(0.0, 2.0)).validate()
    with pytest.raises(ConfigError):
        dataclasses.replace(spec, landmark_center=(1.4, 0.5)).validate()


# ---------------------------------------------------------------------------
# Manifest round trip and parsing
# ---------------------------------------------------------------------------


def test_manifest_round_trip(tiny_dataset, tmp_path):
    manifest, _, _ = tiny_dataset
    path = tmp_path / "manifest.csv"
    synthdata.save_manifest(manifest, path)
    back = synthdata.load_manifest(path, label_names=manifest.label_names)
    assert back.records == manifest.records
    assert back.label_names == manifest.label_names


def test_manifest_names_default_to_positional(tiny_dataset, tmp_path):
    manifest, _, _ = tiny_dataset
    path = tmp_path / "manifest.csv"
    synthdata.save_manifest(manifest, path)
    back = synthdata.load_manifest(path)
    assert back.label_names == ("label_0", "label_1", "label_2")


def _write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


HEADER = "sample_id,subject_id,laterality,split,labels,image_path"


@pytest.mark.parametrize(
    "rows, fragment",
    [
        ([], "line 1"),  # overwritten below with empty file
        (["bad,header"], "bad header"),
        ([HEADER, "S0,P0,Left,Train,0;1,img.axf", "S0,P1,Left,Train,0;1,img.axf"], "duplicate"),
        ([HEADER, "S0,P0,Middle,Train,0;1,img.axf"], "laterality"),
        ([HEADER, "S0,P0,Left,Holdout,0;1,img.axf"], "split"),
        ([HEADER, "S0,P0,Left,Train,0;2,img.axf"], "labels"),
        ([HEADER, "S0,P0,Left,Train,0;1,img.axf", "S1,P0,Right,Val,0;1,img.axf"], "already assigned"),
        ([HEADER, "S0,P0,Left,Train,0;1,img.axf", "S1,P1,Left,Val,0;1;1,img.axf"], "label flags"),
        ([HEADER, "S0,P0,Left,Train,0;1"], "fields"),
        ([HEADER, ",P0,Left,Train,0;1,img.axf"], "empty sample_id"),
    ],
)
def test_manifest_parse_errors(tmp_path, rows, fragment):
    path = tmp_path / "m.csv"
    if rows:
        _write_lines(path, rows)
    else:
        path.write_text("", encoding="utf-8")
    with pytest.raises(ParseError, match=fragment):
        synthdata.load_manifest(path)


def test_manifest_validate_catches_cross_split_subject():
    rec = synthdata.SampleRecord("S0", "P0", Laterality.LEFT, (True,), Split.TRAIN, "a.axf")
    rec2 = dataclasses.replace(rec, sample_id="S1", split=Split.VAL)
    manifest = synthdata.DatasetManifest([rec, rec2], ("only",))
    with pytest.raises(ContractError, match="appears in splits"):
        manifest.validate()


# ---------------------------------------------------------------------------
# Label sampling
# ---------------------------------------------------------------------------


def test_label_marginals_match_prevalence():
    config = tiny_config()
    draws = np.array([synthdata.sample_labels(config, 17, i) for i in range(4000)])
    want = np.array([spec.prevalence for spec in config.labels])
    got = draws.mean(axis=0)
    # Binomial std at n=4000 is ~0.007; allow 4 sigma.
    assert np.all(np.abs(got - want) < 0.03)


def test_co_occurrence_raises_joint_probability():
    base = tiny_config()
    indep = dataclasses.replace(base, co_occurrence_prob=0.0)
    mixed = dataclasses.replace(base, co_occurrence_prob=0.9)
    joint = []
    for config in (indep, mixed):
        draws = np.array([synthdata.sample_labels(config, 23, i) for i in range(3000)])
        joint.append(draws.all(axis=1).mean())
    assert joint[1] > joint[0] + 0.05


def test_sample_labels_deterministic():
    config = tiny_config()
    a = synthdata.sample_labels(config, 5, 42)
    b = synthdata.sample_labels(config, 5, 42)
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def test_render_range_shape_dtype():
    config = tiny_config()
    rng = stream(1, STREAM_IMAGE, 0)
    img = synthdata.render_sample(config, np.array([True, True, True]), Laterality.LEFT, rng)
    assert img.shape == (32, 32, 1)
    assert img.dtype == np.float32
    assert img.min() >= 0.0 and img.max() <= 1.0


def test_right_is_mirrored_left():
    config = tiny_config()
    labels = np.array([True, False, True])
    left = synthdata.render_sample(config, labels, Laterality.LEFT, stream(9, STREAM_IMAGE, 4))
    right = synthdata.render_sample(config, labels, Laterality.RIGHT, stream(9, STREAM_IMAGE, 4))
    assert np.array_equal(right, np.flip(left, axis=1))


def test_flip_is_involution(rng):
    img = rng.random((8, 6, 1)).astype(np.float32)
    once = synthdata.apply_laterality_flip(img, Laterality.RIGHT)
    twice = synthdata.apply_laterality_flip(once, Laterality.RIGHT)
    assert np.array_equal(twice, img)
    assert synthdata.apply_laterality_flip(img, Laterality.LEFT) is img


def test_disc_brighter_than_field_fovea_darker():
    config = tiny_config()
    quiet = dataclasses.replace(config, noise_sigma=0.0)
    img = synthdata.render_sample(
        quiet, np.array([False, False, False]), Laterality.LEFT, stream(2, STREAM_IMAGE, 0)
    )[:, :, 0]
    h, w = quiet.image_size
    disc = img[int(quiet.disc_center[1] * h), int(quiet.disc_center[0] * w)]
    fovea = img[int(quiet.fovea_center[1] * h), int(quiet.fovea_center[0] * w)]
    edge_field = img[h // 2, int(0.25 * w)]
    assert disc > edge_field > fovea


def test_generation_is_deterministic(tmp_path):
    config = dataclasses.replace(tiny_config(), n_subjects=(2, 1, 1))
    m1 = synthdata.generate_dataset(config, 7, tmp_path / "a")
    m2 = synthdata.generate_dataset(config, 7, tmp_path / "b")
    assert m1.records[0].sample_id == m2.records[0].sample_id
    for rec in m1.records:
        a = (tmp_path / "a" / rec.image_path).read_bytes()
        b = (tmp_path / "b" / rec.image_path).read_bytes()
        assert a == b


def test_generated_layout(tiny_dataset):
    manifest, config, data_dir = tiny_dataset
    assert (data_dir / "manifest.csv").exists()
    assert len(manifest.records) == 2 * sum(config.n_subjects)
    per_split = {s: len(manifest.split_records(s)) for s in Split}
    assert per_split[Split.TRAIN] == 80
    assert per_split[Split.VAL] == 20
    assert per_split[Split.TEST] == 20
    # One Left and one Right eye per subject, never split across partitions.
    by_subject: dict[str, set] = {}
    for rec in manifest.records:
        by_subject.setdefault(rec.subject_id, set()).add((rec.laterality, rec.split))
    for entries in by_subject.values():
        assert len({split for _, split in entries}) == 1
        assert {lat for lat, _ in entries} == {Laterality.LEFT, Laterality.RIGHT}


# ---------------------------------------------------------------------------
# Loading and alignment
# ---------------------------------------------------------------------------


def test_load_split_images_order_and_flip(tiny_dataset):
    manifest, _, data_dir = tiny_dataset
    images, labels, records = synthdata.load_split_images(manifest, Split.VAL, data_dir)
    assert images.shape[0] == labels.shape[0] == len(records) == 20
    raw, _, _ = synthdata.load_split_images(manifest, Split.VAL, data_dir, flip=False)
    for i, rec in enumerate(records):
        if rec.laterality is Laterality.RIGHT:
            assert np.array_equal(images[i], np.flip(raw[i], axis=1))
        else:
            assert np.array_equal(images[i], raw[i])


def test_load_image_reads_netpbm(tmp_path, rng):
    from aligned_xai import floatmap

    img = (rng.random((8, 8)) * 255).astype(np.uint8)
    floatmap.write_pgm(img, tmp_path / "x.pgm")
    rec = synthdata.SampleRecord("S0", "P0", Laterality.LEFT, (True,), Split.TRAIN, "x.pgm")
    arr = synthdata.load_image(rec, tmp_path)
    assert arr.shape == (8, 8, 1)
    assert np.allclose(arr[:, :, 0], img / 255.0)


def test_load_image_rejects_unknown_format(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"\0")
    rec = synthdata.SampleRecord("S0", "P0", Laterality.LEFT, (True,), Split.TRAIN, "x.bin")
    with pytest.raises(ConfigError):
        synthdata.load_image(rec, tmp_path)


def test_mean_image_matches_direct_average(tiny_dataset):
    manifest, _, data_dir = tiny_dataset
    images, _, _ = synthdata.load_split_images(manifest, Split.VAL, data_dir)
    direct = images.astype(np.float64).mean(axis=0).astype(np.float32)
    assert np.array_equal(synthdata.mean_image(manifest, Split.VAL, data_dir), direct)


def test_empty_split_raises():
    rec = synthdata.SampleRecord("S0", "P0", Laterality.LEFT, (True,), Split.TRAIN, "a.axf")
    manifest = synthdata.DatasetManifest([rec], ("only",))
    with pytest.raises(EmptyInputError):
        synthdata.load_split_images(manifest, Split.VAL, ".")


# ---------------------------------------------------------------------------
# Subject-level splitting
# ---------------------------------------------------------------------------


def test_split_by_subject_counts_and_integrity(tiny_dataset):
    manifest, _, _ = tiny_dataset
    out = synthdata.split_by_subject(manifest, (0.5, 0.25, 0.25), seed=1)
    subjects = {rec.subject_id for rec in out.records}
    per_subject_splits = {
        s: {rec.split for rec in out.records if rec.subject_id == s} for s in subjects
    }
    assert all(len(v) == 1 for v in per_subject_splits.values())
    n = len(subjects)
    val = sum(1 for v in per_subject_splits.values() if Split.VAL in v)
    test = sum(1 for v in per_subject_splits.values() if Split.TEST in v)
    assert val == round(0.25 * n)
    assert test == round(0.25 * n)


def test_split_by_subject_rejects_bad_fractions(tiny_dataset):
    manifest, _, _ = tiny_dataset
    with pytest.raises(ConfigError):
        synthdata.split_by_subject(manifest, (0.5, 0.2, 0.2))
    with pytest.raises(ConfigError):
        synthdata.split_by_subject(manifest, (1.4, -0.2, -0.2))


# ---------------------------------------------------------------------------
# Geometry helpers and the maxima counter
# ---------------------------------------------------------------------------


def test_field_mask_geometry():
    config = tiny_config()
    mask = synthdata.field_mask(config)
    h, w = config.image_size
    assert mask[h // 2, w // 2]
    assert not mask[0, 0] and not mask[0, w - 1]


def test_lesion_zone_contains_landmark():
    config = tiny_config()
    for li, spec in enumerate(config.labels):
        zone = synthdata.lesion_zone_mask(config, li)
        h, w = config.image_size
        cy = min(int(spec.landmark_center[1] * h), h - 1)
        cx = min(int(spec.landmark_center[0] * w), w - 1)
        assert zone[cy, cx]
        assert 0 < zone.sum() < zone.size


def test_count_bright_maxima_two_bumps():
    yy, xx = np.mgrid[0:48, 0:48].astype(np.float64)
    img = np.exp(-((xx - 12) ** 2 + (yy - 24) ** 2) / 8.0)
    img += np.exp(-((xx - 36) ** 2 + (yy - 24) ** 2) / 8.0)
    assert synthdata.count_bright_maxima(img) == 2


def test_count_bright_maxima_ignores_low_plateau():
    # Half-height plateau has no prominence; only the peak should count.
    img = np.full((32, 32), 0.0)
    img[4:28, 4:28] = 0.5
    img[14:18, 14:18] = 1.0
    assert synthdata.count_bright_maxima(img, threshold_frac=0.6) == 1


def test_count_bright_maxima_flat_image_counts_nothing():
    assert synthdata.count_bright_maxima(np.full((16, 16), 0.3)) == 0


def test_count_bright_maxima_respects_region():
    img = np.zeros((32, 32))
    img[8, 8] = 1.0
    img[8, 24] = 1.0
    left = np.zeros((32, 32), dtype=bool)
    left[:, :16] = True
    assert synthdata.count_bright_maxima(img, region_mask=left) == 1


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_render_never_leaves_unit_interval(seed):
    config = dataclasses.replace(tiny_config(), noise_sigma=0.05)
    rng = stream(seed, STREAM_IMAGE, 0)
    labels = rng.random(3) < 0.5
    img = synthdata.render_sample(config, labels, Laterality.LEFT, rng)
    assert img.min() >= 0.0 and img.max() <= 1.0
