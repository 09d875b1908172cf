"""Synthetic aligned image modality with three lesion-type labels.

Each sample is a circular "field" (the imaged organ) on a dark background
with two fixed landmarks: a bright disc and a dark fovea. Labels insert
lesions whose spatial behaviour differs per label: tightly landmark-bound,
landmark-centred plus field-wide scatter, or quadrant-biased plus scatter.
Right-laterality samples are stored mirrored and flagged, so alignment is
recovered by flipping them at load time.

Also provides manifest CSV ingestion, patient-level splitting, the pixel-wise
mean-image alignment diagnostic, and geometry helpers used by the checks
downstream.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import floatmap
from .errors import ConfigError, ContractError, EmptyInputError, ParseError
from .seeding import STREAM_IMAGE, STREAM_SPLIT, stream


class Laterality(Enum):
    LEFT = "Left"
    RIGHT = "Right"


class Split(Enum):
    TRAIN = "Train"
    VAL = "Val"
    TEST = "Test"


class Placement(Enum):
    TIGHT_LANDMARK = "TightLandmark"
    LANDMARK_PLUS_SCATTER = "LandmarkPlusScatter"
    QUADRANT_BIASED = "QuadrantBiased"


# Fraction of lesions drawn near the landmark (vs anywhere in the field) for
# the scatter placement, and inside the biased quadrant for the quadrant
# placement. Frozen so datasets are reproducible across releases.
SCATTER_LANDMARK_FRACTION = 0.55
QUADRANT_BIAS_FRACTION = 0.85


@dataclass(frozen=True)
class LesionSpec:
    """One label's lesion appearance and placement behaviour."""

    name: str
    placement: Placement
    landmark_center: tuple[float, float]  # normalized (x, y)
    spread_sigma: float  # normalized units
    lesion_count_range: tuple[int, int]
    lesion_intensity: float  # signed contrast added to the image
    lesion_radius_range: tuple[float, float]  # pixels
    prevalence: float  # P(label positive) per sample

    def validate(self) -> None:
        if not (0.0 <= self.prevalence <= 1.0):
            raise ConfigError(f"lesion '{self.name}': prevalence must be in [0,1]")
        if self.spread_sigma <= 0:
            raise ConfigError(f"lesion '{self.name}': spread_sigma must be positive")
        lo, hi = self.lesion_count_range
        if lo < 0 or hi < lo:
            raise ConfigError(f"lesion '{self.name}': bad count range {self.lesion_count_range}")
        rlo, rhi = self.lesion_radius_range
        if rlo <= 0 or rhi < rlo:
            raise ConfigError(f"lesion '{self.name}': bad radius range {self.lesion_radius_range}")
        x, y = self.landmark_center
        if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
            raise ConfigError(f"lesion '{self.name}': landmark_center must be normalized")


@dataclass(frozen=True)
class SynthConfig:
    """Full description of the synthetic modality and dataset size."""

    image_size: tuple[int, int] = (64, 64)
    channels: int = 1
    n_subjects: tuple[int, int, int] = (1050, 225, 225)  # per Train/Val/Test
    labels: tuple[LesionSpec, ...] = ()
    field_center: tuple[float, float] = (0.5, 0.5)
    field_radius: float = 0.60  # normalized by min(H, W); clipped by frame
    field_intensity: float = 0.42
    # Surround is dim gray, not black: the rim is then a mild step, and no
    # static edge in the frame competes with lesion contrast.
    surround_intensity: float = 0.32
    disc_center: tuple[float, float] = (0.32, 0.47)
    disc_radius: float = 0.055
    # Bright but with headroom: bright lesions on top of the disc must
    # survive the [0, 1] clamp with most of their amplitude.
    disc_intensity: float = 0.60
    fovea_center: tuple[float, float] = (0.56, 0.50)
    fovea_radius: float = 0.045
    fovea_intensity: float = 0.18
    co_occurrence_prob: float = 0.25
    noise_sigma: float = 0.0125

    def validate(self) -> None:
        h, w = self.image_size
        if h < 16 or w < 16:
            raise ConfigError(f"image_size must be at least 16x16, got {h}x{w}")
        if self.channels < 1:
            raise ConfigError("channels must be >= 1")
        if any(n < 0 for n in self.n_subjects) or sum(self.n_subjects) < 1:
            raise ConfigError(f"bad n_subjects {self.n_subjects}")
        if not self.labels:
            raise ConfigError("at least one lesion spec is required")
        if not (0.0 <= self.co_occurrence_prob <= 1.0):
            raise ConfigError("co_occurrence_prob must be in [0,1]")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        if not (0.0 <= self.surround_intensity <= self.field_intensity):
            raise ConfigError("surround_intensity must lie in [0, field_intensity]")
        for spec in self.labels:
            spec.validate()

    @property
    def label_names(self) -> tuple[str, ...]:
        return tuple(spec.name for spec in self.labels)


def default_lesion_specs(n_labels: int = 3) -> tuple[LesionSpec, ...]:
    """The canonical three-label trio; beyond 3, placements cycle."""
    if n_labels < 1:
        raise ConfigError("need at least one label")
    canonical = (
        LesionSpec(
            name="focal",
            placement=Placement.TIGHT_LANDMARK,
            landmark_center=(0.32, 0.47),  # at the disc
            spread_sigma=0.05,
            lesion_count_range=(2, 3),
            lesion_intensity=0.45,
            lesion_radius_range=(4.5, 6.5),
            prevalence=0.32,
        ),
        LesionSpec(
            name="scatter",
            placement=Placement.LANDMARK_PLUS_SCATTER,
            # Clustered at the fovea, away from the focal label's disc, so
            # the two labels' lesions never cancel each other out.
            landmark_center=(0.56, 0.50),
            spread_sigma=0.06,
            lesion_count_range=(8, 16),
            lesion_intensity=-0.40,
            lesion_radius_range=(2.0, 4.0),
            prevalence=0.30,
        ),
        LesionSpec(
            name="quadrant",
            placement=Placement.QUADRANT_BIASED,
            landmark_center=(0.72, 0.28),  # upper-right quadrant
            spread_sigma=0.10,
            lesion_count_range=(2, 4),
            # Fainter than the focal lesions: its blobs are an order of
            # magnitude larger, so area rather than contrast carries it.
            lesion_intensity=0.18,
            lesion_radius_range=(7.0, 12.0),
            prevalence=0.28,
        ),
    )
    specs = []
    for i in range(n_labels):
        base = canonical[i % 3]
        if i < 3:
            specs.append(base)
        else:
            cx, cy = base.landmark_center
            specs.append(replace(base, name=f"{base.name}_{i}", landmark_center=(cx, 1.0 - cy)))
    return tuple(specs)


def default_config(n_labels: int = 3, image_size: int = 64) -> SynthConfig:
    return SynthConfig(image_size=(image_size, image_size), labels=default_lesion_specs(n_labels))


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    subject_id: str
    laterality: Laterality
    labels: tuple[bool, ...]
    split: Split
    image_path: str


@dataclass
class DatasetManifest:
    records: list[SampleRecord]
    label_names: tuple[str, ...]

    def validate(self) -> None:
        seen: set[str] = set()
        subject_split: dict[str, Split] = {}
        for rec in self.records:
            if rec.sample_id in seen:
                raise ContractError(f"duplicate sample_id '{rec.sample_id}'")
            seen.add(rec.sample_id)
            if len(rec.labels) != len(self.label_names):
                raise ContractError(
                    f"sample '{rec.sample_id}': {len(rec.labels)} labels, expected {len(self.label_names)}"
                )
            prev = subject_split.get(rec.subject_id)
            if prev is None:
                subject_split[rec.subject_id] = rec.split
            elif prev is not rec.split:
                raise ContractError(
                    f"subject '{rec.subject_id}' appears in splits {prev.value} and {rec.split.value}"
                )

    def split_records(self, split: Split) -> list[SampleRecord]:
        return [r for r in self.records if r.split is split]

    def label_matrix(self, split: Split | None = None) -> np.ndarray:
        recs = self.records if split is None else self.split_records(split)
        return np.array([r.labels for r in recs], dtype=bool).reshape(len(recs), len(self.label_names))


MANIFEST_HEADER = ["sample_id", "subject_id", "laterality", "split", "labels", "image_path"]


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Write the manifest CSV (UTF-8, LF line endings)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for rec in manifest.records:
            writer.writerow(
                [
                    rec.sample_id,
                    rec.subject_id,
                    rec.laterality.value,
                    rec.split.value,
                    ";".join("1" if flag else "0" for flag in rec.labels),
                    rec.image_path,
                ]
            )


def _parse_enum(enum_cls, token: str, line_no: int, what: str):
    for member in enum_cls:
        if member.value == token:
            return member
    raise ParseError(f"line {line_no}: unknown {what} token '{token}'")


def load_manifest(path: str | Path, label_names: tuple[str, ...] | None = None) -> DatasetManifest:
    """Read a manifest CSV; raises ParseError naming the offending line.

    Line numbers are 1-based and include the header line. When label_names is
    omitted, labels are named label_0..label_{L-1}.
    """
    records: list[SampleRecord] = []
    seen: set[str] = set()
    subject_split: dict[str, tuple[Split, int]] = {}
    n_labels: int | None = None
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"line 1: empty file, expected header {','.join(MANIFEST_HEADER)}")
        if header != MANIFEST_HEADER:
            raise ParseError(f"line 1: bad header {','.join(header)!r}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise ParseError(f"line {line_no}: expected {len(MANIFEST_HEADER)} fields, got {len(row)}")
            sample_id, subject_id, lat_tok, split_tok, labels_tok, image_path = row
            if not sample_id:
                raise ParseError(f"line {line_no}: empty sample_id")
            if sample_id in seen:
                raise ParseError(f"line {line_no}: duplicate sample_id '{sample_id}'")
            seen.add(sample_id)
            laterality = _parse_enum(Laterality, lat_tok, line_no, "laterality")
            split = _parse_enum(Split, split_tok, line_no, "split")
            flags = labels_tok.split(";")
            if any(f not in ("0", "1") for f in flags):
                raise ParseError(f"line {line_no}: labels must be ;-separated 0/1 flags, got '{labels_tok}'")
            labels = tuple(f == "1" for f in flags)
            if n_labels is None:
                n_labels = len(labels)
            elif len(labels) != n_labels:
                raise ParseError(f"line {line_no}: {len(labels)} label flags, expected {n_labels}")
            prior = subject_split.get(subject_id)
            if prior is None:
                subject_split[subject_id] = (split, line_no)
            elif prior[0] is not split:
                raise ParseError(
                    f"line {line_no}: subject '{subject_id}' already assigned to "
                    f"{prior[0].value} on line {prior[1]}"
                )
            records.append(SampleRecord(sample_id, subject_id, laterality, labels, split, image_path))
    if n_labels is None:
        n_labels = len(label_names) if label_names else 0
    if label_names is None:
        label_names = tuple(f"label_{i}" for i in range(n_labels))
    elif records and len(label_names) != n_labels:
        raise ParseError(f"manifest has {n_labels} labels, caller expected {len(label_names)}")
    return DatasetManifest(records, label_names)


# ---------------------------------------------------------------------------
# Image generation
# ---------------------------------------------------------------------------


def _pixel_grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel-centre coordinates, x along width, y along height."""
    ys = np.arange(h, dtype=np.float64) + 0.5
    xs = np.arange(w, dtype=np.float64) + 0.5
    return np.meshgrid(xs, ys)


def _blob_profile(xx: np.ndarray, yy: np.ndarray, cx: float, cy: float, radius: float) -> np.ndarray:
    """Cosine falloff: 1 at the centre, 0 at `radius` and beyond."""
    d = np.hypot(xx - cx, yy - cy)
    t = np.clip(d / max(radius, 1e-9), 0.0, 1.0)
    return 0.5 * (1.0 + np.cos(np.pi * t))


def field_mask(config: SynthConfig) -> np.ndarray:
    """Boolean mask of the circular modality region."""
    h, w = config.image_size
    xx, yy = _pixel_grid(h, w)
    scale = min(h, w)
    cx, cy = config.field_center[0] * w, config.field_center[1] * h
    return np.hypot(xx - cx, yy - cy) <= config.field_radius * scale


def lesion_zone_mask(config: SynthConfig, label_index: int) -> np.ndarray:
    """Circle that contains essentially all of a label's landmark-bound lesions.

    Radius = 3 sigma of the placement spread plus the largest lesion radius,
    derived purely from the generator geometry.
    """
    spec = config.labels[label_index]
    h, w = config.image_size
    scale = min(h, w)
    xx, yy = _pixel_grid(h, w)
    cx, cy = spec.landmark_center[0] * w, spec.landmark_center[1] * h
    radius = 3.0 * spec.spread_sigma * scale + spec.lesion_radius_range[1]
    return np.hypot(xx - cx, yy - cy) <= radius


def sample_labels(config: SynthConfig, seed: int, sample_index: int) -> np.ndarray:
    """Label vector for one sample; pure function of (config, seed, index).

    Marginals equal each spec's prevalence exactly. co_occurrence_prob mixes
    a comonotone draw (one shared uniform) with independent draws, which
    raises label co-occurrence without changing the marginals.
    """
    rng = stream(seed, STREAM_IMAGE, sample_index)
    labels = _draw_labels(config, rng)
    return labels


def _draw_labels(config: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    use_common = rng.random() < config.co_occurrence_prob
    u_common = rng.random()
    u_each = rng.random(len(config.labels))
    us = np.full(len(config.labels), u_common) if use_common else u_each
    prevalences = np.array([spec.prevalence for spec in config.labels])
    return us < prevalences


def _sample_in_circle(rng: np.random.Generator, cx: float, cy: float, radius: float) -> tuple[float, float]:
    r = radius * math.sqrt(rng.random())
    theta = 2.0 * math.pi * rng.random()
    return cx + r * math.cos(theta), cy + r * math.sin(theta)


def _lesion_position(
    spec: LesionSpec, config: SynthConfig, rng: np.random.Generator
) -> tuple[float, float]:
    h, w = config.image_size
    scale = min(h, w)
    fx, fy = config.field_center[0] * w, config.field_center[1] * h
    fr = config.field_radius * scale * 0.95  # keep lesions off the field rim
    lx, ly = spec.landmark_center[0] * w, spec.landmark_center[1] * h

    def near_landmark() -> tuple[float, float]:
        for _ in range(20):
            x = lx + rng.normal(0.0, spec.spread_sigma * scale)
            y = ly + rng.normal(0.0, spec.spread_sigma * scale)
            if math.hypot(x - fx, y - fy) <= fr:
                return x, y
        return lx, ly

    if spec.placement is Placement.TIGHT_LANDMARK:
        return near_landmark()
    if spec.placement is Placement.LANDMARK_PLUS_SCATTER:
        if rng.random() < SCATTER_LANDMARK_FRACTION:
            return near_landmark()
        return _sample_in_circle(rng, fx, fy, fr)
    # QUADRANT_BIASED: the quadrant is the image quarter holding the landmark.
    if rng.random() < QUADRANT_BIAS_FRACTION:
        for _ in range(40):
            x, y = _sample_in_circle(rng, fx, fy, fr)
            if (x >= w / 2) == (lx >= w / 2) and (y >= h / 2) == (ly >= h / 2):
                return x, y
    return _sample_in_circle(rng, fx, fy, fr)


def render_sample(
    config: SynthConfig,
    labels: np.ndarray,
    laterality: Laterality,
    rng: np.random.Generator,
) -> np.ndarray:
    """Render one (H, W, C) float32 image in [0, 1].

    Right-laterality images are the horizontal mirror of the canonical
    left-laterality geometry, as they come off the scanner.
    """
    h, w = config.image_size
    scale = min(h, w)
    xx, yy = _pixel_grid(h, w)
    img = np.zeros((h, w), dtype=np.float64)

    fx, fy = config.field_center[0] * w, config.field_center[1] * h
    d_field = np.hypot(xx - fx, yy - fy)
    # ~5 px soft rim: a hard edge is the strongest contrast in the image
    # and would dominate any edge-sensitive feature, drowning the lesions.
    rim = np.clip((config.field_radius * scale - d_field) / 5.0 + 0.5, 0.0, 1.0)
    img += config.surround_intensity + (config.field_intensity - config.surround_intensity) * rim

    dx, dy = config.disc_center[0] * w, config.disc_center[1] * h
    disc = _blob_profile(xx, yy, dx, dy, config.disc_radius * scale * 2.0)
    img += (config.disc_intensity - img) * disc

    vx, vy = config.fovea_center[0] * w, config.fovea_center[1] * h
    fovea = _blob_profile(xx, yy, vx, vy, config.fovea_radius * scale * 2.0)
    img += (config.fovea_intensity - img) * fovea

    for spec, positive in zip(config.labels, labels):
        if not positive:
            continue
        lo, hi = spec.lesion_count_range
        count = int(rng.integers(lo, hi + 1))
        for _ in range(count):
            x, y = _lesion_position(spec, config, rng)
            radius = rng.uniform(*spec.lesion_radius_range)
            gain = rng.uniform(0.8, 1.2)
            img += spec.lesion_intensity * gain * _blob_profile(xx, yy, x, y, radius)

    if config.noise_sigma > 0:
        # Noise covers the surround too: a bit-constant region would act as
        # a free bias direction for the classifier head and collect weight
        # that has nothing to do with any label.
        noise = rng.normal(0.0, config.noise_sigma, size=(h, w, config.channels))
    else:
        noise = np.zeros((h, w, config.channels))
    out = np.clip(img[:, :, None] + noise, 0.0, 1.0).astype(np.float32)
    if laterality is Laterality.RIGHT:
        out = np.flip(out, axis=1).copy()
    return out


def generate_dataset(config: SynthConfig, seed: int, out_dir: str | Path) -> DatasetManifest:
    """Generate the dataset under out_dir: images/ plus manifest.csv.

    Deterministic in (config, seed): every sample draws from its own RNG
    stream keyed by (seed, sample index), so the result is independent of
    generation order. Each subject contributes one Left and one Right eye.
    """
    config.validate()
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)

    split_blocks = (
        (Split.TRAIN, config.n_subjects[0]),
        (Split.VAL, config.n_subjects[1]),
        (Split.TEST, config.n_subjects[2]),
    )
    records: list[SampleRecord] = []
    sample_index = 0
    subject_index = 0
    for split, n_subjects in split_blocks:
        for _ in range(n_subjects):
            subject_id = f"P{subject_index:05d}"
            for eye in (Laterality.LEFT, Laterality.RIGHT):
                rng = stream(seed, STREAM_IMAGE, sample_index)
                labels = _draw_labels(config, rng)
                image = render_sample(config, labels, eye, rng)
                sample_id = f"S{subject_index:05d}{eye.value[0]}"
                rel_path = f"images/{sample_id}.axf"
                floatmap.write_float_map(image, out_dir / rel_path)
                records.append(
                    SampleRecord(
                        sample_id=sample_id,
                        subject_id=subject_id,
                        laterality=eye,
                        labels=tuple(bool(b) for b in labels),
                        split=split,
                        image_path=rel_path,
                    )
                )
                sample_index += 1
            subject_index += 1
    manifest = DatasetManifest(records, config.label_names)
    manifest.validate()
    save_manifest(manifest, out_dir / "manifest.csv")
    return manifest


# ---------------------------------------------------------------------------
# Alignment and splitting
# ---------------------------------------------------------------------------


def apply_laterality_flip(image: np.ndarray, laterality: Laterality) -> np.ndarray:
    """Mirror Right-laterality images horizontally; Left passes through.

    An involution: flipping a Right image twice restores it bit-for-bit.
    """
    if laterality is Laterality.LEFT:
        return image
    return np.flip(image, axis=1).copy()


def split_by_subject(
    manifest: DatasetManifest,
    fractions: tuple[float, float, float] = (0.70, 0.15, 0.15),
    seed: int = 0,
) -> DatasetManifest:
    """Assign Train/Val/Test per subject by shuffled contiguous blocks.

    Val and Test block sizes are round(fraction * n_subjects); every leftover
    subject lands in Train. Record order is preserved.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must sum to 1, got {fractions}")
    if any(f < 0 for f in fractions):
        raise ConfigError(f"fractions must be non-negative, got {fractions}")
    subjects: list[str] = []
    seen: set[str] = set()
    for rec in manifest.records:
        if rec.subject_id not in seen:
            seen.add(rec.subject_id)
            subjects.append(rec.subject_id)
    n = len(subjects)
    if n == 0:
        raise EmptyInputError("manifest has no subjects")
    rng = stream(seed, STREAM_SPLIT)
    order = rng.permutation(n)
    n_val = int(round(fractions[1] * n))
    n_test = int(round(fractions[2] * n))
    n_train = n - n_val - n_test
    if n_train < 0:
        raise ConfigError(f"rounded Val/Test blocks exceed {n} subjects")
    assignment: dict[str, Split] = {}
    for pos, subj_idx in enumerate(order):
        if pos < n_train:
            split = Split.TRAIN
        elif pos < n_train + n_val:
            split = Split.VAL
        else:
            split = Split.TEST
        assignment[subjects[subj_idx]] = split
    new_records = [replace(rec, split=assignment[rec.subject_id]) for rec in manifest.records]
    out = DatasetManifest(new_records, manifest.label_names)
    out.validate()
    return out


# ---------------------------------------------------------------------------
# Image loading and diagnostics
# ---------------------------------------------------------------------------


def load_image(record: SampleRecord, image_root: str | Path, flip: bool = True) -> np.ndarray:
    """Load one sample as (H, W, C) float32, aligned via laterality flip."""
    path = Path(image_root) / record.image_path
    suffix = path.suffix.lower()
    if suffix == ".axf":
        arr = floatmap.read_float_map(path)
    elif suffix in (".pgm", ".ppm"):
        arr = floatmap.read_netpbm(path)
    else:
        raise ConfigError(f"unsupported image format '{suffix}' for {path}")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if flip:
        arr = apply_laterality_flip(arr, record.laterality)
    return arr


def load_split_images(
    manifest: DatasetManifest,
    split: Split,
    image_root: str | Path,
    flip: bool = True,
) -> tuple[np.ndarray, np.ndarray, list[SampleRecord]]:
    """All images and label vectors of one split, in manifest order."""
    records = manifest.split_records(split)
    if not records:
        raise EmptyInputError(f"split {split.value} is empty")
    images = np.stack([load_image(rec, image_root, flip=flip) for rec in records])
    labels = np.array([rec.labels for rec in records], dtype=bool)
    return images, labels, records


def mean_image(
    manifest: DatasetManifest,
    split: Split,
    image_root: str | Path,
    flip: bool = True,
) -> np.ndarray:
    """Pixel-wise mean of a split after alignment, summed in manifest order."""
    records = manifest.split_records(split)
    if not records:
        raise EmptyInputError(f"split {split.value} is empty")
    acc: np.ndarray | None = None
    for rec in records:
        img = load_image(rec, image_root, flip=flip).astype(np.float64)
        acc = img if acc is None else acc + img
    return (acc / len(records)).astype(np.float32)


def count_bright_maxima(
    image: np.ndarray,
    threshold_frac: float = 0.5,
    region_mask: np.ndarray | None = None,
) -> int:
    """Count distinct bright blobs standing out from the background.

    A blob is a connected component of pixels whose value exceeds
    background + threshold_frac * (max - background), where background is
    the regional median. Thresholding on prominence rather than on the raw
    peak level keeps the flat interior of the modality region from
    counting: a plateau has maxima everywhere but prominence nowhere.
    """
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[:, :, 0]
    if region_mask is None:
        region_mask = np.ones(arr.shape, dtype=bool)
    region = arr[region_mask]
    background = float(np.median(region))
    peak_level = float(region.max())
    if peak_level <= background:
        return 0
    cutoff = background + threshold_frac * (peak_level - background)
    _, n_components = ndimage.label(region_mask & (arr > cutoff))
    return int(n_components)
