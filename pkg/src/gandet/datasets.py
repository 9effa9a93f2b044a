"""Synthetic corpora, folder ingestion, augmentation, and training-set contamination.

Labels exist for evaluation only. Training code consumes a TrainStream,
which carries images and nothing else; the contamination audit produced
alongside it is bookkeeping for later analysis and is never read during
training.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .seeding import child_seed
from .validation import check_power_of_two_resolution, check_value_range

logger = logging.getLogger(__name__)

NORMAL = 0
ANOMALY = 1
LABEL_NAMES = {NORMAL: "normal", ANOMALY: "anomaly"}
LABEL_CODES = {"normal": NORMAL, "anomaly": ANOMALY}

DATASET_FORMAT_VERSION = 1

#: shape primitives drawn by each family; families may only be paired when
#: their primitive sets are disjoint
SHAPE_FAMILIES = {
    "discs": ("disc",),
    "crosses": ("cross",),
    "hollow_squares": ("hollow_square",),
    "crosses_and_squares": ("cross", "hollow_square"),
}

SYNTHETIC_RESOLUTIONS = (8, 16, 32)


class DatasetFormatError(ValueError):
    """Raised when an on-disk dataset directory is malformed."""


@dataclass
class LabeledDataset:
    """Images with per-sample labels and stable source identifiers."""

    images: np.ndarray
    labels: np.ndarray
    source_ids: list[str]
    value_range: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float32)
        if self.images.ndim != 4:
            raise ValueError(f"images must be (n, h, w, c), got shape {self.images.shape}")
        if self.images.shape[1] != self.images.shape[2]:
            raise ValueError("images must be square")
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.labels.ndim != 1 or len(self.labels) != len(self.images):
            raise ValueError("labels must be one per image")
        bad = set(np.unique(self.labels)) - set(LABEL_NAMES)
        if bad:
            raise ValueError(f"unknown label codes {sorted(bad)}")
        self.source_ids = [str(s) for s in self.source_ids]
        if len(self.source_ids) != len(self.images):
            raise ValueError("source_ids must be one per image")
        self.value_range = (float(self.value_range[0]), float(self.value_range[1]))
        check_value_range(self.images, self.value_range)

    def __len__(self) -> int:
        return len(self.images)

    @property
    def resolution(self) -> int:
        return self.images.shape[1]

    @property
    def channels(self) -> int:
        return self.images.shape[3]

    def count(self, label: int) -> int:
        return int(np.sum(self.labels == label))

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices)
        return LabeledDataset(
            images=self.images[idx],
            labels=self.labels[idx],
            source_ids=[self.source_ids[i] for i in idx],
            value_range=self.value_range,
        )

    def of_label(self, label: int) -> "LabeledDataset":
        return self.subset(np.nonzero(self.labels == label)[0])


@dataclass
class TrainStream:
    """Label-free image sequence handed to training code."""

    images: np.ndarray
    value_range: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float32)
        if self.images.ndim != 4:
            raise ValueError(f"images must be (n, h, w, c), got shape {self.images.shape}")
        self.value_range = (float(self.value_range[0]), float(self.value_range[1]))
        check_value_range(self.images, self.value_range)

    def __len__(self) -> int:
        return len(self.images)

    @property
    def resolution(self) -> int:
        return self.images.shape[1]

    @property
    def channels(self) -> int:
        return self.images.shape[3]


def concat_datasets(*parts: LabeledDataset) -> LabeledDataset:
    if not parts:
        raise ValueError("need at least one dataset")
    return LabeledDataset(
        images=np.concatenate([p.images for p in parts]),
        labels=np.concatenate([p.labels for p in parts]),
        source_ids=[s for p in parts for s in p.source_ids],
        value_range=parts[0].value_range,
    )


# ---------------------------------------------------------------------------
# contamination


@dataclass(frozen=True)
class ContaminationSpec:
    """Mixing recipe: fraction of the final stream that is anomalous.

    n_normal of None means use every sample in the normal pool.
    """

    gamma: float
    n_normal: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.n_normal is not None and self.n_normal <= 0:
            raise ValueError("n_normal must be positive when given")


@dataclass
class ContaminationAudit:
    """What went into a stream. Kept apart from the stream on purpose."""

    gamma: float
    n_normal: int
    n_anomaly: int
    seed: int
    anomaly_positions: np.ndarray
    source_ids: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        payload = asdict(self)
        payload["anomaly_positions"] = [int(i) for i in self.anomaly_positions]
        return json.dumps(payload, indent=2, sort_keys=True)


def anomaly_count(gamma: float, n_normal: int) -> int:
    """Number of anomalies that makes the anomalous fraction closest to gamma.

    Rounds half away from zero, so e.g. a 0.5 remainder rounds up.
    """
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    if n_normal < 0:
        raise ValueError("n_normal must be nonnegative")
    if gamma == 0.0:
        return 0
    exact = gamma * n_normal / (1.0 - gamma)
    return int(math.floor(exact + 0.5))


def contaminate(
    normals: LabeledDataset,
    anomalies: LabeledDataset | None,
    spec: ContaminationSpec,
) -> tuple[TrainStream, ContaminationAudit]:
    """Blend anomalies into a normal pool and shuffle.

    Both pools must be single-label. The returned stream has no labels;
    the audit records which stream positions hold anomalies.
    """
    if np.any(normals.labels != NORMAL):
        raise ValueError("normal pool contains non-normal samples")
    n_normal = len(normals) if spec.n_normal is None else spec.n_normal
    if n_normal > len(normals):
        raise ValueError(f"normal pool has {len(normals)} samples, need {n_normal}")
    n_anomaly = anomaly_count(spec.gamma, n_normal)
    if n_anomaly > 0:
        if anomalies is None:
            raise ValueError("gamma > 0 requires an anomaly pool")
        if np.any(anomalies.labels != ANOMALY):
            raise ValueError("anomaly pool contains non-anomalous samples")
        if n_anomaly > len(anomalies):
            raise ValueError(
                f"anomaly pool has {len(anomalies)} samples, need {n_anomaly}"
            )

    rng = np.random.default_rng(spec.seed)
    if n_normal == len(normals):
        normal_idx = np.arange(n_normal)
    else:
        normal_idx = rng.choice(len(normals), size=n_normal, replace=False)
    picked = [normals.subset(normal_idx)]
    if n_anomaly > 0:
        anomaly_idx = rng.choice(len(anomalies), size=n_anomaly, replace=False)
        picked.append(anomalies.subset(anomaly_idx))
    pool = concat_datasets(*picked)

    order = rng.permutation(len(pool))
    positions = np.nonzero(order >= n_normal)[0]
    stream = TrainStream(images=pool.images[order], value_range=pool.value_range)
    audit = ContaminationAudit(
        gamma=spec.gamma,
        n_normal=n_normal,
        n_anomaly=n_anomaly,
        seed=spec.seed,
        anomaly_positions=positions,
        source_ids=[pool.source_ids[i] for i in order],
    )
    return stream, audit


# ---------------------------------------------------------------------------
# synthetic shapes


@dataclass(frozen=True)
class SyntheticConfig:
    """Recipe for one rendered split of shape images in [-1, 1]."""

    resolution: int = 16
    normal_family: str = "discs"
    anomaly_family: str = "crosses_and_squares"
    n_normal: int = 1000
    n_anomaly: int = 0
    noise_level: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.resolution not in SYNTHETIC_RESOLUTIONS:
            raise ValueError(
                f"resolution must be one of {SYNTHETIC_RESOLUTIONS}, got {self.resolution}"
            )
        for family in (self.normal_family, self.anomaly_family):
            if family not in SHAPE_FAMILIES:
                raise ValueError(f"unknown shape family {family!r}")
        shared = set(SHAPE_FAMILIES[self.normal_family]) & set(
            SHAPE_FAMILIES[self.anomaly_family]
        )
        if shared:
            raise ValueError(
                f"normal and anomaly families overlap on {sorted(shared)}"
            )
        if self.n_normal < 0 or self.n_anomaly < 0:
            raise ValueError("sample counts must be nonnegative")
        if self.noise_level < 0:
            raise ValueError("noise_level must be nonnegative")


def _soft_step(t: np.ndarray, edge: float = 1.0) -> np.ndarray:
    """0 outside, 1 inside, linear ramp of width ``edge`` across t = 0."""
    return np.clip(0.5 + t / edge, 0.0, 1.0)


def _pixel_grid(res: int):
    yy, xx = np.mgrid[0:res, 0:res].astype(np.float64) + 0.5
    return xx, yy


def _rotated_offsets(xx, yy, cx, cy, angle):
    dx, dy = xx - cx, yy - cy
    c, s = math.cos(angle), math.sin(angle)
    return c * dx + s * dy, -s * dx + c * dy


def _render_disc(res: int, rng: np.random.Generator) -> np.ndarray:
    xx, yy = _pixel_grid(res)
    cx, cy = res / 2 + rng.uniform(-res / 8, res / 8, size=2)
    radius = rng.uniform(0.20, 0.32) * res
    dist = np.hypot(xx - cx, yy - cy)
    return _soft_step(radius - dist)


def _render_cross(res: int, rng: np.random.Generator) -> np.ndarray:
    xx, yy = _pixel_grid(res)
    cx, cy = res / 2 + rng.uniform(-res / 10, res / 10, size=2)
    half_width = rng.uniform(0.05, 0.09) * res
    arm = rng.uniform(0.30, 0.45) * res
    angle = rng.uniform(0.0, math.pi / 2)
    u, v = _rotated_offsets(xx, yy, cx, cy, angle)
    bar_a = _soft_step(half_width - np.abs(u)) * _soft_step(arm - np.abs(v))
    bar_b = _soft_step(half_width - np.abs(v)) * _soft_step(arm - np.abs(u))
    return np.maximum(bar_a, bar_b)


def _render_hollow_square(res: int, rng: np.random.Generator) -> np.ndarray:
    xx, yy = _pixel_grid(res)
    cx, cy = res / 2 + rng.uniform(-res / 10, res / 10, size=2)
    half = rng.uniform(0.22, 0.34) * res
    thickness = rng.uniform(0.05, 0.09) * res
    angle = rng.uniform(0.0, math.pi / 2)
    u, v = _rotated_offsets(xx, yy, cx, cy, angle)
    dist = np.maximum(np.abs(u), np.abs(v))
    return _soft_step(half + thickness / 2 - dist) * _soft_step(dist - (half - thickness / 2))


_PRIMITIVE_RENDERERS = {
    "disc": _render_disc,
    "cross": _render_cross,
    "hollow_square": _render_hollow_square,
}


def _render_family(family: str, count: int, res: int, noise: float, rng) -> np.ndarray:
    primitives = SHAPE_FAMILIES[family]
    images = np.empty((count, res, res, 1), dtype=np.float32)
    for i in range(count):
        name = primitives[rng.integers(len(primitives))] if len(primitives) > 1 else primitives[0]
        mask = _PRIMITIVE_RENDERERS[name](res, rng)
        foreground = rng.uniform(0.3, 1.0)
        # lerp from background -1 to the foreground level
        images[i, :, :, 0] = -1.0 + mask * (foreground + 1.0)
    if noise > 0:
        images += rng.normal(0.0, noise, size=images.shape).astype(np.float32)
        np.clip(images, -1.0, 1.0, out=images)
    return images


def generate_synthetic(config: SyntheticConfig) -> LabeledDataset:
    """Render a labeled set of shape images, normals first then anomalies."""
    rng = np.random.default_rng(config.seed)
    parts, labels, ids = [], [], []
    if config.n_normal:
        parts.append(
            _render_family(
                config.normal_family, config.n_normal, config.resolution,
                config.noise_level, rng,
            )
        )
        labels.append(np.full(config.n_normal, NORMAL, dtype=np.uint8))
        ids.extend(f"{config.normal_family}-{i:05d}" for i in range(config.n_normal))
    if config.n_anomaly:
        parts.append(
            _render_family(
                config.anomaly_family, config.n_anomaly, config.resolution,
                config.noise_level, rng,
            )
        )
        labels.append(np.full(config.n_anomaly, ANOMALY, dtype=np.uint8))
        ids.extend(f"{config.anomaly_family}-{i:05d}" for i in range(config.n_anomaly))
    if not parts:
        raise ValueError("nothing to generate: both counts are zero")
    return LabeledDataset(
        images=np.concatenate(parts),
        labels=np.concatenate(labels),
        source_ids=ids,
    )


# ---------------------------------------------------------------------------
# augmentation


def augment_rotations(dataset: LabeledDataset, k: int, seed: int = 0) -> LabeledDataset:
    """Add k randomly rotated copies per image (angles uniform in [0, 2pi)).

    Bilinear resampling, empty corners filled with the image minimum.
    Labels and the original samples are kept; output size is n * (k + 1).
    """
    if k < 0:
        raise ValueError("k must be nonnegative")
    if k == 0:
        return dataset.subset(np.arange(len(dataset)))
    rng = np.random.default_rng(seed)
    images, labels, ids = [], [], []
    lo, hi = dataset.value_range
    for i in range(len(dataset)):
        img = dataset.images[i]
        images.append(img)
        labels.append(dataset.labels[i])
        ids.append(dataset.source_ids[i])
        for j in range(k):
            angle = rng.uniform(0.0, 2.0 * math.pi)
            rotated = ndimage.rotate(
                img,
                math.degrees(angle),
                axes=(1, 0),
                reshape=False,
                order=1,
                mode="constant",
                cval=float(img.min()),
            )
            images.append(np.clip(rotated, lo, hi))
            labels.append(dataset.labels[i])
            ids.append(f"{dataset.source_ids[i]}:rot{j + 1}")
    return LabeledDataset(
        images=np.stack(images),
        labels=np.asarray(labels, dtype=np.uint8),
        source_ids=ids,
        value_range=dataset.value_range,
    )


# ---------------------------------------------------------------------------
# folder ingestion


def ingest_folder(
    path,
    resolution: int,
    channels: int = 1,
    center_crop: bool = False,
) -> LabeledDataset:
    """Load a folder of PNG or JPEG images described by a manifest.csv.

    The manifest has one ``filename,label`` row per image with labels
    ``normal`` or ``anomaly``. Pixel values are mapped linearly from
    [0, 255] to [-1, 1]. Files that cannot be decoded are skipped with a
    logged warning.
    """
    check_power_of_two_resolution(resolution)
    if channels not in (1, 3):
        raise ValueError(f"channels must be 1 or 3, got {channels}")
    root = Path(path)
    manifest = root / "manifest.csv"
    if not root.is_dir():
        raise FileNotFoundError(f"not a directory: {root}")
    if not manifest.is_file():
        raise FileNotFoundError(f"missing manifest: {manifest}")

    rows = []
    with open(manifest, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (lineno == 1 and [c.strip().lower() for c in row] == ["filename", "label"]):
                continue
            if len(row) != 2:
                raise ValueError(f"{manifest}:{lineno}: expected 'filename,label'")
            filename, label = row[0].strip(), row[1].strip().lower()
            if label not in LABEL_CODES:
                raise ValueError(
                    f"{manifest}:{lineno}: unknown label {label!r}, "
                    f"expected one of {sorted(LABEL_CODES)}"
                )
            rows.append((filename, LABEL_CODES[label]))
    if not rows:
        raise ValueError(f"manifest lists no files: {manifest}")

    mode = "L" if channels == 1 else "RGB"
    images, labels, ids = [], [], []
    skipped = 0
    for filename, label in rows:
        file_path = root / filename
        try:
            with PILImage.open(file_path) as img:
                img = img.convert(mode)
                if center_crop and img.width != img.height:
                    side = min(img.width, img.height)
                    left = (img.width - side) // 2
                    top = (img.height - side) // 2
                    img = img.crop((left, top, left + side, top + side))
                if img.size != (resolution, resolution):
                    img = img.resize((resolution, resolution), PILImage.BILINEAR)
                arr = np.asarray(img, dtype=np.float64)
        except (OSError, ValueError):
            skipped += 1
            continue
        if arr.ndim == 2:
            arr = arr[:, :, None]
        images.append((arr / 255.0 * 2.0 - 1.0).astype(np.float32))
        labels.append(label)
        ids.append(filename)
    if skipped:
        logger.warning("skipped %d undecodable file(s) under %s", skipped, root)
    if not images:
        raise ValueError(f"no decodable images under {root}")
    return LabeledDataset(
        images=np.stack(images),
        labels=np.asarray(labels, dtype=np.uint8),
        source_ids=ids,
    )


# ---------------------------------------------------------------------------
# on-disk dataset directories


def export_dataset(
    path,
    splits: dict[str, LabeledDataset | TrainStream],
    seed: int | None = None,
    gamma: float | None = None,
    extra: dict | None = None,
) -> None:
    """Write splits as raw little-endian float32 tensors plus metadata.

    Labeled splits additionally contribute rows to a single labels.csv;
    unlabeled train streams stay label-free on disk too.
    """
    if not splits:
        raise ValueError("need at least one split")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)

    resolutions = {s.resolution for s in splits.values()}
    chans = {s.channels for s in splits.values()}
    if len(resolutions) != 1 or len(chans) != 1:
        raise ValueError("all splits must share one resolution and channel count")

    meta = {
        "format_version": DATASET_FORMAT_VERSION,
        "resolution": resolutions.pop(),
        "channels": chans.pop(),
        "value_range": list(next(iter(splits.values())).value_range),
        "seed": seed,
        "gamma": gamma,
        "counts": {name: len(s) for name, s in splits.items()},
        "splits": {},
    }
    if extra:
        meta.update(extra)

    label_rows = []
    for name, split in splits.items():
        filename = f"{name}.f32"
        arr = np.ascontiguousarray(split.images, dtype="<f4")
        (out / filename).write_bytes(arr.tobytes())
        labeled = isinstance(split, LabeledDataset)
        meta["splits"][name] = {
            "file": filename,
            "count": len(split),
            "shape": list(split.images.shape),
            "labeled": labeled,
        }
        if labeled:
            for sid, lab in zip(split.source_ids, split.labels):
                label_rows.append((name, sid, LABEL_NAMES[int(lab)]))

    if label_rows:
        with open(out / "labels.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["split", "source_id", "label"])
            writer.writerows(label_rows)

    with open(out / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_dataset_meta(path) -> dict:
    meta_path = Path(path) / "meta.json"
    if not meta_path.is_file():
        raise FileNotFoundError(f"missing dataset metadata: {meta_path}")
    with open(meta_path) as fh:
        meta = json.load(fh)
    version = meta.get("format_version")
    if version != DATASET_FORMAT_VERSION:
        raise DatasetFormatError(
            f"unsupported dataset format_version {version!r}, "
            f"expected {DATASET_FORMAT_VERSION}"
        )
    return meta


def load_dataset(path, split: str) -> LabeledDataset | TrainStream:
    """Load one split from an exported dataset directory."""
    root = Path(path)
    meta = read_dataset_meta(root)
    if split not in meta["splits"]:
        raise KeyError(f"dataset has no split {split!r}, found {sorted(meta['splits'])}")
    entry = meta["splits"][split]
    file_path = root / entry["file"]
    if not file_path.is_file():
        raise FileNotFoundError(f"missing split tensor: {file_path}")
    shape = tuple(entry["shape"])
    raw = file_path.read_bytes()
    expected = int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise DatasetFormatError(
            f"{file_path} holds {len(raw)} bytes, expected {expected}"
        )
    images = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    value_range = tuple(meta.get("value_range", (-1.0, 1.0)))
    if not entry["labeled"]:
        return TrainStream(images=images, value_range=value_range)

    labels_path = root / "labels.csv"
    if not labels_path.is_file():
        raise DatasetFormatError(f"labeled split {split!r} but no labels.csv in {root}")
    labels, ids = [], []
    with open(labels_path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            if row["split"] != split:
                continue
            ids.append(row["source_id"])
            labels.append(LABEL_CODES[row["label"]])
    if len(labels) != entry["count"]:
        raise DatasetFormatError(
            f"labels.csv lists {len(labels)} rows for split {split!r}, "
            f"expected {entry['count']}"
        )
    return LabeledDataset(
        images=images,
        labels=np.asarray(labels, dtype=np.uint8),
        source_ids=ids,
        value_range=value_range,
    )


# ---------------------------------------------------------------------------
# experiment corpora


@dataclass(frozen=True)
class CorpusConfig:
    """Recipe for a full experiment corpus: train pools plus a test split."""

    resolution: int = 16
    normal_family: str = "discs"
    anomaly_family: str = "crosses_and_squares"
    train_normal: int = 2000
    train_anomaly_pool: int = 200
    test_normal: int = 256
    test_anomaly: int = 256
    noise_level: float = 0.05
    rotations: int = 0
    seed: int = 0

    def __post_init__(self):
        # reuse the split-level validation
        SyntheticConfig(
            resolution=self.resolution,
            normal_family=self.normal_family,
            anomaly_family=self.anomaly_family,
            n_normal=self.train_normal,
            n_anomaly=self.train_anomaly_pool,
            noise_level=self.noise_level,
            seed=self.seed,
        )
        if min(self.train_normal, self.test_normal, self.test_anomaly) <= 0:
            raise ValueError("train_normal, test_normal and test_anomaly must be positive")
        if self.rotations < 0:
            raise ValueError("rotations must be nonnegative")


@dataclass
class Corpus:
    """Single-label training pools plus a labeled evaluation split."""

    train_normals: LabeledDataset
    train_anomalies: LabeledDataset
    test: LabeledDataset


def build_corpus(config: CorpusConfig) -> Corpus:
    """Render disjoint train pools and a test split from one seed."""

    def render(family, count, tag, as_label):
        other = (
            config.anomaly_family if as_label == NORMAL else config.normal_family
        )
        split = SyntheticConfig(
            resolution=config.resolution,
            normal_family=family if as_label == NORMAL else other,
            anomaly_family=family if as_label == ANOMALY else other,
            n_normal=count if as_label == NORMAL else 0,
            n_anomaly=count if as_label == ANOMALY else 0,
            noise_level=config.noise_level,
            seed=child_seed(config.seed, "corpus", tag),
        )
        data = generate_synthetic(split)
        data.source_ids = [f"{tag}/{s}" for s in data.source_ids]
        return data

    train_normals = render(config.normal_family, config.train_normal, "train-n", NORMAL)
    train_anomalies = render(
        config.anomaly_family, config.train_anomaly_pool, "train-a", ANOMALY
    )
    if config.rotations:
        train_normals = augment_rotations(
            train_normals, config.rotations, child_seed(config.seed, "rot", "n")
        )
        train_anomalies = augment_rotations(
            train_anomalies, config.rotations, child_seed(config.seed, "rot", "a")
        )
    test = concat_datasets(
        render(config.normal_family, config.test_normal, "test-n", NORMAL),
        render(config.anomaly_family, config.test_anomaly, "test-a", ANOMALY),
    )
    return Corpus(train_normals=train_normals, train_anomalies=train_anomalies, test=test)
