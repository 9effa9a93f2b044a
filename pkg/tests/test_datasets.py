"""Synthesis, ingestion, augmentation, contamination, and dataset IO tests."""

import json
import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image as PILImage

from gandet.datasets import (
    ANOMALY,
    NORMAL,
    ContaminationSpec,
    DatasetFormatError,
    LabeledDataset,
    SyntheticConfig,
    TrainStream,
    anomaly_count,
    augment_rotations,
    concat_datasets,
    contaminate,
    export_dataset,
    generate_synthetic,
    ingest_folder,
    load_dataset,
)


# ---------------------------------------------------------------------------
# contamination counts


def test_anomaly_count_zero_gamma():
    assert anomaly_count(0.0, 1000) == 0


def test_anomaly_count_two_percent_of_1000():
    # 0.02 * 1000 / 0.98 = 20.408... -> 20
    assert anomaly_count(0.02, 1000) == 20


def test_anomaly_count_two_percent_of_525657():
    assert anomaly_count(0.02, 525657) == 10728


def test_anomaly_count_rounds_half_away_from_zero():
    # gamma/(1-gamma) = 1/3 exactly; 1.5 must round to 2, not banker's 1
    assert anomaly_count(0.25, 6) == 2
    assert anomaly_count(0.25, 3) == 1


@given(st.floats(0.0, 0.5), st.integers(1, 10**6))
def test_anomaly_count_fraction_close_to_gamma(gamma, n_normal):
    n_a = anomaly_count(gamma, n_normal)
    total = n_normal + n_a
    assert abs(n_a / total - gamma) <= 1.0 / total


def test_contaminate_zero_gamma_is_shuffled_normals():
    data = generate_synthetic(SyntheticConfig(resolution=8, n_normal=20, seed=5))
    stream, audit = contaminate(data, None, ContaminationSpec(gamma=0.0, seed=3))
    assert len(stream) == 20
    assert audit.n_anomaly == 0 and len(audit.anomaly_positions) == 0
    # same multiset of images, in some order
    got = np.sort(stream.images.reshape(20, -1), axis=0)
    want = np.sort(data.images.reshape(20, -1), axis=0)
    np.testing.assert_array_equal(got, want)


def test_contaminate_blends_and_audits_positions():
    normals = generate_synthetic(SyntheticConfig(resolution=8, n_normal=49, seed=1))
    anomalies = generate_synthetic(
        SyntheticConfig(resolution=8, n_normal=0, n_anomaly=10, seed=2)
    )
    stream, audit = contaminate(
        normals, anomalies, ContaminationSpec(gamma=0.02, seed=11)
    )
    assert audit.n_normal == 49
    assert audit.n_anomaly == anomaly_count(0.02, 49) == 1
    assert len(stream) == 50
    # the audited positions hold exactly the anomalous images
    anomaly_flat = anomalies.images.reshape(10, -1)
    for pos in audit.anomaly_positions:
        row = stream.images[pos].reshape(-1)
        assert any(np.array_equal(row, a) for a in anomaly_flat)
    # and labels never leak into the stream object
    assert not hasattr(stream, "labels")
    assert not hasattr(stream, "source_ids")


def test_contaminate_requires_single_label_pools():
    mixed = generate_synthetic(
        SyntheticConfig(resolution=8, n_normal=4, n_anomaly=4, seed=0)
    )
    with pytest.raises(ValueError, match="non-normal"):
        contaminate(mixed, None, ContaminationSpec(gamma=0.0))


def test_contaminate_pool_exhaustion_raises():
    normals = generate_synthetic(SyntheticConfig(resolution=8, n_normal=100, seed=1))
    anomalies = generate_synthetic(
        SyntheticConfig(resolution=8, n_normal=0, n_anomaly=1, seed=2)
    )
    with pytest.raises(ValueError, match="anomaly pool"):
        contaminate(normals, anomalies, ContaminationSpec(gamma=0.1, seed=0))


def test_contaminate_deterministic():
    normals = generate_synthetic(SyntheticConfig(resolution=8, n_normal=30, seed=1))
    anomalies = generate_synthetic(
        SyntheticConfig(resolution=8, n_normal=0, n_anomaly=10, seed=2)
    )
    spec = ContaminationSpec(gamma=0.1, seed=77)
    s1, a1 = contaminate(normals, anomalies, spec)
    s2, a2 = contaminate(normals, anomalies, spec)
    np.testing.assert_array_equal(s1.images, s2.images)
    np.testing.assert_array_equal(a1.anomaly_positions, a2.anomaly_positions)


def test_contamination_spec_validation():
    with pytest.raises(ValueError):
        ContaminationSpec(gamma=1.0)
    with pytest.raises(ValueError):
        ContaminationSpec(gamma=-0.1)


# ---------------------------------------------------------------------------
# synthetic rendering


def test_generate_synthetic_counts_and_labels():
    data = generate_synthetic(
        SyntheticConfig(resolution=16, n_normal=100, n_anomaly=0, seed=1)
    )
    assert len(data) == 100
    assert data.count(NORMAL) == 100 and data.count(ANOMALY) == 0


def test_generate_synthetic_element_count():
    data = generate_synthetic(
        SyntheticConfig(resolution=16, n_normal=500, n_anomaly=500, seed=3)
    )
    assert data.images.shape == (1000, 16, 16, 1)
    assert all(img.size == 256 for img in data.images)


def test_generate_synthetic_deterministic():
    cfg = SyntheticConfig(resolution=8, n_normal=20, n_anomaly=20, seed=7)
    d1, d2 = generate_synthetic(cfg), generate_synthetic(cfg)
    np.testing.assert_array_equal(d1.images, d2.images)
    np.testing.assert_array_equal(d1.labels, d2.labels)
    assert d1.source_ids == d2.source_ids


def test_generate_synthetic_value_range_and_dtype():
    data = generate_synthetic(
        SyntheticConfig(resolution=32, n_normal=30, n_anomaly=30, noise_level=0.2, seed=9)
    )
    assert data.images.dtype == np.float32
    assert data.images.min() >= -1.0 and data.images.max() <= 1.0


def test_generate_synthetic_shapes_have_foreground():
    data = generate_synthetic(
        SyntheticConfig(resolution=16, n_normal=10, n_anomaly=10, noise_level=0.0, seed=4)
    )
    for img in data.images:
        assert img.max() > -0.5  # something brighter than background
        assert img.min() < -0.8  # background stays dark


def test_synthetic_config_rejects_overlapping_families():
    with pytest.raises(ValueError, match="overlap"):
        SyntheticConfig(normal_family="crosses", anomaly_family="crosses_and_squares")


def test_synthetic_config_rejects_unknown_resolution():
    with pytest.raises(ValueError):
        SyntheticConfig(resolution=12)


# ---------------------------------------------------------------------------
# rotation augmentation


def _small_labeled(n=6, res=8, seed=2):
    return generate_synthetic(
        SyntheticConfig(resolution=res, n_normal=n // 2, n_anomaly=n - n // 2, seed=seed)
    )


def test_augment_k0_is_identity():
    data = _small_labeled()
    out = augment_rotations(data, 0, seed=1)
    np.testing.assert_array_equal(out.images, data.images)
    np.testing.assert_array_equal(out.labels, data.labels)
    assert out.source_ids == data.source_ids


def test_augment_k3_quadruples():
    data = generate_synthetic(SyntheticConfig(resolution=8, n_normal=100, seed=3))
    out = augment_rotations(data, 3, seed=5)
    assert len(out) == 400


def test_augment_preserves_labels_and_range():
    data = _small_labeled(n=8)
    out = augment_rotations(data, 2, seed=9)
    assert len(out) == 24
    np.testing.assert_array_equal(out.labels.reshape(-1, 3)[:, 0], data.labels)
    for i in range(len(data)):
        for j in range(3):
            assert out.labels[3 * i + j] == data.labels[i]
    assert out.images.min() >= -1.0 and out.images.max() <= 1.0


def test_augment_zero_angle_rotation_is_pixel_identical(monkeypatch):
    data = _small_labeled(n=2)
    # force every drawn angle to zero through the rng
    class ZeroRng:
        def uniform(self, lo, hi):
            return 0.0

    monkeypatch.setattr("gandet.datasets.np.random.default_rng", lambda seed: ZeroRng())
    out = augment_rotations(data, 1, seed=0)
    np.testing.assert_array_equal(out.images[1], data.images[0])
    np.testing.assert_array_equal(out.images[3], data.images[1])


def test_augment_rejects_negative_k():
    with pytest.raises(ValueError):
        augment_rotations(_small_labeled(), -1)


# ---------------------------------------------------------------------------
# folder ingestion


def _write_png(path, array):
    PILImage.fromarray(array).save(path)


def test_ingest_folder_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    names = []
    for i in range(10):
        arr = rng.integers(0, 256, size=(16, 16), dtype=np.uint8)
        name = f"img{i}.png"
        _write_png(tmp_path / name, arr)
        names.append(name)
    manifest = "\n".join(
        f"{n},{'normal' if i < 6 else 'anomaly'}" for i, n in enumerate(names)
    )
    (tmp_path / "manifest.csv").write_text(manifest + "\n")

    data = ingest_folder(tmp_path, resolution=16, channels=1)
    assert len(data) == 10
    assert data.count(NORMAL) == 6 and data.count(ANOMALY) == 4
    assert data.images.shape == (10, 16, 16, 1)
    assert data.images.min() >= -1.0 and data.images.max() <= 1.0


def test_ingest_pixel_value_mapping(tmp_path):
    arr = np.zeros((8, 8), dtype=np.uint8)
    arr[0, 0] = 255
    arr[0, 1] = 128
    _write_png(tmp_path / "a.png", arr)
    (tmp_path / "manifest.csv").write_text("a.png,normal\n")
    data = ingest_folder(tmp_path, resolution=8, channels=1)
    img = data.images[0, :, :, 0]
    assert img[1, 1] == pytest.approx(-1.0, abs=1e-6)
    assert img[0, 0] == pytest.approx(1.0, abs=1e-6)
    assert img[0, 1] == pytest.approx(2.0 * (128.0 / 255.0) - 1.0, abs=1e-6)
    assert img[0, 1] == pytest.approx(0.00392, abs=1e-5)


def test_ingest_skips_undecodable_with_warning(tmp_path, caplog):
    arr = np.zeros((8, 8), dtype=np.uint8)
    _write_png(tmp_path / "good.png", arr)
    (tmp_path / "bad.png").write_bytes(b"this is not a png")
    (tmp_path / "manifest.csv").write_text("good.png,normal\nbad.png,anomaly\n")
    with caplog.at_level(logging.WARNING, logger="gandet.datasets"):
        data = ingest_folder(tmp_path, resolution=8, channels=1)
    assert len(data) == 1
    assert "skipped 1" in caplog.text


def test_ingest_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError, match="manifest"):
        ingest_folder(tmp_path, resolution=8)


def test_ingest_unknown_label(tmp_path):
    _write_png(tmp_path / "a.png", np.zeros((8, 8), dtype=np.uint8))
    (tmp_path / "manifest.csv").write_text("a.png,weird\n")
    with pytest.raises(ValueError, match="unknown label"):
        ingest_folder(tmp_path, resolution=8)


def test_ingest_resizes_and_rgb(tmp_path):
    arr = np.zeros((32, 32, 3), dtype=np.uint8)
    arr[:, :, 0] = 200
    _write_png(tmp_path / "c.png", arr)
    (tmp_path / "manifest.csv").write_text("c.png,normal\n")
    data = ingest_folder(tmp_path, resolution=16, channels=3)
    assert data.images.shape == (1, 16, 16, 3)


# ---------------------------------------------------------------------------
# dataset directory round trip


def test_export_and_load_roundtrip(tmp_path):
    test = generate_synthetic(
        SyntheticConfig(resolution=8, n_normal=6, n_anomaly=6, seed=13)
    )
    stream, _ = contaminate(
        test.of_label(NORMAL), None, ContaminationSpec(gamma=0.0, seed=0)
    )
    out = tmp_path / "ds"
    export_dataset(out, {"train": stream, "test": test}, seed=13, gamma=0.0)

    assert (out / "meta.json").is_file()
    assert (out / "train.f32").is_file()
    assert (out / "test.f32").is_file()
    assert (out / "labels.csv").is_file()

    meta = json.loads((out / "meta.json").read_text())
    assert meta["counts"] == {"train": 6, "test": 12}
    assert meta["splits"]["train"]["labeled"] is False
    assert meta["splits"]["test"]["labeled"] is True

    train_loaded = load_dataset(out, "train")
    assert isinstance(train_loaded, TrainStream)
    np.testing.assert_array_equal(train_loaded.images, stream.images)

    test_loaded = load_dataset(out, "test")
    assert isinstance(test_loaded, LabeledDataset)
    np.testing.assert_array_equal(test_loaded.images, test.images)
    np.testing.assert_array_equal(test_loaded.labels, test.labels)
    assert test_loaded.source_ids == test.source_ids


def test_export_labels_only_for_labeled_splits(tmp_path):
    stream = TrainStream(images=np.zeros((3, 8, 8, 1), dtype=np.float32))
    export_dataset(tmp_path / "d", {"train": stream})
    assert not (tmp_path / "d" / "labels.csv").exists()


def test_load_dataset_unknown_split(tmp_path):
    stream = TrainStream(images=np.zeros((3, 8, 8, 1), dtype=np.float32))
    export_dataset(tmp_path / "d", {"train": stream})
    with pytest.raises(KeyError):
        load_dataset(tmp_path / "d", "test")


def test_load_dataset_truncated_tensor(tmp_path):
    stream = TrainStream(images=np.zeros((3, 8, 8, 1), dtype=np.float32))
    out = tmp_path / "d"
    export_dataset(out, {"train": stream})
    raw = (out / "train.f32").read_bytes()
    (out / "train.f32").write_bytes(raw[:-4])
    with pytest.raises(DatasetFormatError, match="bytes"):
        load_dataset(out, "train")


def test_load_dataset_version_mismatch(tmp_path):
    stream = TrainStream(images=np.zeros((3, 8, 8, 1), dtype=np.float32))
    out = tmp_path / "d"
    export_dataset(out, {"train": stream})
    meta = json.loads((out / "meta.json").read_text())
    meta["format_version"] = 99
    (out / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(DatasetFormatError, match="format_version"):
        load_dataset(out, "train")


def test_export_deterministic_bytes(tmp_path):
    cfg = SyntheticConfig(resolution=8, n_normal=5, n_anomaly=5, seed=21)
    for name in ("a", "b"):
        data = generate_synthetic(cfg)
        export_dataset(tmp_path / name, {"test": data}, seed=21, gamma=0.0)
    for fname in ("meta.json", "test.f32", "labels.csv"):
        assert (tmp_path / "a" / fname).read_bytes() == (
            tmp_path / "b" / fname
        ).read_bytes(), fname


# ---------------------------------------------------------------------------
# container validation


def test_labeled_dataset_validation():
    with pytest.raises(ValueError, match="one per image"):
        LabeledDataset(
            images=np.zeros((2, 4, 4, 1), dtype=np.float32),
            labels=np.array([0], dtype=np.uint8),
            source_ids=["a", "b"],
        )
    with pytest.raises(ValueError, match="lie in"):
        LabeledDataset(
            images=np.full((1, 4, 4, 1), 2.0, dtype=np.float32),
            labels=np.array([0], dtype=np.uint8),
            source_ids=["a"],
        )


def test_concat_datasets_merges():
    a = _small_labeled(n=4, seed=1)
    b = _small_labeled(n=4, seed=2)
    merged = concat_datasets(a, b)
    assert len(merged) == 8
    assert merged.source_ids[:4] == a.source_ids
