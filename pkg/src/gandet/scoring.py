"""Anomaly scores computed from a trained generator/encoder pair.

A query is encoded, decoded back, and judged by two signals: how far the
reconstruction is from the query in image space, and how far the encoded
vector sits from the latent origin. Anomalous inputs reconstruct worse
and, because the prior is unit length, tend to be encoded closer to the
origin, so both signals rise.

Scoring never touches the critic; a checkpoint with the critic stripped
scores identically.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import models
from .validation import as_image_batch, as_single_image

#: below this spread an image is treated as constant and normalizes to zeros
MINMAX_DEGENERATE_SPREAD = 1e-12

SCORE_VARIANTS = ("l_n", "l_r", "l_o", "combined")

#: csv header for score tables
SCORE_CSV_COLUMNS = ("source_id", "L_n", "L_r", "L_o", "a", "is_anomaly")


@dataclass(frozen=True)
class ScoreConfig:
    """Weighting and decision threshold for the combined score.

    weight is the convex coefficient on the normalized image residual;
    the remainder goes to the origin-distance term. threshold is the
    decision boundary: strictly greater means anomalous.
    """

    weight: float = 0.05
    threshold: float = 0.0
    variants: tuple[str, ...] = SCORE_VARIANTS

    def __post_init__(self):
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError(f"weight must lie in [0, 1], got {self.weight}")
        unknown = set(self.variants) - set(SCORE_VARIANTS)
        if unknown:
            raise ValueError(
                f"unknown score variants {sorted(unknown)}, expected {SCORE_VARIANTS}"
            )
        if not self.variants:
            raise ValueError("variants must not be empty")


@dataclass
class ScoreReport:
    """Everything produced while scoring one query."""

    source_id: str
    latent: np.ndarray
    reconstruction: np.ndarray
    residual: float
    raw_residual: float
    origin_distance: float
    score: float
    is_anomaly: bool

    def variant_value(self, variant: str) -> float:
        values = {
            "l_n": self.residual,
            "l_r": self.raw_residual,
            "l_o": self.origin_distance,
            "combined": self.score,
        }
        if variant not in values:
            raise ValueError(f"unknown score variant {variant!r}")
        return values[variant]


def minmax_normalize(image) -> np.ndarray:
    """Rescale a tensor to [0, 1] by its global minimum and maximum.

    A (near-)constant input maps to all zeros rather than dividing by a
    vanishing spread.
    """
    arr = np.asarray(image, dtype=np.float64)
    lo = arr.min()
    spread = arr.max() - lo
    if spread < MINMAX_DEGENERATE_SPREAD:
        return np.zeros_like(arr)
    return (arr - lo) / spread


def residual_normalized(query, reconstruction) -> float:
    """Euclidean distance of min-max normalized tensors over element count.

    Bounded by 1/sqrt(n) for n-element inputs, and invariant to positive
    affine rescaling of either argument.
    """
    q = np.asarray(query, dtype=np.float64)
    r = np.asarray(reconstruction, dtype=np.float64)
    if q.shape != r.shape:
        raise ValueError(f"shape mismatch: {q.shape} vs {r.shape}")
    if q.size == 0:
        raise ValueError("empty input")
    diff = minmax_normalize(q) - minmax_normalize(r)
    return float(np.linalg.norm(diff.ravel()) / q.size)


def residual_raw(query, reconstruction) -> float:
    """Plain Euclidean distance, no normalization of any kind."""
    q = np.asarray(query, dtype=np.float64)
    r = np.asarray(reconstruction, dtype=np.float64)
    if q.shape != r.shape:
        raise ValueError(f"shape mismatch: {q.shape} vs {r.shape}")
    return float(np.linalg.norm((q - r).ravel()))


def origin_distance(latent) -> float:
    """Negated latent norm over sqrt(dim); always <= 0.

    Encodings near the origin give values near zero, which reads as more
    anomalous once combined.
    """
    z = np.asarray(latent, dtype=np.float64).ravel()
    if z.size == 0:
        raise ValueError("empty latent")
    return float(-np.linalg.norm(z) / np.sqrt(z.size))


def combine(residual: float, origin: float, weight: float) -> float:
    """Convex blend of the normalized residual and the origin distance."""
    if not 0.0 <= weight <= 1.0:
        raise ValueError(f"weight must lie in [0, 1], got {weight}")
    return weight * residual + (1.0 - weight) * origin


def score_batch(
    bundle: models.ModelBundle,
    images,
    config: ScoreConfig = ScoreConfig(),
    source_ids: list[str] | None = None,
) -> list[ScoreReport]:
    """Score a batch of queries at the bundle's current resolution."""
    batch = as_image_batch(
        images,
        resolution=bundle.phase.resolution,
        channels=bundle.image_channels,
    )
    if source_ids is None:
        source_ids = [f"query-{i:05d}" for i in range(len(batch))]
    if len(source_ids) != len(batch):
        raise ValueError("source_ids must match the batch size")

    latents = models.encode(bundle, batch)
    recons = models.generate(bundle, latents)
    reports = []
    for i in range(len(batch)):
        res_n = residual_normalized(batch[i], recons[i])
        res_r = residual_raw(batch[i], recons[i])
        origin = origin_distance(latents[i])
        score = combine(res_n, origin, config.weight)
        reports.append(
            ScoreReport(
                source_id=source_ids[i],
                latent=latents[i],
                reconstruction=recons[i],
                residual=res_n,
                raw_residual=res_r,
                origin_distance=origin,
                score=score,
                is_anomaly=bool(score > config.threshold),
            )
        )
    return reports


def anomaly_score(
    bundle: models.ModelBundle,
    query,
    config: ScoreConfig = ScoreConfig(),
    source_id: str = "query",
) -> ScoreReport:
    """Score a single query image."""
    single = as_single_image(
        query, resolution=bundle.phase.resolution, channels=bundle.image_channels
    )
    return score_batch(bundle, single[None], config, [source_id])[0]


def write_scores_csv(reports: list[ScoreReport], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORE_CSV_COLUMNS)
        for r in reports:
            writer.writerow(
                [
                    r.source_id,
                    f"{r.residual:.17g}",
                    f"{r.raw_residual:.17g}",
                    f"{r.origin_distance:.17g}",
                    f"{r.score:.17g}",
                    "true" if r.is_anomaly else "false",
                ]
            )


def read_scores_csv(path) -> list[dict]:
    """Read a scores table back as dicts with parsed floats and booleans."""
    rows = []
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(SCORE_CSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"scores table lacks columns {sorted(missing)}")
        for row in reader:
            rows.append(
                {
                    "source_id": row["source_id"],
                    "L_n": float(row["L_n"]),
                    "L_r": float(row["L_r"]),
                    "L_o": float(row["L_o"]),
                    "a": float(row["a"]),
                    "is_anomaly": row["is_anomaly"] == "true",
                }
            )
    return rows
