"""ROC analysis, latent-space diagnostics, and the contamination sweep."""

from __future__ import annotations

import csv
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import models, scoring
from .datasets import (
    LABEL_NAMES,
    LABEL_CODES,
    Corpus,
    ContaminationSpec,
    LabeledDataset,
    contaminate,
)
from .models import ModelConfig
from .scoring import ScoreConfig, SCORE_VARIANTS
from .seeding import child_seed
from .training import TrainConfig, train


# ---------------------------------------------------------------------------
# ROC / AUC


@dataclass
class RocResult:
    """Operating points from sweeping the decision threshold.

    points runs from (0, 0) to (1, 1) with one entry per distinct score;
    thresholds[i] is the smallest score still classified anomalous at
    points[i], with +inf for the all-negative corner. Tied scores are
    grouped, so the area equals the pairwise ranking probability with
    half credit for ties.
    """

    points: np.ndarray
    thresholds: np.ndarray
    auc: float
    n_anomalies: int
    n_normals: int


def _coerce_label(label) -> int:
    if isinstance(label, str):
        try:
            return LABEL_CODES[label.strip().lower()]
        except KeyError:
            raise ValueError(f"unknown label {label!r}") from None
    return int(bool(label))


def compute_roc(scored) -> RocResult:
    """Build the ROC curve for (score, label) pairs; anomalies are positive."""
    pairs = list(scored)
    if not pairs:
        raise ValueError("no scored samples")
    scores = np.asarray([s for s, _ in pairs], dtype=np.float64)
    labels = np.asarray([_coerce_label(l) for _, l in pairs], dtype=np.int64)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both an anomalous and a normal sample")

    order = np.argsort(-scores, kind="stable")
    scores, labels = scores[order], labels[order]

    points = [(0.0, 0.0)]
    thresholds = [float("inf")]
    tp = fp = 0
    area2 = 0  # twice the unnormalized trapezoid area, exact in integers
    i = 0
    while i < len(scores):
        j = i
        while j < len(scores) and scores[j] == scores[i]:
            j += 1
        prev_tp, prev_fp = tp, fp
        tp += int(labels[i:j].sum())
        fp += (j - i) - int(labels[i:j].sum())
        area2 += (fp - prev_fp) * (tp + prev_tp)
        points.append((fp / n_neg, tp / n_pos))
        thresholds.append(float(scores[i]))
        i = j

    return RocResult(
        points=np.asarray(points, dtype=np.float64),
        thresholds=np.asarray(thresholds, dtype=np.float64),
        auc=area2 / (2.0 * n_pos * n_neg),
        n_anomalies=n_pos,
        n_normals=n_neg,
    )


def auc_from_reports(reports, labels, variant: str = "combined") -> float:
    values = [r.variant_value(variant) for r in reports]
    return compute_roc(zip(values, labels)).auc


def write_roc_csv(roc: RocResult, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fpr", "tpr", "threshold"])
        for (fpr, tpr), thr in zip(roc.points, roc.thresholds):
            writer.writerow([f"{fpr:.17g}", f"{tpr:.17g}", f"{thr:.17g}"])


# ---------------------------------------------------------------------------
# latent diagnostics


@dataclass
class LatentAnalysis:
    """Encoded test set, summarized: coefficient histograms sharing one set
    of bin edges, per-label norm statistics, and an exact 2D principal
    component projection."""

    latents: np.ndarray
    labels: np.ndarray
    source_ids: list[str]
    norms: np.ndarray
    histogram_edges: np.ndarray
    histogram_counts: dict[int, np.ndarray]
    norm_stats: dict[int, dict[str, float]]
    projection: np.ndarray
    components: np.ndarray


def principal_plane(vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact top-2 principal directions via SVD of the centered matrix.

    Returns (projection, components, mean). Component signs are fixed so
    the largest-magnitude entry of each component is positive, making
    the projection deterministic.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("need a nonempty (n, d) matrix")
    if len(x) == 1:
        # a single point centers to the origin; the plane is arbitrary
        components = np.zeros((2, x.shape[1]))
        return np.zeros((1, 2)), components, x[0].copy()
    mean = x.mean(axis=0)
    centered = x - mean
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    k = min(2, vt.shape[0])
    components = vt[:k]
    if k < 2:
        components = np.vstack([components, np.zeros_like(components[0])])
    for i in range(2):
        pivot = np.argmax(np.abs(components[i]))
        if components[i][pivot] < 0:
            components[i] = -components[i]
    return centered @ components.T, components, mean


def latent_analysis(
    bundle: models.ModelBundle, dataset: LabeledDataset, bins: int = 50
) -> LatentAnalysis:
    if len(dataset) == 0:
        raise ValueError("latent analysis needs at least one sample")
    latents = models.encode(bundle, dataset.images).astype(np.float64)
    norms = np.linalg.norm(latents, axis=1)

    edges = np.histogram_bin_edges(latents.ravel(), bins=bins)
    counts = {}
    stats = {}
    for label in sorted(np.unique(dataset.labels)):
        coeffs = latents[dataset.labels == label].ravel()
        counts[int(label)], _ = np.histogram(coeffs, bins=edges)
        label_norms = norms[dataset.labels == label]
        stats[int(label)] = {
            "mean": float(label_norms.mean()),
            "median": float(np.median(label_norms)),
            "q25": float(np.percentile(label_norms, 25)),
            "q75": float(np.percentile(label_norms, 75)),
            "count": int(len(label_norms)),
        }

    projection, components, _ = principal_plane(latents)
    return LatentAnalysis(
        latents=latents,
        labels=dataset.labels,
        source_ids=dataset.source_ids,
        norms=norms,
        histogram_edges=edges,
        histogram_counts=counts,
        norm_stats=stats,
        projection=projection,
        components=components,
    )


def write_latent_csvs(analysis: LatentAnalysis, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "latent_norms.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source_id", "label", "norm"])
        for sid, lab, norm in zip(analysis.source_ids, analysis.labels, analysis.norms):
            writer.writerow([sid, LABEL_NAMES[int(lab)], f"{norm:.17g}"])
    with open(out / "projection.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source_id", "label", "pc1", "pc2"])
        for sid, lab, (p1, p2) in zip(
            analysis.source_ids, analysis.labels, analysis.projection
        ):
            writer.writerow([sid, LABEL_NAMES[int(lab)], f"{p1:.17g}", f"{p2:.17g}"])
    with open(out / "latent_coeffs.csv", "w", newline="") as fh:
        # raw coefficients, one row per sample, for external embedding tools
        writer = csv.writer(fh)
        dim = analysis.latents.shape[1]
        writer.writerow(["source_id", "label"] + [f"c{i}" for i in range(dim)])
        for sid, lab, vec in zip(analysis.source_ids, analysis.labels, analysis.latents):
            writer.writerow(
                [sid, LABEL_NAMES[int(lab)]] + [f"{v:.17g}" for v in vec]
            )
    with open(out / "latent_histograms.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_left", "bin_right"] + [
            LABEL_NAMES[label] for label in sorted(analysis.histogram_counts)
        ])
        for i in range(len(analysis.histogram_edges) - 1):
            row = [
                f"{analysis.histogram_edges[i]:.17g}",
                f"{analysis.histogram_edges[i + 1]:.17g}",
            ]
            row += [
                str(int(analysis.histogram_counts[label][i]))
                for label in sorted(analysis.histogram_counts)
            ]
            writer.writerow(row)


# ---------------------------------------------------------------------------
# contamination sweep


@dataclass(frozen=True)
class SweepPlan:
    """Grid for the robustness experiment. One model is trained per
    (gamma, encoder_mode, seed) cell and scored under every variant."""

    gammas: tuple[float, ...]
    encoder_modes: tuple[str, ...]
    score_variants: tuple[str, ...] = SCORE_VARIANTS
    seeds: tuple[int, ...] = (0,)

    def __post_init__(self):
        if not (self.gammas and self.encoder_modes and self.score_variants and self.seeds):
            raise ValueError("every grid axis needs at least one entry")
        unknown = set(self.score_variants) - set(SCORE_VARIANTS)
        if unknown:
            raise ValueError(f"unknown score variants {sorted(unknown)}")

    def cells(self):
        for gamma in self.gammas:
            for mode in self.encoder_modes:
                for seed in self.seeds:
                    yield gamma, mode, seed


@dataclass
class SweepCellResult:
    gamma: float
    encoder_mode: str
    seed: int
    auc: dict[str, float] = field(default_factory=dict)
    error: str | None = None


@dataclass
class SweepResult:
    plan: SweepPlan
    cells: list[SweepCellResult]

    def cell(self, gamma, mode, seed) -> SweepCellResult:
        for c in self.cells:
            if (c.gamma, c.encoder_mode, c.seed) == (gamma, mode, seed):
                return c
        raise KeyError((gamma, mode, seed))

    def aucs(self, gamma, mode, variant) -> list[float]:
        """AUC per seed for one grid point, skipping failed cells."""
        return [
            c.auc[variant]
            for c in self.cells
            if c.gamma == gamma and c.encoder_mode == mode and c.error is None
        ]

    def median_auc(self, gamma, mode, variant) -> float:
        values = self.aucs(gamma, mode, variant)
        if not values:
            raise ValueError(f"no completed cells for ({gamma}, {mode})")
        return float(np.median(values))

    def failed(self) -> list[SweepCellResult]:
        return [c for c in self.cells if c.error is not None]


def _run_sweep_cell(payload) -> SweepCellResult:
    """Train and score one grid cell. Module-level so pools can pickle it."""
    (corpus, gamma, mode, seed, train_config, model_config,
     score_config, target_resolution) = payload
    result = SweepCellResult(gamma=gamma, encoder_mode=mode, seed=seed)
    try:
        config = replace(train_config, encoder_mode=mode, seed=seed)
        stream, _ = contaminate(
            corpus.train_normals,
            corpus.train_anomalies if gamma > 0 else None,
            ContaminationSpec(gamma=gamma, seed=child_seed(seed, "contaminate", gamma)),
        )
        bundle, _ = train(stream, config, target_resolution, model_config)
        reports = scoring.score_batch(
            bundle, corpus.test.images, score_config, corpus.test.source_ids
        )
        for variant in SCORE_VARIANTS:
            result.auc[variant] = auc_from_reports(reports, corpus.test.labels, variant)
    except Exception:
        result.error = traceback.format_exc()
    return result


def run_sweep(
    corpus: Corpus,
    plan: SweepPlan,
    train_config: TrainConfig,
    model_config: ModelConfig = ModelConfig(),
    score_config: ScoreConfig = ScoreConfig(),
    jobs: int = 1,
) -> SweepResult:
    """Train once per (gamma, mode, seed) cell and collect per-variant AUCs.

    Cells that raise are recorded with their traceback and the sweep
    continues. Results are ordered by the plan grid regardless of the
    number of worker processes.
    """
    target_resolution = corpus.test.resolution
    payloads = [
        (corpus, gamma, mode, seed, train_config, model_config,
         score_config, target_resolution)
        for gamma, mode, seed in plan.cells()
    ]
    if jobs <= 1:
        cells = [_run_sweep_cell(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_run_sweep_cell, payloads))
    return SweepResult(plan=plan, cells=cells)


def write_sweep_csv(result: SweepResult, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["gamma", "mode", "variant", "seed", "auc", "error"])
        for cell in result.cells:
            if cell.error is not None:
                writer.writerow(
                    [cell.gamma, cell.encoder_mode, "", cell.seed, "",
                     cell.error.strip().splitlines()[-1]]
                )
                continue
            for variant in result.plan.score_variants:
                writer.writerow(
                    [cell.gamma, cell.encoder_mode, variant, cell.seed,
                     f"{cell.auc[variant]:.17g}", ""]
                )


def sweep_summary(result: SweepResult) -> dict:
    """Nested medians: gamma -> mode -> variant -> {per_seed, median}."""
    out: dict = {}
    for gamma in result.plan.gammas:
        gamma_key = f"{gamma:g}"
        out[gamma_key] = {}
        for mode in result.plan.encoder_modes:
            per_mode: dict = {}
            for variant in result.plan.score_variants:
                values = result.aucs(gamma, mode, variant)
                if values:
                    per_mode[variant] = {
                        "per_seed": [float(v) for v in values],
                        "median": float(np.median(values)),
                    }
            out[gamma_key][mode] = per_mode
    return out
