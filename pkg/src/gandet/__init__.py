"""Contamination-robust GAN anomaly detection.

A progressively grown Wasserstein GAN with gradient penalty, an encoder
trained jointly with the generator, and an anomaly score that combines a
normalized reconstruction residual with the encoded vector's distance
from the latent origin.
"""

from .datasets import (
    ANOMALY,
    NORMAL,
    ContaminationSpec,
    Corpus,
    CorpusConfig,
    LabeledDataset,
    SyntheticConfig,
    TrainStream,
    anomaly_count,
    augment_rotations,
    build_corpus,
    contaminate,
    export_dataset,
    generate_synthetic,
    ingest_folder,
    load_dataset,
)
from .estimator import GanAnomalyDetector
from .evaluation import (
    SweepPlan,
    SweepResult,
    compute_roc,
    latent_analysis,
    run_sweep,
)
from .models import (
    GrowthPhase,
    ModelBundle,
    ModelConfig,
    NetworkSpec,
    checkpoint_load,
    checkpoint_save,
    discriminate,
    encode,
    generate,
    init_bundle,
    sample_prior,
)
from .scoring import (
    ScoreConfig,
    ScoreReport,
    anomaly_score,
    minmax_normalize,
    origin_distance,
    residual_normalized,
    residual_raw,
    score_batch,
)
from .training import (
    JOINT_IMAGE_SPACE,
    JOINT_LATENT_SPACE,
    POST_HOC,
    TrainConfig,
    TrainingDiverged,
    train,
)

__version__ = "0.1.0"
