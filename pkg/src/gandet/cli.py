"""Command line harness: data synthesis, training, scoring, evaluation,
contamination sweeps, and report rendering.

Every command takes a single strict JSON config plus an output directory
and writes all artifacts, including the resolved config, into that one
directory. Unknown config keys are rejected by name. Exit codes: 0 on
success, 1 on runtime failure, 2 on config errors, 3 on missing inputs.
Errors are emitted as one JSON object on stderr.

Environment overrides: GANDET_CONFIG, GANDET_OUT, GANDET_SEED and
GANDET_JOBS stand in for the matching options when those are omitted.
"""

import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np
from PIL import Image as PILImage

from . import models, report, scoring
from .datasets import (
    ContaminationSpec,
    CorpusConfig,
    LabeledDataset,
    TrainStream,
    build_corpus,
    contaminate,
    export_dataset,
    ingest_folder,
    load_dataset,
)
from .evaluation import (
    SweepPlan,
    compute_roc,
    latent_analysis,
    run_sweep,
    sweep_summary,
    write_latent_csvs,
    write_roc_csv,
    write_sweep_csv,
)
from .models import ModelConfig
from .scoring import SCORE_VARIANTS, ScoreConfig
from .seeding import child_seed
from .training import JOINT_IMAGE_SPACE, TrainConfig, train, write_train_log

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_MISSING_INPUT = 3


class ConfigError(Exception):
    pass


class MissingInputError(Exception):
    pass


# ---------------------------------------------------------------------------
# per-command config schemas


@dataclass(frozen=True)
class GenDataConfig:
    resolution: int = 16
    normal_family: str = "discs"
    anomaly_family: str = "crosses_and_squares"
    train_normal: int = 2000
    train_anomaly_pool: int = 200
    test_normal: int = 256
    test_anomaly: int = 256
    noise_level: float = 0.05
    rotations: int = 0
    gamma: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class TrainCmdConfig:
    data: str = ""
    split: str = "train"
    target_resolution: int = 0  # 0 means: use the stream resolution
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()


@dataclass(frozen=True)
class ScoreCmdConfig:
    checkpoint: str = ""
    data: str = ""
    split: str = "test"
    score: ScoreConfig = ScoreConfig()
    dump_reconstructions: bool = False


@dataclass(frozen=True)
class EvaluateCmdConfig:
    data: str = ""
    split: str = "test"
    scores: str = ""
    checkpoint: str = ""
    score: ScoreConfig = ScoreConfig()
    latent_bins: int = 50


@dataclass(frozen=True)
class SweepCmdConfig:
    corpus: CorpusConfig = CorpusConfig()
    gammas: tuple = (0.0, 0.02)
    encoder_modes: tuple = (JOINT_IMAGE_SPACE,)
    score_variants: tuple = SCORE_VARIANTS
    seeds: tuple = (0,)
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    score: ScoreConfig = ScoreConfig()


@dataclass(frozen=True)
class ReportCmdConfig:
    run: str = ""


def build_config(cls, data, path="config"):
    """Construct a config dataclass strictly: unknown keys are errors."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must be a JSON object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in fields:
            raise ConfigError(f"unknown config key: {path}.{key}")
    kwargs = {}
    for name, f in fields.items():
        if name not in data:
            continue
        value = data[name]
        if dataclasses.is_dataclass(f.type):
            kwargs[name] = build_config(f.type, value, f"{path}.{name}")
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _apply_seed(cfg, seed):
    if seed is None:
        return cfg
    if isinstance(cfg, GenDataConfig):
        return dataclasses.replace(cfg, seed=seed)
    if isinstance(cfg, TrainCmdConfig):
        return dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, seed=seed))
    if isinstance(cfg, SweepCmdConfig):
        return dataclasses.replace(cfg, corpus=dataclasses.replace(cfg.corpus, seed=seed))
    return cfg


# ---------------------------------------------------------------------------
# command bodies


def _gen_data(cfg: GenDataConfig, out: Path, jobs: int) -> None:
    corpus = build_corpus(
        CorpusConfig(
            resolution=cfg.resolution,
            normal_family=cfg.normal_family,
            anomaly_family=cfg.anomaly_family,
            train_normal=cfg.train_normal,
            train_anomaly_pool=cfg.train_anomaly_pool,
            test_normal=cfg.test_normal,
            test_anomaly=cfg.test_anomaly,
            noise_level=cfg.noise_level,
            rotations=cfg.rotations,
            seed=cfg.seed,
        )
    )
    stream, audit = contaminate(
        corpus.train_normals,
        corpus.train_anomalies if cfg.gamma > 0 else None,
        ContaminationSpec(gamma=cfg.gamma, seed=child_seed(cfg.seed, "contaminate")),
    )
    export_dataset(
        out, {"train": stream, "test": corpus.test}, seed=cfg.seed, gamma=cfg.gamma
    )
    (out / "audit.json").write_text(audit.to_json() + "\n")


def _load_train_stream(cfg: TrainCmdConfig) -> TrainStream:
    if not cfg.data:
        raise ConfigError("config.data must point at a dataset directory")
    split = load_dataset(cfg.data, cfg.split)
    if isinstance(split, LabeledDataset):
        raise ConfigError(
            f"split {cfg.split!r} carries labels; training reads only unlabeled streams"
        )
    return split


def _train(cfg: TrainCmdConfig, out: Path, jobs: int) -> None:
    stream = _load_train_stream(cfg)
    target = cfg.target_resolution or stream.resolution
    bundle, records = train(
        stream,
        cfg.train,
        target,
        cfg.model,
        checkpoint_dir=out / "checkpoints",
    )
    write_train_log(records, out / "train_log.csv")


def _load_query_split(data: str, split: str, bundle) -> LabeledDataset:
    root = Path(data)
    if not data:
        raise ConfigError("config.data must point at a dataset directory or image folder")
    if (root / "meta.json").is_file():
        loaded = load_dataset(root, split)
        if isinstance(loaded, TrainStream):
            # scoring does not need labels; wrap with placeholder ids
            return LabeledDataset(
                images=loaded.images,
                labels=np.zeros(len(loaded), dtype=np.uint8),
                source_ids=[f"{split}-{i:05d}" for i in range(len(loaded))],
                value_range=loaded.value_range,
            )
        return loaded
    if (root / "manifest.csv").is_file():
        return ingest_folder(
            root, bundle.phase.resolution, channels=bundle.image_channels
        )
    raise MissingInputError(
        f"{root} is neither a dataset directory (meta.json) nor an image folder "
        f"(manifest.csv)"
    )


def _dump_reconstructions(reports, channels: int, out: Path) -> None:
    recon_dir = out / "reconstructions"
    recon_dir.mkdir(parents=True, exist_ok=True)
    for r in reports:
        arr = np.clip((r.reconstruction + 1.0) / 2.0 * 255.0, 0, 255).round()
        arr = arr.astype(np.uint8)
        img = PILImage.fromarray(arr[:, :, 0], "L") if channels == 1 else \
            PILImage.fromarray(arr, "RGB")
        safe = "".join(c if c.isalnum() or c in "-._" else "_" for c in r.source_id)
        img.save(recon_dir / f"{safe}.png")


def _score(cfg: ScoreCmdConfig, out: Path, jobs: int) -> None:
    if not cfg.checkpoint:
        raise ConfigError("config.checkpoint must point at a checkpoint directory")
    bundle = models.checkpoint_load(cfg.checkpoint)
    queries = _load_query_split(cfg.data, cfg.split, bundle)
    reports = scoring.score_batch(
        bundle, queries.images, cfg.score, queries.source_ids
    )
    scoring.write_scores_csv(reports, out / "scores.csv")
    if cfg.dump_reconstructions:
        _dump_reconstructions(reports, bundle.image_channels, out)


def _evaluate(cfg: EvaluateCmdConfig, out: Path, jobs: int) -> None:
    if bool(cfg.scores) == bool(cfg.checkpoint):
        raise ConfigError("set exactly one of config.scores or config.checkpoint")
    if not cfg.data:
        raise ConfigError("config.data must point at a labeled dataset directory")
    dataset = load_dataset(cfg.data, cfg.split)
    if not isinstance(dataset, LabeledDataset):
        raise ConfigError(f"split {cfg.split!r} has no labels to evaluate against")

    summary = {
        "split": cfg.split,
        "n_normals": int(np.sum(dataset.labels == 0)),
        "n_anomalies": int(np.sum(dataset.labels == 1)),
        "threshold": cfg.score.threshold,
        "auc": {},
    }

    if cfg.scores:
        rows = scoring.read_scores_csv(cfg.scores)
        by_id = {row["source_id"]: row for row in rows}
        missing = [sid for sid in dataset.source_ids if sid not in by_id]
        if missing:
            raise MissingInputError(
                f"score table lacks {len(missing)} sample(s), e.g. {missing[0]!r}"
            )
        ordered = [by_id[sid] for sid in dataset.source_ids]
        columns = {"l_n": "L_n", "l_r": "L_r", "l_o": "L_o", "combined": "a"}
        for variant, column in columns.items():
            values = [row[column] for row in ordered]
            summary["auc"][variant] = compute_roc(zip(values, dataset.labels)).auc
        combined = [row["a"] for row in ordered]
        write_roc_csv(compute_roc(zip(combined, dataset.labels)), out / "roc.csv")
        summary["flagged"] = int(sum(row["is_anomaly"] for row in ordered))
    else:
        bundle = models.checkpoint_load(cfg.checkpoint)
        reports = scoring.score_batch(
            bundle, dataset.images, cfg.score, dataset.source_ids
        )
        scoring.write_scores_csv(reports, out / "scores.csv")
        for variant in SCORE_VARIANTS:
            values = [r.variant_value(variant) for r in reports]
            summary["auc"][variant] = compute_roc(zip(values, dataset.labels)).auc
        combined = [r.score for r in reports]
        write_roc_csv(compute_roc(zip(combined, dataset.labels)), out / "roc.csv")
        summary["flagged"] = int(sum(r.is_anomaly for r in reports))
        analysis = latent_analysis(bundle, dataset, bins=cfg.latent_bins)
        write_latent_csvs(analysis, out)
        summary["latent_norms"] = {
            ("normal" if label == 0 else "anomaly"): stats
            for label, stats in analysis.norm_stats.items()
        }

    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sweep(cfg: SweepCmdConfig, out: Path, jobs: int) -> None:
    corpus = build_corpus(cfg.corpus)
    plan = SweepPlan(
        gammas=tuple(float(g) for g in cfg.gammas),
        encoder_modes=tuple(cfg.encoder_modes),
        score_variants=tuple(cfg.score_variants),
        seeds=tuple(int(s) for s in cfg.seeds),
    )
    result = run_sweep(corpus, plan, cfg.train, cfg.model, cfg.score, jobs=jobs)
    write_sweep_csv(result, out / "sweep.csv")
    with open(out / "summary.json", "w") as fh:
        json.dump(sweep_summary(result), fh, indent=2, sort_keys=True)
        fh.write("\n")
    failed = result.failed()
    if failed:
        click.echo(f"{len(failed)} sweep cell(s) failed; see sweep.csv", err=True)


def _report(cfg: ReportCmdConfig, out: Path, jobs: int) -> None:
    if not cfg.run:
        raise ConfigError("config.run must point at a run directory")
    run = Path(cfg.run)
    if not run.is_dir():
        raise MissingInputError(f"run directory not found: {run}")
    report.render_run_report(run, out)


# ---------------------------------------------------------------------------
# wiring


def _fail(exc: Exception, exit_code: int) -> None:
    payload = {
        "error": {
            "type": type(exc).__name__,
            "message": str(exc),
            "exit_code": exit_code,
        }
    }
    click.echo(json.dumps(payload), err=True)
    sys.exit(exit_code)


def _execute(body, schema, command: str, config_path, out_dir, seed, jobs) -> None:
    try:
        try:
            raw = Path(config_path).read_text()
        except FileNotFoundError as exc:
            raise MissingInputError(f"config file not found: {config_path}") from exc
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        cfg = _apply_seed(build_config(schema, data), seed)

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        resolved = {
            "command": command,
            "config": dataclasses.asdict(cfg),
            "seed_override": seed,
            "jobs": jobs,
        }
        with open(out / "resolved_config.json", "w") as fh:
            json.dump(resolved, fh, indent=2, sort_keys=True)
            fh.write("\n")

        body(cfg, out, jobs)
    except ConfigError as exc:
        _fail(exc, EXIT_CONFIG)
    except (MissingInputError, FileNotFoundError) as exc:
        _fail(exc, EXIT_MISSING_INPUT)
    except SystemExit:
        raise
    except Exception as exc:
        _fail(exc, EXIT_RUNTIME)


def _common_options(fn):
    fn = click.option(
        "--config", "config_path", required=True, envvar="GANDET_CONFIG",
        help="Path to the JSON config for this command.",
    )(fn)
    fn = click.option(
        "--out", "out_dir", required=True, envvar="GANDET_OUT",
        help="Run directory; every artifact lands here.",
    )(fn)
    fn = click.option(
        "--seed", type=int, default=None, envvar="GANDET_SEED",
        help="Override the config's primary seed.",
    )(fn)
    fn = click.option(
        "--jobs", type=int, default=1, envvar="GANDET_JOBS",
        help="Worker processes for commands that can parallelize.",
    )(fn)
    return fn


@click.group()
@click.version_option(package_name="gandet")
def main():
    """Contamination-robust GAN anomaly detection harness."""


def _register(name: str, body, schema, help_text: str):
    @main.command(name, help=help_text)
    @_common_options
    def _cmd(config_path, out_dir, seed, jobs):
        _execute(body, schema, name, config_path, out_dir, seed, jobs)

    _cmd.__name__ = name.replace("-", "_")
    return _cmd


_register(
    "gen-data", _gen_data, GenDataConfig,
    "Render a synthetic corpus, contaminate the training split, export it.",
)
_register(
    "train", _train, TrainCmdConfig,
    "Train generator, critic and encoder on an exported training split.",
)
_register(
    "score", _score, ScoreCmdConfig,
    "Score queries against a trained checkpoint and write scores.csv.",
)
_register(
    "evaluate", _evaluate, EvaluateCmdConfig,
    "Compute ROC/AUC (and latent diagnostics) on a labeled split.",
)
_register(
    "sweep", _sweep, SweepCmdConfig,
    "Train across a contamination/mode/seed grid and tabulate AUCs.",
)
_register(
    "report", _report, ReportCmdConfig,
    "Render markdown and SVG summaries from a run directory.",
)


if __name__ == "__main__":
    main()
