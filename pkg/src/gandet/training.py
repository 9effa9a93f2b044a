"""Joint adversarial training of generator, critic, and encoder.

The critic trains on a gradient-penalty Wasserstein objective. The
generator and encoder share one optimizer and one backward pass: the
generator's adversarial loss plus a reconstruction loss, either in image
space (decode, encode, decode again and compare images) or in latent
space (encode a generated sample and compare latents). A post-hoc mode
trains the GAN alone first and fits the encoder afterwards against the
frozen generator.

Training is label-blind: it accepts a TrainStream or a bare image array
and nothing carrying labels.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch.nn import functional as F

from .datasets import TrainStream, LabeledDataset
from .models import (
    GrowthPhase,
    ModelBundle,
    ModelConfig,
    _sample_prior_tensor,
    checkpoint_save,
    init_bundle,
)
from .seeding import child_seed

JOINT_IMAGE_SPACE = "joint_image_space"
JOINT_LATENT_SPACE = "joint_latent_space"
POST_HOC = "post_hoc"
ENCODER_MODES = (JOINT_IMAGE_SPACE, JOINT_LATENT_SPACE, POST_HOC)


class TrainingDiverged(RuntimeError):
    """A loss became non-finite; carries the last diagnostics."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class TrainConfig:
    """Optimization schedule and objective selection."""

    encoder_mode: str = JOINT_IMAGE_SPACE
    critic_steps: int = 1
    gp_weight: float = 10.0
    learning_rate: float = 1e-3
    beta1: float = 0.0
    beta2: float = 0.99
    batch_size_start: int = 64
    batch_size_end: int = 32
    steps_per_phase: int = 600
    progressive: bool = True
    posthoc_encoder_steps: int | None = None
    stop_inner_sample_gradient: bool = False
    num_threads: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.encoder_mode not in ENCODER_MODES:
            raise ValueError(
                f"encoder_mode must be one of {ENCODER_MODES}, got {self.encoder_mode!r}"
            )
        if self.critic_steps < 1:
            raise ValueError("critic_steps must be at least 1")
        if self.gp_weight < 0:
            raise ValueError("gp_weight must be nonnegative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("moment decays must lie in [0, 1)")
        if self.batch_size_start < 1 or self.batch_size_end < 1:
            raise ValueError("batch sizes must be positive")
        if self.steps_per_phase < 0:
            raise ValueError("steps_per_phase must be nonnegative")
        if self.posthoc_encoder_steps is not None and self.posthoc_encoder_steps < 0:
            raise ValueError("posthoc_encoder_steps must be nonnegative")
        if self.num_threads < 1:
            raise ValueError("num_threads must be positive")


@dataclass
class TrainLogRecord:
    """One logged outer step. Loss fields are None outside their stage."""

    step: int
    stage: str
    phase_resolution: int
    fade_in: float
    batch_size: int
    critic_loss: float | None = None
    wasserstein: float | None = None
    gradient_penalty: float | None = None
    generator_loss: float | None = None
    encoder_loss: float | None = None
    wall_time: float = 0.0


TRAIN_LOG_COLUMNS = (
    "step",
    "stage",
    "phase_resolution",
    "fade_in",
    "batch_size",
    "critic_loss",
    "wasserstein",
    "gradient_penalty",
    "generator_loss",
    "encoder_loss",
    "wall_time",
)


def write_train_log(records: list[TrainLogRecord], path) -> None:
    """CSV log; wall_time is the only nondeterministic column."""
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAIN_LOG_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.step,
                    r.stage,
                    r.phase_resolution,
                    f"{r.fade_in:.6f}",
                    r.batch_size,
                ]
                + [
                    "" if v is None else f"{v:.17g}"
                    for v in (
                        r.critic_loss,
                        r.wasserstein,
                        r.gradient_penalty,
                        r.generator_loss,
                        r.encoder_loss,
                    )
                ]
                + [f"{r.wall_time:.3f}"]
            )


# ---------------------------------------------------------------------------
# loss functions
#
# These take plain callables so they can be exercised with tiny float64
# networks in tests; the step functions below bind them to a bundle.


def wasserstein_critic_loss(critic_fn, real, fake, interp_eps, gp_weight):
    """Critic loss with gradient penalty.

    Returns (loss, wasserstein_estimate, gradient_penalty) as 0-dim
    tensors. interp_eps holds per-sample mixing weights in [0, 1],
    broadcastable against the batch.
    """
    wasserstein = critic_fn(real).mean() - critic_fn(fake).mean()
    mixed = (interp_eps * real + (1.0 - interp_eps) * fake).detach().requires_grad_(True)
    scores = critic_fn(mixed)
    grads = torch.autograd.grad(scores.sum(), mixed, create_graph=True)[0]
    # tiny floor keeps the norm differentiable at exactly zero gradient
    norms = torch.sqrt(grads.flatten(1).pow(2).sum(dim=1) + 1e-24)
    penalty = ((norms - 1.0) ** 2).mean()
    loss = -wasserstein + gp_weight * penalty
    return loss, wasserstein, penalty


def generator_adversarial_loss(critic_fn, fake):
    return -critic_fn(fake).mean()


def image_space_loss(generator_fn, encoder_fn, z, stop_inner_sample: bool = False):
    """Mean absolute image-space error of re-decoding an encoded sample.

    The mean runs over every element, so values are comparable across
    resolutions. With stop_inner_sample the generated sample is treated
    as a constant and gradients reach the generator only through the
    outer decoding.
    """
    sample = generator_fn(z)
    if stop_inner_sample:
        sample = sample.detach()
    return (sample - generator_fn(encoder_fn(sample))).abs().mean()


def latent_space_loss(generator_fn, encoder_fn, z, stop_inner_sample: bool = False):
    """Mean absolute latent-space error of encoding a generated sample."""
    sample = generator_fn(z)
    if stop_inner_sample:
        sample = sample.detach()
    return (z - encoder_fn(sample)).abs().mean()


def _check_finite(diagnostics: dict) -> None:
    bad = {k: v for k, v in diagnostics.items() if not math.isfinite(v)}
    if bad:
        raise TrainingDiverged(
            f"non-finite loss at step {diagnostics.get('step', '?')}: {bad}",
            diagnostics,
        )


# ---------------------------------------------------------------------------
# optimization steps


@dataclass
class TrainState:
    """Optimizers and random streams that persist across steps."""

    critic_opt: torch.optim.Optimizer
    joint_opt: torch.optim.Optimizer
    encoder_opt: torch.optim.Optimizer
    prior_gen: torch.Generator
    interp_gen: torch.Generator
    step: int = 0


def make_train_state(bundle: ModelBundle, config: TrainConfig) -> TrainState:
    if bundle.discriminator is None:
        raise ValueError("training needs a bundle with a discriminator")
    betas = (config.beta1, config.beta2)
    joint_params = list(bundle.generator.parameters())
    if config.encoder_mode != POST_HOC:
        joint_params += list(bundle.encoder.parameters())
    return TrainState(
        critic_opt=torch.optim.Adam(
            bundle.discriminator.parameters(), lr=config.learning_rate, betas=betas
        ),
        joint_opt=torch.optim.Adam(joint_params, lr=config.learning_rate, betas=betas),
        encoder_opt=torch.optim.Adam(
            bundle.encoder.parameters(), lr=config.learning_rate, betas=betas
        ),
        prior_gen=torch.Generator().manual_seed(bundle.prior_seed),
        interp_gen=torch.Generator().manual_seed(child_seed(config.seed, "interp")),
    )


def critic_step(
    bundle: ModelBundle,
    real_batch: torch.Tensor,
    z_batch: torch.Tensor,
    config: TrainConfig,
    state: TrainState,
) -> tuple[float, float, float]:
    """One critic update. Touches only discriminator parameters."""
    phase = bundle.phase
    with torch.no_grad():
        fake = bundle.generator(z_batch, phase)
    eps = torch.rand(
        real_batch.shape[0], 1, 1, 1, generator=state.interp_gen, dtype=real_batch.dtype
    )
    loss, wasserstein, penalty = wasserstein_critic_loss(
        lambda x: bundle.discriminator(x, phase),
        real_batch,
        fake,
        eps,
        config.gp_weight,
    )
    values = {
        "step": state.step,
        "critic_loss": float(loss.detach()),
        "wasserstein": float(wasserstein.detach()),
        "gradient_penalty": float(penalty.detach()),
    }
    _check_finite(values)
    state.critic_opt.zero_grad(set_to_none=True)
    loss.backward()
    state.critic_opt.step()
    return values["critic_loss"], values["wasserstein"], values["gradient_penalty"]


def generator_encoder_step(
    bundle: ModelBundle,
    z_batch: torch.Tensor,
    config: TrainConfig,
    state: TrainState,
) -> tuple[float, float | None]:
    """One joint update of generator and encoder (generator alone in
    post-hoc mode) via a single combined backward pass."""
    phase = bundle.phase
    fake = bundle.generator(z_batch, phase)
    gen_loss = -bundle.discriminator(fake, phase).mean()

    enc_loss = None
    total = gen_loss
    if config.encoder_mode != POST_HOC:
        sample = fake.detach() if config.stop_inner_sample_gradient else fake
        encoded = bundle.encoder(sample, phase)
        if config.encoder_mode == JOINT_IMAGE_SPACE:
            enc_loss = (sample - bundle.generator(encoded, phase)).abs().mean()
        else:
            enc_loss = (z_batch - encoded).abs().mean()
        total = gen_loss + enc_loss

    values = {"step": state.step, "generator_loss": float(gen_loss.detach())}
    if enc_loss is not None:
        values["encoder_loss"] = float(enc_loss.detach())
    _check_finite(values)
    state.joint_opt.zero_grad(set_to_none=True)
    total.backward()
    state.joint_opt.step()
    return values["generator_loss"], values.get("encoder_loss")


def posthoc_encoder_step(
    bundle: ModelBundle,
    z_batch: torch.Tensor,
    config: TrainConfig,
    state: TrainState,
) -> float:
    """One encoder-only update against the frozen generator."""
    phase = bundle.phase
    with torch.no_grad():
        target = bundle.generator(z_batch, phase)
    recon = bundle.generator(bundle.encoder(target, phase), phase)
    loss = (target - recon).abs().mean()
    values = {"step": state.step, "encoder_loss": float(loss.detach())}
    _check_finite(values)
    state.encoder_opt.zero_grad(set_to_none=True)
    loss.backward()
    state.encoder_opt.step()
    return values["encoder_loss"]


# ---------------------------------------------------------------------------
# batching and phase scheduling


class _BatchCycler:
    """Deterministic shuffled cycling over a fixed image tensor."""

    def __init__(self, images: torch.Tensor, seed: int):
        if len(images) == 0:
            raise ValueError("training stream is empty")
        self._images = images
        self._rng = np.random.default_rng(seed)
        self._order = self._rng.permutation(len(images))
        self._pos = 0

    def next(self, size: int) -> torch.Tensor:
        take = []
        while size > 0:
            if self._pos == len(self._order):
                self._order = self._rng.permutation(len(self._order))
                self._pos = 0
            chunk = self._order[self._pos : self._pos + size]
            take.append(chunk)
            self._pos += len(chunk)
            size -= len(chunk)
        return self._images[np.concatenate(take)]


def real_batch_at_phase(images: torch.Tensor, phase: GrowthPhase) -> torch.Tensor:
    """Downsample full-resolution reals to the phase resolution.

    During fade-in the batch is blended with its own once-downsampled,
    re-upsampled version, mirroring what the generator emits.
    """
    res = images.shape[-1]
    if res < phase.resolution:
        raise ValueError(f"stream resolution {res} below phase {phase.resolution}")
    if res > phase.resolution:
        images = F.avg_pool2d(images, res // phase.resolution)
    if phase.fade_in < 1.0:
        low = F.interpolate(F.avg_pool2d(images, 2), scale_factor=2, mode="nearest")
        images = phase.fade_in * images + (1.0 - phase.fade_in) * low
    return images


def fade_in_at(step_in_phase: int, steps_in_phase: int, first_phase: bool) -> float:
    """Linear fade over the first half of a phase; first phase never fades."""
    if first_phase:
        return 1.0
    half = steps_in_phase / 2.0
    if half <= 0:
        return 1.0
    return min(1.0, step_in_phase / half)


def batch_size_for_phase(config: TrainConfig, phase_index: int) -> int:
    """Halve the starting batch size each phase, floored at the end size."""
    size = config.batch_size_start >> phase_index
    return max(config.batch_size_end, size)


# ---------------------------------------------------------------------------
# the loop


def train(
    stream: TrainStream | np.ndarray,
    config: TrainConfig,
    target_resolution: int,
    model_config: ModelConfig = ModelConfig(),
    checkpoint_dir=None,
) -> tuple[ModelBundle, list[TrainLogRecord]]:
    """Run the full schedule and return the frozen bundle plus log records.

    If checkpoint_dir is given, a checkpoint is written at the end of
    every growth phase and once more at completion.
    """
    if isinstance(stream, LabeledDataset):
        raise TypeError(
            "training is label-blind: pass a TrainStream (e.g. from contaminate()), "
            "not a labeled dataset"
        )
    if isinstance(stream, np.ndarray):
        stream = TrainStream(images=stream)
    if stream.resolution != target_resolution:
        raise ValueError(
            f"stream yields {stream.resolution}x{stream.resolution} images, "
            f"target resolution is {target_resolution}"
        )

    torch.set_num_threads(config.num_threads)
    bundle = init_bundle(
        target_resolution,
        config=model_config,
        seed=config.seed,
        progressive=config.progressive,
    )
    state = make_train_state(bundle, config)
    reals = torch.from_numpy(
        np.ascontiguousarray(stream.images.transpose(0, 3, 1, 2))
    )
    cycler = _BatchCycler(reals, child_seed(config.seed, "batches"))

    resolutions = (
        bundle.generator.spec.resolutions if config.progressive else (target_resolution,)
    )
    records: list[TrainLogRecord] = []
    started = time.monotonic()

    def prior(n: int) -> torch.Tensor:
        _, unit = _sample_prior_tensor(n, bundle.latent_dim, state.prior_gen)
        return unit

    for phase_index, resolution in enumerate(resolutions):
        batch_size = batch_size_for_phase(config, phase_index)
        for step_in_phase in range(config.steps_per_phase):
            fade = fade_in_at(step_in_phase, config.steps_per_phase, phase_index == 0)
            bundle.phase = GrowthPhase(resolution, fade)
            critic_vals = []
            for _ in range(config.critic_steps):
                real = real_batch_at_phase(cycler.next(batch_size), bundle.phase)
                critic_vals.append(
                    critic_step(bundle, real, prior(batch_size), config, state)
                )
            gen_loss, enc_loss = generator_encoder_step(
                bundle, prior(batch_size), config, state
            )
            means = [float(np.mean([v[i] for v in critic_vals])) for i in range(3)]
            records.append(
                TrainLogRecord(
                    step=state.step,
                    stage="gan",
                    phase_resolution=resolution,
                    fade_in=fade,
                    batch_size=batch_size,
                    critic_loss=means[0],
                    wasserstein=means[1],
                    gradient_penalty=means[2],
                    generator_loss=gen_loss,
                    encoder_loss=enc_loss,
                    wall_time=time.monotonic() - started,
                )
            )
            state.step += 1
        bundle.phase = GrowthPhase(resolution, 1.0)
        if checkpoint_dir is not None:
            checkpoint_save(bundle, Path(checkpoint_dir) / f"phase_{resolution:04d}")

    bundle.phase = GrowthPhase(target_resolution, 1.0)

    if config.encoder_mode == POST_HOC:
        # GAN stages are done; fit the encoder against the frozen generator
        bundle.generator.requires_grad_(False)
        encoder_steps = config.posthoc_encoder_steps
        if encoder_steps is None:
            encoder_steps = config.steps_per_phase * len(resolutions)
        batch_size = config.batch_size_end
        for _ in range(encoder_steps):
            enc_loss = posthoc_encoder_step(bundle, prior(batch_size), config, state)
            records.append(
                TrainLogRecord(
                    step=state.step,
                    stage="encoder",
                    phase_resolution=target_resolution,
                    fade_in=1.0,
                    batch_size=batch_size,
                    encoder_loss=enc_loss,
                    wall_time=time.monotonic() - started,
                )
            )
            state.step += 1

    bundle.freeze()
    if checkpoint_dir is not None:
        checkpoint_save(bundle, Path(checkpoint_dir) / "final")
    return bundle, records
