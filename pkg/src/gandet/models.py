"""Generator, critic, and encoder networks with progressive growth.

All three nets are built with every resolution stage instantiated up
front; growing is purely a change of the active GrowthPhase, so a phase
transition never touches parameter values. During the fade-in half of a
phase the new top stage is blended with the upsampled (or downsampled)
output of the previous stage.

The latent prior is standard normal, scaled to unit length before it
enters the generator. The generator never normalizes its latent input,
so the norm of an encoded vector stays meaningful downstream.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .seeding import child_seed
from .validation import (
    as_image_batch,
    as_single_image,
    check_power_of_two_resolution,
)

CHECKPOINT_FORMAT_VERSION = 1
NETWORK_KINDS = ("generator", "discriminator", "encoder")

_LEAKY_SLOPE = 0.2


class CheckpointError(RuntimeError):
    """Base class for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointIntegrityError(CheckpointError):
    pass


@dataclass(frozen=True)
class GrowthPhase:
    """Active output resolution and fade-in blend weight.

    fade_in is 1.0 once a stage is fully blended in; the base resolution
    has no predecessor so its fade_in is always 1.0.
    """

    resolution: int
    fade_in: float = 1.0

    def __post_init__(self):
        check_power_of_two_resolution(self.resolution)
        if not 0.0 <= self.fade_in <= 1.0:
            raise ValueError(f"fade_in must lie in [0, 1], got {self.fade_in}")
        if self.resolution == 4 and self.fade_in != 1.0:
            raise ValueError("the 4x4 stage has no predecessor to fade from")


@dataclass(frozen=True)
class NetworkSpec:
    """Topology of one network, sufficient to rebuild it from scratch."""

    kind: str
    target_resolution: int
    image_channels: int = 1
    latent_dim: int = 512
    base_channels: int = 32
    min_channels: int = 8
    activation: str = "leaky_relu"
    normalization: str = "none"
    output_activation: str = "tanh"

    def __post_init__(self):
        if self.kind not in NETWORK_KINDS:
            raise ValueError(f"kind must be one of {NETWORK_KINDS}, got {self.kind!r}")
        check_power_of_two_resolution(self.target_resolution)
        if self.latent_dim <= 0 or self.base_channels <= 0 or self.min_channels <= 0:
            raise ValueError("latent_dim, base_channels and min_channels must be positive")
        if self.image_channels not in (1, 3):
            raise ValueError(f"image_channels must be 1 or 3, got {self.image_channels}")
        if self.activation != "leaky_relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.normalization not in ("none", "pixelnorm"):
            raise ValueError(f"unsupported normalization {self.normalization!r}")
        if self.output_activation != "tanh":
            raise ValueError(f"unsupported output activation {self.output_activation!r}")

    @property
    def resolutions(self) -> tuple[int, ...]:
        res, out = 4, []
        while res <= self.target_resolution:
            out.append(res)
            res *= 2
        return tuple(out)

    def channels_at(self, resolution: int) -> int:
        """Feature width per stage: base up to 8x8, halved per doubling after."""
        if resolution not in self.resolutions:
            raise ValueError(f"resolution {resolution} not in {self.resolutions}")
        width = self.base_channels
        res = 8
        while res < resolution:
            width //= 2
            res *= 2
        return max(self.min_channels, width)


@dataclass(frozen=True)
class ModelConfig:
    """Shared topology knobs for one generator/critic/encoder trio."""

    latent_dim: int = 512
    image_channels: int = 1
    base_channels: int = 32
    min_channels: int = 8
    generator_normalization: str = "pixelnorm"


def _pixelnorm(x: torch.Tensor) -> torch.Tensor:
    return x * torch.rsqrt(torch.mean(x * x, dim=1, keepdim=True) + 1e-8)


def _leaky(x: torch.Tensor) -> torch.Tensor:
    return F.leaky_relu(x, _LEAKY_SLOPE)


def _upsample2(x: torch.Tensor) -> torch.Tensor:
    return F.interpolate(x, scale_factor=2, mode="nearest")


class _GeneratorBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, pixelnorm: bool):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.pixelnorm = pixelnorm

    def forward(self, x):
        x = _upsample2(x)
        x = _leaky(self.conv1(x))
        if self.pixelnorm:
            x = _pixelnorm(x)
        x = _leaky(self.conv2(x))
        if self.pixelnorm:
            x = _pixelnorm(x)
        return x


class Generator(nn.Module):
    """Latent vector to image, grown one resolution stage at a time."""

    def __init__(self, spec: NetworkSpec):
        super().__init__()
        if spec.kind != "generator":
            raise ValueError("spec.kind must be 'generator'")
        self.spec = spec
        c4 = spec.channels_at(4)
        self.input_map = nn.Linear(spec.latent_dim, c4 * 16)
        self.input_conv = nn.Conv2d(c4, c4, 3, padding=1)
        pixelnorm = spec.normalization == "pixelnorm"
        self._pixelnorm = pixelnorm
        self.blocks = nn.ModuleDict(
            {
                str(res): _GeneratorBlock(
                    spec.channels_at(res // 2), spec.channels_at(res), pixelnorm
                )
                for res in spec.resolutions[1:]
            }
        )
        self.to_image = nn.ModuleDict(
            {
                str(res): nn.Conv2d(spec.channels_at(res), spec.image_channels, 1)
                for res in spec.resolutions
            }
        )

    def forward(self, z: torch.Tensor, phase: GrowthPhase) -> torch.Tensor:
        if z.dim() != 2 or z.shape[1] != self.spec.latent_dim:
            raise ValueError(
                f"latent batch must be (n, {self.spec.latent_dim}), got {tuple(z.shape)}"
            )
        if phase.resolution not in self.spec.resolutions:
            raise ValueError(
                f"phase resolution {phase.resolution} outside {self.spec.resolutions}"
            )
        x = _leaky(self.input_map(z)).reshape(z.shape[0], -1, 4, 4)
        x = _leaky(self.input_conv(x))
        if self._pixelnorm:
            x = _pixelnorm(x)
        if phase.resolution == 4:
            return torch.tanh(self.to_image["4"](x))
        previous = x
        for res in self.spec.resolutions[1:]:
            if res > phase.resolution:
                break
            previous, x = x, self.blocks[str(res)](x)
        rgb = self.to_image[str(phase.resolution)](x)
        if phase.fade_in < 1.0:
            low = self.to_image[str(phase.resolution // 2)](previous)
            rgb = phase.fade_in * rgb + (1.0 - phase.fade_in) * _upsample2(low)
        return torch.tanh(rgb)


class _TrunkBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_in, 3, padding=1)
        self.conv2 = nn.Conv2d(c_in, c_out, 3, padding=1)

    def forward(self, x):
        x = _leaky(self.conv1(x))
        x = _leaky(self.conv2(x))
        return F.avg_pool2d(x, 2)


class _ImageTrunk(nn.Module):
    """Shared image-to-vector trunk used by both the critic and the encoder.

    Mirrors the generator: a from_image adapter per resolution, blocks
    that halve the resolution, and a dense head at 4x4.
    """

    def __init__(self, spec: NetworkSpec, out_features: int):
        super().__init__()
        self.spec = spec
        self.from_image = nn.ModuleDict(
            {
                str(res): nn.Conv2d(spec.image_channels, spec.channels_at(res), 1)
                for res in spec.resolutions
            }
        )
        self.blocks = nn.ModuleDict(
            {
                str(res): _TrunkBlock(spec.channels_at(res), spec.channels_at(res // 2))
                for res in spec.resolutions[1:]
            }
        )
        c4 = spec.channels_at(4)
        self.head_conv = nn.Conv2d(c4, c4, 3, padding=1)
        self.head_fc = nn.Linear(c4 * 16, out_features)

    def forward(self, images: torch.Tensor, phase: GrowthPhase) -> torch.Tensor:
        res = phase.resolution
        if res not in self.spec.resolutions:
            raise ValueError(f"phase resolution {res} outside {self.spec.resolutions}")
        expected = (self.spec.image_channels, res, res)
        if images.dim() != 4 or tuple(images.shape[1:]) != expected:
            raise ValueError(
                f"image batch must be (n, {expected[0]}, {res}, {res}), "
                f"got {tuple(images.shape)}"
            )
        x = _leaky(self.from_image[str(res)](images))
        if res > 4:
            x = self.blocks[str(res)](x)
            if phase.fade_in < 1.0:
                skip = _leaky(self.from_image[str(res // 2)](F.avg_pool2d(images, 2)))
                x = phase.fade_in * x + (1.0 - phase.fade_in) * skip
            lower = res // 2
            while lower > 4:
                x = self.blocks[str(lower)](x)
                lower //= 2
        x = _leaky(self.head_conv(x))
        return self.head_fc(x.flatten(1))


class Discriminator(nn.Module):
    """WGAN critic: image to unbounded per-sample score."""

    def __init__(self, spec: NetworkSpec):
        super().__init__()
        if spec.kind != "discriminator":
            raise ValueError("spec.kind must be 'discriminator'")
        self.spec = spec
        self.trunk = _ImageTrunk(spec, 1)

    def forward(self, images, phase):
        return self.trunk(images, phase).squeeze(1)


class Encoder(nn.Module):
    """Image back to a latent vector. Output is never re-normalized."""

    def __init__(self, spec: NetworkSpec):
        super().__init__()
        if spec.kind != "encoder":
            raise ValueError("spec.kind must be 'encoder'")
        self.spec = spec
        self.trunk = _ImageTrunk(spec, spec.latent_dim)

    def forward(self, images, phase):
        return self.trunk(images, phase)


def _init_parameters(module: nn.Module, generator: torch.Generator) -> None:
    # He-style normal init for weights, zero for biases, in a fixed order
    for _, param in module.named_parameters():
        with torch.no_grad():
            if param.dim() >= 2:
                fan_in = param.shape[1]
                if param.dim() == 4:
                    fan_in *= param.shape[2] * param.shape[3]
                std = (2.0 / fan_in) ** 0.5
                param.copy_(torch.randn(param.shape, generator=generator) * std)
            else:
                param.zero_()


@dataclass
class ModelBundle:
    """One generator/encoder pair, optionally with its training critic.

    Mutable only inside the training loop; everywhere else bundles are
    frozen. Scoring needs only the generator and encoder, so a bundle
    may legitimately carry no discriminator.
    """

    generator: Generator
    encoder: Encoder
    discriminator: Discriminator | None
    phase: GrowthPhase
    prior_seed: int = 0
    frozen: bool = False

    @property
    def latent_dim(self) -> int:
        return self.generator.spec.latent_dim

    @property
    def image_channels(self) -> int:
        return self.generator.spec.image_channels

    @property
    def target_resolution(self) -> int:
        return self.generator.spec.target_resolution

    @property
    def specs(self) -> dict[str, NetworkSpec]:
        out = {"generator": self.generator.spec, "encoder": self.encoder.spec}
        if self.discriminator is not None:
            out["discriminator"] = self.discriminator.spec
        return out

    def networks(self) -> dict[str, nn.Module]:
        out = {"generator": self.generator, "encoder": self.encoder}
        if self.discriminator is not None:
            out["discriminator"] = self.discriminator
        return out

    def freeze(self) -> "ModelBundle":
        for net in self.networks().values():
            net.requires_grad_(False)
            net.eval()
        self.frozen = True
        return self


def init_bundle(
    target_resolution: int,
    config: ModelConfig = ModelConfig(),
    seed: int = 0,
    progressive: bool = True,
) -> ModelBundle:
    """Build and deterministically initialize a fresh model bundle."""
    check_power_of_two_resolution(target_resolution)

    def spec_for(kind: str) -> NetworkSpec:
        return NetworkSpec(
            kind=kind,
            target_resolution=target_resolution,
            image_channels=config.image_channels,
            latent_dim=config.latent_dim,
            base_channels=config.base_channels,
            min_channels=config.min_channels,
            normalization=(
                config.generator_normalization if kind == "generator" else "none"
            ),
        )

    nets = {}
    for kind, cls in (
        ("generator", Generator),
        ("discriminator", Discriminator),
        ("encoder", Encoder),
    ):
        net = cls(spec_for(kind))
        gen = torch.Generator().manual_seed(child_seed(seed, "init", kind))
        _init_parameters(net, gen)
        nets[kind] = net

    start = GrowthPhase(4 if progressive else target_resolution, 1.0)
    return ModelBundle(
        generator=nets["generator"],
        encoder=nets["encoder"],
        discriminator=nets["discriminator"],
        phase=start,
        prior_seed=child_seed(seed, "prior"),
    )


# ---------------------------------------------------------------------------
# latent prior


@dataclass(frozen=True)
class PriorSample:
    """Raw standard-normal draws and their unit-length rescaling.

    The unit vectors are what the generator consumes; the raw draws are
    kept for distribution checks.
    """

    raw: np.ndarray
    unit: np.ndarray


def _sample_prior_tensor(
    n: int, latent_dim: int, generator: torch.Generator
) -> tuple[torch.Tensor, torch.Tensor]:
    raw = torch.randn(n, latent_dim, generator=generator)
    norms = raw.norm(dim=1, keepdim=True).clamp_min(1e-24)
    return raw, raw / norms


def sample_prior(n: int, latent_dim: int, seed: int) -> PriorSample:
    if n <= 0 or latent_dim <= 0:
        raise ValueError("n and latent_dim must be positive")
    gen = torch.Generator().manual_seed(int(seed))
    raw, unit = _sample_prior_tensor(n, latent_dim, gen)
    return PriorSample(raw=raw.numpy(), unit=unit.numpy())


# ---------------------------------------------------------------------------
# numpy-facing inference helpers


def _to_nchw(images: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2)))


def _to_nhwc(t: torch.Tensor) -> np.ndarray:
    return t.permute(0, 2, 3, 1).contiguous().numpy()


def generate(bundle: ModelBundle, z) -> np.ndarray:
    """Decode latent vector(s) to image(s) at the bundle's current phase."""
    arr = np.asarray(z, dtype=np.float32)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != bundle.latent_dim:
        raise ValueError(
            f"latent input must have {bundle.latent_dim} coefficients, got shape {np.shape(z)}"
        )
    with torch.no_grad():
        out = bundle.generator(torch.from_numpy(arr), bundle.phase)
    images = _to_nhwc(out)
    return images[0] if single else images


def encode(bundle: ModelBundle, images) -> np.ndarray:
    """Map image(s) at the current phase resolution to latent vector(s)."""
    res = bundle.phase.resolution
    arr = np.asarray(images, dtype=np.float32)
    single = arr.ndim in (2, 3)
    if single:
        batch = as_single_image(arr, resolution=res, channels=bundle.image_channels)[None]
    else:
        batch = as_image_batch(arr, resolution=res, channels=bundle.image_channels)
    with torch.no_grad():
        z = bundle.encoder(_to_nchw(batch), bundle.phase).numpy()
    return z[0] if single else z


def discriminate(bundle: ModelBundle, images) -> float | np.ndarray:
    """Critic score(s); only available while the critic is retained."""
    if bundle.discriminator is None:
        raise ValueError("bundle carries no discriminator (scoring-only checkpoint)")
    res = bundle.phase.resolution
    arr = np.asarray(images, dtype=np.float32)
    single = arr.ndim in (2, 3)
    if single:
        batch = as_single_image(arr, resolution=res, channels=bundle.image_channels)[None]
    else:
        batch = as_image_batch(arr, resolution=res, channels=bundle.image_channels)
    with torch.no_grad():
        scores = bundle.discriminator(_to_nchw(batch), bundle.phase).numpy()
    return float(scores[0]) if single else scores


def parameter_digest(module: nn.Module) -> str:
    """sha256 over all named parameters, as little-endian float32 bytes."""
    h = hashlib.sha256()
    for name, param in sorted(module.named_parameters(), key=lambda kv: kv[0]):
        h.update(name.encode("utf-8"))
        h.update(param.detach().numpy().astype("<f4").tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# checkpoints


def checkpoint_save(bundle: ModelBundle, path, include_discriminator: bool = True) -> None:
    """Write a bundle as manifest.json plus one raw float32 file per tensor."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    nets = bundle.networks()
    if not include_discriminator:
        nets.pop("discriminator", None)

    tensors = {}
    for net_name, net in nets.items():
        for param_name, param in net.named_parameters():
            qualified = f"{net_name}.{param_name}"
            data = param.detach().numpy().astype("<f4").tobytes()
            filename = qualified + ".bin"
            (out / filename).write_bytes(data)
            tensors[qualified] = {
                "file": filename,
                "shape": list(param.shape),
                "dtype": "float32",
                "sha256": hashlib.sha256(data).hexdigest(),
            }

    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "latent_dim": bundle.latent_dim,
        "image_channels": bundle.image_channels,
        "phase": {"resolution": bundle.phase.resolution, "fade_in": bundle.phase.fade_in},
        "prior_seed": bundle.prior_seed,
        "specs": {name: asdict(net.spec) for name, net in nets.items()},
        "tensors": tensors,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def checkpoint_load(path) -> ModelBundle:
    """Rebuild a frozen bundle from disk, verifying shapes and digests.

    A manifest without a discriminator section loads in scoring-only
    mode: generation, encoding and scoring work, critic calls do not.
    """
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"missing checkpoint manifest: {manifest_path}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)

    version = manifest.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointVersionError(
            f"unsupported checkpoint format_version {version!r}, "
            f"expected {CHECKPOINT_FORMAT_VERSION}"
        )

    classes = {"generator": Generator, "discriminator": Discriminator, "encoder": Encoder}
    nets: dict[str, nn.Module] = {}
    for name, spec_dict in manifest["specs"].items():
        if name not in classes:
            raise CheckpointIntegrityError(f"unknown network {name!r} in manifest")
        nets[name] = classes[name](NetworkSpec(**spec_dict))
    for required in ("generator", "encoder"):
        if required not in nets:
            raise CheckpointIntegrityError(f"manifest lacks the {required} network")

    states: dict[str, dict[str, torch.Tensor]] = {name: {} for name in nets}
    for qualified, entry in manifest["tensors"].items():
        net_name, _, param_name = qualified.partition(".")
        if net_name not in nets:
            raise CheckpointIntegrityError(f"tensor {qualified!r} names unknown network")
        tensor_path = root / entry["file"]
        if not tensor_path.is_file():
            raise CheckpointIntegrityError(f"missing tensor file: {tensor_path}")
        raw = tensor_path.read_bytes()
        shape = tuple(entry["shape"])
        expected = int(np.prod(shape)) * 4 if shape else 4
        if len(raw) != expected:
            raise CheckpointIntegrityError(
                f"{tensor_path} holds {len(raw)} bytes, expected {expected}"
            )
        digest = hashlib.sha256(raw).hexdigest()
        if digest != entry["sha256"]:
            raise CheckpointIntegrityError(f"digest mismatch for {qualified}")
        states[net_name][param_name] = torch.from_numpy(
            np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        )

    for name, net in nets.items():
        expected_keys = {k for k, _ in net.named_parameters()}
        got = set(states[name])
        if expected_keys != got:
            missing = sorted(expected_keys - got)
            extra = sorted(got - expected_keys)
            raise CheckpointIntegrityError(
                f"tensor set mismatch for {name}: missing {missing}, unexpected {extra}"
            )
        net.load_state_dict(states[name], strict=False)

    phase = GrowthPhase(manifest["phase"]["resolution"], manifest["phase"]["fade_in"])
    bundle = ModelBundle(
        generator=nets["generator"],
        encoder=nets["encoder"],
        discriminator=nets.get("discriminator"),
        phase=phase,
        prior_seed=manifest.get("prior_seed", 0),
    )
    return bundle.freeze()
