"""Malignancy-conditioned GAN on 128x128 mass patches.

Generator and discriminator are deep convolutional stacks conditioned on
the binary malignancy label: the label is embedded, passed through a
fully-connected map, and concatenated to the 100-dim noise vector (G) or
appended as a second 128x128 input plane (D). The discriminator trains on
binary cross-entropy with one-sided label smoothing (real targets drawn
uniformly from [0.7, 1.2], fake targets exactly 0); the generator uses the
non-saturating -log D(G(z|y)) objective.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .ingest import Label, MassPatch, resize_grid

NOISE_DIM = 100
IMAGE_SIDE = 128
PROB_EPS = 1e-7


@dataclass
class GanTrainConfig:
    batch_size: int = 16
    epochs: int = 100
    d_kernel: int = 6
    g_kernel: int = 4
    smoothing_range: tuple[float, float] = (0.7, 1.2)
    flip_p: float = 0.5
    crop_scale: tuple[float, float] = (0.9, 1.1)
    crop_ratio: tuple[float, float] = (0.95, 1.1)
    lr: float = 2e-4
    betas: tuple[float, float] = (0.5, 0.999)
    embedding_dim: int = 50
    base_channels: int = 32
    seed: int = 0
    checkpoint_every: int = 0  # epochs between checkpoints; 0 = final only
    augment: bool = True

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (one sample per class statistically)")
        if not self.smoothing_range[0] < self.smoothing_range[1]:
            raise ValueError("smoothing_range low must be < high")

    def to_dict(self) -> dict:
        return {
            k: list(v) if isinstance(v, tuple) else v for k, v in self.__dict__.items()
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GanTrainConfig":
        kwargs = dict(data)
        for key in ("smoothing_range", "crop_scale", "crop_ratio", "betas"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


class Generator(nn.Module):
    """(noise || embedded label) -> 128x128 image in [-1, 1] via 5 up-conv blocks."""

    def __init__(self, embedding_dim: int = 50, base_channels: int = 32, kernel: int = 4):
        super().__init__()
        self.embed = nn.Embedding(2, embedding_dim)
        self.embed_fc = nn.Linear(embedding_dim, embedding_dim)
        c = base_channels
        in_dim = NOISE_DIM + embedding_dim
        pad = (kernel - 2) // 2  # stride-2 doubling for even kernels

        def up(cin, cout):
            return [
                nn.ConvTranspose2d(cin, cout, kernel, stride=2, padding=pad, bias=False),
                nn.BatchNorm2d(cout),
                nn.ReLU(inplace=True),
            ]

        self.net = nn.Sequential(
            nn.ConvTranspose2d(in_dim, 8 * c, 4, stride=1, padding=0, bias=False),  # 4x4
            nn.BatchNorm2d(8 * c),
            nn.ReLU(inplace=True),
            *up(8 * c, 4 * c),  # 8
            *up(4 * c, 2 * c),  # 16
            *up(2 * c, c),  # 32
            *up(c, c),  # 64
            nn.ConvTranspose2d(c, 1, kernel, stride=2, padding=pad, bias=False),  # 128
            nn.Tanh(),
        )

    def forward(self, z: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        if z.ndim != 2 or z.shape[1] != NOISE_DIM:
            raise ValueError(f"noise must be (batch, {NOISE_DIM}), got {tuple(z.shape)}")
        cond = self.embed_fc(self.embed(labels))
        h = torch.cat([z, cond], dim=1)[:, :, None, None]
        return self.net(h)


class Discriminator(nn.Module):
    """(image + label plane) -> probability via 5 down-conv blocks."""

    def __init__(self, embedding_dim: int = 50, base_channels: int = 32, kernel: int = 6):
        super().__init__()
        self.embed = nn.Embedding(2, embedding_dim)
        self.embed_fc = nn.Linear(embedding_dim, IMAGE_SIDE * IMAGE_SIDE)
        c = base_channels
        pad = (kernel - 2) // 2

        def down(cin, cout, bn=True):
            layers = [nn.Conv2d(cin, cout, kernel, stride=2, padding=pad, bias=False)]
            if bn:
                layers.append(nn.BatchNorm2d(cout))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            return layers

        self.net = nn.Sequential(
            *down(2, c, bn=False),  # 64
            *down(c, 2 * c),  # 32
            *down(2 * c, 4 * c),  # 16
            *down(4 * c, 8 * c),  # 8
            *down(8 * c, 8 * c),  # 4
            nn.Conv2d(8 * c, 1, 4, stride=1, padding=0, bias=False),
            nn.Sigmoid(),
        )

    def forward(self, images: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        plane = self.embed_fc(self.embed(labels)).view(-1, 1, IMAGE_SIDE, IMAGE_SIDE)
        return self.net(torch.cat([images, plane], dim=1)).view(-1)


@dataclass
class GanModel:
    generator: Generator
    discriminator: Discriminator
    config: GanTrainConfig


def _init_weights(module: nn.Module, gen: torch.Generator) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear, nn.Embedding)):
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * 0.02)
                if getattr(m, "bias", None) is not None:
                    m.bias.zero_()
        elif isinstance(m, nn.BatchNorm2d):
            with torch.no_grad():
                m.weight.copy_(1.0 + torch.randn(m.weight.shape, generator=gen) * 0.02)
                m.bias.zero_()


def build_gan(config: GanTrainConfig) -> GanModel:
    gen = torch.Generator().manual_seed(config.seed)
    g = Generator(config.embedding_dim, config.base_channels, config.g_kernel)
    d = Discriminator(config.embedding_dim, config.base_channels, config.d_kernel)
    _init_weights(g, gen)
    _init_weights(d, gen)
    return GanModel(generator=g, discriminator=d, config=config)


def smooth_real_label(rng: np.random.Generator, low: float = 0.7, high: float = 1.2) -> float:
    """One-sided smoothing: real targets are uniform on [low, high], fakes stay 0."""
    return float(rng.uniform(low, high))


def _clamp_prob(p: torch.Tensor) -> torch.Tensor:
    return torch.clamp(p, PROB_EPS, 1.0 - PROB_EPS)


def discriminator_loss(d_real, d_fake, real_target) -> torch.Tensor:
    """Binary cross-entropy with smoothed real targets and hard-zero fakes."""
    d_real = torch.as_tensor(d_real, dtype=torch.float64 if not torch.is_tensor(d_real) else None)
    d_fake = torch.as_tensor(d_fake, dtype=torch.float64 if not torch.is_tensor(d_fake) else None)
    t = torch.as_tensor(real_target, dtype=d_real.dtype)
    if torch.any(d_real < 0) or torch.any(d_real > 1) or torch.any(d_fake < 0) or torch.any(d_fake > 1):
        raise ValueError("discriminator outputs must lie in [0, 1]")
    real_term = -(t * torch.log(_clamp_prob(d_real))).mean()
    fake_term = -torch.log(1.0 - _clamp_prob(d_fake)).mean()
    return real_term + fake_term


def generator_loss(d_fake) -> torch.Tensor:
    """Non-saturating objective -log D(G(z|y))."""
    d_fake = torch.as_tensor(d_fake, dtype=torch.float64 if not torch.is_tensor(d_fake) else None)
    if torch.any(d_fake < 0) or torch.any(d_fake > 1):
        raise ValueError("discriminator outputs must lie in [0, 1]")
    return -torch.log(_clamp_prob(d_fake)).mean()


def augment(patch: MassPatch, rng: np.random.Generator, config: GanTrainConfig | None = None) -> MassPatch:
    """Random flips then a random resized crop back to the patch side.

    Crop windows larger than the patch (scale > 1) replicate edge pixels, so
    constant images stay constant.
    """
    cfg = config or GanTrainConfig()
    img = patch.pixels
    side = img.shape[0]
    if rng.random() < cfg.flip_p:
        img = img[:, ::-1]
    if rng.random() < cfg.flip_p:
        img = img[::-1, :]

    area_frac = rng.uniform(*cfg.crop_scale)
    aspect = rng.uniform(*cfg.crop_ratio)
    target_area = side * side * area_frac
    crop_w = max(1, int(round(np.sqrt(target_area * aspect))))
    crop_h = max(1, int(round(np.sqrt(target_area / aspect))))
    y0 = int(rng.integers(min(0, side - crop_h), max(0, side - crop_h) + 1))
    x0 = int(rng.integers(min(0, side - crop_w), max(0, side - crop_w) + 1))
    rows = np.clip(np.arange(y0, y0 + crop_h), 0, side - 1)
    cols = np.clip(np.arange(x0, x0 + crop_w), 0, side - 1)
    crop = img[np.ix_(rows, cols)]
    out = resize_grid(crop, side, side)
    return MassPatch(pixels=out, label=patch.label, provenance=patch.provenance)


@dataclass
class GanCheckpoint:
    """Self-describing training snapshot: parameters, config echo, RNG state."""

    epoch: int
    step: int
    generator_state: dict
    discriminator_state: dict
    config: dict
    torch_rng_state: torch.Tensor | None = None
    losses: list = field(default_factory=list)

    def params_digest(self) -> str:
        h = hashlib.sha256()
        for state in (self.generator_state, self.discriminator_state):
            for key in sorted(state):
                h.update(key.encode())
                h.update(state[key].numpy().tobytes())
        return h.hexdigest()

    def build_generator(self) -> Generator:
        cfg = GanTrainConfig.from_dict(self.config)
        g = Generator(cfg.embedding_dim, cfg.base_channels, cfg.g_kernel)
        g.load_state_dict(self.generator_state)
        g.eval()
        return g

    def sample(self, n_benign: int, n_malignant: int, seed: int = 0) -> list[MassPatch]:
        return sample_synthetic_dataset(self.build_generator(), n_benign, n_malignant, seed)

    def save(self, path: Path | str) -> None:
        torch.save(
            {
                "epoch": self.epoch,
                "step": self.step,
                "generator_state": self.generator_state,
                "discriminator_state": self.discriminator_state,
                "config": self.config,
                "torch_rng_state": self.torch_rng_state,
                "losses": self.losses,
            },
            path,
        )

    @classmethod
    def load(cls, path: Path | str) -> "GanCheckpoint":
        data = torch.load(path, weights_only=False)
        return cls(**data)


def _snapshot(module: nn.Module) -> dict:
    return {k: v.detach().clone() for k, v in module.state_dict().items()}


def train_gan(
    patches: Sequence[MassPatch],
    config: GanTrainConfig,
    out_dir: Path | str | None = None,
) -> list[GanCheckpoint]:
    """Alternating D/G optimization; returns the checkpoint sequence.

    Fully deterministic for a fixed config seed: batch order, augmentation,
    label smoothing, and noise are all drawn from generators keyed on
    (seed, epoch, sample index), never on wall clock or worker identity.
    """
    if not patches:
        raise ValueError("no training patches")
    labels = {int(p.label) for p in patches}
    if len(labels) < 2:
        warnings.warn("training data contains a single class; conditioning is degenerate")

    model = build_gan(config)
    g, d = model.generator, model.discriminator
    opt_g = torch.optim.Adam(g.parameters(), lr=config.lr, betas=config.betas)
    opt_d = torch.optim.Adam(d.parameters(), lr=config.lr, betas=config.betas)
    noise_gen = torch.Generator().manual_seed(config.seed + 1)

    checkpoints: list[GanCheckpoint] = []
    losses: list[dict] = []
    step = 0

    def emit(epoch: int) -> None:
        ckpt = GanCheckpoint(
            epoch=epoch,
            step=step,
            generator_state=_snapshot(g),
            discriminator_state=_snapshot(d),
            config=config.to_dict(),
            torch_rng_state=noise_gen.get_state(),
            losses=list(losses),
        )
        checkpoints.append(ckpt)
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            ckpt.save(out / f"ckpt_epoch{epoch:05d}.pt")

    if config.epochs == 0:
        emit(0)
        return checkpoints

    n = len(patches)
    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng([config.seed, 17, epoch]).permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = []
            for i in idx:
                p = patches[int(i)]
                if config.augment:
                    p = augment(p, np.random.default_rng([config.seed, epoch, int(i)]), config)
                batch.append(p)
            x = torch.from_numpy(
                np.stack([b.pixels for b in batch]).astype(np.float32) * 2.0 - 1.0
            )[:, None, :, :]
            y = torch.tensor([int(b.label) for b in batch], dtype=torch.long)

            smooth_rng = np.random.default_rng([config.seed, 23, epoch, start])
            t = torch.tensor(
                [smooth_real_label(smooth_rng, *config.smoothing_range) for _ in batch],
                dtype=torch.float32,
            )

            z = torch.randn(len(batch), NOISE_DIM, generator=noise_gen)
            fake = g(z, y)

            opt_d.zero_grad()
            loss_d = discriminator_loss(d(x, y), d(fake.detach(), y), t)
            loss_d.backward()
            opt_d.step()

            z2 = torch.randn(len(batch), NOISE_DIM, generator=noise_gen)
            opt_g.zero_grad()
            loss_g = generator_loss(d(g(z2, y), y))
            loss_g.backward()
            opt_g.step()

            step += 1
            losses.append(
                {"epoch": epoch, "step": step, "d": float(loss_d), "g": float(loss_g)}
            )
        if config.checkpoint_every and epoch % config.checkpoint_every == 0:
            emit(epoch)
    if not checkpoints or checkpoints[-1].epoch != config.epochs:
        emit(config.epochs)
    return checkpoints


def sample_synthetic_dataset(
    generator: Generator, n_benign: int, n_malignant: int, seed: int = 0
) -> list[MassPatch]:
    """Exactly the requested label counts, pixels mapped from [-1,1] to [0,1]."""
    if n_benign < 0 or n_malignant < 0:
        raise ValueError("sample counts must be nonnegative")
    n = n_benign + n_malignant
    labels = torch.tensor([0] * n_benign + [1] * n_malignant, dtype=torch.long)
    gen = torch.Generator().manual_seed(seed)
    z = torch.randn(n, NOISE_DIM, generator=gen)
    generator.eval()
    patches: list[MassPatch] = []
    with torch.no_grad():
        for start in range(0, n, 64):
            sl = slice(start, min(start + 64, n))
            imgs = generator(z[sl], labels[sl]).numpy()[:, 0]
            for j, img in enumerate(imgs):
                i = start + j
                patches.append(
                    MassPatch(
                        pixels=(img + 1.0) / 2.0,
                        label=Label(int(labels[i])),
                        provenance=f"synthetic:seed{seed}:{i}",
                    )
                )
    return patches


def select_gan_checkpoint(
    checkpoints: Sequence,
    val_patches: Sequence[MassPatch],
    n_probe: int = 32,
    seed: int = 0,
    extractor: str = "tiny-conv",
):
    """Checkpoint whose samples are closest to validation data in Frechet distance.

    Ties break toward the earliest epoch. Any object with ``epoch`` and
    ``sample(n_benign, n_malignant, seed)`` qualifies as a checkpoint.
    """
    from .evaluation import fid  # local import: evaluation depends on ingest only

    if not checkpoints:
        raise ValueError("no checkpoints to select from")
    best = None
    best_score = None
    for ckpt in sorted(checkpoints, key=lambda c: c.epoch):
        generated = ckpt.sample(n_probe // 2, n_probe - n_probe // 2, seed=seed)
        score = fid(generated, val_patches, extractor).value
        if best_score is None or score < best_score:
            best, best_score = ckpt, score
    return best
