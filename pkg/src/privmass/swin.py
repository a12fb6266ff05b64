"""Desk-scale shifted-window attention backbone for 224x224x3 inputs.

Same mechanism family as the full-size windowed transformers (window
attention with relative position bias, cyclic shift with masking, patch
merging) at strongly reduced width and depth, so the training harness runs
on CPU fixtures. Full-size pretrained weights can be dropped in by loading
a compatible state dict built at larger ``SwinConfig`` settings.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn


@dataclass(frozen=True)
class SwinConfig:
    img_size: int = 224
    patch: int = 28
    dim: int = 16
    window: int = 4
    heads: tuple[int, int] = (2, 4)
    depths: tuple[int, int] = (2, 2)
    mlp_ratio: int = 2
    seed: int = 0

    @property
    def grid(self) -> int:
        return self.img_size // self.patch

    @property
    def out_dim(self) -> int:
        return 2 * self.dim


def window_partition(x: torch.Tensor, w: int) -> torch.Tensor:
    b, h, width, c = x.shape
    x = x.view(b, h // w, w, width // w, w, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, w * w, c)


def window_reverse(windows: torch.Tensor, w: int, h: int, width: int) -> torch.Tensor:
    b = windows.shape[0] // (h * width // (w * w))
    x = windows.view(b, h // w, width // w, w, w, -1)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(b, h, width, -1)


class WindowAttention(nn.Module):
    def __init__(self, dim: int, window: int, heads: int):
        super().__init__()
        self.window = window
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.rel_bias = nn.Parameter(torch.zeros((2 * window - 1) ** 2, heads))

        coords = torch.stack(
            torch.meshgrid(torch.arange(window), torch.arange(window), indexing="ij")
        ).flatten(1)
        rel = coords[:, :, None] - coords[:, None, :] + window - 1
        index = rel[0] * (2 * window - 1) + rel[1]
        self.register_buffer("rel_index", index, persistent=False)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        bw, n, c = x.shape
        qkv = self.qkv(x).view(bw, n, 3, self.heads, c // self.heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q @ k.transpose(-2, -1)) * self.scale
        bias = self.rel_bias[self.rel_index.view(-1)].view(n, n, self.heads)
        attn = attn + bias.permute(2, 0, 1)[None]
        if mask is not None:
            nw = mask.shape[0]
            attn = attn.view(bw // nw, nw, self.heads, n, n) + mask[None, :, None]
            attn = attn.view(bw, self.heads, n, n)
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(bw, n, c)
        return self.proj(out)


def _shift_mask(grid: int, window: int, shift: int) -> torch.Tensor:
    """Standard region mask that keeps cyclically-wrapped pixels apart."""
    img = torch.zeros(1, grid, grid, 1)
    cnt = 0
    spans = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
    for hs in spans:
        for ws in spans:
            img[:, hs, ws, :] = cnt
            cnt += 1
    windows = window_partition(img, window).squeeze(-1)
    mask = windows[:, None, :] - windows[:, :, None]
    return mask.masked_fill(mask != 0, -100.0)


class SwinBlock(nn.Module):
    def __init__(self, dim: int, grid: int, window: int, shift: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.grid = grid
        self.window = window
        self.shift = shift
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, window, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, mlp_ratio * dim), nn.GELU(), nn.Linear(mlp_ratio * dim, dim)
        )
        if shift > 0:
            self.register_buffer("attn_mask", _shift_mask(grid, window, shift), persistent=False)
        else:
            self.attn_mask = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, length, c = x.shape
        g = self.grid
        shortcut = x
        h = self.norm1(x).view(b, g, g, c)
        if self.shift > 0:
            h = torch.roll(h, shifts=(-self.shift, -self.shift), dims=(1, 2))
        wins = window_partition(h, self.window)
        wins = self.attn(wins, self.attn_mask)
        h = window_reverse(wins, self.window, g, g)
        if self.shift > 0:
            h = torch.roll(h, shifts=(self.shift, self.shift), dims=(1, 2))
        x = shortcut + h.reshape(b, length, c)
        return x + self.mlp(self.norm2(x))


class PatchMerging(nn.Module):
    def __init__(self, dim: int, grid: int):
        super().__init__()
        self.grid = grid
        self.norm = nn.LayerNorm(4 * dim)
        self.reduce = nn.Linear(4 * dim, 2 * dim, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, length, c = x.shape
        g = self.grid
        x = x.view(b, g, g, c)
        x = torch.cat(
            [x[:, 0::2, 0::2], x[:, 1::2, 0::2], x[:, 0::2, 1::2], x[:, 1::2, 1::2]], dim=-1
        )
        x = x.view(b, (g // 2) * (g // 2), 4 * c)
        return self.reduce(self.norm(x))


class TinySwin(nn.Module):
    """Patch embed -> windowed stage -> merge -> windowed stage -> head."""

    def __init__(self, config: SwinConfig = SwinConfig()):
        super().__init__()
        self.config = config
        g, w = config.grid, config.window
        if g % w or (g // 2) % min(w, g // 2):
            raise ValueError(f"window {w} must tile the {g}x{g} grid")
        self.patch_embed = nn.Conv2d(3, config.dim, config.patch, stride=config.patch)
        shift = w // 2
        self.stage1 = nn.Sequential(
            *[
                SwinBlock(config.dim, g, w, 0 if i % 2 == 0 else shift, config.heads[0], config.mlp_ratio)
                for i in range(config.depths[0])
            ]
        )
        self.merge = PatchMerging(config.dim, g)
        g2, w2 = g // 2, min(w, g // 2)
        self.stage2 = nn.Sequential(
            *[
                SwinBlock(2 * config.dim, g2, w2, 0 if i % 2 == 0 else w2 // 2, config.heads[1], config.mlp_ratio)
                for i in range(config.depths[1])
            ]
        )
        self.norm = nn.LayerNorm(config.out_dim)
        self.head = nn.Linear(config.out_dim, 2)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        h = self.patch_embed(x).flatten(2).transpose(1, 2)
        h = self.stage1(h)
        h = self.merge(h)
        h = self.stage2(h)
        return self.norm(h).mean(dim=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x))


def init_weights(module: nn.Module, seed: int) -> None:
    """Deterministic re-initialization from an explicit generator."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Linear, nn.Conv2d)):
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * 0.02)
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, nn.LayerNorm):
                m.weight.fill_(1.0)
                m.bias.zero_()
            elif isinstance(m, WindowAttention):
                m.rel_bias.copy_(torch.randn(m.rel_bias.shape, generator=gen) * 0.02)
