"""Tiny ViT with multi-head attention pooling, plus the video extension."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from camp import tensor as T
from camp.nn import Block, LayerNorm, Linear, Module
from camp.tensor import Tensor


class ConfigError(ValueError):
    pass


def patchify(image: np.ndarray, patch: int) -> np.ndarray:
    """(3, W, W) or (B, 3, W, W) -> (N, patch*patch*3) or (B, N, patch*patch*3).

    Patches are taken in row-major order; inside a patch values are flattened
    channel-last (row, col, channel).
    """
    img = np.asarray(image)
    batched = img.ndim == 4
    if not batched:
        img = img[None]
    b, c, h, w = img.shape
    if h != w or h % patch:
        raise ValueError(f"image side {h}x{w} not divisible by patch size {patch}")
    p = h // patch
    out = img.reshape(b, c, p, patch, p, patch).transpose(0, 2, 4, 3, 5, 1).reshape(b, p * p, patch * patch * c)
    return out if batched else out[0]


class AttentionPool(Module):
    """One learnable query attends over tokens; heads write disjoint channel spans."""

    def __init__(self, rng: np.random.Generator, width: int, out_dim: int, n_heads: int):
        if out_dim % n_heads:
            raise ConfigError(f"pool heads {n_heads} must divide embedding size {out_dim}")
        self.query = Tensor(rng.normal(0, 1.0, out_dim).astype(np.float32), requires_grad=True)
        self.key = Linear(rng, width, out_dim, bias=False, std=width**-0.5)
        self.value = Linear(rng, width, out_dim, bias=False, std=width**-0.5)
        self.n_heads = n_heads
        self.out_dim = out_dim

    def __call__(self, tokens: Tensor) -> tuple[Tensor, Tensor]:
        """tokens (B, N, width) -> pooled (B, D), weights (B, heads, N)."""
        b, n, _ = tokens.shape
        nh, hd = self.n_heads, self.out_dim // self.n_heads
        k = self.key(tokens).reshape(b, n, nh, hd)
        v = self.value(tokens).reshape(b, n, nh, hd).transpose(0, 2, 1, 3)
        q = self.query.reshape(1, nh, hd)
        scores = (k * q).sum(axis=-1).transpose(0, 2, 1) * (1.0 / np.sqrt(hd))
        weights = T.softmax(scores, axis=-1)
        pooled = (weights.reshape(b, nh, 1, n) @ v).reshape(b, self.out_dim)
        return pooled, weights


class VisionEncoder(Module):
    def __init__(
        self,
        rng: np.random.Generator,
        out_dim: int = 96,
        image_size: int = 32,
        patch: int = 8,
        width: int = 128,
        n_layers: int = 4,
        n_heads: int = 4,
        pool_heads: int = 6,
        t_max: int = 16,
        temporal_mode: str = "scalar",
        mlp_ratio: int = 4,
    ):
        if image_size % patch:
            raise ConfigError(f"image size {image_size} not divisible by patch {patch}")
        if temporal_mode not in ("scalar", "channel"):
            raise ConfigError(f"unknown temporal_mode {temporal_mode!r}")
        n_tokens = (image_size // patch) ** 2
        self.patch_embed = Linear(rng, patch * patch * 3, width, std=(patch * patch * 3) ** -0.5)
        self.pos_embed = Tensor(rng.normal(0, 0.02, (n_tokens, width)).astype(np.float32), requires_grad=True)
        self.blocks = [Block(rng, width, n_heads, mlp_ratio, n_layers) for _ in range(n_layers)]
        self.ln_f = LayerNorm(width)
        self.pool = AttentionPool(rng, width, out_dim, pool_heads)
        t_shape = (t_max, 1, 1) if temporal_mode == "scalar" else (t_max, 1, width)
        self.temporal = Tensor(np.zeros(t_shape, np.float32), requires_grad=True)
        self._patch = patch
        self._image_size = image_size
        self.t_max = t_max

    @property
    def grid(self) -> int:
        return self._image_size // self._patch

    def tokens(self, images: np.ndarray) -> Tensor:
        """(B, 3, W, W) -> (B, N, width) after the transformer stack."""
        x = self.patch_embed(Tensor(patchify(images, self._patch), dtype=self.pos_embed.dtype)) + self.pos_embed
        for block in self.blocks:
            x = block(x)
        return self.ln_f(x)

    def encode_images(self, images: np.ndarray) -> tuple[Tensor, Tensor]:
        """Batch of images -> (unit-norm embeddings (B, D), pooling weights (B, heads, N))."""
        pooled, weights = self.pool(self.tokens(np.asarray(images)))
        return T.l2_normalize(pooled), weights

    def encode_image(self, image: np.ndarray) -> tuple[Tensor, Tensor]:
        q, w = self.encode_images(np.asarray(image)[None])
        return q[0], w[0]

    def encode_videos(self, videos: np.ndarray) -> tuple[Tensor, Tensor]:
        """(B, T, 3, W, W) -> (B, D). Frames share the ViT; a learned per-frame offset is added before flattening."""
        videos = np.asarray(videos)
        b, t = videos.shape[:2]
        if not 1 <= t <= self.t_max:
            raise ConfigError(f"frame count {t} outside [1, {self.t_max}]")
        tok = self.tokens(videos.reshape(b * t, *videos.shape[2:]))
        n, w = tok.shape[1:]
        tok = tok.reshape(b, t, n, w) + self.temporal[:t]
        pooled, weights = self.pool(tok.reshape(b, t * n, w))
        return T.l2_normalize(pooled), weights

    def encode_video(self, frames: np.ndarray) -> Tensor:
        q, _ = self.encode_videos(np.asarray(frames)[None])
        return q[0]


def head_groups(out_dim: int, n_heads: int, K: int) -> list[list[int]]:
    """Heads whose output channels fall in each of the K embedding segments."""
    if out_dim % K:
        raise ConfigError(f"K={K} does not divide embedding size {out_dim}")
    seg, hd = out_dim // K, out_dim // n_heads
    if seg % hd and hd % seg:
        raise ConfigError(f"segment width {seg} and head width {hd} do not align")
    groups = []
    for s in range(K):
        lo, hi = s * seg, (s + 1) * seg
        groups.append([h for h in range(n_heads) if h * hd < hi and (h + 1) * hd > lo])
    return groups


@dataclass
class AttentionMapSet:
    maps: np.ndarray  # (K, P, P)

    def __len__(self) -> int:
        return len(self.maps)

    def argmax_patches(self) -> list[int]:
        return [int(np.argmax(m)) for m in self.maps]

    def save(self, out_dir: str | Path, stem: str) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for s, m in enumerate(self.maps, start=1):
            csv = out / f"{stem}_seg{s}.csv"
            csv.write_text("".join(",".join(repr(float(v)) for v in row) + "\n" for row in m), encoding="utf-8")
            pgm = out / f"{stem}_seg{s}.pgm"
            pgm.write_bytes(to_pgm(m))
            paths += [csv, pgm]
        return paths


def to_pgm(grid: np.ndarray) -> bytes:
    """Binary 8-bit PGM, values rescaled linearly to 0-255."""
    g = np.asarray(grid, dtype=np.float64)
    lo, hi = g.min(), g.max()
    scaled = np.zeros_like(g) if hi <= lo else (g - lo) / (hi - lo)
    pix = np.round(scaled * 255).astype(np.uint8)
    h, w = pix.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pix.tobytes()


def read_pgm(data: bytes) -> np.ndarray:
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def attention_maps_by_segment(image: np.ndarray, enc: VisionEncoder, K: int) -> AttentionMapSet:
    with T.no_grad():
        _, weights = enc.encode_image(image)
    w = weights.data
    groups = head_groups(enc.pool.out_dim, enc.pool.n_heads, K)
    p = enc.grid
    maps = np.stack([w[g].mean(axis=0).reshape(p, p) for g in groups])
    return AttentionMapSet(maps)
