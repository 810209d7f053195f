"""Procedural shape/colour/background/position image-caption corpus.

Splits are drawn with SplitMix64 (constants below) and a Fisher-Yates
shuffle, so they reproduce bit-for-bit in any language:

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    return z ^ (z >> 31)            (all arithmetic mod 2**64)

    for i = n-1 .. 1:  j = next() mod (i+1);  swap(a[i], a[j])
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

SHAPES = ("circle", "square", "triangle", "cross")
COLORS = ("red", "green", "blue", "yellow")
BACKGROUNDS = ("black", "white", "gray")
POSITIONS = ("left", "center", "right")

RGB = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 0.8, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
    "black": (0.0, 0.0, 0.0),
    "white": (1.0, 1.0, 1.0),
    "gray": (0.5, 0.5, 0.5),
}

IMAGE_SIZE = 32
SHAPE_RADIUS = 5.0
_MASK64 = (1 << 64) - 1


class Factors(NamedTuple):
    shape: str
    color: str
    background: str
    position: str


ALL_FACTORS: tuple[Factors, ...] = tuple(Factors(*f) for f in itertools.product(SHAPES, COLORS, BACKGROUNDS, POSITIONS))


@dataclass
class Sample:
    id: int
    image: np.ndarray  # (3, W, W) float32 in [0, 1]
    caption: str
    factors: Factors | None = None


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def shuffle(self, items: list) -> list:
        for i in range(len(items) - 1, 0, -1):
            j = self.next() % (i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def permutation(self, n: int) -> list[int]:
        return self.shuffle(list(range(n)))


def caption_of(f: Factors) -> str:
    return f"a {f.color} {f.shape} on a {f.background} background at the {f.position}"


def parse_caption(caption: str) -> Factors:
    words = caption.split()
    if len(words) != 10 or words[0] != "a" or words[3:5] != ["on", "a"] or words[6:9] != ["background", "at", "the"]:
        raise ValueError(f"not a corpus caption: {caption!r}")
    return Factors(shape=words[2], color=words[1], background=words[5], position=words[9])


def _shape_mask(shape: str, cx: float, cy: float, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    dx = xx + 0.5 - cx
    dy = yy + 0.5 - cy
    r = SHAPE_RADIUS
    if shape == "circle":
        return dx * dx + dy * dy <= r * r
    if shape == "square":
        return (np.abs(dx) <= r - 0.5) & (np.abs(dy) <= r - 0.5)
    if shape == "triangle":
        # apex up; half-width grows linearly from 0 at the top to r at the base
        return (dy >= -r) & (dy <= r) & (np.abs(dx) <= (dy + r) / 2)
    if shape == "cross":
        arm = r / 3
        return ((np.abs(dx) <= r) & (np.abs(dy) <= arm)) | ((np.abs(dy) <= r) & (np.abs(dx) <= arm))
    raise ValueError(f"unknown shape {shape!r}")


def render_image(f: Factors, size: int = IMAGE_SIZE, x_offset: float = 0.0) -> np.ndarray:
    """Background fill then a hard-edged shape centred in the stated horizontal third."""
    img = np.empty((3, size, size), dtype=np.float32)
    img[:] = np.asarray(RGB[f.background], dtype=np.float32)[:, None, None]
    cx = size * (2 * POSITIONS.index(f.position) + 1) / 6 + x_offset
    mask = _shape_mask(f.shape, cx, size / 2, size)
    for c, v in enumerate(RGB[f.color]):
        img[c][mask] = v
    return img


def make_sample(idx: int) -> Sample:
    f = ALL_FACTORS[idx]
    return Sample(idx, render_image(f), caption_of(f), f)


def corpus() -> list[Sample]:
    return [make_sample(i) for i in range(len(ALL_FACTORS))]


def generate_split(n_train: int, n_eval: int, seed: int) -> tuple[list[Sample], list[Sample]]:
    if n_train < 0 or n_eval < 0 or n_train + n_eval > len(ALL_FACTORS):
        raise ValueError(f"cannot draw {n_train}+{n_eval} disjoint samples from {len(ALL_FACTORS)} combinations")
    order = SplitMix64(seed).permutation(len(ALL_FACTORS))
    train = [make_sample(i) for i in order[:n_train]]
    held = [make_sample(i) for i in order[n_train : n_train + n_eval]]
    return train, held


def make_video(f: Factors, n_frames: int, step: float = 1.0) -> np.ndarray:
    """(T, 3, W, W): the shape slides right by ``step`` pixels per frame."""
    return np.stack([render_image(f, x_offset=t * step) for t in range(n_frames)])


# ---------------------------------------------------------------------------
# external corpus: <dir>/index.tsv rows "id<TAB>relative path<TAB>caption";
# image files hold W*W*3 raw bytes, row-major, interleaved RGB.


def write_external_corpus(samples: Sequence[Sample], root: str | Path) -> Path:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    lines = []
    for s in samples:
        rel = f"images/{s.id:05d}.rgb"
        pix = np.round(np.clip(s.image, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
        (root / rel).write_bytes(pix.tobytes())
        lines.append(f"{s.id}\t{rel}\t{s.caption}\n")
    index = root / "index.tsv"
    with open(index, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(lines)
    return index


def load_external_corpus(root: str | Path) -> list[Sample]:
    root = Path(root)
    out = []
    with open(root / "index.tsv", encoding="utf-8", newline="\n") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"index.tsv line {lineno}: expected 3 tab-separated fields")
            sid, rel, caption = parts
            raw = np.frombuffer((root / rel).read_bytes(), dtype=np.uint8)
            side = int(round(np.sqrt(raw.size / 3)))
            if side * side * 3 != raw.size:
                raise ValueError(f"{rel}: {raw.size} bytes is not a square RGB image")
            img = raw.reshape(side, side, 3).transpose(2, 0, 1).astype(np.float32) / 255.0
            out.append(Sample(int(sid), img, caption))
    return out
