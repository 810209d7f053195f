"""AdamW, warmup schedule, the training step and loop, and checkpoints."""

from __future__ import annotations

import json
import logging
import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from camp import data
from camp import tensor as T
from camp.config import TrainConfig
from camp.losses import LossBreakdown
from camp.model import DualEncoder
from camp.prompts import Vocabulary
from camp.tensor import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"CAMP"
VERSION = 1


class FormatError(ValueError):
    """Malformed checkpoint file."""


class TrainingDiverged(FloatingPointError):
    pass


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to ``peak_lr``; constant afterwards unless ``lr_schedule='cosine'``."""
    if step < 0:
        raise ValueError("step must be non-negative")
    warm = 1.0 if cfg.warmup_steps == 0 else min(1.0, step / cfg.warmup_steps)
    lr = cfg.peak_lr * warm
    if cfg.lr_schedule == "cosine" and step > cfg.warmup_steps:
        span = max(1, cfg.total_steps - cfg.warmup_steps)
        frac = min(1.0, (step - cfg.warmup_steps) / span)
        lr = cfg.peak_lr * 0.5 * (1.0 + math.cos(math.pi * frac))
    return lr


@dataclass
class AdamW:
    """Decoupled weight decay Adam over named parameters."""

    params: list[tuple[str, Tensor]]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    no_decay: set[str] = field(default_factory=set)
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params:
            if not p.requires_grad:
                raise ValueError(f"parameter {name} is frozen; only trainable tensors get optimizer state")
            self.m.setdefault(name, np.zeros_like(p.data))
            self.v.setdefault(name, np.zeros_like(p.data))

    def step(self, lr: float) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in self.params:
            g = p.grad
            if g is None or g.shape != p.data.shape:
                raise ValueError(f"gradient for {name} missing or mis-shaped")
            dt = p.data.dtype
            m, v = self.m[name], self.v[name]
            m *= dt.type(self.beta1)
            m += dt.type(1.0 - self.beta1) * g
            v *= dt.type(self.beta2)
            v += dt.type(1.0 - self.beta2) * (g * g)
            if self.weight_decay and name not in self.no_decay:
                p.data -= dt.type(lr * self.weight_decay) * p.data
            mhat = m / dt.type(bc1)
            vhat = v / dt.type(bc2)
            p.data -= dt.type(lr) * mhat / (np.sqrt(vhat) + dt.type(self.eps))


def adamw_step(opt: AdamW, lr: float) -> None:
    opt.step(lr)


def make_optimizer(model: DualEncoder) -> AdamW:
    cfg = model.cfg
    return AdamW(
        model.trainable(),
        beta1=cfg.adam_beta1,
        beta2=cfg.adam_beta2,
        eps=cfg.adam_eps,
        weight_decay=cfg.weight_decay,
        no_decay=model.no_decay(),
    )


class BatchStream:
    """Deterministic epoch-shuffled batches: batch ``step`` depends only on (seed, step)."""

    def __init__(self, n: int, batch_size: int, seed: int):
        self.n, self.batch_size, self.seed = n, batch_size, seed
        self._perms: dict[int, list[int]] = {}

    def _perm(self, epoch: int) -> list[int]:
        if epoch not in self._perms:
            self._perms[epoch] = data.SplitMix64(self.seed * 1_000_003 + epoch + 1).permutation(self.n)
        return self._perms[epoch]

    def indices(self, step: int) -> list[int]:
        start = step * self.batch_size
        return [self._perm(p // self.n)[p % self.n] for p in range(start, start + self.batch_size)]


def train_step(model: DualEncoder, opt: AdamW, images: np.ndarray, captions: Sequence[str], lr: float) -> LossBreakdown:
    cfg = model.cfg
    model.zero_grad()
    try:
        bd = model.compute_loss(images, captions)
    except T.NonFiniteError as e:
        raise TrainingDiverged(f"step {opt.step_count}: non-finite forward ({e})") from e
    if not math.isfinite(bd.l_total):
        raise TrainingDiverged(f"step {opt.step_count}: loss {bd}")
    T.backward(bd.total)
    bd.total = None  # release the graph
    if cfg.grad_clip > 0:
        clip_grad_norm(model.trainable(), cfg.grad_clip)
    opt.step(lr)
    model.clamp_logit_scale()
    return bd


def clip_grad_norm(params: list[tuple[str, Tensor]], max_norm: float) -> float:
    total = math.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum()) for _, p in params))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for _, p in params:
            p.grad *= p.grad.dtype.type(scale)
    return total


def format_metrics(step: int, bd: LossBreakdown, lr: float) -> str:
    r = bd.as_row()
    return "\t".join([str(step)] + [repr(float(r[k])) for k in ("l_total", "l_con", "l_div", "l_neg", "tau")] + [repr(lr)]) + "\n"


class Trainer:
    def __init__(self, cfg: TrainConfig, train_set: Sequence[data.Sample] | None = None, model: DualEncoder | None = None, opt: AdamW | None = None):
        self.cfg = cfg
        if train_set is None:
            train_set, _ = data.generate_split(cfg.n_train, cfg.n_eval, cfg.seed)
        self.train_set = list(train_set)
        self.images = np.stack([s.image for s in self.train_set])
        self.captions = [s.caption for s in self.train_set]
        self.model = model or DualEncoder(cfg)
        self.opt = opt or make_optimizer(self.model)
        self.stream = BatchStream(len(self.train_set), cfg.batch_size, cfg.seed)
        self.history: list[LossBreakdown] = []

    @property
    def step(self) -> int:
        return self.opt.step_count

    def batch(self, step: int) -> tuple[np.ndarray, list[str]]:
        idx = self.stream.indices(step)
        return self.images[idx], [self.captions[i] for i in idx]

    def train(self, until: int | None = None, log_path: str | Path | None = None, progress_every: int = 0) -> list[LossBreakdown]:
        until = self.cfg.total_steps if until is None else until
        fh = open(log_path, "a", encoding="utf-8", newline="\n") if log_path else None
        t0 = time.perf_counter()
        try:
            while self.step < until:
                step = self.step
                lr = lr_at(step, self.cfg)
                images, captions = self.batch(step)
                bd = train_step(self.model, self.opt, images, captions, lr)
                self.history.append(bd)
                if fh:
                    fh.write(format_metrics(step, bd, lr))
                if progress_every and (step % progress_every == 0 or step + 1 == until):
                    logger.info("step %d  l_total %.4f  l_con %.4f  tau %.4f  (%.1fs)", step, bd.l_total, bd.l_con, bd.tau, time.perf_counter() - t0)
        finally:
            if fh:
                fh.close()
        return self.history


# ---------------------------------------------------------------------------
# checkpoints


def _checkpoint_tensors(model: DualEncoder, opt: AdamW | None) -> list[tuple[str, np.ndarray]]:
    out = [(f"model.{n}", p.data) for n, p in model.named_parameters()]
    if opt is not None:
        for n, _ in opt.params:
            out.append((f"adam.m.{n}", opt.m[n]))
            out.append((f"adam.v.{n}", opt.v[n]))
    return out


def checkpoint_bytes(model: DualEncoder, opt: AdamW | None = None) -> bytes:
    tensors = _checkpoint_tensors(model, opt)
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors:
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)) + nb)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    meta = {
        "config": json.loads(model.cfg.to_json()),
        "step": opt.step_count if opt is not None else 0,
        "has_optimizer": opt is not None,
        "vocab": model.vocab.words,
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(blob)) + blob)
    return b"".join(parts)


def save_checkpoint(model: DualEncoder, opt: AdamW | None, path: str | Path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model, opt))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.off = buf, 0

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.buf):
            raise FormatError(f"truncated checkpoint reading {what} at offset {self.off} (need {n} bytes, have {len(self.buf) - self.off})")
        out = self.buf[self.off : self.off + n]
        self.off += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def parse_checkpoint(buf: bytes) -> tuple[dict[str, np.ndarray], dict]:
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic at offset 0 (expected b'CAMP')")
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported version {version} at offset 4")
    count = r.u32("tensor count")
    tensors: dict[str, np.ndarray] = {}
    for i in range(count):
        at = r.off
        name_len = r.u32(f"name length of tensor {i}")
        if name_len > 4096:
            raise FormatError(f"implausible name length {name_len} at offset {at}")
        try:
            name = r.take(name_len, f"name of tensor {i}").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"tensor name at offset {at + 4} is not UTF-8") from None
        rank = r.u32(f"rank of {name}")
        if rank > 8:
            raise FormatError(f"implausible rank {rank} for {name} at offset {r.off - 4}")
        dims = struct.unpack(f"<{rank}Q", r.take(8 * rank, f"dims of {name}"))
        n = int(np.prod(dims)) if rank else 1
        payload = r.take(4 * n, f"payload of {name}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)
    blob_len = r.u32("config length")
    try:
        meta = json.loads(r.take(blob_len, "config blob").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"config blob is not valid UTF-8 JSON ({e})") from None
    if r.off != len(buf):
        raise FormatError(f"{len(buf) - r.off} trailing bytes at offset {r.off}")
    return tensors, meta


def load_checkpoint(path: str | Path) -> tuple[DualEncoder, AdamW | None, TrainConfig]:
    tensors, meta = parse_checkpoint(Path(path).read_bytes())
    cfg = TrainConfig(**meta["config"])
    model = DualEncoder(cfg, Vocabulary(meta["vocab"]))
    for name, p in model.named_parameters():
        key = f"model.{name}"
        if key not in tensors:
            raise FormatError(f"checkpoint lacks tensor {key}")
        if tensors[key].shape != p.data.shape:
            raise FormatError(f"{key}: shape {tensors[key].shape} != model {p.data.shape}")
        p.data = tensors[key].copy()
    opt = None
    if meta.get("has_optimizer"):
        opt = make_optimizer(model)
        for n, _ in opt.params:
            opt.m[n] = tensors[f"adam.m.{n}"].copy()
            opt.v[n] = tensors[f"adam.v.{n}"].copy()
        opt.step_count = int(meta["step"])
    return model, opt, cfg
