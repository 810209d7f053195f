"""Causal transformer text encoder with adaptive prompt tokens and last-token pooling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from camp import tensor as T
from camp.nn import Block, LayerNorm, Linear, Module, mask_to_bias
from camp.prompts import Batch, SegmentedSequence, build_mask, collate
from camp.tensor import Tensor


class CapacityError(ValueError):
    """Input longer than the model's positional table."""


@dataclass
class SegmentEmbeddings:
    pooled: Tensor  # (B, K', H)
    projected: Tensor  # (B, K', D/K) or (B, K', D) in average mode


class TextEncoder(Module):
    def __init__(
        self,
        rng: np.random.Generator,
        vocab_size: int,
        apt_rows: np.ndarray,
        n_apt: int,
        out_dim: int,
        width: int = 128,
        n_layers: int = 4,
        n_heads: int = 4,
        max_len: int = 128,
        mlp_ratio: int = 4,
    ):
        if width % n_heads:
            raise ValueError(f"width {width} not divisible by n_heads {n_heads}")
        self.tok_table = Tensor(rng.normal(0, 0.02, (vocab_size, width)).astype(np.float32), requires_grad=True)
        self.apt_table = Tensor(rng.normal(0, 0.02, (max(n_apt, 1), width)).astype(np.float32), requires_grad=True)
        self.pos_table = Tensor(rng.normal(0, 0.02, (max_len, width)).astype(np.float32), requires_grad=True)
        self.blocks = [Block(rng, width, n_heads, mlp_ratio, n_layers) for _ in range(n_layers)]
        self.ln_f = LayerNorm(width)
        self.proj = Linear(rng, width, out_dim, bias=False, std=width**-0.5)
        self._apt_rows = np.asarray(apt_rows, dtype=np.int64)
        self._max_len = max_len
        self.width = width

    @property
    def max_len(self) -> int:
        return self._max_len

    def embed(self, ids: np.ndarray, pos: np.ndarray) -> Tensor:
        rows = self._apt_rows[ids]
        is_apt = rows >= 0
        words = T.take(self.tok_table, np.where(is_apt, 0, ids))
        if is_apt.any():
            apts = T.take(self.apt_table, np.where(is_apt, rows, 0))
            words = T.where(is_apt[..., None], apts, words)
        return words + T.take(self.pos_table, pos)

    def hidden(self, ids: np.ndarray, pos: np.ndarray, mask: np.ndarray) -> Tensor:
        """Final-norm hidden states (B, S, H) under the attendability ``mask`` (B, S, S)."""
        if ids.shape[1] > self._max_len or (pos.size and pos.max() >= self._max_len):
            raise CapacityError(f"sequence length {ids.shape[1]} exceeds max_len {self._max_len}")
        x = self.embed(ids, pos)
        bias = mask_to_bias(mask, x.dtype)
        for block in self.blocks:
            x = block(x, bias)
        return self.ln_f(x)

    def encode_batch(self, batch: Batch) -> SegmentEmbeddings:
        h = self.hidden(batch.token_ids, batch.position_ids, batch.mask)
        pooled = T.take_along_batch(h, batch.pooling)
        return SegmentEmbeddings(pooled, self.proj(pooled))

    def forward_singlepass(self, seq: SegmentedSequence, mask: np.ndarray | None = None) -> SegmentEmbeddings:
        """All segments of one sequence in a single masked pass; rows in segment order."""
        if mask is None:
            mask = build_mask(seq)
        batch = Batch(seq.token_ids[None], seq.position_ids[None], np.asarray(mask)[None], np.asarray(seq.pooling_index)[None])
        out = self.encode_batch(batch)
        return SegmentEmbeddings(out.pooled[0], out.projected[0])

    def forward_multipass(self, seq: SegmentedSequence) -> SegmentEmbeddings:
        """Reference path: one plain causal pass per segment over prefix + that segment."""
        pooled, projected = [], []
        for s in range(1, seq.n_segments + 1):
            single = seq.standalone(s)
            out = self.forward_singlepass(single, np.tri(len(single), dtype=bool))
            pooled.append(out.pooled[-1:])
            projected.append(out.projected[-1:])
        return SegmentEmbeddings(T.concat(pooled, 0), T.concat(projected, 0))


def project_and_concat(emb: SegmentEmbeddings | Tensor, K: int, combine_mode: str = "concat") -> tuple[Tensor, Tensor | None]:
    """Combine projected prompt rows into unit-norm joint embeddings.

    ``emb`` rows are (B, K', w) with K' = K or 2K. Returns (positive, negation);
    negation is None when only K rows are present.
    """
    proj = emb.projected if isinstance(emb, SegmentEmbeddings) else emb
    squeeze = proj.ndim == 2
    if squeeze:
        proj = proj.reshape(1, *proj.shape)
    b, kp, w = proj.shape
    if kp not in (K, 2 * K):
        raise ValueError(f"expected {K} or {2 * K} segment rows, got {kp}")

    def combine(rows: Tensor) -> Tensor:
        if combine_mode == "concat":
            joint = rows.reshape(b, K * w)
        elif combine_mode == "average":
            joint = rows.mean(axis=1)
        else:
            raise ValueError(f"unknown combine_mode {combine_mode!r}")
        return T.l2_normalize(joint)

    pos = combine(proj[:, :K])
    neg = combine(proj[:, K:]) if kp == 2 * K else None
    if squeeze:
        pos = pos[0]
        neg = neg[0] if neg is not None else None
    return pos, neg


def set_trainable(enc: TextEncoder, n_unfrozen: int, learnable_vocab: bool) -> None:
    """Freeze all but the last ``n_unfrozen`` blocks; projection and APT rows always train."""
    n_layers = len(enc.blocks)
    if not 0 <= n_unfrozen <= n_layers:
        raise ValueError(f"unfrozen layer count must be in [0, {n_layers}], got {n_unfrozen}")
    for i, block in enumerate(enc.blocks):
        block.set_requires_grad(i >= n_layers - n_unfrozen)
    enc.ln_f.set_requires_grad(n_unfrozen > 0)
    enc.tok_table.set_requires_grad(learnable_vocab)
    enc.pos_table.set_requires_grad(learnable_vocab)
    enc.apt_table.set_requires_grad(True)
    enc.proj.set_requires_grad(True)


def encode_sequences(enc: TextEncoder, seqs: Sequence[SegmentedSequence], pad_id: int = 0) -> SegmentEmbeddings:
    return enc.encode_batch(collate(seqs, pad_id))
