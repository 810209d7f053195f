"""Dual encoder: multi-prompt text encoder + ViT, with a learnable temperature."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from camp import data
from camp import tensor as T
from camp.config import TrainConfig
from camp.losses import LossBreakdown, contrastive_loss, diversity_loss, negation_loss, total_loss
from camp.nn import Module
from camp.prompts import PromptConfig, SegmentedSequence, Vocabulary, build_sequence, collate, prompt_words, tokenize
from camp.tensor import Tensor
from camp.text_encoder import SegmentEmbeddings, TextEncoder, project_and_concat, set_trainable
from camp.vision_encoder import VisionEncoder

LOGIT_SCALE_MIN = 1.0
LOGIT_SCALE_MAX = 100.0

CORPUS_WORDS = ("a", "on", "background", "at", "the") + data.COLORS + data.SHAPES + data.BACKGROUNDS + data.POSITIONS


def build_vocab(cfg: TrainConfig) -> Vocabulary:
    words = list(CORPUS_WORDS)
    for mode in ("adaptive", "fixed", "minimal"):
        words += prompt_words(PromptConfig(K=cfg.K, template_mode=mode, fixed_prompt_texts=cfg.fixed_prompt_texts))
    return Vocabulary.build(cfg.K, words)


@dataclass
class TextOutput:
    p: Tensor  # (B, D) unit rows
    n: Tensor | None  # (B, D) negation embeddings
    segments: SegmentEmbeddings


class DualEncoder(Module):
    def __init__(self, cfg: TrainConfig, vocab: Vocabulary | None = None):
        self._cfg = cfg
        self._vocab = vocab or build_vocab(cfg)
        self._prompt_cfg = cfg.prompt_config()
        self._seq_cache: dict[str, SegmentedSequence] = {}
        rng = np.random.default_rng(cfg.seed)
        proj_dim = cfg.D // cfg.K if cfg.combine_mode == "concat" else cfg.D
        self.text = TextEncoder(
            rng,
            len(self._vocab),
            self._vocab.apt_rows(),
            self._vocab.n_apt,
            proj_dim,
            width=cfg.text_width,
            n_layers=cfg.text_layers,
            n_heads=cfg.text_heads,
            max_len=cfg.max_seq_len,
            mlp_ratio=cfg.mlp_ratio,
        )
        self.vision = VisionEncoder(
            rng,
            out_dim=cfg.D,
            image_size=cfg.image_size,
            patch=cfg.patch_size,
            width=cfg.vision_width,
            n_layers=cfg.vision_layers,
            n_heads=cfg.vision_heads,
            pool_heads=cfg.pool_heads,
            t_max=cfg.t_max,
            temporal_mode=cfg.temporal_mode,
            mlp_ratio=cfg.mlp_ratio,
        )
        self.logit_scale = Tensor(np.float32(math.log(1.0 / cfg.init_tau)), requires_grad=True)
        set_trainable(self.text, cfg.L, cfg.learnable_vocab)

    @property
    def cfg(self) -> TrainConfig:
        return self._cfg

    @property
    def vocab(self) -> Vocabulary:
        return self._vocab

    @property
    def prompt_cfg(self) -> PromptConfig:
        return self._prompt_cfg

    def tau(self) -> Tensor:
        return T.exp(-self.logit_scale)

    def clamp_logit_scale(self) -> None:
        lo, hi = math.log(LOGIT_SCALE_MIN), math.log(LOGIT_SCALE_MAX)
        self.logit_scale.data = np.clip(self.logit_scale.data, lo, hi).astype(self.logit_scale.dtype)

    def no_decay(self) -> set[str]:
        """Parameter names excluded from weight decay (norms, biases, temperature)."""
        return {n for n, p in self.named_parameters() if p.ndim < 2}

    def sequence(self, caption: str) -> SegmentedSequence:
        seq = self._seq_cache.get(caption)
        if seq is None:
            seq = build_sequence(tokenize(caption, self._vocab), self._prompt_cfg, self._vocab)
            self._seq_cache[caption] = seq
        return seq

    def encode_text(self, captions: Sequence[str]) -> TextOutput:
        seqs = [self.sequence(c) for c in captions]
        seg = self.text.encode_batch(collate(seqs, pad_id=self._vocab.unk_id))
        p, n = project_and_concat(seg, self._cfg.K, self._cfg.combine_mode)
        return TextOutput(p, n, seg)

    def encode_images(self, images: np.ndarray) -> Tensor:
        q, _ = self.vision.encode_images(np.asarray(images))
        return q

    def compute_loss(self, images: np.ndarray, captions: Sequence[str], alpha: float | None = None, beta: float | None = None) -> LossBreakdown:
        cfg = self._cfg
        alpha = cfg.alpha if alpha is None else alpha
        beta = cfg.beta if beta is None else beta
        text = self.encode_text(captions)
        q = self.encode_images(images)
        tau = self.tau()
        l_t2i, l_i2t, l_con = contrastive_loss(text.p, q, tau)
        l_div = diversity_loss(text.segments.projected[:, : cfg.K])
        l_neg = negation_loss(q, text.p, text.n, tau) if text.n is not None else None
        return total_loss(l_t2i, l_i2t, l_con, l_div, l_neg, tau, alpha, beta)

    def trainable_census(self) -> int:
        return sum(p.data.size for _, p in self.trainable())
