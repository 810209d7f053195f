"""Verification routines: single-pass equivalence, finite-difference gradient sweep, prompt-batching benchmark."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from camp import data
from camp import tensor as T
from camp.config import TrainConfig
from camp.losses import contrastive_loss, diversity_loss, negation_loss, total_loss
from camp.model import DualEncoder, build_vocab
from camp.prompts import build_mask, build_sequence, collate, tokenize
from camp.text_encoder import TextEncoder

# -- equivalence -----------------------------------------------------------


def embedding_dim(K: int) -> int:
    """The toy D=96 when K divides it, else 16 channels per prompt."""
    return 96 if 96 % K == 0 else 16 * K


@dataclass
class EquivCase:
    K: int
    negation: bool
    seed: int
    max_abs_diff: float
    passed: bool

    def row(self) -> str:
        return f"{self.K}\t{int(self.negation)}\t{self.seed}\t{self.max_abs_diff:.3e}\t{'PASS' if self.passed else 'FAIL'}"


EQUIV_HEADER = "K\tnegation\tseed\tmax_abs_diff\tresult"


def text_encoder_for(cfg: TrainConfig, seed: int) -> tuple[TextEncoder, object]:
    vocab = build_vocab(cfg)
    enc = TextEncoder(
        np.random.default_rng(seed),
        len(vocab),
        vocab.apt_rows(),
        vocab.n_apt,
        cfg.D // cfg.K,
        width=cfg.text_width,
        n_layers=cfg.text_layers,
        n_heads=cfg.text_heads,
        max_len=cfg.max_seq_len,
        mlp_ratio=cfg.mlp_ratio,
    )
    return enc, vocab


def equivalence_case(K: int, negation: bool, seed: int, tol: float = 1e-5, reset_positions: bool = True) -> EquivCase:
    """Compare the masked single pass against one causal pass per segment.

    With ``reset_positions`` off the single pass numbers segment tokens
    consecutively while the reference keeps per-segment numbering, which is
    the negative control.
    """
    cfg = TrainConfig(K=K, D=embedding_dim(K), include_negation=negation, seed=seed)
    enc, vocab = text_encoder_for(cfg, seed)
    rng = np.random.default_rng(seed)
    caption = data.caption_of(data.ALL_FACTORS[rng.integers(len(data.ALL_FACTORS))])
    ids = tokenize(caption, vocab)
    ref = build_sequence(ids, cfg.prompt_config(), vocab)
    seq = ref if reset_positions else build_sequence(ids, cfg.prompt_config(reset_positions=False), vocab)
    with T.no_grad():
        single = enc.forward_singlepass(seq, build_mask(seq)).pooled.data
        multi = enc.forward_multipass(ref).pooled.data
    diff = float(np.abs(single.astype(np.float64) - multi).max())
    return EquivCase(K, negation, seed, diff, diff < tol)


def equivalence_sweep(
    ks: Iterable[int] = (1, 3, 6),
    seeds: int = 20,
    negation: Sequence[bool] = (False, True),
    tol: float = 1e-5,
    reset_positions: bool = True,
) -> list[EquivCase]:
    return [equivalence_case(k, neg, s, tol, reset_positions) for k in ks for neg in negation for s in range(seeds)]


# -- gradients -----------------------------------------------------------------

GRAD_COMPONENTS = ("con", "div", "neg", "total")

# tensors probed by the sweep; the first block is frozen at the default L
PROBED = (
    "logit_scale",
    "text.apt_table",
    "text.proj.weight",
    "text.ln_f.gamma",
    "text.blocks.3.attn.qkv.weight",
    "text.blocks.3.fc2.weight",
    "vision.temporal",
    "vision.pool.query",
    "vision.patch_embed.weight",
    "text.blocks.0.attn.qkv.weight",
    "text.tok_table",
)


@dataclass
class GradResult:
    component: str
    param: str
    max_rel_err: float
    grad_max: float
    frozen: bool

    def row(self) -> str:
        status = "frozen" if self.frozen else f"{self.max_rel_err:.3e}"
        return f"{self.component}\t{self.param}\t{status}\t{self.grad_max:.6e}"


GRAD_HEADER = "loss\tparameter\tmax_rel_err\tmax_abs_grad"


def _loss_components(model: DualEncoder, videos: np.ndarray, captions: Sequence[str]) -> dict:
    cfg = model.cfg
    text = model.encode_text(captions)
    q, _ = model.vision.encode_videos(videos)
    tau = model.tau()
    l_t2i, l_i2t, l_con = contrastive_loss(text.p, q, tau)
    l_div = diversity_loss(text.segments.projected[:, : cfg.K])
    l_neg = negation_loss(q, text.p, text.n, tau)
    bd = total_loss(l_t2i, l_i2t, l_con, l_div, l_neg, tau, cfg.alpha, cfg.beta)
    return {"con": l_con, "div": l_div, "neg": l_neg, "total": bd.total}


def gradient_sweep(
    components: Sequence[str] = GRAD_COMPONENTS,
    cfg: TrainConfig | None = None,
    batch_size: int = 4,
    n_frames: int = 2,
    coords: int = 6,
    h: float = 1e-5,
    seed: int = 0,
) -> list[GradResult]:
    """Backward vs central differences, in float64, on a video batch so the temporal offsets are exercised.

    For each (loss, tensor) pair a random subset of ``coords`` entries is
    probed; the reported error is max|g - fd| / max|fd| over that subset.
    """
    unknown = set(components) - set(GRAD_COMPONENTS)
    if unknown:
        raise ValueError(f"unknown loss components {sorted(unknown)}")
    cfg = cfg or TrainConfig(include_negation=True, seed=seed)
    if not cfg.include_negation:
        cfg = cfg.replace(include_negation=True)
    model = DualEncoder(cfg).to(np.float64)
    rng = np.random.default_rng(seed)
    model.vision.temporal.data = rng.normal(0, 0.5, model.vision.temporal.shape)
    factors = [data.ALL_FACTORS[i] for i in rng.choice(len(data.ALL_FACTORS), batch_size, replace=False)]
    videos = np.stack([data.make_video(f, n_frames, step=2.0) for f in factors]).astype(np.float64)
    captions = [data.caption_of(f) for f in factors]

    params = dict(model.named_parameters())
    probed = [n for n in PROBED if n in params]

    analytic: dict[str, dict[str, np.ndarray | None]] = {}
    for comp in components:
        model.zero_grad()
        T.backward(_loss_components(model, videos, captions)[comp])
        analytic[comp] = {n: None if params[n].grad is None else params[n].grad.copy() for n in probed}

    results = []
    for name in probed:
        p = params[name]
        if not p.requires_grad:
            for comp in components:
                g = analytic[comp][name]
                results.append(GradResult(comp, name, 0.0, 0.0 if g is None else float(np.abs(g).max()), True))
            continue
        flat = p.data.reshape(-1)
        idx = rng.choice(flat.size, min(coords, flat.size), replace=False)
        fd = {c: np.zeros(len(idx)) for c in components}
        with T.no_grad():
            for j, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + h
                up = _loss_components(model, videos, captions)
                flat[i] = orig - h
                down = _loss_components(model, videos, captions)
                flat[i] = orig
                for c in components:
                    fd[c][j] = (up[c].item() - down[c].item()) / (2 * h)
        for c in components:
            g = analytic[c][name]
            g = np.zeros(len(idx)) if g is None else g.reshape(-1)[idx]
            scale = np.abs(fd[c]).max()
            err = float(np.abs(g - fd[c]).max() / scale) if scale > 0 else float(np.abs(g).max())
            results.append(GradResult(c, name, err, float(np.abs(g).max()), False))
    return results


# -- benchmark -----------------------------------------------------------------


@dataclass
class BenchRow:
    K: int
    single_pass_s: float
    single_prompt_s: float
    k_pass_s: float

    @property
    def ratio(self) -> float:
        """Single-pass time over K x one single-prompt pass."""
        return self.single_pass_s / (self.K * self.single_prompt_s)

    def row(self) -> str:
        return f"{self.K}\t{self.single_pass_s:.6f}\t{self.single_prompt_s:.6f}\t{self.k_pass_s:.6f}\t{self.ratio:.4f}"


BENCH_HEADER = "K\tsingle_pass_s\tsingle_prompt_s\tk_pass_s\tratio"


def _best_time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(ks: Iterable[int] = (1, 2, 3, 6), repeats: int = 5, batch_size: int = 32, seed: int = 0) -> list[BenchRow]:
    """Inference wall time of one masked pass over K prompts vs K separate prompt passes (best of ``repeats``)."""
    rows = []
    for k in ks:
        cfg = TrainConfig(K=k, D=embedding_dim(k), include_negation=False, seed=seed)
        enc, vocab = text_encoder_for(cfg, seed)
        captions = [data.caption_of(f) for f in data.ALL_FACTORS[:batch_size]]
        seqs = [build_sequence(tokenize(c, vocab), cfg.prompt_config(), vocab) for c in captions]
        full = collate(seqs, vocab.unk_id)
        per_segment = [collate([s.standalone(i) for s in seqs], vocab.unk_id) for i in range(1, k + 1)]
        with T.no_grad():
            enc.encode_batch(full)  # warm-up
            single = _best_time(lambda: enc.encode_batch(full), repeats)
            one = _best_time(lambda: enc.encode_batch(per_segment[0]), repeats)
            k_pass = _best_time(lambda: [enc.encode_batch(b) for b in per_segment], repeats)
        rows.append(BenchRow(k, single, one, k_pass))
    return rows
