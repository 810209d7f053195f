"""Contrastive, diversity and negation-aware objectives."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from camp import tensor as T
from camp.tensor import Tensor

logger = logging.getLogger(__name__)

NORM_TOL = 1e-3


def _check_unit_rows(name: str, x: Tensor) -> None:
    norms = np.sqrt((x.data.astype(np.float64) ** 2).sum(axis=-1))
    if np.abs(norms - 1.0).max() > NORM_TOL:
        logger.warning("%s rows are not unit-norm (max deviation %.2e)", name, np.abs(norms - 1.0).max())


def _inv_tau(tau) -> Tensor | float:
    """1/tau as a graph node when tau is a Tensor, else a checked float."""
    if isinstance(tau, Tensor):
        if (tau.data <= 0).any():
            raise ValueError(f"temperature must be positive, got {tau.data}")
        return 1.0 / tau
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    return 1.0 / float(tau)


def _diag_nll(logits: Tensor) -> Tensor:
    """Mean over rows of -log softmax(logits)[i, i]."""
    b = logits.shape[0]
    lse = T.logsumexp(logits, axis=-1)
    diag = logits[np.arange(b), np.arange(b)]
    return (lse - diag).mean()


def contrastive_loss(p: Tensor, q: Tensor, tau) -> tuple[Tensor, Tensor, Tensor]:
    """Symmetric InfoNCE between text rows ``p`` and vision rows ``q`` (both B x D)."""
    _check_unit_rows("text", p)
    _check_unit_rows("vision", q)
    logits = (p @ q.transpose()) * _inv_tau(tau)
    l_t2i = _diag_nll(logits)
    l_i2t = _diag_nll(logits.transpose())
    return l_t2i, l_i2t, (l_t2i + l_i2t) * 0.5


def diversity_loss(segments: Tensor) -> Tensor:
    """Mean off-diagonal cosine similarity among K segment vectors, averaged over the batch.

    ``segments`` is (B, K, w) or (K, w).
    """
    if segments.ndim == 2:
        segments = segments.reshape(1, *segments.shape)
    b, k, _ = segments.shape
    if k < 2:
        return Tensor(np.zeros((), dtype=segments.dtype))
    unit = T.l2_normalize(segments)
    gram = unit @ T.swapaxes(unit, -1, -2)
    off = np.ones((k, k), dtype=segments.dtype) - np.eye(k, dtype=segments.dtype)
    return (gram * off).sum() * (1.0 / (b * k * (k - 1)))


def negation_loss(q: Tensor, p: Tensor, n: Tensor, tau) -> Tensor:
    """Image-to-text InfoNCE whose denominator also holds every negation embedding."""
    _check_unit_rows("vision", q)
    _check_unit_rows("text", p)
    _check_unit_rows("negation", n)
    inv = _inv_tau(tau)
    logits = T.concat([q @ p.transpose(), q @ n.transpose()], axis=1) * inv
    b = q.shape[0]
    lse = T.logsumexp(logits, axis=-1)
    diag = logits[np.arange(b), np.arange(b)]
    return (lse - diag).mean()


@dataclass
class LossBreakdown:
    l_t2i: float
    l_i2t: float
    l_con: float
    l_div: float
    l_neg: float | None
    l_total: float
    tau: float
    total: Tensor | None = None

    def as_row(self) -> dict[str, float]:
        return {
            "l_total": self.l_total,
            "l_con": self.l_con,
            "l_div": self.l_div,
            "l_neg": self.l_neg if self.l_neg is not None else 0.0,
            "tau": self.tau,
        }


def total_loss(
    l_t2i: Tensor,
    l_i2t: Tensor,
    l_con: Tensor,
    l_div: Tensor,
    l_neg: Tensor | None,
    tau,
    alpha: float = 0.1,
    beta: float = 0.1,
) -> LossBreakdown:
    total = l_con + l_div * alpha
    if l_neg is not None:
        total = total + l_neg * beta
    tau_val = float(tau.data.reshape(-1)[0]) if isinstance(tau, Tensor) else float(tau)
    return LossBreakdown(
        l_t2i=l_t2i.item(),
        l_i2t=l_i2t.item(),
        l_con=l_con.item(),
        l_div=l_div.item(),
        l_neg=l_neg.item() if l_neg is not None else None,
        l_total=total.item(),
        tau=tau_val,
        total=total,
    )
