"""Tokenization, multi-prompt sequence layout, and prompt-wise attention masks.

A caption is turned into one sequence holding a shared prefix followed by K
prompt segments (2K with negation prompts). Each segment ends in a closing
quote token whose final hidden state becomes that prompt's embedding.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

UNK = "[UNK]"
PERIOD = "."
QUOTE = '"'
COLON = ":"
RESERVED = [UNK, PERIOD, QUOTE, COLON]
TEMPLATE_WORDS = ["The", "of", "this", "image", "means", "does", "NOT", "mean"]

TEMPLATE_MODES = ("adaptive", "shared_apt", "fixed", "minimal")

# Segment texts follow "The"; the first two are the handwritten examples from the
# method description, the rest extend them to K=6.
DEFAULT_FIXED_PROMPTS = (
    "main category of the image means",
    "primary object in the image means",
    "background of the image means",
    "color scheme of the image means",
    "action in the image means",
    "spatial layout of the image means",
)

_TOKEN_RE = re.compile(r"\[[A-Z]+(?:-\d+)?\]|[A-Za-z0-9_']+|[^\sA-Za-z0-9_']")


class PromptError(ValueError):
    """Invalid prompt configuration."""


class StructuralError(ValueError):
    """A segmented sequence violates its layout invariants."""


def apt_token(i: int) -> str:
    return f"[APT-{i}]"


class Vocabulary:
    """Dense word <-> id table. Reserved tokens and APT tokens come first."""

    def __init__(self, words: Iterable[str] = ()):
        self.words: list[str] = []
        self.ids: dict[str, int] = {}
        for w in words:
            self.add(w)

    @classmethod
    def build(cls, n_apt: int, corpus_words: Iterable[str] = ()) -> "Vocabulary":
        vocab = cls(RESERVED + TEMPLATE_WORDS + [apt_token(i + 1) for i in range(n_apt)])
        for w in corpus_words:
            vocab.add(w)
        return vocab

    def add(self, word: str) -> int:
        if word not in self.ids:
            self.ids[word] = len(self.words)
            self.words.append(word)
        return self.ids[word]

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.ids

    @property
    def unk_id(self) -> int:
        return self.ids[UNK]

    def id_of(self, word: str) -> int:
        return self.ids.get(word, self.ids[UNK])

    def word_of(self, idx: int) -> str:
        return self.words[idx]

    def apt_id(self, i: int) -> int:
        """Id of ``[APT-i]`` (1-based)."""
        try:
            return self.ids[apt_token(i)]
        except KeyError:
            raise PromptError(f"vocabulary has no {apt_token(i)}") from None

    @property
    def apt_ids(self) -> list[int]:
        return [i for i, w in enumerate(self.words) if w.startswith("[APT-")]

    def apt_rows(self) -> np.ndarray:
        """Array over ids: row in the APT table, or -1 for ordinary tokens."""
        rows = np.full(len(self.words), -1, dtype=np.int64)
        for i, w in enumerate(self.words):
            if w.startswith("[APT-"):
                rows[i] = int(w[5:-1]) - 1
        return rows

    @property
    def n_apt(self) -> int:
        return len(self.apt_ids)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(w + "\n" for w in self.words), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        text = Path(path).read_text(encoding="utf-8")
        return cls(text.split("\n")[:-1] if text.endswith("\n") else text.split("\n"))

    def to_text(self) -> str:
        return "".join(w + "\n" for w in self.words)


def split_words(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    return [vocab.id_of(w) for w in split_words(text)]


def detokenize(ids: Sequence[int], vocab: Vocabulary) -> str:
    return " ".join(vocab.word_of(i) for i in ids)


@dataclass
class PromptConfig:
    K: int = 6
    template_mode: str = "adaptive"
    include_negation: bool = False
    fixed_prompt_texts: tuple[str, ...] = DEFAULT_FIXED_PROMPTS
    # Debug switch: when False, segment positions continue from the previous
    # token instead of restarting after the prefix.
    reset_positions: bool = True

    def __post_init__(self):
        if self.K < 1:
            raise PromptError(f"K must be >= 1, got {self.K}")
        if self.template_mode not in TEMPLATE_MODES:
            raise PromptError(f"unknown template_mode {self.template_mode!r}")
        if self.template_mode == "fixed" and len(self.fixed_prompt_texts) < self.K:
            raise PromptError(
                f"fixed mode needs K={self.K} prompt texts, got {len(self.fixed_prompt_texts)}"
            )

    @property
    def n_segments(self) -> int:
        return 2 * self.K if self.include_negation else self.K


@dataclass
class SegmentedSequence:
    token_ids: np.ndarray
    segment_ids: np.ndarray
    position_ids: np.ndarray
    pooling_index: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.token_ids)

    @property
    def prefix_length(self) -> int:
        nz = np.flatnonzero(self.segment_ids != 0)
        return int(nz[0]) if nz.size else len(self.segment_ids)

    @property
    def n_segments(self) -> int:
        return int(self.segment_ids.max()) if len(self.segment_ids) else 0

    def segment_slice(self, s: int) -> np.ndarray:
        return np.flatnonzero(self.segment_ids == s)

    def standalone(self, s: int) -> "SegmentedSequence":
        """Prefix followed by segment ``s`` alone, as a single-prompt sequence."""
        keep = np.concatenate([np.arange(self.prefix_length), self.segment_slice(s)])
        seg = np.where(self.segment_ids[keep] == 0, 0, 1)
        return SegmentedSequence(
            self.token_ids[keep].copy(),
            seg.astype(np.int64),
            self.position_ids[keep].copy(),
            [len(keep) - 1],
        )


def _segment_words(cfg: PromptConfig, i: int, negated: bool) -> list[str]:
    """Words of segment ``i`` (1-based), closing quote included."""
    apt = apt_token(1 if cfg.template_mode == "shared_apt" else i)
    mode = cfg.template_mode
    if mode in ("adaptive", "shared_apt"):
        tail = ["does", "NOT", "mean"] if negated else ["means"]
        return [apt, "of", "this", "image", *tail, COLON, QUOTE]
    if mode == "minimal":
        return [apt, "NOT", COLON, QUOTE] if negated else [apt, COLON, QUOTE]
    words = split_words(cfg.fixed_prompt_texts[i - 1])
    if negated:
        if words and words[-1] == "means":
            words = words[:-1] + ["does", "NOT", "mean"]
        else:
            words = words + ["does", "NOT", "mean"]
    return [*words, COLON, QUOTE]


def prompt_words(cfg: PromptConfig) -> list[str]:
    """Every word the templates of ``cfg`` can emit (for vocabulary construction)."""
    words: list[str] = []
    for i in range(1, cfg.K + 1):
        for neg in (False, True):
            words.extend(_segment_words(cfg, i, neg))
    return words


def build_sequence(caption_ids: Sequence[int], cfg: PromptConfig, vocab: Vocabulary) -> SegmentedSequence:
    prefix = list(caption_ids) + [vocab.ids[PERIOD]]
    if cfg.template_mode != "minimal":
        prefix.append(vocab.ids["The"])
    tokens = list(prefix)
    segs = [0] * len(prefix)
    positions = list(range(len(prefix)))
    pooling = []
    seg_list = [(i, False) for i in range(1, cfg.K + 1)]
    if cfg.include_negation:
        seg_list += [(i, True) for i in range(1, cfg.K + 1)]
    for s, (i, neg) in enumerate(seg_list, start=1):
        ids = [vocab.id_of(w) for w in _segment_words(cfg, i, neg)]
        start = len(prefix) if cfg.reset_positions else len(tokens)
        tokens += ids
        segs += [s] * len(ids)
        positions += list(range(start, start + len(ids)))
        pooling.append(len(tokens) - 1)
    return SegmentedSequence(
        np.asarray(tokens, dtype=np.int64),
        np.asarray(segs, dtype=np.int64),
        np.asarray(positions, dtype=np.int64),
        pooling,
    )


def build_mask(seq: SegmentedSequence) -> np.ndarray:
    """Attendability matrix M[q, k]: causal, prefix visible to all, no cross-segment keys."""
    seg = np.asarray(seq.segment_ids)
    n = len(seg)
    causal = np.tri(n, dtype=bool)
    same = (seg[None, :] == 0) | (seg[None, :] == seg[:, None])
    return causal & same


def pooling_positions(seq: SegmentedSequence, quote_id: int | None = None) -> list[int]:
    seg = np.asarray(seq.segment_ids)
    out = []
    for s in range(1, seq.n_segments + 1):
        idx = np.flatnonzero(seg == s)
        if idx.size == 0:
            raise StructuralError(f"segment {s} is empty")
        last = int(idx[-1])
        if quote_id is not None and int(seq.token_ids[last]) != quote_id:
            raise StructuralError(f"segment {s} does not end in the closing-quote token")
        out.append(last)
    return out


@dataclass
class Batch:
    """Right-padded stack of segmented sequences ready for the text encoder."""

    token_ids: np.ndarray  # (B, S)
    position_ids: np.ndarray  # (B, S)
    mask: np.ndarray  # (B, S, S) bool
    pooling: np.ndarray  # (B, P)


def collate(seqs: Sequence[SegmentedSequence], pad_id: int = 0) -> Batch:
    n_seg = {len(s.pooling_index) for s in seqs}
    if len(n_seg) != 1:
        raise StructuralError(f"sequences disagree on segment count: {sorted(n_seg)}")
    b = len(seqs)
    s_max = max(len(s) for s in seqs)
    ids = np.full((b, s_max), pad_id, dtype=np.int64)
    pos = np.zeros((b, s_max), dtype=np.int64)
    mask = np.zeros((b, s_max, s_max), dtype=bool)
    pool = np.zeros((b, n_seg.pop()), dtype=np.int64)
    for i, s in enumerate(seqs):
        n = len(s)
        ids[i, :n] = s.token_ids
        pos[i, :n] = s.position_ids
        mask[i, :n, :n] = build_mask(s)
        # padded rows attend only to themselves so their softmax stays defined
        mask[i, np.arange(n, s_max), np.arange(n, s_max)] = True
        pool[i] = s.pooling_index
    return Batch(ids, pos, mask, pool)
