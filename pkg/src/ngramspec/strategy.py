"""Filling the k rows of a verification block with drafts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .context import context_ngram_match
from .drafters import BigramTable, ExtendedBigramTable, UnigramRanking

CONTEXT = "context"
MODEL_BIGRAM = "model-bigram"
UNIGRAM = "unigram"

STRATEGIES = ("mixed", "context", "bigram", "extended", "unigram")


@dataclass(frozen=True)
class DraftBatch:
    """``rows[i]`` is a draft of width ``w`` produced by ``kinds[i]`` at rank ``ranks[i]`` (0-based)."""

    rows: np.ndarray
    kinds: tuple[str, ...] = ()
    ranks: tuple[int, ...] = ()

    @property
    def k(self) -> int:
        return self.rows.shape[0]

    @property
    def w(self) -> int:
        return self.rows.shape[1]

    @property
    def n_context(self) -> int:
        return sum(kind == CONTEXT for kind in self.kinds)

    @classmethod
    def empty(cls, w: int = 0) -> "DraftBatch":
        return cls(np.zeros((0, w), dtype=np.int64))


@dataclass
class DraftTables:
    unigram: UnigramRanking | None = None
    bigram: BigramTable | None = None
    extended: ExtendedBigramTable | None = None
    meta: dict = field(default_factory=dict)


class _Builder:
    def __init__(self, k: int, w: int):
        self.k, self.w = k, w
        self.rows: list[tuple[int, ...]] = []
        self.seen: set[tuple[int, ...]] = set()
        self.kinds: list[str] = []
        self.ranks: list[int] = []

    @property
    def full(self) -> bool:
        return len(self.rows) >= self.k

    def add(self, row, kind: str, rank: int) -> None:
        row = tuple(int(t) for t in row)
        if self.full or row in self.seen:
            return
        self.seen.add(row)
        self.rows.append(row)
        self.kinds.append(kind)
        self.ranks.append(rank)

    def batch(self) -> DraftBatch:
        rows = np.array(self.rows, dtype=np.int64).reshape(len(self.rows), self.w)
        return DraftBatch(rows, tuple(self.kinds), tuple(self.ranks))


def _add_extended(b: _Builder, table: ExtendedBigramTable, last: int) -> None:
    if b.w > table.w_max:
        raise ValueError(f"w={b.w} exceeds the extended table depth w_max={table.w_max}")
    for j, row in enumerate(table.table[last, :, : b.w]):
        if b.full:
            break
        b.add(row, MODEL_BIGRAM, j)


def _add_context(b: _Builder, context, q: int) -> None:
    for j, m in enumerate(context_ngram_match(context, q, b.w, b.k)):
        b.add(m.continuation, CONTEXT, j)


def mixed_drafts(context, k: int, w: int, q: int, ext_table: ExtendedBigramTable) -> DraftBatch:
    """Context matches first, then extended-bigram rows for the last token.

    Bigram rows identical to an earlier row are skipped, so fewer than ``k``
    rows come back only when the table runs out of distinct rows.
    """
    context = np.asarray(context, dtype=np.int64)
    if len(context) < 1:
        raise ValueError("context must hold at least one token")
    if k < 1 or w < 0:
        raise ValueError(f"need k >= 1 and w >= 0, got k={k} w={w}")
    if w == 0:
        return DraftBatch.empty()
    b = _Builder(k, w)
    _add_context(b, context, q)
    _add_extended(b, ext_table, int(context[-1]))
    return b.batch()


def single_strategy_drafts(kind: str, context, k: int, w: int, q: int = 1,
                           tables: DraftTables | None = None) -> DraftBatch:
    """Drafts from exactly one strategy (for ablations).

    ``unigram`` and ``bigram`` speculate a single token, so they reject ``w > 1``.
    """
    tables = tables or DraftTables()
    context = np.asarray(context, dtype=np.int64)
    if len(context) < 1:
        raise ValueError("context must hold at least one token")
    if kind in ("unigram", "bigram") and w > 1:
        raise ValueError(f"strategy {kind!r} only speculates w=1 tokens, got w={w}")
    if kind not in STRATEGIES or kind == "mixed":
        raise ValueError(f"unknown single strategy {kind!r}")
    if k < 1 or w < 0:
        raise ValueError(f"need k >= 1 and w >= 0, got k={k} w={w}")
    if w == 0:
        return DraftBatch.empty()

    b = _Builder(k, w)
    last = int(context[-1])
    if kind == "context":
        _add_context(b, context, q)
    elif kind == "extended":
        _add_extended(b, _need(tables.extended, kind), last)
    elif kind == "bigram":
        for j, tok in enumerate(_need(tables.bigram, kind).row(last)[:k]):
            b.add((tok,), MODEL_BIGRAM, j)
    else:
        ranking = _need(tables.unigram, kind)
        for j, tok in enumerate(ranking.topk(min(k, len(ranking.ranking)))[:, 0]):
            b.add((tok,), UNIGRAM, j)
    return b.batch()


def _need(table, kind):
    if table is None:
        raise ValueError(f"strategy {kind!r} needs its table")
    return table


def make_drafts(kind: str, context, k: int, w: int, q: int, tables: DraftTables) -> DraftBatch:
    if kind == "mixed":
        return mixed_drafts(context, k, w, q, _need(tables.extended, kind))
    return single_strategy_drafts(kind, context, k, w, q, tables)
