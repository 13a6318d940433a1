"""Drafts copied from earlier occurrences of the context's last q tokens."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass(frozen=True)
class ContextMatch:
    continuation: tuple[int, ...]
    count: int
    last_position: int


def context_ngram_match(context, q: int, w: int, k: int) -> list[ContextMatch]:
    """Up to ``k`` distinct continuations of the last ``q`` tokens.

    Every window of exactly ``q + w`` tokens whose first ``q`` tokens equal the
    query is a candidate. Identical windows merge into one match. Matches are
    ordered by count (descending), then by start of the latest occurrence
    (descending), then by continuation (ascending).
    """
    if q < 1 or w < 1 or k < 1:
        raise ValueError(f"q, w and k must be >= 1, got q={q} w={w} k={k}")
    ctx = np.asarray(context, dtype=np.int64)
    n = len(ctx)
    if n < q + w:
        return []
    query = ctx[n - q:]
    grams = sliding_window_view(ctx, q + w)
    starts = np.flatnonzero((grams[:, :q] == query).all(axis=1))
    if len(starts) == 0:
        return []

    found: dict[tuple[int, ...], list[int]] = {}
    for s in starts.tolist():
        cont = tuple(ctx[s + q: s + q + w].tolist())
        entry = found.get(cont)
        if entry is None:
            found[cont] = [1, s]
        else:
            entry[0] += 1
            entry[1] = s
    ranked = sorted(found.items(), key=lambda kv: (-kv[1][0], -kv[1][1], kv[0]))
    return [ContextMatch(cont, cnt, pos) for cont, (cnt, pos) in ranked[:k]]
