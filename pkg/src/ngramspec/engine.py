"""Guess-and-verify decoding loop and its metrics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .core import check_tokens
from .model import KvCache, Predictor, broadcast_cache, commit_cache, forward_greedy, prefill
from .strategy import DraftBatch, DraftTables, make_drafts

Drafter = Callable[[np.ndarray], DraftBatch]


@dataclass(frozen=True)
class StrategyConfig:
    kind: str = "mixed"
    k: int = 10
    w: int = 10
    q: int = 1


@dataclass(frozen=True)
class AcceptanceRecord:
    accepted_len: int
    emitted: int
    winner_row: int
    winner_strategy: str | None
    winner_rank: int | None  # 0-based rank within the winning strategy
    context_len: int
    k: int
    w: int
    n_context: int


def _bump(hist: list[int], i: int) -> None:
    if i >= len(hist):
        hist.extend([0] * (i + 1 - len(hist)))
    hist[i] += 1


@dataclass
class RunMetrics:
    """Counters for one or more generations.

    ``rank_hist[0]`` counts calls where no draft token was accepted;
    ``rank_hist[r]`` counts calls won by a draft of (1-based) rank ``r``.
    ``allocation_hist[m]`` counts calls whose batch held ``m`` context rows.
    """

    call_count: int = 0
    token_count: int = 0
    acceptance_hist: list[int] = field(default_factory=list)
    rank_hist: list[int] = field(default_factory=list)
    allocation_hist: list[int] = field(default_factory=list)
    strategy_wins: dict[str, int] = field(default_factory=dict)
    trace: list[list[int]] = field(default_factory=list)
    prefill: list[int] = field(default_factory=list)

    @property
    def tokens_per_call(self) -> float:
        return self.token_count / self.call_count if self.call_count else 0.0

    def record(self, rec: AcceptanceRecord) -> None:
        self.call_count += 1
        self.token_count += rec.emitted
        _bump(self.acceptance_hist, rec.accepted_len)
        _bump(self.rank_hist, rec.winner_rank + 1 if rec.accepted_len > 0 else 0)
        _bump(self.allocation_hist, rec.n_context)
        if rec.accepted_len > 0:
            self.strategy_wins[rec.winner_strategy] = self.strategy_wins.get(rec.winner_strategy, 0) + 1
        self.trace.append([rec.context_len, rec.k, rec.w])

    def merge(self, other: "RunMetrics") -> "RunMetrics":
        out = RunMetrics(self.call_count + other.call_count, self.token_count + other.token_count)
        for name in ("acceptance_hist", "rank_hist", "allocation_hist"):
            a, b = getattr(self, name), getattr(other, name)
            merged = [0] * max(len(a), len(b))
            for hist in (a, b):
                for i, v in enumerate(hist):
                    merged[i] += v
            setattr(out, name, merged)
        out.strategy_wins = dict(self.strategy_wins)
        for key, v in other.strategy_wins.items():
            out.strategy_wins[key] = out.strategy_wins.get(key, 0) + v
        out.trace = self.trace + other.trace
        out.prefill = self.prefill + other.prefill
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tokens_per_call"] = self.tokens_per_call
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def verify(greedy, drafts) -> np.ndarray:
    """Accepted length per row: the longest draft prefix agreeing with the model."""
    greedy = np.asarray(greedy)
    drafts = np.asarray(drafts)
    if drafts.ndim != 2 or greedy.shape != (drafts.shape[0], drafts.shape[1] + 1):
        raise ValueError(f"greedy shape {greedy.shape} does not align with drafts {drafts.shape}")
    w = drafts.shape[1]
    miss = drafts != greedy[:, :w]
    return np.where(miss.any(axis=1), miss.argmax(axis=1), w).astype(np.int64)


def select_row(accepted) -> int:
    accepted = np.asarray(accepted)
    if accepted.size == 0:
        raise ValueError("no rows to select from")
    return int(np.argmax(accepted))


class Session:
    """Committed tokens plus the single-row cache that covers all but the last of them."""

    def __init__(self, predictor: Predictor, prompt, capacity: int):
        self.predictor = predictor
        self.tokens: list[int] = check_tokens(prompt, predictor.vocab_size).tolist()
        self.cache: KvCache = prefill(predictor, self.tokens, capacity)


def spec_decode_step(session: Session, drafter: Drafter, remaining: int | None = None,
                     eos_id: int | None = None) -> tuple[list[int], AcceptanceRecord]:
    """One verification call. Emits at least one token."""
    ctx = np.array(session.tokens, dtype=np.int64)
    length = len(ctx)
    drafts = drafter(ctx)
    if drafts.k == 0:
        drafts = DraftBatch.empty()
        rows = ctx[None, :]
    else:
        rows = np.concatenate([np.broadcast_to(ctx, (drafts.k, length)), drafts.rows], axis=1)
    k = rows.shape[0]
    w = drafts.w

    cache = broadcast_cache(session.cache, k)
    greedy = forward_greedy(session.predictor, rows, w, cache)
    accepted = verify(greedy, drafts.rows) if drafts.k else np.zeros(1, dtype=np.int64)
    win = select_row(accepted)
    a = int(accepted[win])
    emitted = [int(t) for t in drafts.rows[win, :a]] if drafts.k else []
    emitted.append(int(greedy[win, a]))

    if eos_id is not None and eos_id in emitted:
        emitted = emitted[: emitted.index(eos_id) + 1]
    if remaining is not None:
        emitted = emitted[:remaining]

    commit_cache(cache, win, len(emitted))
    session.cache = cache.collapse()
    session.tokens.extend(emitted)

    rec = AcceptanceRecord(
        accepted_len=len(emitted) - 1,
        emitted=len(emitted),
        winner_row=win,
        winner_strategy=drafts.kinds[win] if drafts.k else None,
        winner_rank=drafts.ranks[win] if drafts.k else None,
        context_len=length,
        k=k,
        w=w,
        n_context=drafts.n_context,
    )
    return emitted, rec


def strategy_drafter(config: StrategyConfig, tables: DraftTables | None) -> Drafter:
    tables = tables or DraftTables()

    def draft(ctx: np.ndarray) -> DraftBatch:
        return make_drafts(config.kind, ctx, config.k, config.w, config.q, tables)

    return draft


def run_generation(predictor: Predictor, prompt, max_tokens: int,
                   config: StrategyConfig = StrategyConfig(), tables: DraftTables | None = None,
                   eos_id: int | None = None, drafter: Drafter | None = None,
                   ) -> tuple[np.ndarray, RunMetrics]:
    """Speculative generation of up to ``max_tokens`` tokens.

    Returns prompt plus generated tokens; the result equals ``greedy_decode``
    with the same budget. The prefill call is recorded in ``metrics.prefill``
    and is not part of ``call_count``.
    """
    if max_tokens < 1:
        raise ValueError("max_tokens must be >= 1")
    drafter = drafter or strategy_drafter(config, tables)
    session = Session(predictor, prompt, len(prompt) + max_tokens)
    metrics = RunMetrics(prefill=[len(prompt) - 1])
    produced = 0
    while produced < max_tokens:
        emitted, rec = spec_decode_step(session, drafter, max_tokens - produced, eos_id)
        metrics.record(rec)
        produced += len(emitted)
        if eos_id is not None and emitted[-1] == eos_id:
            break
    return np.array(session.tokens, dtype=np.int64), metrics
