"""Base predictors, the batched verification call and the static KV cache.

A predictor turns a block of token rows into next-token scores for the
last ``n_out`` positions of every row. Per-position state that can be
cached (attention keys/values) is produced by ``encode`` and consumed by
``scores``, so a cached call and a cache-free call run the exact same
arithmetic on the exact same arrays.
"""

from __future__ import annotations

import struct
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import check_tokens, make_rng

MAX_TOY_VOCAB = 512
WEIGHTS_MAGIC = b"SPDR"
WEIGHTS_VERSION = 1
_WEIGHTS_HEADER = struct.Struct("<4sIIIQ")


class Predictor(ABC):
    """Abstract base model with greedy (argmax) decoding semantics."""

    vocab_size: int
    kv_width: int

    @abstractmethod
    def encode(self, tokens: np.ndarray) -> np.ndarray:
        """Cacheable per-position state, shape ``(k, n, kv_width)``."""

    @abstractmethod
    def scores(self, tokens: np.ndarray, kv: np.ndarray, n_out: int) -> np.ndarray:
        """Next-token scores ``(k, n_out, vocab)`` for the last ``n_out`` positions."""

    def embeddings(self) -> tuple[np.ndarray, np.ndarray]:
        """Input embeddings ``V`` (|X|, d) and output embedding rows ``u_x`` (|X|, d)."""
        raise TypeError(f"{type(self).__name__} exposes no embeddings")


def greedy_ids(scores: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest token id on ties
    return np.argmax(scores, axis=-1).astype(np.int64)


def topk_ids(scores: np.ndarray, k: int) -> np.ndarray:
    """Top-k ids along the last axis, descending score, lowest id first on ties."""
    return np.argsort(-scores, axis=-1, kind="stable")[..., :k].astype(np.int64)


# --------------------------------------------------------------------------
# Table model
# --------------------------------------------------------------------------


class TableModel(Predictor):
    """Order-m count model.

    Scores for a position are the corpus continuation counts of the longest
    available history (up to ``order`` tokens) that was seen in the corpus.
    Shorter histories are consulted when the full one is missing or the
    sequence is shorter than ``order``; if nothing matches the fixed uniform
    backoff vector is used.
    """

    kv_width = 0

    def __init__(self, order: int, vocab_size: int, tables: list[dict]):
        self.order = order
        self.vocab_size = vocab_size
        self.tables = tables  # tables[n - 1]: history tuple of length n -> counts
        self.backoff = np.zeros(vocab_size)
        self._memo: dict[tuple, np.ndarray] = {}

    def lookup(self, history: Sequence[int]) -> np.ndarray:
        history = tuple(int(t) for t in history[-self.order:])
        hit = self._memo.get(history)
        if hit is not None:
            return hit
        vec = self.backoff
        for n in range(len(history), 0, -1):
            counts = self.tables[n - 1].get(history[-n:])
            if counts is not None:
                vec = counts
                break
        self._memo[history] = vec
        return vec

    def encode(self, tokens):
        tokens = np.asarray(tokens)
        return np.zeros(tokens.shape + (0,))

    def scores(self, tokens, kv, n_out):
        tokens = np.asarray(tokens)
        k, length = tokens.shape
        out = np.empty((k, n_out, self.vocab_size))
        for i in range(k):
            row = tokens[i].tolist()
            for j, p in enumerate(range(length - n_out, length)):
                out[i, j] = self.lookup(row[max(0, p - self.order + 1): p + 1])
        return out


def table_model_from_corpus(corpus, order: int, vocab_size: int | None = None) -> TableModel:
    corpus = np.asarray(corpus, dtype=np.int64)
    if order < 1:
        raise ValueError("order must be >= 1")
    if len(corpus) <= order:
        raise ValueError(f"corpus too short: need more than {order} tokens, got {len(corpus)}")
    if vocab_size is None:
        vocab_size = int(corpus.max()) + 1
    check_tokens(corpus, vocab_size)
    seq = corpus.tolist()
    tables: list[dict] = [{} for _ in range(order)]
    for n in range(1, order + 1):
        table = tables[n - 1]
        for s in range(len(seq) - n):
            hist = tuple(seq[s: s + n])
            vec = table.get(hist)
            if vec is None:
                vec = table[hist] = np.zeros(vocab_size)
            vec[seq[s + n]] += 1.0
    return TableModel(order, vocab_size, tables)


# --------------------------------------------------------------------------
# Toy transformer
# --------------------------------------------------------------------------


class ToyTransformer(Predictor):
    """One causal single-head attention layer plus a two-layer ReLU MLP.

    Float64 throughout, no positional encoding. With a single layer the
    keys and values of a position depend only on its token, which is what
    ``encode`` returns and what the cache stores.
    """

    def __init__(self, vocab_size, dim, seed, V, Wq, Wk, Wv, Wo, W1, W2, U):
        self.vocab_size = vocab_size
        self.dim = dim
        self.seed = seed
        self.V, self.Wq, self.Wk, self.Wv, self.Wo = V, Wq, Wk, Wv, Wo
        self.W1, self.W2, self.U = W1, W2, U
        self.kv_width = 2 * dim
        self._q = V @ Wq
        self._kv = np.concatenate([V @ Wk, V @ Wv], axis=1)

    @property
    def hidden(self) -> int:
        return self.W1.shape[1]

    def weights(self) -> list[np.ndarray]:
        return [self.V, self.Wq, self.Wk, self.Wv, self.Wo, self.W1, self.W2, self.U]

    def embeddings(self):
        return self.V, self.U.T

    def encode(self, tokens):
        return self._kv[np.asarray(tokens)]

    def scores(self, tokens, kv, n_out):
        tokens = np.asarray(tokens)
        d = self.dim
        length = tokens.shape[1]
        last = tokens[:, length - n_out:]
        keys, values = kv[..., :d], kv[..., d:]

        att = (self._q[last] @ keys.transpose(0, 2, 1)) / np.sqrt(d)
        pos = np.arange(length - n_out, length)
        att[:, np.arange(length)[None, :] > pos[:, None]] = -np.inf
        att = np.exp(att - att.max(axis=-1, keepdims=True))
        att /= att.sum(axis=-1, keepdims=True)

        h = self.V[last] + (att @ values) @ self.Wo
        h = h + np.maximum(h @ self.W1, 0.0) @ self.W2
        return h @ self.U

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            fh.write(_WEIGHTS_HEADER.pack(WEIGHTS_MAGIC, WEIGHTS_VERSION,
                                          self.vocab_size, self.dim, self.seed))
            for w in self.weights():
                fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "ToyTransformer":
        raw = Path(path).read_bytes()
        magic, version, vocab, dim, seed = _WEIGHTS_HEADER.unpack_from(raw)
        if magic != WEIGHTS_MAGIC or version != WEIGHTS_VERSION:
            raise ValueError(f"{path}: not a toy transformer weight file")
        offset = _WEIGHTS_HEADER.size
        mats = []
        for shape in _weight_shapes(vocab, dim):
            n = shape[0] * shape[1]
            mats.append(np.frombuffer(raw, dtype="<f8", count=n, offset=offset)
                        .reshape(shape).astype(np.float64))
            offset += 8 * n
        if offset != len(raw):
            raise ValueError(f"{path}: trailing or missing bytes")
        return cls(vocab, dim, seed, *mats)


def _weight_shapes(vocab_size: int, dim: int) -> list[tuple[int, int]]:
    hidden = 4 * dim
    return [(vocab_size, dim), (dim, dim), (dim, dim), (dim, dim), (dim, dim),
            (dim, hidden), (hidden, dim), (dim, vocab_size)]


def toy_transformer_init(seed: int, vocab_size: int, dim: int = 64) -> ToyTransformer:
    """Seeded init: every matrix uniform in [-1/sqrt(dim), 1/sqrt(dim)], drawn in file order."""
    if vocab_size < 2 or vocab_size > MAX_TOY_VOCAB:
        raise ValueError(f"vocab_size must be in [2, {MAX_TOY_VOCAB}], got {vocab_size}")
    if dim < 2:
        raise ValueError(f"dim must be >= 2, got {dim}")
    rng = make_rng(seed)
    bound = 1.0 / np.sqrt(dim)
    mats = [rng.uniform(-bound, bound, size=shape) for shape in _weight_shapes(vocab_size, dim)]
    return ToyTransformer(vocab_size, dim, seed, *mats)


# --------------------------------------------------------------------------
# KV cache
# --------------------------------------------------------------------------


class KvCache:
    """Static cache holding one committed prefix shared by ``batch`` logical rows.

    After every commit all rows are identical, so the committed part is
    stored once and exposed to the batch as a broadcast view. The entries
    written by the latest forward call are kept per row until the next
    commit picks one of them.

    A cache belongs to a single generation session: commits append into a
    buffer that is shared with the caches it was broadcast from.
    """

    def __init__(self, kv_width: int, capacity: int, batch: int = 1):
        self.kv_width = kv_width
        self.capacity = capacity
        self.batch = batch
        self.length = 0
        self._kv = np.zeros((capacity, kv_width))
        self._tokens = np.zeros(capacity, dtype=np.int64)
        self.spec_kv: np.ndarray | None = None
        self.spec_tokens: np.ndarray | None = None

    def _view(self, batch: int) -> "KvCache":
        other = object.__new__(KvCache)
        other.__dict__.update(self.__dict__)
        other.batch = batch
        other.spec_kv = other.spec_tokens = None
        return other

    @property
    def tokens(self) -> np.ndarray:
        return self._tokens[: self.length]

    @property
    def rows(self) -> np.ndarray:
        """Committed entries as a read-only ``(batch, length, kv_width)`` view."""
        return np.broadcast_to(self._kv[: self.length], (self.batch, self.length, self.kv_width))

    @property
    def n_spec(self) -> int:
        return 0 if self.spec_kv is None else self.spec_kv.shape[1]

    def collapse(self) -> "KvCache":
        """Single-row view of the committed prefix."""
        return self._view(1)

    def _append(self, tokens: np.ndarray, kv: np.ndarray) -> None:
        n = len(tokens)
        if self.length + n > self.capacity:
            raise ValueError(f"cache capacity {self.capacity} exceeded")
        self._kv[self.length: self.length + n] = kv
        self._tokens[self.length: self.length + n] = tokens
        self.length += n


def prefill(predictor: Predictor, prompt, capacity: int) -> KvCache:
    """Cache every prompt token except the last one (the next call's first input)."""
    prompt = check_tokens(prompt, predictor.vocab_size)
    if len(prompt) < 1:
        raise ValueError("prompt must hold at least one token")
    if capacity < len(prompt):
        raise ValueError("capacity smaller than prompt")
    cache = KvCache(predictor.kv_width, capacity)
    head = prompt[:-1]
    if len(head):
        cache._append(head, predictor.encode(head[None, :])[0])
    return cache


def broadcast_cache(cache: KvCache, k: int) -> KvCache:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if cache.batch != 1:
        raise ValueError("broadcast_cache needs a single-row cache")
    return cache._view(k)


def commit_cache(cache: KvCache, winner_row: int, accepted_len: int) -> KvCache:
    """Keep ``accepted_len`` of ``winner_row``'s speculative entries and drop the rest.

    ``accepted_len`` counts cache entries, i.e. block positions starting at the
    block's first input token.
    """
    if not 0 <= winner_row < cache.batch:
        raise ValueError(f"winner_row {winner_row} out of range for batch {cache.batch}")
    if not 0 <= accepted_len <= cache.n_spec:
        raise ValueError(f"accepted_len {accepted_len} out of range (holding {cache.n_spec})")
    if accepted_len:
        cache._append(cache.spec_tokens[winner_row, :accepted_len],
                      cache.spec_kv[winner_row, :accepted_len])
    cache.spec_kv = cache.spec_tokens = None
    return cache


# --------------------------------------------------------------------------
# Forward calls
# --------------------------------------------------------------------------


def forward_scores(predictor: Predictor, rows, n_out: int, cache: KvCache | None = None) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.int64)
    if rows.ndim != 2:
        raise ValueError("rows must be a (k, length) matrix")
    k, length = rows.shape
    if length < 1 or not 1 <= n_out <= length:
        raise ValueError(f"cannot predict {n_out} positions from rows of length {length}")
    check_tokens(rows, predictor.vocab_size)
    if cache is None:
        kv = predictor.encode(rows)
    else:
        if cache.batch != k:
            raise ValueError(f"cache batch {cache.batch} does not match {k} rows")
        c = cache.length
        if c > length:
            raise ValueError(f"cache committed length {c} exceeds row length {length}")
        if not np.array_equal(rows[:, :c], np.broadcast_to(cache.tokens, (k, c))):
            raise ValueError("rows do not share the cached prefix")
        new = rows[:, c:]
        new_kv = predictor.encode(new)
        kv = np.concatenate([cache.rows, new_kv], axis=1)
        cache.spec_kv, cache.spec_tokens = new_kv, new
    return predictor.scores(rows, kv, n_out)


def forward_greedy(predictor: Predictor, rows, w: int, cache: KvCache | None = None) -> np.ndarray:
    """Greedy predictions ``(k, w + 1)`` at the last context position and each of ``w`` drafts."""
    return greedy_ids(forward_scores(predictor, rows, w + 1, cache))


def greedy_decode(predictor: Predictor, prompt, n: int, eos_id: int | None = None) -> np.ndarray:
    """Plain greedy decoding: prefill, then ``n`` calls on (1, 1) blocks."""
    if n < 0:
        raise ValueError("n must be >= 0")
    seq = check_tokens(prompt, predictor.vocab_size).tolist()
    if n == 0:
        return np.array(seq, dtype=np.int64)
    cache = prefill(predictor, seq, len(seq) + n)
    for _ in range(n):
        nxt = int(forward_greedy(predictor, np.array([seq]), 0, cache)[0, 0])
        commit_cache(cache, 0, 1)
        seq.append(nxt)
        if eos_id is not None and nxt == eos_id:
            break
    return np.array(seq, dtype=np.int64)
