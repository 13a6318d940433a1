"""N-gram drafters derived from the base model itself.

* unigram: tokens ranked by their output embedding's distance to the mean
  output embedding, measured in the geometry of the input embeddings;
* bigram: the model's top-K next tokens for every single-token context;
* extended bigram: every bigram successor continued greedily by the model,
  giving ``w > 1`` tokens per draft from one table lookup.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import Predictor, forward_scores, greedy_ids, topk_ids

DEFAULT_K = 32
DEFAULT_W_MAX = 16
BUILD_BATCH = 64

TABLE_MAGIC = b"NGTB"
TABLE_VERSION = 1
_TABLE_HEADER = struct.Struct("<4sIIII")


@dataclass(frozen=True)
class UnigramRanking:
    ranking: np.ndarray
    distances: np.ndarray

    def topk(self, k: int) -> np.ndarray:
        return unigram_topk(self, k)


def unigram_distances(V: np.ndarray, U: np.ndarray, variant: str = "norm") -> np.ndarray:
    """Per-token unigram distance.

    ``U`` holds one output embedding per row. ``variant="norm"`` is
    ``sqrt((u_x - mean)^T C (u_x - mean))`` with ``C = V^T V / |X|``;
    ``variant="inner"`` is the signed score ``mean^T C u_x``.
    """
    V = np.asarray(V, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    if V.ndim != 2 or U.ndim != 2 or V.shape != U.shape:
        raise ValueError(f"embedding shapes must match, got V{V.shape} and U{U.shape}")
    cov = V.T @ V / V.shape[0]
    mean = U.mean(axis=0)
    if variant == "inner":
        return U @ (cov @ mean)
    if variant != "norm":
        raise ValueError(f"unknown unigram variant {variant!r}")
    diff = U - mean
    sq = np.einsum("xi,ij,xj->x", diff, cov, diff)
    return np.sqrt(np.maximum(sq, 0.0))


def derive_unigram(V: np.ndarray, U: np.ndarray, variant: str = "norm") -> UnigramRanking:
    dist = unigram_distances(V, U, variant)
    ranking = np.argsort(dist, kind="stable").astype(np.int64)
    return UnigramRanking(ranking=ranking, distances=dist)


def unigram_topk(r: UnigramRanking, k: int) -> np.ndarray:
    if k < 0 or k > len(r.ranking):
        raise ValueError(f"k={k} out of range for a vocabulary of {len(r.ranking)}")
    return r.ranking[:k].reshape(k, 1)


# --------------------------------------------------------------------------
# Bigram tables
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BigramTable:
    """``rows[x]`` lists the K most likely successors of token ``x``."""

    rows: np.ndarray  # (|X|, K)

    @property
    def vocab_size(self) -> int:
        return self.rows.shape[0]

    @property
    def K(self) -> int:
        return self.rows.shape[1]

    def row(self, x: int) -> np.ndarray:
        return self.rows[x]

    def save(self, path):
        _save_table(path, self.rows[:, :, None])

    @classmethod
    def load(cls, path) -> "BigramTable":
        table = _load_table(path)
        if table.shape[2] != 1:
            raise ValueError(f"{path}: expected a plain bigram table (w_max=1)")
        return cls(table[:, :, 0])


@dataclass(frozen=True)
class ExtendedBigramTable:
    """``table[x, j]`` is the greedy continuation of length ``w_max`` seeded by ``x``
    and its ``j``-th ranked bigram successor."""

    table: np.ndarray  # (|X|, K, w_max)

    @property
    def vocab_size(self) -> int:
        return self.table.shape[0]

    @property
    def K(self) -> int:
        return self.table.shape[1]

    @property
    def w_max(self) -> int:
        return self.table.shape[2]

    def save(self, path):
        _save_table(path, self.table)

    @classmethod
    def load(cls, path) -> "ExtendedBigramTable":
        return cls(_load_table(path))


def derive_bigram(predictor: Predictor, K: int = DEFAULT_K, batch: int = BUILD_BATCH) -> BigramTable:
    n = predictor.vocab_size
    if not 1 <= K <= n:
        raise ValueError(f"K={K} must be in [1, |X|={n}]")
    rows = np.empty((n, K), dtype=np.int64)
    for start in range(0, n, batch):
        xs = np.arange(start, min(start + batch, n))[:, None]
        rows[start: start + len(xs)] = topk_ids(forward_scores(predictor, xs, 1)[:, 0], K)
    return BigramTable(rows)


def extend_bigram(predictor: Predictor, base: BigramTable, w_max: int = DEFAULT_W_MAX,
                  batch: int = 1024) -> ExtendedBigramTable:
    if w_max < 1:
        raise ValueError("w_max must be >= 1")
    n, K = base.rows.shape
    seeds = np.repeat(np.arange(n), K)
    out = np.empty((n * K, w_max), dtype=np.int64)
    out[:, 0] = base.rows.reshape(-1)
    for start in range(0, n * K, batch):
        stop = min(start + batch, n * K)
        seq = np.stack([seeds[start:stop], out[start:stop, 0]], axis=1)
        for t in range(1, w_max):
            nxt = greedy_ids(forward_scores(predictor, seq, 1)[:, 0])
            out[start:stop, t] = nxt
            seq = np.concatenate([seq, nxt[:, None]], axis=1)
    return ExtendedBigramTable(out.reshape(n, K, w_max))


def extended_speculate(table: ExtendedBigramTable, last_token: int, k: int, w: int) -> np.ndarray:
    """The first ``k`` drafts for ``last_token``, truncated to ``w`` tokens; row j has rank j."""
    if k > table.K or w > table.w_max:
        raise ValueError(f"(k={k}, w={w}) exceeds stored table dimensions "
                         f"(K={table.K}, w_max={table.w_max})")
    if k < 0 or w < 0:
        raise ValueError("k and w must be non-negative")
    return table.table[int(last_token), :k, :w]


# --------------------------------------------------------------------------
# Binary format
# --------------------------------------------------------------------------


def _save_table(path, table: np.ndarray) -> None:
    n, K, w_max = table.shape
    with open(path, "wb") as fh:
        fh.write(_TABLE_HEADER.pack(TABLE_MAGIC, TABLE_VERSION, n, K, w_max))
        fh.write(np.ascontiguousarray(table, dtype="<u4").tobytes())


def _load_table(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _TABLE_HEADER.size:
        raise ValueError(f"{path}: truncated table file")
    magic, version, n, K, w_max = _TABLE_HEADER.unpack_from(raw)
    if magic != TABLE_MAGIC or version != TABLE_VERSION:
        raise ValueError(f"{path}: not an n-gram table file")
    body = raw[_TABLE_HEADER.size:]
    if len(body) != 4 * n * K * w_max:
        raise ValueError(f"{path}: size does not match header")
    return np.frombuffer(body, dtype="<u4").reshape(n, K, w_max).astype(np.int64)
