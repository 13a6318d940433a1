"""Roofline latency model of one verification call on an accelerator.

A call on a ``(k, w + 1)`` block with ``l`` context tokens costs

    ops   = attn_ops * k * (w + 1) * (l + w) + mlp_ops * k * (w + 1)
    bytes = weight_bytes + kv_bytes * l + io_bytes * k * (w + 1)

and takes ``max(bytes / bandwidth, waves * tile_ops / (compute / multiprocessors))``
with ``waves = ceil(ceil(ops / tile_ops) / multiprocessors)``. The ceilings
produce the wave-quantization steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class AcceleratorProfile:
    # Defaults: a 7B-parameter bf16 decoder on a 108-SM, 1.555 TB/s part.
    # Compute is an effective (sustained) rate and attn_ops folds in the
    # inefficiency of batched attention; both are fitted to the qualitative
    # memory-bound to compute-bound picture, not measured.
    bandwidth: float = 1.555e12  # bytes / s
    compute: float = 1.5e14  # ops / s
    multiprocessors: int = 108
    tile_ops: float = 1.34e8  # 2 * 128 * 128 * 4096
    weight_bytes: float = 1.45e10
    kv_bytes: float = 1.31072e5  # per cached context token
    attn_ops: float = 4.2e6  # per (query, key) pair
    mlp_ops: float = 1.45e10  # per block token
    io_bytes: float = 2.62144e5  # per block token

    def __post_init__(self):
        for name in ("bandwidth", "compute", "multiprocessors", "tile_ops"):
            if not getattr(self, name) > 0:
                raise ValueError(f"profile parameter {name} must be positive")
        for name in ("weight_bytes", "kv_bytes", "attn_ops", "mlp_ops", "io_bytes"):
            if getattr(self, name) < 0:
                raise ValueError(f"profile parameter {name} must be non-negative")

    @property
    def threshold(self) -> float:
        """Operations-to-bytes ratio above which work outruns memory traffic."""
        return self.compute / self.bandwidth

    def model_bytes(self, l: int) -> float:
        return self.weight_bytes + self.kv_bytes * l

    def ops(self, l: int, k: int, w: int) -> float:
        n = k * (w + 1)
        return self.attn_ops * n * (l + w) + self.mlp_ops * n

    def bytes(self, l: int, k: int, w: int) -> float:
        return self.model_bytes(l) + self.io_bytes * k * (w + 1)

    def memory_time(self, l: int, k: int, w: int) -> float:
        return self.bytes(l, k, w) / self.bandwidth

    def compute_time(self, l: int, k: int, w: int) -> float:
        tiles = math.ceil(self.ops(l, k, w) / self.tile_ops)
        waves = math.ceil(tiles / self.multiprocessors)
        return waves * self.tile_ops / (self.compute / self.multiprocessors)


DEFAULT_PROFILE = AcceleratorProfile()

_INT_FIELDS = {"multiprocessors"}


def load_profile(path: str | Path) -> AcceleratorProfile:
    """Read ``key = value`` lines; ``#`` starts a comment. Missing keys keep defaults."""
    known = {f.name for f in fields(AcceleratorProfile)}
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip()
        if not sep or key not in known:
            raise ValueError(f"{path}:{lineno}: bad profile line {line!r}")
        values[key] = int(float(val)) if key in _INT_FIELDS else float(val)
    return replace(DEFAULT_PROFILE, **values)


def dump_profile(profile: AcceleratorProfile) -> str:
    return "".join(f"{f.name} = {getattr(profile, f.name)!r}\n" for f in fields(profile))


def _check(l: int, k: int, w: int) -> None:
    if l < 1 or k < 1 or w < 0:
        raise ValueError(f"need l >= 1, k >= 1, w >= 0; got l={l} k={k} w={w}")


def call_latency(profile: AcceleratorProfile, l: int, k: int, w: int) -> float:
    _check(l, k, w)
    return max(profile.memory_time(l, k, w), profile.compute_time(l, k, w))


def slowdown(profile: AcceleratorProfile, l: int, k: int, w: int) -> float:
    return call_latency(profile, l, k, w) / call_latency(profile, l, 1, 0)


@dataclass(frozen=True)
class LatencyGrid:
    l: int
    k_values: tuple[int, ...]
    w_values: tuple[int, ...]
    values: np.ndarray  # (len(k_values), len(w_values))

    def at(self, k: int, w: int) -> float:
        return float(self.values[self.k_values.index(k), self.w_values.index(w)])

    def to_csv(self) -> str:
        lines = ["l,k,w,slowdown"]
        for i, k in enumerate(self.k_values):
            for j, w in enumerate(self.w_values):
                lines.append(f"{self.l},{k},{w},{float(self.values[i, j])!r}")
        return "\n".join(lines) + "\n"


def heatmap(profile: AcceleratorProfile, l: int, k_range: Iterable[int] = range(1, 33),
            w_range: Iterable[int] = range(0, 16)) -> LatencyGrid:
    ks, ws = tuple(k_range), tuple(w_range)
    if not ks or not ws:
        raise ValueError("k and w ranges must be non-empty")
    vals = np.array([[slowdown(profile, l, k, w) for w in ws] for k in ks])
    return LatencyGrid(l, ks, ws, vals)


def baseline_latency(profile: AcceleratorProfile, l0: int, n_tokens: int) -> float:
    """Time for plain greedy decoding of ``n_tokens`` starting at context length ``l0``."""
    return sum(call_latency(profile, l0 + j, 1, 0) for j in range(n_tokens))


def trace_latency(profile: AcceleratorProfile, trace: Sequence[Sequence[int]]) -> float:
    return sum(call_latency(profile, int(l), int(k), int(w)) for l, k, w in trace)


def simulate_speedup(trace: Sequence[Sequence[int]], token_count: int,
                     profile: AcceleratorProfile = DEFAULT_PROFILE) -> float:
    """Simulated wall-time speedup of a recorded run over plain greedy decoding.

    The greedy baseline makes ``token_count`` (1, 1) calls starting at the
    first call's context length, one token longer each time.
    """
    if len(trace) == 0:
        raise ValueError("empty trace")
    return baseline_latency(profile, int(trace[0][0]), token_count) / trace_latency(profile, trace)
