from __future__ import annotations

import numpy as np
import pytest

from ngramspec.core import WORD, build_vocab, tokenize
from ngramspec.model import Predictor, table_model_from_corpus, toy_transformer_init

SENTENCE = ("i like red apples and i like green pears but i like red grapes "
            "more than green ones every day")
assert len(SENTENCE.split()) == 20

_ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture
def report():
    """Print and keep one pass/fail line per acceptance criterion."""

    def emit(line: str) -> None:
        _ACCEPTANCE.append(line)
        print(line)

    return emit


class CountingPredictor(Predictor):
    """Wraps a predictor and logs the block shape of every scoring call."""

    def __init__(self, inner: Predictor):
        self.inner = inner
        self.vocab_size = inner.vocab_size
        self.kv_width = inner.kv_width
        self.calls: list[tuple[int, int]] = []

    def encode(self, tokens):
        return self.inner.encode(tokens)

    def scores(self, tokens, kv, n_out):
        self.calls.append((np.asarray(tokens).shape[0], n_out))
        return self.inner.scores(tokens, kv, n_out)


def periodic_corpus(repeats: int = 50):
    text = " ".join([SENTENCE] * repeats)
    vocab = build_vocab(text, WORD)
    return vocab, tokenize(text, vocab)


def cyclic_table_model(n: int, vocab_size: int | None = None, laps: int = 3):
    """Deterministic chain 0 -> 1 -> ... -> n-1 -> 0."""
    return table_model_from_corpus(np.tile(np.arange(n), laps), 1, vocab_size or n)


def brute_force_matches(context, q: int, w: int, k: int):
    """Quadratic reference for the context matcher: list of (continuation, count, last_start)."""
    ctx = [int(t) for t in context]
    n = len(ctx)
    if n < q + w:
        return []
    query = ctx[n - q:]
    groups: dict[tuple, list[int]] = {}
    for s in range(n - (q + w) + 1):
        if all(ctx[s + i] == query[i] for i in range(q)):
            groups.setdefault(tuple(ctx[s + q: s + q + w]), []).append(s)
    items = [(cont, len(pos), max(pos)) for cont, pos in groups.items()]
    items.sort(key=lambda t: (-t[1], -t[2], t[0]))
    return items[:k]


@pytest.fixture(scope="session")
def toy():
    return toy_transformer_init(3, 48, 16)


@pytest.fixture(scope="session")
def periodic():
    vocab, corpus = periodic_corpus()
    return vocab, corpus, table_model_from_corpus(corpus, 3, vocab.size)
