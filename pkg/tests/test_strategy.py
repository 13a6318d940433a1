import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ngramspec.context import context_ngram_match
from ngramspec.drafters import ExtendedBigramTable, derive_unigram
from ngramspec.strategy import (CONTEXT, MODEL_BIGRAM, UNIGRAM, DraftTables, make_drafts, mixed_drafts,
                                single_strategy_drafts)

V = 12


def shifted_table(w_max=3, K=6):
    """Seed x, rank j -> (x + j + 5 + t) mod V: distinct rows for every seed."""
    x = np.arange(V)[:, None, None]
    j = np.arange(K)[None, :, None]
    t = np.arange(w_max)[None, None, :]
    return ExtendedBigramTable((x + j + 5 + t) % V)


def test_no_context_match_fills_with_bigram():
    ext = shifted_table()
    got = mixed_drafts([0, 1, 2, 3], 4, 2, 1, ext)
    assert got.kinds == (MODEL_BIGRAM,) * 4
    assert np.array_equal(got.rows, ext.table[3, :4, :2])
    assert got.ranks == (0, 1, 2, 3)


def test_two_context_rows_then_bigram():
    ctx = [1, 2, 9, 1, 3, 9, 1]
    got = mixed_drafts(ctx, 5, 1, 1, shifted_table())
    assert got.kinds == (CONTEXT, CONTEXT, MODEL_BIGRAM, MODEL_BIGRAM, MODEL_BIGRAM)
    assert got.rows[:, 0].tolist() == [3, 2, 6, 7, 8]
    assert got.n_context == 2


def test_single_row_taken_by_context():
    got = mixed_drafts([4, 7, 4], 1, 1, 1, shifted_table())
    assert got.rows.tolist() == [[7]] and got.kinds == (CONTEXT,)


def test_bigram_duplicate_of_context_row_is_skipped():
    ext = shifted_table()
    ext.table[1, 0, 0] = 3  # bigram rank 0 for seed 1 collides with a context row
    got = mixed_drafts([1, 2, 9, 1, 3, 9, 1], 4, 1, 1, ext)
    assert got.rows[:, 0].tolist() == [3, 2, 7, 8]
    assert got.ranks == (0, 1, 1, 2)


def test_deduplication_can_leave_batch_short():
    ext = ExtendedBigramTable(np.zeros((V, 4, 2), dtype=np.int64))
    got = mixed_drafts([5], 3, 2, 1, ext)
    assert got.k == 1


def test_mixed_rejects_w_beyond_table():
    with pytest.raises(ValueError):
        mixed_drafts([1, 2], 2, 4, 1, shifted_table(w_max=3))


def test_zero_width_gives_empty_batch():
    assert mixed_drafts([1, 2], 3, 0, 1, shifted_table()).k == 0


def test_single_unigram():
    U = np.array([[2.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])
    tables = DraftTables(unigram=derive_unigram(np.eye(3), U))
    got = single_strategy_drafts("unigram", [0], 3, 1, tables=tables)
    assert got.rows[:, 0].tolist() == [1, 2, 0] and got.kinds == (UNIGRAM,) * 3


def test_single_context_returns_only_matches():
    ctx = [0, 1, 0, 2, 0, 3, 0, 4, 0]
    got = single_strategy_drafts("context", ctx, 10, 1)
    assert got.k == 4 and got.rows[:, 0].tolist() == [4, 3, 2, 1]


def test_single_bigram_rejects_wide_drafts():
    with pytest.raises(ValueError):
        single_strategy_drafts("bigram", [0], 2, 2)
    with pytest.raises(ValueError):
        single_strategy_drafts("unigram", [0], 2, 3)


def test_single_needs_table():
    with pytest.raises(ValueError, match="needs its table"):
        single_strategy_drafts("extended", [0], 2, 2)
    with pytest.raises(ValueError, match="needs its table"):
        make_drafts("mixed", [0], 2, 2, 1, DraftTables())


def test_single_unknown_kind():
    with pytest.raises(ValueError):
        single_strategy_drafts("mixed", [0], 2, 1)


contexts = st.lists(st.integers(0, V - 1), min_size=1, max_size=60)


@settings(max_examples=150, deadline=None)
@given(contexts, st.integers(1, 8), st.integers(1, 3), st.integers(1, 2))
def test_mixed_invariants(ctx, k, w, q):
    ext = shifted_table()
    got = mixed_drafts(ctx, k, w, q, ext)
    m = len(context_ngram_match(ctx, q, w, k))
    assert got.n_context == m
    assert list(got.kinds) == [CONTEXT] * m + [MODEL_BIGRAM] * (got.k - m)
    assert len({tuple(r) for r in got.rows.tolist()}) == got.k
    assert got.rows.shape[1] == w
    # the table holds 6 distinct rows per seed, so k <= 6 always fills
    if k <= 6:
        assert got.k == k
    again = mixed_drafts(ctx, k, w, q, ext)
    assert np.array_equal(again.rows, got.rows) and again.kinds == got.kinds
