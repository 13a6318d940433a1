import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import CountingPredictor, cyclic_table_model
from ngramspec.model import (KvCache, ToyTransformer, broadcast_cache, commit_cache, forward_greedy,
                             forward_scores, greedy_decode, prefill, table_model_from_corpus, toy_transformer_init)

A, B, C = 0, 1, 2


def test_toy_init_is_deterministic():
    m1, m2 = toy_transformer_init(7, 64, 16), toy_transformer_init(7, 64, 16)
    for x, y in zip(m1.weights(), m2.weights()):
        assert np.array_equal(x, y)


def test_toy_init_depends_on_seed():
    assert not np.array_equal(toy_transformer_init(7, 64, 16).V, toy_transformer_init(8, 64, 16).V)


@pytest.mark.parametrize("vocab,dim", [(1, 16), (64, 1), (513, 8)])
def test_toy_init_rejects_bad_sizes(vocab, dim):
    with pytest.raises(ValueError):
        toy_transformer_init(7, vocab, dim)


def test_toy_weights_bounded():
    m = toy_transformer_init(1, 10, 25)
    for w in m.weights():
        assert np.abs(w).max() <= 1 / 5


def test_weight_file_round_trip(tmp_path):
    m = toy_transformer_init(11, 20, 8)
    path = tmp_path / "m.spdr"
    m.save(path)
    raw = path.read_bytes()
    assert struct.unpack_from("<4sIIIQ", raw) == (b"SPDR", 1, 20, 8, 11)
    back = ToyTransformer.load(path)
    for x, y in zip(m.weights(), back.weights()):
        assert np.array_equal(x, y)
    path.write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        ToyTransformer.load(path)


def test_table_counts_continuations():
    m = table_model_from_corpus([A, B, A, B, A], 1, 3)
    assert m.lookup([A]).tolist() == [0, 2, 0]
    assert forward_greedy(m, [[A]], 0)[0, 0] == B


def test_table_tie_goes_to_lowest_id():
    m = table_model_from_corpus([A, C, A, B], 1, 3)
    assert m.lookup([A])[B] == m.lookup([A])[C] == 1
    assert forward_greedy(m, [[A]], 0)[0, 0] == B


def test_table_needs_longer_corpus():
    with pytest.raises(ValueError, match="too short"):
        table_model_from_corpus([A], 1)


def test_table_unseen_history_uses_uniform_backoff():
    m = table_model_from_corpus([A, B, A, B], 1, 3)
    assert np.array_equal(m.lookup([C]), np.zeros(3))


def test_forward_table_per_position():
    m = table_model_from_corpus([A, B, A, C, C, A, B], 1, 3)
    got = forward_greedy(m, [[A, B]], 1)
    assert got.tolist() == [[int(np.argmax(m.lookup([A]))), int(np.argmax(m.lookup([B])))]]


def test_forward_single_step_matches_greedy(toy):
    prompt = [3, 9, 1]
    assert forward_greedy(toy, [prompt], 0)[0, 0] == greedy_decode(toy, prompt, 1)[-1]


def test_forward_rejects_bad_shapes(toy):
    with pytest.raises(ValueError):
        forward_greedy(toy, [1, 2, 3], 0)
    with pytest.raises(ValueError):
        forward_greedy(toy, [[1, 2]], 2)
    cache = prefill(toy, [1, 2, 3, 4], 10)
    with pytest.raises(ValueError, match="exceeds"):
        forward_greedy(toy, [[1, 2]], 0, cache)
    with pytest.raises(ValueError, match="share"):
        forward_greedy(toy, [[1, 2, 5, 4]], 0, cache)


def test_greedy_decode_zero_steps(toy):
    assert greedy_decode(toy, [4, 5], 0).tolist() == [4, 5]


def test_greedy_decode_follows_chain():
    m = table_model_from_corpus([A, B, A, B, A], 1, 2)
    assert greedy_decode(m, [A], 5).tolist() == [A, B, A, B, A, B]


def test_greedy_decode_deterministic(toy):
    assert np.array_equal(greedy_decode(toy, [1, 2], 12), greedy_decode(toy, [1, 2], 12))


def test_greedy_decode_uses_n_unit_calls(toy):
    m = CountingPredictor(toy)
    greedy_decode(m, [5, 6, 7], 9)
    assert m.calls == [(1, 1)] * 9


def test_greedy_decode_stops_at_eos():
    m = cyclic_table_model(5)
    assert greedy_decode(m, [0], 10, eos_id=3).tolist() == [0, 1, 2, 3]


def test_cached_and_uncached_forward_agree(toy):
    rows = np.array([[1, 2, 3, 4, 5], [1, 2, 3, 9, 8]])
    cache = broadcast_cache(prefill(toy, [1, 2, 3, 4], 10), 2)  # caches [1, 2, 3]
    assert np.array_equal(forward_scores(toy, rows, 3, cache), forward_scores(toy, rows, 3))


def test_broadcast_reads_same_prefix(toy):
    cache = prefill(toy, [1, 2, 3, 4, 5, 6], 10)
    b = broadcast_cache(cache, 3)
    assert b.rows.shape == (3, 5, toy.kv_width)
    assert all(np.array_equal(b.rows[i], cache.rows[0]) for i in range(3))


def test_broadcast_identity_and_empty(toy):
    cache = prefill(toy, [1, 2, 3], 10)
    same = broadcast_cache(cache, 1)
    assert same.batch == 1 and np.array_equal(same.rows, cache.rows)
    empty = broadcast_cache(prefill(toy, [7], 4), 4)
    assert empty.rows.shape == (4, 0, toy.kv_width)
    with pytest.raises(ValueError):
        broadcast_cache(cache, 0)
    with pytest.raises(ValueError):
        broadcast_cache(broadcast_cache(cache, 2), 3)


def test_commit_nothing_discards_speculation(toy):
    cache = broadcast_cache(prefill(toy, [1, 2, 3], 10), 2)
    forward_greedy(toy, [[1, 2, 3, 4], [1, 2, 3, 5]], 1, cache)
    commit_cache(cache, 1, 0)
    assert cache.length == 2 and cache.n_spec == 0


def test_commit_keeps_winner_entries(toy):
    prompt = [4, 4, 2]
    rows = np.array([[*prompt, 1, 1, 1], [*prompt, 5, 6, 7], [*prompt, 8, 9, 10]])
    cache = broadcast_cache(prefill(toy, prompt, 20), 3)
    forward_greedy(toy, rows, 3, cache)
    commit_cache(cache, 2, 3)
    committed = [4, 4, 2, 8, 9]
    assert cache.tokens.tolist() == committed
    assert np.array_equal(cache.rows, np.broadcast_to(toy.encode(np.array([committed]))[0], (3, 5, toy.kv_width)))
    # the next call on the committed sequence equals a cache-free call
    nxt = np.array([[*committed, 10, 3]])
    one = cache.collapse()
    assert np.array_equal(forward_scores(toy, nxt, 2, one), forward_scores(toy, nxt, 2))


def test_commit_rejects_out_of_range(toy):
    cache = broadcast_cache(prefill(toy, [1, 2], 10), 2)
    forward_greedy(toy, [[1, 2, 3], [1, 2, 4]], 1, cache)
    with pytest.raises(ValueError):
        commit_cache(cache, 2, 1)
    with pytest.raises(ValueError):
        commit_cache(cache, 0, 3)


def test_cache_capacity_enforced(toy):
    cache = prefill(toy, [1, 2, 3], 3)
    forward_greedy(toy, [[1, 2, 3, 4]], 1, cache)
    with pytest.raises(ValueError, match="capacity"):
        commit_cache(cache, 0, 2)


def test_table_model_has_no_embeddings():
    with pytest.raises(TypeError):
        cyclic_table_model(4).embeddings()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 47), min_size=2, max_size=20), st.data())
def test_causality(toy, tokens, data):
    p = data.draw(st.integers(1, len(tokens) - 1))
    other = list(tokens)
    other[p] = (other[p] + 1) % 48
    n = len(tokens)
    a = forward_scores(toy, [tokens], n)[0]
    b = forward_scores(toy, [other], n)[0]
    assert np.array_equal(a[:p], b[:p])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.lists(st.integers(0, 47), min_size=6, max_size=6), min_size=1, max_size=4), st.data())
def test_duplicated_row_gives_duplicated_prediction(toy, rows, data):
    i = data.draw(st.integers(0, len(rows) - 1))
    block = np.array(rows + [rows[i]])
    out = forward_scores(toy, block, 4)
    assert np.array_equal(out[-1], out[i])


def test_kvcache_starts_empty():
    c = KvCache(4, 10)
    assert c.length == 0 and c.rows.shape == (1, 0, 4) and c.n_spec == 0
