import numpy as np
import pytest

from rltree.autodiff import Graph, ParameterStore, finite_difference_check
from rltree.data import random_tree
from rltree.encoder import (
    Encoder, EncoderConfig, ParserState, StackElement, Vocab, load_embeddings, EmbeddingTable,
)
from rltree.trees import ActionError, R, S, parse_actions, tree_to_actions

from conftest import tiny_stack


def zero_encoder(dim=2, emb_dim=2, tracking=False):
    store = ParameterStore()
    enc = Encoder(EncoderConfig(dim, emb_dim, tracking, 3))
    enc.init_params(store, np.random.default_rng(0))
    store.add("embed", np.zeros((4, emb_dim)))
    for v in store.values.values():
        v[...] = 0.0
    return store, enc


def elem(g, h, c):
    return StackElement(g.constant(h), g.constant(c))


def test_compose_zero_params_zero_memory():
    store, enc = zero_encoder()
    g = Graph(store)
    out = enc.compose(g, elem(g, [1, -1], [0, 0]), elem(g, [3, 2], [0, 0]))
    assert np.all(out.h.value == 0) and np.all(out.c.value == 0)


def test_compose_half_gates():
    store, enc = zero_encoder()
    g = Graph(store)
    out = enc.compose(g, elem(g, [0, 0], [2, 0]), elem(g, [0, 0], [0, 4]))
    assert np.allclose(out.c.value, [1, 2])
    assert np.allclose(out.h.value, [0.5, 1])


def test_compose_tanh_cell_flag():
    store = ParameterStore()
    enc = Encoder(EncoderConfig(2, 2, tanh_cell=True))
    enc.init_params(store, np.random.default_rng(0))
    for v in store.values.values():
        v[...] = 0.0
    g = Graph(store)
    out = enc.compose(g, elem(g, [0, 0], [2, 0]), elem(g, [0, 0], [0, 4]))
    assert np.allclose(out.h.value, 0.5 * np.tanh([1, 2]))


def test_compose_tracking_contract():
    store, enc = zero_encoder()
    g = Graph(store)
    a = elem(g, [0, 0], [0, 0])
    with pytest.raises(ValueError):
        enc.compose(g, a, a, g.zeros(3))
    store, enc = zero_encoder(tracking=True)
    g = Graph(store)
    with pytest.raises(ValueError):
        enc.compose(g, a, a)


def test_compose_input_width():
    assert Encoder(EncoderConfig(5, 7)).param_shapes()["enc.W_I"] == (5, 10)
    assert Encoder(EncoderConfig(5, 7, True, 3)).param_shapes()["enc.W_I"] == (5, 13)


@pytest.mark.parametrize("tracking", [False, True])
def test_compose_gradient(tracking):
    store, enc, _ = tiny_stack(tracking=tracking, track_dim=4)
    rng = np.random.default_rng(5)
    hl, cl, hr, cr = (rng.normal(size=8) for _ in range(4))
    e = rng.normal(size=4)

    def fn(g):
        out = enc.compose(g, elem(g, hl, cl), elem(g, hr, cr),
                          g.constant(e) if tracking else None)
        return g.dot(out.h, out.h)

    names = [n for n in store.names() if n.startswith("enc.W") or n.startswith("enc.b")]
    rep = finite_difference_check(fn, store, names=names)
    assert rep.passed, str(rep)


def test_tracking_zero_params():
    store, enc = zero_encoder(tracking=True)
    g = Graph(store)
    st = enc.start(g, [0, 0, 0])
    assert np.all(enc.tracking_step(g, st).value == 0)


def test_tracking_gradient_three_steps():
    store, enc, _ = tiny_stack(tracking=True, track_dim=6)

    def fn(g):
        st = enc.start(g, [1, 2, 3])
        for a in (S, S, R):
            enc.tracking_step(g, st)
            enc.step(g, st, a)
        e = enc.tracking_step(g, st)
        return g.add(g.dot(e, e), g.sum(st.stack[-1].h))

    names = [n for n in store.names() if n.startswith("enc.track") or n == "embed"]
    rep = finite_difference_check(fn, store, names=names)
    assert rep.passed, str(rep)


def test_shift_and_reduce_bookkeeping():
    store, enc, _ = tiny_stack()
    g = Graph(store)
    st = enc.start(g, [1, 2, 3])
    enc.shift(g, st)
    assert len(st.stack) == 1 and st.p == 2
    with pytest.raises(ActionError):
        enc.reduce(g, st)
    enc.shift(g, st)
    enc.shift(g, st)
    with pytest.raises(ActionError):
        enc.shift(g, st)
    enc.reduce(g, st)
    enc.reduce(g, st)
    assert st.finished() and st.trees == [(0, (1, 2))]


def test_leaf_of_zero_embedding_is_zero():
    store, enc = zero_encoder()
    g = Graph(store)
    leaf = enc.leaf(g, g.zeros(2))
    assert np.all(leaf.h.value == 0) and np.all(leaf.c.value == 0)


def test_state_invariants_after_every_step():
    store, enc, _ = tiny_stack()
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.integers(1, 9))
        acts = tree_to_actions(random_tree(n, rng))
        it = iter(acts)
        g = Graph(store)
        enc.run(g, list(rng.integers(0, 12, size=n)), lambda g, s: next(it), ParserState.check)


def recursive_encode(store, enc, ids, tree):
    """Direct recursion over the tree with plain numpy."""
    d = enc.config.dim
    W = store.values

    def sig(x):
        return np.where(x >= 0, 1 / (1 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1 + np.exp(-np.abs(x))))

    def walk(t):
        if not isinstance(t, tuple):
            hc = W["enc.leaf.W"] @ W["embed"][ids[t]] + W["enc.leaf.b"]
            return hc[:d], hc[d:]
        (hl, cl), (hr, cr) = walk(t[0]), walk(t[1])
        x = np.concatenate([hl, hr])
        pre = {k: W[f"enc.W_{k}"] @ x + W[f"enc.b_{k}"] for k in ("I", "FL", "FR", "O", "G")}
        c = sig(pre["FL"]) * cl + sig(pre["FR"]) * cr + sig(pre["I"]) * np.tanh(pre["G"])
        return sig(pre["O"]) * c, c

    return walk(tree)[0]


def test_encode_matches_recursion():
    store, enc, _ = tiny_stack()
    rng = np.random.default_rng(4)
    for _ in range(100):
        n = int(rng.integers(1, 11))
        ids = list(rng.integers(0, 12, size=n))
        tree = random_tree(n, rng)
        h, t = enc.encode_tree(Graph(store), ids, tree)
        assert t == tree
        assert h.shape == (8,)
        assert np.array_equal(h.value, recursive_encode(store, enc, ids, tree))


def test_left_branching_four_words_explicit():
    store, enc, _ = tiny_stack()
    g = Graph(store)
    ids = [1, 2, 3, 4]
    h, _ = enc.encode(g, ids, parse_actions("SSRSRSR"))
    w = [enc.leaf(g, g.lookup("embed", i)) for i in ids]
    manual = enc.compose(g, enc.compose(g, enc.compose(g, w[0], w[1]), w[2]), w[3])
    assert np.array_equal(h.value, manual.h.value)


def test_single_word_is_leaf():
    store, enc, _ = tiny_stack()
    g = Graph(store)
    h, t = enc.encode(g, [5], (S,))
    assert t == 0
    assert np.array_equal(h.value, enc.leaf(g, g.lookup("embed", 5)).h.value)


def test_different_trees_differ():
    store, enc, _ = tiny_stack()
    a, _ = enc.encode(Graph(store), [1, 2, 3], parse_actions("SSRSR"))
    b, _ = enc.encode(Graph(store), [1, 2, 3], parse_actions("SSSRR"))
    assert not np.allclose(a.value, b.value)


def test_encode_rejects_bad_actions():
    store, enc, _ = tiny_stack()
    with pytest.raises(ActionError):
        enc.encode(Graph(store), [1, 2], (S, R, S))
    with pytest.raises(ActionError):
        enc.encode(Graph(store), [1, 2], (S, S))


def test_vocab_and_embeddings(tmp_path):
    v = Vocab(["a", "b", "a"])
    assert len(v) == 3 and v.encode(["b", "zzz"]) == [2, 0]
    path = tmp_path / "emb.txt"
    path.write_text("2 3\na 1 2 3\nq 4 5 6\n")
    vecs = load_embeddings(path, 3)
    assert set(vecs) == {"a", "q"}
    table = EmbeddingTable(v, 3)
    store = ParameterStore()
    table.init_params(store, np.random.default_rng(0), vecs)
    assert np.array_equal(store["embed"][1], [1, 2, 3])
    assert table.pretrained.tolist() == [False, True, False]
    assert np.all(np.abs(store["embed"][2]) <= 0.05)
    path.write_text("a 1 2\n")
    with pytest.raises(ValueError):
        load_embeddings(path, 3)
