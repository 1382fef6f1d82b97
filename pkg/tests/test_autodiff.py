import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rltree.autodiff import (
    Graph, GraphError, NonFiniteError, ParameterStore, ShapeError,
    finite_difference_check, relative_error,
)


def store_with(rng, **shapes):
    s = ParameterStore()
    for name, shape in shapes.items():
        s.add(name, rng.normal(size=shape))
    return s


# each entry: (parameter shapes given dims m, n) -> scalar-valued graph
UNARY = {
    "sigmoid": lambda g, a: g.sigmoid(a),
    "tanh": lambda g, a: g.tanh(a),
    "relu": lambda g, a: g.relu(a),
    "log_softmax": lambda g, a: g.log_softmax(a),
    "scale": lambda g, a: g.scale(a, -2.5),
    "slice": lambda g, a: g.slice(a, 0, max(1, a.shape[0] // 2)),
}
BINARY = {
    "add": lambda g, a, b: g.add(a, b),
    "sub": lambda g, a, b: g.sub(a, b),
    "mul": lambda g, a, b: g.mul(a, b),
    "sqdiff": lambda g, a, b: g.sqdiff(a, b),
    "concat": lambda g, a, b: g.concat(a, b),
}


def project(g, node, w):
    """Random linear readout so every output coordinate matters."""
    return g.dot(g.constant(w[: node.shape[0]]), node)


dims = st.integers(min_value=1, max_value=16)
seeds = st.integers(min_value=0, max_value=2**31 - 1)


@pytest.mark.parametrize("op", sorted(UNARY))
@settings(max_examples=15, deadline=None)
@given(n=dims, seed=seeds)
def test_unary_gradients(op, n, seed):
    rng = np.random.default_rng(seed)
    s = store_with(rng, a=(n,))
    w = rng.normal(size=n)
    if op == "relu":
        # keep away from the kink
        s["a"][np.abs(s["a"]) < 1e-3] = 0.5
    rep = finite_difference_check(lambda g: project(g, UNARY[op](g, g.param("a")), w), s)
    assert rep.passed, str(rep)


@pytest.mark.parametrize("op", sorted(BINARY))
@settings(max_examples=15, deadline=None)
@given(n=dims, seed=seeds)
def test_binary_gradients(op, n, seed):
    rng = np.random.default_rng(seed)
    s = store_with(rng, a=(n,), b=(n,))
    w = rng.normal(size=2 * n)
    rep = finite_difference_check(
        lambda g: project(g, BINARY[op](g, g.param("a"), g.param("b")), w), s)
    assert rep.passed, str(rep)


@settings(max_examples=20, deadline=None)
@given(m=dims, n=dims, seed=seeds)
def test_matvec_tmatvec_dot_sum_pick(m, n, seed):
    rng = np.random.default_rng(seed)
    s = store_with(rng, W=(m, n), x=(n,), y=(m,))
    k = int(rng.integers(m))

    def fn(g):
        W = g.param("W")
        a = g.matvec(W, g.param("x"))
        b = g.tmatvec(W, g.param("y"))
        return g.add(g.add(g.dot(a, g.param("y")), g.sum(g.tanh(b))), g.pick(a, k))

    rep = finite_difference_check(fn, s)
    assert rep.passed, str(rep)


def test_lookup_gradient_is_sparse(rng):
    s = store_with(rng, E=(5, 3))
    g = Graph(s)
    g.backward(g.sum(g.tanh(g.lookup("E", 2))))
    assert np.all(s.grads["E"][[0, 1, 3, 4]] == 0)
    assert np.all(s.grads["E"][2] != 0)
    rep = finite_difference_check(lambda g: g.sum(g.tanh(g.lookup("E", 2))), s)
    assert rep.passed


def test_trivial_values():
    g = Graph()
    a = g.constant([1.0, 2.0])
    b = g.constant([3.0, -1.0])
    assert np.allclose(g.add(a, b).value, [4, 1])
    assert np.allclose(g.mul(a, b).value, [3, -2])
    assert float(g.dot(a, b).value) == 1.0
    assert np.allclose(g.sqdiff(a, b).value, [4, 9])
    assert np.allclose(g.concat(a, b).value, [1, 2, 3, -1])
    assert np.allclose(g.sigmoid(g.zeros(2)).value, 0.5)
    assert np.allclose(np.exp(g.log_softmax(g.zeros(4)).value), 0.25)
    assert float(g.nll(g.log_softmax(g.zeros(4)), 1).value) == pytest.approx(np.log(4))


def test_stable_extremes():
    g = Graph()
    x = g.constant([1000.0, -1000.0, 0.0])
    assert np.allclose(g.sigmoid(x).value, [1.0, 0.0, 0.5])
    ls = g.log_softmax(x).value
    assert np.all(np.isfinite(ls)) and ls[0] == 0.0


def test_shared_node_gradients_accumulate(rng):
    # f = a.a + sum(a): gradient 2a + 1 through a node used three times
    s = store_with(rng, a=(4,))
    g = Graph(s)
    a = g.param("a")
    g.backward(g.add(g.dot(a, a), g.sum(a)))
    assert np.allclose(s.grads["a"], 2 * s["a"] + 1)


def test_store_accumulates_across_graphs(rng):
    s = store_with(rng, a=(3,))
    for _ in range(2):
        g = Graph(s)
        g.backward(g.sum(g.param("a")))
    assert np.allclose(s.grads["a"], 2.0)
    s.zero_grad()
    assert np.all(s.grads["a"] == 0)


def test_param_nodes_share_storage(rng):
    s = store_with(rng, a=(3,))
    g = Graph(s)
    assert g.param("a") is g.param("a")
    assert g.param("a").value is s["a"]


def test_shape_errors():
    g = Graph()
    with pytest.raises(ShapeError) as e:
        g.add(g.zeros(2), g.zeros(3))
    assert "(2,)" in str(e.value) and "(3,)" in str(e.value)
    with pytest.raises(ShapeError):
        g.matvec(g.constant(np.zeros((2, 3))), g.zeros(2))
    with pytest.raises(ShapeError):
        g.slice(g.zeros(3), 2, 5)
    with pytest.raises(ShapeError):
        g.pick(g.zeros(3), 3)


def test_backward_rules():
    g = Graph()
    with pytest.raises(GraphError):
        g.backward(g.zeros(2))
    root = g.sum(g.zeros(2))
    g.backward(root)
    with pytest.raises(GraphError):
        g.backward(root)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_detected():
    g = Graph()
    with pytest.raises(NonFiniteError):
        g.constant([np.inf])
    with pytest.raises(NonFiniteError):
        g.scale(g.constant([1e308]), 1e10)


def test_relative_error_floor():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1e-9, 0.0) == pytest.approx(1e-3)
    assert relative_error(2.0, 1.0) == pytest.approx(0.5)


def test_gradcheck_catches_wrong_gradient(rng, monkeypatch):
    from rltree import autodiff
    bad = autodiff.Op(autodiff.OPS["tanh"].forward, lambda g, v, out, c, a: (g,))
    monkeypatch.setitem(autodiff.OPS, "tanh", bad)
    s = store_with(rng, a=(4,))
    rep = finite_difference_check(lambda g: g.sum(g.tanh(g.param("a"))), s)
    assert not rep.passed


def test_serialization_round_trip(rng, tmp_path):
    s = store_with(rng, b=(3,), W=(2, 4), c=())
    data = s.dumps({"hello": [1, 2]})
    t, meta = ParameterStore.loads(data)
    assert meta == {"hello": [1, 2]}
    assert sorted(t.names()) == sorted(s.names())
    for n in s:
        assert t[n].shape == s[n].shape and np.array_equal(t[n], s[n])
    assert t.dumps({"hello": [1, 2]}) == data
    s.save(tmp_path / "p.bin", {"x": 1})
    u, m = ParameterStore.load(tmp_path / "p.bin")
    assert m == {"x": 1} and np.array_equal(u["W"], s["W"])


def test_serialization_rejects_garbage():
    with pytest.raises(ValueError):
        ParameterStore.loads(b"not a checkpoint\n")
