import math

import numpy as np
import pytest

from rltree.autodiff import Graph, ParameterStore, finite_difference_check
from rltree.data import Example
from rltree.encoder import Encoder, EncoderConfig
from rltree.model import Model, ModelConfig
from rltree.tasks import (
    BowDecoder, ClassifierHead, RegressionHead, bidirectional_encode, bow_nll, classify, entail,
    make_task, pair_features, relate,
)

from conftest import vocab_of


def zero_store(*heads):
    store = ParameterStore()
    for h in heads:
        h.init_params(store, np.random.default_rng(0))
    for v in store.values.values():
        v[...] = 0.0
    return store


def test_classify_zero_params():
    head = ClassifierHead(4, 2, hidden=3)
    g = Graph(zero_store(head))
    lp = classify(g, g.constant(np.arange(4.0)), head)
    assert np.allclose(lp.value, np.log(0.5))


def test_classify_normalized(rng):
    head = ClassifierHead(4, 5, hidden=6)
    store = ParameterStore()
    head.init_params(store, rng)
    g = Graph(store)
    lp = classify(g, g.constant(rng.normal(size=4)), head)
    assert abs(np.exp(lp.value).sum() - 1) < 1e-12


def test_classify_dimension_mismatch():
    head = ClassifierHead(4, 2, hidden=3)
    g = Graph(zero_store(head))
    with pytest.raises(ValueError):
        classify(g, g.zeros(5), head)


def test_pair_features_layout():
    g = Graph()
    a, b = g.constant([1.0, 2.0]), g.constant([3.0, -1.0])
    f = pair_features(g, a, b, with_sentences=True).value
    assert f.tolist() == [4.0, 9.0, 3.0, -2.0, 1.0, 2.0, 3.0, -1.0]
    swapped = pair_features(g, b, a, with_sentences=True).value
    assert np.array_equal(f[:4], swapped[:4])
    assert np.array_equal(f[4:6], swapped[6:]) and np.array_equal(f[6:], swapped[4:6])
    same = pair_features(g, a, a).value
    assert same.tolist() == [0.0, 0.0, 1.0, 4.0]
    with pytest.raises(ValueError):
        pair_features(g, a, g.zeros(3))


def test_relate_zero_params_and_symmetry(rng):
    head = RegressionHead(3, hidden=4)
    g = Graph(zero_store(head))
    assert float(relate(g, g.constant([1.0, 2, 3]), g.constant([0.0, 1, 5]), head).value) == 0.0
    store = ParameterStore()
    head.init_params(store, rng)
    store["reg.b_p"][...] = 0.1
    g = Graph(store)
    a, b = g.constant(rng.normal(size=3)), g.constant(rng.normal(size=3))
    assert float(relate(g, a, b, head).value) == float(relate(g, b, a, head).value)


def test_entail_zero_params():
    head = ClassifierHead(8, 3, hidden=5, prefix="nli")
    g = Graph(zero_store(head))
    lp = entail(g, g.constant(np.ones(2)), g.constant(np.arange(2.0)), head)
    assert np.allclose(lp.value, np.log(1 / 3))


def test_bow_uniform():
    dec = BowDecoder(4, 10)
    g = Graph(zero_store(dec))
    total, per = bow_nll(g, g.zeros(4), [1, 2, 3, 3], dec)
    assert np.allclose(per, math.log(10))
    assert math.exp(float(total.value) / 4) == pytest.approx(10)
    with pytest.raises(ValueError):
        bow_nll(g, g.zeros(4), [], dec)


def test_bow_repeated_tokens_add(rng):
    dec = BowDecoder(4, 6)
    store = ParameterStore()
    dec.init_params(store, rng)
    s = rng.normal(size=4)
    g = Graph(store)
    one = float(bow_nll(g, g.constant(s), [2], dec)[0].value)
    three = float(bow_nll(g, g.constant(s), [2, 2, 2], dec)[0].value)
    assert three == pytest.approx(3 * one)


def test_bidirectional_single_word_and_mean():
    store = ParameterStore()
    rng = np.random.default_rng(0)
    store.add("embed", rng.normal(size=(3, 4)))
    cfg = EncoderConfig(4, 4)
    a, b = Encoder(cfg, "l2r"), Encoder(cfg, "r2l")
    a.init_params(store, rng)
    for name in a.param_shapes():
        store.add(name.replace("l2r", "r2l"), store[name].copy())
    g = Graph(store)
    h = bidirectional_encode(g, [1], a, b)
    assert np.allclose(h.value, a.leaf(g, g.lookup("embed", 1)).h.value)
    h = bidirectional_encode(g, [1, 2, 0], a, b)
    assert h.shape == (4,)
    assert np.allclose(g.scale(g.add(g.constant([2.0, 0]), g.constant([0, 2.0])), 0.5).value, [1, 1])


def test_make_task():
    assert make_task("sst").name == "sentiment"
    assert make_task("sick").metric == "mse"
    with pytest.raises(ValueError):
        make_task("translation")


# --- end-to-end gradient checks through encode --------------------------------

TASK_CASES = {
    "sentiment": (Example(([f"w{i}" for i in range(5)],), "1"), ["0", "1"], False),
    "relatedness": (Example((["w0", "w1", "w2"], ["w3", "w4", "w5", "w1", "w2", "w0"]), 3.5),
                    [], False),
    "entailment": (Example((["w0", "w1", "w2", "w3"], ["w4", "w5"]), "b"), ["a", "b", "c"], True),
    "generation": (Example((["w0", "w1", "w2", "w3", "w4", "w5"],), ["w1", "w3", "w3", "w7"]),
                   [], False),
}


def model_for(task, labels, tracking, regime="fixed-left", seed=0):
    cfg = ModelConfig(task=task, regime=regime, dim=8, emb_dim=8, tracking=tracking,
                      track_dim=4, head_hidden=8, policy_hidden=8)
    m = Model(cfg, vocab_of(8), labels).init_params(np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 1)
    for name in m.store.names():
        v = m.store[name]
        if v.ndim <= 1:
            v[...] = rng.normal(0, 0.3, size=v.shape)
    m.store["embed"][...] = rng.normal(0, 1.0, size=m.store["embed"].shape)
    return m


def task_loss_check(task, regime="fixed-left", mode="left"):
    ex, labels, tracking = TASK_CASES[task]
    m = model_for(task, labels, tracking, regime)
    inst = m.instance(ex)

    def fn(g):
        vecs = [m.encode(g, ids, mode)[0] for ids in inst.ids]
        return m.task.outcome(g, vecs, inst.target).loss

    return finite_difference_check(fn, m.store, max_coords=40)


@pytest.mark.parametrize("task", sorted(TASK_CASES))
def test_task_gradient_end_to_end(task):
    rep = task_loss_check(task)
    assert rep.passed, str(rep)


def test_bidirectional_gradient():
    rep = task_loss_check("sentiment", "bidirectional", "bidirectional")
    assert rep.passed, str(rep)


def test_rewards_match_losses():
    for task, (ex, labels, tracking) in TASK_CASES.items():
        m = model_for(task, labels, tracking)
        inst = m.instance(ex)
        g = Graph(m.store)
        vecs = [m.encode(g, ids, "left")[0] for ids in inst.ids]
        out = m.task.outcome(g, vecs, inst.target)
        assert out.reward == -float(out.loss.value)
        assert out.reward <= 0
