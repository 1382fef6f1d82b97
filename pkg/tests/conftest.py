import numpy as np
import pytest

from rltree.autodiff import ParameterStore
from rltree.encoder import Encoder, EncoderConfig, Vocab
from rltree.policy import Policy


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_stack(dim=8, emb_dim=8, vocab_size=12, tracking=False, track_dim=4,
               hidden=8, seed=0, scale=1.0):
    """A store holding embeddings, one encoder and a policy."""
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    store.add("embed", rng.normal(0, scale, size=(vocab_size, emb_dim)))
    enc = Encoder(EncoderConfig(dim, emb_dim, tracking, track_dim))
    enc.init_params(store, rng)
    pol = Policy(dim, emb_dim, hidden)
    pol.init_params(store, rng)
    # nonzero biases so every term of the gradient is exercised
    for name in store.names():
        if store[name].ndim == 1:
            store[name][...] = rng.normal(0, 0.3, size=store[name].shape)
    return store, enc, pol


def words(n):
    return [f"w{i}" for i in range(n)]


def vocab_of(n):
    return Vocab(words(n))


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
