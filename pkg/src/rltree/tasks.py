"""Downstream heads: sentiment, relatedness, entailment and next-sentence
bag-of-words generation.

Every task turns encoded sentence vectors into a differentiable loss to
minimize and a scalar reward for the structure policy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Graph, Node, ParameterStore, glorot_uniform
from .trees import fixed_order_actions


def _init(store: ParameterStore, shapes: dict, rng: np.random.Generator):
    for name, shape in shapes.items():
        if len(shape) <= 1:
            store.add(name, np.zeros(shape))
        else:
            store.add(name, glorot_uniform(rng, shape))


class ClassifierHead:
    """q = ReLU(W_p s + b_p); log-softmax over ``w_q q + b_q``."""

    def __init__(self, in_dim: int, classes: int, hidden: int = 200, prefix: str = "cls"):
        self.in_dim = in_dim
        self.classes = classes
        self.hidden = hidden
        self.prefix = prefix

    def param_shapes(self):
        p = self.prefix
        return {f"{p}.W_p": (self.hidden, self.in_dim), f"{p}.b_p": (self.hidden,),
                f"{p}.w_q": (self.classes, self.hidden), f"{p}.b_q": (self.classes,)}

    def init_params(self, store, rng):
        _init(store, self.param_shapes(), rng)

    def __call__(self, graph: Graph, features: Node) -> Node:
        p = self.prefix
        if features.shape != (self.in_dim,):
            raise ValueError(f"classifier expects a {self.in_dim}-vector, got {features.shape}")
        q = graph.relu(graph.affine(f"{p}.W_p", features, f"{p}.b_p"))
        return graph.log_softmax(graph.affine(f"{p}.w_q", q, f"{p}.b_q"))


def classify(graph: Graph, s: Node, head: ClassifierHead) -> Node:
    return head(graph, s)


def pair_features(graph: Graph, s1: Node, s2: Node, with_sentences: bool = False) -> Node:
    """``[u, v]`` or ``[u, v, s1, s2]`` with u = (s2 - s1)^2 and v = s1 * s2."""
    if s1.shape != s2.shape:
        raise ValueError(f"sentence vectors differ in shape: {s1.shape} vs {s2.shape}")
    u = graph.sqdiff(s2, s1)
    v = graph.mul(s1, s2)
    if with_sentences:
        return graph.concat(u, v, s1, s2)
    return graph.concat(u, v)


class RegressionHead:
    def __init__(self, dim: int, hidden: int = 200, prefix: str = "reg"):
        self.dim = dim
        self.hidden = hidden
        self.prefix = prefix

    def param_shapes(self):
        p = self.prefix
        return {f"{p}.W_p": (self.hidden, 2 * self.dim), f"{p}.b_p": (self.hidden,),
                f"{p}.w_q": (self.hidden,), f"{p}.b_q": ()}

    def init_params(self, store, rng):
        _init(store, self.param_shapes(), rng)


def relate(graph: Graph, s1: Node, s2: Node, head: RegressionHead) -> Node:
    p = head.prefix
    q = graph.relu(graph.affine(f"{p}.W_p", pair_features(graph, s1, s2), f"{p}.b_p"))
    return graph.add(graph.dot(graph.param(f"{p}.w_q"), q), graph.param(f"{p}.b_q"))


def entail(graph: Graph, s1: Node, s2: Node, head: ClassifierHead) -> Node:
    return head(graph, pair_features(graph, s1, s2, with_sentences=True))


class BowDecoder:
    """Independent softmax over the vocabulary: p(w | s) ~ exp(v_w . s)."""

    def __init__(self, dim: int, vocab_size: int, prefix: str = "bow"):
        self.dim = dim
        self.vocab_size = vocab_size
        self.prefix = prefix

    def param_shapes(self):
        return {f"{self.prefix}.V": (self.dim, self.vocab_size)}

    def init_params(self, store, rng):
        _init(store, self.param_shapes(), rng)


def bow_nll(graph: Graph, s: Node, targets: Sequence[int],
            decoder: BowDecoder) -> tuple[Node, list[float]]:
    if len(targets) == 0:
        raise ValueError("empty target sentence")
    logp = graph.log_softmax(graph.tmatvec(graph.param(f"{decoder.prefix}.V"), s))
    picks = [graph.nll(logp, t) for t in targets]
    return graph.add_all(picks), [float(p.value) for p in picks]


def bidirectional_encode(graph: Graph, token_ids, enc_l2r, enc_r2l) -> Node:
    n = len(token_ids)
    h_l, _ = enc_l2r.encode(graph, token_ids, fixed_order_actions("left-to-right", n))
    h_r, _ = enc_r2l.encode(graph, token_ids, fixed_order_actions("right-to-left", n))
    if h_l.shape != h_r.shape:
        raise ValueError(f"encoder outputs differ in shape: {h_l.shape} vs {h_r.shape}")
    return graph.scale(graph.add(h_l, h_r), 0.5)


# --- task adapters ----------------------------------------------------------

@dataclass
class Outcome:
    loss: Node          # minimized
    reward: float       # fed to REINFORCE
    prediction: object
    nll: float = 0.0    # generation only
    tokens: int = 0     # generation only


class Task:
    name: str
    pair: bool = False
    metric: str
    higher_is_better: bool = True

    def build_head(self, dim: int, hidden: int, n_out: int):
        raise NotImplementedError

    def outcome(self, graph: Graph, vectors: list[Node], target) -> Outcome:
        raise NotImplementedError


class SentimentTask(Task):
    name = "sentiment"
    metric = "accuracy"

    def build_head(self, dim, hidden, n_out):
        self.head = ClassifierHead(dim, n_out, hidden, prefix="cls")
        return self.head

    def outcome(self, graph, vectors, target):
        logp = classify(graph, vectors[0], self.head)
        loss = graph.nll(logp, target)
        return Outcome(loss, -float(loss.value), int(np.argmax(logp.value)))


class EntailmentTask(Task):
    name = "entailment"
    pair = True
    metric = "accuracy"

    def build_head(self, dim, hidden, n_out):
        self.head = ClassifierHead(4 * dim, n_out, hidden, prefix="nli")
        return self.head

    def outcome(self, graph, vectors, target):
        logp = entail(graph, vectors[0], vectors[1], self.head)
        loss = graph.nll(logp, target)
        return Outcome(loss, -float(loss.value), int(np.argmax(logp.value)))


class RelatednessTask(Task):
    name = "relatedness"
    pair = True
    metric = "mse"
    higher_is_better = False

    def build_head(self, dim, hidden, n_out):
        self.head = RegressionHead(dim, hidden, prefix="reg")
        return self.head

    def outcome(self, graph, vectors, target):
        y_hat = relate(graph, vectors[0], vectors[1], self.head)
        loss = graph.sqdiff(y_hat, graph.constant(float(target)))
        return Outcome(loss, -float(loss.value), float(y_hat.value))


class GenerationTask(Task):
    name = "generation"
    metric = "perplexity"
    higher_is_better = False

    def build_head(self, dim, hidden, n_out):
        self.head = BowDecoder(dim, n_out, prefix="bow")
        return self.head

    def outcome(self, graph, vectors, target):
        total, per_token = bow_nll(graph, vectors[0], target, self.head)
        nll = float(total.value)
        return Outcome(total, -nll, math.exp(nll / len(target)), nll=nll, tokens=len(target))


TASKS = {
    "sentiment": SentimentTask, "sst": SentimentTask,
    "relatedness": RelatednessTask, "sick": RelatednessTask,
    "entailment": EntailmentTask, "snli": EntailmentTask,
    "generation": GenerationTask, "imdb": GenerationTask,
}


def make_task(name: str) -> Task:
    try:
        return TASKS[name]()
    except KeyError:
        raise ValueError(f"unknown task {name!r}; choose from {sorted(set(TASKS))}") from None
