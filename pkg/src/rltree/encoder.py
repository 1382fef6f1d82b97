"""Shift-reduce Tree LSTM sentence encoder.

SHIFT pushes a leaf (h, c) pair built from the next word embedding; REDUCE
pops the two top elements and merges them with the binary Tree LSTM cell.
An optional tracking LSTM reads the stack tops and the next word at every
step and feeds its output to each composition.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autodiff import Graph, Node, ParameterStore, glorot_uniform
from .trees import Action, ActionError, R, S, Tree, tree_to_actions

GATES = ("I", "FL", "FR", "O", "G")


@dataclass
class EncoderConfig:
    dim: int = 100
    emb_dim: int = 100
    tracking: bool = False
    track_dim: int = 50
    # h = o * c as in the composition equations; True gives h = o * tanh(c)
    tanh_cell: bool = False


@dataclass
class StackElement:
    h: Node
    c: Node


@dataclass
class ParserState:
    embeddings: list[Node]
    stack: list[StackElement] = field(default_factory=list)
    trees: list[Tree] = field(default_factory=list)
    p: int = 1
    history: list[Action] = field(default_factory=list)
    tracking: tuple[Node, Node] | None = None
    tracking_out: Node | None = None

    @property
    def n(self) -> int:
        return len(self.embeddings)

    def can_shift(self) -> bool:
        return self.p <= self.n

    def can_reduce(self) -> bool:
        return len(self.stack) >= 2

    def legal(self) -> tuple[bool, bool]:
        return self.can_shift(), self.can_reduce()

    def finished(self) -> bool:
        return not self.can_shift() and len(self.stack) == 1

    def check(self):
        shifts = sum(1 for a in self.history if a == S)
        reduces = len(self.history) - shifts
        assert len(self.stack) == shifts - reduces == len(self.trees)
        assert self.p - 1 == shifts
        assert self.p <= self.n + 1


class Vocab:
    """Token <-> index map. Index 0 is the unknown word."""

    UNK = "<unk>"

    def __init__(self, tokens: Sequence[str] = ()):
        self.itos: list[str] = [self.UNK]
        self.stoi: dict[str, int] = {self.UNK: 0}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def index(self, token: str) -> int:
        return self.stoi.get(token, 0)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, 0) for t in tokens]


def load_embeddings(path, dim: int | None = None) -> dict[str, np.ndarray]:
    """Read a text embedding file: token followed by its vector on each line.

    A leading ``count dim`` header line is skipped.
    """
    vectors: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue
            token, vals = parts[0], parts[1:]
            if dim is None:
                dim = len(vals)
            if len(vals) != dim:
                raise ValueError(f"{path}:{lineno}: expected {dim} values, got {len(vals)}")
            vectors[token] = np.array([float(v) for v in vals])
    return vectors


class EmbeddingTable:
    """Trainable word vectors, optionally seeded from a pretrained file."""

    def __init__(self, vocab: Vocab, dim: int, name: str = "embed"):
        self.vocab = vocab
        self.dim = dim
        self.name = name
        self.pretrained = np.zeros(len(vocab), dtype=bool)

    def init_params(self, store: ParameterStore, rng: np.random.Generator,
                    pretrained: dict[str, np.ndarray] | None = None):
        table = rng.uniform(-0.05, 0.05, size=(len(self.vocab), self.dim))
        for tok, vec in (pretrained or {}).items():
            i = self.vocab.stoi.get(tok)
            if i is not None:
                if vec.shape != (self.dim,):
                    raise ValueError(f"pretrained vector for {tok!r} has shape {vec.shape}")
                table[i] = vec
                self.pretrained[i] = True
        store.add(self.name, table)

    def lookup(self, graph: Graph, index: int) -> Node:
        return graph.lookup(self.name, index)


class Encoder:
    """Parameters and stack-machine operations for one Tree LSTM encoder."""

    def __init__(self, config: EncoderConfig, prefix: str = "enc", embed: str = "embed"):
        self.config = config
        self.prefix = prefix
        self.embed = embed

    def _p(self, name):
        return f"{self.prefix}.{name}"

    @property
    def compose_in(self) -> int:
        c = self.config
        return 2 * c.dim + (c.track_dim if c.tracking else 0)

    def param_shapes(self) -> dict[str, tuple]:
        c = self.config
        shapes = {self._p("leaf.W"): (2 * c.dim, c.emb_dim), self._p("leaf.b"): (2 * c.dim,)}
        for gate in GATES:
            shapes[self._p(f"W_{gate}")] = (c.dim, self.compose_in)
            shapes[self._p(f"b_{gate}")] = (c.dim,)
        if c.tracking:
            track_in = 2 * c.dim + c.emb_dim + c.track_dim
            shapes[self._p("track.W")] = (4 * c.track_dim, track_in)
            shapes[self._p("track.b")] = (4 * c.track_dim,)
        return shapes

    def init_params(self, store: ParameterStore, rng: np.random.Generator):
        for name, shape in self.param_shapes().items():
            if len(shape) == 1:
                store.add(name, np.zeros(shape))
            else:
                store.add(name, glorot_uniform(rng, shape))

    # --- stack machine ----------------------------------------------------

    def start(self, graph: Graph, token_ids: Sequence[int]) -> ParserState:
        if len(token_ids) < 1:
            raise ActionError("sentence must have at least one token")
        state = ParserState([graph.lookup(self.embed, i) for i in token_ids])
        if self.config.tracking:
            z = graph.zeros(self.config.track_dim)
            state.tracking = (z, z)
            state.tracking_out = z
        return state

    def leaf(self, graph: Graph, x: Node) -> StackElement:
        d = self.config.dim
        hc = graph.affine(self._p("leaf.W"), x, self._p("leaf.b"))
        return StackElement(graph.slice(hc, 0, d), graph.slice(hc, d, 2 * d))

    def compose(self, graph: Graph, left: StackElement, right: StackElement,
                tracking: Node | None = None) -> StackElement:
        parts = [left.h, right.h]
        if self.config.tracking:
            if tracking is None:
                raise ValueError("tracking is enabled: compose needs the tracking output")
            parts.append(tracking)
        elif tracking is not None:
            raise ValueError("tracking is disabled: compose takes no tracking output")
        x = graph.concat(*parts)
        gate = {g: graph.affine(self._p(f"W_{g}"), x, self._p(f"b_{g}")) for g in GATES}
        i = graph.sigmoid(gate["I"])
        f_l = graph.sigmoid(gate["FL"])
        f_r = graph.sigmoid(gate["FR"])
        o = graph.sigmoid(gate["O"])
        g = graph.tanh(gate["G"])
        c = graph.add(graph.add(graph.mul(f_l, left.c), graph.mul(f_r, right.c)), graph.mul(i, g))
        h = graph.mul(o, graph.tanh(c) if self.config.tanh_cell else c)
        return StackElement(h, c)

    def stack_features(self, graph: Graph, state: ParserState) -> tuple[Node, Node, Node]:
        """``(h_i, h_j, x_p)``: second-from-top, top, next word; zeros when absent."""
        d = self.config.dim
        h_i = state.stack[-2].h if len(state.stack) >= 2 else graph.zeros(d)
        h_j = state.stack[-1].h if state.stack else graph.zeros(d)
        if state.can_shift():
            x_p = state.embeddings[state.p - 1]
        else:
            x_p = graph.zeros(self.config.emb_dim)
        return h_i, h_j, x_p

    def tracking_step(self, graph: Graph, state: ParserState) -> Node:
        k = self.config.track_dim
        h_prev, c_prev = state.tracking
        x = graph.concat(*self.stack_features(graph, state), h_prev)
        z = graph.affine(self._p("track.W"), x, self._p("track.b"))
        i = graph.sigmoid(graph.slice(z, 0, k))
        f = graph.sigmoid(graph.slice(z, k, 2 * k))
        o = graph.sigmoid(graph.slice(z, 2 * k, 3 * k))
        g = graph.tanh(graph.slice(z, 3 * k, 4 * k))
        c = graph.add(graph.mul(f, c_prev), graph.mul(i, g))
        h = graph.mul(o, graph.tanh(c))
        state.tracking = (h, c)
        state.tracking_out = h
        return h

    def shift(self, graph: Graph, state: ParserState) -> ParserState:
        if not state.can_shift():
            raise ActionError(f"SHIFT with no words left (p={state.p}, N={state.n})")
        state.stack.append(self.leaf(graph, state.embeddings[state.p - 1]))
        state.trees.append(state.p - 1)
        state.p += 1
        state.history.append(S)
        return state

    def reduce(self, graph: Graph, state: ParserState) -> ParserState:
        if not state.can_reduce():
            raise ActionError(f"REDUCE with {len(state.stack)} element(s) on the stack")
        right = state.stack.pop()
        left = state.stack.pop()
        e = state.tracking_out if self.config.tracking else None
        state.stack.append(self.compose(graph, left, right, e))
        rt = state.trees.pop()
        state.trees.append((state.trees.pop(), rt))
        state.history.append(R)
        return state

    def step(self, graph: Graph, state: ParserState, action: Action) -> ParserState:
        if action == S:
            return self.shift(graph, state)
        if action == R:
            return self.reduce(graph, state)
        raise ActionError(f"unknown action {action!r}")

    def run(self, graph: Graph, token_ids: Sequence[int],
            decide: Callable[[Graph, ParserState], Action],
            on_step: Callable[[ParserState], None] | None = None) -> tuple[Node, Tree, ParserState]:
        """Run 2N-1 steps, asking ``decide`` for each action."""
        state = self.start(graph, token_ids)
        for _ in range(2 * state.n - 1):
            if self.config.tracking:
                self.tracking_step(graph, state)
            self.step(graph, state, decide(graph, state))
            if on_step is not None:
                on_step(state)
        if len(state.stack) != 1:
            raise ActionError(f"run ended with {len(state.stack)} stack elements")
        return state.stack[0].h, state.trees[0], state

    def encode(self, graph: Graph, token_ids: Sequence[int],
               actions: Sequence[Action]) -> tuple[Node, Tree]:
        n = len(token_ids)
        if len(actions) != 2 * n - 1:
            raise ActionError(f"{len(actions)} actions for {n} tokens; need {2 * n - 1}")
        it = iter(actions)
        h, tree, _ = self.run(graph, token_ids, lambda g, s: next(it))
        return h, tree

    def encode_tree(self, graph: Graph, token_ids: Sequence[int], tree: Tree) -> tuple[Node, Tree]:
        return self.encode(graph, token_ids, tree_to_actions(tree))
