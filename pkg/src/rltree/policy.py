"""SHIFT/REDUCE policy: a two-layer feedforward net over the parser state.

Illegal actions get probability exactly zero. When only one action is legal
the step is forced, its log-probability is the constant 0 and the policy
network is not evaluated.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Graph, Node, ParameterStore, glorot_uniform
from .encoder import Encoder, ParserState
from .trees import Action, R, S, Tree


@dataclass
class ActionDistribution:
    probs: np.ndarray
    legal: tuple[bool, bool]
    log_probs: Node | None = None  # masked log-probabilities, None when forced

    @property
    def forced(self) -> bool:
        return self.log_probs is None


@dataclass
class Step:
    legal: tuple[bool, bool]
    action: Action
    log_prob: float
    log_prob_node: Node | None


@dataclass
class Trajectory:
    steps: list[Step] = field(default_factory=list)
    reward: float | None = None

    @property
    def actions(self) -> tuple[Action, ...]:
        return tuple(s.action for s in self.steps)

    @property
    def log_prob(self) -> float:
        return sum(s.log_prob for s in self.steps)

    def log_prob_nodes(self) -> list[Node]:
        return [s.log_prob_node for s in self.steps if s.log_prob_node is not None]

    def __len__(self):
        return len(self.steps)


class Policy:
    def __init__(self, dim: int, emb_dim: int, hidden: int = 64, prefix: str = "policy"):
        self.dim = dim
        self.emb_dim = emb_dim
        self.hidden = hidden
        self.prefix = prefix

    def param_shapes(self) -> dict[str, tuple]:
        p = self.prefix
        return {
            f"{p}.W1": (self.hidden, 2 * self.dim + self.emb_dim),
            f"{p}.b1": (self.hidden,),
            f"{p}.W2": (2, self.hidden),
            f"{p}.b2": (2,),
        }

    def init_params(self, store: ParameterStore, rng: np.random.Generator):
        for name, shape in self.param_shapes().items():
            if len(shape) == 1:
                store.add(name, np.zeros(shape))
            else:
                store.add(name, glorot_uniform(rng, shape))

    def logits(self, graph: Graph, features: Node) -> Node:
        p = self.prefix
        s = graph.relu(graph.affine(f"{p}.W1", features, f"{p}.b1"))
        return graph.affine(f"{p}.W2", s, f"{p}.b2")

    def action_distribution(self, graph: Graph, state: ParserState,
                            encoder: Encoder) -> ActionDistribution:
        legal = state.legal()
        if not any(legal):
            raise ValueError("no legal action in this parser state")
        if not all(legal):
            probs = np.array([1.0, 0.0]) if legal[0] else np.array([0.0, 1.0])
            return ActionDistribution(probs, legal)
        feats = graph.concat(*encoder.stack_features(graph, state))
        logp = graph.log_softmax(self.logits(graph, feats))
        return ActionDistribution(np.exp(logp.value), legal, logp)


def sample_action(dist: ActionDistribution, rng: np.random.Generator) -> tuple[Action, float]:
    if dist.forced:
        return (S if dist.legal[0] else R), 0.0
    a = S if rng.random() < dist.probs[0] else R
    return a, float(dist.log_probs.value[a])


def greedy_action(dist: ActionDistribution) -> Action:
    return S if dist.probs[0] >= dist.probs[1] else R


def rollout(graph: Graph, token_ids: Sequence[int], encoder: Encoder, policy: Policy,
            mode: str = "sample", rng: np.random.Generator | None = None,
            actions: Sequence[Action] | None = None) -> tuple[Node, Tree, Trajectory]:
    """Encode a sentence while the policy picks the actions.

    ``mode`` is ``"sample"``, ``"greedy"``, or ``"forced"``; the last follows
    ``actions`` (e.g. gold ones) and records their log-probabilities under the
    policy. Returns the sentence vector, the realized tree and the trajectory.
    """
    if mode == "sample" and rng is None:
        raise ValueError("sampling needs an rng")
    if mode == "forced":
        if actions is None or len(actions) != 2 * len(token_ids) - 1:
            raise ValueError("forced mode needs a full action sequence")
        forced = iter(actions)
    traj = Trajectory()

    def decide(g: Graph, state: ParserState) -> Action:
        dist = policy.action_distribution(g, state, encoder)
        if mode == "sample":
            a, _ = sample_action(dist, rng)
        elif mode == "greedy":
            a = greedy_action(dist)
        elif mode == "forced":
            a = Action(next(forced))
            if not dist.legal[a]:
                raise ValueError(f"forced action {a!s} is illegal at step {len(traj)}")
        else:
            raise ValueError(f"unknown decoding mode {mode!r}")
        if dist.forced:
            traj.steps.append(Step(dist.legal, a, 0.0, None))
        else:
            node = g.pick(dist.log_probs, int(a))
            traj.steps.append(Step(dist.legal, a, float(node.value), node))
        return a

    h, tree, _ = encoder.run(graph, token_ids, decide)
    return h, tree, traj
