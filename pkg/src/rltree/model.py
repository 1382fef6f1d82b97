"""A full model: embeddings, encoder(s), structure policy and task head,
all held in one parameter store."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .autodiff import Graph, Node, ParameterStore
from .data import Example
from .encoder import EmbeddingTable, Encoder, EncoderConfig, Vocab
from .policy import Policy, Trajectory, rollout
from .tasks import bidirectional_encode, make_task
from .trees import Action, Tree, fixed_order_actions, tree_to_actions

REGIMES = ("fixed-left", "fixed-right", "bidirectional", "supervised", "semi-supervised", "latent")
POLICY_REGIMES = ("semi-supervised", "latent")


@dataclass
class ModelConfig:
    task: str = "sentiment"
    regime: str = "latent"
    dim: int = 100
    emb_dim: int = 100
    tracking: bool = False
    track_dim: int = 50
    tanh_cell: bool = False
    policy_hidden: int = 64
    head_hidden: int = 200

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}; choose from {REGIMES}")

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(self.dim, self.emb_dim, self.tracking, self.track_dim,
                             self.tanh_cell)


@dataclass
class Instance:
    """An example mapped to indices."""
    ids: tuple[list[int], ...]
    target: object
    gold: tuple[Tree, ...] | None
    example: Example


class Model:
    def __init__(self, config: ModelConfig, vocab: Vocab, labels: Sequence[str] = ()):
        self.config = config
        self.vocab = vocab
        self.labels = list(labels)
        self.task = make_task(config.task)
        self.store = ParameterStore()
        self.embeddings = EmbeddingTable(vocab, config.emb_dim)
        enc_cfg = config.encoder_config()
        if config.regime == "bidirectional":
            self.encoders = {"l2r": Encoder(enc_cfg, "l2r"), "r2l": Encoder(enc_cfg, "r2l")}
        else:
            self.encoders = {"enc": Encoder(enc_cfg, "enc")}
        self.policy = None
        if config.regime in POLICY_REGIMES:
            self.policy = Policy(config.dim, config.emb_dim, config.policy_hidden)
        if self.task.metric == "perplexity":
            n_out = len(vocab)
        elif self.task.metric == "accuracy":
            n_out = max(len(self.labels), 3 if self.task.name == "entailment" else 2)
        else:
            n_out = 1
        self.head = self.task.build_head(config.dim, config.head_hidden, n_out)

    @property
    def encoder(self) -> Encoder:
        return next(iter(self.encoders.values()))

    def init_params(self, rng: np.random.Generator, pretrained: dict | None = None):
        self.embeddings.init_params(self.store, rng, pretrained)
        for enc in self.encoders.values():
            enc.init_params(self.store, rng)
        if self.policy is not None:
            self.policy.init_params(self.store, rng)
        self.head.init_params(self.store, rng)
        return self

    def expected_shapes(self) -> dict[str, tuple]:
        shapes = {"embed": (len(self.vocab), self.config.emb_dim)}
        for enc in self.encoders.values():
            shapes.update(enc.param_shapes())
        if self.policy is not None:
            shapes.update(self.policy.param_shapes())
        shapes.update(self.head.param_shapes())
        return shapes

    def load_store(self, store: ParameterStore):
        """Adopt checkpoint parameters after checking names and shapes."""
        want = self.expected_shapes()
        problems = []
        for name, shape in want.items():
            if name not in store:
                problems.append(f"missing parameter {name} {shape}")
            elif store[name].shape != tuple(shape):
                problems.append(f"{name}: checkpoint {store[name].shape} vs config {tuple(shape)}")
        for name in store:
            if name not in want:
                problems.append(f"unexpected parameter {name} {store[name].shape}")
        if problems:
            raise ValueError("checkpoint does not match model config:\n  " + "\n  ".join(problems))
        self.store = store

    def meta(self) -> dict:
        return {"model": asdict(self.config), "vocab": self.vocab.itos, "labels": self.labels}

    @classmethod
    def from_meta(cls, meta: dict) -> "Model":
        vocab = Vocab(meta["vocab"][1:])
        return cls(ModelConfig(**meta["model"]), vocab, meta["labels"])

    # --- data -------------------------------------------------------------

    def instance(self, ex: Example) -> Instance:
        ids = tuple(self.vocab.encode(s) for s in ex.sentences)
        if self.task.metric == "perplexity":
            target = self.vocab.encode(ex.target)
        elif self.task.metric == "accuracy":
            if ex.target not in self.labels:
                raise ValueError(f"line {ex.line}: unknown label {ex.target!r}")
            target = self.labels.index(ex.target)
        else:
            target = float(ex.target)
        gold = ex.gold if ex.has_gold else None
        return Instance(ids, target, gold, ex)

    # --- encoding -----------------------------------------------------------

    def encode(self, graph: Graph, ids: Sequence[int], mode: str,
               gold: Tree | None = None, rng: np.random.Generator | None = None
               ) -> tuple[Node, Tree, Trajectory | None]:
        """Sentence vector under one structure source.

        ``mode`` is one of ``left``, ``right``, ``bidirectional``, ``gold``,
        ``sample``, ``greedy`` or ``forced-gold`` (gold actions, scored by the
        policy).
        """
        n = len(ids)
        if mode == "left":
            h, t = self.encoder.encode(graph, ids, fixed_order_actions("left-to-right", n))
            return h, t, None
        if mode == "right":
            h, t = self.encoder.encode(graph, ids, fixed_order_actions("right-to-left", n))
            return h, t, None
        if mode == "bidirectional":
            h = bidirectional_encode(graph, ids, self.encoders["l2r"], self.encoders["r2l"])
            return h, None, None
        if mode in ("gold", "forced-gold"):
            if gold is None:
                raise ValueError("this regime needs gold trees")
            actions: tuple[Action, ...] = tree_to_actions(gold)
            if mode == "gold":
                h, t = self.encoder.encode(graph, ids, actions)
                return h, t, None
            return rollout(graph, ids, self.encoder, self.policy, "forced", actions=actions)
        if mode in ("sample", "greedy"):
            if self.policy is None:
                raise ValueError(f"regime {self.config.regime!r} has no structure policy")
            return rollout(graph, ids, self.encoder, self.policy, mode, rng)
        raise ValueError(f"unknown encoding mode {mode!r}")
