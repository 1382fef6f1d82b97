"""Training: task loss, REINFORCE structure gradients, the semi-supervised
schedule, plain SGD with L2 decay, and dev-based model selection."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autodiff import Graph, Node, NonFiniteError, ParameterStore
from .evaluation import MetricReport, accuracy, mse, perplexity
from .model import Instance, Model
from .policy import Trajectory
from .tasks import Outcome, make_task

log = logging.getLogger(__name__)

L2_GRID = (1e-4, 1e-5, 1e-6, 0.0)


class NumericAbort(RuntimeError):
    """Too many consecutive updates skipped for non-finite values."""


@dataclass
class TrainConfig:
    regime: str = "latent"
    lr: float = 0.01
    l2: float = 0.0
    sup_epochs: int = 1
    epochs: int = 10
    seed: int = 0
    baseline: bool = False
    baseline_decay: float = 0.9
    task: str = "sentiment"
    decode: str = "greedy"
    lr_decay_patience: int = 2
    patience: int | None = None
    max_skips: int = 100
    restarts: int = 1
    log_wall_time: bool = False

    def __post_init__(self):
        if self.sup_epochs < 0:
            raise ValueError("sup_epochs must be >= 0")
        if not 0.0 < self.baseline_decay < 1.0:
            raise ValueError("baseline_decay must lie in (0, 1)")


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent init / shuffle / policy generators derived from one seed."""
    init, shuffle, policy = np.random.SeedSequence(seed).spawn(3)
    return {"init": np.random.default_rng(init),
            "shuffle": np.random.default_rng(shuffle),
            "policy": np.random.default_rng(policy)}


@dataclass
class BaselineState:
    """Running mean of rewards, subtracted from the reward when enabled."""
    enabled: bool = False
    decay: float = 0.9
    mean: float = 0.0

    def center(self, reward: float) -> float:
        return reward - self.mean if self.enabled else reward

    def update(self, reward: float):
        if self.enabled:
            self.mean = self.decay * self.mean + (1.0 - self.decay) * reward


@dataclass
class Episode:
    loss: Node
    task_loss: Node
    outcome: Outcome
    trajectories: list[Trajectory] = field(default_factory=list)
    trees: list = field(default_factory=list)
    structure_loss: Node | None = None
    reinforce: Node | None = None

    @property
    def objective(self) -> float:
        """Value of the minimized objective, excluding the REINFORCE surrogate."""
        extra = float(self.structure_loss.value) if self.structure_loss is not None else 0.0
        return float(self.task_loss.value) + extra


def reinforce_update(graph: Graph, trajectories: Sequence[Trajectory], reward: float,
                     baseline: BaselineState | None = None) -> Node | None:
    """Surrogate whose gradient is -(r - b) * grad sum_t log pi(a_t | s_t).

    Minimizing it performs the REINFORCE ascent step. The baseline is
    updated with ``reward`` afterwards. Returns None when nothing depends on
    the policy parameters (all steps forced) or the centered reward is 0.
    """
    baseline = baseline or BaselineState()
    centered = baseline.center(reward)
    baseline.update(reward)
    for t in trajectories:
        t.reward = reward
    nodes = [n for t in trajectories for n in t.log_prob_nodes()]
    if not nodes or centered == 0.0:
        return None
    return graph.scale(graph.add_all(nodes), -centered)


def structure_mode(regime: str, epoch: int, sup_epochs: int, training: bool,
                   decode: str = "greedy") -> str:
    if regime == "fixed-left":
        return "left"
    if regime == "fixed-right":
        return "right"
    if regime == "bidirectional":
        return "bidirectional"
    if regime == "supervised":
        return "gold"
    if regime == "semi-supervised" and training and epoch <= sup_epochs:
        return "forced-gold"
    if regime in ("semi-supervised", "latent"):
        return "sample" if training else decode
    raise ValueError(f"unknown regime {regime!r}")


def episode_loss(graph: Graph, model: Model, inst: Instance, config: TrainConfig,
                 rng: np.random.Generator, epoch: int = 1,
                 baseline: BaselineState | None = None, reinforce: bool = True) -> Episode:
    """Build the per-example objective to minimize.

    In sampled regimes the REINFORCE surrogate is added unless ``reinforce``
    is False (the policy is then treated as frozen). In the supervised phase
    of the semi-supervised regime the encoder follows the gold actions and
    the policy's negative log-likelihood of those actions is added.
    """
    mode = structure_mode(config.regime, epoch, config.sup_epochs, training=True)
    vectors, trajs, trees = [], [], []
    for k, ids in enumerate(inst.ids):
        gold = inst.gold[k] if inst.gold is not None else None
        if mode in ("gold", "forced-gold") and gold is None:
            raise ValueError(f"line {inst.example.line}: regime {config.regime!r} "
                             f"needs a gold tree here (epoch {epoch})")
        h, tree, traj = model.encode(graph, ids, mode, gold, rng)
        vectors.append(h)
        trees.append(tree)
        if traj is not None:
            trajs.append(traj)
    out = model.task.outcome(graph, vectors, inst.target)
    ep = Episode(out.loss, out.loss, out, trajs, trees)
    if mode == "forced-gold":
        nodes = [n for t in trajs for n in t.log_prob_nodes()]
        if nodes:
            ep.structure_loss = graph.scale(graph.add_all(nodes), -1.0)
            ep.loss = graph.add(ep.loss, ep.structure_loss)
    elif mode == "sample" and reinforce:
        ep.reinforce = reinforce_update(graph, trajs, out.reward, baseline)
        if ep.reinforce is not None:
            ep.loss = graph.add(ep.loss, ep.reinforce)
    return ep


def semi_supervised_objective(graph: Graph, model: Model, inst: Instance, config: TrainConfig,
                              epoch: int, rng: np.random.Generator,
                              baseline: BaselineState | None = None) -> Episode:
    if config.regime != "semi-supervised":
        raise ValueError("semi_supervised_objective needs the semi-supervised regime")
    return episode_loss(graph, model, inst, config, rng, epoch, baseline)


def sgd_step(store: ParameterStore, lr: float, l2: float = 0.0) -> bool:
    """theta <- theta - lr * (grad + l2 * theta), then zero the gradients.

    Returns False (and leaves parameters alone) if any gradient is not finite.
    """
    ok = all(np.all(np.isfinite(g)) for g in store.grads.values())
    if ok:
        for name, value in store.values.items():
            step = store.grads[name]
            if l2:
                step = step + l2 * value
            value -= lr * step
    store.zero_grad()
    return ok


@dataclass
class EpochLog:
    epoch: int
    objective: float
    dev_metric: float
    wall_time: float
    skips: int
    lr: float

    def line(self, wall: bool = False) -> str:
        w = f"{self.wall_time:.3f}" if wall else "NA"
        return f"{self.epoch}\t{self.objective:.10g}\t{self.dev_metric:.10g}\t{w}\t{self.skips}"


@dataclass
class TrainResult:
    best_epoch: int
    best_dev: float
    best_params: dict[str, np.ndarray]
    history: list[EpochLog]
    skips: int


@dataclass
class Evaluation:
    report: MetricReport
    predictions: list
    trees: list


def evaluate(model: Model, data: Sequence[Instance], decode: str = "greedy",
             rng: np.random.Generator | None = None) -> Evaluation:
    """Task metric over ``data`` with the model's test-time structures."""
    mode = structure_mode(model.config.regime, 0, 0, training=False, decode=decode)
    if mode == "sample" and rng is None:
        rng = np.random.default_rng(0)
    preds, golds, trees = [], [], []
    total_nll, total_tokens = 0.0, 0
    for inst in data:
        g = Graph(model.store)
        vectors = []
        for k, ids in enumerate(inst.ids):
            gold = inst.gold[k] if inst.gold is not None else None
            h, tree, _ = model.encode(g, ids, mode, gold, rng)
            vectors.append(h)
            trees.append(tree)
        out = model.task.outcome(g, vectors, inst.target)
        preds.append(out.prediction)
        golds.append(inst.target)
        total_nll += out.nll
        total_tokens += out.tokens
    metric = model.task.metric
    if metric == "accuracy":
        report = accuracy(preds, golds)
    elif metric == "mse":
        report = mse(preds, golds)
    else:
        report = perplexity(total_nll, total_tokens)
    return Evaluation(report, preds, trees)


def _better(a: float, b: float, higher: bool) -> bool:
    return a > b if higher else a < b


def train(model: Model, train_set: Sequence[Instance], dev_set: Sequence[Instance],
          config: TrainConfig, first_epoch: int = 1,
          on_epoch: Callable[[EpochLog], None] | None = None,
          restore_best: bool = True) -> TrainResult:
    """SGD with batch size 1; keeps the parameters with the best dev metric."""
    if not train_set or not dev_set:
        raise ValueError("training and dev sets must be non-empty")
    if make_task(config.task).name != model.task.name:
        raise ValueError(f"train config task {config.task!r} != model task {model.config.task!r}")
    if config.regime != model.config.regime:
        raise ValueError(f"train config regime {config.regime!r} != model regime {model.config.regime!r}")
    streams = rng_streams(config.seed)
    shuffle_rng, policy_rng = streams["shuffle"], streams["policy"]
    baseline = BaselineState(config.baseline, config.baseline_decay)
    higher = model.task.higher_is_better
    lr = config.lr
    history: list[EpochLog] = []
    best_dev, best_epoch, best_params = None, 0, model.store.snapshot()
    since_best = 0
    skips = consecutive = 0
    for epoch in range(first_epoch, first_epoch + config.epochs):
        start = time.perf_counter()
        order = shuffle_rng.permutation(len(train_set))
        total = 0.0
        counted = 0
        for i in order:
            inst = train_set[i]
            g = Graph(model.store)
            try:
                ep = episode_loss(g, model, inst, config, policy_rng, epoch, baseline)
                g.backward(ep.loss)
                ok = sgd_step(model.store, lr, config.l2)
            except NonFiniteError:
                model.store.zero_grad()
                ok = False
            if ok:
                consecutive = 0
                total += ep.objective
                counted += 1
            else:
                skips += 1
                consecutive += 1
                log.warning("epoch %d: skipped non-finite update (%d in a row)", epoch, consecutive)
                if consecutive >= config.max_skips:
                    raise NumericAbort(f"{consecutive} consecutive non-finite updates")
        dev = evaluate(model, dev_set, config.decode).report.value
        entry = EpochLog(epoch, total / max(counted, 1), dev, time.perf_counter() - start, skips, lr)
        history.append(entry)
        log.info("epoch %d objective %.6f dev %s %.6f", epoch, entry.objective,
                 model.task.metric, dev)
        if on_epoch is not None:
            on_epoch(entry)
        if best_dev is None or _better(dev, best_dev, higher):
            best_dev, best_epoch, best_params = dev, epoch, model.store.snapshot()
            since_best = 0
        else:
            since_best += 1
            if config.lr_decay_patience and since_best % config.lr_decay_patience == 0:
                lr /= 2.0
            if config.patience is not None and since_best >= config.patience:
                break
    if restore_best:
        model.store.restore(best_params)
    return TrainResult(best_epoch, best_dev, best_params, history, skips)
