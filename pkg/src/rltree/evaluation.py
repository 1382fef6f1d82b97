"""Task metrics and tree-structure analysis."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .trees import Tree, left_branching, num_leaves, right_branching, spans


@dataclass
class MetricReport:
    name: str
    value: float
    count: int
    extra: dict = field(default_factory=dict)
    per_example: list | None = None

    def rows(self) -> list[tuple[str, float]]:
        return [(self.name, self.value)] + sorted(self.extra.items())


def _check_lengths(a, b):
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} predictions vs {len(b)} golds")
    if len(a) == 0:
        raise ValueError("need at least one example")


def accuracy(predictions: Sequence, golds: Sequence) -> MetricReport:
    _check_lengths(predictions, golds)
    hits = [p == g for p, g in zip(predictions, golds)]
    return MetricReport("accuracy", sum(hits) / len(hits), len(hits), per_example=hits)


def mse(predictions: Sequence[float], golds: Sequence[float]) -> MetricReport:
    _check_lengths(predictions, golds)
    errs = [(float(p) - float(g)) ** 2 for p, g in zip(predictions, golds)]
    return MetricReport("mse", math.fsum(errs) / len(errs), len(errs), per_example=errs)


def perplexity(total_nll: float, token_count: int) -> MetricReport:
    if token_count < 1:
        raise ValueError("perplexity needs at least one token")
    return MetricReport("perplexity", math.exp(total_nll / token_count), token_count,
                        extra={"nll_per_token": total_nll / token_count})


def bracketing_f1(predicted: Sequence[Tree], reference: Sequence[Tree]) -> MetricReport:
    """Corpus-level (micro-averaged) unlabeled bracketing precision/recall/F1.

    Spans include the whole sentence and exclude single words.
    """
    _check_lengths(predicted, reference)
    matched = n_pred = n_ref = 0
    for k, (p, r) in enumerate(zip(predicted, reference)):
        if num_leaves(p) != num_leaves(r):
            raise ValueError(f"pair {k}: {num_leaves(p)} predicted vs {num_leaves(r)} reference leaves")
        sp, sr = spans(p), spans(r)
        matched += len(sp & sr)
        n_pred += len(sp)
        n_ref += len(sr)
    precision = matched / n_pred if n_pred else 1.0
    recall = matched / n_ref if n_ref else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return MetricReport("bracketing_f1", f1, len(predicted),
                        extra={"precision": precision, "recall": recall,
                               "matched": matched, "predicted_spans": n_pred,
                               "reference_spans": n_ref})


def _spine(tree: Tree, side: int) -> int:
    steps = 0
    while isinstance(tree, tuple):
        tree = tree[side]
        steps += 1
    return steps


def _left_larger(tree: Tree) -> tuple[int, int]:
    """(internal nodes whose left subtree has more leaves, internal nodes)."""
    if not isinstance(tree, tuple):
        return 0, 0
    a, na = _left_larger(tree[0])
    b, nb = _left_larger(tree[1])
    here = int(num_leaves(tree[0]) > num_leaves(tree[1]))
    return a + b + here, na + nb + 1


def branching_stats(trees: Sequence[Tree]) -> MetricReport:
    """How left- or right-branching a corpus of trees is.

    ``left_spine_ratio`` is the mean over trees (two or more leaves) of
    L / (L + R), where L and R are the lengths of the leftmost and rightmost
    root-to-leaf paths. ``left_larger_fraction`` is the share of internal
    nodes whose left child covers more words than the right one.
    """
    if not trees:
        raise ValueError("need at least one tree")
    sizes = [num_leaves(t) for t in trees]
    vs_left = bracketing_f1(trees, [left_branching(n) for n in sizes])
    vs_right = bracketing_f1(trees, [right_branching(n) for n in sizes])
    ratios = []
    larger = internal = 0
    for t in trees:
        if isinstance(t, tuple):
            lft, rgt = _spine(t, 0), _spine(t, 1)
            ratios.append(lft / (lft + rgt))
        a, b = _left_larger(t)
        larger += a
        internal += b
    ratio = sum(ratios) / len(ratios) if ratios else 0.5
    frac = larger / internal if internal else 0.0
    return MetricReport("left_spine_ratio", ratio, len(trees),
                        extra={"f1_vs_left": vs_left.value, "f1_vs_right": vs_right.value,
                               "left_larger_fraction": frac})


def format_table(reports: Sequence[MetricReport]) -> str:
    rows = [(r.name if k == r.name else f"{r.name}.{k}", v, r.count)
            for r in reports for k, v in r.rows()]
    width = max(len(name) for name, _, _ in rows)
    lines = [f"{'metric':<{width}}  {'value':>12}  {'count':>7}"]
    for name, v, n in rows:
        lines.append(f"{name:<{width}}  {v:>12.6f}  {n:>7d}")
    return "\n".join(lines)


def format_tsv(reports: Sequence[MetricReport]) -> str:
    lines = ["metric\tvalue\tcount"]
    for r in reports:
        for k, v in r.rows():
            name = r.name if k == r.name else f"{r.name}.{k}"
            lines.append(f"{name}\t{v!r}\t{r.count}")
    return "\n".join(lines) + "\n"
