"""Corpus readers and small synthetic corpora.

File layouts (tab-separated, one example per line, UTF-8):

* classification: ``label<TAB>sentence[<TAB>gold tree]``
* pairs: ``label-or-score<TAB>sentence1<TAB>sentence2[<TAB>tree1<TAB>tree2]``
* generation: ``sentence1<TAB>sentence2``

Sentences are pre-tokenized and whitespace separated. Gold trees are
s-expressions whose leaves must match the sentence tokens one for one.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .trees import R, S, Tree, TreeError, actions_to_tree, read_tree, to_sexpr


class DataError(ValueError):
    """Malformed corpus input; ``problems`` lists ``(line, message)`` pairs."""

    def __init__(self, path, problems):
        self.path = str(path)
        self.problems = list(problems)
        shown = "\n".join(f"  {self.path}:{ln}: {msg}" for ln, msg in self.problems[:20])
        more = len(self.problems) - 20
        tail = f"\n  ... {more} more" if more > 0 else ""
        super().__init__(f"{len(self.problems)} problem(s) in {self.path}:\n{shown}{tail}")


@dataclass
class Example:
    sentences: tuple[list[str], ...]
    target: object = None
    gold: tuple[Tree | None, ...] | None = None
    line: int = 0

    @property
    def has_gold(self) -> bool:
        return self.gold is not None and all(t is not None for t in self.gold)


TASK_KIND = {
    "sentiment": "classification", "sst": "classification",
    "entailment": "pairs", "snli": "pairs",
    "relatedness": "pairs", "sick": "pairs",
    "generation": "generation", "imdb": "generation",
}


def _gold(text: str, tokens: list[str], labeled: bool) -> Tree:
    tree, leaves = read_tree(text, labeled=labeled)
    if leaves != tokens:
        raise TreeError(f"gold tree has {len(leaves)} leaves {leaves[:6]}... "
                        f"but the sentence has {len(tokens)} tokens")
    return tree


def parse_line(line: str, kind: str, numeric_target: bool = False, labeled: bool = True) -> Example:
    fields = line.rstrip("\n").split("\t")
    if kind == "classification":
        if len(fields) not in (2, 3):
            raise ValueError(f"expected 2 or 3 tab-separated fields, got {len(fields)}")
        label, sent = fields[0].strip(), fields[1].split()
        if not label or not sent:
            raise ValueError("empty label or sentence")
        gold = (_gold(fields[2], sent, labeled),) if len(fields) == 3 else None
        return Example((sent,), label, gold)
    if kind == "pairs":
        if len(fields) not in (3, 5):
            raise ValueError(f"expected 3 or 5 tab-separated fields, got {len(fields)}")
        s1, s2 = fields[1].split(), fields[2].split()
        if not s1 or not s2:
            raise ValueError("empty sentence")
        target = fields[0].strip()
        if numeric_target:
            target = float(target)
        elif not target:
            raise ValueError("empty label")
        gold = None
        if len(fields) == 5:
            gold = (_gold(fields[3], s1, labeled), _gold(fields[4], s2, labeled))
        return Example((s1, s2), target, gold)
    if kind == "generation":
        if len(fields) != 2:
            raise ValueError(f"expected 2 tab-separated fields, got {len(fields)}")
        s1, s2 = fields[0].split(), fields[1].split()
        if not s1 or not s2:
            raise ValueError("empty sentence")
        return Example((s1,), s2)
    raise ValueError(f"unknown corpus kind {kind!r}")


def read_corpus(path, task: str, labeled_trees: bool = True) -> list[Example]:
    kind = TASK_KIND[task]
    numeric = task in ("relatedness", "sick")
    examples, problems = [], []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                ex = parse_line(line, kind, numeric, labeled_trees)
            except (ValueError, TreeError) as e:
                problems.append((lineno, str(e)))
                continue
            ex.line = lineno
            examples.append(ex)
    if problems:
        raise DataError(path, problems)
    if not examples:
        raise DataError(path, [(0, "no examples")])
    return examples


def attach_gold_trees(examples: list[Example], path, labeled: bool = True):
    """Add gold trees from a tree file, one per example, in corpus order.

    Pair examples take two consecutive lines (first then second sentence).
    """
    with open(path, encoding="utf-8") as f:
        lines = [(n, ln) for n, ln in enumerate(f, 1) if ln.strip()]
    need = sum(len(ex.sentences) for ex in examples)
    problems = []
    if len(lines) != need:
        problems.append((0, f"{len(lines)} trees for {need} sentences"))
    it = iter(lines)
    for ex in examples:
        trees = []
        for sent in ex.sentences:
            try:
                lineno, text = next(it)
            except StopIteration:
                break
            try:
                trees.append(_gold(text, sent, labeled))
            except TreeError as e:
                problems.append((lineno, f"(corpus line {ex.line}) {e}"))
                trees.append(None)
        ex.gold = tuple(trees) if len(trees) == len(ex.sentences) else None
    if problems:
        raise DataError(path, problems)


def write_corpus(path, examples: list[Example], task: str, with_gold: bool = False):
    kind = TASK_KIND[task]
    with open(path, "w", encoding="utf-8") as f:
        for ex in examples:
            if kind == "generation":
                fields = [" ".join(ex.sentences[0]), " ".join(ex.target)]
            else:
                fields = [str(ex.target)] + [" ".join(s) for s in ex.sentences]
                if with_gold and ex.gold is not None:
                    fields += [to_sexpr(t, s) for t, s in zip(ex.gold, ex.sentences)]
            f.write("\t".join(fields) + "\n")


# --- synthetic corpora ------------------------------------------------------

POSITIVE = ["good", "great", "fine", "superb", "lovely", "brilliant", "charming", "solid"]
NEGATIVE = ["bad", "awful", "dull", "boring", "weak", "terrible", "clumsy", "bland"]
NEUTRAL = ["movie", "film", "plot", "story", "cast", "script", "the", "a", "this", "is",
           "was", "and", "with", "of", "scene", "ending", "acting", "director", "it", "very"]
NEGATORS = ["not", "never", "hardly"]


def synthetic_sentiment(n: int, seed: int = 0, min_len: int = 4, max_len: int = 12) -> list[Example]:
    """Binary sentiment sentences with lexicon polarity and negation.

    The label is the sign of the summed word polarity, where a negator flips
    the next polar word. Classes are balanced.
    """
    rng = np.random.default_rng(seed)
    out: list[Example] = []
    want = [n // 2 + n % 2, n // 2]  # positives, negatives
    while len(out) < n:
        length = int(rng.integers(min_len, max_len + 1))
        words, score, flip = [], 0, False
        for _ in range(length):
            r = rng.random()
            if r < 0.25:
                w, pol = str(rng.choice(POSITIVE)), 1
            elif r < 0.5:
                w, pol = str(rng.choice(NEGATIVE)), -1
            elif r < 0.6:
                words.append(str(rng.choice(NEGATORS)))
                flip = True
                continue
            else:
                w, pol = str(rng.choice(NEUTRAL)), 0
            if pol and flip:
                pol, flip = -pol, False
            score += pol
            words.append(w)
        if score == 0 or not words:
            continue
        label = 1 if score > 0 else 0
        if want[1 - label] == 0:
            continue
        want[1 - label] -= 1
        out.append(Example((words,), str(label)))
    return out


# A tiny phrase-structure language: the gold tree of every sentence is fixed
# by its words, so a policy that sees the words can learn it exactly.
DETS = ["the", "a", "every", "some"]
ADJS = ["big", "small", "red", "old", "happy", "sad"]
NOUNS = ["dog", "cat", "bird", "man", "woman", "child", "tree", "house"]
VERBS = ["sees", "likes", "chases", "finds", "hates", "helps"]


def _np(rng) -> tuple[list[str], int]:
    words = [str(rng.choice(DETS))]
    n_adj = int(rng.integers(0, 3))
    words += [str(rng.choice(ADJS)) for _ in range(n_adj)]
    words.append(str(rng.choice(NOUNS)))
    return words, n_adj


def _np_tree(offset: int, n_adj: int) -> Tree:
    # (det (adj (adj noun)))
    k = n_adj + 2
    idx = list(range(offset, offset + k))
    t = idx[-1]
    for i in reversed(idx[:-1]):
        t = (i, t)
    return t


def synthetic_treebank(n: int, seed: int = 0) -> list[Example]:
    """Sentences ``NP V NP`` with gold trees ``(NP (V NP))``.

    The label is 1 when the subject noun phrase is longer than the object
    one, so it can be read off the gold bracketing: the length of the root's
    left constituent against the length of the object constituent.
    """
    rng = np.random.default_rng(seed)
    out: list[Example] = []
    while len(out) < n:
        subj, a1 = _np(rng)
        verb = str(rng.choice(VERBS))
        obj, a2 = _np(rng)
        if a1 == a2:
            continue
        words = subj + [verb] + obj
        s_tree = _np_tree(0, a1)
        o_tree = _np_tree(len(subj) + 1, a2)
        tree = (s_tree, (len(subj), o_tree))
        label = "1" if a1 > a2 else "0"
        out.append(Example((words,), label, (tree,)))
    return out


def random_tree(n: int, rng: np.random.Generator) -> Tree:
    """A random binary tree over ``n`` leaves (random valid SHIFT/REDUCE walk)."""
    actions, depth, shifted = [], 0, 0
    while shifted < n or depth > 1:
        can_s, can_r = shifted < n, depth >= 2
        if can_s and (not can_r or rng.random() < 0.5):
            actions.append(S)
            shifted += 1
            depth += 1
        else:
            actions.append(R)
            depth -= 1
    return actions_to_tree(actions, n)

