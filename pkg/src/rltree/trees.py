"""Binary trees, SHIFT/REDUCE action sequences, s-expressions and spans.

A binary tree over ``n`` tokens is written with nested tuples: a leaf is the
token index (an ``int``) and an internal node is a ``(left, right)`` pair, so
the left-branching tree over four words is ``(((0, 1), 2), 3)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

Tree = Union[int, tuple]


class Action(enum.IntEnum):
    SHIFT = 0
    REDUCE = 1

    def __str__(self):
        return "S" if self is Action.SHIFT else "R"


S, R = Action.SHIFT, Action.REDUCE


class TreeError(ValueError):
    pass


class ActionError(ValueError):
    pass


def parse_actions(text: str) -> tuple[Action, ...]:
    """``"SSR"`` -> ``(SHIFT, SHIFT, REDUCE)``."""
    try:
        return tuple({"S": S, "R": R}[ch] for ch in text.strip().upper())
    except KeyError as e:
        raise ActionError(f"bad action symbol {e.args[0]!r}") from None


def format_actions(actions: Iterable[Action]) -> str:
    return "".join(str(Action(a)) for a in actions)


def validate_actions(actions: Sequence[Action], n: int):
    """Raise :class:`ActionError` unless ``actions`` builds one tree over ``n`` tokens."""
    if n < 1:
        raise ActionError("sentence must have at least one token")
    depth = shifts = 0
    for t, a in enumerate(actions):
        if a == S:
            if shifts >= n:
                raise ActionError(f"step {t}: SHIFT past the last of {n} tokens")
            shifts += 1
            depth += 1
        elif a == R:
            if depth < 2:
                raise ActionError(f"step {t}: REDUCE with {depth} element(s) on the stack")
            depth -= 1
        else:
            raise ActionError(f"step {t}: unknown action {a!r}")
    if shifts != n or depth != 1:
        raise ActionError(f"sequence leaves {depth} stack element(s) after {shifts}/{n} shifts")


def is_valid_actions(actions: Sequence[Action], n: int) -> bool:
    try:
        validate_actions(actions, n)
    except ActionError:
        return False
    return True


def actions_to_tree(actions: Sequence[Action], n: int) -> Tree:
    stack: list[Tree] = []
    p = 0
    for t, a in enumerate(actions):
        if a == S:
            if p >= n:
                raise ActionError(f"step {t}: SHIFT past the last of {n} tokens")
            stack.append(p)
            p += 1
        elif a == R:
            if len(stack) < 2:
                raise ActionError(f"step {t}: REDUCE with {len(stack)} element(s) on the stack")
            right = stack.pop()
            left = stack.pop()
            stack.append((left, right))
        else:
            raise ActionError(f"step {t}: unknown action {a!r}")
    if len(stack) != 1 or p != n:
        raise ActionError(f"sequence leaves {len(stack)} stack element(s) after {p}/{n} shifts")
    return stack[0]


def tree_to_actions(tree: Tree) -> tuple[Action, ...]:
    out: list[Action] = []

    def walk(t):
        if isinstance(t, tuple):
            walk(t[0])
            walk(t[1])
            out.append(R)
        else:
            out.append(S)

    walk(tree)
    return tuple(out)


def leaves(tree: Tree) -> list[int]:
    if isinstance(tree, tuple):
        return leaves(tree[0]) + leaves(tree[1])
    return [tree]


def num_leaves(tree: Tree) -> int:
    if isinstance(tree, tuple):
        return num_leaves(tree[0]) + num_leaves(tree[1])
    return 1


def validate_tree(tree: Tree, n: int | None = None):
    got = leaves(tree)
    want = list(range(len(got) if n is None else n))
    if got != want:
        raise TreeError(f"leaves {got} are not the token indices 0..{len(want) - 1} in order")


def spans(tree: Tree) -> set[tuple[int, int]]:
    """One ``(start, end)`` per internal node, end exclusive."""
    out: set[tuple[int, int]] = set()

    def walk(t, start):
        if not isinstance(t, tuple):
            return start + 1
        mid = walk(t[0], start)
        end = walk(t[1], mid)
        out.add((start, end))
        return end

    walk(tree, 0)
    return out


def fixed_order_actions(order: str, n: int) -> tuple[Action, ...]:
    """Actions for the fully left-branching (``"left-to-right"``) or
    fully right-branching (``"right-to-left"``) tree over ``n`` tokens."""
    if n < 1:
        raise ActionError("sentence must have at least one token")
    if order in ("left-to-right", "left", "l2r"):
        return (S,) + (S, R) * (n - 1)
    if order in ("right-to-left", "right", "r2l"):
        return (S,) * n + (R,) * (n - 1)
    raise ValueError(f"unknown composition order {order!r}")


def left_branching(n: int) -> Tree:
    return actions_to_tree(fixed_order_actions("left-to-right", n), n)


def right_branching(n: int) -> Tree:
    return actions_to_tree(fixed_order_actions("right-to-left", n), n)


# --- s-expressions -------------------------------------------------------

@dataclass
class Constituent:
    """An n-ary tree node; children are constituents or token strings."""
    label: str | None
    children: list = field(default_factory=list)

    def tokens(self) -> list[str]:
        out = []
        for c in self.children:
            out.extend(c.tokens() if isinstance(c, Constituent) else [c])
        return out


def _tokenize(text: str) -> list[str]:
    return text.replace("(", " ( ").replace(")", " ) ").split()


def parse_sexpr(text: str, labeled: bool = True) -> Constituent:
    """Read one bracketed tree.

    With ``labeled=True`` (treebank style) a token that opens a bracket is the
    constituent label and is dropped, except in a bracket holding a single
    token, which is that token. With ``labeled=False`` every token is a leaf.
    """
    toks = _tokenize(text)
    if not toks:
        raise TreeError("empty input")
    pos = 0

    def read():
        nonlocal pos
        if toks[pos] != "(":
            raise TreeError(f"expected '(' at token {pos}, got {toks[pos]!r}")
        pos += 1
        items = []
        while pos < len(toks) and toks[pos] != ")":
            if toks[pos] == "(":
                items.append(read())
            else:
                items.append(toks[pos])
                pos += 1
        if pos >= len(toks):
            raise TreeError("unbalanced parentheses: missing ')'")
        pos += 1
        label = None
        if labeled and len(items) > 1 and isinstance(items[0], str):
            label, items = items[0], items[1:]
        if not items:
            raise TreeError("empty constituent")
        return Constituent(label, items)

    root = read()
    if pos != len(toks):
        raise TreeError("unbalanced parentheses: trailing input after tree")
    return root


def binarize(node: Constituent | str, direction: str = "left") -> Tree:
    """Binary tree over leaf indices of an n-ary tree.

    Children fold as ``((c1 c2) c3) ...`` for ``direction="left"`` and
    ``c1 (c2 (c3 ...))`` for ``"right"``. Unary chains disappear.
    """
    counter = iter(range(1 << 62))

    def walk(t):
        if not isinstance(t, Constituent):
            return next(counter)
        kids = [walk(c) for c in t.children]
        if direction == "left":
            out = kids[0]
            for k in kids[1:]:
                out = (out, k)
        elif direction == "right":
            out = kids[-1]
            for k in reversed(kids[:-1]):
                out = (k, out)
        else:
            raise ValueError(f"unknown binarization direction {direction!r}")
        return out

    return walk(node)


def read_tree(text: str, labeled: bool = True, direction: str = "left") -> tuple[Tree, list[str]]:
    c = parse_sexpr(text, labeled=labeled)
    return binarize(c, direction), c.tokens()


def to_sexpr(tree: Tree, tokens: Sequence[str]) -> str:
    """Unlabeled bracketing over ``tokens``; a one-word tree prints as ``(w)``."""
    if not isinstance(tree, tuple):
        return f"({tokens[tree]})"

    def fmt(t):
        if isinstance(t, tuple):
            return f"({fmt(t[0])} {fmt(t[1])})"
        return tokens[t]

    return fmt(tree)
