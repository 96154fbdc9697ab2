"""Hard-coded rewrite rules and free-scalar skeletons.

Two rule sets live here. ``simplify`` only applies rewrites that keep the
value of the expression wherever the original evaluates, so it is safe in
both scalar modes. ``to_skeleton`` turns every numeric constant into a free
scalar and then lets neighbouring free scalars absorb each other, which
changes the value for fixed scalars but not the family of functions the
expression can represent.
"""
from __future__ import annotations

import math

from .expr import (
    INF,
    INT_SCALARS,
    ONE,
    UNARY,
    VARIABLES,
    ZERO,
    Expression,
    Node,
    ScalarMode,
    renumber_free,
    tokens_to_tree,
    tree_to_tokens,
)

_MAX_PASSES = 50


class Degenerate(Exception):
    """The expression reduces to a constant or contains infinity."""


def _num(node: Node):
    """Numeric value of a constant leaf, else None."""
    t = node.token
    if t == "1" or t == ONE:
        return 1.0
    if t == "2":
        return 2.0
    if t == ZERO:
        return 0.0
    return None


def _is_one(node):
    return node.token in ("1", ONE)


def _is_zero(node):
    return node.token == ZERO


def _const_node(v: float, mode: ScalarMode):
    if v == 0.0:
        return Node(ZERO)
    if v == 1.0:
        return Node("1" if mode == ScalarMode.INTEGER else ONE)
    if v == 2.0 and mode == ScalarMode.INTEGER:
        return Node("2")
    return None


def _fold(tok, vals):
    try:
        if tok == "sin":
            return math.sin(vals[0])
        if tok == "cos":
            return math.cos(vals[0])
        if tok == "exp":
            return math.exp(vals[0])
        if tok == "ln":
            return math.log(vals[0])
        a, b = vals
        if tok == "+":
            return a + b
        if tok == "-":
            return a - b
        if tok == "*":
            return a * b
        if tok == "/":
            return a / b
        return math.pow(a, b)
    except (ValueError, ZeroDivisionError, OverflowError):
        return math.inf


def _rewrite(node: Node, mode: ScalarMode) -> Node:
    """One rule application at the root of ``node``, or ``node`` itself."""
    tok, kids = node.token, node.children
    if not kids:
        return node
    if any(k.token == INF for k in kids):
        return Node(INF)
    vals = [_num(k) for k in kids]
    if all(v is not None for v in vals):
        v = _fold(tok, vals)
        if not math.isfinite(v):
            return Node(INF)
        folded = _const_node(v, mode)
        if folded is not None:
            return folded
        return node
    one = Node("1" if mode == ScalarMode.INTEGER else ONE)
    if len(kids) == 1:
        (u,) = kids
        if tok == "exp" and u.token == "ln":
            return u.children[0]
        if tok == "ln" and u.token == "exp":
            return u.children[0]
        return node
    l, r = kids
    if tok == "+":
        if _is_zero(l):
            return r
        if _is_zero(r):
            return l
    elif tok == "-":
        if l == r:
            return Node(ZERO)
        if _is_zero(r):
            return l
    elif tok == "*":
        if _is_zero(l) or _is_zero(r):
            return Node(ZERO)
        if _is_one(l):
            return r
        if _is_one(r):
            return l
    elif tok == "/":
        if _is_zero(r):
            return Node(INF)
        if l == r:
            return one
        if _is_zero(l):
            return Node(ZERO)
        if _is_one(r):
            return l
    elif tok == "^":
        if _is_one(r):
            return l
        if _is_zero(r):
            return one
        if _is_one(l):
            return one
    return node


def _bottom_up(node: Node, rule, mode) -> Node:
    if node.children:
        kids = tuple(_bottom_up(c, rule, mode) for c in node.children)
        if kids != node.children:
            node = Node(node.token, kids)
    while True:
        new = rule(node, mode)
        if new is node or new == node:
            return node
        node = _bottom_up(new, rule, mode) if new.children else new


def _fixpoint(tree: Node, rule, mode) -> Node:
    for _ in range(_MAX_PASSES):
        new = _bottom_up(tree, rule, mode)
        if new == tree:
            break
        tree = new
    return tree


def _contains(node: Node, tokens) -> bool:
    if node.token in tokens:
        return True
    return any(_contains(c, tokens) for c in node.children)


def simplify_tree(tree: Node, mode: ScalarMode) -> Node:
    """Apply the value-preserving rules; free-scalar indices are left alone."""
    return _fixpoint(tree, _rewrite, mode)


def simplify(expr: Expression) -> Expression:
    """Rewrite to a fixpoint of the value-preserving rules.

    Raises :class:`Degenerate` when the result contains infinity or no
    longer depends on any variable. If the rules leave a zero (or, with free
    scalars, a one) that no token of the genome alphabet can stand for, the
    input is returned unchanged.
    """
    tree = simplify_tree(tokens_to_tree(expr), expr.mode)
    if _contains(tree, (INF,)):
        raise Degenerate(expr.to_text())
    if not _contains(tree, VARIABLES):
        raise Degenerate(expr.to_text())
    if _contains(tree, (ZERO, ONE)):
        return expr
    out = tree_to_tokens(tree, expr.mode)
    if expr.mode == ScalarMode.FREE:
        out = Expression(renumber_free(out.tokens), expr.mode)
    return out


# ---------------------------------------------------------------- skeletons

_FREE = Node("A")
_ADD = ("+", "-")
_MUL = ("*", "/")


def _is_a(node: Node) -> bool:
    return node.token[0] == "A" and not node.children


def _absorb(tok, l, r, family):
    """``A op (w op' A)`` style merges inside one operator family."""
    plus, minus = family
    if _is_a(l) and r.token in family:
        outer_sign, inner, a_left = (1 if tok == plus else -1), r, True
    elif _is_a(r) and l.token in family:
        outer_sign, inner, a_left = 1, l, False
    else:
        return None
    il, ir = inner.children
    if _is_a(il) and not _is_a(ir):
        w, s = ir, (1 if inner.token == plus else -1)
    elif _is_a(ir) and not _is_a(il):
        w, s = il, 1
    else:
        return None
    s *= outer_sign
    if s < 0:
        return Node(minus, (_FREE, w))
    return Node(plus, (_FREE, w) if a_left else (w, _FREE))


def _merge(node: Node, mode) -> Node:
    tok, kids = node.token, node.children
    if not kids:
        return node
    if all(_is_a(k) for k in kids):
        return _FREE
    if len(kids) == 1:
        return node
    l, r = kids
    if tok in _ADD:
        out = _absorb(tok, l, r, _ADD)
        if out is not None:
            return out
    elif tok in _MUL:
        out = _absorb(tok, l, r, _MUL)
        if out is not None:
            return out
        if tok == "*":
            # A * (w +- A)  ->  (A * w) +- A
            a, s = (l, r) if _is_a(l) else (r, l) if _is_a(r) else (None, None)
            if a is not None and s.token in _ADD:
                sl, sr = s.children
                if _is_a(sr) and not _is_a(sl):
                    return Node(s.token, (Node("*", (_FREE, sl)), _FREE))
                if _is_a(sl) and not _is_a(sr):
                    return Node(s.token, (_FREE, Node("*", (_FREE, sr))))
    return node


def _to_free(node: Node) -> Node:
    if not node.children:
        if node.token in INT_SCALARS or node.token in (ONE, ZERO) or node.token[0] == "A":
            return _FREE
        return node
    return Node(node.token, tuple(_to_free(c) for c in node.children))


def to_skeleton(expr: Expression) -> Expression:
    """Replace constants by free scalars and merge redundant ones."""
    tree = _fixpoint(_to_free(tokens_to_tree(expr)), _merge, ScalarMode.FREE)
    out: list[str] = []
    _emit(tree, out)
    return Expression(renumber_free(out), ScalarMode.FREE)


def _emit(node: Node, out: list[str]) -> None:
    for c in node.children:
        _emit(c, out)
    out.append(node.token)


def canonical_key(expr: Expression) -> str:
    """Key invariant under free-scalar renaming and + / * argument order."""
    stack: list[str] = []
    for tok in expr.tokens:
        if tok[0] == "A":
            stack.append("A")
        elif tok in UNARY:
            stack.append(f"{tok}({stack.pop()})")
        elif tok in ("+", "*"):
            r, l = stack.pop(), stack.pop()
            a, b = sorted((l, r))
            stack.append(f"{tok}({a},{b})")
        elif tok in ("-", "/", "^"):
            r, l = stack.pop(), stack.pop()
            stack.append(f"{tok}({l},{r})")
        else:
            stack.append(tok)
    return stack[0]
