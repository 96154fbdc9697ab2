"""Point mutation, subtree crossover and the offspring policy.

Both operators work directly on the postfix token tuple: the subtree rooted
at position ``i`` is the slice ``tokens[start[i]:i + 1]``.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .expr import (
    BINARY,
    UNARY,
    VARIABLES,
    Expression,
    Primitives,
    ScalarMode,
    arity,
    nesting_depth,
    renumber_free,
)


@dataclass(frozen=True)
class VariationConfig:
    max_len: int = 15
    max_nested: int = 1
    prims: Primitives = field(default_factory=Primitives)
    p_mutation_only: float = 0.4
    p_crossover_only: float = 0.4
    p_both: float = 0.2
    p_function_drop: float = 0.3
    crossover_retries: int = 20

    def __post_init__(self):
        ps = (self.p_mutation_only, self.p_crossover_only, self.p_both, self.p_function_drop)
        if any(p < 0 or p > 1 for p in ps):
            raise ValueError("probabilities must lie in [0, 1]")
        if abs(self.p_mutation_only + self.p_crossover_only + self.p_both - 1) > 1e-12:
            raise ValueError("operator probabilities must sum to 1")


def _pick(seq, rng):
    return seq[int(rng.integers(len(seq)))]


def _finish(tokens, mode):
    if mode == ScalarMode.FREE:
        tokens = renumber_free(tokens)
    return Expression(tuple(tokens), mode)


def _alternatives(tok: str, prims: Primitives) -> tuple[str, ...]:
    a = arity(tok)
    if a == 2:
        pool = BINARY
    elif a == 1:
        pool = UNARY
    else:
        pool = prims.terminals
        if tok[0] == "A":
            tok = "A"
    return tuple(t for t in pool if t != tok)


def point_mutation(
    expr: Expression,
    rng,
    prims: Optional[Primitives] = None,
    p_drop: float = 0.3,
    stats: Optional[Counter] = None,
) -> Expression:
    """Swap one token for another of the same arity.

    A selected unary function is deleted instead, with probability
    ``p_drop``, letting its argument take its place.
    """
    if prims is None:
        prims = Primitives(max(1, _n_vars(expr)), expr.mode)
    toks = list(expr.tokens)
    i = int(rng.integers(len(toks)))
    tok = toks[i]
    if tok in UNARY:
        if stats is not None:
            stats["function_selected"] += 1
        if rng.random() < p_drop:
            if stats is not None:
                stats["function_dropped"] += 1
            del toks[i]
            return _finish(toks, expr.mode)
    toks[i] = _pick(_alternatives(tok, prims), rng)
    return _finish(toks, expr.mode)


def _n_vars(expr: Expression) -> int:
    used = [VARIABLES.index(t) for t in expr.tokens if t in VARIABLES]
    return max(used) + 1 if used else 1


def _fits(tokens, max_len, max_nested) -> bool:
    return len(tokens) <= max_len and nesting_depth(tokens) <= max_nested


def subtree_crossover(
    a: Expression, b: Expression, rng, max_len: int, max_nested: int
) -> tuple[Optional[Expression], Optional[Expression]]:
    """Swap one uniformly chosen subtree of each parent.

    Each child that breaks the length or nesting limit comes back as None.
    """
    i = int(rng.integers(a.length))
    j = int(rng.integers(b.length))
    ta, tb = a.tokens, b.tokens
    sa, sb = a.starts[i], b.starts[j]
    c1 = ta[:sa] + tb[sb : j + 1] + ta[i + 1 :]
    c2 = tb[:sb] + ta[sa : i + 1] + tb[j + 1 :]
    out1 = _finish(c1, a.mode) if _fits(c1, max_len, max_nested) else None
    out2 = _finish(c2, b.mode) if _fits(c2, max_len, max_nested) else None
    return out1, out2


def propose_offspring(
    pool: Sequence[Expression],
    n_wanted: int,
    cfg: VariationConfig,
    rng,
    pick_for_mutation: Optional[Callable] = None,
    stats: Optional[Counter] = None,
) -> list[Expression]:
    """Produce exactly ``n_wanted`` children from ``pool``.

    Each event is mutation only (one parent, one child), crossover only (two
    parents, up to two children) or crossover followed by mutation of both
    children. Parents are drawn uniformly; ``pick_for_mutation(rng)``, when
    given, chooses the parent of mutation-only events instead. Children that
    no longer contain a variable are dropped.
    """
    if not pool:
        raise ValueError("empty parent pool")
    children: list[Expression] = []
    p1 = cfg.p_mutation_only
    p2 = p1 + cfg.p_crossover_only
    max_events = 1000 * max(n_wanted, 1)

    def keep(c):
        if c is not None and c.has_variable():
            children.append(c)

    def cross():
        for _ in range(cfg.crossover_retries):
            a, b = _pick(pool, rng), _pick(pool, rng)
            c1, c2 = subtree_crossover(a, b, rng, cfg.max_len, cfg.max_nested)
            if c1 is not None or c2 is not None:
                return [c for c in (c1, c2) if c is not None]
        return []

    events = 0
    while len(children) < n_wanted:
        events += 1
        if events > max_events:
            raise RuntimeError("offspring proposal made no progress")
        u = rng.random()
        if u < p1:
            if stats is not None:
                stats["mutation"] += 1
            parent = pick_for_mutation(rng) if pick_for_mutation else _pick(pool, rng)
            keep(point_mutation(parent, rng, cfg.prims, cfg.p_function_drop, stats))
        elif u < p2:
            if stats is not None:
                stats["crossover"] += 1
            for c in cross():
                keep(c)
        else:
            if stats is not None:
                stats["both"] += 1
            for c in cross():
                keep(point_mutation(c, rng, cfg.prims, cfg.p_function_drop, stats))
    return children[:n_wanted]
