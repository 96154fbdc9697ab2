from collections import Counter

import numpy as np
import pytest

from qdsr.expr import UNARY, Expression, Primitives, ScalarMode, random_expression
from qdsr.variation import VariationConfig, point_mutation, propose_offspring, subtree_crossover

E = Expression.from_text


def three_sigma(n, p):
    return 3 * np.sqrt(p * (1 - p) / n)


def test_function_drop_gives_x_times_x():
    rng = np.random.default_rng(0)
    dropped = {point_mutation(E("x x sin *"), rng, Primitives(1), p_drop=1.0) for _ in range(200)}
    shorter = {c for c in dropped if c.length == 3}
    assert shorter == {E("x x *")}


def test_single_variable_leaf_mutates_to_a_scalar():
    rng = np.random.default_rng(1)
    seen = {point_mutation(E("x"), rng, Primitives(1)).tokens for _ in range(200)}
    assert seen == {("1",), ("2",)}


def test_mutation_changes_one_position():
    rng = np.random.default_rng(2)
    prims = Primitives(2)
    for _ in range(10_000):
        e = random_expression(15, 1, rng, prims)
        c = point_mutation(e, rng, prims)
        if c.length == e.length:
            assert sum(a != b for a, b in zip(e.tokens, c.tokens)) == 1
        else:
            assert c.length == e.length - 1
            removed = [i for i in range(e.length) if e.tokens[:i] + e.tokens[i + 1 :] == c.tokens]
            assert any(e.tokens[i] in UNARY for i in removed)


def test_free_mode_mutation_renumbers():
    rng = np.random.default_rng(3)
    for _ in range(200):
        c = point_mutation(E("x A0 * A1 +"), rng, Primitives(1, ScalarMode.FREE))
        free = [t for t in c.tokens if t[0] == "A"]
        assert free == [f"A{i}" for i in range(len(free))]


def test_leaf_crossover_swaps_roots():
    rng = np.random.default_rng(0)
    assert subtree_crossover(E("x"), E("y"), rng, 15, 1) == (E("y"), E("x"))


def test_crossover_rejects_overlong_children():
    rng = np.random.default_rng(4)
    prims = Primitives(1)
    a = b = None
    while a is None or a.length != 14:
        a = random_expression(15, 1, rng, prims)
    while b is None or b.length != 14:
        b = random_expression(15, 1, rng, prims)
    for _ in range(2000):
        c1, c2 = subtree_crossover(a, b, rng, 15, 1)
        for c in (c1, c2):
            assert c is None or c.length <= 15


def test_crossover_closure():
    rng = np.random.default_rng(5)
    prims = Primitives(2)
    for _ in range(10_000):
        a = random_expression(15, 1, rng, prims)
        b = random_expression(15, 1, rng, prims)
        for c in subtree_crossover(a, b, rng, 15, 1):
            if c is not None:
                assert c.length <= 15 and c.nesting <= 1


def test_pool_of_one():
    rng = np.random.default_rng(6)
    kids = propose_offspring([E("x x *")], 3, VariationConfig(prims=Primitives(1)), rng)
    assert len(kids) == 3


def test_exact_count_from_large_pool():
    rng = np.random.default_rng(7)
    prims = Primitives(1)
    pool = [random_expression(15, 1, rng, prims) for _ in range(1000)]
    assert len(propose_offspring(pool, 2000, VariationConfig(prims=prims), rng)) == 2000


def test_operator_mix_frequencies():
    rng = np.random.default_rng(8)
    prims = Primitives(1)
    pool = [random_expression(15, 1, rng, prims) for _ in range(100)]
    stats = Counter()
    propose_offspring(pool, 60_000, VariationConfig(prims=prims), rng, stats=stats)
    n = stats["mutation"] + stats["crossover"] + stats["both"]
    for key, p in (("mutation", 0.4), ("crossover", 0.4), ("both", 0.2)):
        assert abs(stats[key] / n - p) <= three_sigma(n, p)
    frac = stats["function_dropped"] / stats["function_selected"]
    assert abs(frac - 0.3) <= three_sigma(stats["function_selected"], 0.3)


def test_config_validation():
    with pytest.raises(ValueError):
        VariationConfig(p_mutation_only=0.5)
    with pytest.raises(ValueError):
        VariationConfig(p_function_drop=1.5)
