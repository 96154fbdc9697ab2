"""Generational GP with size-2 tournaments, used as a comparison baseline.

Each generation breeds 2000 children from a population of 1000 and keeps
the best 1000 of the 3000. The 1000 initial evaluations count toward the
budget.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

from .evaluate import IntegerEvaluator, validation_nrmse
from .expr import Primitives, ScalarMode, random_expression, render_infix
from .grid import Individual
from .outcome import RunOutcome, Stage
from .variation import VariationConfig, propose_offspring


@dataclass(frozen=True)
class GpConfig:
    max_len: int
    max_nested: int = 1
    pop_size: int = 1000
    offspring_per_gen: int = 2000
    tournament_size: int = 2
    eval_budget: int = 100_000

    def __post_init__(self):
        if self.offspring_per_gen < 1:
            raise ValueError("offspring_per_gen must be >= 1")
        if self.pop_size < self.tournament_size:
            raise ValueError("pop_size must be >= tournament_size")


def tournament_select(pop, rng, size: int = 2) -> Individual:
    """Best of ``size`` distinct uniformly drawn individuals.

    The earlier draw wins ties.
    """
    n = len(pop)
    if n < 2 or n < size:
        raise ValueError("tournament needs at least two individuals")
    if size == 2:
        i = int(rng.integers(n))
        j = int(rng.integers(n - 1))
        idx = (i, j + (j >= i))
    else:
        idx = rng.choice(n, size=size, replace=False)
    best = pop[idx[0]]
    for i in idx[1:]:
        if pop[i].reward > best.reward:
            best = pop[i]
    return best


@dataclass
class GpState:
    population: list
    evals: int = 0
    generations: int = 0
    hit: Optional[Individual] = None
    stats: Counter = field(default_factory=Counter)
    # (evals, population size, best reward) after initialization and after each generation
    history: list = field(default_factory=list)

    def record(self):
        best = max((ind.reward for ind in self.population), default=float("nan"))
        self.history.append((self.evals, len(self.population), best))


def run_plain_gp(target, cfg: GpConfig, rng, train, validation, evaluate=None, stats: Optional[Counter] = None):
    """Run until a validation hit or until ``cfg.eval_budget`` evaluations.

    ``evaluate`` defaults to integer-scalar scoring on ``train``/``validation``.
    Returns ``(RunOutcome, GpState)``; the state keeps the final population
    for inspection.
    """
    if evaluate is None:
        evaluate = IntegerEvaluator(train, validation)
    prims = Primitives(target.n_vars, ScalarMode.INTEGER)
    vcfg = VariationConfig(max_len=cfg.max_len, max_nested=cfg.max_nested, prims=prims)
    state = GpState([], stats=stats if stats is not None else Counter())

    def score(exprs, capped=True):
        out = []
        for e in exprs:
            ind = evaluate(e)
            state.evals += 1
            ind.eval_count_at_birth = state.evals
            out.append(ind)
            if ind.hit:
                state.hit = ind
                break
            if capped and state.evals >= cfg.eval_budget:
                break
        return out

    init = [random_expression(cfg.max_len, cfg.max_nested, rng, prims) for _ in range(cfg.pop_size)]
    state.population = score(init, capped=False)
    state.record()
    while state.hit is None and state.evals < cfg.eval_budget:
        pool = [ind.expr for ind in state.population]

        def pick(r):
            return tournament_select(state.population, r, cfg.tournament_size).expr

        children = propose_offspring(pool, cfg.offspring_per_gen, vcfg, rng, pick_for_mutation=pick, stats=state.stats)
        union = state.population + score(children)
        union.sort(key=lambda ind: -ind.reward)
        state.population = union[: cfg.pop_size]
        state.generations += 1
        state.record()

    best = state.hit or max(state.population, key=lambda ind: ind.reward)
    v = best.validation_nrmse if best.validation_nrmse is not None else validation_nrmse(best, validation)
    out = RunOutcome(
        target=target.name,
        seed=-1,
        mode="gp-baseline",
        hit=state.hit is not None,
        hit_stage=Stage.STEP1 if state.hit is not None else None,
        n_evals_at_hit=state.hit.eval_count_at_birth if state.hit is not None else None,
        n_evals_step1=state.evals,
        best_expression=best.expr.to_text(),
        best_infix=render_infix(best.expr),
        best_reward=float(best.reward),
        best_validation_nrmse=v,
    )
    return out, state
