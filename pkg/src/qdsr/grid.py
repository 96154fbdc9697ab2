"""MAP-Elites archive over (length, function count, scalar count)."""
from __future__ import annotations

import csv
import enum
from itertools import islice
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Optional

from .expr import Expression, FeatureDescriptor, ScalarMode, describe, render_infix
from .simplify import Degenerate, simplify, to_skeleton
from .variation import VariationConfig, propose_offspring

MAX_FUNCTION_BIN = 8


class GridKey(NamedTuple):
    length_bin: int
    function_bin: int
    scalar_bin: int


class InsertResult(enum.Enum):
    INSERTED = "inserted"
    REPLACED_WORSE = "replaced_worse"
    REJECTED_WORSE = "rejected_worse"


class EmptyArchive(LookupError):
    pass


@dataclass
class Individual:
    expr: Expression
    reward: float
    scalars: tuple = ()
    features: Optional[FeatureDescriptor] = None
    eval_count_at_birth: int = 0
    hit: bool = False
    validation_nrmse: Optional[float] = None

    def __post_init__(self):
        if self.features is None:
            self.features = describe(self.expr)


def bin_of(f: FeatureDescriptor, max_len: Optional[int] = None) -> GridKey:
    scalar_bin = f.n_scalars if max_len is None else min(f.n_scalars, max_len // 2)
    return GridKey(f.length, min(f.n_functions, MAX_FUNCTION_BIN), scalar_bin)


@dataclass
class Archive:
    max_len: int
    bins: dict = field(default_factory=dict)
    eval_counter: int = 0

    def __len__(self):
        return len(self.bins)

    def key_of(self, ind: Individual) -> GridKey:
        return bin_of(ind.features, self.max_len)

    def try_insert(self, ind: Individual) -> InsertResult:
        key = self.key_of(ind)
        old = self.bins.get(key)
        if old is None:
            self.bins[key] = ind
            return InsertResult.INSERTED
        if ind.reward > old.reward:
            self.bins[key] = ind
            return InsertResult.REPLACED_WORSE
        return InsertResult.REJECTED_WORSE

    def elites(self) -> list[Individual]:
        return list(self.bins.values())

    def best(self) -> Individual:
        if not self.bins:
            raise EmptyArchive("archive is empty")
        return max(self.bins.values(), key=lambda ind: ind.reward)

    def select_uniform(self, k: int, rng) -> list[Individual]:
        if not self.bins:
            raise EmptyArchive("archive is empty")
        elites = self.elites()
        return [elites[i] for i in rng.integers(len(elites), size=k)]

    def dump_csv(self, path, max_function_bin: Optional[int] = None) -> int:
        """Write one row per elite; returns the number of rows written."""
        rows = sorted(self.bins.items())
        n = 0
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(DUMP_COLUMNS)
            for key, ind in rows:
                if max_function_bin is not None and key.function_bin > max_function_bin:
                    continue
                w.writerow(
                    [
                        key.length_bin,
                        key.scalar_bin,
                        key.function_bin,
                        repr(float(ind.reward)),
                        ind.expr.to_text(),
                        " ".join(repr(float(s)) for s in ind.scalars),
                        render_infix(ind.expr, ind.scalars or None),
                    ]
                )
                n += 1
        return n


DUMP_COLUMNS = (
    "length_bin",
    "scalar_bin",
    "function_bin",
    "reward",
    "expression",
    "scalars",
    "infix",
)


def try_insert(archive: Archive, ind: Individual) -> InsertResult:
    return archive.try_insert(ind)


def select_uniform(archive: Archive, k: int, rng) -> list[Individual]:
    return archive.select_uniform(k, rng)


def prepare(expr: Expression, use_simplify: bool) -> Optional[Expression]:
    """Optional simplification before evaluation; None means discard.

    Free-scalar genomes also get their redundant scalars merged.
    """
    if not expr.has_variable():
        return None
    if not use_simplify:
        return expr
    try:
        out = simplify(expr)
    except Degenerate:
        return None
    if out.mode == ScalarMode.FREE:
        out = to_skeleton(out)
    return out


@dataclass
class BatchResult:
    evaluated: int = 0
    inserted: int = 0
    hit: Optional[Individual] = None


Evaluator = Callable[[Expression], Individual]


def evaluate_batch(
    archive: Archive,
    exprs: Iterable[Expression],
    evaluate: Evaluator,
    use_simplify: bool = False,
    budget: Optional[int] = None,
) -> BatchResult:
    """Evaluate and insert in order; stops at the first hit or when the
    archive's evaluation counter reaches ``budget``.

    An evaluator with a ``chunk_size`` above 1 and an ``evaluate_many``
    method is handed that many genomes at a time (for worker pools).
    Insertion still happens in input order and stops at the first hit, so
    the archive ends up exactly as with one-at-a-time evaluation.
    """
    res = BatchResult()
    chunk = max(1, int(getattr(evaluate, "chunk_size", 1)))
    prepared = (p for p in (prepare(e, use_simplify) for e in exprs) if p is not None)
    while res.hit is None:
        room = chunk if budget is None else min(chunk, budget - archive.eval_counter)
        group = list(islice(prepared, max(room, 0)))
        if not group:
            break
        inds = evaluate.evaluate_many(group) if chunk > 1 else [evaluate(group[0])]
        for ind in inds:
            archive.eval_counter += 1
            ind.eval_count_at_birth = archive.eval_counter
            res.evaluated += 1
            if archive.try_insert(ind) is not InsertResult.REJECTED_WORSE:
                res.inserted += 1
            if ind.hit:
                res.hit = ind
                break
    return res


def map_elites_iteration(
    archive: Archive,
    evaluate: Evaluator,
    cfg: VariationConfig,
    rng,
    use_simplify: bool = False,
    budget: Optional[int] = None,
) -> BatchResult:
    """One generation: 2N children of the N elites, evaluated and binned."""
    if not archive.bins:
        raise EmptyArchive("archive is empty")
    pool = [ind.expr for ind in archive.elites()]
    children = propose_offspring(pool, 2 * len(pool), cfg, rng)
    return evaluate_batch(archive, children, evaluate, use_simplify, budget)
