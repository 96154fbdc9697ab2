"""Turn a genome into a scored ``Individual``.

Integer-scalar genomes are scored directly. Free-scalar skeletons first get
their scalars fitted on the training set. Either way the hit test runs on
the validation set only.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .expr import Expression, evaluate_array
from .fitness import NRMSE_HIT, Dataset, cost_from_values, nrmse, nrmse_from_values, reward
from .grid import Individual
from .scalarfit import ScalarFitConfig, fit_scalars

# Every catalog validation set covers its training region, so a candidate
# this far off on the training points cannot reach 1e-6 on validation; the
# validation pass is skipped for it.
VALIDATION_GATE = 1e-2


def _score(expr: Expression, scalars, train: Dataset, val: Dataset):
    s = scalars if expr.n_free else None
    values = evaluate_array(expr, train.stacked, s)
    c = cost_from_values(values, train)
    r = reward(c, train)
    if c is None:
        return r, False, None
    tr = nrmse_from_values(values[: train.n_points], train.targets, train.target_std)
    if tr is None or tr > VALIDATION_GATE:
        return r, False, None
    v = nrmse(expr, s, val)
    return r, v is not None and v <= NRMSE_HIT, v


@dataclass
class IntegerEvaluator:
    """Scores genomes that carry only the integer scalars 1 and 2."""

    train: Dataset
    validation: Dataset

    def __call__(self, expr: Expression) -> Individual:
        r, hit, v = _score(expr, (), self.train, self.validation)
        return Individual(expr, r, (), hit=hit, validation_nrmse=v)


@dataclass
class FreeEvaluator:
    """Fits a skeleton's scalars by CMA-ES and least squares, then scores it.

    Each call draws its own seed from ``rng`` so the result of one fit does
    not depend on how many random numbers earlier fits consumed beyond that.
    """

    train: Dataset
    validation: Dataset
    fit_cfg: ScalarFitConfig
    rng: np.random.Generator

    def __call__(self, expr: Expression) -> Individual:
        seed = int(self.rng.integers(2**63))
        return fit_and_score(expr, self.train, self.validation, self.fit_cfg, seed)


def fit_and_score(expr: Expression, train: Dataset, val: Dataset, cfg: ScalarFitConfig, seed: int) -> Individual:
    fit = fit_scalars(expr, train, cfg, np.random.default_rng(seed))
    scalars = tuple(float(a) for a in fit.scalars)
    r, hit, v = _score(expr, np.asarray(scalars), train, val)
    return Individual(expr, r, scalars, hit=hit, validation_nrmse=v)


def validation_nrmse(ind: Individual, val: Dataset) -> Optional[float]:
    s = np.asarray(ind.scalars) if ind.expr.n_free else None
    return nrmse(ind.expr, s, val)
