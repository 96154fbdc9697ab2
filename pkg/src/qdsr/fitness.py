"""Cost, reward and termination.

The cost of a candidate is the L1 distance to the target plus the L1
distance between first derivatives, summed over dimensions. Derivatives of
both the target and the candidate come from the same central-difference
stencil, so a perfect candidate scores exactly zero.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .expr import Expression, evaluate_array

# step of the central-difference stencil, relative to the range of each axis
FD_REL_STEP = 1e-4
NRMSE_HIT = 1e-6


class DegenerateTarget(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    """Sampled inputs and target values.

    ``target_grads`` holds the central-difference estimate of each partial
    derivative of the target (shape ``(n_dims, n_points)``); entries may be
    NaN where the oracle could not be evaluated at a perturbed point.
    """

    points: np.ndarray
    targets: np.ndarray
    target_grads: Optional[np.ndarray] = None
    steps: Optional[np.ndarray] = None
    grid: tuple = ()
    stacked: np.ndarray = field(default=None, init=False, repr=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        t = np.asarray(self.targets, dtype=float)
        if pts.shape[0] != t.shape[0]:
            raise ValueError("points and targets differ in length")
        if not np.all(np.isfinite(t)):
            raise ValueError("targets must be finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "targets", t)
        if not self.grid:
            object.__setattr__(self, "grid", (False,) * pts.shape[1])
        if self.steps is None:
            object.__setattr__(self, "steps", _fd_steps(pts))
        blocks = [pts]
        for i, h in enumerate(self.steps):
            e = np.zeros(pts.shape[1])
            e[i] = h
            blocks += [pts + e, pts - e]
        object.__setattr__(self, "stacked", np.vstack(blocks))

    @functools.cached_property
    def target_std(self) -> float:
        return float(np.std(self.targets))

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def n_dims(self) -> int:
        return self.points.shape[1]

    @property
    def target_spread(self) -> float:
        a = np.abs(self.targets)
        return float(a.max() - a.min())

    @classmethod
    def from_oracle(cls, points, oracle: Callable, grid: Sequence[bool] = ()) -> "Dataset":
        """Sample ``oracle(x, y, ...)`` on ``points`` and its central differences."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        steps = _fd_steps(pts)
        with np.errstate(all="ignore"):
            t = np.asarray(oracle(*pts.T), dtype=float)
            grads = []
            for i, h in enumerate(steps):
                e = np.zeros(pts.shape[1])
                e[i] = h
                fp = np.asarray(oracle(*(pts + e).T), dtype=float)
                fm = np.asarray(oracle(*(pts - e).T), dtype=float)
                g = (fp - fm) / (2 * h)
                grads.append(np.where(np.isfinite(g), g, np.nan))
        return cls(pts, t, np.array(grads), steps, tuple(grid))


def _fd_steps(pts: np.ndarray) -> np.ndarray:
    span = pts.max(axis=0) - pts.min(axis=0)
    return FD_REL_STEP * np.where(span > 0, span, 1.0)


def predict(expr: Expression, scalars, data: Dataset) -> np.ndarray:
    return evaluate_array(expr, data.points, scalars if expr.n_free else None)


def cost_from_values(values: np.ndarray, data: Dataset) -> Optional[float]:
    """Cost from candidate values on ``data.stacked``; None means failed."""
    n = data.n_points
    f = values[:n]
    if np.isnan(f).any():
        return None
    cost = float(np.abs(data.targets - f).sum())
    if data.target_grads is None:
        return cost
    used = 0
    for i, h in enumerate(data.steps):
        fp = values[n * (1 + 2 * i) : n * (2 + 2 * i)]
        fm = values[n * (2 + 2 * i) : n * (3 + 2 * i)]
        g = (fp - fm) / (2 * h)
        ok = ~(np.isnan(g) | np.isnan(data.target_grads[i]))
        used += int(ok.sum())
        cost += float(np.abs(data.target_grads[i][ok] - g[ok]).sum())
    if used == 0:
        return None
    return cost if np.isfinite(cost) else None


def cost_C(expr: Expression, scalars, data: Dataset) -> Optional[float]:
    """Value plus derivative L1 cost; ``None`` when the candidate fails."""
    values = evaluate_array(expr, data.stacked, scalars if expr.n_free else None)
    return cost_from_values(values, data)


def reward(cost: Optional[float], data: Dataset) -> float:
    """Map a cost onto (-1, 1]; a failed candidate gets -1."""
    if cost is None:
        return -1.0
    scale = data.n_points * (1.0 + data.target_spread)
    return 2.0 / (1.0 + cost / scale) - 1.0


def nrmse_from_values(pred: np.ndarray, targets: np.ndarray, sd: Optional[float] = None) -> Optional[float]:
    if sd is None:
        sd = float(np.std(targets))
    if sd == 0.0:
        raise DegenerateTarget("target has zero variance")
    if np.isnan(pred).any():
        return None
    with np.errstate(over="ignore"):
        rmse = float(np.sqrt(np.mean((targets - pred) ** 2)))
    return rmse / sd if np.isfinite(rmse) else None


def nrmse(expr: Expression, scalars, data: Dataset) -> Optional[float]:
    return nrmse_from_values(predict(expr, scalars, data), data.targets, data.target_std)


def check_termination(expr: Expression, scalars, validation: Dataset) -> bool:
    """True when the validation NRMSE is at most 1e-6."""
    v = nrmse(expr, scalars, validation)
    return v is not None and v <= NRMSE_HIT


@dataclass(frozen=True)
class FitnessReport:
    cost: Optional[float]
    reward: float
    nrmse: Optional[float]

    @property
    def failed(self) -> bool:
        return self.cost is None


def assess(expr: Expression, scalars, data: Dataset) -> FitnessReport:
    values = evaluate_array(expr, data.stacked, scalars if expr.n_free else None)
    c = cost_from_values(values, data)
    if c is None:
        return FitnessReport(None, -1.0, None)
    return FitnessReport(c, reward(c, data), nrmse_from_values(values[: data.n_points], data.targets))
