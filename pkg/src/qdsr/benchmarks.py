"""Benchmark targets and dataset sampling.

``E[a, b, s]`` is an equidistant grid from ``a`` to ``b`` with step ``s``;
``U[a, b, n]`` is ``n`` uniform draws on ``[a, b]``. A multi-variable
dataset is the Cartesian product of its per-axis samples, so Keijzer-5's
training set ``x, y: U[0, 2, 5]``, ``z: U[1, 5, 10]`` has 250 points.
All ranges are restricted to non-negative values.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .expr import VARIABLES
from .fitness import Dataset

GRID_TOL = 1e-9


class OracleFailure(ValueError):
    pass


@dataclass(frozen=True)
class SamplingSpec:
    kind: str  # "E" or "U"
    low: float
    high: float
    step_or_count: float

    def __post_init__(self):
        if self.kind not in ("E", "U"):
            raise ValueError(f"unknown sampling kind {self.kind!r}")
        if self.low > self.high:
            raise ValueError("low must not exceed high")
        if self.kind == "E" and not self.step_or_count > 0:
            raise ValueError("E step must be positive")
        if self.kind == "U" and (int(self.step_or_count) != self.step_or_count or self.step_or_count < 1):
            raise ValueError("U count must be a positive integer")

    def n_points(self) -> int:
        if self.kind == "U":
            return int(self.step_or_count)
        return int(np.floor((self.high - self.low) / self.step_or_count + GRID_TOL)) + 1

    def sample(self, rng) -> np.ndarray:
        if self.kind == "E":
            return self.low + self.step_or_count * np.arange(self.n_points())
        v = rng.uniform(self.low, self.high, int(self.step_or_count))
        # an exact zero would put x^-k style targets out of domain
        while self.low == 0 and np.any(v == 0):
            v = np.where(v == 0, rng.uniform(self.low, self.high, v.shape), v)
        return v

    def __str__(self):
        s = self.step_or_count
        s = int(s) if self.kind == "U" else s
        return f"{self.kind}[{self.low:g}, {self.high:g}, {s:g}]"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "low": self.low, "high": self.high, "step_or_count": self.step_or_count}


def E(a, b, s) -> SamplingSpec:
    return SamplingSpec("E", float(a), float(b), float(s))


def U(a, b, n) -> SamplingSpec:
    return SamplingSpec("U", float(a), float(b), int(n))


def sample_dataset(specs, oracle: Callable, rng) -> Dataset:
    """Sample every axis, take the Cartesian product and evaluate the oracle."""
    axes = [s.sample(rng) for s in specs]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    with np.errstate(all="ignore"):
        t = np.asarray(oracle(*pts.T), dtype=float)
    if not np.all(np.isfinite(t)):
        bad = pts[~np.isfinite(t)][0]
        raise OracleFailure(f"target is not finite at {bad.tolist()}")
    return Dataset.from_oracle(pts, oracle, grid=tuple(s.kind == "E" for s in specs))


@dataclass(frozen=True)
class TargetSpec:
    name: str
    formula: Callable
    formula_text: str
    n_vars: int
    train: tuple
    validation: tuple
    max_len: int
    table: str = ""
    notes: str = ""
    expected_fail: bool = False
    smoke: bool = False

    @property
    def max_len_step1(self) -> int:
        return self.max_len + 10

    @property
    def max_len_cmaes(self) -> int:
        return self.max_len

    def training_set(self, rng) -> Dataset:
        return sample_dataset(self.train, self.formula, rng)

    def validation_set(self, rng) -> Dataset:
        return sample_dataset(self.validation, self.formula, rng)

    def to_dict(self) -> dict:
        names = VARIABLES[: self.n_vars]
        return {
            "name": self.name,
            "formula": self.formula_text,
            "n_vars": self.n_vars,
            "train": {v: s.to_dict() for v, s in zip(names, self.train)},
            "validation": {v: s.to_dict() for v, s in zip(names, self.validation)},
            "train_text": _specs_text(self.train, names),
            "validation_text": _specs_text(self.validation, names),
            "max_len": self.max_len,
            "max_len_step1": self.max_len_step1,
            "table": self.table,
            "notes": self.notes,
            "expected_fail": self.expected_fail,
            "smoke": self.smoke,
        }


def _specs_text(specs, names) -> str:
    return ", ".join(f"{v}: {s}" for v, s in zip(names, specs))


def _t(name, f, text, nv, train, val, L, table, notes="", **kw) -> TargetSpec:
    train = (train,) * nv if isinstance(train, SamplingSpec) else tuple(train)
    val = (val,) * nv if isinstance(val, SamplingSpec) else tuple(val)
    return TargetSpec(name, f, text, nv, train, val, L, table, notes, **kw)


def _k4(x):
    return x**3 * np.exp(-x) * np.cos(x) * np.sin(x) * (np.cos(x) * np.sin(x) ** 2 - 1)


_TWO_PI = 2 * np.pi

_CATALOG = (
    # easy targets, L = 15
    _t("Nguyen-2", lambda x: x + x**2 + x**3 + x**4, "x + x^2 + x^3 + x^4", 1, U(0, 1, 20), U(0, 2, 200), 15, "2"),
    _t("Koza-3", lambda x: x**6 - 2 * x**4 + x**2, "x^6 - 2x^4 + x^2", 1, U(0, 1, 20), U(0, 2, 200), 15, "2"),
    _t("Meier-3", lambda x, y: x**2 * y**2 / (x + y), "x^2 y^2 / (x + y)", 2, U(0, 1, 20), U(0, 2, 50), 15, "2"),
    _t("Meier-4", lambda x, y: x**5 * y**-3.0, "x^5 y^-3", 2, U(0, 1, 20), U(0, 2, 50), 15, "2"),
    _t("Nguyen-9", lambda x, y: np.sin(x) + np.sin(y**2), "sin(x) + sin(y^2)", 2, U(0, 1, 20), U(0, 2, 100), 15, "2"),
    _t("Keijzer-1", lambda x: 0.3 * x * np.sin(_TWO_PI * x), "0.3 x sin(2 pi x)", 1, E(0, 1, 0.05), E(0, 10, 0.05), 15, "2"),
    _t("Keijzer-2", lambda x: 0.3 * x * np.sin(_TWO_PI * x), "0.3 x sin(2 pi x)", 1, E(0, 2, 0.05), E(0, 4, 0.05), 15, "2"),
    _t("Keijzer-3", lambda x: 0.3 * x * np.sin(_TWO_PI * x), "0.3 x sin(2 pi x)", 1, E(0, 3, 0.05), E(0, 4, 0.05), 15, "2"),
    _t("Nguyen-5", lambda x: np.sin(x**2) * np.cos(x) - 1, "sin(x^2) cos(x) - 1", 1, U(0, 1, 20), U(0, 1.2, 200), 15, "2"),
    _t("Nguyen-6", lambda x: np.sin(x) + np.sin(x + x**2), "sin(x) + sin(x + x^2)", 1, U(0, 1, 20), U(0, 1.2, 200), 15, "2"),
    _t("Sine", lambda x: np.sin(x) + np.sin(x + x**2), "sin(x) + sin(x + x^2)", 1, E(0, 6.2, 0.1), U(0, 10, 100), 15, "2"),
    _t("Koza-2", lambda x: x**5 - 2 * x**3 + x, "x^5 - 2x^3 + x", 1, U(0, 1, 20), U(0, 2, 200), 15, "2"),
    # mid-sized targets
    _t("Burks", lambda x: 4 * x**4 + 3 * x**3 + 2 * x**2 + x, "4x^4 + 3x^3 + 2x^2 + x", 1, U(0, 1, 20), U(0, 3, 200), 20, "3"),
    _t("Keijzer-14", lambda x, y: 8 / (2 + x**2 + y**2), "8 / (2 + x^2 + y^2)", 2, U(0, 3, 20), E(0, 4, 0.1), 20, "3"),
    _t("Nguyen-3", lambda x: x + x**2 + x**3 + x**4 + x**5, "x + x^2 + x^3 + x^4 + x^5", 1, U(0, 1, 20), U(0, 2, 200), 20, "3"),
    _t("Nguyen-7", lambda x: np.log(1 + x) + np.log(1 + x**2), "ln(1 + x) + ln(1 + x^2)", 1, U(0, 2, 20), U(0, 3, 200), 25, "3"),
    _t("R1", lambda x: (x + 1) ** 3 / (x**2 - x + 1), "(x + 1)^3 / (x^2 - x + 1)", 1, E(0, 2, 0.1), U(0, 3, 100), 30, "3"),
    _t("R2", lambda x: (x**5 - 3 * x**3 + 1) / (x**2 + 1), "(x^5 - 3x^3 + 1) / (x^2 + 1)", 1, E(0, 2, 0.1), U(0, 4, 400), 30, "3"),
    _t(
        "Keijzer-5",
        lambda x, y, z: 30 * x * z / ((x - 10) * y**2),
        "30 x z / ((x - 10) y^2)",
        3,
        (U(0, 2, 5), U(0, 2, 5), U(1, 5, 10)),
        (U(0, 3, 20), U(0, 3, 20), U(0, 5, 30)),
        30,
        "3",
    ),
    _t("Keijzer-12", lambda x, y: x**4 - x**3 + 0.5 * y**2 - y, "x^4 - x^3 + 0.5 y^2 - y", 2, U(0, 3, 20), E(0, 4, 0.1), 30, "3"),
    _t("Keijzer-15", lambda x, y: x**3 / 5 + y**3 / 2 - y - x, "x^3/5 + y^3/2 - y - x", 2, U(0, 3, 20), E(0, 4, 0.1), 30, "3"),
    _t("Keijzer-11", lambda x, y: x * y + np.sin((x - 1) * (y - 1)), "x y + sin((x - 1)(y - 1))", 2, U(0, 3, 20), E(0, 4, 0.1), 30, "3"),
    _t(
        "Nguyen-4",
        lambda x: x + x**2 + x**3 + x**4 + x**5 + x**6,
        "x + x^2 + x^3 + x^4 + x^5 + x^6",
        1,
        U(0, 1, 40),
        U(0, 1.5, 200),
        30,
        "3",
    ),
    _t(
        "Pagie-1",
        lambda x, y: 1 / (1 + x**-4.0) + 1 / (1 + y**-4.0),
        "1/(1 + x^-4) + 1/(1 + y^-4)",
        2,
        E(0.2, 5, 0.2),
        U(0, 6, 20),
        30,
        "3",
        notes="training grid starts at 0.2 instead of 0: x^-4 is undefined at 0",
    ),
    # difficult targets
    _t("R3", lambda x: (x**6 + x**5) / (x**4 + x**3 + x**2 + x + 1), "(x^6 + x^5) / (x^4 + x^3 + x^2 + x + 1)", 1, E(0, 1, 0.05), U(0, 2, 100), 35, "4"),
    _t(
        "Vladislavleva-1",
        lambda x, y: np.exp(-((x - 1) ** 2)) / (1.2 + (y - 2.5) ** 2),
        "exp(-(x - 1)^2) / (1.2 + (y - 2.5)^2)",
        2,
        U(0.3, 4, 20),
        E(0, 8, 0.1),
        35,
        "4",
    ),
    _t("Keijzer-4", _k4, "x^3 exp(-x) cos(x) sin(x) (cos(x) sin(x)^2 - 1)", 1, E(0, 10, 0.1), U(0, 14, 1000), 40, "4"),
    _t("Nonic", lambda x: sum(x**i for i in range(1, 10)), "sum_{i=1..9} x^i", 1, E(0, 1, 0.05), U(0, 2, 100), 40, "4"),
    _t(
        "Vladislavleva-3",
        lambda x, y: _k4(x) * (y - 5),
        "x^3 exp(-x) cos(x) sin(x) (cos(x) sin(x)^2 - 1) (y - 5)",
        2,
        (E(0.05, 10, 0.1), E(0.05, 10.05, 2)),
        (U(0, 10, 50), U(0, 10, 10)),
        45,
        "4",
    ),
    # no hit reported for these two; ranges are not tabulated so they follow
    # the usual benchmark definitions cut to non-negative values, with fewer
    # points per axis because the sets are Cartesian products here
    _t(
        "Vladislavleva-5",
        lambda x, y, z: 30 * (x - 1) * (z - 1) / ((x - 10) * y**2),
        "30 (x - 1)(z - 1) / ((x - 10) y^2)",
        3,
        (U(0.05, 2, 10), U(1, 2, 10), U(0.05, 2, 10)),
        (E(0, 2.1, 0.15), E(0.95, 2.05, 0.1), E(0, 2.1, 0.15)),
        45,
        "-",
        notes="ranges not tabulated; reduced per-axis counts",
        expected_fail=True,
    ),
    _t(
        "Vladislavleva-7",
        lambda x, y: (x - 3) * (y - 3) + 2 * np.sin((x - 4) * (y - 4)),
        "(x - 3)(y - 3) + 2 sin((x - 4)(y - 4))",
        2,
        U(0.05, 6.05, 20),
        U(0, 6.35, 30),
        45,
        "-",
        notes="ranges not tabulated; reduced per-axis counts",
        expected_fail=True,
    ),
    # smoke test: found in one step once the skeleton path is on
    _t(
        "Korns-7",
        lambda x: 213.80940889 * (1 - np.exp(-0.54723748542 * x)),
        "213.80940889 (1 - exp(-0.54723748542 x))",
        1,
        U(0, 50, 50),
        U(0, 50, 200),
        15,
        "-",
        notes="range [-50, 50] cut to [0, 50]",
        smoke=True,
    ),
)

_BY_NAME = {t.name.lower(): t for t in _CATALOG}

# the plain-GP comparison uses the same data as the later tables
TABLE1 = ("Nguyen-2", "Koza-3", "Meier-3", "Meier-4", "Nguyen-9", "Burks")


def target_catalog() -> list[TargetSpec]:
    return list(_CATALOG)


def get_target(name: str) -> TargetSpec:
    try:
        return _BY_NAME[name.lower()]
    except KeyError:
        raise KeyError(f"unknown target {name!r}") from None


def catalog_json(indent: Optional[int] = 2) -> str:
    return json.dumps([t.to_dict() for t in _CATALOG], indent=indent)
