"""Free-scalar fitting: CMA-ES followed by a local least-squares descent.

The CMA-ES here is the usual (mu/mu_w, lambda) strategy with cumulative
step-size adaptation and rank-one plus rank-mu covariance updates. The
objective is evaluated on the whole population at once, which is what makes
the per-skeleton cost tolerable: one vectorised pass over the expression per
generation.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.optimize import least_squares

from .expr import Expression, evaluate_array
from .fitness import Dataset

PENALTY = 1e100


@dataclass(frozen=True)
class ScalarFitConfig:
    mean_init_range: tuple[float, float] = (-1.0, 1.0)
    sigma_init_range: tuple[float, float] = (1.0, 5.0)
    population: Optional[int] = None
    max_iterations: int = 5000
    time_limit_s: Optional[float] = 30.0
    restarts: int = 1
    tol_sigma: float = 1e-12
    tol_fun: float = 1e-12
    refine: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        lo, hi = self.sigma_init_range
        if not 0 < lo <= hi:
            raise ValueError("sigma_init_range must be positive and ordered")


class CmaResult(NamedTuple):
    x: np.ndarray
    fun: float
    fevals: int
    iterations: int
    stop: str


def cmaes_minimize(
    objective: Callable,
    n: int,
    cfg: ScalarFitConfig,
    rng,
    vectorized: bool = True,
    x0=None,
    sigma0: Optional[float] = None,
    trace: Optional[list] = None,
) -> CmaResult:
    """Minimise ``objective`` over R^n and return the best point ever sampled.

    With ``vectorized`` the objective maps a (lambda, n) matrix to lambda
    values; otherwise it is called once per row. The start mean and step
    size are drawn from the configured windows unless given.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not vectorized:
        f1 = objective
        objective = lambda X: np.array([f1(x) for x in X])  # noqa: E731

    lam = cfg.population or 4 + int(3 * math.log(n))
    mu = lam // 2
    w = math.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    w /= w.sum()
    mueff = 1.0 / np.sum(w**2)
    cc = (4 + mueff / n) / (n + 4 + 2 * mueff / n)
    cs = (mueff + 2) / (n + mueff + 5)
    c1 = 2 / ((n + 1.3) ** 2 + mueff)
    cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((n + 2) ** 2 + mueff))
    damps = 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (n + 1)) - 1) + cs
    chin = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))

    lo, hi = cfg.mean_init_range
    m = rng.uniform(lo, hi, size=n) if x0 is None else np.asarray(x0, dtype=float).copy()
    sigma = rng.uniform(*cfg.sigma_init_range) if sigma0 is None else float(sigma0)
    pc = np.zeros(n)
    ps = np.zeros(n)
    C = np.eye(n)
    B = np.eye(n)
    D = np.ones(n)

    best_x, best_f = m.copy(), math.inf
    fevals = 0
    hist: list[float] = []
    hist_len = 10 + int(math.ceil(30 * n / lam))
    t0 = time.monotonic()
    stop = "max_iterations"
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        z = rng.standard_normal((lam, n))
        y = (z * D) @ B.T
        X = m + sigma * y
        f = np.asarray(objective(X), dtype=float)
        f = np.where(np.isfinite(f), f, PENALTY)
        fevals += lam
        order = np.argsort(f, kind="stable")
        if f[order[0]] < best_f:
            best_f = float(f[order[0]])
            best_x = X[order[0]].copy()
        if trace is not None:
            trace.append(best_f)

        ysel = y[order[:mu]]
        yw = w @ ysel
        m = m + sigma * yw
        # C^(-1/2) yw without forming C^(-1/2)
        ps = (1 - cs) * ps + math.sqrt(cs * (2 - cs) * mueff) * (B @ ((yw @ B) / D))
        psn = math.sqrt(float(ps @ ps))
        hsig = psn / math.sqrt(1 - (1 - cs) ** (2 * it)) / chin < 1.4 + 2 / (n + 1)
        pc = (1 - cc) * pc + hsig * math.sqrt(cc * (2 - cc) * mueff) * yw
        C = (
            (1 - c1 - cmu) * C
            + c1 * (pc[:, None] * pc + (1 - hsig) * cc * (2 - cc) * C)
            + cmu * (ysel.T * w) @ ysel
        )
        sigma *= math.exp((cs / damps) * (psn / chin - 1))
        sigma = min(sigma, 1e50)

        C = (C + C.T) / 2
        evals, B = np.linalg.eigh(C)
        # ascending order; a NaN also fails this test
        if not evals[0] > 0:
            stop = "ill_conditioned"
            break
        D = np.sqrt(evals)

        hist.append(float(f[order[0]]))
        if sigma * D[-1] < cfg.tol_sigma:
            stop = "tol_sigma"
            break
        if D[-1] > 1e7 * D[0]:
            stop = "condition"
            break
        if len(hist) >= hist_len:
            recent = hist[-hist_len:]
            # relative above 1 so that stagnation means the same at any target scale
            tol = cfg.tol_fun * max(1.0, abs(hist[-1]))
            if max(recent) - min(recent) <= tol and f[order[-1]] - f[order[0]] <= tol:
                stop = "tol_fun"
                break
        if cfg.time_limit_s is not None and time.monotonic() - t0 > cfg.time_limit_s:
            stop = "time_limit"
            break
    return CmaResult(best_x, best_f, fevals, it, stop)


def mse_objective(expr: Expression, data: Dataset) -> Callable:
    """Vectorised mean-squared error; failed evaluations cost ``PENALTY``."""
    X, t = data.points, data.targets
    n_pts = len(t)

    def f(S):
        V = evaluate_array(expr, X, S)
        with np.errstate(all="ignore"):
            r = V - t
            m = (r * r).sum(axis=-1) / n_pts
        return np.where(np.isfinite(m), np.minimum(m, PENALTY), PENALTY)

    return f


def refine_least_squares(skeleton: Expression, start, data: Dataset, max_iter: int = 200) -> np.ndarray:
    """Levenberg-Marquardt descent on the squared residual from ``start``.

    The result never has a larger residual than ``start``.
    """
    start = np.asarray(start, dtype=float)
    X, t = data.points, data.targets

    def resid(a):
        with np.errstate(all="ignore"):
            r = evaluate_array(skeleton, X, a) - t
        return np.where(np.isfinite(r), r, 1e50)

    def sse(a):
        r = evaluate_array(skeleton, X, a) - t
        with np.errstate(all="ignore"):
            v = float(np.sum(r * r))
        return v if math.isfinite(v) else math.inf

    s0 = sse(start)
    if not math.isfinite(s0):
        return start
    try:
        sol = least_squares(
            resid,
            start,
            method="lm",
            xtol=1e-15,
            ftol=1e-15,
            gtol=1e-15,
            max_nfev=max_iter * (len(start) + 1),
        )
    except (ValueError, np.linalg.LinAlgError):
        return start
    x = sol.x
    if not np.all(np.isfinite(x)) or sse(x) > s0:
        return start
    return x


@dataclass(frozen=True)
class FitResult:
    scalars: np.ndarray
    mse: float
    fevals: int
    refined: bool


def fit_scalars(skeleton: Expression, data: Dataset, cfg: ScalarFitConfig, rng) -> FitResult:
    """CMA-ES on the training MSE, then least squares from its best point."""
    n = skeleton.n_free
    if n == 0:
        return FitResult(np.zeros(0), _mse0(skeleton, data), 1, False)
    obj = mse_objective(skeleton, data)
    best = None
    fevals = 0
    for _ in range(max(1, cfg.restarts)):
        res = cmaes_minimize(obj, n, cfg, rng)
        fevals += res.fevals
        x, fx, refined = res.x, res.fun, False
        if cfg.refine:
            xr = refine_least_squares(skeleton, res.x, data)
            fr = float(obj(xr[None, :])[0])
            if fr < fx:
                x, fx, refined = xr, fr, True
        if best is None or fx < best.mse:
            best = FitResult(np.asarray(x, dtype=float), fx, fevals, refined)
    return FitResult(best.scalars, best.mse, fevals, best.refined)


def _mse0(expr: Expression, data: Dataset) -> float:
    V = evaluate_array(expr, data.points)
    with np.errstate(all="ignore"):
        m = float(np.mean((V - data.targets) ** 2))
    return min(m, PENALTY) if math.isfinite(m) else PENALTY
