"""The three-step search and the experiment harness around it.

Step 1 runs MAP-Elites with the integer scalars 1 and 2 and a length limit
of L + 10. Step 2 turns the step-1 elites into free-scalar skeletons, fits
each by CMA-ES and least squares, and bins them into a fresh archive with
length limit L. Step 3 continues MAP-Elites on that archive, fitting every
child. The run stops at the first validation hit.
"""
from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from .benchmarks import TargetSpec, get_target
from .evaluate import FreeEvaluator, IntegerEvaluator, fit_and_score, validation_nrmse
from .expr import Primitives, ScalarMode, random_expression, render_infix
from .fitness import Dataset, predict
from .gp import GpConfig, run_plain_gp
from .grid import Archive, Individual, evaluate_batch, map_elites_iteration
from .outcome import RunOutcome, Stage
from .scalarfit import ScalarFitConfig
from .simplify import Degenerate, canonical_key, to_skeleton
from .variation import VariationConfig

MODES = ("full", "step1-only", "gp-baseline")
REPORT_VERSION = 1
OUT_DIR_ENV = "QDSR_OUT_DIR"


@dataclass(frozen=True)
class RunConfig:
    target: str
    seed: int = 0
    mode: str = "full"
    init_pop: int = 4000
    step1_iters: int = 150
    step3_iters: int = 150
    max_skeletons: int = 256
    step1_max_len: Optional[int] = None  # defaults to L + 10
    max_len: Optional[int] = None  # defaults to L
    max_nested: int = 1
    simplify: bool = False
    workers: int = 1
    budget_evals: Optional[int] = None
    cmaes_budget: Optional[int] = None
    fit: ScalarFitConfig = field(default_factory=ScalarFitConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.step1_iters < 0 or self.step3_iters < 0:
            raise ValueError("iteration counts must be >= 0")
        if self.init_pop < 1:
            raise ValueError("init_pop must be >= 1")
        if self.max_skeletons < 1:
            raise ValueError("max_skeletons must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def spec(self) -> TargetSpec:
        return get_target(self.target)

    def resolved_max_len(self) -> int:
        return self.max_len if self.max_len is not None else self.spec.max_len_cmaes

    def resolved_step1_max_len(self) -> int:
        return self.step1_max_len if self.step1_max_len is not None else self.spec.max_len_step1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fit"] = asdict(self.fit)
        return d


def make_datasets(spec: TargetSpec, seed: int) -> tuple[Dataset, Dataset]:
    """Training and validation sets from independent streams of ``seed``."""
    train = spec.training_set(np.random.default_rng([seed, 1]))
    val = spec.validation_set(np.random.default_rng([seed, 2]))
    return train, val


# ------------------------------------------------------------------ workers

_WORKER: dict = {}


def _init_worker(train, val, cfg):
    _WORKER.update(train=train, val=val, cfg=cfg)


def _fit_job(args):
    expr, seed = args
    return fit_and_score(expr, _WORKER["train"], _WORKER["val"], _WORKER["cfg"], seed)


class PooledFreeEvaluator(FreeEvaluator):
    """``FreeEvaluator`` that hands chunks of fits to a process pool.

    Seeds are drawn in genome order before dispatch, so results match the
    serial evaluator exactly.
    """

    def __init__(self, train, validation, fit_cfg, rng, pool: ProcessPoolExecutor, workers: int):
        super().__init__(train, validation, fit_cfg, rng)
        self.pool = pool
        self.chunk_size = 2 * workers

    def evaluate_many(self, exprs) -> list[Individual]:
        seeds = [int(self.rng.integers(2**63)) for _ in exprs]
        return list(self.pool.map(_fit_job, zip(exprs, seeds)))


# -------------------------------------------------------------------- steps


@dataclass
class RunState:
    cfg: RunConfig
    spec: TargetSpec
    train: Dataset
    validation: Dataset
    rng: np.random.Generator
    step1: Optional[Archive] = None
    free: Optional[Archive] = None
    hit: Optional[Individual] = None
    hit_stage: Optional[Stage] = None
    pool: Optional[ProcessPoolExecutor] = None

    @property
    def evals_step1(self) -> int:
        return self.step1.eval_counter if self.step1 else 0

    @property
    def evals_cmaes(self) -> int:
        return self.free.eval_counter if self.free else 0


def new_state(cfg: RunConfig) -> RunState:
    spec = cfg.spec
    train, val = make_datasets(spec, cfg.seed)
    return RunState(cfg, spec, train, val, np.random.default_rng([cfg.seed, 0]))


def run_step1(state: RunState) -> Archive:
    """MAP-Elites with integer scalars; returns early on a hit."""
    cfg, rng = state.cfg, state.rng
    L1 = cfg.resolved_step1_max_len()
    prims = Primitives(state.spec.n_vars, ScalarMode.INTEGER)
    vcfg = VariationConfig(max_len=L1, max_nested=cfg.max_nested, prims=prims)
    evaluator = IntegerEvaluator(state.train, state.validation)
    archive = Archive(L1)
    state.step1 = archive
    init = (random_expression(L1, cfg.max_nested, rng, prims) for _ in range(cfg.init_pop))
    res = evaluate_batch(archive, init, evaluator, cfg.simplify, cfg.budget_evals)
    for _ in range(cfg.step1_iters):
        if res.hit is not None or _spent(archive, cfg.budget_evals) or not archive.bins:
            break
        res = map_elites_iteration(archive, evaluator, vcfg, rng, cfg.simplify, cfg.budget_evals)
    if res.hit is not None:
        state.hit, state.hit_stage = res.hit, Stage.STEP1
    return archive


def _spent(archive: Archive, budget: Optional[int]) -> bool:
    return budget is not None and archive.eval_counter >= budget


def _free_evaluator(state: RunState) -> FreeEvaluator:
    if state.pool is not None:
        return PooledFreeEvaluator(state.train, state.validation, state.cfg.fit, state.rng, state.pool, state.cfg.workers)
    return FreeEvaluator(state.train, state.validation, state.cfg.fit, state.rng)


def select_skeletons(archive: Archive, max_len: int, max_skeletons: int) -> list:
    """Skeletonize every elite, best reward first, dropping duplicates and
    skeletons longer than ``max_len``; keep at most ``max_skeletons``."""
    elites = sorted(archive.bins.items())
    elites.sort(key=lambda kv: -kv[1].reward)
    seen, out = set(), []
    for _, ind in elites:
        try:
            sk = to_skeleton(ind.expr)
        except Degenerate:
            continue
        if sk.length > max_len or not sk.has_variable():
            continue
        key = canonical_key(sk)
        if key in seen:
            continue
        seen.add(key)
        out.append(sk)
        if len(out) >= max_skeletons:
            break
    return out


def run_step2_convert(state: RunState) -> Archive:
    """Fit the skeletons of the step-1 elites into a fresh free-scalar archive."""
    cfg = state.cfg
    L = cfg.resolved_max_len()
    free = Archive(L)
    state.free = free
    skeletons = select_skeletons(state.step1, L, cfg.max_skeletons)
    res = evaluate_batch(free, skeletons, _free_evaluator(state), False, cfg.cmaes_budget)
    if res.hit is not None:
        state.hit, state.hit_stage = res.hit, Stage.STEP3
    return free


def run_step3(state: RunState) -> Archive:
    """MAP-Elites over skeletons, fitting every child; returns early on a hit."""
    cfg, rng, free = state.cfg, state.rng, state.free
    if state.hit is not None:
        return free
    prims = Primitives(state.spec.n_vars, ScalarMode.FREE)
    vcfg = VariationConfig(max_len=cfg.resolved_max_len(), max_nested=cfg.max_nested, prims=prims)
    evaluator = _free_evaluator(state)
    for _ in range(cfg.step3_iters):
        if not free.bins or _spent(free, cfg.cmaes_budget):
            break
        res = map_elites_iteration(free, evaluator, vcfg, rng, cfg.simplify, cfg.cmaes_budget)
        if res.hit is not None:
            state.hit, state.hit_stage = res.hit, Stage.STEP3
            break
    return free


def _best(state: RunState) -> Optional[Individual]:
    if state.hit is not None:
        return state.hit
    for arch in (state.free, state.step1):
        if arch is not None and arch.bins:
            return arch.best()
    return None


def _outcome_from(state: RunState, best: Optional[Individual], mode: str) -> RunOutcome:
    out = RunOutcome(
        target=state.spec.name,
        seed=state.cfg.seed,
        mode=mode,
        n_evals_step1=state.evals_step1,
        n_evals_cmaes=state.evals_cmaes,
    )
    if best is not None:
        v = best.validation_nrmse if best.validation_nrmse is not None else validation_nrmse(best, state.validation)
        out.best_expression = best.expr.to_text()
        out.best_infix = render_infix(best.expr, best.scalars or None)
        out.best_scalars = [float(a) for a in best.scalars]
        out.best_reward = float(best.reward)
        out.best_validation_nrmse = v
    if state.hit is not None:
        out.hit = True
        out.hit_stage = state.hit_stage
        out.n_evals_at_hit = state.evals_step1 if state.hit_stage is Stage.STEP1 else state.evals_cmaes
    return out


def run_single(cfg: RunConfig) -> tuple[RunOutcome, RunState]:
    """One seeded run in the configured mode."""
    t0 = time.perf_counter()
    state = new_state(cfg)
    if cfg.mode == "gp-baseline":
        gcfg = GpConfig(
            max_len=cfg.resolved_step1_max_len(),
            max_nested=cfg.max_nested,
            eval_budget=cfg.budget_evals if cfg.budget_evals is not None else 100_000,
        )
        out, _ = run_plain_gp(state.spec, gcfg, state.rng, state.train, state.validation)
        out.seed = cfg.seed
        out.wall_time_s = time.perf_counter() - t0
        return out, state

    pool = None
    if cfg.workers > 1 and cfg.mode == "full":
        pool = ProcessPoolExecutor(cfg.workers, initializer=_init_worker, initargs=(state.train, state.validation, cfg.fit))
        state.pool = pool
    try:
        run_step1(state)
        if cfg.mode == "full" and state.hit is None and state.step1.bins:
            run_step2_convert(state)
            run_step3(state)
    finally:
        if pool is not None:
            pool.shutdown()
            state.pool = None
    out = _outcome_from(state, _best(state), cfg.mode)
    out.wall_time_s = time.perf_counter() - t0
    return out, state


# ------------------------------------------------------------------ reports

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "qdsr run report",
    "type": "object",
    "required": ["schema_version", "config", "outcome"],
    "properties": {
        "schema_version": {"const": REPORT_VERSION},
        "config": {"type": "object", "required": ["target", "seed", "mode"]},
        "outcome": {
            "type": "object",
            "required": [
                "target",
                "seed",
                "mode",
                "hit",
                "hit_stage",
                "n_evals_at_hit",
                "n_evals_step1",
                "n_evals_cmaes",
                "best_expression",
                "best_infix",
                "best_scalars",
                "best_reward",
                "best_validation_nrmse",
                "archive_dump_path",
                "error",
            ],
            "properties": {
                "target": {"type": "string"},
                "seed": {"type": "integer"},
                "mode": {"enum": list(MODES)},
                "hit": {"type": "boolean"},
                "hit_stage": {"enum": ["step1", "step3", None]},
                "n_evals_at_hit": {"type": ["integer", "null"], "minimum": 0},
                "n_evals_step1": {"type": "integer", "minimum": 0},
                "n_evals_cmaes": {"type": "integer", "minimum": 0},
                "best_expression": {"type": "string"},
                "best_infix": {"type": "string"},
                "best_scalars": {"type": "array", "items": {"type": "number"}},
                "best_reward": {"type": "number"},
                "best_validation_nrmse": {"type": ["number", "null"]},
                "archive_dump_path": {"type": ["string", "null"]},
                "error": {"type": ["string", "null"]},
            },
            "additionalProperties": False,
        },
    },
}

AGGREGATE_COLUMNS = (
    "target",
    "mode",
    "runs",
    "errors",
    "hits_step1",
    "hit_rate_step1",
    "mean_evals_step1_at_hit",
    "hits_cmaes",
    "hit_rate_cmaes",
    "mean_evals_cmaes_at_hit",
    "hits_total",
    "hit_rate_total",
    "mean_nrmse_miss",
)


def report_dict(cfg: RunConfig, out: RunOutcome) -> dict:
    d = {"schema_version": REPORT_VERSION, "config": cfg.to_dict(), "outcome": out.to_dict(include_timing=False)}
    jsonschema.validate(d, REPORT_SCHEMA)
    return d


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o))


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")


def write_curve(path: Path, ind: Individual, data: Dataset) -> None:
    """Points of ``data`` with target and prediction, sorted by the inputs."""
    pred = predict(ind.expr, np.asarray(ind.scalars), data)
    order = np.lexsort(data.points.T[::-1])
    names = ["x", "y", "z"][: data.n_dims]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*names, "target", "prediction"])
        for i in order:
            w.writerow([*(repr(float(v)) for v in data.points[i]), repr(float(data.targets[i])), repr(float(pred[i]))])


def run_dir(out_dir: Path, target: str, mode: str, seed: int) -> Path:
    return Path(out_dir) / target / mode / f"seed_{seed}"


def execute_and_write(cfg: RunConfig, out_dir) -> RunOutcome:
    """Run one seed and write its report, archive dumps and curve; a crash
    is recorded in the outcome instead of propagating."""
    d = run_dir(Path(out_dir), cfg.target, cfg.mode, cfg.seed)
    d.mkdir(parents=True, exist_ok=True)
    try:
        out, state = run_single(cfg)
    except Exception as exc:  # noqa: BLE001 - a batch must survive one bad run
        out, state = RunOutcome(cfg.target, cfg.seed, cfg.mode, error=f"{type(exc).__name__}: {exc}"), None
    if state is not None:
        last = state.free if state.free is not None else state.step1
        if state.step1 is not None:
            state.step1.dump_csv(d / "archive_step1.csv")
        if state.free is not None:
            state.free.dump_csv(d / "archive_free.csv")
        if last is not None:
            out.archive_dump_path = str((d / ("archive_free.csv" if last is state.free else "archive_step1.csv")).name)
        best = _best(state)
        if best is not None:
            write_curve(d / "curve.csv", best, state.validation)
    write_json(d / "report.json", report_dict(cfg, out))
    write_json(d / "timing.json", {"wall_time_s": out.wall_time_s})
    return out


def aggregate(outcomes: list[RunOutcome]) -> dict:
    ok = [o for o in outcomes if o.error is None]
    n = len(ok)
    h1 = [o for o in ok if o.hit and o.hit_stage is Stage.STEP1]
    h3 = [o for o in ok if o.hit and o.hit_stage is Stage.STEP3]
    miss = [o.best_validation_nrmse for o in ok if not o.hit and o.best_validation_nrmse is not None]

    def mean(xs):
        return float(np.mean(xs)) if xs else None

    first = outcomes[0]
    return {
        "target": first.target,
        "mode": first.mode,
        "runs": n,
        "errors": len(outcomes) - n,
        "hits_step1": len(h1),
        "hit_rate_step1": len(h1) / n if n else None,
        "mean_evals_step1_at_hit": mean([o.n_evals_at_hit for o in h1]),
        "hits_cmaes": len(h3),
        "hit_rate_cmaes": len(h3) / n if n else None,
        "mean_evals_cmaes_at_hit": mean([o.n_evals_at_hit for o in h3]),
        "hits_total": len(h1) + len(h3),
        "hit_rate_total": (len(h1) + len(h3)) / n if n else None,
        "mean_nrmse_miss": mean(miss),
    }


def write_aggregate(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=AGGREGATE_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else v) for k, v in r.items()})


def _execute_star(args):
    return execute_and_write(*args)


def run_experiment(
    targets: list[str],
    runs_per_target: int,
    base: RunConfig,
    out_dir=None,
    parallel_runs: int = 1,
) -> dict[str, list[RunOutcome]]:
    """Independent seeded runs ``base.seed .. base.seed + runs - 1`` per target.

    Writes one directory per run plus ``aggregate.csv`` per target and mode.
    """
    out_dir = Path(out_dir or os.environ.get(OUT_DIR_ENV, "qdsr_runs"))
    results: dict[str, list[RunOutcome]] = {}
    for name in targets:
        spec = get_target(name)
        jobs = [(replace(base, target=spec.name, seed=base.seed + k), out_dir) for k in range(runs_per_target)]
        if parallel_runs > 1:
            with ProcessPoolExecutor(parallel_runs) as ex:
                outs = list(ex.map(_execute_star, jobs))
        else:
            outs = [_execute_star(j) for j in jobs]
        results[spec.name] = outs
        agg_dir = out_dir / spec.name / base.mode
        write_aggregate(agg_dir / "aggregate.csv", [aggregate(outs)])
    return results


def dump_grid_slice(run_directory, max_function_bin: int = 1, out_path=None, source: Optional[str] = None) -> Path:
    """Filter a run's archive dump to ``function_bin <= max_function_bin``."""
    run_directory = Path(run_directory)
    if source is None:
        rep = json.loads((run_directory / "report.json").read_text())
        source = rep["outcome"]["archive_dump_path"]
        if not source:
            raise FileNotFoundError(f"no archive dump recorded in {run_directory}")
    src = run_directory / source
    out_path = Path(out_path) if out_path else run_directory / f"slice_fbin_le_{max_function_bin}.csv"
    with open(src, newline="") as fin, open(out_path, "w", newline="") as fout:
        r = csv.DictReader(fin)
        w = csv.DictWriter(fout, fieldnames=r.fieldnames)
        w.writeheader()
        for row in r:
            if int(row["function_bin"]) <= max_function_bin:
                w.writerow(row)
    return out_path


def config_fields() -> list[str]:
    return [f.name for f in fields(RunConfig)]
