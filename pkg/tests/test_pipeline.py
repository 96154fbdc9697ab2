import csv
import json
from dataclasses import replace

import jsonschema
import numpy as np
import pytest

from qdsr import pipeline
from qdsr.expr import Expression, evaluate
from qdsr.grid import Archive, Individual, try_insert
from qdsr.outcome import RunOutcome, Stage
from qdsr.pipeline import (
    AGGREGATE_COLUMNS,
    REPORT_SCHEMA,
    RunConfig,
    execute_and_write,
    new_state,
    report_dict,
    run_experiment,
    run_single,
    run_step2_convert,
    run_step3,
    select_skeletons,
)
from qdsr.scalarfit import ScalarFitConfig
from qdsr.simplify import canonical_key

E = Expression.from_text
FIT = ScalarFitConfig(time_limit_s=None)


def small(target="Keijzer-1", **kw):
    base = dict(target=target, seed=0, init_pop=300, step1_iters=2, step3_iters=1, max_skeletons=8, fit=FIT)
    base.update(kw)
    return RunConfig(**base)


def test_config_validation():
    for bad in (dict(step1_iters=-1), dict(step3_iters=-1), dict(init_pop=0), dict(mode="fast"), dict(max_skeletons=0)):
        with pytest.raises(ValueError):
            small(**bad)
    cfg = small()
    assert cfg.resolved_max_len() == 15 and cfg.resolved_step1_max_len() == 25


def test_skeleton_dedup_and_order():
    a = Archive(25)
    try_insert(a, Individual(E("2 sin x * 1 x + /"), 0.3))
    try_insert(a, Individual(E("1 sin x * 2 1 * x + /"), 0.6))
    try_insert(a, Individual(E("x x *"), 0.1))
    assert len(a) == 3
    sks = select_skeletons(a, 15, 10)
    assert len(sks) == 2
    assert sks[0] == E("A0 x * A1 x + /")
    assert canonical_key(sks[1]) == canonical_key(E("x x *"))
    assert len(select_skeletons(a, 15, 1)) == 1
    # too long for the free-scalar grid
    assert [s.tokens for s in select_skeletons(a, 3, 10)] == [("x", "x", "*")]


def test_step1_only_with_no_iterations():
    out, state = run_single(small(mode="step1-only", step1_iters=0))
    assert not out.hit
    assert state.step1.eval_counter == 300 == out.n_evals_step1
    assert out.n_evals_cmaes == 0 and state.free is None
    assert len(state.step1) > 0


def test_keijzer1_never_hits_in_step1():
    out, _ = run_single(small(mode="step1-only", init_pop=1000, step1_iters=5))
    assert not out.hit and out.best_validation_nrmse > 1e-6


def test_meier3_step1_accounting():
    for seed in range(4):
        out, state = run_single(small("Meier-3", seed=seed, init_pop=4000, step1_iters=40))
        if out.hit:
            break
    assert out.hit and out.hit_stage is Stage.STEP1
    assert out.n_evals_at_hit == out.n_evals_step1 == state.hit.eval_count_at_birth
    assert out.n_evals_cmaes == 0 and state.free is None
    assert out.best_validation_nrmse <= 1e-6


def _korns7_state(seed, restarts):
    state = new_state(small("Korns-7", seed=seed, fit=ScalarFitConfig(time_limit_s=None, restarts=restarts)))
    state.step1 = Archive(25)
    try_insert(state.step1, Individual(E("2 1 x 2 * exp - *"), 0.5))
    return state


def test_step2_single_fit_of_symbolic_target():
    # the only step-1 elite is the target up to its constants, so step 2 makes
    # exactly one fit; whether that fit lands depends on the CMA-ES start
    hits = 0
    for seed in range(10):
        state = _korns7_state(seed, restarts=16)
        free = run_step2_convert(state)
        assert free.eval_counter == 1 and state.evals_cmaes == 1
        if state.hit is not None:
            hits += 1
            assert state.hit_stage is Stage.STEP3
            assert state.hit.validation_nrmse <= 1e-6
            # a hit in step 2 leaves nothing for step 3 to do
            run_step3(state)
            assert state.evals_cmaes == 1
    assert hits >= 3


def test_q_zero_stops_after_step2():
    out, state = run_single(small("Korns-7", step3_iters=0, max_skeletons=5))
    assert out.n_evals_cmaes <= 5
    assert state.free.eval_counter == out.n_evals_cmaes


def test_step3_accounting_and_early_exit():
    cfg = small("Korns-7", init_pop=500, step1_iters=3, step3_iters=30, max_skeletons=32)
    for seed in range(3):
        out, state = run_single(replace(cfg, seed=seed))
        if out.hit:
            break
    assert out.hit and out.hit_stage is Stage.STEP3
    assert out.n_evals_at_hit == out.n_evals_cmaes == state.hit.eval_count_at_birth
    assert out.n_evals_step1 == state.step1.eval_counter > 0
    assert out.best_validation_nrmse <= 1e-6
    # the recovered constants, read off as amplitude f(inf) and rate
    best = E(out.best_expression)
    amp = evaluate(best, (200.0,), out.best_scalars).value
    rate = -np.log(1 - evaluate(best, (1.0,), out.best_scalars).value / amp)
    assert amp == pytest.approx(213.80940889, rel=1e-6)
    assert rate == pytest.approx(0.54723748542, rel=1e-6)


def test_cmaes_budget_caps_fits():
    out, state = run_single(small(step3_iters=20, cmaes_budget=15))
    assert out.n_evals_cmaes <= 15


def test_pooled_matches_serial():
    cfg = small(max_skeletons=6, step3_iters=1)
    a, _ = run_single(cfg)
    b, _ = run_single(replace(cfg, workers=2))
    assert report_dict(cfg, a)["outcome"] == report_dict(cfg, b)["outcome"]


def test_gp_mode():
    out, _ = run_single(small("Keijzer-1", mode="gp-baseline", budget_evals=3000))
    assert out.mode == "gp-baseline" and not out.hit
    assert out.n_evals_step1 == 3000 and out.n_evals_cmaes == 0


def test_hit_requires_small_nrmse():
    with pytest.raises(ValueError):
        RunOutcome("t", 0, "full", hit=True, hit_stage=Stage.STEP1, best_validation_nrmse=1e-3)


def test_reports_are_byte_identical(tmp_path):
    cfg = small()
    execute_and_write(cfg, tmp_path / "a")
    execute_and_write(cfg, tmp_path / "b")
    da = pipeline.run_dir(tmp_path / "a", "Keijzer-1", "full", 0)
    db = pipeline.run_dir(tmp_path / "b", "Keijzer-1", "full", 0)
    for name in ("report.json", "archive_step1.csv", "archive_free.csv", "curve.csv"):
        assert (da / name).read_bytes() == (db / name).read_bytes(), name
    assert (da / "timing.json").exists()


def test_report_schema(tmp_path):
    cfg = small(mode="step1-only")
    execute_and_write(cfg, tmp_path)
    rep = json.loads((pipeline.run_dir(tmp_path, "Keijzer-1", "step1-only", 0) / "report.json").read_text())
    jsonschema.validate(rep, REPORT_SCHEMA)
    assert rep["schema_version"] == pipeline.REPORT_VERSION
    assert "wall_time_s" not in rep["outcome"]
    rep["outcome"]["hit"] = "yes"
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate(rep, REPORT_SCHEMA)


def test_curve_file(tmp_path):
    execute_and_write(small(mode="step1-only"), tmp_path)
    d = pipeline.run_dir(tmp_path, "Keijzer-1", "step1-only", 0)
    rows = list(csv.DictReader(open(d / "curve.csv")))
    assert list(rows[0]) == ["x", "target", "prediction"]
    # Keijzer-1 validation grid E[0, 10, 0.05]
    assert len(rows) == 201
    xs = [float(r["x"]) for r in rows]
    assert xs == sorted(xs)


def test_experiment_survives_a_crash(tmp_path, monkeypatch):
    real = pipeline.run_single

    def flaky(cfg):
        if cfg.seed == 1:
            raise RuntimeError("boom")
        return real(cfg)

    monkeypatch.setattr(pipeline, "run_single", flaky)
    res = run_experiment(["Keijzer-1"], 2, small(mode="step1-only", step1_iters=0), tmp_path)
    outs = res["Keijzer-1"]
    assert outs[0].error is None and outs[1].error == "RuntimeError: boom"
    rows = list(csv.DictReader(open(tmp_path / "Keijzer-1" / "step1-only" / "aggregate.csv")))
    assert tuple(rows[0]) == AGGREGATE_COLUMNS
    assert rows[0]["runs"] == "1" and rows[0]["errors"] == "1"
    rep = json.loads((tmp_path / "Keijzer-1" / "step1-only" / "seed_1" / "report.json").read_text())
    assert rep["outcome"]["error"] == "RuntimeError: boom"


def test_aggregate_counts():
    outs = [
        RunOutcome("T", 0, "full", hit=True, hit_stage=Stage.STEP1, n_evals_at_hit=100, best_validation_nrmse=0.0),
        RunOutcome("T", 1, "full", hit=True, hit_stage=Stage.STEP3, n_evals_at_hit=10, best_validation_nrmse=0.0),
        RunOutcome("T", 2, "full", hit=True, hit_stage=Stage.STEP3, n_evals_at_hit=30, best_validation_nrmse=0.0),
        RunOutcome("T", 3, "full", best_validation_nrmse=0.5),
    ]
    agg = pipeline.aggregate(outs)
    assert agg["hits_step1"] == 1 and agg["hits_cmaes"] == 2 and agg["hits_total"] == 3
    assert agg["hit_rate_total"] == 0.75
    assert agg["mean_evals_cmaes_at_hit"] == 20
    assert agg["mean_nrmse_miss"] == 0.5
    assert np.isclose(agg["hit_rate_step1"], 0.25)
