"""Command line entry point: ``qdsr run | catalog | dump-grid``."""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .benchmarks import catalog_json, get_target, target_catalog
from .pipeline import MODES, OUT_DIR_ENV, RunConfig, dump_grid_slice, run_experiment
from .scalarfit import ScalarFitConfig

# config-file keys that are not plain argparse destinations
_BOOL_KEYS = {"simplify", "no_refine"}


def read_config_file(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment. Keys use the long flag
    names with either dashes or underscores."""
    out = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = value
    return out


def _run_parser(sub) -> argparse.ArgumentParser:
    p = sub.add_parser("run", help="run one or more targets")
    p.add_argument("--config", help="key = value file mirroring these flags")
    p.add_argument("--target", action="append", help="target name, comma list or 'all'; repeatable")
    p.add_argument("--seed", type=int, default=0, help="first seed; run k uses seed + k")
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--mode", choices=MODES, default="full")
    p.add_argument("--init-pop", type=int, default=4000)
    p.add_argument("--step1-iters", type=int, default=150, help="P")
    p.add_argument("--step3-iters", type=int, default=150, help="Q")
    p.add_argument("--max-skeletons", type=int, default=256, help="M")
    p.add_argument("--max-len", type=int, help="length limit with free scalars (default: target's L)")
    p.add_argument("--step1-max-len", type=int, help="length limit in step 1 (default: L + 10)")
    p.add_argument("--max-nested", type=int, default=1, help="K")
    p.add_argument("--simplify", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--budget-evals", type=int, help="cap on integer-scalar evaluations")
    p.add_argument("--cmaes-budget", type=int, help="cap on fitted skeletons in steps 2 and 3")
    p.add_argument("--cma-max-iter", type=int, default=5000)
    p.add_argument("--cma-time-limit", type=float, default=30.0)
    p.add_argument("--cma-restarts", type=int, default=1)
    p.add_argument("--no-refine", action="store_true", help="skip least-squares refinement")
    p.add_argument("--out", help=f"output directory (default: ${OUT_DIR_ENV} or ./qdsr_runs)")
    return p


def _apply_config(p: argparse.ArgumentParser, argv) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    actions = {a.dest: a for a in p._actions}
    defaults = {}
    for key, value in read_config_file(known.config).items():
        if key not in actions or key == "config":
            raise SystemExit(f"unknown config key {key!r}")
        act = actions[key]
        if key in _BOOL_KEYS:
            defaults[key] = value.lower() in ("1", "true", "yes", "on")
        elif key == "target":
            # kept apart so that --target on the command line replaces it
            defaults["config_target"] = value
        else:
            defaults[key] = act.type(value) if act.type else value
    p.set_defaults(**defaults)


def _targets(raw, fallback=None) -> list[str]:
    raw = raw or ([fallback] if fallback else [])
    if not raw:
        raise SystemExit("run needs at least one --target")
    names = [n.strip() for item in raw for n in item.split(",") if n.strip()]
    if any(n.lower() == "all" for n in names):
        return [t.name for t in target_catalog() if not t.smoke]
    for n in names:
        try:
            get_target(n)
        except KeyError as exc:
            raise SystemExit(str(exc)) from None
    return names


def _cmd_run(a) -> int:
    fit = ScalarFitConfig(
        max_iterations=a.cma_max_iter,
        time_limit_s=a.cma_time_limit if a.cma_time_limit > 0 else None,
        restarts=a.cma_restarts,
        refine=not a.no_refine,
    )
    targets = _targets(a.target, getattr(a, "config_target", None))
    # several seeds: one worker per run; a single seed: workers share its fits
    per_run_workers = a.workers if a.runs == 1 else 1
    base = RunConfig(
        target=targets[0],
        seed=a.seed,
        mode=a.mode,
        init_pop=a.init_pop,
        step1_iters=a.step1_iters,
        step3_iters=a.step3_iters,
        max_skeletons=a.max_skeletons,
        step1_max_len=a.step1_max_len,
        max_len=a.max_len,
        max_nested=a.max_nested,
        simplify=a.simplify,
        workers=per_run_workers,
        budget_evals=a.budget_evals,
        cmaes_budget=a.cmaes_budget,
        fit=fit,
    )
    out_dir = Path(a.out or os.environ.get(OUT_DIR_ENV, "qdsr_runs"))
    results = run_experiment(targets, a.runs, base, out_dir, parallel_runs=a.workers if a.runs > 1 else 1)
    for name, outs in results.items():
        hits = sum(o.hit for o in outs)
        print(f"{name}: {hits}/{len(outs)} hits -> {out_dir / name / a.mode}")
        for o in outs:
            status = o.error or (f"hit at {o.hit_stage.value}" if o.hit else "miss")
            print(f"  seed {o.seed}: {status}; nrmse={o.best_validation_nrmse}; {o.best_infix}")
    return 0


def _cmd_catalog(a) -> int:
    if a.json:
        print(catalog_json())
        return 0
    for t in target_catalog():
        d = t.to_dict()
        flag = " (expected fail)" if t.expected_fail else " (smoke)" if t.smoke else ""
        print(f"{t.name:16s} L={t.max_len:<3d} {d['formula']}{flag}")
        print(f"{'':16s} train {d['train_text']}; validation {d['validation_text']}")
    return 0


def _cmd_dump_grid(a) -> int:
    path = dump_grid_slice(a.run_dir, a.function_bin_max, a.output, a.source)
    print(path)
    return 0


def build_parser(argv=None) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qdsr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    run = _run_parser(sub)
    if argv and argv[0] == "run":
        _apply_config(run, argv[1:])
    run.set_defaults(func=_cmd_run)

    cat = sub.add_parser("catalog", help="list the benchmark targets")
    cat.add_argument("--json", action="store_true")
    cat.set_defaults(func=_cmd_catalog)

    dump = sub.add_parser("dump-grid", help="archive slice of one run as CSV")
    dump.add_argument("run_dir")
    dump.add_argument("--function-bin-max", type=int, default=1)
    dump.add_argument("--csv", action="store_true", help="CSV output (the only format)")
    dump.add_argument("--source", help="archive CSV inside the run dir (default: the one in report.json)")
    dump.add_argument("-o", "--output")
    dump.set_defaults(func=_cmd_dump_grid)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser(argv).parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
