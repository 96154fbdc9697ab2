import csv
import json

import pytest

from qdsr.cli import main, read_config_file
from qdsr.pipeline import OUT_DIR_ENV

TINY = ["--init-pop", "200", "--step1-iters", "1", "--step3-iters", "0", "--max-skeletons", "3"]


def test_catalog_json(capsys):
    assert main(["catalog", "--json"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert len(data) == 32 and {"name", "formula", "train", "validation", "max_len"} <= set(data[0])


def test_catalog_text(capsys):
    main(["catalog"])
    out = capsys.readouterr().out
    assert "Nguyen-2" in out and "expected fail" in out


def test_run_and_dump_grid(tmp_path, capsys):
    out = tmp_path / "runs"
    assert main(["run", "--target", "Keijzer-1", "--seed", "4", "--out", str(out), *TINY]) == 0
    d = out / "Keijzer-1" / "full" / "seed_4"
    rep = json.loads((d / "report.json").read_text())
    assert rep["config"]["seed"] == 4 and rep["config"]["init_pop"] == 200
    assert rep["outcome"]["archive_dump_path"] == "archive_free.csv"
    assert (out / "Keijzer-1" / "full" / "aggregate.csv").exists()
    capsys.readouterr()

    assert main(["dump-grid", str(d), "--function-bin-max", "0", "--csv", "--source", "archive_step1.csv"]) == 0
    path = capsys.readouterr().out.strip()
    rows = list(csv.DictReader(open(path)))
    assert rows and all(int(r["function_bin"]) == 0 for r in rows)


def test_multiple_runs_and_targets(tmp_path, capsys):
    out = tmp_path / "runs"
    main(["run", "--target", "Keijzer-1,Meier-3", "--runs", "2", "--mode", "step1-only", "--out", str(out), *TINY])
    for t in ("Keijzer-1", "Meier-3"):
        for s in (0, 1):
            assert (out / t / "step1-only" / f"seed_{s}" / "report.json").exists()
        rows = list(csv.DictReader(open(out / t / "step1-only" / "aggregate.csv")))
        assert rows[0]["runs"] == "2"


def test_config_file_and_override(tmp_path, monkeypatch):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "# desk-scale settings\n"
        "target = Meier-3\n"
        "mode = step1-only\n"
        "init-pop = 150\n"
        "step1_iters = 0\n"
        "simplify = true\n"
    )
    assert read_config_file(cfg)["init_pop"] == "150"
    monkeypatch.setenv(OUT_DIR_ENV, str(tmp_path / "env_out"))
    main(["run", "--config", str(cfg)])
    rep = json.loads((tmp_path / "env_out" / "Meier-3" / "step1-only" / "seed_0" / "report.json").read_text())
    assert rep["config"]["init_pop"] == 150 and rep["config"]["simplify"] is True

    # command-line flags win over the file
    main(["run", "--config", str(cfg), "--target", "Keijzer-1", "--init-pop", "120"])
    rep = json.loads((tmp_path / "env_out" / "Keijzer-1" / "step1-only" / "seed_0" / "report.json").read_text())
    assert rep["config"]["init_pop"] == 120


def test_bad_inputs(tmp_path):
    with pytest.raises(SystemExit):
        main(["run", "--target", "Nguyen-99"])
    with pytest.raises(SystemExit):
        main(["run"])
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = blue\n")
    with pytest.raises(SystemExit):
        main(["run", "--config", str(bad), "--target", "Keijzer-1"])
