import csv
import json
import re
import subprocess
import sys

import numpy as np
import pytest

from en2as import cli
from en2as.arch import CellSpec, lift, pretty, random_genotype, serialize
from en2as.config import ConfigError, parse_plan, parse_run_config
from en2as.novelty import Archive, dump_archive

TINY = """\
[search]
epochs = 2
archive_size = 5
budget = 12
population_size = 4
tournament_size = 2
retrain_epochs = 2

[novelty]
k = 3
n = 4
gamma = 0.5

[dataset]
name = moons
sizes = 64, 32, 32
"""

ORACLE = "\n[evaluator]\nkind = oracle\nmode = hash-smooth\nseed = 3\n"


@pytest.fixture(autouse=True)
def no_seed_env(monkeypatch):
    monkeypatch.delenv(cli.SEED_ENV, raising=False)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_config_parsing_types_and_defaults():
    rc = parse_run_config(TINY + "[space]\nops = zero, tanh\nnum_op_nodes = 3\n")
    assert rc.search.epochs == 2 and rc.search.lr == 0.05
    assert rc.search.novelty.gamma == 0.5
    assert rc.dataset.sizes == (64, 32, 32)
    assert rc.space.build() == CellSpec(1, 3, 1, ("zero", "tanh"), 1)
    assert rc.evaluator.build(rc.space.build()) is None


@pytest.mark.parametrize("text", [
    "[search]\nepoch = 3\n",
    "[searches]\nepochs = 3\n",
    "[search]\nepochs = three\n",
    "[search]\nepochs = 0\n",
    "[novelty]\nk = 0\n",
    "[dataset]\nname = spirals\n",
    "[evaluator]\nkind = table\n",
    "[search]\nepochs = 1\nepochs = 2\n",
    "no section header\n",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_run_config(text)


def test_plan_parsing():
    plan = parse_plan(TINY + "[plan]\nrepeats = 3\n")
    assert plan.repeats == 3 and len(plan.cells) == 6
    assert len({label for label, _ in plan.cells}) == 6
    plan = parse_plan(TINY + "[cell a]\ncontroller = random\n[cell b]\nselector = random-search\n")
    assert [label for label, _ in plan.cells] == ["a", "b"]
    assert plan.cells[0][1].controller == "random" and plan.cells[0][1].epochs == 2
    for bad in ("[plan]\nrepeats = 0\n", "[plan]\nrepeat = 2\n", "[cell a]\ncontroller = x\n",
                "[cell a]\nk = 3\n", "[cell]\nepochs = 1\n"):
        with pytest.raises(ConfigError):
            parse_plan(TINY + bad)


def test_search_missing_config_names_path(tmp_path, capsys):
    missing = tmp_path / "absent.ini"
    code, _, err = run(["search", "--config", missing, "--out", tmp_path / "o"], capsys)
    assert code == 1
    assert str(missing) in err


def test_usage_errors_exit_one(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["search"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["search", "--config", "x", "--out", "y", "--seed", "-3"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 1


def test_bad_seed_env(tmp_path, capsys, monkeypatch):
    cfg = write(tmp_path, "c.ini", TINY)
    monkeypatch.setenv(cli.SEED_ENV, "not-a-number")
    code, _, err = run(["search", "--config", cfg, "--out", tmp_path / "o"], capsys)
    assert code == 1 and cli.SEED_ENV in err


def test_search_outputs_and_schema(tmp_path, capsys):
    cfg = write(tmp_path, "c.ini", TINY)
    out = tmp_path / "out"
    code, stdout, _ = run(["search", "--config", cfg, "--out", out, "--seed", 5], capsys)
    assert code == 0
    assert stdout.count("\n") == 1 and "seed=5" in stdout
    assert {p.name for p in out.iterdir()} == {"result.json", "trace.jsonl", "archive.txt",
                                               "selected.txt"}
    doc = json.loads((out / "result.json").read_text())
    assert set(doc) == {"result", "traces", "config", "seed", "timing"}
    assert doc["seed"] == 5
    assert doc["config"]["source"] == TINY
    assert set(doc["result"]) == {"genotype", "edges", "val_accuracy", "test_accuracy",
                                  "final_diversity"}
    assert 0 <= doc["result"]["test_accuracy"] <= 1
    assert set(doc["timing"]) == {"train_s", "select_s", "retrain_s", "total_s"}
    lines = (out / "trace.jsonl").read_text().splitlines()
    records = [json.loads(line) for line in lines]
    for r in records:
        assert set(r) == {"epoch", "step", "phase", "loss", "diversity", "best_val_acc"}
    assert records[-1]["phase"] == "selected"
    assert (out / "selected.txt").read_text() == doc["result"]["genotype"]
    assert not list(out.glob(".*.tmp"))


def test_search_determinism_and_seed_precedence(tmp_path, capsys, monkeypatch):
    cfg = write(tmp_path, "c.ini", TINY)

    def doc(name, *extra):
        code, _, _ = run(["search", "--config", cfg, "--out", tmp_path / name, *extra], capsys)
        assert code == 0
        d = json.loads((tmp_path / name / "result.json").read_text())
        d.pop("timing")
        return d

    a, b = doc("a", "--seed", 9), doc("b", "--seed", 9)
    assert a == b
    assert ((tmp_path / "a" / "trace.jsonl").read_bytes()
            == (tmp_path / "b" / "trace.jsonl").read_bytes())
    monkeypatch.setenv(cli.SEED_ENV, "9")
    assert doc("c") == a
    assert doc("d", "--seed", 2)["seed"] == 2
    monkeypatch.delenv(cli.SEED_ENV)
    assert doc("e")["seed"] == 0


def test_search_runtime_failure_exit_two(tmp_path, capsys, monkeypatch):
    cfg = write(tmp_path, "c.ini", TINY)

    def boom(*a, **k):
        raise FloatingPointError("diverged")

    monkeypatch.setattr(cli, "run_pipeline", boom)
    code, _, err = run(["search", "--config", cfg, "--out", tmp_path / "o"], capsys)
    assert code == 2 and "diverged" in err


def test_compare_grid_csv(tmp_path, capsys):
    plan = write(tmp_path, "p.ini", TINY + ORACLE + "[plan]\nrepeats = 2\n")
    out = tmp_path / "cmp"
    code, stdout, _ = run(["compare", "--plan", plan, "--out", out, "--seed", 10], capsys)
    assert code == 0
    rows = read_csv(out / "summary.csv")
    assert len(rows) == 6
    assert list(rows[0]) == list(cli.SUMMARY_COLUMNS)
    runs = read_csv(out / "runs.csv")
    assert len(runs) == 12 and {r["seed"] for r in runs} == {"10", "11"}
    for row in rows:
        docs = [json.loads(p.read_text()) for p in
                sorted((out / "runs" / cli._slug(row["label"])).glob("seed-*/result.json"))]
        assert len(docs) == 2
        acc = np.array([d["result"]["val_accuracy"] for d in docs])
        div = np.array([d["result"]["final_diversity"] for d in docs])
        assert float(row["mean_acc"]) == pytest.approx(acc.mean(), abs=1e-15)
        assert float(row["std_acc"]) == pytest.approx(acc.std(), abs=1e-15)
        assert float(row["mean_diversity"]) == pytest.approx(div.mean(), abs=1e-15)
    curves = read_csv(out / "curves.csv")
    assert {c["series"] for c in curves} == {"diversity", "loss", "best_val_acc",
                                             "selection_best"}


def test_compare_single_repeat_has_zero_std(tmp_path, capsys):
    plan = write(tmp_path, "p.ini", TINY + ORACLE + "[plan]\nrepeats = 1\n")
    code, _, _ = run(["compare", "--plan", plan, "--out", tmp_path / "cmp"], capsys)
    assert code == 0
    assert all(float(r["std_acc"]) == 0.0 for r in read_csv(tmp_path / "cmp" / "summary.csv"))


def test_compare_parallel_matches_serial(tmp_path, capsys):
    text = TINY + ORACLE + "[plan]\nrepeats = 1\n[cell a]\nselector = evolution\n" \
                          "[cell b]\nselector = random-search\n"
    plan = write(tmp_path, "p.ini", text)
    run(["compare", "--plan", plan, "--out", tmp_path / "s"], capsys)
    run(["compare", "--plan", plan, "--out", tmp_path / "p", "--jobs", 2], capsys)
    strip = lambda rows: [{k: v for k, v in r.items() if k != "runtime_s"} for r in rows]
    assert strip(read_csv(tmp_path / "s" / "summary.csv")) == \
        strip(read_csv(tmp_path / "p" / "summary.csv"))


def test_compare_partial_and_total_failures(tmp_path, capsys, monkeypatch):
    real = cli.run_pipeline
    plan = write(tmp_path, "p.ini", TINY + ORACLE + "[plan]\nrepeats = 2\n"
                 "[cell ok]\ncontroller = random\n[cell bad]\ncontroller = novelty\n")

    def flaky(cfg, *a, **k):
        if cfg.controller == "novelty" or (cfg.controller == "random" and cfg.seed == 1):
            raise RuntimeError("injected")
        return real(cfg, *a, **k)

    monkeypatch.setattr(cli, "run_pipeline", flaky)
    code, _, err = run(["compare", "--plan", plan, "--out", tmp_path / "c"], capsys)
    assert code == 2 and "bad" in err
    runs = read_csv(tmp_path / "c" / "runs.csv")
    assert [r["status"] for r in runs] == ["ok", "failed", "failed", "failed"]
    summary = read_csv(tmp_path / "c" / "summary.csv")
    assert summary[0]["std_acc"] == "0.0" and summary[1]["mean_acc"] == "nan"

    plan2 = write(tmp_path, "p2.ini", TINY + ORACLE + "[plan]\nrepeats = 2\n"
                  "[cell ok]\ncontroller = random\n")
    code, _, _ = run(["compare", "--plan", plan2, "--out", tmp_path / "c2"], capsys)
    assert code == 0


def test_compare_duplicate_label(tmp_path, capsys):
    plan = write(tmp_path, "p.ini", TINY + "[cell a]\nepochs = 1\n[cell a]\nepochs = 2\n")
    code, _, _ = run(["compare", "--plan", plan, "--out", tmp_path / "c"], capsys)
    assert code == 1


def test_inspect_identical_archive(tmp_path, capsys):
    spec = CellSpec(1, 4, 1)
    g = random_genotype(spec, np.random.default_rng(0))
    archive = Archive(spec, 6)
    for _ in range(6):
        archive.push(lift(g))
    path = write(tmp_path, "a.txt", dump_archive(archive))
    code, out, _ = run(["inspect", path], capsys)
    assert code == 0
    assert "mean pairwise distance: 0.000000" in out


def test_inspect_histograms_sum_to_archive_size(tmp_path, capsys):
    spec = CellSpec(2, 3, 2)
    rng = np.random.default_rng(1)
    archive = Archive(spec, 9)
    for _ in range(9):
        archive.push(lift(random_genotype(spec, rng)))
    path = write(tmp_path, "a.txt", dump_archive(archive))
    _, out, _ = run(["inspect", path], capsys)
    hist = [line for line in out.splitlines() if "| src" in line]
    assert len(hist) == spec.num_edges
    for line in hist:
        _, src, op = line.split("|")
        for part in (src, op):
            counts = [int(c) for c in re.findall(r":(\d+)", part)]
            assert sum(counts) == 9


def test_inspect_genotype_roundtrip(tmp_path, capsys):
    spec = CellSpec(1, 4, 1)
    for seed in range(5):
        g = random_genotype(spec, np.random.default_rng(seed))
        path = write(tmp_path, f"g{seed}.txt", serialize(g))
        code, out, _ = run(["inspect", path], capsys)
        assert code == 0 and out == pretty(g) + "\n"


def test_inspect_result_and_directory(tmp_path, capsys):
    cfg = write(tmp_path, "c.ini", TINY)
    run(["search", "--config", cfg, "--out", tmp_path / "o"], capsys)
    doc = json.loads((tmp_path / "o" / "result.json").read_text())
    code, out, _ = run(["inspect", tmp_path / "o" / "result.json"], capsys)
    assert code == 0 and "selected genotype:" in out
    assert f"{doc['result']['test_accuracy']:.6f}" in out
    code, out, _ = run(["inspect", tmp_path / "o"], capsys)
    assert code == 0 and "mean pairwise distance" in out and "selected genotype" in out


@pytest.mark.parametrize("text", ["archive 3 2\ncellspec 1 4 1 5 1\nentry 0\n",
                                  "cellspec 1 2 1 5 1\n0 0 0 0 9\n0 1 0 0 0\n",
                                  "{not json", '{"result": {}}', "hello\n"])
def test_inspect_malformed(tmp_path, capsys, text):
    path = write(tmp_path, "bad.txt", text)
    code, _, err = run(["inspect", path], capsys)
    assert code != 0 and err


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "en2as.cli", "inspect", str(tmp_path / "none")],
                          capture_output=True, text=True)
    assert proc.returncode == 1 and "none" in proc.stderr
