import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from anycsp import checkpoint, cli
from anycsp.instances import RbParams, gen_erdos_renyi, write_dimacs_col
from anycsp.policy import PolicyParameters


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def rows_of(text):
    return list(csv.DictReader(io.StringIO(text)))


@pytest.fixture
def ckpt(tmp_path):
    path = tmp_path / "model.ckpt"
    checkpoint.save(PolicyParameters(8, "sum", seed=0), path, seed=0)
    return path


@pytest.fixture
def cnf_dir(tmp_path, capsys):
    out = tmp_path / "sat"
    assert run(capsys, "generate", "--dist", "3sat", "--n", 12, "--ratio", 3.0, "--count", 3, "--seed", 7,
               "--out", out)[0] == 0
    return out


def test_generate_writes_reproducible_files(tmp_path, capsys):
    for d in ("a", "b"):
        assert run(capsys, "generate", "--dist", "3sat", "--n", 100, "--count", 10, "--seed", 7,
                   "--out", tmp_path / d)[0] == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert len([n for n in names if n.endswith(".cnf")]) == 10
    assert len([n for n in names if n.endswith(".json")]) == 11
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert [e["seed"] for e in man["instances"]] == list(range(7, 17))


def test_generate_rb_metadata_matches_counts(tmp_path, capsys):
    assert run(capsys, "generate", "--dist", "rb", "--n", 30, "--count", 5, "--out", tmp_path)[0] == 0
    for i in range(5):
        doc = json.loads((tmp_path / f"rb_{i:04d}.json").read_text())
        meta = doc["meta"]
        p = RbParams(meta["k"], meta["n"], meta["alpha"], meta["r"], meta["p"])
        assert (p.d, p.m, p.t) == (meta["d"], meta["m"], meta["t"])
        assert len(doc["variables"]) == 30 and len(doc["constraints"]) == p.m
        assert all(len(v["domain"]) == p.d for v in doc["variables"])
        assert all(len(c["tuples"]) == p.t for c in doc["constraints"])


def test_generate_count_zero(tmp_path, capsys):
    code, out, _ = run(capsys, "generate", "--dist", "maxcut", "--count", 0, "--out", tmp_path)
    assert code == 0
    assert json.loads((tmp_path / "manifest.json").read_text())["instances"] == []


def test_usage_errors_exit_1(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["generate", "--dist", "tsp"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        cli.main(["train", "--dist", "maxcut", "--agg", "median"])
    assert e.value.code == 1
    assert run(capsys, "generate", "--dist", "maxcut", "--count", -1, "--out", tmp_path)[0] == 1
    assert run(capsys, "solve", "--checkpoint", tmp_path / "x", tmp_path / "y.json")[0] == 1


def test_data_errors_exit_2(tmp_path, capsys, ckpt):
    bad = tmp_path / "bad.cnf"
    bad.write_text("p cnf 2 1\n1 5 0\n")
    assert run(capsys, "solve", "--checkpoint", ckpt, bad, "--steps", 5)[0] == 2
    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"not a checkpoint")
    good = tmp_path / "ok.cnf"
    good.write_text("p cnf 1 1\n1 0\n")
    assert run(capsys, "solve", "--checkpoint", junk, good, "--steps", 5)[0] == 2
    assert run(capsys, "solve", "--checkpoint", ckpt, tmp_path / "missing.cnf", "--steps", 5)[0] == 2


def test_agg_choices_accepted(tmp_path, capsys):
    for agg in ("sum", "mean", "max"):
        code, _, _ = run(capsys, "train", "--dist", "maxcut", "--n", 6, "--steps", 1, "--batch", 1, "--T", 2,
                         "--d", 4, "--agg", agg, "--val-count", 1, "--val-every", 1, "--T-val", 2,
                         "--out", tmp_path / agg)
        assert code == 0
        assert checkpoint.load(tmp_path / agg / "best.ckpt").aggregation == agg


def test_train_resume_continues(tmp_path, capsys):
    base = ["train", "--dist", "maxcut", "--n", 6, "--batch", 2, "--T", 3, "--agg", "sum", "--val-count", 2,
            "--val-every", 2, "--T-val", 3, "--no-timing", "--lr-start", 1e-3, "--lr-end", 1e-4, "--out", tmp_path]
    assert run(capsys, *base, "--d", 4, "--steps", 4)[0] == 0
    assert run(capsys, *base, "--d", 4, "--steps", 6, "--resume")[0] == 0
    steps = [int(r["step"]) for r in csv.DictReader(open(tmp_path / "train_log.csv"))]
    assert steps == [1, 2, 3, 4, 5, 6]
    val_steps = [int(r["step"]) for r in csv.DictReader(open(tmp_path / "val_log.csv"))]
    assert val_steps == [2, 4, 6]
    # resuming with different hyperparameters is a data error
    code, _, err = run(capsys, *base, "--d", 8, "--steps", 8, "--resume")
    assert code == 2 and "hyperparameters" in err


def test_solve_rows_and_aggregate(cnf_dir, ckpt, capsys, tmp_path):
    files = sorted(cnf_dir.glob("*.cnf"))
    code, out, _ = run(capsys, "solve", "--checkpoint", ckpt, *files, "--steps", 30, "--runs", 4, "--seed", 3,
                       "--survival", tmp_path / "surv.csv")
    assert code == 0
    rows = rows_of(out)
    assert list(rows[0].keys()) == cli.RESULT_FIELDS
    per_run = [r for r in rows if r["run"] not in ("best", "mean")]
    assert len(per_run) == 12
    assert [int(r["seed"]) for r in per_run] == list(range(3, 15))
    mean = rows[-1]
    assert mean["instance_id"] == "ALL"
    for k in ("best_quality", "unsat_count", "steps_to_best", "total_steps", "wall_ms"):
        assert float(mean[k]) == pytest.approx(np.mean([float(r[k]) for r in per_run]), abs=1e-9)
    best = [r for r in rows if r["run"] == "best"]
    assert len(best) == 3
    for b in best:
        mine = [float(r["best_quality"]) for r in per_run if r["instance_id"] == b["instance_id"]]
        assert float(b["best_quality"]) == max(mine)
    for r in per_run:
        assert (r["solved"] == "1") == (float(r["best_quality"]) == 1.0)
        assert int(r["total_steps"]) <= 30
    surv = list(csv.DictReader(open(tmp_path / "surv.csv")))
    solved_ids = {r["instance_id"] for r in per_run if r["solved"] == "1"}
    assert len(surv) == len(solved_ids)
    assert [int(s["solved"]) for s in surv] == list(range(1, len(surv) + 1))


def test_solve_performs_exactly_s_steps(tmp_path, ckpt, capsys):
    g = gen_erdos_renyi(12, 0.5, np.random.default_rng(0))
    col = tmp_path / "g.col"
    col.write_text(write_dimacs_col(g))
    trace_dir = tmp_path / "traces"
    code, out, _ = run(capsys, "solve", "--checkpoint", ckpt, col, "--problem", "maxcut", "--steps", 17,
                       "--runs", 2, "--trace-dir", trace_dir)
    assert code == 0
    for r in rows_of(out)[:2]:
        assert int(r["total_steps"]) == 17  # a dense graph has no full cut, so no early stop
    trace = list(csv.DictReader(open(trace_dir / "g_run0.csv")))
    assert len(trace) == 17


def test_solve_is_byte_identical_across_runs(cnf_dir, ckpt, capsys, tmp_path):
    files = sorted(cnf_dir.glob("*.cnf"))
    outs = []
    for i in range(2):
        path = tmp_path / f"res{i}.csv"
        assert run(capsys, "solve", "--checkpoint", ckpt, *files, "--steps", 20, "--runs", 10, "--seed", 5,
                   "--no-timing", "--out", path)[0] == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]


@pytest.mark.parametrize("mode", ["local", "qual"])
def test_solve_ablation_modes(cnf_dir, ckpt, capsys, mode):
    files = sorted(cnf_dir.glob("*.cnf"))[:1]
    code, out, _ = run(capsys, "solve", "--checkpoint", ckpt, *files, "--steps", 10, "--mode", mode)
    assert code == 0 and len(rows_of(out)) == 3


def test_solve_tiny_satisfiable(tmp_path, ckpt, capsys):
    f = tmp_path / "tiny.cnf"
    f.write_text("p cnf 2 2\n1 2 0\n-1 2 0\n")
    code, out, _ = run(capsys, "solve", "--checkpoint", ckpt, f, "--steps", 200)
    assert code == 0
    row = rows_of(out)[0]
    assert row["solved"] == "1" and float(row["best_quality"]) == 1.0


def test_baselines(cnf_dir, tmp_path, capsys):
    files = sorted(cnf_dir.glob("*.cnf"))
    code, out, _ = run(capsys, "baseline", "walksat", *files, "--flips", 10000, "--runs", 10)
    assert code == 0
    per_run = [r for r in rows_of(out) if r["run"] not in ("best", "mean")]
    assert len(per_run) == 30 and all(r["solved"] in ("0", "1") for r in per_run)
    col = tmp_path / "g.col"
    col.write_text(write_dimacs_col(gen_erdos_renyi(15, 0.4, np.random.default_rng(1))))
    code, out, _ = run(capsys, "baseline", "dsatur", col)
    assert code == 0 and rows_of(out)[0]["detail"].startswith("colors=")
    code, out, _ = run(capsys, "baseline", "greedy-cut", col)
    assert code == 0 and rows_of(out)[0]["detail"].startswith("cut=")
    js = sorted(cnf_dir.glob("*.json"))
    js = [p for p in js if p.name != "manifest.json"]
    code, out, _ = run(capsys, "baseline", "random", js[0], "--steps", 50)
    assert code == 0 and 0 <= float(rows_of(out)[0]["best_quality"]) <= 1
    # walksat needs a CNF
    assert run(capsys, "baseline", "walksat", col)[0] == 1


def test_baseline_output_is_byte_identical(cnf_dir, capsys):
    files = sorted(cnf_dir.glob("*.cnf"))
    outs = [run(capsys, "baseline", "maxwalksat", *files, "--flips", 500, "--runs", 3, "--seed", 9)[1]
            for _ in range(2)]
    assert outs[0] == outs[1]


def test_threads_env_var(cnf_dir, ckpt, capsys, monkeypatch, tmp_path):
    files = sorted(cnf_dir.glob("*.cnf"))
    serial = run(capsys, "solve", "--checkpoint", ckpt, *files, "--steps", 10, "--no-timing")[1]
    monkeypatch.setenv("ANYCSP_THREADS", "2")
    parallel = run(capsys, "solve", "--checkpoint", ckpt, *files, "--steps", 10, "--no-timing")[1]
    assert serial == parallel
    monkeypatch.setenv("ANYCSP_THREADS", "many")
    assert run(capsys, "solve", "--checkpoint", ckpt, *files, "--steps", 10)[0] == 1


def test_validate_command(ckpt, cnf_dir, capsys):
    files = sorted(cnf_dir.glob("*.cnf"))
    code, out, _ = run(capsys, "validate", "--checkpoint", ckpt, *files, "--T-val", 20)
    assert code == 0 and float(out.strip()) >= 0
    code, out2, _ = run(capsys, "validate", "--checkpoint", ckpt, "--dist", "maxcut", "--n", 8, "--val-count", 3,
                        "--T-val", 5)
    assert code == 0
    assert run(capsys, "validate", "--checkpoint", ckpt)[0] == 1


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "anycsp", "generate", "--dist", "maxcut", "--n", "10", "--count", "1",
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "maxcut_0000.col").exists()
