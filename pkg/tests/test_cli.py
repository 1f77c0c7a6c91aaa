import csv
import json
from pathlib import Path

import pytest

from idmk import pipeline
from idmk.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from idmk.core import read_trajectory, validate_trajectory
from idmk.idm import GradCheckReport, load_model

SMALL = """
[env]
scenarios = ["crossroads-left", "loop"]
[data]
n_per_scenario = 3
[train]
epochs = 5
updates_per_epoch = 60
[idm]
hidden = 32
[harness]
n_seeds = 3
"""


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = root / "small.toml"
    cfg.write_text(SMALL)
    c = ["--quiet", "--config", str(cfg)]
    assert main(c + ["gen-data", str(root / "data")]) == EXIT_OK
    assert main(c + ["train", str(root / "data"), str(root / "train")]) == EXIT_OK
    assert main(c + ["eval", str(root / "train"), str(root / "data"), str(root / "eval")]) == EXIT_OK
    return root, c


def test_gen_data_defaults(tmp_path):
    assert main(["--quiet", "gen-data", str(tmp_path)]) == EXIT_OK
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert len(manifest["references"]) == 8
    assert len(manifest["train"]) == 80
    for entry in manifest["references"] + manifest["train"]:
        assert validate_trajectory(read_trajectory(tmp_path / entry["file"])) == []
    assert manifest["config_hash"] and "/" not in manifest["config_hash"]


def test_gen_data_is_byte_identical(tmp_path, run):
    root, c = run
    assert main(c + ["gen-data", str(tmp_path / "again")]) == EXIT_OK
    for f in (root / "data").rglob("*"):
        if f.is_file():
            assert f.read_bytes() == (tmp_path / "again" / f.relative_to(root / "data")).read_bytes()


def test_gen_data_larger_set(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('[env]\nscenarios = ["winding-0"]\n')
    assert main(["--quiet", "--config", str(cfg), "gen-data", str(tmp_path / "d"), "--n-per-scenario", "30"]) == 0
    assert len(json.loads((tmp_path / "d" / "manifest.json").read_text())["train"]) == 30


def test_train_outputs(run):
    root, _ = run
    rows = _rows(root / "train" / "epochs.csv")
    assert list(rows[0]) == ["epoch", "total", "button_loss", "sticks_loss", "button_err", "sticks_err"]
    assert len(rows) == 5
    assert all(float(r["total"]) < float("inf") for r in rows)
    manifest = json.loads((root / "train" / "manifest.json").read_text())
    assert manifest["sha256"]["model.json"] == pipeline.sha256_file(root / "train" / "model.json")


def test_train_bc_ablation(tmp_path, run):
    root, c = run
    assert main(c + ["train", str(root / "data"), str(tmp_path), "--ablation", "bc", "--epochs", "1"]) == 0
    assert load_model(tmp_path / "model.json").spec.future == 0


def test_train_grad_check_flag(tmp_path, run, monkeypatch):
    root, c = run
    assert main(c + ["train", str(root / "data"), str(tmp_path / "ok"), "--grad-check", "--epochs", "1"]) == 0
    monkeypatch.setattr(pipeline, "cmd_grad_check", lambda *a, **k: GradCheckReport(1.0, 10, 1e-4, False))
    assert main(c + ["train", str(root / "data"), str(tmp_path / "bad"), "--grad-check"]) == EXIT_RUNTIME
    assert not (tmp_path / "bad" / "model.json").exists()


def test_eval_outputs(run):
    root, _ = run
    ev = root / "eval"
    rows = _rows(ev / "metrics.csv")
    assert list(rows[0]) == ["trajectory", "seed", "strategy", "auc", "fi", "dtw", "R"]
    assert len(rows) == 2 * 3 + 2
    assert pipeline.medians_match(ev)
    assert _rows(ev / "traces" / "loop_s0.csv")[0].keys() == {"t", "fut_idx", "dist"}
    curve = _rows(ev / "curves" / "loop_s0.csv")
    assert list(curve[0]) == ["r", "coverage"] and len(curve) == 101
    manifest = json.loads((ev / "manifest.json").read_text())
    assert manifest["seeds"] == [0, 1, 2]
    assert str(root) not in (ev / "manifest.json").read_text()


def test_eval_static_traces(tmp_path, run):
    root, c = run
    assert main(c + ["eval", str(root / "train"), str(root / "data"), str(tmp_path), "--strategy", "static",
                     "--K", "10", "--n-seeds", "1"]) == 0
    for f in (tmp_path / "traces").glob("*.csv"):
        rows = _rows(f)
        T = len(rows)
        assert [int(r["fut_idx"]) for r in rows] == [min(t + 10, T - 1) for t in range(T)]


def test_eval_closest_on_loop_goes_backwards(tmp_path, run):
    root, c = run
    assert main(c + ["eval", str(root / "train"), str(root / "data"), str(tmp_path / "c"),
                     "--strategy", "closest", "--K", "1"]) == 0
    drops = 0
    for f in (tmp_path / "c" / "traces").glob("loop_*.csv"):
        idx = [int(r["fut_idx"]) for r in _rows(f)]
        drops += sum(b < a for a, b in zip(idx, idx[1:]))
    assert drops >= 1
    for f in (root / "eval" / "traces").glob("loop_*.csv"):
        idx = [int(r["fut_idx"]) for r in _rows(f)]
        assert all(b >= a for a, b in zip(idx, idx[1:]))


def test_eval_sweep_and_dtw_variant(tmp_path, run):
    root, c = run
    out = tmp_path / "e"
    assert main(c + ["eval", str(root / "train"), str(root / "data"), str(out), "--n-seeds", "1",
                     "--sweep-radius", "1,2", "--dtw-aligned"]) == 0
    rows = _rows(out / "sweep" / "sweep.csv")
    assert {r["strategy"] for r in rows} >= {"radius(r=1,K=1)", "radius(r=2,K=1)"}
    assert len(_rows(out / "metrics_dtw_aligned.csv")) == 2


def test_sweep_command(tmp_path, run):
    root, c = run
    assert main(c + ["sweep", str(root / "train"), str(root / "data"), str(tmp_path), "--radii", "2",
                     "--io-pairs", "0:2", "--n-seeds", "2"]) == 0
    rows = _rows(tmp_path / "sweep.csv")
    by = {(r["strategy"], r["trajectory"]): r for r in rows}
    for traj in ("crossroads-left", "loop", "Mean"):
        a, b = by[("radius(r=2,K=1)", traj)], by[("inner_outer(r_in=0,r_out=2,K=1)", traj)]
        assert (a["auc"], a["fi"]) == (b["auc"], b["fi"])


def test_report(run):
    root, c = run
    assert main(["--quiet", "report", str(root)]) == EXIT_OK
    text = (root / "report" / "summary.txt").read_text()
    manifest = json.loads((root / "eval" / "manifest.json").read_text())
    assert manifest["config_hash"] in text
    for r in _rows(root / "eval" / "metrics.csv"):
        if r["seed"] == "median":
            line = next(ln for ln in text.splitlines() if ln.strip().startswith(r["trajectory"]))
            assert f"{float(r['auc']):.3f}" in line and f"{float(r['fi']):.3f}" in line
    assert any((root / "report" / "figures").glob("*.png"))
    data = _rows(root / "report" / "plot_data" / "eval_loop_coverage.csv")
    assert list(data[0]) == ["r", "seed0", "seed1", "seed2"]


def test_report_empty_dir(tmp_path, capsys):
    assert main(["report", str(tmp_path)]) == EXIT_RUNTIME
    assert "no run manifests" in capsys.readouterr().err


def test_grad_check_command(capsys):
    assert main(["grad-check", "--max-probes", "50"]) == EXIT_OK
    assert "PASS" in capsys.readouterr().out


def test_usage_errors_exit_one(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["eval"])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["eval", "a", "b", "c", "--strategy", "nearest"])
    assert exc.value.code == EXIT_USAGE


def test_config_errors_exit_one(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[idm]\nwidth = 3\n")
    assert main(["--config", str(bad), "gen-data", str(tmp_path / "x")]) == EXIT_USAGE
    assert "line 2" in capsys.readouterr().err


def test_missing_inputs_exit_two(tmp_path):
    assert main(["--quiet", "train", str(tmp_path / "nope"), str(tmp_path / "out")]) == EXIT_RUNTIME
    (tmp_path / "manifest.json").write_text("{not json")
    assert main(["--quiet", "train", str(tmp_path), str(tmp_path / "out")]) == EXIT_RUNTIME


def test_incompatible_checkpoint_exit_two(tmp_path, run):
    root, c = run
    refs = tmp_path / "refs"
    refs.mkdir()
    tr = read_trajectory(root / "data" / "refs" / "loop.jsonl")
    from idmk.core import Action, Trajectory, TrajectoryStep, write_trajectory

    wide = Trajectory(tuple(TrajectoryStep(s.t, s.pos, s.obs, Action(s.action.buttons + (False,), s.action.sticks))
                            for s in tr.steps), scenario="loop")
    write_trajectory(wide, refs / "loop.jsonl")
    cfg = tmp_path / "c.toml"
    cfg.write_text('[env]\nscenarios = ["loop"]\n')
    assert main(["--quiet", "--config", str(cfg), "eval", str(root / "train"), str(refs), str(tmp_path / "o")]) == 2


def test_env_var_config(tmp_path, monkeypatch, run):
    root, _ = run
    monkeypatch.setenv("IDMK_CONFIG", str(root / "small.toml"))
    assert main(["--quiet", "gen-data", str(tmp_path)]) == 0
    assert len(json.loads((tmp_path / "manifest.json").read_text())["references"]) == 2


def test_config_command(capsys):
    assert main(["config"]) == 0
    assert "[selector]" in capsys.readouterr().out


def test_help_documents_flags(capsys):
    with pytest.raises(SystemExit):
        main(["eval", "--help"])
    out = capsys.readouterr().out
    for flag in ("--strategy", "--K", "--r-in", "--r-out", "--sigma", "--n-seeds", "--sweep-radius", "--jobs"):
        assert flag in out
