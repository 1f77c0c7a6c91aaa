"""File-level pipeline stages behind the CLI subcommands.

Every stage writes a ``manifest.json`` into its output directory holding the
full configuration, its hash, the seeds used and sha256 digests of its inputs
and outputs. Manifests hold no timestamps or absolute paths, so rerunning a
stage with the same inputs reproduces the directory byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .config import RunConfig
from .core import InvalidInputError, read_trajectory, validate_trajectory, write_trajectory
from .envsim import generate_dataset, make_reference
from .harness import EvalTable, IdmPolicy, RolloutConfig, evaluate, sweep_radius
from .idm import grad_check, init_model, load_model, save_model, train
from .metrics import coverage_curve, dtw_aligned_auc, median

MANIFEST = "manifest.json"

ABLATIONS = {
    "bc": {"future": 0},
    "1p-1f": {"past": 1, "future": 1},
    "10p-1f": {"past": 10, "future": 1},
    "1p-10f": {"past": 1, "future": 10},
    "10p-10f": {"past": 10, "future": 10},
    "obs-only": {"modality": "obs-only"},
    "actions-only": {"modality": "actions-only"},
}


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    path.write_text(buf.getvalue())


def read_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def read_manifest(run_dir: str | Path) -> dict:
    path = Path(run_dir) / MANIFEST
    if not path.is_file():
        raise FileNotFoundError(f"no {MANIFEST} in {run_dir}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}: corrupt manifest ({exc})") from exc


def _prepare(out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- gen-data

def cmd_gen_data(cfg: RunConfig, out_dir) -> dict:
    """Reference trajectories plus the jittered training set, with a manifest."""
    out = _prepare(out_dir)
    (out / "refs").mkdir(exist_ok=True)
    (out / "train").mkdir(exist_ok=True)
    env = cfg.env_config()
    scenarios = cfg.data["env"]["scenarios"]
    seed = cfg.data["seed"]
    files = {"references": [], "train": []}
    for name in scenarios:
        tr = make_reference(name, seed, env)
        _check_valid(tr)
        rel = f"refs/{name}.jsonl"
        write_trajectory(tr, out / rel)
        files["references"].append({"file": rel, "scenario": name, "seed": seed, "sha256": sha256_file(out / rel)})
    dataset = generate_dataset(scenarios, cfg.data["data"]["n_per_scenario"], seed, env, cfg.data["data"]["jitter"])
    counters: dict[str, int] = {}
    for tr in dataset:
        _check_valid(tr)
        i = counters[tr.scenario] = counters.get(tr.scenario, -1) + 1
        rel = f"train/{tr.scenario}_{i:03d}.jsonl"
        write_trajectory(tr, out / rel)
        files["train"].append({"file": rel, "scenario": tr.scenario, "seed": tr.seed, "sha256": sha256_file(out / rel)})
    manifest = {
        "command": "gen-data",
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "seed": seed,
        **files,
    }
    _write_json(out / MANIFEST, manifest)
    return manifest


def _check_valid(tr):
    problems = validate_trajectory(tr)
    if problems:
        raise InvalidInputError(f"{tr.scenario}: invalid trajectory: {problems[:3]}")


def load_data_dir(data_dir, split: str = "train"):
    data_dir = Path(data_dir)
    manifest = read_manifest(data_dir)
    if manifest.get("command") != "gen-data":
        raise InvalidInputError(f"{data_dir} is not a gen-data output")
    key = "train" if split == "train" else "references"
    return [read_trajectory(data_dir / e["file"]) for e in manifest[key]], manifest


def load_refs(refs_dir, names=None):
    """References from a gen-data directory (its ``refs/``) or a directory of JSONL files."""
    refs_dir = Path(refs_dir)
    if (refs_dir / MANIFEST).is_file():
        refs, _ = load_data_dir(refs_dir, "references")
    else:
        files = sorted(refs_dir.glob("*.jsonl"))
        if not files:
            raise FileNotFoundError(f"no reference trajectories in {refs_dir}")
        refs = [read_trajectory(f) for f in files]
    if names:
        by_name = {r.scenario: r for r in refs}
        missing = [n for n in names if n not in by_name]
        if missing:
            raise InvalidInputError(f"references missing for {missing}")
        refs = [by_name[n] for n in names]
    return refs


# ------------------------------------------------------------------- train

def resolve_ablation(cfg: RunConfig, ablation: str | None) -> RunConfig:
    if not ablation:
        return cfg
    if ablation not in ABLATIONS:
        raise InvalidInputError(f"unknown ablation {ablation!r}; choose from {sorted(ABLATIONS)}")
    return cfg.with_overrides(idm=ABLATIONS[ablation])


def cmd_grad_check(cfg: RunConfig, n_samples: int = 2, h: float = 1e-5, tol: float = 1e-4,
                   max_probes: int | None = None):
    i = cfg.data["idm"]
    a = cfg.data["action"]
    model = init_model(cfg.window_spec(), 4, a["buttons"], a["sticks"], i["hidden"],
                       i["encoder_layers"], i["head_layers"], cfg.data["train"]["seed"], i["modality"])
    return grad_check(model, n_samples=n_samples, h=h, tol=tol, seed=cfg.data["seed"], max_probes=max_probes)


def cmd_train(cfg: RunConfig, data_dir, out_dir, ablation: str | None = None, progress=None) -> dict:
    """Fit a model on a gen-data directory; writes model.json, epochs.csv and a manifest."""
    cfg = resolve_ablation(cfg, ablation)
    dataset, _ = load_data_dir(data_dir, "train")
    out = _prepare(out_dir)
    i = cfg.data["idm"]
    model, log = train(dataset, cfg.window_spec(), cfg.train_config(), hidden=i["hidden"],
                       encoder_layers=i["encoder_layers"], head_layers=i["head_layers"],
                       modality=i["modality"], progress=progress)
    save_model(model, out / "model.json")
    _write_csv(out / "epochs.csv", ["epoch", "total", "button_loss", "sticks_loss", "button_err", "sticks_err"],
               [(e, lb.total, lb.button_loss, lb.sticks_loss, lb.button_error_rate, lb.sticks_error_rate)
                for e, lb in enumerate(log)])
    manifest = {
        "command": "train",
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "ablation": ablation,
        "seed": cfg.data["train"]["seed"],
        "window": asdict(model.spec),
        "modality": model.modality,
        "data_manifest_sha256": sha256_file(Path(data_dir) / MANIFEST),
        "files": {"model": "model.json", "epochs": "epochs.csv"},
        "sha256": {"model.json": sha256_file(out / "model.json"), "epochs.csv": sha256_file(out / "epochs.csv")},
        "final": asdict(log[-1]),
    }
    _write_json(out / MANIFEST, manifest)
    return manifest


def _model_path(model_path) -> Path:
    p = Path(model_path)
    return p / "model.json" if p.is_dir() else p


# -------------------------------------------------------------------- eval

def _write_rollouts(out: Path, table: EvalTable, refs, curve_points: int, dtw_aligned: bool):
    for sub in ("traces", "curves", "rollouts", "monitor", "references"):
        (out / sub).mkdir(exist_ok=True)
    dtw_rows = []
    for ref in refs:
        write_trajectory(ref, out / "references" / f"{ref.scenario}.jsonl")
        for r in table.results[ref.scenario]:
            stem = f"{ref.scenario}_s{r.seed}"
            _write_csv(out / "traces" / f"{stem}.csv", ["t", "fut_idx", "dist"],
                       [(e.t, e.fut_idx, e.dist) for e in r.trace.entries])
            _write_csv(out / "monitor" / f"{stem}.csv", ["t", "fut_idx", "dist"],
                       [(e.t, e.fut_idx, e.dist) for e in r.monitor.entries])
            curve = coverage_curve(r.agent, ref, curve_points)
            _write_csv(out / "curves" / f"{stem}.csv", ["r", "coverage"],
                       zip(curve.radii.tolist(), curve.coverage.tolist()))
            write_trajectory(r.agent, out / "rollouts" / f"{stem}.jsonl")
            if dtw_aligned:
                dtw_rows.append((ref.scenario, r.seed, dtw_aligned_auc(r.agent, ref)))
    if dtw_aligned:
        _write_csv(out / "metrics_dtw_aligned.csv", ["trajectory", "seed", "auc_dtw"], dtw_rows)


def rollout_config_for(cfg: RunConfig, strategy=None, K=None, r=None, r_in=None, r_out=None,
                       sigma=None, n_seeds=None, jobs=None) -> tuple[RunConfig, RolloutConfig]:
    cfg = cfg.with_overrides(
        selector={"strategy": strategy, "K": K, "r": r, "r_in": r_in, "r_out": r_out},
        env={"sigma": sigma},
        harness={"n_seeds": n_seeds, "jobs": jobs},
    )
    return cfg, cfg.rollout_config()


def cmd_eval(cfg: RunConfig, model_path, refs_dir, out_dir, dtw_aligned: bool = False, **overrides) -> dict:
    """Roll out a trained model on every reference and write metrics, traces and curves."""
    cfg, rcfg = rollout_config_for(cfg, **overrides)
    mpath = _model_path(model_path)
    model = load_model(mpath)
    refs = load_refs(refs_dir, cfg.data["env"]["scenarios"])
    policy = IdmPolicy(model)
    for ref in refs:
        policy.check(ref)
    table = evaluate(policy, refs, rcfg)
    out = _prepare(out_dir)
    _write_csv(out / "metrics.csv", EvalTable.COLUMNS, [[row[c] for c in EvalTable.COLUMNS] for row in table.rows])
    _write_rollouts(out, table, refs, cfg.data["harness"]["curve_points"], dtw_aligned)
    manifest = {
        "command": "eval",
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "strategy": rcfg.strategy,
        "seeds": rcfg.seeds(),
        "model_sha256": sha256_file(mpath),
        "window": asdict(model.spec),
        "modality": model.modality,
        "references": [{"scenario": r.scenario, "T": len(r)} for r in refs],
        "files": {"metrics": "metrics.csv", "traces": "traces/", "curves": "curves/", "rollouts": "rollouts/",
                  "references": "references/"},
    }
    _write_json(out / MANIFEST, manifest)
    return manifest


def cmd_sweep(cfg: RunConfig, model_path, refs_dir, out_dir, radii=None, io_pairs=None, **overrides) -> dict:
    """Radius and Inner-Outer grid; writes sweep.csv with per-trajectory medians and a Mean row."""
    cfg, rcfg = rollout_config_for(cfg, **overrides)
    radii = list(radii if radii is not None else cfg.data["sweep"]["radii"])
    io_pairs = [tuple(p) for p in (io_pairs if io_pairs is not None else cfg.data["sweep"]["io_pairs"])]
    mpath = _model_path(model_path)
    model = load_model(mpath)
    refs = load_refs(refs_dir, cfg.data["env"]["scenarios"])
    rows = sweep_radius(IdmPolicy(model), refs, radii, io_pairs, rcfg)
    out_rows = [(r["strategy"], r["trajectory"], r["auc"], r["fi"]) for r in rows]
    for strat in dict.fromkeys(r["strategy"] for r in rows):
        sub = [r for r in rows if r["strategy"] == strat]
        out_rows.append((strat, "Mean", float(np.mean([r["auc"] for r in sub])),
                         float(np.mean([r["fi"] for r in sub]))))
    out = _prepare(out_dir)
    _write_csv(out / "sweep.csv", ["strategy", "trajectory", "auc", "fi"], out_rows)
    manifest = {
        "command": "sweep",
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "radii": radii,
        "io_pairs": [list(p) for p in io_pairs],
        "seeds": rcfg.seeds(),
        "model_sha256": sha256_file(mpath),
        "files": {"sweep": "sweep.csv"},
    }
    _write_json(out / MANIFEST, manifest)
    return manifest


# ------------------------------------------------------------------ report

def _find_runs(run_dir: Path) -> list[Path]:
    runs = []
    if (run_dir / MANIFEST).is_file():
        runs.append(run_dir)
    for sub in sorted(p for p in run_dir.iterdir() if p.is_dir()):
        if (sub / MANIFEST).is_file():
            runs.append(sub)
    return runs


def _fmt(v) -> str:
    return f"{float(v):.3f}"


def _eval_section(run: Path, manifest: dict) -> tuple[list[str], dict]:
    rows = read_csv(run / "metrics.csv")
    med = [r for r in rows if r["seed"] == "median"]
    lines = [
        f"eval run: {run.name}",
        f"  strategy: {manifest['strategy']}    window: {manifest['window']}    modality: {manifest['modality']}",
        f"  config hash: {manifest['config_hash']}    seeds: {manifest['seeds']}",
        "",
        f"  {'Trajectory':<20}{'AUC':>8}{'FI':>8}{'DTW':>12}",
    ]
    for r in med:
        lines.append(f"  {r['trajectory']:<20}{_fmt(r['auc']):>8}{_fmt(r['fi']):>8}{float(r['dtw']):>12.2f}")
    mean_auc = float(np.mean([float(r["auc"]) for r in med]))
    mean_fi = float(np.mean([float(r["fi"]) for r in med]))
    lines.append(f"  {'Mean':<20}{_fmt(mean_auc):>8}{_fmt(mean_fi):>8}")
    lines.append("")
    return lines, {r["trajectory"]: (r["auc"], r["fi"]) for r in med}


def _eval_figures(run: Path, fig_dir: Path, plot_dir: Path, label: str):
    from . import plotting

    curves: dict[str, dict] = {}
    for f in sorted((run / "curves").glob("*.csv")):
        traj, seed = f.stem.rsplit("_s", 1)
        rows = read_csv(f)
        curves.setdefault(traj, {})[f"seed {seed}"] = ([float(r["r"]) for r in rows],
                                                        [float(r["coverage"]) for r in rows])
    for traj, per_seed in curves.items():
        seeds = list(per_seed)
        radii = per_seed[seeds[0]][0]
        _write_csv(plot_dir / f"{label}_{traj}_coverage.csv", ["r"] + [s.replace(" ", "") for s in seeds],
                   [[r] + [per_seed[s][1][k] for s in seeds] for k, r in enumerate(radii)])
        plotting.plot_coverage_curves(per_seed, f"{traj} ({label})", fig_dir / f"{label}_{traj}_coverage.png")
    man = read_manifest(run)
    refs = {}
    for f in sorted((run / "rollouts").glob("*.jsonl")):
        traj, seed = f.stem.rsplit("_s", 1)
        refs.setdefault(traj, {})[seed] = [tuple(s.pos.as_array()[:2]) for s in read_trajectory(f).steps]
    for traj, agents in refs.items():
        ref_file = run / "references" / f"{traj}.jsonl"
        if not ref_file.is_file():
            continue
        ref_xy = [tuple(s.pos.as_array()[:2]) for s in read_trajectory(ref_file).steps]
        plotting.plot_rollouts(ref_xy, agents, f"{traj} ({man['strategy']})", fig_dir / f"{label}_{traj}_paths.png")


def cmd_report(run_dir, figures: bool = True) -> str:
    """Summarise every run under ``run_dir`` into summary.txt, plot-data CSVs and figures."""
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise FileNotFoundError(f"{run_dir} is not a directory")
    runs = _find_runs(run_dir)
    if not runs:
        raise FileNotFoundError(f"no run manifests found in {run_dir}")
    report_dir = run_dir / "report"
    fig_dir, plot_dir = report_dir / "figures", report_dir / "plot_data"
    for d in (report_dir, fig_dir, plot_dir):
        d.mkdir(exist_ok=True)
    lines = ["IDM-K run report", "=" * 60, ""]
    strategy_cols: dict[str, dict] = {}
    for run in runs:
        if run == report_dir:
            continue
        manifest = read_manifest(run)
        kind = manifest.get("command")
        label = run.name if run != run_dir else "run"
        if kind == "eval":
            sec, med = _eval_section(run, manifest)
            lines += sec
            strategy_cols[f"{label}:{manifest['strategy']}"] = med
            if figures:
                _eval_figures(run, fig_dir, plot_dir, label)
        elif kind == "train":
            rows = read_csv(run / "epochs.csv")
            last = rows[-1]
            lines += [
                f"train run: {label}",
                f"  window: {manifest['window']}    modality: {manifest['modality']}    ablation: {manifest['ablation']}",
                f"  config hash: {manifest['config_hash']}",
                f"  final epoch {last['epoch']}: total {_fmt(last['total'])}  button loss {_fmt(last['button_loss'])}"
                f"  sticks loss {_fmt(last['sticks_loss'])}  button err {_fmt(last['button_err'])}"
                f"  sticks err {_fmt(last['sticks_err'])}",
                "",
            ]
            if figures:
                from . import plotting

                ep = [int(r["epoch"]) for r in rows]
                plotting.plot_training_curves(
                    ep,
                    {k: [max(float(r[k]), 1e-12) for r in rows]
                     for k in ("button_loss", "sticks_loss", "button_err", "sticks_err")},
                    f"training ({label})",
                    fig_dir / f"{label}_training.png",
                )
        elif kind == "sweep":
            rows = read_csv(run / "sweep.csv")
            lines += [f"sweep run: {label}", f"  config hash: {manifest['config_hash']}", ""]
            trajs = list(dict.fromkeys(r["trajectory"] for r in rows))
            strats = list(dict.fromkeys(r["strategy"] for r in rows))
            lines.append("  " + f"{'Trajectory':<20}" + "".join(f"{s:>34}" for s in strats))
            for t in trajs:
                vals = {r["strategy"]: r["auc"] for r in rows if r["trajectory"] == t}
                lines.append("  " + f"{t:<20}" + "".join(f"{_fmt(vals[s]):>34}" for s in strats))
            lines.append("")
        elif kind == "gen-data":
            lines += [f"data: {label}", f"  config hash: {manifest['config_hash']}    seed: {manifest['seed']}",
                      f"  {len(manifest['references'])} references, {len(manifest['train'])} training trajectories", ""]
        elif kind == "ablate":
            rows = read_csv(run / "ablation.csv")
            lines += [f"ablation run: {label}", f"  config hash: {manifest['config_hash']}", ""]
            trajs = list(dict.fromkeys(r["trajectory"] for r in rows))
            cfgs = list(dict.fromkeys(r["config"] for r in rows))
            lines.append("  " + f"{'Trajectory':<20}" + "".join(f"{c:>14}" for c in cfgs))
            for t in trajs + ["Mean"]:
                vals = {}
                for c in cfgs:
                    sub = [float(r["auc"]) for r in rows if r["config"] == c and (t == "Mean" or r["trajectory"] == t)]
                    vals[c] = float(np.mean(sub))
                lines.append("  " + f"{t:<20}" + "".join(f"{_fmt(vals[c]):>14}" for c in cfgs))
            lines.append("")
            if figures:
                from . import plotting

                plotting.plot_grouped_bars(
                    trajs,
                    {c: [float(next(r["auc"] for r in rows if r["config"] == c and r["trajectory"] == t))
                         for t in trajs] for c in cfgs},
                    title=f"ablation ({label})",
                    path=fig_dir / f"{label}_ablation.png",
                )
    if len(strategy_cols) > 1:
        lines += ["Median AUC by strategy", ""]
        names = list(strategy_cols)
        trajs = list(dict.fromkeys(t for col in strategy_cols.values() for t in col))
        lines.append("  " + f"{'Trajectory':<20}" + "".join(f"{n.split(':')[0]:>16}" for n in names))
        for t in trajs:
            lines.append("  " + f"{t:<20}" + "".join(
                f"{_fmt(strategy_cols[n][t][0]) if t in strategy_cols[n] else '-':>16}" for n in names))
        lines.append("")
    text = "\n".join(lines)
    (report_dir / "summary.txt").write_text(text + "\n")
    return text


# ------------------------------------------------------------------ ablate

def cmd_ablate(cfg: RunConfig, data_dir, refs_dir, out_dir, kind: str = "windows", progress=None) -> dict:
    """Window-length or input-modality ablation: train each variant and evaluate it."""
    from .harness import DEFAULT_WINDOWS, ablate_modality, ablate_windows

    dataset, _ = load_data_dir(data_dir, "train")
    refs = load_refs(refs_dir, cfg.data["env"]["scenarios"])
    rcfg = cfg.rollout_config()
    i = cfg.data["idm"]
    if kind == "windows":
        configs = {name: replace(spec, K=i["K"]) for name, spec in DEFAULT_WINDOWS.items()}
        rows, _ = ablate_windows(dataset, refs, configs, cfg.train_config(), rcfg, hidden=i["hidden"])
    elif kind == "modality":
        rows, _ = ablate_modality(dataset, refs, cfg.window_spec(), cfg.train_config(), rcfg, hidden=i["hidden"])
    else:
        raise InvalidInputError(f"unknown ablation kind {kind!r}")
    out = _prepare(out_dir)
    _write_csv(out / "ablation.csv", ["config", "trajectory", "auc", "fi"],
               [(r["config"], r["trajectory"], r["auc"], r["fi"]) for r in rows])
    manifest = {
        "command": "ablate",
        "kind": kind,
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "seeds": rcfg.seeds(),
        "data_manifest_sha256": sha256_file(Path(data_dir) / MANIFEST),
        "files": {"ablation": "ablation.csv"},
    }
    _write_json(out / MANIFEST, manifest)
    return manifest


def medians_match(run_dir) -> bool:
    """Recompute the median rows of metrics.csv from its per-seed rows."""
    rows = read_csv(Path(run_dir) / "metrics.csv")
    for m in (r for r in rows if r["seed"] == "median"):
        per = [r for r in rows if r["seed"] != "median" and r["trajectory"] == m["trajectory"]]
        for col in ("auc", "fi", "dtw"):
            if median(float(r[col]) for r in per) != float(m[col]):
                return False
    return True
