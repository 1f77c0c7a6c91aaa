"""Closed-loop rollouts, multi-seed evaluation, radius sweeps and ablations."""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import futuresel as fs
from .core import N_BINS, Action, InvalidInputError, Trajectory, TrajectoryStep, discretize_stick, encode_action
from .envsim import EnvConfig, EnvState, StochasticitySpec, observe, step
from .idm import (
    IdmModel,
    RolloutBuffer,
    TrainConfig,
    WindowSpec,
    build_input,
    predict_action,
    train,
)
from .metrics import MetricReport, auc, dtw_distance, future_index_ratio, max_radius, median


# ---------------------------------------------------------------- policies

class IdmPolicy:
    """Acts with a trained IDM conditioned on the reference from ``fut_idx``."""

    def __init__(self, model: IdmModel):
        self.model = model

    @property
    def spec(self) -> WindowSpec:
        return self.model.spec

    def check(self, ref: Trajectory) -> None:
        m = self.model
        if (ref.obs_dim, ref.n_buttons, ref.n_sticks) != (m.obs_dim, m.n_buttons, m.n_sticks):
            raise InvalidInputError(
                f"model expects obs/buttons/sticks {(m.obs_dim, m.n_buttons, m.n_sticks)}, "
                f"reference {ref.scenario!r} has {(ref.obs_dim, ref.n_buttons, ref.n_sticks)}"
            )

    def act(self, buf: RolloutBuffer, t: int, ref: Trajectory, fut_idx: int) -> Action:
        x = build_input(buf, t, fut_idx, self.model.spec, future=ref, modality=self.model.modality)
        return predict_action(self.model, x)


class ReplayPolicy:
    """Open-loop playback of the reference's recorded actions."""

    def check(self, ref: Trajectory) -> None:
        pass

    def act(self, buf, t: int, ref: Trajectory, fut_idx: int) -> Action:
        return ref.steps[min(t, len(ref) - 1)].action


class SeekPolicy:
    """Scripted agent: idle when within ``r`` of its conditioning point, else steer at it."""

    def __init__(self, r: float = 1.0, speed: float = 0.7):
        self.r = r
        self.speed = speed

    def check(self, ref: Trajectory) -> None:
        pass

    def act(self, buf: RolloutBuffer, t: int, ref: Trajectory, fut_idx: int) -> Action:
        nb, ns = ref.n_buttons, ref.n_sticks
        d = ref.positions()[fut_idx, :2] - buf.pos[t]
        n = math.hypot(d[0], d[1])
        sticks = [N_BINS // 2] * ns
        if n > self.r:
            cmd = d / n * self.speed
            sticks[0], sticks[1] = discretize_stick(cmd[0]), discretize_stick(cmd[1])
        return Action((False,) * nb, tuple(sticks))


# ----------------------------------------------------------------- rollout

@dataclass(frozen=True)
class RolloutConfig:
    selector: fs.SelectorKind = fs.Radius(2.0, 1)
    env: EnvConfig = field(default_factory=lambda: EnvConfig(stochasticity=StochasticitySpec(0.05)))
    n_seeds: int = 10
    base_seed: int = 0
    r_fi: float = 2.0
    fi_start: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.n_seeds < 1:
            raise InvalidInputError("n_seeds must be >= 1")
        if not self.r_fi > 0:
            raise InvalidInputError("r_fi must be > 0")

    @property
    def strategy(self) -> str:
        return fs.kind_label(self.selector)

    def seeds(self) -> list[int]:
        return [self.base_seed + i for i in range(self.n_seeds)]


@dataclass
class RolloutResult:
    agent: Trajectory
    trace: fs.SelectorTrace
    monitor: fs.SelectorTrace
    report: MetricReport
    seed: int
    wall_time: float = field(default=0.0, compare=False)


def run_rollout(policy, ref: Trajectory, cfg: RolloutConfig, seed: int) -> RolloutResult:
    """One closed-loop episode of exactly ``len(ref)`` steps.

    Each step the selector picks the conditioning index from the agent's
    current position, the policy sees the agent's own past and the
    reference future, and the environment steps with this seed's noise.
    A Radius monitor with radius ``r_fi`` runs alongside to measure FI.
    """
    policy.check(ref)
    if len(ref) < 2:
        raise InvalidInputError("reference needs at least two steps")
    start = time.perf_counter()
    T = len(ref)
    state = EnvState.initial(ref.positions()[0], seed)
    sel = fs.initial_state(cfg.selector, ref)
    mon = fs.initial_state(fs.Radius(cfg.r_fi, cfg.fi_start), ref)
    trace, mtrace = fs.SelectorTrace(), fs.SelectorTrace()
    buf = RolloutBuffer(T, ref.obs_dim, ref.n_buttons + ref.n_sticks)
    steps = []
    for t in range(T):
        pos = state.position
        fut_idx, sel = fs.select(sel, t, pos, trace)
        _, mon = fs.select(mon, t, pos, mtrace)
        obs = observe(state)
        buf.record_state(t, state.pos, obs)
        action = policy.act(buf, t, ref, fut_idx)
        buf.record_action(t, encode_action(action))
        steps.append(TrajectoryStep(t, pos, tuple(obs), action))
        state = step(state, action, cfg.env)
    agent = Trajectory(tuple(steps), scenario=ref.scenario, seed=seed)
    a, degenerate = auc(agent, ref, return_flag=True)
    report = MetricReport(
        auc=a,
        fi=future_index_ratio(mtrace, T),
        dtw=dtw_distance(agent, ref),
        R=max_radius(ref),
        degenerate=degenerate,
    )
    return RolloutResult(agent, trace, mtrace, report, seed, time.perf_counter() - start)


# -------------------------------------------------------------- evaluation

@dataclass
class EvalTable:
    """Per-seed rows followed by one median row per trajectory."""

    rows: list[dict]
    results: dict = field(default_factory=dict, repr=False)

    COLUMNS = ("trajectory", "seed", "strategy", "auc", "fi", "dtw", "R")

    def per_seed(self) -> list[dict]:
        return [r for r in self.rows if r["seed"] != "median"]

    def medians(self) -> list[dict]:
        return [r for r in self.rows if r["seed"] == "median"]

    def median_auc(self, trajectory: str) -> float:
        return next(r["auc"] for r in self.medians() if r["trajectory"] == trajectory)

    def mean_median_auc(self) -> float:
        return float(np.mean([r["auc"] for r in self.medians()]))


def _rollout_task(args):
    policy, ref, cfg, seed = args
    return run_rollout(policy, ref, cfg, seed)


def run_many(policy, refs, cfg: RolloutConfig) -> list[RolloutResult]:
    """Rollouts for every (reference, seed) pair, ordered by reference then seed."""
    tasks = [(policy, ref, cfg, seed) for ref in refs for seed in cfg.seeds()]
    if cfg.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            return list(pool.map(_rollout_task, tasks))
    return [_rollout_task(t) for t in tasks]


def evaluate(policy, refs, cfg: RolloutConfig) -> EvalTable:
    if not refs:
        raise InvalidInputError("no reference trajectories to evaluate on")
    results = run_many(policy, refs, cfg)
    rows, medians, by_ref = [], [], {}
    strategy = cfg.strategy
    for ref in refs:
        rs = [r for r in results if r.agent.scenario == ref.scenario]
        by_ref[ref.scenario] = rs
        for r in rs:
            rows.append({
                "trajectory": ref.scenario, "seed": r.seed, "strategy": strategy,
                "auc": r.report.auc, "fi": r.report.fi, "dtw": r.report.dtw, "R": r.report.R,
            })
        medians.append({
            "trajectory": ref.scenario, "seed": "median", "strategy": strategy,
            "auc": median(r.report.auc for r in rs),
            "fi": median(r.report.fi for r in rs),
            "dtw": median(r.report.dtw for r in rs),
            "R": rs[0].report.R,
        })
    return EvalTable(rows + medians, by_ref)


def sweep_radius(policy, refs, radii, io_pairs=(), cfg: RolloutConfig = RolloutConfig()) -> list[dict]:
    """Median AUC per trajectory for each Radius r and each InnerOuter (r_in, r_out)."""
    radii = list(radii)
    if not radii:
        raise InvalidInputError("radii must be non-empty")
    K = cfg.selector.K
    kinds = [fs.Radius(r, K) for r in radii] + [fs.InnerOuter(a, b, K) for a, b in io_pairs]
    rows = []
    for kind in kinds:
        table = evaluate(policy, refs, replace(cfg, selector=kind))
        for r in table.medians():
            rows.append({"strategy": fs.kind_label(kind), "trajectory": r["trajectory"],
                         "auc": r["auc"], "fi": r["fi"]})
    return rows


# --------------------------------------------------------------- ablations

DEFAULT_WINDOWS = {
    "BC": WindowSpec(10, 0, 1),
    "1P-1F": WindowSpec(1, 1, 1),
    "10P-1F": WindowSpec(10, 1, 1),
    "1P-10F": WindowSpec(1, 10, 1),
    "10P-10F": WindowSpec(10, 10, 1),
}

ABLATION_REFS = ("crossroads-left", "crossroads-right", "crossroads-mid", "winding-0", "winding-1", "winding-2")


def _summarise(name: str, table: EvalTable) -> list[dict]:
    return [{"config": name, "trajectory": r["trajectory"], "auc": r["auc"], "fi": r["fi"]}
            for r in table.medians()]


def ablate_windows(
    dataset,
    refs,
    configs: dict | None = None,
    train_cfg: TrainConfig = TrainConfig(),
    cfg: RolloutConfig = RolloutConfig(),
    hidden: int = 64,
) -> tuple[list[dict], dict]:
    """Train one model per window configuration (shared seed) and evaluate each.

    Returns the comparison rows and the trained models keyed by config name.
    """
    configs = DEFAULT_WINDOWS if configs is None else configs
    rows, models = [], {}
    for name, spec in configs.items():
        model, _ = train(dataset, spec, train_cfg, hidden=hidden)
        models[name] = model
        rows += _summarise(name, evaluate(IdmPolicy(model), refs, cfg))
    return rows, models


def ablate_modality(
    dataset,
    refs,
    spec: WindowSpec = WindowSpec(),
    train_cfg: TrainConfig = TrainConfig(),
    cfg: RolloutConfig = RolloutConfig(),
    hidden: int = 64,
    modalities=("obs-only", "actions-only", "full"),
) -> tuple[list[dict], dict]:
    """Input-modality ablation: zero the action or observation features of the input."""
    rows, models = [], {}
    for modality in modalities:
        model, _ = train(dataset, spec, train_cfg, hidden=hidden, modality=modality)
        models[modality] = model
        rows += _summarise(modality, evaluate(IdmPolicy(model), refs, cfg))
    return rows, models


def mean_by(rows, key: str = "config", value: str = "auc") -> dict:
    groups: dict[str, list[float]] = {}
    for r in rows:
        groups.setdefault(r[key], []).append(r[value])
    return {k: float(np.mean(v)) for k, v in groups.items()}
