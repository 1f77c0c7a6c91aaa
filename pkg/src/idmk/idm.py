"""IDM-K: an MLP inverse dynamics model over a past window and a future window.

Input layout, for a past window of P steps and a future window of F steps::

    past block  (per step s = t-P+1 .. t):   obs_s, encoded action a_{s-1}
    future block (per index j = f .. f+F-1): ref_pos_j - agent_pos_t, ref obs_j, encoded ref action a_j

Past steps before the start of the trajectory are zero blocks; future indices
past the end repeat the last reference step. The action stored with the
current step is the prediction target, so the past block carries the action
that *led into* each observation.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import N_BINS, Action, InvalidInputError, Trajectory

MODALITIES = ("full", "obs-only", "actions-only")
CHECKPOINT_FORMAT = "idmk-model"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class WindowSpec:
    past: int = 10
    future: int = 10
    K: int = 1

    def __post_init__(self):
        if self.past < 0 or self.future < 0 or self.K < 0:
            raise InvalidInputError("window lengths and K must be >= 0")
        if self.past + self.future < 1:
            raise InvalidInputError("need at least one past or future step")

    @property
    def label(self) -> str:
        if self.future == 0:
            return f"BC({self.past}P-0F)"
        return f"{self.past}P-{self.future}F"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    updates_per_epoch: int = 200
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    button_weight: float = 1.0
    sticks_weight: float = 1.0

    def __post_init__(self):
        for name in ("epochs", "updates_per_epoch", "batch_size"):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"{name} must be >= 1")
        if not self.learning_rate > 0:
            raise InvalidInputError("learning_rate must be > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise InvalidInputError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    button_loss: float
    sticks_loss: float
    button_error_rate: float
    sticks_error_rate: float


# ---------------------------------------------------------------- features

def step_widths(obs_dim: int, n_buttons: int, n_sticks: int) -> tuple[int, int]:
    act = n_buttons + n_sticks
    return obs_dim + act, 2 + obs_dim + act


def input_width(spec: WindowSpec, obs_dim: int, n_buttons: int, n_sticks: int) -> int:
    past_w, fut_w = step_widths(obs_dim, n_buttons, n_sticks)
    return spec.past * past_w + spec.future * fut_w


class _Features:
    """Per-trajectory arrays used to assemble model inputs."""

    def __init__(self, tr: Trajectory):
        self.T = len(tr)
        self.obs = tr.observations()
        self.act = tr.encoded_actions()
        self.pos = tr.positions()[:, :2]
        self.prev_act = np.vstack([np.zeros((1, self.act.shape[1])), self.act[:-1]])
        self.obs_dim = self.obs.shape[1]
        self.act_dim = self.act.shape[1]


class RolloutBuffer:
    """Growing feature arrays for a trajectory being generated step by step.

    Rows beyond the current step are left at zero; ``build_inputs`` never
    reads them because past windows end at ``t``.
    """

    def __init__(self, T: int, obs_dim: int, act_dim: int):
        self.T = T
        self.obs = np.zeros((T, obs_dim))
        self.act = np.zeros((T, act_dim))
        self.prev_act = np.zeros((T, act_dim))
        self.pos = np.zeros((T, 2))
        self.obs_dim = obs_dim
        self.act_dim = act_dim

    def record_state(self, t: int, pos, obs) -> None:
        self.pos[t] = np.asarray(pos, dtype=float)[:2]
        self.obs[t] = obs

    def record_action(self, t: int, encoded) -> None:
        self.act[t] = encoded
        if t + 1 < self.T:
            self.prev_act[t + 1] = encoded


def _features(tr) -> _Features:
    if isinstance(tr, (_Features, RolloutBuffer)):
        return tr
    f = tr._cache.get("features")
    if f is None:
        f = tr._cache["features"] = _Features(tr)
    return f


def _modality_mask(spec: WindowSpec, obs_dim: int, act_dim: int, modality: str) -> np.ndarray:
    if modality not in MODALITIES:
        raise InvalidInputError(f"unknown modality {modality!r}")
    past = np.concatenate([np.full(obs_dim, modality != "actions-only"),
                           np.full(act_dim, modality != "obs-only")])
    fut = np.concatenate([np.full(2 + obs_dim, modality != "actions-only"),
                          np.full(act_dim, modality != "obs-only")])
    return np.concatenate([np.tile(past, spec.past), np.tile(fut, spec.future)]).astype(float)


def build_inputs(
    past: Trajectory,
    ts,
    fut_idxs,
    spec: WindowSpec,
    future: Trajectory | None = None,
    modality: str = "full",
) -> np.ndarray:
    """Vectorised ``build_input`` over arrays of (t, fut_idx) pairs."""
    fp = _features(past)
    ff = fp if future is None else _features(future)
    ts = np.atleast_1d(np.asarray(ts, dtype=int))
    fis = np.atleast_1d(np.asarray(fut_idxs, dtype=int))
    if np.any(ts < 0) or np.any(ts >= fp.T):
        raise InvalidInputError("t outside the past trajectory")
    if np.any(fis < 0) or np.any(fis >= ff.T):
        raise InvalidInputError("fut_idx outside the future trajectory")
    n = len(ts)
    blocks = []
    if spec.past:
        idx = ts[:, None] + np.arange(-spec.past + 1, 1)[None, :]
        valid = (idx >= 0)[:, :, None]
        idx = np.clip(idx, 0, None)
        blk = np.concatenate([fp.obs[idx], fp.prev_act[idx]], axis=2) * valid
        blocks.append(blk.reshape(n, -1))
    if spec.future:
        idx = np.minimum(fis[:, None] + np.arange(spec.future)[None, :], ff.T - 1)
        rel = ff.pos[idx] - fp.pos[ts][:, None, :]
        blk = np.concatenate([rel, ff.obs[idx], ff.act[idx]], axis=2)
        blocks.append(blk.reshape(n, -1))
    x = np.concatenate(blocks, axis=1)
    if modality != "full":
        x = x * _modality_mask(spec, fp.obs_dim, fp.act_dim, modality)
    return x


def build_input(
    past: Trajectory,
    t: int,
    fut_idx: int,
    spec: WindowSpec,
    future: Trajectory | None = None,
    modality: str = "full",
) -> np.ndarray:
    """Model input for step ``t`` of ``past`` conditioned on ``future`` from ``fut_idx``.

    ``future`` defaults to ``past`` itself, which is the training-time case.
    """
    return build_inputs(past, [t], [fut_idx], spec, future, modality)[0]


# ------------------------------------------------------------------- model

@dataclass
class IdmModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    spec: WindowSpec
    obs_dim: int
    n_buttons: int
    n_sticks: int
    encoder_layers: int = 2
    modality: str = "full"
    in_mean: np.ndarray | None = None
    in_std: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def in_width(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_width(self) -> int:
        return 2 * self.n_buttons + N_BINS * self.n_sticks

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def copy(self) -> "IdmModel":
        return IdmModel(
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            self.spec,
            self.obs_dim,
            self.n_buttons,
            self.n_sticks,
            self.encoder_layers,
            self.modality,
            None if self.in_mean is None else self.in_mean.copy(),
            None if self.in_std is None else self.in_std.copy(),
            dict(self.meta),
        )


def init_model(
    spec: WindowSpec,
    obs_dim: int,
    n_buttons: int,
    n_sticks: int,
    hidden: int = 64,
    encoder_layers: int = 2,
    head_layers: int = 2,
    seed: int = 0,
    modality: str = "full",
) -> IdmModel:
    """He-initialised model. The head's last layer emits the logits."""
    if encoder_layers < 1 or head_layers < 1:
        raise InvalidInputError("need at least one encoder and one head layer")
    if modality not in MODALITIES:
        raise InvalidInputError(f"unknown modality {modality!r}")
    rng = np.random.default_rng(seed)
    n_in = input_width(spec, obs_dim, n_buttons, n_sticks)
    n_out = 2 * n_buttons + N_BINS * n_sticks
    sizes = [n_in] + [hidden] * (encoder_layers + head_layers - 1) + [n_out]
    weights, biases = [], []
    for a, b in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.normal(0.0, math.sqrt(2.0 / a), size=(a, b)))
        biases.append(np.zeros(b))
    weights[-1] *= 0.1
    return IdmModel(weights, biases, spec, obs_dim, n_buttons, n_sticks, encoder_layers, modality)


def _normalise(model: IdmModel, x: np.ndarray) -> np.ndarray:
    if model.in_mean is None:
        return x
    return (x - model.in_mean) / model.in_std


def _forward_cache(model: IdmModel, X: np.ndarray):
    h = _normalise(model, X)
    acts = [h]
    pre = []
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ W + b
        pre.append(z)
        h = z if i == last else np.maximum(z, 0.0)
        acts.append(h)
    return acts, pre


def forward_batch(model: IdmModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(X)
    if X.shape[1] != model.in_width:
        raise InvalidInputError(f"input width {X.shape[1]} != model width {model.in_width}")
    return _forward_cache(model, X)[0][-1]


def split_logits(flat: np.ndarray, n_buttons: int, n_sticks: int) -> tuple[np.ndarray, np.ndarray]:
    flat = np.atleast_2d(flat)
    n, nb = len(flat), 2 * n_buttons
    return (flat[:, :nb].reshape(n, n_buttons, 2),
            flat[:, nb:].reshape(n, n_sticks, N_BINS))


def forward(model: IdmModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Raw logits for one input: (B, 2) button logits and (S, 11) stick logits."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise InvalidInputError("forward takes a single input vector")
    bl, sl = split_logits(forward_batch(model, x[None, :]), model.n_buttons, model.n_sticks)
    return bl[0], sl[0]


# -------------------------------------------------------------------- loss

def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    s = z - m
    return s - np.log(np.sum(np.exp(s), axis=-1, keepdims=True))


def action_targets(actions) -> tuple[np.ndarray, np.ndarray]:
    """Integer class targets (N, B) and (N, S) for a list of actions."""
    if isinstance(actions, Action):
        actions = [actions]
    bt = np.array([[int(b) for b in a.buttons] for a in actions], dtype=int)
    st = np.array([list(a.sticks) for a in actions], dtype=int)
    return bt.reshape(len(actions), -1), st.reshape(len(actions), -1)


def loss_batch(
    button_logits: np.ndarray,
    stick_logits: np.ndarray,
    button_t: np.ndarray,
    stick_t: np.ndarray,
    button_weight: float = 1.0,
    sticks_weight: float = 1.0,
) -> tuple[LossBreakdown, np.ndarray, np.ndarray]:
    """Mean cross-entropy per modality and the gradient of the weighted total w.r.t. the logits."""
    n = button_logits.shape[0]
    nb, ns = button_logits.shape[1], stick_logits.shape[1]
    rows = np.arange(n)[:, None]

    b_loss = s_loss = 0.0
    b_err = s_err = 0.0
    gb = np.zeros_like(button_logits)
    gs = np.zeros_like(stick_logits)
    if nb:
        lp = _log_softmax(button_logits)
        nll = -lp[rows, np.arange(nb)[None, :], button_t]
        b_loss = float(nll.mean())
        b_err = float(np.mean(np.argmax(button_logits, axis=2) != button_t))
        gb = np.exp(lp)
        gb[rows, np.arange(nb)[None, :], button_t] -= 1.0
        gb *= button_weight / (n * nb)
    if ns:
        lp = _log_softmax(stick_logits)
        nll = -lp[rows, np.arange(ns)[None, :], stick_t]
        s_loss = float(nll.mean())
        s_err = float(np.mean(np.argmax(stick_logits, axis=2) != stick_t))
        gs = np.exp(lp)
        gs[rows, np.arange(ns)[None, :], stick_t] -= 1.0
        gs *= sticks_weight / (n * ns)
    total = button_weight * b_loss + sticks_weight * s_loss
    return LossBreakdown(total, b_loss, s_loss, b_err, s_err), gb, gs


def loss(logits: tuple[np.ndarray, np.ndarray], target: Action):
    """Loss breakdown for one prediction and the gradients w.r.t. its logits."""
    bl, sl = (np.asarray(v, dtype=float) for v in logits)
    bt, st = action_targets(target)
    lb, gb, gs = loss_batch(bl[None], sl[None], bt, st)
    return lb, (gb[0], gs[0])


# ---------------------------------------------------------------- backprop

def _backward_batch(model: IdmModel, X: np.ndarray, bt: np.ndarray, st: np.ndarray,
                    button_weight: float = 1.0, sticks_weight: float = 1.0):
    acts, pre = _forward_cache(model, X)
    bl, sl = split_logits(acts[-1], model.n_buttons, model.n_sticks)
    lb, gb, gs = loss_batch(bl, sl, bt, st, button_weight, sticks_weight)
    delta = np.concatenate([gb.reshape(len(X), -1), gs.reshape(len(X), -1)], axis=1)
    gW = [None] * len(model.weights)
    gB = [None] * len(model.weights)
    for i in range(len(model.weights) - 1, -1, -1):
        gW[i] = acts[i].T @ delta
        gB[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ model.weights[i].T) * (pre[i - 1] > 0)
    grads = []
    for w, b in zip(gW, gB):
        grads += [w, b]
    return lb, grads


def backward(model: IdmModel, x: np.ndarray, target: Action) -> list[np.ndarray]:
    """Gradients of the total loss w.r.t. every parameter, ordered as ``model.params()``."""
    bt, st = action_targets(target)
    return _backward_batch(model, np.atleast_2d(np.asarray(x, dtype=float)), bt, st)[1]


def predict_batch(model: IdmModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    bl, sl = split_logits(forward_batch(model, X), model.n_buttons, model.n_sticks)
    # argmax takes the first maximum: ties go to "not pressed" and the lower bin
    return np.argmax(bl, axis=2), np.argmax(sl, axis=2)


def predict_action(model: IdmModel, x: np.ndarray) -> Action:
    b, s = predict_batch(model, np.atleast_2d(np.asarray(x, dtype=float)))
    return Action(tuple(bool(v) for v in b[0]), tuple(int(v) for v in s[0]))


# ---------------------------------------------------------------- training

def _check_dataset(dataset, spec: WindowSpec):
    if not dataset:
        raise InvalidInputError("empty dataset")
    shortest = min(len(tr) for tr in dataset)
    if max(spec.past, spec.future, 1) > shortest:
        raise InvalidInputError(
            f"window {spec.label} longer than the shortest trajectory ({shortest} steps)"
        )
    first = dataset[0]
    for tr in dataset:
        if (tr.obs_dim, tr.n_buttons, tr.n_sticks) != (first.obs_dim, first.n_buttons, first.n_sticks):
            raise InvalidInputError("trajectories disagree on observation or action widths")


def training_arrays(dataset, spec: WindowSpec, modality: str = "full"):
    """Every (trajectory, t) sample with the static alignment fut_idx = t + K."""
    xs, bts, sts = [], [], []
    for tr in dataset:
        ts = np.arange(len(tr))
        fis = np.minimum(ts + spec.K, len(tr) - 1)
        xs.append(build_inputs(tr, ts, fis, spec, modality=modality))
        bt, st = action_targets([s.action for s in tr.steps])
        bts.append(bt)
        sts.append(st)
    return np.vstack(xs), np.vstack(bts), np.vstack(sts)


class Adam:
    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def update(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, params, lr: float):
        self.lr = lr

    def update(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


def train(
    dataset,
    spec: WindowSpec,
    cfg: TrainConfig = TrainConfig(),
    hidden: int = 64,
    encoder_layers: int = 2,
    head_layers: int = 2,
    modality: str = "full",
    progress=None,
) -> tuple[IdmModel, list[LossBreakdown]]:
    """Fit an IDM on demonstrations. Returns the model and one loss record per epoch.

    Each epoch's record averages the minibatch losses of that epoch.
    ``progress`` is called as ``progress(epoch, breakdown)`` after every epoch.
    """
    _check_dataset(dataset, spec)
    first = dataset[0]
    X, BT, ST = training_arrays(dataset, spec, modality)
    model = init_model(spec, first.obs_dim, first.n_buttons, first.n_sticks, hidden,
                       encoder_layers, head_layers, cfg.seed, modality)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std < 1e-8] = 1.0
    model.in_mean, model.in_std = mean, std

    params = model.params()
    opt = Adam(params, cfg.learning_rate) if cfg.optimizer == "adam" else SGD(params, cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed + 1)
    log = []
    for epoch in range(cfg.epochs):
        acc = np.zeros(5)
        for _ in range(cfg.updates_per_epoch):
            rows = rng.integers(0, len(X), size=cfg.batch_size)
            lb, grads = _backward_batch(model, X[rows], BT[rows], ST[rows],
                                        cfg.button_weight, cfg.sticks_weight)
            opt.update(params, grads)
            acc += (lb.total, lb.button_loss, lb.sticks_loss, lb.button_error_rate, lb.sticks_error_rate)
        acc /= cfg.updates_per_epoch
        rec = LossBreakdown(*(float(v) for v in acc))
        log.append(rec)
        if progress is not None:
            progress(epoch, rec)
    model.meta = {"train": asdict(cfg), "hidden": hidden, "head_layers": head_layers}
    return model, log


def evaluate_loss(model: IdmModel, dataset) -> LossBreakdown:
    X, BT, ST = training_arrays(dataset, model.spec, model.modality)
    bl, sl = split_logits(forward_batch(model, X), model.n_buttons, model.n_sticks)
    return loss_batch(bl, sl, BT, ST)[0]


# -------------------------------------------------------------- grad check

@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    n_probes: int
    tol: float
    passed: bool


def _total_loss(model: IdmModel, x: np.ndarray, bt: np.ndarray, st: np.ndarray) -> float:
    bl, sl = split_logits(forward_batch(model, x), model.n_buttons, model.n_sticks)
    return loss_batch(bl, sl, bt, st)[0].total


def grad_check(
    model: IdmModel,
    n_samples: int = 2,
    h: float = 1e-5,
    tol: float = 1e-4,
    seed: int = 0,
    max_probes: int | None = None,
    grad_fn=None,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare analytic gradients with central differences on random (input, target) pairs.

    Relative error is ``|g - g_fd| / max(|g|, |g_fd|, floor)``. Every parameter
    coordinate is probed unless ``max_probes`` caps the count per sample.
    ``grad_fn(model, x, action)`` replaces :func:`backward` for negative controls.
    """
    if not h > 0:
        raise InvalidInputError("finite-difference step h must be > 0")
    if n_samples < 1:
        raise InvalidInputError("n_samples must be >= 1")
    grad_fn = grad_fn or backward
    rng = np.random.default_rng(seed)
    work = model.copy()
    params = work.params()
    sizes = [p.size for p in params]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst, probes = 0.0, 0
    for _ in range(n_samples):
        x = rng.normal(size=(1, work.in_width))
        target = Action(tuple(bool(v) for v in rng.integers(0, 2, work.n_buttons)),
                        tuple(int(v) for v in rng.integers(0, N_BINS, work.n_sticks)))
        bt, st = action_targets(target)
        analytic = np.concatenate([g.ravel() for g in grad_fn(work, x[0], target)])
        coords = np.arange(offsets[-1])
        if max_probes is not None and max_probes < len(coords):
            coords = np.sort(rng.choice(coords, size=max_probes, replace=False))
        for c in coords:
            k = int(np.searchsorted(offsets, c, side="right") - 1)
            flat = params[k].reshape(-1)
            i = c - offsets[k]
            old = flat[i]
            flat[i] = old + h
            up = _total_loss(work, x, bt, st)
            flat[i] = old - h
            down = _total_loss(work, x, bt, st)
            flat[i] = old
            fd = (up - down) / (2 * h)
            a = analytic[c]
            err = abs(a - fd) / max(abs(a), abs(fd), floor)
            worst = max(worst, err)
            probes += 1
    return GradCheckReport(worst, probes, tol, worst < tol)


# -------------------------------------------------------------- checkpoint

def model_to_dict(model: IdmModel) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": asdict(model.spec),
        "obs_dim": model.obs_dim,
        "n_buttons": model.n_buttons,
        "n_sticks": model.n_sticks,
        "encoder_layers": model.encoder_layers,
        "modality": model.modality,
        "shapes": [list(W.shape) for W in model.weights],
        "weights": [W.ravel().tolist() for W in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "in_mean": None if model.in_mean is None else model.in_mean.tolist(),
        "in_std": None if model.in_std is None else model.in_std.tolist(),
        "meta": model.meta,
    }


def model_from_dict(d: dict) -> IdmModel:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise InvalidInputError("not an idmk model checkpoint")
    if d.get("version") != CHECKPOINT_VERSION:
        raise InvalidInputError(f"unsupported checkpoint version {d.get('version')}")
    weights = [np.array(w, dtype=float).reshape(s) for w, s in zip(d["weights"], d["shapes"])]
    biases = [np.array(b, dtype=float) for b in d["biases"]]
    return IdmModel(
        weights,
        biases,
        WindowSpec(**d["spec"]),
        d["obs_dim"],
        d["n_buttons"],
        d["n_sticks"],
        d["encoder_layers"],
        d["modality"],
        None if d["in_mean"] is None else np.array(d["in_mean"], dtype=float),
        None if d["in_std"] is None else np.array(d["in_std"], dtype=float),
        d.get("meta", {}),
    )


def save_model(model: IdmModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), sort_keys=True))


def load_model(path: str | Path) -> IdmModel:
    try:
        return model_from_dict(json.loads(Path(path).read_text()))
    except (KeyError, ValueError, TypeError) as exc:
        raise InvalidInputError(f"{path}: unreadable checkpoint ({exc})") from exc
