"""TOML run configuration with strict key checking."""

from __future__ import annotations

import copy
import hashlib
import json
import os
import re
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import futuresel as fs
from .envsim import SCENARIOS, EnvConfig, HazardRegion, StochasticitySpec
from .harness import RolloutConfig
from .idm import MODALITIES, TrainConfig, WindowSpec

CONFIG_ENV_VAR = "IDMK_CONFIG"

DEFAULTS = {
    "seed": 0,
    "env": {
        "sigma": 0.05,
        "v_max": 1.0,
        "scenarios": list(SCENARIOS),
        "hazards": [],
    },
    "action": {"buttons": 2, "sticks": 2},
    "data": {"n_per_scenario": 10, "jitter": 0.1},
    "idm": {
        "past": 10,
        "future": 10,
        "K": 1,
        "hidden": 64,
        "encoder_layers": 2,
        "head_layers": 2,
        "modality": "full",
    },
    "train": {
        "epochs": 50,
        "updates_per_epoch": 200,
        "batch_size": 64,
        "learning_rate": 1e-3,
        "optimizer": "adam",
        "seed": 0,
        "button_weight": 1.0,
        "sticks_weight": 1.0,
    },
    "selector": {"strategy": "radius", "K": 1, "r": 2.0, "r_in": 0.5, "r_out": 2.0},
    "harness": {
        "n_seeds": 10,
        "base_seed": 0,
        "r_fi": 2.0,
        "fi_start": 0,
        "jobs": 1,
        "curve_points": 101,
    },
    "sweep": {"radii": [1.0, 2.0, 4.0], "io_pairs": [[0.5, 2.0], [1.0, 4.0]]},
}

_HAZARD_KEYS = {"center", "radius", "bias"}


class ConfigError(ValueError):
    pass


def _line_of(text: str, key: str) -> str:
    if not text:
        return ""
    pat = re.compile(rf"^\s*{re.escape(key)}\s*=", re.M)
    m = pat.search(text)
    if m is None:
        pat = re.compile(rf"^\s*\[{re.escape(key)}\]", re.M)
        m = pat.search(text)
    return f"line {text.count(chr(10), 0, m.start()) + 1}: " if m else ""


def _merge(base: dict, override: dict, text: str, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"{_line_of(text, key)}unknown key '{path}'")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{_line_of(text, key)}'{path}' must be a table")
            out[key] = _merge(base[key], val, text, path + ".")
        else:
            ref = base[key]
            if isinstance(ref, bool) or isinstance(val, bool):
                ok = isinstance(ref, bool) == isinstance(val, bool)
            elif isinstance(ref, float):
                ok = isinstance(val, (int, float))
                val = float(val) if ok else val
            else:
                ok = isinstance(val, type(ref))
            if not ok:
                raise ConfigError(
                    f"{_line_of(text, key)}'{path}' expects {type(ref).__name__}, got {type(val).__name__}"
                )
            out[key] = val
    return out


class RunConfig:
    """Validated configuration; ``data`` holds the merged plain-dict form."""

    def __init__(self, data: dict | None = None, text: str = ""):
        self.data = _merge(DEFAULTS, data or {}, text)
        try:
            self._validate()
        except ConfigError:
            raise
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc

    def _validate(self):
        d = self.data
        for name in d["env"]["scenarios"]:
            if name not in SCENARIOS:
                raise ConfigError(f"unknown scenario {name!r}")
        for hz in d["env"]["hazards"]:
            extra = set(hz) - _HAZARD_KEYS
            if extra or set(hz) != _HAZARD_KEYS:
                raise ConfigError(f"hazard entries need exactly {sorted(_HAZARD_KEYS)}")
        if d["idm"]["modality"] not in MODALITIES:
            raise ConfigError(f"idm.modality must be one of {MODALITIES}")
        if d["data"]["n_per_scenario"] < 1:
            raise ConfigError("data.n_per_scenario must be >= 1")
        # constructing the typed objects runs their own checks
        self.env_config()
        self.window_spec()
        self.train_config()
        self.rollout_config()

    # typed views

    def env_config(self, sigma: float | None = None) -> EnvConfig:
        e = self.data["env"]
        hazards = tuple(
            HazardRegion(tuple(h["center"]), float(h["radius"]), tuple(h["bias"])) for h in e["hazards"]
        )
        spec = StochasticitySpec(e["sigma"] if sigma is None else sigma, hazards)
        a = self.data["action"]
        return EnvConfig(e["v_max"], a["buttons"], a["sticks"], spec)

    def window_spec(self) -> WindowSpec:
        i = self.data["idm"]
        return WindowSpec(i["past"], i["future"], i["K"])

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.data["train"])

    def selector(self) -> fs.SelectorKind:
        s = self.data["selector"]
        return fs.make_kind(s["strategy"], s["K"], s["r"], s["r_in"], s["r_out"])

    def rollout_config(self) -> RolloutConfig:
        h = self.data["harness"]
        return RolloutConfig(
            selector=self.selector(),
            env=self.env_config(),
            n_seeds=h["n_seeds"],
            base_seed=h["base_seed"],
            r_fi=h["r_fi"],
            fi_start=h["fi_start"],
            jobs=h["jobs"],
        )

    def with_overrides(self, **sections) -> "RunConfig":
        """Copy with ``section={key: value}`` overrides applied and re-validated."""
        merged = copy.deepcopy(self.data)
        for sec, vals in sections.items():
            for k, v in vals.items():
                if v is not None:
                    merged[sec][k] = v
        return RunConfig(merged)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def hash(self) -> str:
        blob = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path: str | Path | None = None) -> RunConfig:
    """Load ``path``, else the file named by ``$IDMK_CONFIG``, else the defaults."""
    path = path or os.environ.get(CONFIG_ENV_VAR)
    if not path:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    try:
        return RunConfig(data, text)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def default_config_text() -> str:
    """The defaults rendered as TOML, for ``--help`` and documentation."""
    lines = [f"seed = {DEFAULTS['seed']}"]
    for sec, vals in DEFAULTS.items():
        if not isinstance(vals, dict):
            continue
        lines.append(f"\n[{sec}]")
        for k, v in vals.items():
            lines.append(f"{k} = {json.dumps(v)}")
    return "\n".join(lines) + "\n"
