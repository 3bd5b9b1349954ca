"""Experiment config files.

INI syntax with three sections::

    [experiment]
    steps = 100000      ; environment interactions per trial
    trials = 20
    seed = 0            ; trial k uses seed + k
    window = 1000       ; steps per row of the metrics CSV
    out = runs/stop
    workers = 0         ; 0 = all available CPUs

    [env]
    preset = sa-medium
    ; or inline: kind = server_alloc, arrival_rates = 0.2, 0.1, service_probs = ...,
    ; connect_probs = ...; kind = nmodel with lambda1 ... mu3, holding_costs
    ; optional for both: init_max, queue_cap

    [method]
    method = stop       ; ppo | stop | maxweight | cmu | random | ppo_tw
    lyapunov_p = 2
    cost_variant = identity
    state_transform = sl
    ; any PpoHyper field (lr, rollout_len, clip, ...) and hidden = 64, 64
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, fields, replace

from ..arppo import MethodConfig, PpoHyper
from ..environments import NModelConfig, ServerAllocConfig, load_preset
from ..errors import ConfigError

EXPERIMENT_KEYS = ("steps", "trials", "seed", "window", "out", "workers")


@dataclass(frozen=True)
class ExperimentConfig:
    env: object
    method: MethodConfig
    env_label: str = "custom"
    steps: int = 100_000
    trials: int = 20
    seed: int = 0
    window: int = 1000
    out: str = "runs/experiment"
    workers: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if self.steps > 0 and self.window > self.steps:
            raise ConfigError("window must not exceed steps")
        if self.workers < 0:
            raise ConfigError("workers must be >= 0")

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


def _floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError as e:
        raise ConfigError(f"bad number list {text!r}") from e


def _int(section, key, default):
    try:
        return section.getint(key, fallback=default)
    except ValueError as e:
        raise ConfigError(f"{key} must be an integer") from e


def _parse_env(sec):
    keys = set(sec.keys())
    common = {}
    if "init_max" in keys:
        common["init_max"] = _int(sec, "init_max", 10)
    if "queue_cap" in keys:
        common["queue_cap"] = _int(sec, "queue_cap", None)
    if "preset" in keys:
        extra = keys - {"preset", "init_max", "queue_cap"}
        if extra:
            raise ConfigError(f"preset env does not take {sorted(extra)}")
        name = sec["preset"].strip()
        try:
            cfg = load_preset(name)
        except KeyError as e:
            raise ConfigError(str(e)) from e
        return (replace(cfg, **common) if common else cfg), name
    kind = sec.get("kind", "").strip().lower()
    if kind in ("server_alloc", "server-alloc"):
        allowed = {"kind", "arrival_rates", "service_probs", "connect_probs", "init_max", "queue_cap"}
        if keys - allowed:
            raise ConfigError(f"unknown env keys {sorted(keys - allowed)}")
        try:
            cfg = ServerAllocConfig(
                _floats(sec["arrival_rates"]), _floats(sec["service_probs"]),
                _floats(sec.get("connect_probs", " ".join(["1"] * len(_floats(sec["arrival_rates"]))))),
                **common,
            )
        except KeyError as e:
            raise ConfigError(f"missing env key {e}") from None
        return cfg, "server_alloc"
    if kind == "nmodel":
        allowed = {"kind", "lambda1", "lambda2", "mu1", "mu2", "mu3", "holding_costs", "init_max", "queue_cap"}
        if keys - allowed:
            raise ConfigError(f"unknown env keys {sorted(keys - allowed)}")
        try:
            rates = {k: float(sec[k]) for k in ("lambda1", "lambda2", "mu1", "mu2", "mu3")}
        except KeyError as e:
            raise ConfigError(f"missing env key {e}") from None
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if "holding_costs" in keys:
            rates["holding_costs"] = _floats(sec["holding_costs"])
        return NModelConfig(**rates, **common), "nmodel"
    raise ConfigError("[env] needs 'preset' or kind = server_alloc | nmodel")


_METHOD_TYPES = {"shaping_enabled": "bool", "lyapunov_p": float, "cost_variant": str,
                 "state_transform": str, "tw_upper": int, "tw_lower": int}


def _parse_method(sec) -> MethodConfig:
    if "method" not in sec:
        raise ConfigError("[method] needs 'method'")
    name = sec["method"].strip()
    hyper_types = {f.name: f.type for f in fields(PpoHyper)}
    kw = {}
    for key in sec.keys():
        if key == "method":
            continue
        raw = sec[key].strip()
        try:
            if key == "hidden":
                kw["hidden"] = tuple(int(v) for v in _floats(raw))
            elif key in _METHOD_TYPES:
                t = _METHOD_TYPES[key]
                kw[key] = sec.getboolean(key) if t == "bool" else t(raw)
            elif key in hyper_types:
                t = hyper_types[key]
                t = t if isinstance(t, type) else {"int": int, "float": float, "str": str}[t]
                kw[key] = t(raw)
            else:
                raise ConfigError(f"unknown method key {key!r}")
        except ValueError as e:
            raise ConfigError(f"bad value for {key}: {raw!r}") from e
    if name not in MethodConfig.METHODS:
        raise ConfigError(f"unknown method {name!r}")
    try:
        return MethodConfig.for_method(name, **kw)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def parse_config_text(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"unreadable config: {e}") from e
    for name in ("env", "method"):
        if not cp.has_section(name):
            raise ConfigError(f"missing [{name}] section")
    env, label = _parse_env(cp["env"])
    method = _parse_method(cp["method"])
    exp = cp["experiment"] if cp.has_section("experiment") else {}
    unknown = set(exp.keys()) - set(EXPERIMENT_KEYS) if exp else set()
    if unknown:
        raise ConfigError(f"unknown experiment keys {sorted(unknown)}")

    def geti(key, default):
        return _int(exp, key, default) if exp else default

    return ExperimentConfig(
        env=env, method=method, env_label=label,
        steps=geti("steps", 100_000), trials=geti("trials", 20), seed=geti("seed", 0),
        window=geti("window", 1000), out=(exp.get("out", "runs/experiment") if exp else "runs/experiment"),
        workers=geti("workers", 0),
    )


def load_config(path) -> ExperimentConfig:
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())
