"""Cross-trial IQM summaries and the unstable-action advantage table."""

from __future__ import annotations

import csv
import glob
import os
import warnings

import numpy as np

from .. import kernels
from ..arppo import Agent, AvgCostEstimate, RolloutBuffer, estimate_advantages, fill_buffer, trial_streams, update_eta
from ..diagnostics import summarize, unstable_advantage_stats
from ..environments import QueueEnv, load_preset
from ..errors import AlignmentError, ConfigError
from ..shaping import ShapingSpec
from .runner import WINDOW_HEADER, _fmt

METRICS = WINDOW_HEADER[2:]
SUMMARY_HEADER = ("method", "step", "iqm", "ci_low", "ci_high", "n_trials", "single_trial")
TABLE1_HEADER = ("setting", "iqm", "ci_low", "ci_high", "n_trials")


def read_trials(run_dir: str, metric: str):
    """``(steps, values)`` with values shaped (trials, windows)."""
    if metric not in METRICS:
        raise ConfigError(f"metric must be one of {METRICS}, got {metric!r}")
    paths = sorted(p for p in glob.glob(os.path.join(run_dir, "trial_*.csv")) if not p.endswith("_raw.csv"))
    if not paths:
        raise ConfigError(f"no trial files in {run_dir}")
    grid, values = None, []
    for path in paths:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        steps = [int(r["step"]) for r in rows]
        if grid is None:
            grid = steps
        elif steps != grid:
            raise AlignmentError(f"{path} does not share the window grid of {paths[0]}")
        values.append([float(r[metric]) for r in rows])
    return np.asarray(grid, dtype=np.int64), np.asarray(values, dtype=np.float64).reshape(len(paths), len(grid))


def aggregate(run_dirs, metric: str, out_path: str, n_bootstrap: int = 2000, seed: int = 0) -> str:
    """One row per (run directory, window): IQM across trials with a 95% bootstrap interval."""
    rng = np.random.default_rng(seed)
    data = [(os.path.basename(os.path.normpath(d)), *read_trials(d, metric)) for d in run_dirs]
    grids = {tuple(g) for _, g, _ in data}
    if len(grids) > 1:
        raise AlignmentError("run directories use different window grids")
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for label, steps, vals in data:
            for j, step in enumerate(steps):
                s = summarize(vals[:, j], n_bootstrap, rng)
                w.writerow((label, int(step), _fmt(s.iqm), _fmt(s.ci_low), _fmt(s.ci_high),
                            s.n_samples, int(s.n_samples == 1)))
    return out_path


def table1(out_path=None, trials: int = 20, buffer_len: int = 128, preset: str = "sa-medium",
           transform: str = "sl", gae_lambda: float = 0.95, n_bootstrap: int = 2000, seed: int = 0):
    """Advantages of destabilizing actions under a uniform policy, in cost convention.

    Each trial draws one rollout of ``buffer_len`` steps from a random start
    with a freshly initialised critic, and scores it under three cost
    settings: true cost, true cost + l1 drift, true cost + l2 drift. A
    positive value means the estimator rates the destabilizing action worse
    than average. Rows: ``(setting, iqm, ci_low, ci_high, n_trials)``.
    """
    config = load_preset(preset)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        settings = (("true", ShapingSpec(2.0, enabled=False)),
                    ("l1", ShapingSpec(1.0, enabled=True)),
                    ("l2", ShapingSpec(2.0, enabled=True)))
    per_trial = {name: [] for name, _ in settings}
    for k in range(trials):
        env_rng, init_rng, _ = trial_streams(seed + k)
        env = QueueEnv(config)
        env.reset(env_rng)
        agent = Agent.create(config.obs_dim, config.num_actions, init_rng, transform=transform)
        u = env.draw_uniforms(env_rng, buffer_len)
        states, actions, logps, costs = kernels.simulate(config, env.state, u, kernels.POLICY_RANDOM)
        for name, spec in settings:
            buf = RolloutBuffer(buffer_len)
            fill_buffer(buf, config, states, actions, logps, costs, spec, agent.transform)
            eta = update_eta(buf, AvgCostEstimate()).eta
            adv, _ = estimate_advantages(buf, agent.critic, eta, gae_lambda)
            m = unstable_advantage_stats(buf, -adv)
            if m is not None:
                per_trial[name].append(m)
    rng = np.random.default_rng(seed)
    rows = []
    for name, _ in settings:
        vals = per_trial[name]
        if not vals:
            rows.append((name, float("nan"), float("nan"), float("nan"), 0))
            continue
        s = summarize(vals, n_bootstrap, rng)
        rows.append((name, s.iqm, s.ci_low, s.ci_high, s.n_samples))
    if out_path is not None:
        with open(out_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TABLE1_HEADER)
            for name, a, b, c, n in rows:
                w.writerow((name, _fmt(a), _fmt(b), _fmt(c), n))
    return rows
