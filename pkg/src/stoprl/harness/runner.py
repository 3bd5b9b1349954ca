"""Seeded multi-trial runs and their CSV outputs."""

from __future__ import annotations

import csv
import logging
import os
import traceback
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from ..arppo import TrainResult, train
from ..baselines import run_fixed_policy, train_ppo_tw
from .config import ExperimentConfig

log = logging.getLogger(__name__)

WINDOW_HEADER = ("trial", "step", "mean_true_cost", "mean_shaped_cost", "destab_frac")
RAW_HEADER = ("trial", "step", "true_cost", "shaped_cost", "action", "destabilizing")
FIXED_METHODS = ("maxweight", "cmu", "random")


def _fmt(x: float) -> str:
    return repr(float(x))


def trial_path(out_dir: str, k: int, raw: bool = False) -> str:
    return os.path.join(out_dir, f"trial_{k:03d}{'_raw' if raw else ''}.csv")


def run_trial(config: ExperimentConfig, k: int, backend=None) -> TrainResult:
    seed = config.seed + k
    name = config.method.method
    if name in FIXED_METHODS:
        return run_fixed_policy(config.env, config.method, config.steps, seed, backend=backend)
    if name == "ppo_tw":
        return train_ppo_tw(config.env, config.method, config.steps, seed)
    return train(config.env, config.method, config.steps, seed, backend=backend)


def window_rows(result: TrainResult, k: int, window: int):
    """(trial, end step, mean true, mean shaped, destabilizing share) per window; last may be partial."""
    n = result.steps
    for start in range(0, n, window):
        end = min(start + window, n)
        sl = slice(start, end)
        yield (k, end, float(np.mean(result.true_costs[sl])), float(np.mean(result.shaped_costs[sl])),
               float(np.mean(result.destabilizing[sl])))


def write_trial(out_dir: str, k: int, result: TrainResult, window: int, raw: bool = False) -> None:
    with open(trial_path(out_dir, k), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(WINDOW_HEADER)
        for tr, step, mt, ms, df in window_rows(result, k, window):
            w.writerow((tr, step, _fmt(mt), _fmt(ms), _fmt(df)))
    if raw:
        with open(trial_path(out_dir, k, raw=True), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RAW_HEADER)
            for t in range(result.steps):
                w.writerow((k, t + 1, _fmt(result.true_costs[t]), _fmt(result.shaped_costs[t]),
                            int(result.actions[t]), int(result.destabilizing[t])))


def _run_and_write(config: ExperimentConfig, k: int, out_dir: str, raw: bool):
    """Worker entry point; returns None on success or the formatted failure."""
    try:
        result = run_trial(config, k)
        write_trial(out_dir, k, result, config.window, raw)
        return None
    except Exception:  # one failed trial must not take down its siblings
        return traceback.format_exc()


def default_workers() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)


def run_experiment(config: ExperimentConfig, raw: bool = False, trials=None) -> str:
    """Run every trial (or the listed ``trials``), write CSVs into ``config.out``.

    Returns the output directory. Trial failures are logged to ``errors.txt``
    and reported by ``failed_trials``.
    """
    out_dir = config.out
    os.makedirs(out_dir, exist_ok=True)
    ks = list(range(config.trials)) if trials is None else list(trials)
    workers = config.workers or default_workers()
    workers = min(workers, len(ks))
    if workers <= 1:
        errors = [_run_and_write(config, k, out_dir, raw) for k in ks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_run_and_write, config, k, out_dir, raw) for k in ks]
            errors = [f.result() for f in futs]
    err_path = os.path.join(out_dir, "errors.txt")
    failed = [(k, e) for k, e in zip(ks, errors) if e is not None]
    if failed:
        with open(err_path, "w", encoding="utf-8") as fh:
            for k, e in failed:
                fh.write(f"trial {k} (seed {config.seed + k}) failed:\n{e}\n")
        for k, _ in failed:
            log.error("trial %d failed; see %s", k, err_path)
    elif os.path.exists(err_path) and trials is None:
        os.remove(err_path)
    return out_dir


def failed_trials(out_dir: str) -> list:
    path = os.path.join(out_dir, "errors.txt")
    if not os.path.exists(path):
        return []
    with open(path, encoding="utf-8") as fh:
        return [int(line.split()[1]) for line in fh if line.startswith("trial ")]
