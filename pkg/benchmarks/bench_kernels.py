"""Compare the compiled and pure-Python rollout kernels.

    python benchmarks/bench_kernels.py [--steps 20000] [--repeat 3]

Both backends consume the same uniform matrix, so the script also checks
that they produce identical trajectories before timing them.
"""

import argparse
import time

import numpy as np

from stoprl import kernels
from stoprl.environments import QueueEnv, load_preset
from stoprl.policy_net import init_policy

CASES = [
    ("sa-medium", kernels.POLICY_MLP),
    ("sa-medium", kernels.POLICY_MAXWEIGHT),
    ("sa-10queue", kernels.POLICY_MLP),
    ("nmodel-veryhigh-2", kernels.POLICY_MLP),
]
NAMES = {kernels.POLICY_MLP: "mlp", kernels.POLICY_MAXWEIGHT: "maxweight"}


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    backends = kernels.available_backends()
    print(f"backends: {backends}; {args.steps} steps, best of {args.repeat}")
    print(f"{'env':<20}{'policy':<11}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    for preset, kind in CASES:
        cfg = load_preset(preset)
        rng = np.random.default_rng(0)
        env = QueueEnv(cfg)
        state = env.reset(rng)
        u = env.draw_uniforms(rng, args.steps)
        params = init_policy(cfg.obs_dim, cfg.num_actions, rng) if kind == kernels.POLICY_MLP else None
        outs = {b: kernels.simulate(cfg, state, u, kind, params, 2, backend=b) for b in backends}
        if len(backends) == 2:
            a, b = outs["python"], outs["cython"]
            assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1]), "backends disagree"
        times = {b: _time(lambda b=b: kernels.simulate(cfg, state, u, kind, params, 2, backend=b), args.repeat)
                 for b in backends}
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{preset:<20}{NAMES[kind]:<11}" + "".join(f"{times[b]:>11.4f}s" for b in backends)
              + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
