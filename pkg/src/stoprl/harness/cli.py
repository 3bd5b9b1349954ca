"""Command-line entry point: ``stoprl {run,aggregate,table1,oracle-check,sweep}``.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
import warnings

from ..environments import load_preset
from ..errors import AlignmentError, ConfigError
from ..exact_oracle import oracle_table
from .aggregate import METRICS, aggregate, table1
from .config import load_config, parse_config_text
from .runner import failed_trials, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stoprl", description="Stability-shaped PPO experiments on queueing networks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    r = sub.add_parser("run", help="run the trials described by a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--steps", type=int)
    r.add_argument("--trials", type=int)
    r.add_argument("--workers", type=int)
    r.add_argument("--raw", action="store_true", help="also write per-step CSVs")

    a = sub.add_parser("aggregate", help="IQM and bootstrap CI across trials")
    a.add_argument("--in", dest="inputs", nargs="+", required=True)
    a.add_argument("--metric", required=True, choices=METRICS)
    a.add_argument("--out", required=True)
    a.add_argument("--bootstrap", type=int, default=2000)
    a.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("table1", help="advantage of destabilizing actions under a uniform policy")
    t.add_argument("--out", required=True)
    t.add_argument("--trials", type=int, default=20)
    t.add_argument("--buffer", type=int, default=128)
    t.add_argument("--seed", type=int, default=0)

    o = sub.add_parser("oracle-check", help="exact shaped vs true average cost on a capped chain")
    o.add_argument("--cap", type=int, default=10)
    o.add_argument("--preset", default="sa-medium")
    o.add_argument("--p", type=float, default=2.0)

    s = sub.add_parser("sweep", help="repeat a run over values of one method key")
    s.add_argument("--config", required=True)
    s.add_argument("--param", required=True)
    s.add_argument("--values", required=True, help="comma-separated")
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.add_argument("--steps", type=int)
    s.add_argument("--trials", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--raw", action="store_true")
    return p


def _overrides(args) -> dict:
    kw = {}
    for key in ("seed", "out", "steps", "trials", "workers"):
        v = getattr(args, key, None)
        if v is not None:
            kw[key] = v
    return kw


def _cmd_run(args) -> int:
    cfg = load_config(args.config).with_overrides(**_overrides(args))
    out = run_experiment(cfg, raw=args.raw)
    bad = failed_trials(out)
    print(f"wrote {cfg.trials} trial file(s) to {out}")
    if bad:
        print(f"{len(bad)} trial(s) failed: {bad}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _cmd_aggregate(args) -> int:
    aggregate(args.inputs, args.metric, args.out, args.bootstrap, args.seed)
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_table1(args) -> int:
    rows = table1(args.out, trials=args.trials, buffer_len=args.buffer, seed=args.seed)
    for name, iqm, lo, hi, n in rows:
        print(f"{name:>5}  iqm={iqm:+.3f}  ci=[{lo:+.3f}, {hi:+.3f}]  n={n}")
    return EXIT_OK


def _cmd_oracle(args) -> int:
    try:
        config = load_preset(args.preset)
    except KeyError as e:
        raise ConfigError(str(e)) from e
    rows, same_order = oracle_table(config, args.cap, args.p)
    print(f"{'policy':<15} {'J_true':>14} {'J_shaped':>14}  result")
    for name, jt, js, ok in rows:
        print(f"{name:<15} {jt:14.9f} {js:14.9f}  {'PASS' if ok else 'FAIL'}")
    print(f"{'ordering':<15} {'':>14} {'':>14}  {'PASS' if same_order else 'FAIL'}")
    return EXIT_OK if same_order and all(r[3] for r in rows) else EXIT_RUNTIME


def _cmd_sweep(args) -> int:
    with open(args.config, encoding="utf-8") as fh:
        text = fh.read()
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values is empty")
    base = parse_config_text(text)
    out_base = args.out or base.out
    status = EXIT_OK
    for value in values:
        cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        cp.read_string(text)
        cp["method"][args.param] = value
        buf = []
        for section in cp.sections():
            buf.append(f"[{section}]")
            buf.extend(f"{k} = {v}" for k, v in cp[section].items())
        cfg = parse_config_text("\n".join(buf))
        kw = _overrides(args)
        kw["out"] = f"{out_base}_{args.param}_{value}"
        cfg = cfg.with_overrides(**kw)
        out = run_experiment(cfg, raw=args.raw)
        print(f"{args.param}={value}: {out}")
        if failed_trials(out):
            status = EXIT_RUNTIME
    return status


_COMMANDS = {"run": _cmd_run, "aggregate": _cmd_aggregate, "table1": _cmd_table1,
             "oracle-check": _cmd_oracle, "sweep": _cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError:
        return EXIT_CONFIG
    except SystemExit as e:  # --help
        return EXIT_OK if e.code in (0, None) else EXIT_CONFIG
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", UserWarning)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError) as e:
        print(f"config error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    except AlignmentError as e:
        print(f"alignment error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:  # noqa: BLE001
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
