"""Command-line entry point (``ttlsim`` / ``python -m ttlsim``).

Data goes to files or standard output; progress goes to standard error.
Exit codes: 0 success, 2 configuration error, 3 infeasible target.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import experiments as ex
from .analytics import OracleInput, oracle_hit_rate, oracle_normalized_size, tune_L
from .baselines import che_ttl_for_target_hitrate, estimate_rates_from_trace
from .errors import ConfigError, TTLSimError
from .workload import audit_rarity, read_trace, write_trace

log = logging.getLogger("ttlsim")


def _common(p, out_help="output directory"):
    p.add_argument("--config", help="experiment JSON file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--requests", type=int, help="override the number of requests")
    p.add_argument("--out", help=out_help)


def _experiment(args):
    if not args.config:
        raise ConfigError("--config is required")
    return ex.prepare(ex.load_config(args.config), args.seed, args.requests)


def _out_dir(args):
    if not args.out:
        raise ConfigError("--out is required")
    return Path(args.out)


def _emit(rows, header, out, chash=None):
    """Write CSV rows to ``out`` or stdout."""
    if out:
        ex.write_csv(out, header, rows, chash or "")
        return
    w = csv.writer(sys.stdout)
    if chash:
        sys.stdout.write(f"# config_hash={chash}\n")
    w.writerow(header)
    for r in rows:
        w.writerow([ex._fmt(v) for v in r])


def _args_hash(args):
    """Hash of the invocation, for subcommands that may run without a config file."""
    return ex.config_hash({k: v for k, v in vars(args).items() if k != "func"})


def cmd_generate(args):
    exp = _experiment(args)
    stream = ex.build_stream(exp.raw["workload"], exp.seed, exp.requests)
    out = Path(args.out) if args.out else None
    if out is None:
        raise ConfigError("--out is required")
    if out.suffix != ".csv":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "trace.csv"
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    write_trace(stream, out, comment=f"config_hash={exp.hash}")
    log.info("wrote %d requests to %s", len(stream), out)


def cmd_simulate(args):
    m = ex.run_simulate(_experiment(args), _out_dir(args), per_arrival_log=args.log)
    log.info("ohr=%.6f bhr=%.6f normalized_size=%.6f", m.ohr, m.bhr, m.normalized_size)


def cmd_sweep(args):
    ex.run_sweep(_experiment(args), _out_dir(args), jobs=args.jobs)


def cmd_compare_che(args):
    ex.run_compare_che(_experiment(args), _out_dir(args), jobs=args.jobs)


def cmd_robustness(args):
    ex.run_robustness(_experiment(args), _out_dir(args), jobs=args.jobs)


def cmd_oracle(args):
    exp = _experiment(args)
    block = exp.raw["workload"]
    if block.get("kind") != "poisson":
        raise ConfigError("the oracle needs a Poisson workload")
    spec = ex.popularity_from_config(block)
    ob = exp.raw.get("oracle", {})
    thetas = args.theta if args.theta is not None else ob.get("theta")
    theta_ss = args.theta_s if args.theta_s is not None else ob.get("theta_s", thetas)
    if thetas is None:
        raise ConfigError("oracle needs --theta (or oracle.theta in the config)")
    mode = args.mode or ob.get("mode", "ohr")
    rows = []
    for t in range(1, spec.n_types + 1):
        th = thetas[t - 1] if isinstance(thetas, list) else thetas
        ts = theta_ss[t - 1] if isinstance(theta_ss, list) else theta_ss
        inp = OracleInput.from_popularity(spec, t, float(th), float(ts), mode)
        rows.append((t, float(th), float(ts), oracle_hit_rate(inp), oracle_normalized_size(inp)))
    _emit(rows, ("type", "theta", "theta_s", "hit_rate", "normalized_size"), args.out, exp.hash)


def cmd_tune(args):
    rows = []
    for h in args.target:
        r = tune_L(args.n_objects, args.beta, args.q, args.alpha, h, args.n, args.base_rate)
        rows.append((h, r.L, r.r_star, r.delta_r, r.c_star, r.lambda_c_star, r.achieved_hit_rate))
    _emit(rows, ("target", "L", "r_star", "delta_r", "c_star", "lambda_c_star",
                 "achieved_hit_rate"), args.out, _args_hash(args))


def _stream_from_args(args):
    if args.trace:
        return read_trace(args.trace)
    exp = _experiment(args)
    return ex.build_stream(exp.raw["workload"], exp.seed, exp.requests)


def cmd_che(args):
    stream = _stream_from_args(args)
    if args.prefix_fraction < 1:
        stream = stream.head(max(2, int(round(args.prefix_fraction * len(stream)))))
    rates = estimate_rates_from_trace(stream, args.horizon)
    T, size, h = che_ttl_for_target_hitrate(rates, args.target, args.mode)
    _emit([(T, size, h)], ("T_seconds", "expected_size_bytes", "predicted_hit_rate"), args.out,
          _args_hash(args))


def cmd_audit(args):
    stream = _stream_from_args(args)
    res = audit_rarity(stream, args.R, args.window_exponent)
    rows = [(t, w.start, w.length, w.fraction) for t in sorted(res) for w in res[t]]
    _emit(rows, ("type", "window_start", "window_length", "bursty_fraction"), args.out,
          _args_hash(args))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ttlsim", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic trace CSV")
    _common(g, "output .csv file or directory")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("simulate", help="run one policy and write report/window CSVs")
    _common(s)
    s.add_argument("--log", action="store_true", help="also write the per-arrival log")
    s.set_defaults(func=cmd_simulate)

    for name, fn, helptext in (("sweep", cmd_sweep, "hit-rate curve for d-TTL and f-TTL"),
                               ("compare-che", cmd_compare_che, "Che-provisioned baselines"),
                               ("robustness", cmd_robustness, "constant step-size grid")):
        c = sub.add_parser(name, help=helptext)
        _common(c)
        c.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        c.set_defaults(func=fn)

    o = sub.add_parser("oracle", help="closed-form hit rate and normalized size")
    _common(o, "output CSV file (default: stdout)")
    o.add_argument("--theta", type=float)
    o.add_argument("--theta-s", type=float)
    o.add_argument("--mode", choices=("ohr", "bhr"))
    o.set_defaults(func=cmd_oracle)

    t = sub.add_parser("tune", help="TTL bound L for a Zipf population")
    _common(t, "output CSV file (default: stdout)")
    t.add_argument("--n-objects", type=int, required=True)
    t.add_argument("--beta", type=float, required=True)
    t.add_argument("--q", type=float, default=1.0)
    t.add_argument("--alpha", type=float, default=0.0)
    t.add_argument("--n", type=int, required=True, help="scale (total rate = n * base rate)")
    t.add_argument("--base-rate", type=float, default=1.0)
    t.add_argument("--target", type=float, action="append", required=True)
    t.set_defaults(func=cmd_tune)

    c = sub.add_parser("che", help="Che TTL for a target hit rate")
    _common(c, "output CSV file (default: stdout)")
    c.add_argument("--trace", help="trace CSV instead of a generated workload")
    c.add_argument("--target", type=float, required=True)
    c.add_argument("--mode", choices=("ohr", "bhr"), default="ohr")
    c.add_argument("--horizon", type=float, help="rate estimation horizon in seconds")
    c.add_argument("--prefix-fraction", type=float, default=1.0)
    c.set_defaults(func=cmd_che)

    a = sub.add_parser("audit", help="bursty-arrival fractions per window")
    _common(a, "output CSV file (default: stdout)")
    a.add_argument("--trace", help="trace CSV instead of a generated workload")
    a.add_argument("--R", type=float, required=True)
    a.add_argument("--window-exponent", type=float, default=0.75)
    a.set_defaults(func=cmd_audit)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except TTLSimError as exc:
        log.error("%s", exc)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
