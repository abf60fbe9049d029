"""Experiment configuration and runners behind the CLI subcommands.

An experiment config is a JSON object with a ``workload`` block (Poisson,
Markov or trace), a ``policy`` block and a ``metrics`` block; the sweep,
Che comparison and robustness runs add their own blocks.  Every CSV written
here starts with a ``# config_hash=...`` comment followed by a header row.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adaptive import LOG_HEADER, ControllerConfig, StepSchedule
from .baselines import che_ttl_for_target_hitrate, estimate_rates_from_trace
from .engine import (DEFAULT_WINDOW, EVENT_NAMES, DTTLPolicy, FixedTTLPolicy, FTTLPolicy,
                     LRUPolicy, SimulationResult, StaticFTTLPolicy, simulate)
from .errors import ConfigError, InfeasibleError, TTLSimError
from .workload import (FlashCrowds, InterArrival, MarkovLabelSpec, OneHitWonders,
                       PopularitySpec, RequestStream, TypeSpec, ZipfType,
                       gen_markov_renewal, gen_poisson_independent, read_trace)

log = logging.getLogger(__name__)

# Desk-scale defaults.  eta acts on theta in seconds; eta_s acts on the
# latent filter variable with the 1/(s* w_avg) scaling.
DEFAULT_POLICY = {
    "L": 1e7,
    "epsilon": 0.1,
    "mode": "ohr",
    "eta": 1e-2,
    "eta_alpha": 0.0,
    "eta_s": 1e-4,
    "eta_s_alpha": 0.0,
    "eta_units": "seconds",
    "scale_eta_s": True,
}

STANDARD_WORKLOAD = {
    "kind": "poisson",
    "total_rate": 100.0,
    "types": [{"n_objects": 1000, "beta": 0.8, "q": 0.8, "alpha": 0.2}],
    "rare_mode": {"kind": "one_hit_wonders"},
}


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from None


# ---------------------------------------------------------------------------
# Workloads


def _rare_mode(block):
    if not block or block.get("kind", "one_hit_wonders") == "one_hit_wonders":
        return OneHitWonders()
    if block["kind"] == "flash_crowds":
        return FlashCrowds(int(block.get("burst_size", 5)), float(block.get("R", 1.0)),
                           float(block.get("budget_exponent", 0.5)),
                           float(block.get("budget_scale", 1.0)))
    raise ConfigError(f"unknown rare_mode {block['kind']!r}")


def popularity_from_config(block: dict) -> PopularitySpec:
    types = block.get("types")
    if not types:
        raise ConfigError("workload.types must be a non-empty list")
    specs = []
    for t in types:
        if "probs" in t:
            specs.append(TypeSpec(t["probs"], t.get("sizes", 1), float(t.get("alpha", 0.0)),
                                  int(t.get("rare_size", 1))))
        else:
            z = ZipfType(int(t["n_objects"]), float(t["beta"]), float(t["q"]),
                         float(t.get("alpha", 0.0)), int(t.get("size", 1)),
                         int(t.get("rare_size", 1)))
            specs.extend(PopularitySpec.zipf(1.0, [z]).types)
    spec = PopularitySpec(float(block.get("total_rate", 1.0)), specs)
    spec.validate()
    return spec


def markov_from_config(block: dict) -> MarkovLabelSpec:
    ia = block.get("interarrival", {})
    spec = MarkovLabelSpec(
        np.asarray(block["P"], dtype=float), int(block["n_recurrent"]),
        InterArrival(ia.get("kind", "exponential"), float(ia.get("rate", 1.0)),
                     float(ia.get("shape", 1.0)), float(ia.get("p1", 0.5))),
        block.get("object_types"), block.get("object_sizes"), block.get("rare_sizes"))
    spec.validate()
    return spec


def validate_workload(block: dict):
    if not isinstance(block, dict):
        raise ConfigError("missing workload block")
    kind = block.get("kind")
    if kind == "poisson":
        popularity_from_config(block)
    elif kind == "markov":
        markov_from_config(block)
    elif kind == "trace":
        if "path" not in block:
            raise ConfigError("trace workload needs a path")
        if not os.path.exists(block["path"]):
            raise ConfigError(f"trace file not found: {block['path']}")
    else:
        raise ConfigError(f"workload.kind must be poisson, markov or trace, got {kind!r}")


def build_stream(block: dict, seed: int, n: int) -> RequestStream:
    kind = block.get("kind")
    if kind == "trace":
        stream = read_trace(block["path"])
        return stream.head(n) if n and n < len(stream) else stream
    if kind == "poisson":
        return gen_poisson_independent(popularity_from_config(block),
                                       _rare_mode(block.get("rare_mode")), seed, n)
    if kind == "markov":
        return gen_markov_renewal(markov_from_config(block),
                                  _rare_mode(block.get("rare_mode")), seed, n)
    raise ConfigError(f"unknown workload kind {kind!r}")


# ---------------------------------------------------------------------------
# Policies


def controller_from_block(p: dict, n_types: int, size_targets=None) -> ControllerConfig:
    p = {**DEFAULT_POLICY, **p}
    if "target" not in p:
        raise ConfigError("adaptive policy needs a target")
    st = size_targets if size_targets is not None else p.get("size_target")
    return ControllerConfig(
        targets=p["target"], L=p["L"], size_targets=st, epsilon=float(p["epsilon"]),
        mode=p["mode"], eta=StepSchedule(float(p["eta"]), float(p["eta_alpha"])),
        eta_s=StepSchedule(float(p["eta_s"]), float(p["eta_s_alpha"])),
        eta_units=p["eta_units"], scale_eta_s=bool(p["scale_eta_s"]),
        normalize_bhr_weight=bool(p.get("normalize_bhr_weight", False)),
        w_max=p.get("w_max"), init_vartheta=p.get("init_vartheta", 0.0),
        init_vartheta_s=p.get("init_vartheta_s", 0.0), n_types=n_types)


def policy_from_block(p: dict, n_types: int):
    kind = p.get("kind")
    if kind == "dttl":
        return DTTLPolicy(controller_from_block(p, n_types))
    if kind == "fttl":
        if "size_target" not in p:
            raise ConfigError("f-TTL policy needs size_target")
        if np.any(np.asarray(p["size_target"], dtype=float) < 0):
            raise ConfigError("size_target must be non-negative")
        return FTTLPolicy(controller_from_block(p, n_types))
    if kind == "fixed":
        return FixedTTLPolicy(p["ttl"])
    if kind == "static_fttl":
        return StaticFTTLPolicy(p["theta"], p["theta_s"])
    if kind == "lru":
        return LRUPolicy(float(p["capacity_bytes"]))
    raise ConfigError(f"policy.kind must be dttl, fttl, fixed, static_fttl or lru, got {kind!r}")


def n_types_of(block: dict) -> int:
    if block.get("kind") == "poisson":
        return len(block["types"])
    if block.get("kind") == "markov":
        P = np.asarray(block["P"])
        return P.shape[0] - int(block["n_recurrent"])
    return 0  # trace: taken from the data


def _validate_policy(p, workload):
    if not isinstance(p, dict):
        raise ConfigError("policy must be an object")
    n = n_types_of(workload)
    if n == 0:
        n = max(np.atleast_1d(p.get("target", 0.5)).size, 1)
    if "kind" in p:
        policy_from_block(p, n)
    else:  # template for sweep-style runs
        controller_from_block({"target": 0.5, **p}, n)


@dataclass
class Experiment:
    raw: dict
    seed: int
    requests: int
    window: float
    threshold: float

    @property
    def hash(self) -> str:
        return config_hash(self.raw)


def prepare(cfg: dict, seed: int | None = None, requests: int | None = None) -> Experiment:
    cfg = copy.deepcopy(cfg)
    if seed is not None:
        cfg["seed"] = int(seed)
    if requests is not None:
        cfg["requests"] = int(requests)
    cfg.setdefault("seed", 0)
    cfg.setdefault("requests", 1_000_000)
    validate_workload(cfg.get("workload"))
    if int(cfg["requests"]) < 1:
        raise ConfigError("requests must be >= 1")
    metrics = cfg.get("metrics", {})
    if "policy" in cfg:
        _validate_policy(cfg["policy"], cfg["workload"])
    window = float(metrics.get("window", DEFAULT_WINDOW))
    if not window > 0:
        raise ConfigError("metrics.window must be positive")
    return Experiment(cfg, int(cfg["seed"]), int(cfg["requests"]), window,
                      float(metrics.get("outage_threshold", 0.05)))


# ---------------------------------------------------------------------------
# CSV helpers


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows, chash: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={chash}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


REPORT_HEADER = ("type", "requests", "ohr", "bhr", "normalized_size", "avg_cache_bytes",
                 "outage_fraction", "final_theta", "final_theta_s",
                 "final_vartheta", "final_vartheta_s")
WINDOW_HEADER = ("window_start", "window_end", "type", "requests", "ohr", "bhr",
                 "avg_cache_bytes", "theta_mean", "theta_s_mean")


def report_rows(result: SimulationResult, targets, threshold):
    m = result.metrics(targets, threshold)
    rows = []
    final = result.final
    for ty, tm in sorted(m.per_type.items()):
        f = [final[k][ty - 1] if k in final else None
             for k in ("theta", "theta_s", "vartheta", "vartheta_s")]
        if tm is None:
            rows.append((ty, 0, None, None, None, None, None, *f))
        else:
            rows.append((ty, tm.requests, tm.ohr, tm.bhr, tm.normalized_size,
                         tm.avg_cache_bytes, tm.outage_fraction, *f))
    return m, rows


def window_rows(result: SimulationResult):
    s = result.series
    rows = []
    for k in range(s.n_windows):
        a, b = s.edges[k], s.edges[k + 1]
        for j in range(s.requests.shape[1]):
            n = s.requests[k, j]
            if n == 0:
                continue
            dur = b - a
            rows.append((a, b, j + 1, int(n), s.hits[k, j] / n,
                         s.hit_bytes[k, j] / s.req_bytes[k, j],
                         s.integral[k, j] / dur if dur > 0 else 0.0,
                         None if s.theta_mean is None else s.theta_mean[k, j],
                         None if s.theta_s_mean is None else s.theta_s_mean[k, j]))
    return rows


# ---------------------------------------------------------------------------
# Runners


def _stream(exp: Experiment) -> RequestStream:
    log.info("generating %d requests (seed %d)", exp.requests, exp.seed)
    return build_stream(exp.raw["workload"], exp.seed, exp.requests)


def _n_types(exp, stream):
    return max(n_types_of(exp.raw["workload"]), stream.n_types, 1)


def run_simulate(exp: Experiment, out_dir, per_arrival_log: bool = False):
    """Single run; writes report.csv, windows.csv and optionally arrivals.csv."""
    stream = _stream(exp)
    T = _n_types(exp, stream)
    pblock = exp.raw.get("policy")
    if not isinstance(pblock, dict):
        raise ConfigError("missing policy block")
    policy = policy_from_block(pblock, T)
    targets = pblock.get("target")
    result = simulate(stream, policy, exp.window, record=per_arrival_log, n_types=T)
    m, rows = report_rows(result, targets, exp.threshold)
    out = Path(out_dir)
    write_csv(out / "report.csv", REPORT_HEADER, rows, exp.hash)
    write_csv(out / "windows.csv", WINDOW_HEADER, window_rows(result), exp.hash)
    if per_arrival_log and result.trajectory is not None:
        tr = result.trajectory
        hit_codes = (1, 2)
        arows = ((k + 1, stream.times[k], stream.types[k], EVENT_NAMES[int(tr["event"][k])],
                  int(tr["event"][k] in hit_codes), tr["s"][k], tr["theta"][k],
                  tr["theta_s"][k], tr["vartheta"][k], tr["vartheta_s"][k])
                 for k in range(len(stream)))
        write_csv(out / "arrivals.csv", LOG_HEADER, arows, exp.hash)
    return m


SWEEP_HEADER = ("target", "policy", "achieved_hit_rate", "avg_cache_bytes",
                "normalized_size", "status")


def _sweep_target(args):
    exp, target, fraction = args
    stream = _stream(exp)
    T = _n_types(exp, stream)
    base = {k: v for k, v in exp.raw.get("policy", {}).items() if k != "kind"}
    base["target"] = target
    rows = []
    try:
        d = simulate(stream, DTTLPolicy(controller_from_block(base, T)), exp.window,
                     n_types=T).metrics()
        rows.append((target, "dttl", d.ohr, d.avg_cache_bytes, d.normalized_size, "ok"))
    except TTLSimError as exc:
        rows.append((target, "dttl", None, None, None, f"error: {exc}"))
        d = None
    if fraction is not None:
        if d is None:
            rows.append((target, "fttl", None, None, None, "error: d-TTL run failed"))
        else:
            try:
                cfg = controller_from_block(base, T, size_targets=fraction * d.normalized_size)
                f = simulate(stream, FTTLPolicy(cfg), exp.window, n_types=T).metrics()
                rows.append((target, "fttl", f.ohr, f.avg_cache_bytes, f.normalized_size, "ok"))
            except TTLSimError as exc:
                rows.append((target, "fttl", None, None, None, f"error: {exc}"))
    return rows


def _map(fn, items, jobs):
    if jobs and jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def run_sweep(exp: Experiment, out_dir, jobs: int = 1):
    """d-TTL per target, then f-TTL with ``s* = fraction * d-TTL normalized size``."""
    block = exp.raw.get("sweep", {})
    targets = [float(t) for t in block.get("targets", [0.4, 0.5, 0.6, 0.7])]
    fraction = None
    if block.get("size_policy", "fraction_of_dttl") == "fraction_of_dttl":
        fraction = float(block.get("fraction", 0.5))
    elif block.get("size_policy") != "none":
        raise ConfigError("sweep.size_policy must be 'none' or 'fraction_of_dttl'")
    results = _map(_sweep_target, [(exp, t, fraction) for t in targets], jobs)
    rows = [r for rs in results for r in rs]
    rows.sort(key=lambda r: (r[0], r[1]))
    write_csv(Path(out_dir) / "sweep.csv", SWEEP_HEADER, rows, exp.hash)
    return rows


CHE_HEADER = ("target", "che_ttl", "fixed_ohr", "fixed_size", "lru_ohr", "che_size",
              "dttl_ohr", "dttl_size", "fttl_ohr", "fttl_size", "status")


def _che_target(args):
    exp, target, prefix_fraction, fraction = args
    stream = _stream(exp)
    T = _n_types(exp, stream)
    n_pre = max(2, int(round(prefix_fraction * len(stream))))
    rates = estimate_rates_from_trace(stream.head(n_pre))
    base = {k: v for k, v in exp.raw.get("policy", {}).items() if k != "kind"}
    base["target"] = target
    try:
        ttl, che_size, _ = che_ttl_for_target_hitrate(rates, target)
    except InfeasibleError as exc:
        return (target, *([None] * 9), f"infeasible: {exc}")
    fixed = simulate(stream, FixedTTLPolicy(ttl), exp.window, n_types=T).metrics()
    lru = simulate(stream, LRUPolicy(che_size), exp.window, n_types=T).metrics()
    d = simulate(stream, DTTLPolicy(controller_from_block(base, T)), exp.window,
                 n_types=T).metrics()
    cfg = controller_from_block(base, T, size_targets=fraction * d.normalized_size)
    f = simulate(stream, FTTLPolicy(cfg), exp.window, n_types=T).metrics()
    return (target, ttl, fixed.ohr, fixed.avg_cache_bytes, lru.ohr, che_size,
            d.ohr, d.avg_cache_bytes, f.ohr, f.avg_cache_bytes, "ok")


def run_compare_che(exp: Experiment, out_dir, jobs: int = 1):
    """Fixed TTL and LRU provisioned from Che's approximation versus d-TTL and f-TTL.

    Rates come from the first ``prefix_fraction`` of the stream; every policy
    is then simulated over the whole stream.
    """
    block = exp.raw.get("compare_che", {})
    targets = [float(t) for t in block.get("targets", [0.4, 0.5, 0.6, 0.7])]
    prefix = float(block.get("prefix_fraction", 0.1))
    if not 0 < prefix <= 1:
        raise ConfigError("prefix_fraction must lie in (0, 1]")
    fraction = float(block.get("fttl_size_fraction", 0.5))
    rows = _map(_che_target, [(exp, t, prefix, fraction) for t in targets], jobs)
    rows.sort(key=lambda r: r[0])
    write_csv(Path(out_dir) / "compare_che.csv", CHE_HEADER, rows, exp.hash)
    return rows


ROBUST_HEADER = ("target", "parameter", "step", "ohr", "avg_cache_bytes", "outage_fraction")


def _robust_point(args):
    exp, target, param, step, size_fraction = args
    stream = _stream(exp)
    T = _n_types(exp, stream)
    base = {k: v for k, v in exp.raw.get("policy", {}).items() if k != "kind"}
    base["target"] = target
    if param == "eta":
        base["eta"] = step
        policy = DTTLPolicy(controller_from_block(base, T))
    else:
        d = simulate(stream, DTTLPolicy(controller_from_block(base, T)), exp.window,
                     n_types=T).metrics()
        base["eta_s"] = step
        policy = FTTLPolicy(controller_from_block(
            base, T, size_targets=size_fraction * d.normalized_size))
    m = simulate(stream, policy, exp.window, n_types=T).metrics(target, exp.threshold)
    outage = float(np.nanmean([tm.outage_fraction for tm in m.per_type.values()
                               if tm is not None]))
    return (target, param, step, m.ohr, m.avg_cache_bytes, outage)


def run_robustness(exp: Experiment, out_dir, jobs: int = 1):
    """Achieved OHR, cache size and outage over a grid of constant step sizes."""
    block = exp.raw.get("robustness", {})
    targets = [float(t) for t in block.get("targets", [0.6, 0.75])]
    grid = [float(s) for s in block.get("step_grid", [1e-1, 1e-2, 1e-3])]
    param = block.get("parameter", "eta")
    if param not in ("eta", "eta_s"):
        raise ConfigError("robustness.parameter must be 'eta' or 'eta_s'")
    frac = float(block.get("fttl_size_fraction", 0.5))
    items = [(exp, t, param, s, frac) for t in targets for s in grid]
    rows = _map(_robust_point, items, jobs) if items else []
    rows.sort(key=lambda r: (r[0], -r[2]))
    write_csv(Path(out_dir) / "robustness.csv", ROBUST_HEADER, rows, exp.hash)
    return rows


__all__ = ["prepare", "load_config", "run_simulate", "run_sweep", "run_compare_che",
           "run_robustness", "build_stream", "policy_from_block", "config_hash",
           "STANDARD_WORKLOAD", "DEFAULT_POLICY"]
