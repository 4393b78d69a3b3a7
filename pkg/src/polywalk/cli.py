"""Command-line experiment runner.

Usage::

    polywalk sample|mixing-scan|trace|validate --config FILE [--seed N] [--threads N] [--out DIR]

A config is one JSON object. Flags override the matching config fields.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diagnostics, invariants, walks
from .errors import ConfigError, PolywalkError
from .polytope import Polytope, analytic_center, generate, hypercube_repeated, load
from .walks import WalkConfig

SCENARIOS = ("sample", "mixing-scan", "trace", "validate")
M_RULES = {"2d": lambda d: 2 * d, "2d^2": lambda d: 2 * d * d, "2d^3": lambda d: 2 * d**3}


@dataclass
class WalkSpec:
    kind: str
    r: float | str = "auto"
    lazy_prob: float = 0.5
    john_tol: float = 1e-10
    scale_override: float | None = None


@dataclass
class ExperimentSpec:
    scenario: str
    seed: int
    out: Path
    family: str = "hypercube_repeated"
    params: dict = field(default_factory=lambda: {"d": 2, "m": 4})
    polytope_file: str | None = None
    walks: list[WalkSpec] = field(default_factory=lambda: [WalkSpec("vaidya")])
    chains: int = 1
    steps: int = 1000
    thin: int = 1
    x0: str | list = "center"
    sigma: float | None = None
    threads: int = 1
    # mixing-scan
    sweep: dict = field(default_factory=dict)
    max_k: int = 100_000
    threshold: float = 0.05
    # trace
    direction_seed: int = 0
    # validate
    instances: int = 100
    pairs: int = 20
    target_accept: float = 0.5


def _positive_int(cfg: dict, key: str, default: int) -> int:
    v = cfg.get(key, default)
    if not isinstance(v, int) or isinstance(v, bool) or v < 1:
        raise ConfigError(f"'{key}' must be an integer >= 1, got {v!r}")
    return v


def _walk_spec(entry) -> WalkSpec:
    if isinstance(entry, str):
        entry = {"kind": entry}
    if not isinstance(entry, dict) or "kind" not in entry:
        raise ConfigError(f"walk entries need a 'kind': {entry!r}")
    unknown = set(entry) - {"kind", "r", "lazy_prob", "john_tol", "scale_override"}
    if unknown:
        raise ConfigError(f"unknown walk fields {sorted(unknown)}")
    spec = WalkSpec(**entry)
    if spec.kind not in ("dikin", "vaidya", "john"):
        raise ConfigError(f"unknown walk kind {spec.kind!r}")
    if spec.r != "auto" and not (isinstance(spec.r, (int, float)) and spec.r > 0):
        raise ConfigError(f"walk radius must be positive or 'auto', got {spec.r!r}")
    return spec


def parse_spec(cfg: dict, scenario: str, seed=None, out=None, threads=None) -> ExperimentSpec:
    """Validate a config dict and apply command-line overrides."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}")
    if cfg.get("scenario", scenario) != scenario:
        raise ConfigError(f"config is for scenario {cfg['scenario']!r}, not {scenario!r}")
    known = set(ExperimentSpec.__dataclass_fields__)
    unknown = set(cfg) - known
    if unknown:
        raise ConfigError(f"unknown config fields {sorted(unknown)}")
    seed = cfg.get("seed") if seed is None else seed
    if seed is None:
        raise ConfigError("a seed is required (config 'seed' or --seed)")
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be an integer in [0, 2^64), got {seed!r}")
    out = cfg.get("out", "polywalk_out") if out is None else out
    if threads is None:
        threads = cfg.get("threads") or int(os.environ.get("POLYWALK_THREADS", "1") or 1)
    if not isinstance(threads, int) or threads < 1:
        raise ConfigError("threads must be a positive integer")
    walks_cfg = cfg.get("walks", ["vaidya"])
    if not isinstance(walks_cfg, list) or not walks_cfg:
        raise ConfigError("'walks' must be a nonempty list")
    steps = cfg.get("steps", 1000)
    if not isinstance(steps, int) or steps < 0:
        raise ConfigError("'steps' must be an integer >= 0")
    spec = ExperimentSpec(
        scenario=scenario,
        seed=seed,
        out=Path(out),
        family=cfg.get("family", "hypercube_repeated"),
        params=dict(cfg.get("params", {"d": 2, "m": 4})),
        polytope_file=cfg.get("polytope_file"),
        walks=[_walk_spec(w) for w in walks_cfg],
        chains=_positive_int(cfg, "chains", 200 if scenario == "mixing-scan" else 1),
        steps=steps,
        thin=_positive_int(cfg, "thin", 1),
        x0=cfg.get("x0", "center"),
        sigma=cfg.get("sigma"),
        threads=threads,
        sweep=dict(cfg.get("sweep", {})),
        max_k=_positive_int(cfg, "max_k", 100_000),
        threshold=float(cfg.get("threshold", 0.05)),
        direction_seed=int(cfg.get("direction_seed", 0)),
        instances=_positive_int(cfg, "instances", 100),
        pairs=int(cfg.get("pairs", 20)),
        target_accept=float(cfg.get("target_accept", 0.5)),
    )
    if scenario == "mixing-scan":
        _check_sweep(spec)
    return spec


def _check_sweep(spec: ExperimentSpec) -> None:
    sw = spec.sweep
    over = sw.get("over")
    if over not in ("m", "d"):
        raise ConfigError("mixing-scan needs sweep.over = 'm' or 'd'")
    vals = sw.get("values")
    if not isinstance(vals, list) or len(vals) < 1 or not all(isinstance(v, int) and v >= 1 for v in vals):
        raise ConfigError("sweep.values must be a list of positive integers")
    if over == "d" and sw.get("m_rule", "2d^3") not in M_RULES:
        raise ConfigError(f"sweep.m_rule must be one of {sorted(M_RULES)}")
    if spec.chains < 50:
        raise ConfigError("mixing-scan needs chains >= 50")


# --- scenario helpers ---------------------------------------------------------


def _polytope(spec: ExperimentSpec) -> Polytope:
    if spec.polytope_file:
        return load(spec.polytope_file)
    return generate(spec.family, spec.params, spec.seed)


def _start_points(P: Polytope, spec: ExperimentSpec) -> np.ndarray:
    if spec.x0 == "center":
        return np.tile(analytic_center(P), (spec.chains, 1))
    if spec.x0 == "warm":
        sigma = spec.sigma if spec.sigma is not None else diagnostics.default_sigma(P.d)
        # warm-start draws use a stream disjoint from the walk streams
        rngs = [walks.chain_rng(spec.seed, 2**32 + i) for i in range(spec.chains)]
        X, _ = diagnostics.warm_starts(P, sigma, rngs)
        return X
    x0 = np.asarray(spec.x0, dtype=float)
    if x0.shape != (P.d,):
        raise ConfigError(f"x0 must have length {P.d}")
    return np.tile(x0, (spec.chains, 1))


def _resolve_walk(P: Polytope, ws: WalkSpec, x0, spec: ExperimentSpec, meta: dict) -> WalkConfig:
    base = WalkConfig(ws.kind, 1.0, ws.john_tol, ws.lazy_prob, ws.scale_override)
    if ws.r != "auto":
        return WalkConfig(ws.kind, float(ws.r), ws.john_tol, ws.lazy_prob, ws.scale_override)
    res = walks.tune_radius(P, base, x0, spec.target_accept, seed=spec.seed)
    meta.setdefault("tuned", []).append(
        {"walk": ws.kind, "m": P.m, "d": P.d, "r": res.r, "acceptance": res.acceptance, "converged": res.converged}
    )
    return WalkConfig(ws.kind, res.r, ws.john_tol, ws.lazy_prob, ws.scale_override)


def _fmt(v: float) -> str:
    return "%.17g" % (v + 0.0)


def run_sample(spec: ExperimentSpec, meta: dict) -> None:
    P = _polytope(spec)
    X0 = _start_points(P, spec)
    for ws in spec.walks:
        cfg = _resolve_walk(P, ws, X0[0], spec, meta)
        trajs = walks.run_ensemble(P, cfg, X0, spec.steps, spec.seed, spec.thin, spec.threads)
        for i, tr in enumerate(trajs):
            stem = spec.out / f"sample_{ws.kind}_chain{i}"
            tr.write_csv(stem.with_suffix(".csv"))
            tr.write_stats(stem.with_suffix(".stats.json"))


def _scan_polytopes(spec: ExperimentSpec):
    sw = spec.sweep
    if sw["over"] == "m":
        d = int(spec.params.get("d", 2))
        for m in sw["values"]:
            yield m, hypercube_repeated(d, m)
    else:
        rule = M_RULES[sw.get("m_rule", "2d^3")]
        for d in sw["values"]:
            yield d, hypercube_repeated(d, rule(d))


def run_mixing_scan(spec: ExperimentSpec, meta: dict) -> None:
    results = []
    slopes = []
    radii: dict[tuple[str, int], WalkConfig] = {}
    for ws in spec.walks:
        xs, ks = [], []
        for value, P in _scan_polytopes(spec):
            key = (ws.kind, P.d)
            if key not in radii:
                # radii are tuned once per dimension on the plain 2d-facet cube
                base = hypercube_repeated(P.d, 2 * P.d)
                radii[key] = _resolve_walk(base, ws, np.zeros(P.d), spec, meta)
            sigma = spec.sigma if spec.sigma is not None else diagnostics.default_sigma(P.d)
            res = diagnostics.khat_mix(P, radii[key], spec.chains, sigma, spec.threshold,
                                       spec.max_k, spec.seed, spec.threads)
            if not res.mixed:
                meta.setdefault("not_mixed", []).append({"walk": ws.kind, "m": P.m, "d": P.d})
            results.append(res)
            xs.append(value)
            ks.append(max(res.khat, 1))
        if len(xs) >= 3:
            slope, intercept, r2 = diagnostics.fit_loglog_slope(xs, ks)
            slopes.append([ws.kind, spec.sweep["over"], _fmt(slope), _fmt(intercept), _fmt(r2)])
    diagnostics.write_mix_csv(spec.out / "mixing.csv", results)
    with open(spec.out / "slopes.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["walk", "over", "slope", "intercept", "r2"])
        w.writerows(slopes)


def run_trace(spec: ExperimentSpec, meta: dict) -> None:
    P = _polytope(spec)
    x0 = _start_points(P, ExperimentSpec(**{**spec.__dict__, "chains": 1}))[0]
    cols = []
    for ws in spec.walks:
        cfg = _resolve_walk(P, ws, x0, spec, meta)
        tr = walks.run_chain(P, cfg, x0, spec.steps, spec.seed, spec.thin)
        cols.append(diagnostics.random_projection_trace(tr, spec.direction_seed))
        steps = tr.steps
    meta["direction"] = diagnostics.random_direction(P.d, spec.direction_seed).tolist()
    with open(spec.out / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step"] + [ws.kind for ws in spec.walks])
        for j, k in enumerate(steps):
            w.writerow([int(k)] + [_fmt(c[j]) for c in cols])


def run_validate(spec: ExperimentSpec, meta: dict) -> int:
    failures = invariants.run_suite(spec.seed, spec.instances, spec.pairs)
    failures += invariants.walk_checks(spec.seed)
    report = {"instances": spec.instances, "pairs": spec.pairs, "failures": [
        {"instance": label, "violations": errs} for label, errs in failures
    ]}
    with open(spec.out / "validate.json", "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    for label, errs in failures:
        print(f"FAIL {label}: {'; '.join(errs[:3])}", file=sys.stderr)
    return 1 if failures else 0


def run_scenario(spec: ExperimentSpec, config: dict | None = None) -> int:
    spec.out.mkdir(parents=True, exist_ok=True)
    meta: dict = {"scenario": spec.scenario, "seed": spec.seed}
    if spec.scenario == "sample":
        run_sample(spec, meta)
        status = 0
    elif spec.scenario == "mixing-scan":
        run_mixing_scan(spec, meta)
        status = 0
    elif spec.scenario == "trace":
        run_trace(spec, meta)
        status = 0
    else:
        status = run_validate(spec, meta)
    meta["config"] = config or {}
    with open(spec.out / "metadata.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polywalk", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="scenario", required=True)
    for name in SCENARIOS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON scenario file")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        p.add_argument("--threads", type=int, help="worker threads (default: $POLYWALK_THREADS or 1)")
        p.add_argument("--out", help="output directory (overrides config)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with open(args.config) as fh:
            config = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"polywalk: cannot read config {args.config}: {exc}", file=sys.stderr)
        return 2
    try:
        spec = parse_spec(config, args.scenario, args.seed, args.out, args.threads)
    except (ConfigError, TypeError) as exc:
        print(f"polywalk: bad config: {exc}", file=sys.stderr)
        return 2
    try:
        return run_scenario(spec, config)
    except PolywalkError as exc:
        print(f"polywalk {args.scenario}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
