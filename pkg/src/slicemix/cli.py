"""Command-line front end.

Subcommands: `plan` (partition planning), `route` (token selection on matrix
fixtures), `bilinear` (one factorization trace), `sweep` (a grid of
factorization runs), and `train` (toy training runs). stdout carries
machine-readable JSON only; human diagnostics go to stderr. Exit codes:
0 success, 2 usage or config error, 3 a run was flagged as diverged.

Matrix fixtures are whitespace-separated text with a single `rows cols`
header line. The environment variable SLIME_KIT_SEED supplies a fallback
seed when --seed is omitted.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import bilinear, pipeline
from .routing import RouterConfig, route_tokens
from .slicing import plan_partition

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGED = 3
SEED_ENV_VAR = "SLIME_KIT_SEED"

DEFAULT_CONFIG: dict = {
    "slicing": {"base": 336, "max_grid": 6},
    "adapter": {"feat_dim": 8, "model_dim": 8, "gate_noise": True},
    "router": {"gamma": 0.75, "local_queries": 4, "train_noise_sigma": 0.1},
    "bilinear": {"d": 16, "eta": 0.01, "steps": 20000},
    "training": {
        "out_dim": 4,
        "base": 96,
        "grid": 3,
        "sizes": [96, 128, 160, 192, 224, 256, 288],
        "n_train": 20,
        "n_eval": 10,
        "total_steps": 240,
        "lr": 0.25,
    },
}


class ConfigError(ValueError):
    pass


def _fail(message: str) -> int:
    print(message, file=sys.stderr)
    return EXIT_USAGE


def default_seed() -> int:
    value = os.environ.get(SEED_ENV_VAR)
    return int(value) if value else 0


def read_matrix(path: str) -> np.ndarray:
    """Load a `rows cols` headed whitespace-separated matrix file."""
    text = Path(path).read_text().split()
    if len(text) < 2:
        raise ValueError(f"{path}: missing 'rows cols' header")
    rows, cols = int(text[0]), int(text[1])
    data = [float(x) for x in text[2:]]
    if len(data) != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} values, found {len(data)}")
    return np.array(data, dtype=np.float64).reshape(rows, cols)


def write_matrix(path: str, arr: np.ndarray) -> None:
    arr = np.atleast_2d(np.asarray(arr, dtype=np.float64))
    lines = [f"{arr.shape[0]} {arr.shape[1]}"]
    lines.extend(" ".join(repr(float(x)) for x in row) for row in arr)
    Path(path).write_text("\n".join(lines) + "\n")


def merge_config(user: dict, defaults: dict = DEFAULT_CONFIG, path: str = "") -> dict:
    """Overlay a user config onto the defaults, rejecting unknown keys."""
    merged = {}
    for key, default_value in defaults.items():
        if key in user and isinstance(default_value, dict):
            sub = user[key]
            if not isinstance(sub, dict):
                raise ConfigError(f"config section '{path}{key}' must be an object")
            merged[key] = merge_config(sub, default_value, f"{path}{key}.")
        elif key in user:
            merged[key] = user[key]
        else:
            merged[key] = default_value
    for key in user:
        if key not in defaults:
            raise ConfigError(f"unknown config key '{path}{key}'")
    return merged


def _emit(obj) -> None:
    print(json.dumps(obj))


# -- subcommands -------------------------------------------------------------

def cmd_plan(args) -> int:
    if args.width < 1 or args.height < 1:
        return _fail("plan: --width and --height must be positive integers")
    plan = plan_partition(args.width, args.height, base=args.base)
    _emit({"w": args.width, "h": args.height, "m": plan.m, "n": plan.n,
           "s": plan.scale, "utilized": plan.utilized, "wasted": plan.wasted})
    return EXIT_OK


def cmd_route(args) -> int:
    if not 0.0 < args.gamma <= 1.0:
        return _fail("route: --gamma must lie in (0, 1]")
    try:
        tokens = read_matrix(args.tokens)
        text = read_matrix(args.text)
    except (OSError, ValueError) as exc:
        return _fail(f"route: {exc}")
    try:
        sel = route_tokens(tokens, text, RouterConfig(gamma=args.gamma))
    except ValueError as exc:
        return _fail(f"route: {exc}")
    _emit(sel.to_json())
    return EXIT_OK


_METHOD_ALIASES = {"gd": "gd", "alt": "alternating", "alternating": "alternating",
                   "gd_vector": "gd_vector"}


def _parse_init(text: str):
    if "," in text:
        parts = text.split(",")
        if len(parts) != 2:
            raise ValueError("--init expects a name or 'alpha0,beta0'")
        return float(parts[0]), float(parts[1])
    return text


def cmd_bilinear(args) -> int:
    if not -1.0 < args.c < 1.0:
        return _fail("bilinear: --c must lie in (-1, 1)")
    if args.method not in _METHOD_ALIASES:
        return _fail(f"bilinear: unknown --method '{args.method}'")
    try:
        init = _parse_init(args.init)
        inst = bilinear.make_instance(d=args.d, c=args.c, seed=args.seed)
        trace = bilinear.run_experiment(inst, init=init,
                                        method=_METHOD_ALIASES[args.method],
                                        steps=args.steps, eta=args.eta)
    except ValueError as exc:
        return _fail(f"bilinear: {exc}")
    if args.out:
        Path(args.out).write_text(trace.to_csv())
    _emit(trace.summary())
    return EXIT_DIVERGED if trace.diverged else EXIT_OK


def cmd_sweep(args) -> int:
    try:
        cs = [float(x) for x in args.c.split(",") if x]
        methods = [m.strip() for m in args.methods.split(",") if m.strip()]
        init = _parse_init(args.init)
    except ValueError as exc:
        return _fail(f"sweep: {exc}")
    for c in cs:
        if not -1.0 < c < 1.0:
            return _fail(f"sweep: c={c} outside (-1, 1)")
    for m in methods:
        if m not in _METHOD_ALIASES:
            return _fail(f"sweep: unknown method '{m}'")

    def one(c: float, method: str):
        inst = bilinear.make_instance(d=args.d, c=c, seed=args.seed)
        trace = bilinear.run_experiment(inst, init=init,
                                        method=_METHOD_ALIASES[method],
                                        steps=args.steps, eta=args.eta)
        if args.outdir:
            out = Path(args.outdir)
            out.mkdir(parents=True, exist_ok=True)
            (out / f"trace_{method}_c{c}.csv").write_text(trace.to_csv())
        return trace.summary()

    jobs = [(c, m) for c in cs for m in methods]
    if args.jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(lambda cm: one(*cm), jobs))
    else:
        results = [one(*cm) for cm in jobs]
    _emit(results)
    return EXIT_DIVERGED if any(r["classification"] == "diverged" for r in results) else EXIT_OK


def cmd_train(args) -> int:
    user_cfg = {}
    if args.config:
        try:
            user_cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            return _fail(f"train: cannot read config: {exc}")
    try:
        cfg = merge_config(user_cfg)
    except ConfigError as exc:
        return _fail(f"train: {exc}")
    tc, ac, rc = cfg["training"], cfg["adapter"], cfg["router"]
    try:
        pcfg = pipeline.PipelineConfig(
            feat_dim=ac["feat_dim"], model_dim=ac["model_dim"],
            out_dim=tc["out_dim"], local_queries=rc["local_queries"],
            gamma=rc["gamma"], router_noise_sigma=rc["train_noise_sigma"],
            gate_noise=ac["gate_noise"], base=tc["base"], grid=tc["grid"],
            sizes=tuple(tc["sizes"]), n_train=tc["n_train"], n_eval=tc["n_eval"])
        task = pipeline.make_toy_task(args.seed, pcfg)
        schedule = pipeline.default_schedule(args.mode, seed=args.seed,
                                             total_steps=tc["total_steps"],
                                             lr=tc["lr"])
    except ValueError as exc:
        return _fail(f"train: {exc}")
    report = pipeline.train(schedule, task)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"report_{args.mode}_seed{args.seed}.csv").write_text(report.to_csv())
        (out / f"summary_{args.mode}_seed{args.seed}.json").write_text(
            json.dumps(report.summary(), sort_keys=True) + "\n")
    _emit(report.summary())
    return EXIT_DIVERGED if report.diverged else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slicemix",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="print the partition plan for a geometry")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--base", type=int, default=DEFAULT_CONFIG["slicing"]["base"])
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("route", help="select tokens from matrix fixtures")
    p.add_argument("--gamma", type=float, default=DEFAULT_CONFIG["router"]["gamma"])
    p.add_argument("--tokens", required=True, help="token matrix file (header: rows cols)")
    p.add_argument("--text", required=True, help="text embedding matrix file")
    p.set_defaults(func=cmd_route)

    p = sub.add_parser("bilinear", help="run one factorization trace")
    p.add_argument("--method", default="alt",
                   help="gd | alt (also gd_vector for the raw-vector cross-check)")
    p.add_argument("--c", type=float, required=True, help="target alignment a.b")
    p.add_argument("--eta", type=float, default=DEFAULT_CONFIG["bilinear"]["eta"])
    p.add_argument("--steps", type=int, default=DEFAULT_CONFIG["bilinear"]["steps"])
    p.add_argument("--init", default="generic",
                   help="generic | antisym | sym | 'alpha0,beta0'")
    p.add_argument("--d", type=int, default=DEFAULT_CONFIG["bilinear"]["d"])
    p.add_argument("--seed", type=int, default=default_seed())
    p.add_argument("--out", help="write the per-step CSV trace here")
    p.set_defaults(func=cmd_bilinear)

    p = sub.add_parser("sweep", help="grid of factorization runs, JSON summary")
    p.add_argument("--c", required=True, help="comma-separated alignment values")
    p.add_argument("--methods", default="gd,alt")
    p.add_argument("--eta", type=float, default=DEFAULT_CONFIG["bilinear"]["eta"])
    p.add_argument("--steps", type=int, default=DEFAULT_CONFIG["bilinear"]["steps"])
    p.add_argument("--init", default="generic")
    p.add_argument("--d", type=int, default=DEFAULT_CONFIG["bilinear"]["d"])
    p.add_argument("--seed", type=int, default=default_seed())
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--outdir", help="optional directory for per-run traces")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser(
        "train", help="train the toy pipeline",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="config defaults (unknown keys are rejected):\n"
               + json.dumps(DEFAULT_CONFIG, indent=2))
    p.add_argument("--mode", required=True,
                   choices=["alternating", "e2e", "only_global", "only_local"])
    p.add_argument("--seed", type=int, default=default_seed())
    p.add_argument("--config", help="JSON config; unknown keys are rejected")
    p.add_argument("--out", help="directory for the report CSV and summary JSON")
    p.set_defaults(func=cmd_train)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


def entry() -> None:
    sys.exit(main())
