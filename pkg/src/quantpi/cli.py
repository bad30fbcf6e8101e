"""Command-line entry point: ``quantpi {gen,train,backtest,eval,verify-theorem}``.

Exit codes: 0 success, 1 verification outside tolerance, 2 usage or config
error, 3 data error, 4 numeric divergence.

Option values resolve as: command-line flag, else ``--config`` JSON file,
else built-in default.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from quantpi.data import (
    DataError,
    Dataset,
    csv_kind,
    gen_linear,
    gen_sales_series,
    load_csv,
    load_dataset_csv,
    make_windows,
    save_csv,
    save_dataset_csv,
)
from quantpi.evaluation import (
    config_hash,
    coverage,
    emit_plot_data,
    emit_report,
    nesting_violations,
    read_plot_data,
)
from quantpi.net import NetworkShape
from quantpi.oracle import DistributionSpec, analytic_quantile, empirical_quantile, sample
from quantpi.train import (
    DivergenceError,
    IntervalSpec,
    TrainConfig,
    Tricks,
    rolling_backtest,
    train_quantile,
    train_triple,
)

EXIT_OK, EXIT_TOLERANCE, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3, 4

log = logging.getLogger("quantpi")


class UsageError(ValueError):
    pass


DEFAULTS = {
    # training
    "lr0": 1e-3,
    "lr_decay": 0.97,
    "max_epochs": 100,
    "batch_size": 64,
    "patience": 10,
    "penalty_lambda": 10.0,
    "validation_fraction": 0.15,
    "steps_per_epoch": None,
    "quantile_bias_init": False,
    "seed": 0,
    # model
    "hidden": "",
    "activation": "relu",
    # tricks
    "fixed_seed": True,
    "penalty": True,
    "median_feature": False,
    # windows / backtest
    "window": 14,
    "horizon": 1,
    "test_days": 76,
    "refit": False,
    "beta": 0.9,
    "betas": "0.7,0.75,0.8,0.9",
}


def _parse_floats(text: str, field: str) -> list[float]:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--{field}: expected comma-separated numbers, got {text!r}") from None


def _parse_ints(text, field: str) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    try:
        return tuple(int(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise UsageError(f"--{field}: expected comma-separated integers, got {text!r}") from None


def _parse_noise(text: str) -> DistributionSpec:
    try:
        return DistributionSpec.parse(text)
    except ValueError as e:
        raise UsageError(f"--noise: {e}") from None


def _resolve(args) -> dict:
    """Merge defaults, the optional JSON config file, and explicit flags."""
    opts = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise UsageError(f"--config: no such file {args.config}") from None
        except json.JSONDecodeError as e:
            raise UsageError(f"--config: invalid JSON ({e})") from None
        unknown = set(cfg) - set(DEFAULTS) - {"data", "generator"}
        if unknown:
            raise UsageError(f"--config: unknown keys {sorted(unknown)}")
        opts.update(cfg)
    for k, v in vars(args).items():
        if v is not None:
            opts[k] = v
    return opts


def _train_config(opts) -> TrainConfig:
    try:
        return TrainConfig(
            lr0=float(opts["lr0"]),
            lr_decay=float(opts["lr_decay"]),
            max_epochs=int(opts["max_epochs"]),
            batch_size=int(opts["batch_size"]),
            patience=int(opts["patience"]),
            seed=int(opts["seed"]),
            penalty_lambda=float(opts["penalty_lambda"]),
            validation_fraction=float(opts["validation_fraction"]),
            steps_per_epoch=None if opts["steps_per_epoch"] in (None, 0) else int(opts["steps_per_epoch"]),
            quantile_bias_init=bool(opts["quantile_bias_init"]),
        )
    except ValueError as e:
        raise UsageError(str(e)) from None


def _shape(opts, input_dim: int = 1) -> NetworkShape:
    try:
        return NetworkShape(input_dim, _parse_ints(opts["hidden"], "hidden"), opts["activation"])
    except ValueError as e:
        raise UsageError(str(e)) from None


def _tricks(opts) -> Tricks:
    return Tricks(bool(opts["fixed_seed"]), bool(opts["penalty"]), bool(opts["median_feature"]))


def _parse_generator(text: str, default_seed: int):
    """``sales:days=730,period=7`` or ``linear:n=1000,w=3,y0=2,noise=laplace:1``."""
    kind, _, rest = text.partition(":")
    params = {}
    if rest:
        for item in rest.split(","):
            key, eq, val = item.partition("=")
            if not eq:
                raise UsageError(f"--generator: expected key=value, got {item!r}")
            params[key.strip()] = val.strip()
    seed = int(params.pop("seed", default_seed))
    try:
        if kind == "sales":
            return _make_sales(params, seed)
        if kind == "linear":
            return gen_linear(
                int(params.pop("n", 1000)),
                float(params.pop("y0", 0.0)),
                _parse_floats(params.pop("w", "1"), "w"),
                _parse_noise(params.pop("noise", "laplace:1")),
                seed,
            )
    except (TypeError, ValueError) as e:
        raise UsageError(f"--generator: {e}") from None
    raise UsageError(f"--generator: unknown generator {kind!r} (expected 'sales' or 'linear')")


def _make_sales(params: dict, seed: int):
    spec = dict(params)
    hetero = str(spec.pop("heteroscedastic", "1")).lower() not in ("0", "false", "no")
    kwargs = {k: float(v) for k, v in spec.items() if k not in ("days", "period")}
    return gen_sales_series(
        int(spec.get("days", 730)), int(spec.get("period", 7)),
        heteroscedastic=hetero, seed=seed, **kwargs,
    )


def _load_source(opts):
    """Return a SeriesFrame or Dataset from ``--data`` or ``--generator``."""
    data, gen = opts.get("data"), opts.get("generator")
    if bool(data) == bool(gen):
        raise UsageError("give exactly one of --data or --generator")
    if gen:
        return _parse_generator(gen, int(opts["seed"]))
    if csv_kind(data) == "series":
        return load_csv(data)
    return load_dataset_csv(data)


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _run_echo(opts, keys) -> dict:
    return {k: opts.get(k) for k in sorted(keys) if k in opts}


# -- commands -----------------------------------------------------------------


def cmd_gen(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.kind == "sales":
        params = {
            "days": args.days, "period": args.period, "base": args.base,
            "amplitude": args.amplitude, "trend": args.trend, "noise_scale": args.noise_scale,
            "special_rate": args.special_rate, "special_effect": args.special_effect,
        }
        try:
            frame = gen_sales_series(
                heteroscedastic=not args.homoscedastic, seed=args.seed, **params
            )
        except ValueError as e:
            raise UsageError(str(e)) from None
        save_csv(frame, out)
        print(f"wrote {len(frame)} rows to {out}")
    else:
        noise = _parse_noise(args.noise)
        if args.n < 1:
            raise UsageError(f"--n must be >= 1, got {args.n}")
        ds = gen_linear(args.n, args.y0, _parse_floats(args.w, "w"), noise, args.seed)
        save_dataset_csv(ds, out)
        print(f"wrote {len(ds)} rows to {out}")
    return EXIT_OK


def cmd_verify_theorem(args) -> int:
    dist = _parse_noise(args.distribution)
    alphas = _parse_floats(args.alphas, "alphas")
    if args.n < 2:
        raise UsageError(f"--n must be >= 2, got {args.n}")
    y = sample(dist, args.n, args.seed)
    ds = Dataset(np.zeros((args.n, 1)), y, ["const"])
    config = replace(TrainConfig(), seed=args.seed)
    ok = True
    print(f"{'alpha':>6} {'learned':>10} {'analytic':>10} {'empirical':>10} {'|err|':>8}  ok")
    for a in alphas:
        params = train_quantile(ds, NetworkShape(1), a, config)
        learned = float(params.biases[-1][0])
        target = analytic_quantile(dist, a)
        emp = empirical_quantile(y, a)
        err = abs(learned - target)
        good = err < args.tolerance
        ok &= good
        print(f"{a:6.3f} {learned:10.5f} {target:10.5f} {emp:10.5f} {err:8.5f}  {'yes' if good else 'NO'}")
    return EXIT_OK if ok else EXIT_TOLERANCE


def cmd_train(args) -> int:
    opts = _resolve(args)
    src = _load_source(opts)
    if not isinstance(src, Dataset):
        src = make_windows(src, int(opts["window"]), int(opts["horizon"]))
    config = _train_config(opts)
    spec = _spec(opts["beta"])
    triple = train_triple(src, _shape(opts, src.feature_dim), spec, config, _tricks(opts))
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    doc = triple.to_dict()
    doc["run"] = _run_echo(opts, set(DEFAULTS) | {"data", "generator"})
    _write_json(out / "triple.json", doc)
    print(f"wrote {out / 'triple.json'}")
    return EXIT_OK


def _spec(beta) -> IntervalSpec:
    try:
        return IntervalSpec(float(beta))
    except ValueError as e:
        raise UsageError(f"--beta: {e}") from None


def cmd_backtest(args) -> int:
    opts = _resolve(args)
    series = _load_source(opts)
    if isinstance(series, Dataset):
        raise UsageError("backtest needs a time series (t,y,... CSV or the sales generator)")
    config = _train_config(opts)
    betas = _parse_floats(opts["betas"], "betas")
    if not betas:
        raise UsageError("--betas: at least one interval width is required")
    shape = _shape(opts)
    tricks = _tricks(opts)
    echo = _run_echo(opts, set(DEFAULTS) | {"data", "generator"})
    meta = {"seed": config.seed, "config_hash": config_hash(echo)}
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)

    runs = {}
    for b in betas:
        pts = rolling_backtest(
            series, int(opts["window"]), int(opts["horizon"]), _spec(b), shape, config,
            tricks, test_days=int(opts["test_days"]), refit=bool(opts["refit"]),
        )
        runs[b] = pts
        rep = coverage(pts, b, meta)
        emit_report(rep, out / f"coverage_{b}.json")
        print(
            f"beta={b}: success_rate={rep.success_rate:.4f} mean_width={rep.mean_width:.4f} "
            f"rogue_rate={rep.rogue_rate:.4f} n={rep.n}"
        )
    emit_plot_data(runs, out / "plotdata.csv")
    _write_json(out / "config.json", {"run": echo, "meta": meta})
    if len(runs) > 1:
        nv = nesting_violations([(b, [p.interval for p in pts]) for b, pts in runs.items()])
        print(f"nesting violations: {nv}")
    return EXIT_OK


def cmd_eval(args) -> int:
    path = Path(args.predictions)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    try:
        runs = read_plot_data(path)
    except (ValueError, IndexError) as e:
        raise DataError(f"{path}: {e}") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"seed": args.seed, "config_hash": config_hash({"predictions": path.name})}
    for b, pts in runs.items():
        rep = coverage(pts, b, meta)
        emit_report(rep, out / f"coverage_{b}.json")
        print(f"beta={b}: success_rate={rep.success_rate:.4f} rogue_rate={rep.rogue_rate:.4f} n={rep.n}")
    if len(runs) > 1:
        nv = nesting_violations([(b, [p.interval for p in pts]) for b, pts in runs.items()])
        print(f"nesting violations: {nv}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def _add_model_flags(p):
    g = p.add_argument_group("model and training")
    g.add_argument("--config", help="JSON file of option values (flags take precedence)")
    g.add_argument("--hidden", help="comma-separated hidden widths, empty for a linear model")
    g.add_argument("--activation", choices=["relu", "tanh"])
    g.add_argument("--seed", type=int)
    g.add_argument("--lr0", type=float)
    g.add_argument("--lr-decay", type=float)
    g.add_argument("--max-epochs", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--steps-per-epoch", type=int)
    g.add_argument("--patience", type=int)
    g.add_argument("--validation-fraction", type=float)
    g.add_argument("--penalty-lambda", type=float)
    g.add_argument("--quantile-bias-init", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--fixed-seed", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--penalty", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--median-feature", action=argparse.BooleanOptionalAction, default=None)
    d = p.add_argument_group("data")
    d.add_argument("--data", help="series CSV (t,y,...) or dataset CSV (y,...)")
    d.add_argument("--generator", help="e.g. sales:days=1095,seed=1")
    d.add_argument("--window", type=int)
    d.add_argument("--horizon", type=int)
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quantpi", description=__doc__.splitlines()[0])
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="write a synthetic CSV")
    gsub = gen.add_subparsers(dest="kind", required=True)
    s = gsub.add_parser("sales", help="daily sales-like series")
    s.add_argument("--days", type=int, default=730)
    s.add_argument("--period", type=int, default=7)
    s.add_argument("--base", type=float, default=20.0)
    s.add_argument("--amplitude", type=float, default=5.0)
    s.add_argument("--trend", type=float, default=0.0)
    s.add_argument("--noise-scale", type=float, default=2.0)
    s.add_argument("--homoscedastic", action="store_true")
    s.add_argument("--special-rate", type=float, default=0.03)
    s.add_argument("--special-effect", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="CSV file to write")
    lin = gsub.add_parser("linear", help="y = y0 + w.x + noise")
    lin.add_argument("--n", type=int, default=10000)
    lin.add_argument("--w", default="1", help="comma-separated weights")
    lin.add_argument("--y0", type=float, default=0.0)
    lin.add_argument("--noise", default="laplace:1", help="kind[:scale] or kind:loc:scale")
    lin.add_argument("--seed", type=int, default=0)
    lin.add_argument("--out", required=True, help="CSV file to write")
    gen.set_defaults(func=cmd_gen)

    tr = sub.add_parser("train", help="train a median/lower/upper network triple")
    _add_model_flags(tr)
    tr.add_argument("--beta", type=float, help="nominal interval width")
    tr.set_defaults(func=cmd_train)

    bt = sub.add_parser("backtest", help="walk-forward backtest with coverage reports")
    _add_model_flags(bt)
    bt.add_argument("--betas", help="comma-separated interval widths")
    bt.add_argument("--test-days", type=int)
    bt.add_argument("--refit", action=argparse.BooleanOptionalAction, default=None)
    bt.set_defaults(func=cmd_backtest)

    ev = sub.add_parser("eval", help="recompute coverage reports from plotdata.csv")
    ev.add_argument("--predictions", required=True)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_eval)

    vt = sub.add_parser("verify-theorem", help="check that constant models learn the alpha-quantile")
    vt.add_argument("--distribution", default="laplace:0:1")
    vt.add_argument("--alphas", default="0.05,0.5,0.95")
    vt.add_argument("--n", type=int, default=20000)
    vt.add_argument("--seed", type=int, default=0)
    vt.add_argument("--tolerance", type=float, default=0.08)
    vt.set_defaults(func=cmd_verify_theorem)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    func = args.func
    del args.func, args.verbose
    try:
        return func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
