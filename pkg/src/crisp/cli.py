"""Command-line entry point for the crisis-resilient portfolio pipeline.

Subcommands
-----------
synth      generate a regime-switching synthetic market and write it as CSV
train      train the allocation model (or an ablation variant) on one universe
backtest   evaluate the configured strategies on the held-out test span
ablate     train and score the six component-ablation configurations
features   dump the 31-feature roster as CSV

Configuration is a flat INI file with sections; every key has a default, so
all commands run with no config at all.  Unknown sections or keys are
rejected, and the fully resolved configuration is echoed into the output
directory so any run can be reproduced from its own artifacts.  Exit codes:
0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys

import numpy as np

from .backtest import (
    ABLATION_NAMES,
    ablation_csv,
    ablation_suite,
    crisp_strategy,
    equal_weight,
    mean_variance,
    random_selection,
    risk_parity,
    run_backtest,
    train_on_universe,
)
from .data import RegimeConfig, Universe, generate_synthetic, load_csv, make_windows
from .features import CRISIS_FEATURES, N_FEATURES, roster_csv
from .graphattn import sparsity_report, telemetry_csv
from .model import ModelConfig
from .objectives import LossWeights
from .spatial import PriorGraph, build_prior
from .training import TrainConfig, load_checkpoint, save_checkpoint
from .universe import AssetBook, load_asset_book


class UsageError(Exception):
    """Invocation or configuration problem; maps to exit code 2."""


# Section -> key -> (type tag, default).  The resolved config always carries
# every key, which is what makes the echoed file re-runnable as-is.
_SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "data": {
        "source": ("str", "synthetic"),          # synthetic | csv
        "csv_path": ("str", ""),
        "universe_file": ("str", ""),            # blank = packaged default
        "window": ("int", 20),
        "horizon": ("int", 5),
        "train_frac": ("float", 0.7),
        "train_stride": ("int", 3),
    },
    "synthetic": {
        "days": ("int", 1500),
        "seed": ("int", 11),
        "p_calm_to_crisis": ("float", 0.02),
        "p_crisis_to_calm": ("float", 0.10),
        "calm_vol": ("float", 0.01),
        "crisis_vol": ("float", 0.03),
        "calm_corr": ("float", 0.2),
        "crisis_corr": ("float", 0.8),
        "calm_mean": ("float", 0.0004),
        "crisis_mean": ("float", -0.002),
        "defensive_vol_factor": ("float", 0.4),
        "defensive_indices": ("str", "auto"),    # auto | "" | comma list
    },
    "model": {
        "n_features": ("int", N_FEATURES),
        "gat_heads": ("int", 4),
        "use_alloc_lstm": ("bool", True),
        "per_step_graph": ("bool", True),
        "static_graph": ("bool", False),
        "init_seed": ("int", 0),
    },
    "train": {
        "learning_rate": ("float", 1e-3),
        "lr_min": ("float", 1e-5),
        "batch_size": ("int", 32),
        "max_epochs": ("int", 200),
        "patience": ("int", 15),
        "val_fraction": ("float", 0.1),
        "clip_norm": ("float", 5.0),
        "seed": ("int", 0),
    },
    "loss": {
        "sharpe": ("float", 0.4),
        "sortino": ("float", 0.2),
        "risk": ("float", 0.3),
        "diversification": ("float", 0.05),
        "turnover": ("float", 0.05),
        "risk_free_daily": ("float", 0.0),
        "cvar_alpha": ("float", 0.05),
        "turnover_target": ("float", 0.02),
        "turnover_width": ("float", 0.01),
        "literal_entropy_sign": ("bool", False),
    },
    "backtest": {
        "strategies": ("str", "crisp,equal_weight,mean_variance,risk_parity"),
        "mv_risk_aversion": ("float", 1.0),
        "mv_lookback": ("int", 252),
        "rp_lookback": ("int", 252),
        "random_seed": ("int", 0),
    },
}

_VARIANTS: dict[str, dict[str, object]] = {
    "full": {},
    "static": {"static_graph": True},
    "single_head": {"gat_heads": 1},
    "no_lstm": {"use_alloc_lstm": False},
    "no_crisis": {"n_features": N_FEATURES - len(CRISIS_FEATURES)},
}

_STRATEGY_NAMES = ("crisp", "equal_weight", "mean_variance", "risk_parity",
                  "random_selection")

_CONVENTIONS = {
    "returns": "simple daily returns, no dividends",
    "rebalancing": "weights held fixed within each 5-day period (no drift)",
    "costs": "no transaction costs or slippage",
    "max_drawdown": "reported as a negative fraction",
}


def _coerce(section: str, key: str, kind: str, raw: str):
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError:
        raise UsageError(
            f"config key [{section}] {key} = {raw!r} is not a valid {kind}") from None


def load_config(path: str | None) -> dict[str, dict[str, object]]:
    """Read an INI config, validate exhaustively, and fill in all defaults."""
    resolved = {sec: {k: default for k, (_, default) in keys.items()}
                for sec, keys in _SCHEMA.items()}
    if path is None:
        return resolved
    if not os.path.isfile(path):
        raise UsageError(f"config file not found: {path}")
    parser = configparser.RawConfigParser()
    parser.optionxform = str        # exact key match; wrong case is rejected
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise UsageError(f"cannot parse config {path}: {exc}") from None
    for section in parser.sections():
        if section not in _SCHEMA:
            raise UsageError(f"unknown config section [{section}] "
                             f"(known: {', '.join(_SCHEMA)})")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise UsageError(
                    f"unknown config key [{section}] {key} "
                    f"(known: {', '.join(_SCHEMA[section])})")
            kind = _SCHEMA[section][key][0]
            resolved[section][key] = _coerce(section, key, kind, raw)
    return resolved


def _format_value(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def echo_config(cfg: dict[str, dict[str, object]], out_dir: str) -> str:
    """Write the resolved configuration; rerunning from it reproduces the run."""
    lines = []
    for section, keys in _SCHEMA.items():
        lines.append(f"[{section}]")
        for key in keys:
            lines.append(f"{key} = {_format_value(cfg[section][key])}")
        lines.append("")
    path = os.path.join(out_dir, "resolved_config.ini")
    with open(path, "w") as fh:
        fh.write("\n".join(lines))
    return path


# -- shared pipeline pieces ---------------------------------------------------

def _load_book(cfg) -> AssetBook:
    path = cfg["data"]["universe_file"] or None
    if path is not None and not os.path.isfile(path):
        raise UsageError(f"universe file not found: {path}")
    return load_asset_book(path)


def _defensive_indices(cfg, book: AssetBook) -> list[int]:
    raw = str(cfg["synthetic"]["defensive_indices"]).strip()
    if raw == "auto":
        mask = book.defensive_mask(book.tickers())
        return [i for i, flag in enumerate(mask) if flag]
    if raw == "":
        return []
    try:
        return [int(tok) for tok in raw.split(",")]
    except ValueError:
        raise UsageError(
            f"[synthetic] defensive_indices must be 'auto', blank, or a "
            f"comma-separated index list; got {raw!r}") from None


def _build_universe(cfg, book: AssetBook) -> Universe:
    source = cfg["data"]["source"]
    if source == "synthetic":
        s = cfg["synthetic"]
        regime_cfg = RegimeConfig(
            p_calm_to_crisis=s["p_calm_to_crisis"],
            p_crisis_to_calm=s["p_crisis_to_calm"],
            calm_vol=s["calm_vol"], crisis_vol=s["crisis_vol"],
            calm_corr=s["calm_corr"], crisis_corr=s["crisis_corr"],
            calm_mean=s["calm_mean"], crisis_mean=s["crisis_mean"],
            defensive_vol_factor=s["defensive_vol_factor"])
        return generate_synthetic(book.tickers(), s["days"], s["seed"],
                                  regime_cfg, _defensive_indices(cfg, book))
    if source == "csv":
        path = cfg["data"]["csv_path"]
        if not path:
            raise UsageError("[data] csv_path is required when source = csv")
        if not os.path.isfile(path):
            raise UsageError(f"data file not found: {path}")
        return load_csv(path, book.tickers())
    raise UsageError(f"[data] source must be 'synthetic' or 'csv', got {source!r}")


def _plan_windows(cfg, universe: Universe):
    """Chronological split: train windows at the training stride, test windows
    tiled at the horizon so holding periods are contiguous and non-overlapping.

    The boundary is a return-day index; train targets end on or before it and
    test targets start strictly after it, so no evaluated day was trained on.
    """
    d = cfg["data"]
    window, horizon = d["window"], d["horizon"]
    if not 0.0 < d["train_frac"] < 1.0:
        raise UsageError("[data] train_frac must be strictly between 0 and 1")
    if d["train_stride"] < 1:
        raise UsageError("[data] train_stride must be >= 1")
    boundary = int(universe.n_return_days * d["train_frac"])
    train = [w for w in make_windows(universe, window, horizon, d["train_stride"])
             if w.end + horizon <= boundary]
    test = [w for w in make_windows(universe, window, horizon, horizon)
            if w.end >= boundary]
    if not train:
        raise UsageError("train split is empty; raise train_frac or add data")
    if not test:
        raise UsageError("test split is empty; lower train_frac or add data")
    return train, test, boundary


def _model_config(cfg, universe: Universe) -> ModelConfig:
    m = cfg["model"]
    return ModelConfig(
        n_assets=universe.n_assets, n_features=m["n_features"],
        window=cfg["data"]["window"], horizon=cfg["data"]["horizon"],
        gat_heads=m["gat_heads"], use_alloc_lstm=m["use_alloc_lstm"],
        per_step_graph=m["per_step_graph"], static_graph=m["static_graph"],
        init_seed=m["init_seed"])


def _train_config(cfg) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        learning_rate=t["learning_rate"], lr_min=t["lr_min"],
        batch_size=t["batch_size"], max_epochs=t["max_epochs"],
        patience=t["patience"], val_fraction=t["val_fraction"],
        clip_norm=t["clip_norm"], seed=t["seed"])


def _loss_weights(cfg) -> LossWeights:
    w = cfg["loss"]
    return LossWeights(
        sharpe=w["sharpe"], sortino=w["sortino"], risk=w["risk"],
        diversification=w["diversification"], turnover=w["turnover"],
        risk_free_daily=w["risk_free_daily"], cvar_alpha=w["cvar_alpha"],
        turnover_target=w["turnover_target"], turnover_width=w["turnover_width"],
        literal_entropy_sign=w["literal_entropy_sign"])


def _prior(book: AssetBook, universe: Universe) -> PriorGraph:
    return build_prior(book.sector_map, book.region_map, universe.tickers)


def _ensure_out(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _write(path: str, text: str) -> None:
    with open(path, "w") as fh:
        fh.write(text)


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in name.lower()).strip("_")


# -- commands -----------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    cfg["data"]["source"] = "synthetic"
    if args.seed is not None:
        cfg["synthetic"]["seed"] = args.seed
    book = _load_book(cfg)
    universe = _build_universe(cfg, book)
    out = _ensure_out(args.out)

    rows = ["date,ticker,close,volume"]
    for i, ticker in enumerate(universe.tickers):
        for t, date in enumerate(universe.dates):
            rows.append(f"{date},{ticker},{float(universe.closes[i, t])!r},"
                        f"{float(universe.volumes[i, t])!r}")
    _write(os.path.join(out, "universe.csv"), "\n".join(rows) + "\n")

    labels = ["date,regime"]
    for date, reg in zip(universe.return_dates, universe.regimes):
        labels.append(f"{date},{'crisis' if reg else 'calm'}")
    _write(os.path.join(out, "regimes.csv"), "\n".join(labels) + "\n")

    echo_config(cfg, out)
    crisis_days = int(universe.regimes.sum())
    print(f"wrote {len(universe.dates)} days x {universe.n_assets} tickers to "
          f"{out}/universe.csv ({crisis_days} crisis days)")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.variant is not None:
        if args.variant not in _VARIANTS:
            raise UsageError(f"unknown variant {args.variant!r} "
                             f"(known: {', '.join(_VARIANTS)})")
        cfg["model"].update(_VARIANTS[args.variant])
    if args.seed is not None:
        cfg["train"]["seed"] = args.seed

    book = _load_book(cfg)
    universe = _build_universe(cfg, book)
    train_windows, _, boundary = _plan_windows(cfg, universe)
    prior = _prior(book, universe)

    model_config = _model_config(cfg, universe)
    _, result = train_on_universe(universe, book, prior, train_windows,
                                  model_config, _train_config(cfg),
                                  _loss_weights(cfg))

    out = _ensure_out(args.out)
    save_checkpoint(result.checkpoint, os.path.join(out, "checkpoint.bin"))
    _write(os.path.join(out, "training_log.csv"), result.log_csv())
    echo_config(cfg, out)

    epochs = len(result.log)
    print(f"trained on {len(train_windows)} windows (boundary day {boundary}); "
          f"{epochs} epochs, best val loss {result.checkpoint.best_val!r}")
    if result.stopped_early:
        print(f"early stop after {epochs} epochs")
    if result.diverged:
        print("warning: loss diverged; checkpoint holds the last finite state")
    print(f"wrote {out}/checkpoint.bin")
    return 0


def _build_strategies(cfg, book, universe, prior, checkpoint_path):
    names = [s.strip() for s in str(cfg["backtest"]["strategies"]).split(",")
             if s.strip()]
    unknown = [n for n in names if n not in _STRATEGY_NAMES]
    if unknown:
        raise UsageError(f"unknown strategies {unknown} "
                         f"(known: {', '.join(_STRATEGY_NAMES)})")

    ck = None
    if checkpoint_path is not None:
        if not os.path.isfile(checkpoint_path):
            raise UsageError(f"checkpoint not found: {checkpoint_path}")
        ck = load_checkpoint(checkpoint_path)

    b = cfg["backtest"]
    strategies = []
    for name in names:
        if name == "crisp":
            if ck is None:
                print("no checkpoint given; running baselines only")
                continue
            indices = None
            if ck.model_config.n_features != N_FEATURES:
                indices = [i for i in range(N_FEATURES)
                           if i not in CRISIS_FEATURES]
            mask = np.array(book.defensive_mask(universe.tickers), dtype=np.float64)
            strategies.append(crisp_strategy(ck, prior, mask,
                                             feature_indices=indices))
        elif name == "equal_weight":
            strategies.append(equal_weight())
        elif name == "mean_variance":
            strategies.append(mean_variance(risk_aversion=b["mv_risk_aversion"],
                                            lookback=b["mv_lookback"]))
        elif name == "risk_parity":
            strategies.append(risk_parity(lookback=b["rp_lookback"]))
        elif name == "random_selection":
            strategies.append(random_selection(seed=b["random_seed"]))
    if not strategies:
        raise UsageError("no strategies left to run")
    return strategies


def cmd_backtest(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["backtest"]["random_seed"] = args.seed

    book = _load_book(cfg)
    universe = _build_universe(cfg, book)
    _, test_windows, boundary = _plan_windows(cfg, universe)
    prior = _prior(book, universe)
    strategies = _build_strategies(cfg, book, universe, prior, args.checkpoint)

    out = _ensure_out(args.out)
    summary: dict[str, object] = {
        "test_days": len(test_windows) * cfg["data"]["horizon"],
        "periods": len(test_windows),
        "boundary_day": boundary,
        "conventions": _CONVENTIONS,
        "strategies": {},
    }
    for strat in strategies:
        report = run_backtest(strat, universe, test_windows)
        slug = _slug(report.strategy)
        _write(os.path.join(out, f"equity_{slug}.csv"), report.equity_csv())
        _write(os.path.join(out, f"weights_{slug}.csv"),
               report.weights_csv(universe.tickers))
        entry = dict(report.metric_set.to_dict())
        entry["infeasible_periods"] = report.infeasible_periods
        entry["fallback_events"] = len(strat.fallback_events)
        summary["strategies"][report.strategy] = entry
        if report.attention:
            mask = np.array(book.defensive_mask(universe.tickers), dtype=bool)
            _write(os.path.join(out, f"attention_{slug}.csv"),
                   telemetry_csv(report.attention))
            _write(os.path.join(out, f"attention_summary_{slug}.json"),
                   json.dumps(sparsity_report(report.attention, mask).to_dict(),
                              indent=2, sort_keys=True) + "\n")
        m = report.metric_set
        print(f"{report.strategy}: sharpe {m.sharpe:.3f}, "
              f"ann return {m.ann_return:.3%}, max dd {m.max_drawdown:.3%}")

    _write(os.path.join(out, "metrics.json"),
           json.dumps(summary, indent=2, sort_keys=True) + "\n")
    echo_config(cfg, out)
    print(f"wrote {out}/metrics.json")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["train"]["seed"] = args.seed
    only = None
    if args.only is not None:
        if args.only not in ABLATION_NAMES:
            raise UsageError(f"unknown configuration {args.only!r} "
                             f"(known: {', '.join(ABLATION_NAMES)})")
        only = [args.only]

    book = _load_book(cfg)
    universe = _build_universe(cfg, book)
    train_windows, test_windows, _ = _plan_windows(cfg, universe)
    prior = _prior(book, universe)

    rows = ablation_suite(universe, book, prior, train_windows, test_windows,
                          _train_config(cfg), _model_config(cfg, universe),
                          _loss_weights(cfg), only=only)

    out = _ensure_out(args.out)
    table = ablation_csv(rows)
    _write(os.path.join(out, "ablation.csv"), table)
    echo_config(cfg, out)
    for name, ms in rows:
        print(f"{name}: sharpe {ms.sharpe:.3f}, max dd {ms.max_drawdown:.3%}")
    print(f"wrote {out}/ablation.csv")
    return 0


def cmd_features(args) -> int:
    text = roster_csv()
    if args.out is not None:
        out = _ensure_out(args.out)
        path = os.path.join(out, "features.csv")
        _write(path, text)
        print(f"wrote {path}")
    else:
        sys.stdout.write(text)
    return 0


# -- entry point --------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crisp",
        description="Crisis-resilient portfolio pipeline: synthetic markets, "
                    "training, backtesting, ablations.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="INI config file (all keys optional)")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--seed", type=int, help="override the command's seed key")

    p = sub.add_parser("synth", help="generate a synthetic market CSV")
    common(p)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train the allocation model")
    common(p)
    p.add_argument("--variant", help="model variant: " + ", ".join(_VARIANTS))
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("backtest", help="run strategies on the test split")
    common(p)
    p.add_argument("--checkpoint", help="trained checkpoint; omit for baselines only")
    p.set_defaults(fn=cmd_backtest)

    p = sub.add_parser("ablate", help="run the component-ablation table")
    common(p)
    p.add_argument("--only", help="restrict to one named configuration")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("features", help="dump the feature roster")
    p.add_argument("--out", help="optional output directory")
    p.set_defaults(fn=cmd_features)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:       # noqa: BLE001 - single reporting point
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
