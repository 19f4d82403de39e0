"""Weekly-rebalanced out-of-sample evaluation, baselines and ablations.

A strategy maps (universe, rebalance index, previous weights) to feasible
portfolio weights using only data up to the rebalance index.  The
backtester walks the non-overlapping 5-day test windows sequentially,
holds each weight vector fixed for its period, concatenates the daily
returns and computes metrics once over the whole series.  Strategies that
emit infeasible weights fall back to equal weight for that period; the
event is counted and flagged.

Reporting conventions: intra-period weight drift is ignored (weights act
as if rebalanced to target daily at zero cost) and returns carry no
transaction costs; turnover is reported separately.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .allocation import PortfolioWeights, project_constraints, score_to_weights
from .data import Universe, Window
from .features import (
    CRISIS_FEATURES,
    N_FEATURES,
    PAD,
    FeatureNormalizer,
    compute_features,
)
from .graphattn import AttentionRecord
from .model import CrispModel, ModelConfig
from .objectives import LossWeights, MetricSet, metrics
from .spatial import PriorGraph, correlation_adjacency, normalize_adjacency
from .training import Checkpoint, TrainConfig, train
from .universe import AssetBook

__all__ = [
    "BacktestReport",
    "Strategy",
    "ablation_suite",
    "attach_features",
    "crisp_strategy",
    "equal_weight",
    "mean_variance",
    "random_selection",
    "risk_parity",
    "risk_parity_weights",
    "run_backtest",
    "static_adjacency_at",
    "train_on_universe",
]

CORR_LOOKBACK = 252
CORR_THRESHOLD = 0.5


@dataclass
class Strategy:
    """Named weight rule; the function sees history only up to the given index."""

    name: str
    weight_fn: Callable[[Universe, int, np.ndarray], PortfolioWeights]
    attention_log: list[AttentionRecord] | None = None
    fallback_events: list[str] = field(default_factory=list)


@dataclass
class BacktestReport:
    strategy: str
    weights: list[PortfolioWeights]
    turnovers: list[float]
    daily_returns: np.ndarray
    equity: np.ndarray
    dates: list[str]                 # one date per test day
    rebalance_dates: list[str]
    metric_set: MetricSet
    infeasible_periods: int
    attention: list[AttentionRecord] | None = None

    def equity_csv(self) -> str:
        """date,strategy,equity rows; the lead row is the starting stake of 1."""
        start = self.rebalance_dates[0] if self.rebalance_dates else ""
        lines = ["date,strategy,equity", f"{start},{self.strategy},1"]
        for d, e in zip(self.dates, self.equity):
            lines.append(f"{d},{self.strategy},{e:.12g}")
        return "\n".join(lines) + "\n"

    def weights_csv(self, tickers: list[str]) -> str:
        lines = ["date,ticker,weight"]
        for pw in self.weights:
            for t, w in zip(tickers, pw.weights):
                lines.append(f"{pw.as_of_date},{t},{w:.12g}")
        return "\n".join(lines) + "\n"


def run_backtest(strategy: Strategy, universe: Universe,
                 test_windows: list[Window]) -> BacktestReport:
    """Sequential evaluation over non-overlapping 5-day holding periods."""
    if not test_windows:
        raise ValueError("backtest needs at least one test window")
    horizon = test_windows[0].target.shape[1]
    for a, b in zip(test_windows, test_windows[1:]):
        if b.end - a.end != horizon:
            raise ValueError(
                f"test windows must tile contiguously with stride {horizon}: "
                f"window ends {a.end} -> {b.end}")

    n = universe.n_assets
    prev = np.full(n, 1.0 / n)
    weights_log: list[PortfolioWeights] = []
    turnovers: list[float] = []
    daily: list[np.ndarray] = []
    dates: list[str] = []
    infeasible = 0

    for w in test_windows:
        pw = strategy.weight_fn(universe, w.end, prev.copy())
        if not pw.is_feasible():
            infeasible += 1
            strategy.fallback_events.append(
                f"{w.end_date}: infeasible weights replaced by equal weight")
            pw = PortfolioWeights(np.full(n, 1.0 / n), as_of_date=w.end_date)
        if not pw.as_of_date:
            pw.as_of_date = w.end_date
        turnovers.append(float(np.abs(pw.weights - prev).sum()))
        daily.append(pw.weights @ w.target)
        dates.extend(universe.return_dates[w.end + 1:w.end + 1 + horizon])
        weights_log.append(pw)
        prev = pw.weights

    series = np.concatenate(daily)
    return BacktestReport(
        strategy=strategy.name,
        weights=weights_log,
        turnovers=turnovers,
        daily_returns=series,
        equity=np.cumprod(1.0 + series),
        dates=dates,
        rebalance_dates=[w.end_date for w in test_windows],
        metric_set=metrics(series, avg_turnover=float(np.mean(turnovers))),
        infeasible_periods=infeasible,
        attention=strategy.attention_log,
    )


# -- classical baselines ------------------------------------------------------

def equal_weight() -> Strategy:
    def fn(universe: Universe, end: int, prev: np.ndarray) -> PortfolioWeights:
        n = universe.n_assets
        return PortfolioWeights(np.full(n, 1.0 / n))
    return Strategy("Equal Weight", fn)


def mean_variance(risk_aversion: float = 1.0, lookback: int = 252,
                  steps: int = 500, step_size: float = 0.01) -> Strategy:
    """Markowitz utility maximized by projected gradient ascent."""
    strat = Strategy("Mean-Variance", None)

    def fn(universe: Universe, end: int, prev: np.ndarray) -> PortfolioWeights:
        n = universe.n_assets
        if end + 1 < lookback:
            strat.fallback_events.append(
                f"index {end}: {end + 1} days < {lookback}-day lookback, equal weight used")
            return PortfolioWeights(np.full(n, 1.0 / n))
        hist = universe.returns[:, end + 1 - lookback:end + 1]
        mu = hist.mean(axis=1)
        sigma = np.cov(hist) + 1e-6 * np.eye(n)
        w = np.full(n, 1.0 / n)
        for _ in range(steps):
            grad = mu - 2.0 * risk_aversion * (sigma @ w)
            w = project_constraints(w + step_size * grad)
        return PortfolioWeights(w)

    strat.weight_fn = fn
    return strat


def risk_parity_weights(cov: np.ndarray, tol: float = 1e-8,
                        max_sweeps: int = 10000) -> np.ndarray:
    """Equal-risk-contribution weights by cyclical coordinate iteration.

    Minimizes (1/2) y' C y - (1/N) sum ln y_i coordinate-wise; the
    normalized y equalizes w_i (C w)_i.  Unconstrained solution, before
    any box projection.
    """
    c = np.asarray(cov, dtype=np.float64)
    n = c.shape[0]
    diag = np.diag(c)
    if (diag <= 0.0).any():
        raise ValueError("risk parity needs strictly positive variances")
    y = 1.0 / np.sqrt(diag * n)
    for _ in range(max_sweeps):
        y_prev = y.copy()
        for i in range(n):
            resid = c[i] @ y - c[i, i] * y[i]
            y[i] = (-resid + np.sqrt(resid * resid + 4.0 * c[i, i] / n)) / (2.0 * c[i, i])
        w = y / y.sum()
        contrib = w * (c @ w)
        if contrib.max() - contrib.min() <= tol * contrib.max():
            return w
        if np.abs(y - y_prev).max() < 1e-15:
            break
    return y / y.sum()


def risk_parity(lookback: int = 252) -> Strategy:
    strat = Strategy("Risk Parity", None)

    def fn(universe: Universe, end: int, prev: np.ndarray) -> PortfolioWeights:
        n = universe.n_assets
        take = min(lookback, end + 1)
        if take < 2:
            strat.fallback_events.append(f"index {end}: too little history, equal weight")
            return PortfolioWeights(np.full(n, 1.0 / n))
        hist = universe.returns[:, end + 1 - take:end + 1]
        cov = np.cov(hist)
        if (np.diag(cov) <= 0.0).any():
            strat.fallback_events.append(f"index {end}: degenerate variance, equal weight")
            return PortfolioWeights(np.full(n, 1.0 / n))
        w = risk_parity_weights(cov)
        return PortfolioWeights(project_constraints(w))

    strat.weight_fn = fn
    return strat


def random_selection(seed: int = 0) -> Strategy:
    """Feasible random weights per period, seeded per rebalance index.

    Seeding by (seed, index) keeps each date's draw independent of how many
    times or in what order the rule is queried.
    """
    strat = Strategy("Random Selection", None)

    def fn(universe: Universe, end: int, prev: np.ndarray) -> PortfolioWeights:
        rng = np.random.default_rng([seed, end])
        scores = rng.standard_normal(universe.n_assets)
        return score_to_weights(scores)

    strat.weight_fn = fn
    return strat


# -- model-backed strategies --------------------------------------------------

def attach_features(universe: Universe, windows: list[Window],
                    defensive_mask: np.ndarray,
                    feature_indices: list[int] | None = None) -> None:
    """Compute (and cache on each window) the raw feature tensor."""
    p_pad, v_pad, m_pad = universe.padded_inputs(PAD)
    for w in windows:
        if w.features is not None:
            continue
        lo, hi = w.start, w.start + PAD + (w.end - w.start + 1)
        feats = compute_features(p_pad[:, lo:hi], v_pad[:, lo:hi], m_pad[lo:hi],
                                 defensive=defensive_mask)
        w.features = feats if feature_indices is None else feats[:, :, feature_indices]


def static_adjacency_at(universe: Universe, end: int,
                        lookback: int = CORR_LOOKBACK,
                        threshold: float = CORR_THRESHOLD) -> tuple[np.ndarray, bool]:
    """Normalized trailing-correlation adjacency as of a return-day index."""
    take = min(lookback, end + 1)
    hist = universe.returns[:, end + 1 - take:end + 1]
    adj, empty = correlation_adjacency(hist, threshold)
    return normalize_adjacency(adj), empty


def train_on_universe(universe: Universe, book: AssetBook, prior: PriorGraph,
                      train_windows: list[Window], model_config: ModelConfig,
                      train_config: TrainConfig,
                      loss_weights: LossWeights | None = None):
    """Feature-attach, optionally build static graphs, and run the trainer."""
    defensive = np.array(book.defensive_mask(universe.tickers), dtype=np.float64)
    indices = None
    if model_config.n_features != N_FEATURES:
        indices = [i for i in range(N_FEATURES) if i not in CRISIS_FEATURES]
        if len(indices) != model_config.n_features:
            raise ValueError(
                f"model expects {model_config.n_features} features; "
                f"dropping the crisis block leaves {len(indices)}")
    attach_features(universe, train_windows, defensive, indices)

    static = None
    if model_config.static_graph:
        static = np.stack([static_adjacency_at(universe, w.end)[0]
                           for w in train_windows])

    model = CrispModel(model_config)
    result = train(model, train_windows, prior.normalized, train_config,
                   loss_weights, static_adjacencies=static)
    return model, result


def crisp_strategy(checkpoint: Checkpoint, prior: PriorGraph,
                   defensive_mask: np.ndarray, name: str = "CRISP",
                   feature_indices: list[int] | None = None) -> Strategy:
    """Strategy wrapping a trained model's best parameters."""
    model = CrispModel(checkpoint.model_config)
    model.load_state(checkpoint.best_params)
    normalizer = FeatureNormalizer.from_state(
        {"mean": checkpoint.normalizer["normalizer.mean"],
         "std": checkpoint.normalizer["normalizer.std"]})
    window = checkpoint.model_config.window
    strat = Strategy(name, None, attention_log=[] if not checkpoint.model_config.static_graph else None)

    def fn(universe: Universe, end: int, prev: np.ndarray) -> PortfolioWeights:
        start = end - window + 1
        if start < 0:
            raise ValueError(f"window ending at {end} has no room for {window} days")
        p_pad, v_pad, m_pad = universe.padded_inputs(PAD)
        lo, hi = start, start + PAD + window
        feats = compute_features(p_pad[:, lo:hi], v_pad[:, lo:hi], m_pad[lo:hi],
                                 defensive=defensive_mask)
        if feature_indices is not None:
            feats = feats[:, :, feature_indices]
        feats = normalizer.transform(feats)
        static = None
        if checkpoint.model_config.static_graph:
            static, empty = static_adjacency_at(universe, end)
            if empty:
                strat.fallback_events.append(
                    f"index {end}: empty correlation graph, identity adjacency used")
        weights, attention = model.allocate(feats, prior.normalized, static)
        if attention is not None and strat.attention_log is not None:
            strat.attention_log.append(AttentionRecord.from_alphas(
                universe.return_dates[end], attention))
        return PortfolioWeights(weights, as_of_date=universe.return_dates[end])

    strat.weight_fn = fn
    return strat


# -- ablation harness ---------------------------------------------------------

ABLATION_NAMES = [
    "Full CRISP",
    "w/o Learnable Graph",
    "w/o Multi-Head Attn",
    "w/o LSTM",
    "w/o Crisis Features",
    "Random Selection",
]


def ablation_suite(universe: Universe, book: AssetBook, prior: PriorGraph,
                   train_windows: list[Window], test_windows: list[Window],
                   train_config: TrainConfig,
                   base_config: ModelConfig | None = None,
                   loss_weights: LossWeights | None = None,
                   only: list[str] | None = None,
                   ) -> list[tuple[str, MetricSet]]:
    """Train and evaluate the six component-ablation configurations."""
    base = base_config or ModelConfig(n_assets=universe.n_assets)
    n_crisisless = base.n_features - len(CRISIS_FEATURES)
    variants: dict[str, ModelConfig | None] = {
        "Full CRISP": base,
        "w/o Learnable Graph": ModelConfig(**{**base.__dict__, "static_graph": True}),
        "w/o Multi-Head Attn": ModelConfig(**{**base.__dict__, "gat_heads": 1}),
        "w/o LSTM": ModelConfig(**{**base.__dict__, "use_alloc_lstm": False}),
        "w/o Crisis Features": ModelConfig(**{**base.__dict__,
                                              "n_features": n_crisisless}),
        "Random Selection": None,
    }
    defensive = np.array(book.defensive_mask(universe.tickers), dtype=np.float64)
    rows: list[tuple[str, MetricSet]] = []
    for name in ABLATION_NAMES:
        if only is not None and name not in only:
            continue
        cfg = variants[name]
        if cfg is None:
            strat = random_selection(seed=train_config.seed)
        else:
            # fresh copies: windows cache features per roster width
            tw = [Window(w.start, w.end, w.end_date, w.target, w.regime)
                  for w in train_windows]
            model, result = train_on_universe(
                universe, book, prior, tw, cfg, train_config, loss_weights)
            indices = None
            if cfg.n_features == n_crisisless:
                indices = [i for i in range(base.n_features) if i not in CRISIS_FEATURES]
            strat = crisp_strategy(result.checkpoint, prior, defensive,
                                   name=name, feature_indices=indices)
        report = run_backtest(strat, universe,
                              [Window(w.start, w.end, w.end_date, w.target, w.regime)
                               for w in test_windows])
        rows.append((name, report.metric_set))
    return rows


def ablation_csv(rows: list[tuple[str, MetricSet]]) -> str:
    lines = ["configuration,sharpe,sortino,ann_return,ann_vol,max_drawdown,calmar,avg_turnover"]
    for name, ms in rows:
        d = ms.to_dict()
        lines.append(
            f'"{name}",{d["sharpe"]:.6g},{d["sortino"]:.6g},{d["ann_return"]:.6g},'
            f'{d["ann_vol"]:.6g},{d["max_drawdown"]:.6g},{d["calmar"]:.6g},'
            f'{d["avg_turnover"]:.6g}')
    return "\n".join(lines) + "\n"
