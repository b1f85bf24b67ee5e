"""Ranking and portfolio metrics, top-k backtests, continuity trajectory export
and ranking heat-map data."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from stockode.errors import ConfigError, StockODEError
from stockode.model import ranking_order

log = logging.getLogger(__name__)


class UndefinedSharpeError(StockODEError, ZeroDivisionError):
    """Sharpe ratio of a zero-variance return series."""


@dataclass
class DailyEvaluation:
    date: object
    r_hat: np.ndarray
    r_true: np.ndarray
    predicted_order: np.ndarray = None
    true_order: np.ndarray = None

    def __post_init__(self):
        self.r_hat = np.asarray(self.r_hat, dtype=np.float64)
        self.r_true = np.asarray(self.r_true, dtype=np.float64)
        if self.predicted_order is None:
            self.predicted_order = ranking_order(self.r_hat)
        if self.true_order is None:
            self.true_order = ranking_order(self.r_true)


def sharpe_ratio(daily_returns, risk_free: float = 0.0) -> float:
    """(mean - risk_free) / sample std (n - 1 denominator)."""
    r = np.asarray(daily_returns, dtype=np.float64)
    if r.size < 2:
        raise ValueError("sharpe_ratio needs at least 2 returns")
    mean = r.mean()
    sd = r.std(ddof=1)
    if sd == 0.0 or sd <= 1e-12 * abs(mean):
        raise UndefinedSharpeError("zero standard deviation: Sharpe ratio undefined")
    return float((mean - risk_free) / sd)


def reciprocal_rank(ev: DailyEvaluation) -> float:
    top = ev.predicted_order[0]
    rank = int(np.nonzero(ev.true_order == top)[0][0]) + 1
    return 1.0 / rank


def mrr(evals) -> float:
    if not evals:
        raise ValueError("mrr needs at least one evaluation day")
    return float(np.mean([reciprocal_rank(ev) for ev in evals]))


def _discounts(k: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, k + 2))


def ndcg_day(ev: DailyEvaluation, k: int = 5) -> float | None:
    """NDCG@k with relevance = true return shifted so the day's worst stock is 0.

    Returns None when the ideal DCG is zero (all relevances equal).
    """
    n = ev.r_true.shape[0]
    if n < k:
        raise ConfigError(f"ndcg@{k} needs at least {k} stocks, got {n}")
    rel = np.maximum(ev.r_true - ev.r_true.min(), 0.0)
    disc = _discounts(k)
    idcg = float(rel[ev.true_order[:k]] @ disc)
    if idcg <= 0.0:
        return None
    return float(rel[ev.predicted_order[:k]] @ disc) / idcg


def ndcg_at_k(evals, k: int = 5) -> float:
    scores = []
    for ev in evals:
        s = ndcg_day(ev, k)
        if s is None:
            log.warning("ndcg@%d: skipping day %s with zero ideal DCG", k, ev.date)
            continue
        scores.append(s)
    return float(np.mean(scores)) if scores else float("nan")


@dataclass
class BacktestReport:
    k: int
    risk_free: float
    daily_returns: np.ndarray
    dates: list
    rank_tau: list
    sr: float | None
    mrr: float
    ndcg5: float
    cumulative_return: float
    cumulative_path: np.ndarray = field(default=None)

    def to_json_dict(self) -> dict:
        return {
            "k": self.k,
            "risk_free": self.risk_free,
            "sr": self.sr,
            "mrr": self.mrr,
            "ndcg5": self.ndcg5,
            "cumulative_return": self.cumulative_return,
            "daily": [{"date": str(d), "portfolio_return": float(r), "rank_tau": int(t)}
                      for d, r, t in zip(self.dates, self.daily_returns, self.rank_tau)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"


def average_reports(reports) -> dict:
    """Mean metrics over independently seeded runs, with every run's report attached."""
    if not reports:
        raise ValueError("need at least one report to average")
    srs = [r.sr for r in reports]
    return {
        "k": reports[0].k,
        "risk_free": reports[0].risk_free,
        "n_runs": len(reports),
        "sr": None if any(s is None for s in srs) else float(np.mean(srs)),
        "mrr": float(np.mean([r.mrr for r in reports])),
        "ndcg5": float(np.mean([r.ndcg5 for r in reports])),
        "cumulative_return": float(np.mean([r.cumulative_return for r in reports])),
        "runs": [r.to_json_dict() for r in reports],
    }


def topk_returns(evals, k: int) -> np.ndarray:
    return np.array([ev.r_true[ev.predicted_order[:k]].mean() for ev in evals])


def backtest_topk(evals, k: int = 5, risk_free: float = 0.0) -> BacktestReport:
    """Equal-weight the predicted top-k each day and aggregate metrics."""
    if not evals:
        raise ValueError("backtest needs at least one evaluation day")
    n = evals[0].r_true.shape[0]
    if not 1 <= k <= n:
        raise ConfigError(f"top-k size {k} must be within 1..{n}")
    daily = topk_returns(evals, k)
    path = np.cumprod(1.0 + daily) - 1.0
    try:
        sr = sharpe_ratio(daily, risk_free) if len(daily) >= 2 else None
    except UndefinedSharpeError:
        sr = None
    ranks = [int(round(1.0 / reciprocal_rank(ev))) for ev in evals]
    return BacktestReport(k, risk_free, daily, [ev.date for ev in evals], ranks, sr, mrr(evals),
                          ndcg_at_k(evals, min(5, n)), float(path[-1]), path)


def random_ranking_sr(evals, k: int = 5, n_sims: int = 1000, rng=None, risk_free: float = 0.0) -> np.ndarray:
    """Sharpe ratios of ``n_sims`` portfolios that pick k stocks uniformly at random each day."""
    gen = np.random.default_rng(0) if rng is None else rng.generator
    r = np.stack([ev.r_true for ev in evals])  # (days, N)
    days, n = r.shape
    out = np.empty(n_sims)
    for s in range(n_sims):
        picks = np.argsort(gen.random((days, n)), axis=1)[:, :k]
        out[s] = sharpe_ratio(np.take_along_axis(r, picks, axis=1).mean(axis=1), risk_free)
    return out


TRAJECTORY_HEADER = ["window_index", "day", "fraction", "stock", "hidden_norm", "decoded_return"]


def trajectory_rows(model, window, fractions, window_index: int | None = None) -> list:
    """Continuity rows for one window: every (day, fraction, stock) of the
    recurrent ODE state, with the prediction decoded from that state."""
    from stockode.nrode import query_trajectory
    from stockode.numerics import no_grad

    with no_grad():
        out = model.forward(window, None, compute_elbo=False)
        state = out.state
        hs = query_trajectory(state, fractions)  # (w, q, N, d)
        p_T = out.diagnostics["P"][:, -1, :]
        F = out.diagnostics["F"]
        rows = []
        idx = window.index if window_index is None else window_index
        for day, rec in enumerate(state.trajectory):
            for qi, q in enumerate(fractions):
                h = hs[day, qi]
                decoded = model.decode_hidden(h, rec, p_T, F).data
                norms = np.linalg.norm(h, axis=-1)
                for s in range(h.shape[0]):
                    rows.append((idx, day, float(q), s, float(norms[s]), float(decoded[s])))
    return rows


def export_trajectories(model, windows, fractions, path=None) -> list:
    rows = []
    for i, w in enumerate(windows):
        rows.extend(trajectory_rows(model, w, fractions, w.index))
    if path is not None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(TRAJECTORY_HEADER)
            for r in rows:
                wr.writerow([r[0], r[1], repr(r[2]), r[3], repr(r[4]), repr(r[5])])
    return rows


def rank_positions(order: np.ndarray) -> np.ndarray:
    """1-based rank of every stock given a best-first order."""
    pos = np.empty(len(order), dtype=int)
    pos[np.asarray(order)] = np.arange(1, len(order) + 1)
    return pos


def ranking_heatmap(evals, stocks=None, days=None) -> tuple:
    """(true_ranks, predicted_ranks), each of shape (len(stocks), len(days))."""
    days = range(len(evals)) if days is None else days
    n = evals[0].r_true.shape[0]
    stocks = range(n) if stocks is None else stocks
    stocks, days = list(stocks), list(days)
    for s in stocks:
        if not 0 <= s < n:
            raise ValueError(f"stock index {s} out of range 0..{n - 1}")
    for t in days:
        if not 0 <= t < len(evals):
            raise ValueError(f"day index {t} out of range 0..{len(evals) - 1}")
    true = np.empty((len(stocks), len(days)), dtype=int)
    pred = np.empty_like(true)
    for j, t in enumerate(days):
        tp, pp = rank_positions(evals[t].true_order), rank_positions(evals[t].predicted_order)
        true[:, j] = tp[stocks]
        pred[:, j] = pp[stocks]
    return true, pred


def write_heatmap(path, evals, stocks, days, tickers) -> None:
    true, pred = ranking_heatmap(evals, stocks, days)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["date", "ticker", "true_rank", "predicted_rank"])
        for j, t in enumerate(days):
            for i, s in enumerate(stocks):
                wr.writerow([str(evals[t].date), tickers[s], int(true[i, j]), int(pred[i, j])])
