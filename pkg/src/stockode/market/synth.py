"""Synthetic geometric-Brownian-motion markets with a planted ranking."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from stockode.errors import ConfigError
from stockode.market.bars import BarSeries, StockUniverse
from stockode.market.relations import Hyperedge, RelationSet
from stockode.numerics.rng import Rng

DRIFT_SPREAD = 0.005  # daily log-drift at |score| = 1 and signal_strength = 1
MARKET_VOL = 0.01
IDIO_VOL = 0.001
START_DATE = dt.date(2013, 1, 2)


@dataclass
class SynthMarket:
    universe: StockUniverse
    bars: dict
    relations: RelationSet
    scores: np.ndarray  # planted latent score per stock; higher means higher drift


def _business_days(start: dt.date, n: int) -> list:
    first = np.busday_offset(np.datetime64(start), 0, roll="forward")
    days = np.busday_offset(first, np.arange(n), roll="forward")
    return [d.astype(object) for d in days]


def synth_market(n_stocks: int, n_days: int, n_hyperedges: int, signal_strength: float,
                 seed: int) -> SynthMarket:
    """Simulate prices whose daily drift is ``signal_strength * DRIFT_SPREAD * score``.

    Scores are evenly spaced on [-1, 1] in a seeded random order. Hyperedges
    are contiguous blocks of the score-sorted stock list, so related stocks
    have similar scores.
    """
    if n_stocks < 2:
        raise ConfigError(f"synthetic market needs at least 2 stocks, got {n_stocks}")
    if n_days < 2:
        raise ConfigError(f"synthetic market needs at least 2 days, got {n_days}")
    rng = Rng(seed)
    width = len(str(n_stocks - 1))
    tickers = [f"S{i:0{width}d}" for i in range(n_stocks)]
    scores = np.linspace(-1.0, 1.0, n_stocks)[rng.spawn("scores").permutation(n_stocks)]

    prng = rng.spawn("prices")
    drift = signal_strength * DRIFT_SPREAD * scores
    market = prng.normal((n_days, 1), scale=MARKET_VOL)
    idio = prng.normal((n_days, n_stocks), scale=IDIO_VOL)
    log_ret = drift - 0.5 * (MARKET_VOL ** 2 + IDIO_VOL ** 2) + market + idio
    log_ret[0] = 0.0
    close = 100.0 * np.exp(np.cumsum(log_ret, axis=0))
    prev = np.vstack([close[:1], close[:-1]])
    opn = prev * np.exp(prng.normal((n_days, n_stocks), scale=0.002))
    spread_hi = np.exp(np.abs(prng.normal((n_days, n_stocks), scale=0.003)))
    spread_lo = np.exp(-np.abs(prng.normal((n_days, n_stocks), scale=0.003)))
    high = np.maximum(opn, close) * spread_hi
    low = np.minimum(opn, close) * spread_lo
    volume = np.round(1e6 * np.exp(prng.normal((n_days, n_stocks), scale=0.3)))

    dates = _business_days(START_DATE, n_days)
    bars = {t: BarSeries(list(dates), opn[:, i], high[:, i], low[:, i], close[:, i], volume[:, i])
            for i, t in enumerate(tickers)}

    erng = rng.spawn("relations")
    by_score = np.argsort(scores, kind="stable")
    max_size = max(2, n_stocks // 3)
    edges = []
    for j in range(n_hyperedges):
        size = int(erng.integers(2, max_size + 1))
        start = int(erng.integers(0, n_stocks - size + 1))
        members = frozenset(tickers[k] for k in by_score[start:start + size])
        domain = "industry" if j % 2 == 0 else "wiki"
        edges.append(Hyperedge(domain, f"g{j}", members))
    return SynthMarket(StockUniverse(tickers), bars, RelationSet(edges), scores)
