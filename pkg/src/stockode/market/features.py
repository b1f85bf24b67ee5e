"""Return features, lookback windows, chronological splits and normalization."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from stockode.errors import ConfigError, DataError

MA_SPANS = (5, 10, 20, 30)
FEATURE_NAMES = ("open", "high", "low", "close", "volume", "ret1", "ret5", "ret10", "ret20", "ret30")
N_PRICE = 5
# Train:validation:test trading-day counts of the NASDAQ/NYSE corpora.
CORPUS_SPLIT_DAYS = (756, 252, 237)


@dataclass
class ReturnSeries:
    """One-day return ratios starting at the second calendar day.

    ``r[k]`` is the return on ``dates[k]``; ``ma[span][k]`` is the mean of the
    ``span`` most recent one-day returns ending at ``dates[k]`` (NaN before
    enough history exists).
    """

    dates: list
    r: np.ndarray
    ma: dict = field(default_factory=dict)


def compute_returns(bars: dict, tickers) -> ReturnSeries:
    close = np.stack([bars[t].close for t in tickers], axis=1)
    if close.shape[0] < 2:
        raise DataError("need at least 2 days of closes to compute returns")
    r = (close[1:] - close[:-1]) / close[:-1]
    ma = {}
    for span in MA_SPANS:
        m = np.full_like(r, np.nan)
        if r.shape[0] >= span:
            m[span - 1:] = np.lib.stride_tricks.sliding_window_view(r, span, axis=0).mean(axis=-1)
        ma[span] = m
    dates = bars[tickers[0]].dates[1:]
    return ReturnSeries(list(dates), r, ma)


@dataclass
class MarketFeatures:
    """Raw (unnormalized) per-day features over the usable day range."""

    dates: list
    values: np.ndarray  # (days, N, d_e)
    returns: np.ndarray  # (days, N) one-day returns
    tickers: list


def build_features(bars: dict, tickers, price_mode: str = "relative") -> MarketFeatures:
    """Per-day features [open, high, low, close, volume, ret1, ret5, ret10, ret20, ret30].

    ``price_mode="relative"`` expresses open/high/low/close as ratios to the
    trailing 30-day mean close minus 1 (stationary under trending prices);
    ``"level"`` keeps raw prices.
    """
    if price_mode not in ("relative", "level"):
        raise ConfigError(f"unknown price_mode {price_mode!r}")
    tickers = list(tickers)
    rs = compute_returns(bars, tickers)
    warm = max(MA_SPANS) - 1
    if rs.r.shape[0] <= warm:
        raise DataError(f"need more than {max(MA_SPANS)} days of bars for moving-average features")
    ohlc = np.stack([np.stack([bars[t].open, bars[t].high, bars[t].low, bars[t].close], axis=-1)
                     for t in tickers], axis=1)  # (days, N, 4)
    volume = np.stack([bars[t].volume for t in tickers], axis=1)[..., None]
    if price_mode == "relative":
        span = max(MA_SPANS)
        mean_close = np.full(ohlc.shape[:2], np.nan)
        mean_close[span - 1:] = np.lib.stride_tricks.sliding_window_view(ohlc[..., 3], span, axis=0).mean(axis=-1)
        ohlc = ohlc / mean_close[..., None] - 1.0
    price = np.concatenate([ohlc, volume], axis=-1)[1:]
    rets = np.stack([rs.r] + [rs.ma[s] for s in MA_SPANS], axis=-1)
    values = np.concatenate([price, rets], axis=-1)[warm:]
    return MarketFeatures(rs.dates[warm:], values, rs.r[warm:], tickers)


@dataclass
class PanelTensor:
    values: np.ndarray  # (w, N, d_e)
    returns: np.ndarray  # (w, N) raw one-day returns, feeds the sign correlation
    start_day: object
    end_day: object
    feature_names: tuple = FEATURE_NAMES


@dataclass
class Window:
    index: int
    panel: PanelTensor
    target: np.ndarray  # (N,) one-day return on target_day
    target_day: object


def build_windows(features: MarketFeatures, w: int) -> list:
    """Sliding windows of ``w`` feature days, each targeting the following day's return."""
    if w < 1:
        raise ConfigError(f"window length must be >= 1, got {w}")
    days = len(features.dates)
    if days < w + 1:
        raise DataError(f"insufficient history: need at least {w + 1} usable days "
                        f"({w + max(MA_SPANS) + 1} calendar days) for w={w}, have {days}")
    out = []
    for s in range(days - w):
        e = s + w
        panel = PanelTensor(features.values[s:e], features.returns[s:e],
                            features.dates[s], features.dates[e - 1])
        out.append(Window(s, panel, features.returns[e], features.dates[e]))
    return out


def split(windows: list, ratios) -> tuple:
    """Contiguous chronological train/validation/test partitions.

    ``ratios`` are either integer counts summing to ``len(windows)`` or
    fractions summing to 1 (the test split takes the remainder).
    """
    for a, b in zip(windows, windows[1:]):
        if not a.target_day < b.target_day:
            raise DataError("windows are not in chronological order; split requires chronology")
    n = len(windows)
    ratios = list(ratios)
    if len(ratios) != 3:
        raise ConfigError(f"expected 3 split ratios, got {ratios}")
    if all(float(r).is_integer() and r >= 1 for r in ratios) and sum(ratios) == n:
        counts = [int(r) for r in ratios]
    else:
        if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must be counts summing to {n} or fractions summing to 1, got {ratios}")
        n_train = int(round(ratios[0] * n))
        n_val = int(round(ratios[1] * n))
        counts = [n_train, n_val, n - n_train - n_val]
    a, b = counts[0], counts[0] + counts[1]
    return windows[:a], windows[a:b], windows[b:]


@dataclass
class Normalizer:
    """Per-stock z-scores for OHLCV, pooled z-scores for return features.

    Pooling across stocks keeps the cross-sectional ordering of the return
    features, which is the ranking signal.
    """

    price_mean: np.ndarray  # (N, 5)
    price_std: np.ndarray
    ret_mean: np.ndarray  # (5,)
    ret_std: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        out = np.empty_like(values)
        out[..., :N_PRICE] = (values[..., :N_PRICE] - self.price_mean) / self.price_std
        out[..., N_PRICE:] = (values[..., N_PRICE:] - self.ret_mean) / self.ret_std
        return out

    def transform(self, windows: list) -> list:
        return [replace(w, panel=replace(w.panel, values=self.apply(w.panel.values))) for w in windows]

    def as_arrays(self) -> dict:
        return {"norm.price_mean": self.price_mean, "norm.price_std": self.price_std,
                "norm.ret_mean": self.ret_mean, "norm.ret_std": self.ret_std}

    @classmethod
    def from_arrays(cls, arrays: dict) -> "Normalizer":
        return cls(arrays["norm.price_mean"], arrays["norm.price_std"],
                   arrays["norm.ret_mean"], arrays["norm.ret_std"])


def _safe_std(s: np.ndarray) -> np.ndarray:
    return np.where(s > 1e-12, s, 1.0)


def fit_normalizer(train_windows: list) -> Normalizer:
    if not train_windows:
        raise DataError("cannot fit normalization statistics on an empty training split")
    seen, rows = set(), []
    for w in train_windows:
        for k in range(w.panel.values.shape[0]):
            day = w.index + k
            if day not in seen:
                seen.add(day)
                rows.append(w.panel.values[k])
    x = np.stack(rows)  # (days, N, d_e)
    price = x[..., :N_PRICE]
    ret = x[..., N_PRICE:].reshape(-1, x.shape[-1] - N_PRICE)
    return Normalizer(price.mean(axis=0), _safe_std(price.std(axis=0)),
                      ret.mean(axis=0), _safe_std(ret.std(axis=0)))


@dataclass
class Dataset:
    tickers: list
    train: list
    val: list
    test: list
    normalizer: Normalizer

    @property
    def all_windows(self) -> list:
        return self.train + self.val + self.test


def prepare_dataset(bars: dict, tickers, w: int, ratios, normalizer: Normalizer | None = None,
                    price_mode: str = "relative") -> Dataset:
    feats = build_features(bars, tickers, price_mode)
    train, val, test = split(build_windows(feats, w), ratios)
    if normalizer is None:
        normalizer = fit_normalizer(train)
    return Dataset(list(tickers), normalizer.transform(train), normalizer.transform(val),
                   normalizer.transform(test), normalizer)
