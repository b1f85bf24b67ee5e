from stockode.market.bars import BarSeries, StockUniverse, load_bars, load_universe, write_bars, write_universe
from stockode.market.features import (
    FEATURE_NAMES,
    MA_SPANS,
    CORPUS_SPLIT_DAYS,
    Dataset,
    MarketFeatures,
    Normalizer,
    PanelTensor,
    ReturnSeries,
    Window,
    build_features,
    build_windows,
    compute_returns,
    fit_normalizer,
    prepare_dataset,
    split,
)
from stockode.market.relations import Hyperedge, RelationSet, load_relations, parse_relations, write_relations
from stockode.market.synth import SynthMarket, synth_market

__all__ = [
    "FEATURE_NAMES", "MA_SPANS", "CORPUS_SPLIT_DAYS", "BarSeries", "Dataset", "Hyperedge",
    "MarketFeatures", "Normalizer", "PanelTensor", "RelationSet", "ReturnSeries", "StockUniverse",
    "SynthMarket", "Window", "build_features", "build_windows", "compute_returns", "fit_normalizer",
    "load_bars", "load_relations", "load_universe", "parse_relations", "prepare_dataset", "split",
    "synth_market", "write_bars", "write_relations", "write_universe",
]
