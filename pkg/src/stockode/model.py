"""End-to-end StockODE: trend correlation -> recurrent latent dynamics ->
hypergraph knowledge -> fused ranking head, plus the multi-task loss."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from stockode.errors import ConfigError
from stockode.hhcn import Hypergraph, HhcnWeights, build_meta, hhcn_forward
from stockode.market.features import FEATURE_NAMES, PanelTensor, Window
from stockode.nrode import (
    GruCell,
    NrodeCell,
    NrodeState,
    OdeFunction,
    OdeGruCell,
    SolverConfig,
    kl_to_standard_normal,
    ode_solve,
)
from stockode.numerics import Rng, Tensor, as_tensor, concat, leaky_relu, relu, stack, swapaxes
from stockode.numerics import init
from stockode.trend import TrendWeights, trend_forward

VARIANTS = ("full", "B", "I", "H", "A", "ode_gru", "latent_ode")
# variant -> (cross-stock interactions, encoder kind, hypergraph mode)
_LAYOUT = {
    "full": (True, "nrode", "meta"),
    "I": (False, "nrode", "meta"),
    "H": (True, "nrode", "intra"),
    "A": (True, "gru", "meta"),
    "B": (True, "gru", "none"),
    "ode_gru": (True, "ode_gru", "meta"),
    "latent_ode": (True, "latent_ode", "meta"),
}


@dataclass
class ModelConfig:
    d: int = 64
    d_prime: int = 32
    d_e: int = len(FEATURE_NAMES)
    w: int = 5
    K: int = 5
    beta: float = 0.1
    L: int = 1
    attention_layers: int = 1
    variant: str = "full"
    gate_convention: str = "keep"
    latent_mean: str = "h"
    seed: int = 0
    lr: float = 0.001
    epochs: int = 50
    pair_sampling: int = 65536
    exact_pairs_max_n: int = 256
    leaky_slope: float = 0.01

    def __post_init__(self):
        for name in ("d", "d_prime", "d_e", "w", "K", "L", "attention_layers", "pair_sampling"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        SolverConfig(self.K, self.gate_convention, self.latent_mean)

    @property
    def solver(self) -> SolverConfig:
        return SolverConfig(self.K, self.gate_convention, self.latent_mean)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def ranking_order(r_hat) -> np.ndarray:
    """Indices by descending score; ties keep ascending stock index."""
    return np.argsort(-np.asarray(r_hat, dtype=np.float64), kind="stable")


@dataclass
class RankingPrediction:
    r_hat: np.ndarray
    order: np.ndarray

    @classmethod
    def from_scores(cls, r_hat) -> "RankingPrediction":
        r = np.array(r_hat, dtype=np.float64).reshape(-1)
        return cls(r, ranking_order(r))


@dataclass
class ForwardOutput:
    prediction: RankingPrediction
    state: NrodeState
    diagnostics: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.prediction, self.state, self.diagnostics))

    @property
    def r_hat(self) -> Tensor:
        return self.diagnostics["r_hat"]


class StockODE:
    """Parameter container and forward pass for one universe/hypergraph."""

    def __init__(self, cfg: ModelConfig, graph: Hypergraph | None):
        self.cfg = cfg
        self.interactions, self.encoder_kind, self.graph_mode = _LAYOUT[cfg.variant]
        if self.graph_mode != "none" and graph is None:
            raise ConfigError(f"variant {cfg.variant!r} needs a hypergraph")
        self.graph = graph
        self.meta = build_meta(graph) if graph is not None and self.graph_mode != "none" else None
        d, solver = cfg.d, cfg.solver
        rng = Rng(cfg.seed).spawn("init")

        self.trend = TrendWeights.create(cfg.d_e, d, cfg.attention_layers, rng.spawn("trend"))
        erng = rng.spawn("encoder")
        if self.encoder_kind == "nrode":
            self.encoder = NrodeCell(d, solver, erng, "enc")
        elif self.encoder_kind == "ode_gru":
            self.encoder = OdeGruCell(d, solver, erng, "enc")
        else:
            self.encoder = GruCell(d, solver, erng, "enc")

        grng = rng.spawn("generative")
        if self.encoder_kind == "latent_ode":
            self.gen_ode = OdeFunction.create(d, grng, "gen.ode", gated=False)
            self.generator = None
        else:
            self.gen_ode = None
            self.generator = NrodeCell(d, solver, grng, "gen")
        self.W_dec = init.dense("gen.W_dec", d, d, grng)
        self.b_dec = init.zeros("gen.b_dec", d)

        n_blocks = 2
        if self.graph_mode != "none":
            self.hhcn = HhcnWeights.create(d, cfg.d_prime, graph.n_edges, cfg.L, rng.spawn("hhcn"))
            n_blocks = 3
        else:
            self.hhcn = None
        hrng = rng.spawn("head")
        self.W_r = init.dense("head.W_r", n_blocks * d, d, hrng)
        self.b_r = init.zeros("head.b_r", d)
        self.W_out = init.dense("head.W_out", d, 1, hrng)
        self.b_out = init.zeros("head.b_out", 1)

    # -- parameters -------------------------------------------------------
    def parameters(self) -> list:
        ps = list(self.trend.parameters())
        ps += self.encoder.parameters()
        if self.generator is not None:
            ps += [p for p in self.generator.parameters() if p not in self.generator.head.parameters()]
        else:
            ps += self.gen_ode.parameters()
        ps += [self.W_dec, self.b_dec]
        if self.hhcn is not None:
            ps += self.hhcn.parameters(inter_domain=self.graph_mode == "meta")
        ps += [self.W_r, self.b_r, self.W_out, self.b_out]
        return ps

    def named_parameters(self) -> dict:
        return {p.name: p for p in self.parameters()}

    def state_dict(self) -> dict:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state_dict(self, arrays: dict) -> None:
        params = self.named_parameters()
        missing = set(params) - set(arrays)
        if missing:
            raise ConfigError(f"checkpoint lacks parameters: {sorted(missing)}")
        for name, p in params.items():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != p.data.shape:
                raise ConfigError(f"parameter {name}: checkpoint shape {value.shape} != model shape {p.data.shape}")
            p.data[...] = value

    # -- forward ----------------------------------------------------------
    def head(self, p_T, z_T, F) -> Tensor:
        blocks = [p_T, z_T] + ([F] if F is not None else [])
        hidden = leaky_relu(concat(blocks, axis=-1) @ self.W_r + self.b_r, self.cfg.leaky_slope)
        out = hidden @ self.W_out + self.b_out
        return out.reshape(out.shape[:-1])

    def _check_panel(self, panel: PanelTensor) -> None:
        w, n, de = panel.values.shape
        if de != self.cfg.d_e:
            raise ConfigError(f"panel has {de} features, model expects d_e={self.cfg.d_e}")
        if self.graph is not None and n != self.graph.n_stocks:
            raise ConfigError(f"panel has {n} stocks, hypergraph has {self.graph.n_stocks}")
        if panel.returns.shape != (w, n):
            raise ConfigError(f"returns shape {panel.returns.shape} does not match panel {(w, n)}")

    def forward(self, window, rng: Rng | None = None, compute_elbo: bool = True) -> ForwardOutput:
        """``rng=None`` runs the deterministic path (eps = 0)."""
        panel = window.panel if isinstance(window, Window) else window
        self._check_panel(panel)
        X = as_tensor(panel.values)
        eps_fn = None if rng is None else rng.normal
        trend = trend_forward(X, panel.returns, self.trend, interactions=self.interactions)
        P = trend.P
        diag = {"omega": trend.omega}

        if self.encoder_kind == "latent_ode":
            state, zs = self._latent_ode_encode(P, eps_fn)
        else:
            state = self.encoder.unroll(P, eps_fn)
            zs = state.zs

        F = None
        if self.hhcn is not None:
            knowledge = hhcn_forward(P[:, -1, :], self.graph, self.meta, self.hhcn,
                                     inter_domain=self.graph_mode == "meta")
            F = knowledge.F
            diag["knowledge"] = knowledge
        r_hat = self.head(P[:, -1, :], state.z, F)
        diag["r_hat"] = r_hat
        diag["F"] = F
        diag["P"] = P

        if compute_elbo:
            recon, kl = self._elbo_terms(P, state, zs)
            diag["recon"], diag["kl"] = recon, kl
            diag["elbo"] = recon - kl
        return ForwardOutput(RankingPrediction.from_scores(r_hat.data), state, diag)

    def _latent_ode_encode(self, P, eps_fn):
        enc = self.encoder.unroll(P[:, ::-1, :], None)
        mu0, sigma0 = self.encoder.head(enc.h)
        mean = enc.h if self.cfg.latent_mean == "h" else mu0
        z = mean if eps_fn is None else mean + sigma0 * eps_fn(mu0.shape)
        zs = [z]
        for tau in range(1, P.shape[1]):
            z = ode_solve(self.gen_ode, z, float(tau - 1), float(tau), self.cfg.K)
            zs.append(z)
        state = NrodeState(enc.h, zs[-1], mu0, sigma0, enc.trajectory, self.encoder)
        return state, zs

    def _elbo_terms(self, P: Tensor, state: NrodeState, zs: list):
        target = swapaxes(P, 0, 1)  # (w, N, d)
        if self.generator is not None:
            gen = self.generator.unroll(stack(zs, axis=1), None)
            hs = stack([rec.h for rec in gen.trajectory], axis=0)  # (w, N, d)
            kl = kl_to_standard_normal(stack([r.mu for r in state.trajectory], axis=0),
                                       stack([r.sigma for r in state.trajectory], axis=0))
        else:
            hs = stack(zs, axis=0)
            kl = kl_to_standard_normal(state.mu, state.sigma)
        err = hs @ self.W_dec + self.b_dec - target
        recon = -0.5 * (err * err).sum(axis=-1).mean()
        return recon, kl

    def decode_hidden(self, h_ode, record, p_T, F) -> Tensor:
        """Prediction obtained by treating ``h_ode`` as the ODE state at the end of
        ``record``'s interval (deterministic latent)."""
        h = self.encoder.update(record.p, as_tensor(h_ode), record.h_prev)
        mu, sigma, z = self.encoder.latent(h, None)
        return self.head(p_T, z, F)

    def predict(self, window) -> RankingPrediction:
        from stockode.numerics import no_grad

        with no_grad():
            return self.forward(window, None, compute_elbo=False).prediction


def pairwise_hinge(r_hat: Tensor, r_true: np.ndarray, max_exact: int = 256, n_pairs: int = 65536,
                   rng: Rng | None = None) -> Tensor:
    """Sum over ordered pairs of max(0, -(rh_i - rh_j)(r_i - r_j)).

    Above ``max_exact`` stocks the sum is estimated from ``n_pairs`` uniformly
    sampled ordered pairs, rescaled to the full N^2 count.
    """
    r_true = np.asarray(r_true, dtype=np.float64)
    n = r_true.shape[0]
    if n <= max_exact:
        dh = r_hat.reshape(n, 1) - r_hat.reshape(1, n)
        dt = r_true[:, None] - r_true[None, :]
        return relu(-(dh * dt)).sum()
    if rng is None:
        raise ConfigError("pair sampling above the exact threshold needs an rng")
    i = rng.integers(0, n, n_pairs)
    j = rng.integers(0, n, n_pairs)
    dh = r_hat[i] - r_hat[j]
    dt = r_true[i] - r_true[j]
    return relu(-(dh * dt)).sum() * (n * n / n_pairs)


def loss(r_hat: Tensor, r_true, elbo: Tensor | None, cfg: ModelConfig, rng: Rng | None = None) -> Tensor:
    """||r_hat - r||^2 - beta * ELBO + pairwise ranking hinge."""
    r_hat = as_tensor(r_hat)
    r_true = np.asarray(r_true, dtype=np.float64)
    if r_hat.shape != r_true.shape:
        raise ConfigError(f"prediction shape {r_hat.shape} != target shape {r_true.shape}")
    err = r_hat - r_true
    total = (err * err).sum() + pairwise_hinge(r_hat, r_true, cfg.exact_pairs_max_n, cfg.pair_sampling, rng)
    if elbo is not None and cfg.beta:
        total = total - cfg.beta * elbo
    return total
