"""Gated recurrent cell whose hidden state evolves by an ODE between days, plus
ODE-GRU and GRU comparison cells, an explicit Euler solver and the Gaussian
latent layer."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from stockode.errors import ConfigError, NumericError
from stockode.numerics import Parameter, Tensor, as_tensor, concat, log, no_grad, sigmoid, softplus, tanh
from stockode.numerics import init

SIGMA_FLOOR = 1e-6


@dataclass
class SolverConfig:
    substeps: int = 5
    gate_convention: str = "keep"  # "keep": (1-I) h'' + I h_prev ; "update": I h'' + (1-I) h_prev
    latent_mean: str = "h"  # sample z around h (default) or around mu

    def __post_init__(self):
        if self.substeps < 1:
            raise ConfigError(f"substeps must be >= 1, got {self.substeps}")
        if self.gate_convention not in ("keep", "update"):
            raise ConfigError(f"unknown gate_convention {self.gate_convention!r}")
        if self.latent_mean not in ("h", "mu"):
            raise ConfigError(f"unknown latent_mean {self.latent_mean!r}")


def gate_g(h, a) -> Tensor:
    """Attention-integrated input of the ODE function: h * sigmoid(a)."""
    h, a = as_tensor(h), as_tensor(a)
    if h.shape != a.shape:
        raise ValueError(f"gate_g shape mismatch: {h.shape} vs {a.shape}")
    return h * sigmoid(a)


@dataclass
class OdeFunction:
    """Three d->d dense layers with tanh between them, optionally preceded by
    the sigmoid attention gate a(h) = h W_a + b_a recomputed at every call."""

    layers: list  # [(W, b)] * 3
    W_a: Parameter | None = None
    b_a: Parameter | None = None

    @classmethod
    def create(cls, d: int, rng, prefix: str, gated: bool = True) -> "OdeFunction":
        layers = [(init.dense(f"{prefix}.mlp{i}.W", d, d, rng), init.zeros(f"{prefix}.mlp{i}.b", d))
                  for i in range(3)]
        if gated:
            return cls(layers, init.dense(f"{prefix}.W_a", d, d, rng), init.zeros(f"{prefix}.b_a", d))
        return cls(layers)

    @property
    def gated(self) -> bool:
        return self.W_a is not None

    def __call__(self, h: Tensor, t: float | None = None) -> Tensor:
        x = gate_g(h, h @ self.W_a + self.b_a) if self.gated else h
        (W1, b1), (W2, b2), (W3, b3) = self.layers
        x = tanh(x @ W1 + b1)
        x = tanh(x @ W2 + b2)
        return x @ W3 + b3

    def parameters(self) -> list:
        out = [p for wb in self.layers for p in wb]
        if self.gated:
            out += [self.W_a, self.b_a]
        return out


def ode_solve(f: Callable, h0, t0: float, t1: float, substeps: int, return_path: bool = False):
    """Explicit Euler with ``substeps`` equal steps: h <- h + dt * f(h, t).

    With ``return_path`` the list of the ``substeps`` post-step states is
    returned alongside the endpoint.
    """
    if not t1 > t0:
        raise ValueError(f"ode_solve requires t1 > t0, got interval ({t0}, {t1})")
    if substeps < 1:
        raise ValueError(f"substeps must be >= 1, got {substeps}")
    dt = (t1 - t0) / substeps
    h = as_tensor(h0)
    path = []
    for k in range(substeps):
        h = h + dt * f(h, t0 + k * dt)
        path.append(h)
    return (h, path) if return_path else h


def _check(stage: str, t: Tensor) -> None:
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite values at stage {stage!r}")


@dataclass
class LatentHead:
    """[mu, raw] = h W_z + b_z ; sigma = softplus(raw) + floor."""

    W_z: Parameter  # (d, 2d)
    b_z: Parameter

    @classmethod
    def create(cls, d: int, rng, prefix: str) -> "LatentHead":
        return cls(init.dense(f"{prefix}.W_z", d, 2 * d, rng), init.zeros(f"{prefix}.b_z", 2 * d))

    def __call__(self, h: Tensor):
        d = h.shape[-1]
        out = h @ self.W_z + self.b_z
        return out[..., :d], softplus(out[..., d:]) + SIGMA_FLOOR

    def parameters(self) -> list:
        return [self.W_z, self.b_z]


@dataclass
class GruWeights:
    W_x: Parameter  # (d_in, 3d) columns [reset | update | candidate]
    W_hh: Parameter  # (d, 3d)
    b_x: Parameter
    b_hh: Parameter

    @classmethod
    def create(cls, d_in: int, d: int, rng, prefix: str) -> "GruWeights":
        return cls(init.dense(f"{prefix}.W_x", d_in, 3 * d, rng), init.dense(f"{prefix}.W_hh", d, 3 * d, rng),
                   init.zeros(f"{prefix}.b_x", 3 * d), init.zeros(f"{prefix}.b_hh", 3 * d))

    def parameters(self) -> list:
        return [self.W_x, self.W_hh, self.b_x, self.b_hh]


def gru_cell(x, h, w: GruWeights) -> Tensor:
    d = h.shape[-1]
    gx = x @ w.W_x + w.b_x
    gh = h @ w.W_hh + w.b_hh
    r = sigmoid(gx[..., :d] + gh[..., :d])
    u = sigmoid(gx[..., d:2 * d] + gh[..., d:2 * d])
    n = tanh(gx[..., 2 * d:] + r * gh[..., 2 * d:])
    return (1.0 - u) * n + u * h


@dataclass
class StepRecord:
    """One observation step: pre-update state, ODE path and outputs."""

    t_prev: float
    t_cur: float
    h_prev: Tensor
    p: Tensor
    path: list  # Euler substep states; path[-1] is h'
    h: Tensor
    mu: Tensor
    sigma: Tensor
    z: Tensor

    @property
    def h_ode(self) -> Tensor:
        return self.path[-1] if self.path else self.h_prev


@dataclass
class NrodeState:
    h: Tensor
    z: Tensor
    mu: Tensor
    sigma: Tensor
    trajectory: list = field(default_factory=list)  # StepRecord per observation
    cell: object = None

    @property
    def zs(self) -> list:
        return [s.z for s in self.trajectory]


class _Cell:
    """Shared plumbing: ODE evolution, observation update, latent sampling."""

    kind = ""
    ode: OdeFunction | None = None

    def __init__(self, d: int, cfg: SolverConfig):
        self.d = d
        self.cfg = cfg

    def evolve(self, h_prev: Tensor, t_prev: float, t_cur: float) -> list:
        if self.ode is None:
            return []
        _, path = ode_solve(self.ode, h_prev, t_prev, t_cur, self.cfg.substeps, return_path=True)
        return path

    def update(self, p: Tensor, h_ode: Tensor, h_prev: Tensor) -> Tensor:
        raise NotImplementedError

    def latent(self, h: Tensor, eps: np.ndarray | None):
        mu, sigma = self.head(h)
        mean = h if self.cfg.latent_mean == "h" else mu
        z = mean if eps is None else mean + sigma * eps
        return mu, sigma, z

    def step(self, h_prev, p, t_prev: float, t_cur: float, eps=None) -> StepRecord:
        h_prev, p = as_tensor(h_prev), as_tensor(p)
        path = self.evolve(h_prev, t_prev, t_cur)
        if path:
            _check("ode_solve", path[-1])
        h = self.update(p, path[-1] if path else h_prev, h_prev)
        _check("hidden update", h)
        mu, sigma, z = self.latent(h, eps)
        _check("latent", z)
        return StepRecord(t_prev, t_cur, h_prev, p, path, h, mu, sigma, z)

    def unroll(self, P, eps_fn: Callable | None = None) -> NrodeState:
        P = as_tensor(P)
        n, w = P.shape[0], P.shape[1]
        if w < 1:
            raise ValueError("window must contain at least one step")
        h = as_tensor(np.zeros((n, self.d)))
        records = []
        for tau in range(w):
            eps = None if eps_fn is None else eps_fn((n, self.d))
            rec = self.step(h, P[:, tau, :], float(tau), float(tau + 1), eps)
            records.append(rec)
            h = rec.h
        last = records[-1]
        return NrodeState(last.h, last.z, last.mu, last.sigma, records, self)

    def parameters(self) -> list:
        raise NotImplementedError


class NrodeCell(_Cell):
    """Attention-gated ODE evolution between observations, learned update gate at them."""

    kind = "nrode"

    def __init__(self, d: int, cfg: SolverConfig, rng, prefix: str = "nrode", d_in: int | None = None):
        super().__init__(d, cfg)
        d_in = d if d_in is None else d_in
        self.W_v = init.dense(f"{prefix}.W_v", d_in, d, rng)
        self.b_v = init.zeros(f"{prefix}.b_v", d)
        self.ode = OdeFunction.create(d, rng, f"{prefix}.ode", gated=True)
        self.W_h = init.dense(f"{prefix}.W_h", 2 * d, d, rng)
        self.b_h = init.zeros(f"{prefix}.b_h", d)
        self.W_I = init.dense(f"{prefix}.W_I", d, d, rng)
        self.b_I = init.zeros(f"{prefix}.b_I", d)
        self.head = LatentHead.create(d, rng, prefix)

    def update(self, p, h_ode, h_prev):
        v = p @ self.W_v + self.b_v
        cand = concat([v, h_ode], axis=-1) @ self.W_h + self.b_h
        gate = sigmoid(v @ self.W_I + self.b_I)
        if self.cfg.gate_convention == "keep":
            return (1.0 - gate) * cand + gate * h_prev
        return gate * cand + (1.0 - gate) * h_prev

    def parameters(self) -> list:
        return ([self.W_v, self.b_v] + self.ode.parameters()
                + [self.W_h, self.b_h, self.W_I, self.b_I] + self.head.parameters())


class OdeGruCell(_Cell):
    """ODE-RNN with a GRU observation update and an ungated ODE function."""

    kind = "ode_gru"

    def __init__(self, d: int, cfg: SolverConfig, rng, prefix: str = "odegru", d_in: int | None = None):
        super().__init__(d, cfg)
        d_in = d if d_in is None else d_in
        self.ode = OdeFunction.create(d, rng, f"{prefix}.ode", gated=False)
        self.gru = GruWeights.create(d_in, d, rng, f"{prefix}.gru")
        self.head = LatentHead.create(d, rng, prefix)

    def update(self, p, h_ode, h_prev):
        return gru_cell(p, h_ode, self.gru)

    def parameters(self) -> list:
        return self.ode.parameters() + self.gru.parameters() + self.head.parameters()


class GruCell(_Cell):
    """Plain discrete GRU (no ODE evolution)."""

    kind = "gru"

    def __init__(self, d: int, cfg: SolverConfig, rng, prefix: str = "gru", d_in: int | None = None):
        super().__init__(d, cfg)
        d_in = d if d_in is None else d_in
        self.gru = GruWeights.create(d_in, d, rng, f"{prefix}.gru")
        self.head = LatentHead.create(d, rng, prefix)

    def update(self, p, h_ode, h_prev):
        return gru_cell(p, h_prev, self.gru)

    def parameters(self) -> list:
        return self.gru.parameters() + self.head.parameters()


def nrode_step(cell: NrodeCell, h_prev, p, t_prev: float, t_cur: float, eps=None) -> StepRecord:
    return cell.step(h_prev, p, t_prev, t_cur, eps)


def ode_gru_step(cell: OdeGruCell, h_prev, p, t_prev: float, t_cur: float, eps=None) -> StepRecord:
    return cell.step(h_prev, p, t_prev, t_cur, eps)


def nrode_unroll(cell: _Cell, P, rng=None) -> NrodeState:
    """Unroll over the window with unit-spaced times. ``rng=None`` means eps = 0."""
    return cell.unroll(P, None if rng is None else rng.normal)


def _interpolate(rec: StepRecord, ode: OdeFunction, substeps: int, fraction: float) -> np.ndarray:
    s = fraction * substeps
    j = int(round(s))
    if abs(s - j) < 1e-9:
        return (rec.h_prev if j == 0 else rec.path[j - 1]).data
    j = int(np.floor(s))
    base = rec.h_prev if j == 0 else rec.path[j - 1]
    dt = (rec.t_cur - rec.t_prev) / substeps
    # partial Euler step from the last grid point
    return base.data + (s - j) * dt * ode(as_tensor(base.data), rec.t_prev + j * dt).data


def query_trajectory(state: NrodeState, fractions, steps=None) -> np.ndarray:
    """Hidden ODE state at t_prev + fraction * (t_cur - t_prev) for each archived step.

    Returns an array of shape (len(steps), len(fractions), N, d).
    """
    cell = state.cell
    if cell is None or cell.ode is None:
        raise ConfigError("trajectory queries need an ODE-based cell")
    fractions = [float(q) for q in fractions]
    for q in fractions:
        if not 0.0 < q <= 1.0:
            raise ValueError(f"fraction {q} outside (0, 1]")
    steps = range(len(state.trajectory)) if steps is None else steps
    with no_grad():
        return np.stack([np.stack([_interpolate(state.trajectory[i], cell.ode, cell.cfg.substeps, q)
                                   for q in fractions]) for i in steps])


def kl_to_standard_normal(mu, sigma) -> Tensor:
    """KL(N(mu, sigma^2) || N(0, 1)) summed over the last axis, averaged over the rest."""
    mu, sigma = as_tensor(mu), as_tensor(sigma)
    if np.any(sigma.data <= 0):
        raise ValueError("kl_to_standard_normal requires sigma > 0")
    s2 = sigma * sigma
    per = 0.5 * (s2 + mu * mu - 1.0 - log(s2))
    if per.ndim == 0:
        return per
    total = per.sum(axis=-1)
    return total.mean() if total.ndim else total
