"""Hierarchical hypergraph convolution. Stocks are convolved over relation
hyperedges and hyperedges over a Jaccard-weighted meta-hypergraph; a bilinear
layer fuses the two levels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from stockode.errors import ConfigError
from stockode.numerics import Parameter, Tensor, as_tensor, tanh
from stockode.numerics import init


@dataclass
class Hypergraph:
    M: np.ndarray  # (N, E) incidence
    psi: np.ndarray  # (E,) hyperedge weights
    members: list  # frozenset of stock indices per hyperedge

    @property
    def D(self) -> np.ndarray:
        return self.M @ self.psi

    @property
    def O(self) -> np.ndarray:
        return self.M.sum(axis=0)

    @property
    def n_stocks(self) -> int:
        return self.M.shape[0]

    @property
    def n_edges(self) -> int:
        return self.M.shape[1]

    def propagation(self) -> np.ndarray:
        """D^-1 M Psi O^-1 M^T with zero rows for isolated stocks."""
        D = self.D
        d_inv = np.divide(1.0, D, out=np.zeros_like(D), where=D > 0)
        return (d_inv[:, None] * self.M * self.psi[None, :] / self.O[None, :]) @ self.M.T

    def edge_means(self) -> np.ndarray:
        """O^-1 M^T, averaging member-stock rows into hyperedge rows."""
        return self.M.T / self.O[:, None]

    def permuted(self, perm) -> "Hypergraph":
        """Relabel stocks: new stock k is old stock perm[k]."""
        inv = np.argsort(perm)
        return Hypergraph(self.M[perm], self.psi.copy(),
                          [frozenset(int(inv[i]) for i in m) for m in self.members])


def build_hypergraph(relations, universe) -> Hypergraph:
    edges = relations.hyperedges if hasattr(relations, "hyperedges") else relations
    if not edges:
        raise ConfigError("relation set is empty; a hypergraph needs at least one hyperedge")
    M = np.zeros((len(universe), len(edges)))
    members = []
    for j, e in enumerate(edges):
        idx = frozenset(universe.index[t] for t in e.members)
        if len(idx) < 2:
            raise ConfigError(f"hyperedge {j} has fewer than 2 members")
        M[list(idx), j] = 1.0
        members.append(idx)
    return Hypergraph(M, np.ones(len(edges)), members)


def hypergraph_from_members(members, n_stocks: int) -> Hypergraph:
    M = np.zeros((n_stocks, len(members)))
    for j, m in enumerate(members):
        M[list(m), j] = 1.0
    return Hypergraph(M, np.ones(len(members)), [frozenset(m) for m in members])


def hyperconv(U, g: Hypergraph, W) -> Tensor:
    return as_tensor(g.propagation()) @ (as_tensor(U) @ W)


@dataclass
class MetaHypergraph:
    omega: np.ndarray  # (E, E) Jaccard weights, zero diagonal

    @property
    def omega_hat(self) -> np.ndarray:
        return self.omega + np.eye(self.omega.shape[0])

    @property
    def D_hat(self) -> np.ndarray:
        return self.omega_hat.sum(axis=1)

    def propagation(self) -> np.ndarray:
        return self.omega_hat / self.D_hat[:, None]


def build_meta(g: Hypergraph) -> MetaHypergraph:
    n = g.n_edges
    if n < 1:
        raise ConfigError("meta-hypergraph needs at least one hyperedge")
    M = g.M
    inter = M.T @ M
    union = g.O[:, None] + g.O[None, :] - inter
    omega = np.where(inter > 0, inter / union, 0.0)
    np.fill_diagonal(omega, 0.0)
    return MetaHypergraph(omega)


def metaconv(B, m: MetaHypergraph, W) -> Tensor:
    return as_tensor(m.propagation()) @ (as_tensor(B) @ W)


def fuse(U, B, W_F) -> Tensor:
    """F = U B^T W_F."""
    return (as_tensor(U) @ as_tensor(B).T) @ W_F


@dataclass
class DomainKnowledge:
    U: Tensor  # (N, d')
    B: Tensor  # (E, d')
    F: Tensor  # (N, d)


@dataclass
class HhcnWeights:
    W_in: Parameter  # (d, d') projection of stock features
    W_U: list
    W_B: list
    W_F: Parameter  # (E, d)

    @classmethod
    def create(cls, d: int, d_prime: int, n_edges: int, n_layers: int, rng, prefix: str = "hhcn"):
        return cls(init.dense(f"{prefix}.W_in", d, d_prime, rng),
                   [init.dense(f"{prefix}.W_U{l}", d_prime, d_prime, rng) for l in range(n_layers)],
                   [init.dense(f"{prefix}.W_B{l}", d_prime, d_prime, rng) for l in range(n_layers)],
                   init.dense(f"{prefix}.W_F", n_edges, d, rng))

    def parameters(self, inter_domain: bool = True) -> list:
        return [self.W_in] + self.W_U + (self.W_B if inter_domain else []) + [self.W_F]


def hhcn_forward(stock_features, g: Hypergraph, meta: MetaHypergraph, weights: HhcnWeights,
                 inter_domain: bool = True) -> DomainKnowledge:
    """Stacked hyperconv (tanh between layers), edge-mean initialized metaconv
    stack, then bilinear fusion. ``inter_domain=False`` skips the metaconv stack."""
    if not weights.W_U:
        raise ConfigError("hhcn needs at least one layer")
    U0 = as_tensor(stock_features) @ weights.W_in
    U = U0
    for l, W in enumerate(weights.W_U):
        if l:
            U = tanh(U)
        U = hyperconv(U, g, W)
    B = as_tensor(g.edge_means()) @ U0
    if inter_domain:
        for l, W in enumerate(weights.W_B):
            if l:
                B = tanh(B)
            B = metaconv(B, meta, W)
    return DomainKnowledge(U, B, fuse(U, B, weights.W_F))
