"""StockODE stock ranking: ODE-driven recurrent latent dynamics over
cross-stock trend features, fused with hypergraph relation knowledge."""

__version__ = "0.1.0"
