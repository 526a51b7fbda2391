"""Topology datasets, compliance surrogates, and gated annealing for periodic lattices."""

from . import anneal, cli, data, features, fem, lattice, mlp

__all__ = ["anneal", "cli", "data", "features", "fem", "lattice", "mlp"]
