"""Sparse graph limits toolkit: motif counts, step kernels, cut norms and regularity partitions."""

__version__ = "0.1.0"
