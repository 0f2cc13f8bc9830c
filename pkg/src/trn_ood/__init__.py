"""Benchmark toolkit for OOD detection on text-rich networks."""

__version__ = "0.1.0"

from .graph import (TrnGraph, make_graph, degree_vector, sym_norm_adj,
                    row_norm_adj, cosine_similarity_matrix)
from .rng import Rng

__all__ = [
    "__version__",
    "TrnGraph",
    "make_graph",
    "degree_vector",
    "sym_norm_adj",
    "row_norm_adj",
    "cosine_similarity_matrix",
    "Rng",
]
