"""Multilevel graph partitioning with actor-critic refinement, vertex separators and nested dissection."""
from .coarsen import CoarseLevel, coarsening_chain, heavy_edge_matching
from .dataio import build_training_dataset, generate_delaunay, read_matrix_market, write_matrix_market
from .edge_sep import RefineConfig, edge_separator, greedy_fallback_partition, multilevel_greedy_bisection
from .errors import DrlPartError
from .graph import Bisection, Graph, Separator3, normalized_cut, normalized_separator
from .ordering import Permutation, SparsePattern, minimum_degree, nested_dissection, symbolic_fill
from .vertex_sep import edge_to_vertex_separator, vertex_separator

__all__ = [
    "Bisection", "CoarseLevel", "DrlPartError", "Graph", "Permutation", "RefineConfig", "Separator3",
    "SparsePattern", "build_training_dataset", "coarsening_chain", "edge_separator", "edge_to_vertex_separator",
    "generate_delaunay", "greedy_fallback_partition", "heavy_edge_matching", "minimum_degree",
    "multilevel_greedy_bisection", "nested_dissection", "normalized_cut", "normalized_separator",
    "read_matrix_market", "symbolic_fill", "vertex_separator", "write_matrix_market",
]
