"""Numerical checks of isomorphism theorems for the vertex reinforced jump process.

Modules: ``graph`` (weighted graphs, matrix-tree), ``grassmann`` (batched
exterior algebra, Berezin integral), ``susy`` (H22 and free-field
expectations), ``environment`` (mixing measure ν), ``vrjp`` (process
simulators), ``loopsoup`` (quenched and reinforced soups), ``isomorph``
(the checks) and ``cli``.
"""

from .graph import AugmentedGraph, WeightedGraph, graph_from_json, pair, path3, single_vertex, tree_determinant, triangle
from .isomorph import THEOREMS, VerificationReport, run_check

__all__ = ["AugmentedGraph", "WeightedGraph", "graph_from_json", "pair", "path3", "single_vertex", "triangle",
           "tree_determinant", "THEOREMS", "VerificationReport", "run_check"]
__version__ = "0.1.0"
