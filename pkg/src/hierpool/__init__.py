"""Hierarchical pooling of bag-of-words histograms for fast loop-closure and retrieval search."""
from .bow import IdfTable, NormState, PoolingMode, SparseHistogram, intersection, pool, tfidf_normalize
from .flat import FlatIndex, MatchResult
from .hier import HierIndex, LeafMeta, Pose, Topology, build_grouped, group_islands, make_index
from .vocab import ConfigError, VocabularyTree, assign_words, build_vocab, compute_idf, quantize

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "FlatIndex", "HierIndex", "IdfTable", "LeafMeta", "MatchResult", "NormState",
    "PoolingMode", "Pose", "SparseHistogram", "Topology", "VocabularyTree", "assign_words",
    "build_grouped", "build_vocab", "compute_idf", "group_islands", "intersection", "make_index",
    "pool", "quantize", "tfidf_normalize",
]
