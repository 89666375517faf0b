"""Hypergraph-enhanced transformer for skeleton-based emotion recognition."""

try:
    from ._h2oformer import *  # installed wheel layout
    from ._h2oformer import __doc__ as _native_doc
except ImportError:  # in-tree build: extension sits on PYTHONPATH directly
    from _h2oformer import *
    from _h2oformer import __doc__ as _native_doc

__all__ = [
    "Topology",
    "Model",
    "ValidationError",
    "NumericError",
    "hop_distances",
    "hyperedge_pool",
    "gather_relpos",
    "compute_metrics",
    "generate_synthetic",
    "reported_reference_results",
]
