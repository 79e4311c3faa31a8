"""Sparse temporal networks with reciprocity: compound CRM base rates and mutually-exciting Hawkes pairs."""
__version__ = "0.1.0"

from .data import BinaryGraph, InteractionDataset, binary_projection, count_summary  # noqa: E402
from .hawkes_pair import KernelParams, NonStationaryError, PairHistory, PairRate  # noqa: E402
from .random_measures import CcrmHyper, GgpHyper  # noqa: E402

__all__ = [
    "__version__", "BinaryGraph", "InteractionDataset", "binary_projection", "count_summary",
    "KernelParams", "NonStationaryError", "PairHistory", "PairRate", "CcrmHyper", "GgpHyper",
]
