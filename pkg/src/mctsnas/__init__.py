"""Training-free Monte-Carlo architecture search for range-Doppler segmentation."""

from .arch import ArchState, ArchitectureSpec, MacroConfig, build_spec, count_params
from .searchcore import Evaluator, SearchConfig, SearchResult, run_search

__all__ = [
    "ArchState",
    "ArchitectureSpec",
    "MacroConfig",
    "build_spec",
    "count_params",
    "Evaluator",
    "SearchConfig",
    "SearchResult",
    "run_search",
]
