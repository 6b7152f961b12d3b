"""Multi-agent composed image retrieval: imagination, coarse similarity
filtering with reciprocal rank fusion, and question-based fine filtering."""

from .domain import (
    Caption,
    CaptionSource,
    ImageHandle,
    ImaginationResult,
    PipelineConfig,
    Query,
    validate_config,
)
from .embed_index import Catalog, build_catalog, load_catalog, save_catalog
from .pipeline import Switches, ablate, run_benchmark, run_query

__version__ = "0.1.0"

__all__ = [
    "Caption",
    "CaptionSource",
    "Catalog",
    "ImageHandle",
    "ImaginationResult",
    "PipelineConfig",
    "Query",
    "Switches",
    "ablate",
    "build_catalog",
    "load_catalog",
    "run_benchmark",
    "run_query",
    "save_catalog",
    "validate_config",
]
