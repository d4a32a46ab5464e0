"""Confidence-gated long-video question answering over on-disk frame archives."""

from .archive import ArchiveReader, decode_window, open_archive, preload_all, read_embedding_sidecar, write_archive
from .evidence import (
    Embedding,
    EvidenceSet,
    FrameRef,
    GenerationResult,
    KeyframeSet,
    PipelineConfig,
    Query,
    RetrievedWindow,
    normalize_embedding,
)
from .pipeline import run_dataset, run_pipeline

__version__ = "0.1.0"
