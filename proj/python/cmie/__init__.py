"""Coexistence-guided out-of-context misinformation detection.

Thin Python surface over the C++ core: dataset and evidence IO, the JSON
repair ladder, prompt rendering, metric computation, and deterministic
replay of recorded batches.
"""

from importlib import resources as _resources

from ._core import (
    ClassMetrics,
    ConfigError,
    ConfusionCounts,
    DataError,
    EvidenceBundle,
    EvidenceStore,
    ExtractedJson,
    MetricsSummary,
    NewsItem,
    ParseFailure,
    ParsedCoexistence,
    ParsedScores,
    ParsedVerdict,
    PipelineResult,
    PromptCatalog,
    PromptError,
    PropagationReport,
    RefusalError,
    RenderedPrompt,
    ReplayMissError,
    ScoreEntry,
    StageTranscriptRef,
    TranscriptAudit,
    TransportError,
    audit_transcripts,
    compute_metrics,
    error_propagation_analysis,
    extract_json,
    load_dataset,
    normalize_entities,
    normalize_titles,
    parse_coexistence,
    parse_scores,
    parse_verdict,
    replay_batch,
    request_hash,
    write_dataset,
)

__all__ = [
    "ClassMetrics",
    "ConfigError",
    "ConfusionCounts",
    "DataError",
    "EvidenceBundle",
    "EvidenceStore",
    "ExtractedJson",
    "MetricsSummary",
    "NewsItem",
    "ParseFailure",
    "ParsedCoexistence",
    "ParsedScores",
    "ParsedVerdict",
    "PipelineResult",
    "PromptCatalog",
    "PromptError",
    "PropagationReport",
    "RefusalError",
    "RenderedPrompt",
    "ReplayMissError",
    "ScoreEntry",
    "StageTranscriptRef",
    "TranscriptAudit",
    "TransportError",
    "audit_transcripts",
    "catalog_dir",
    "compute_metrics",
    "error_propagation_analysis",
    "extract_json",
    "load_catalog",
    "load_dataset",
    "normalize_entities",
    "normalize_titles",
    "parse_coexistence",
    "parse_scores",
    "parse_verdict",
    "replay_batch",
    "request_hash",
    "write_dataset",
]

__version__ = "0.1.0"


def catalog_dir() -> str:
    """Path of the prompt catalog shipped inside the package."""
    return str(_resources.files(__package__) / "prompts")


def load_catalog() -> PromptCatalog:
    """The packaged prompt catalog, loaded and validated."""
    return PromptCatalog(catalog_dir())
