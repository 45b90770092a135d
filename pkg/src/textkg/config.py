"""Declarative pipeline configuration with published defaults pre-filled."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

DEFAULT_ENTITY_WEIGHTS = {
    "name": 0.35,
    "description": 0.30,
    "type_hint": 0.10,
    "intrinsic": 0.10,
    "evidence": 0.15,
}

DEFAULT_CLASS_WEIGHTS = {
    "label": 0.40,
    "description": 0.30,
    "evidence": 0.15,
    "members": 0.15,
}

DEFAULT_RELATION_WEIGHTS = {
    "raw_label": 0.30,
    "description": 0.25,
    "endpoint_context": 0.25,
    "hints": 0.10,
    "qualifiers": 0.10,
}

DEFAULT_ALIGNMENT_ANCHOR_WEIGHTS = {
    "label": 0.50,
    "signature": 0.25,
    "examples": 0.25,
}

DEFAULT_ALIGNMENT_ELEMENT_WEIGHTS = {
    "label": 0.50,
    "variants": 0.20,
    "context": 0.30,
}


@dataclass
class ChunkingConfig:
    min_tokens: int = 100
    max_tokens: int = 200
    context_chunks: int = 4


@dataclass
class ProviderConfig:
    chat: str = "stub"                 # "stub" | "live"
    embedding: str = "stub"
    endpoint: str = "http://localhost:8000/v1"
    chat_model: str = "default"
    embedding_model: str = "default-embed"
    api_key_env: str = "TEXTKG_API_KEY"
    embedding_dim: int = 64
    batch_size: int = 32
    recognition_budget: int = 8000
    resolution_budget: int = 16000
    judge_budget: int = 16000
    verifier_budget: int = 1400
    stub_merge_similarity: float = 0.95
    request_log: Optional[str] = None
    max_retries: int = 2


@dataclass
class ClusteringConfig:
    method: str = "hdbscan"            # "hdbscan" | "threshold"
    min_cluster_size: int = 2
    max_cluster_size: int = 40
    batch_k: int = 10
    threshold: float = 0.45            # cosine distance, threshold mode only


@dataclass
class EntityResolutionConfig:
    merge_threshold: int = 0           # stop once merges in a round fall to this
    max_rounds: int = 5


@dataclass
class ClassResolutionConfig:
    edit_threshold: int = 0
    patience: int = 2
    max_runs: int = 5
    recognition_rounds: int = 2


@dataclass
class RelationResolutionConfig:
    edit_threshold: int = 0
    patience: int = 2
    max_runs: int = 5


@dataclass
class RetentionConfig:
    top_k: int = 8
    hops: int = 2
    node_cap: int = 250
    edge_cap: int = 300
    count_unsupported_in_avg_rank: bool = False


@dataclass
class AlignmentConfig:
    top_k: int = 5
    threshold: float = 0.20
    max_assign: int = 3
    audit_confidence: float = 0.88


@dataclass
class PipelineConfig:
    chunking: ChunkingConfig = field(default_factory=ChunkingConfig)
    providers: ProviderConfig = field(default_factory=ProviderConfig)
    clustering: ClusteringConfig = field(default_factory=ClusteringConfig)
    entity_resolution: EntityResolutionConfig = field(default_factory=EntityResolutionConfig)
    class_resolution: ClassResolutionConfig = field(default_factory=ClassResolutionConfig)
    relation_resolution: RelationResolutionConfig = field(default_factory=RelationResolutionConfig)
    retention: RetentionConfig = field(default_factory=RetentionConfig)
    alignment: AlignmentConfig = field(default_factory=AlignmentConfig)
    entity_weights: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_ENTITY_WEIGHTS))
    class_weights: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_CLASS_WEIGHTS))
    relation_weights: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_RELATION_WEIGHTS))
    alignment_anchor_weights: dict[str, float] = field(
        default_factory=lambda: dict(DEFAULT_ALIGNMENT_ANCHOR_WEIGHTS))
    alignment_element_weights: dict[str, float] = field(
        default_factory=lambda: dict(DEFAULT_ALIGNMENT_ELEMENT_WEIGHTS))
    textualizer: str = "identity"      # "identity" | "stub" | "command:<argv>"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PipelineConfig":
        cfg = cls()
        for f in dataclasses.fields(cls):
            if f.name not in data:
                continue
            value = data[f.name]
            current = getattr(cfg, f.name)
            if dataclasses.is_dataclass(current) and isinstance(value, Mapping):
                merged = dataclasses.replace(current, **value)
                setattr(cfg, f.name, merged)
            elif isinstance(current, dict) and isinstance(value, Mapping):
                setattr(cfg, f.name, dict(value))
            else:
                setattr(cfg, f.name, value)
        return cfg


def load_config(path: str | Path | None) -> PipelineConfig:
    """Load a JSON or YAML config file; None yields all defaults."""
    if path is None:
        return PipelineConfig()
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text) or {}
    else:
        data = json.loads(text)
    return PipelineConfig.from_dict(data)


def dump_config(config: PipelineConfig) -> str:
    return json.dumps(config.to_dict(), sort_keys=True, indent=2) + "\n"
