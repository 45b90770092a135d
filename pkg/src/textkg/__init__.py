"""textkg: joint knowledge-graph construction and schema induction from text,
with knowledge-retention and ontology-held-out schema evaluation harnesses."""

from .config import PipelineConfig, load_config
from .model import (
    ActionRecord,
    CanonicalRelation,
    Chunk,
    ContextEnrichedGraph,
    Entity,
    EntityClass,
    EntityClassGroup,
    IntrinsicProperty,
    Mention,
    Provenance,
    QualifierSet,
    RelationClass,
    RelationClassGroup,
    RelationInstance,
    Schema,
    validate_graph,
)

__version__ = "0.1.0"

__all__ = [
    "ActionRecord",
    "CanonicalRelation",
    "Chunk",
    "ContextEnrichedGraph",
    "Entity",
    "EntityClass",
    "EntityClassGroup",
    "IntrinsicProperty",
    "Mention",
    "PipelineConfig",
    "Provenance",
    "QualifierSet",
    "RelationClass",
    "RelationClassGroup",
    "RelationInstance",
    "Schema",
    "load_config",
    "validate_graph",
    "__version__",
]
