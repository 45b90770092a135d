"""Core data model: chunks, mentions, entities, relations, schema, graph.

All types are immutable value objects. Collections are stored as sorted
tuples so that serialization is byte-stable and equality is structural.
Every record type round-trips through ``to_record`` / ``from_record``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping, Optional, Sequence

ELEMENT_KINDS = ("narrative", "figure", "table", "equation", "other")

HINT_TYPES = (
    "IDENTITY",
    "COMPOSITION",
    "CAUSALITY",
    "TEMPORALITY",
    "SPATIALITY",
    "ROLE",
    "PURPOSE",
    "DEPENDENCY",
    "COUPLING",
    "TRANSFORMATION",
    "COMPARISON",
    "INFORMATION",
    "ASSOCIATION",
)

QUALIFIER_KEYS = (
    "TemporalQualifier",
    "SpatialQualifier",
    "OperationalConstraint",
    "ConditionExpression",
    "UncertaintyQualifier",
    "CausalHint",
    "LogicalMarker",
    "OtherQualifier",
)

VALUE_KINDS = ("number", "string", "quantity", "identifier", "date", "other")

STAGES = ("EntRes", "EntClsRes", "RelRes")

ACTION_VOCABULARY = {
    "EntRes": ("MergeEntities", "ModifyEntity", "KeepEntity"),
    "EntClsRes": (
        "merge_classes",
        "split_class",
        "create_class",
        "reassign_entities",
        "modify_class",
    ),
    "RelRes": (
        "set_canonical_rel",
        "set_rel_cls",
        "set_rel_cls_group",
        "modify_rel_schema",
        "add_rel_remark",
        "merge_relations",
    ),
}


class ModelError(ValueError):
    """Raised when a core type is constructed with invalid field values."""


def _check(condition: bool, message: str) -> None:
    if not condition:
        raise ModelError(message)


def _confidence(value: float) -> float:
    value = float(value)
    _check(0.0 <= value <= 1.0, f"confidence {value} outside [0, 1]")
    return value


def _sorted_unique(items: Iterable[str]) -> tuple[str, ...]:
    return tuple(sorted(set(items)))


@dataclass(frozen=True)
class Provenance:
    """Pointer back to the source region a text segment came from."""

    source: str
    kind: str = "narrative"
    page: Optional[str] = None
    region: Optional[str] = None

    def __post_init__(self) -> None:
        _check(self.kind in ELEMENT_KINDS, f"unknown element kind {self.kind!r}")

    def to_record(self) -> dict:
        return {
            "source": self.source,
            "kind": self.kind,
            "page": self.page,
            "region": self.region,
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "Provenance":
        return cls(
            source=rec["source"],
            kind=rec.get("kind", "narrative"),
            page=rec.get("page"),
            region=rec.get("region"),
        )


@dataclass(frozen=True)
class Chunk:
    """Sentence-preserving text segment; the unit of extraction locality."""

    id: str
    doc_id: str
    text: str
    token_count: int
    provenance: tuple[Provenance, ...]

    def __post_init__(self) -> None:
        _check(bool(self.text), f"chunk {self.id}: empty text")
        _check(self.token_count > 0, f"chunk {self.id}: token_count must be > 0")

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "doc_id": self.doc_id,
            "text": self.text,
            "token_count": self.token_count,
            "provenance": [p.to_record() for p in self.provenance],
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "Chunk":
        return cls(
            id=rec["id"],
            doc_id=rec["doc_id"],
            text=rec["text"],
            token_count=int(rec["token_count"]),
            provenance=tuple(Provenance.from_record(p) for p in rec["provenance"]),
        )


@dataclass(frozen=True)
class IntrinsicProperty:
    """Typed key-value attribute inherent to an entity (node annotation)."""

    key: str
    value: str
    value_kind: str = "string"
    unit: Optional[str] = None
    evidence: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        _check(bool(self.key), "intrinsic property key must be non-empty")
        _check(self.value_kind in VALUE_KINDS, f"unknown value_kind {self.value_kind!r}")

    def to_record(self) -> dict:
        return {
            "key": self.key,
            "value": self.value,
            "value_kind": self.value_kind,
            "unit": self.unit,
            "evidence": list(self.evidence),
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "IntrinsicProperty":
        return cls(
            key=rec["key"],
            value=rec["value"],
            value_kind=rec.get("value_kind", "string"),
            unit=rec.get("unit"),
            evidence=tuple(rec.get("evidence", ())),
        )


@dataclass(frozen=True)
class Mention:
    """Span-level reference to an object or concept inside one chunk."""

    id: str
    chunk_id: str
    span: tuple[int, int]
    name: str
    description: str = ""
    type_hint: Optional[str] = None
    confidence: float = 1.0
    evidence: tuple[str, ...] = ()
    intrinsic_candidates: tuple[IntrinsicProperty, ...] = ()

    def __post_init__(self) -> None:
        start, end = self.span
        _check(0 <= start < end, f"mention {self.id}: invalid span {self.span}")
        object.__setattr__(self, "confidence", _confidence(self.confidence))

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "chunk_id": self.chunk_id,
            "span": list(self.span),
            "name": self.name,
            "description": self.description,
            "type_hint": self.type_hint,
            "confidence": self.confidence,
            "evidence": list(self.evidence),
            "intrinsic_candidates": [p.to_record() for p in self.intrinsic_candidates],
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "Mention":
        return cls(
            id=rec["id"],
            chunk_id=rec["chunk_id"],
            span=(int(rec["span"][0]), int(rec["span"][1])),
            name=rec["name"],
            description=rec.get("description", ""),
            type_hint=rec.get("type_hint"),
            confidence=rec.get("confidence", 1.0),
            evidence=tuple(rec.get("evidence", ())),
            intrinsic_candidates=tuple(
                IntrinsicProperty.from_record(p)
                for p in rec.get("intrinsic_candidates", ())
            ),
        )


@dataclass(frozen=True)
class Entity:
    """Canonical graph node consolidating one or more co-referent mentions."""

    id: str
    canonical_name: str
    description: str = ""
    type_hint: Optional[str] = None
    intrinsic: tuple[IntrinsicProperty, ...] = ()
    member_mentions: tuple[str, ...] = ()
    confidence: float = 1.0
    provenance_chunks: tuple[str, ...] = ()
    class_id: Optional[str] = None
    remarks: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        _check(len(self.member_mentions) > 0, f"entity {self.id}: no member mentions")
        object.__setattr__(self, "member_mentions", _sorted_unique(self.member_mentions))
        object.__setattr__(self, "provenance_chunks", _sorted_unique(self.provenance_chunks))
        object.__setattr__(self, "confidence", _confidence(self.confidence))

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "canonical_name": self.canonical_name,
            "description": self.description,
            "type_hint": self.type_hint,
            "intrinsic": [p.to_record() for p in self.intrinsic],
            "member_mentions": list(self.member_mentions),
            "confidence": self.confidence,
            "provenance_chunks": list(self.provenance_chunks),
            "class_id": self.class_id,
            "remarks": list(self.remarks),
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "Entity":
        return cls(
            id=rec["id"],
            canonical_name=rec["canonical_name"],
            description=rec.get("description", ""),
            type_hint=rec.get("type_hint"),
            intrinsic=tuple(IntrinsicProperty.from_record(p) for p in rec.get("intrinsic", ())),
            member_mentions=tuple(rec["member_mentions"]),
            confidence=rec.get("confidence", 1.0),
            provenance_chunks=tuple(rec.get("provenance_chunks", ())),
            class_id=rec.get("class_id"),
            remarks=tuple(rec.get("remarks", ())),
        )


@dataclass(frozen=True)
class QualifierSet:
    """Exactly eight nullable context fields attached to a relation instance.

    The serialized form always carries all eight keys; absent values are
    explicit nulls.
    """

    TemporalQualifier: Optional[str] = None
    SpatialQualifier: Optional[str] = None
    OperationalConstraint: Optional[str] = None
    ConditionExpression: Optional[str] = None
    UncertaintyQualifier: Optional[str] = None
    CausalHint: Optional[str] = None
    LogicalMarker: Optional[str] = None
    OtherQualifier: Optional[str] = None

    def to_record(self) -> dict:
        return {key: getattr(self, key) for key in QUALIFIER_KEYS}

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "QualifierSet":
        return cls(**{key: rec.get(key) for key in QUALIFIER_KEYS})

    def populated(self) -> dict[str, str]:
        """Non-null fields as a plain dict, in canonical key order."""
        return {k: v for k in QUALIFIER_KEYS if (v := getattr(self, k)) is not None}

    def is_subset_of(self, other: "QualifierSet") -> bool:
        """True when every populated field here matches the same field there."""
        mine, theirs = self.populated(), other.populated()
        return all(k in theirs and theirs[k] == v for k, v in mine.items())

    def conflicting_keys(self, other: "QualifierSet") -> tuple[str, ...]:
        """Keys populated on both sides with different trimmed values."""
        mine, theirs = self.populated(), other.populated()
        return tuple(
            k for k in QUALIFIER_KEYS
            if k in mine and k in theirs and mine[k].strip() != theirs[k].strip()
        )

    def union(self, other: "QualifierSet") -> "QualifierSet":
        """Field-wise union; caller must have checked for conflicts."""
        merged = dict(self.populated())
        for k, v in other.populated().items():
            merged.setdefault(k, v)
        return QualifierSet(**merged)


@dataclass(frozen=True)
class RelationInstance:
    """Directed, evidence-grounded edge; parallel edges are permitted."""

    id: str
    subject_entity: str
    object_entity: str
    raw_label: str
    description: str = ""
    hint_type: str = "ASSOCIATION"
    qualifiers: QualifierSet = field(default_factory=QualifierSet)
    confidence: float = 1.0
    provenance_chunks: tuple[str, ...] = ()
    evidence: tuple[str, ...] = ()
    canonical_label: Optional[str] = None
    rel_cls: Optional[str] = None
    rel_cls_group: Optional[str] = None
    remarks: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        _check(bool(self.subject_entity) and bool(self.object_entity),
               f"relation {self.id}: endpoints must be set")
        _check(self.hint_type in HINT_TYPES,
               f"relation {self.id}: hint_type {self.hint_type!r} outside vocabulary")
        _check(len(self.provenance_chunks) > 0,
               f"relation {self.id}: provenance_chunks must be non-empty")
        object.__setattr__(self, "provenance_chunks", _sorted_unique(self.provenance_chunks))
        object.__setattr__(self, "confidence", _confidence(self.confidence))

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "subject_entity": self.subject_entity,
            "object_entity": self.object_entity,
            "raw_label": self.raw_label,
            "description": self.description,
            "hint_type": self.hint_type,
            "qualifiers": self.qualifiers.to_record(),
            "confidence": self.confidence,
            "provenance_chunks": list(self.provenance_chunks),
            "evidence": list(self.evidence),
            "canonical_label": self.canonical_label,
            "rel_cls": self.rel_cls,
            "rel_cls_group": self.rel_cls_group,
            "remarks": list(self.remarks),
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "RelationInstance":
        return cls(
            id=rec["id"],
            subject_entity=rec["subject_entity"],
            object_entity=rec["object_entity"],
            raw_label=rec["raw_label"],
            description=rec.get("description", ""),
            hint_type=rec.get("hint_type", "ASSOCIATION"),
            qualifiers=QualifierSet.from_record(rec.get("qualifiers", {})),
            confidence=rec.get("confidence", 1.0),
            provenance_chunks=tuple(rec.get("provenance_chunks", ())),
            evidence=tuple(rec.get("evidence", ())),
            canonical_label=rec.get("canonical_label"),
            rel_cls=rec.get("rel_cls"),
            rel_cls_group=rec.get("rel_cls_group"),
            remarks=tuple(rec.get("remarks", ())),
        )


@dataclass(frozen=True)
class EntityClass:
    id: str
    label: str
    description: str = ""
    group_id: Optional[str] = None
    member_entities: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "member_entities", _sorted_unique(self.member_entities))

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "label": self.label,
            "description": self.description,
            "group_id": self.group_id,
            "member_entities": list(self.member_entities),
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "EntityClass":
        return cls(
            id=rec["id"],
            label=rec["label"],
            description=rec.get("description", ""),
            group_id=rec.get("group_id"),
            member_entities=tuple(rec.get("member_entities", ())),
        )


@dataclass(frozen=True)
class EntityClassGroup:
    id: str
    label: str
    description: str = ""

    def to_record(self) -> dict:
        return {"id": self.id, "label": self.label, "description": self.description}

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "EntityClassGroup":
        return cls(id=rec["id"], label=rec["label"], description=rec.get("description", ""))


@dataclass(frozen=True)
class CanonicalRelation:
    label: str
    description: str = ""

    def to_record(self) -> dict:
        return {"label": self.label, "description": self.description}

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "CanonicalRelation":
        return cls(label=rec["label"], description=rec.get("description", ""))


@dataclass(frozen=True)
class RelationClass:
    id: str
    label: str
    description: str = ""

    def to_record(self) -> dict:
        return {"id": self.id, "label": self.label, "description": self.description}

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "RelationClass":
        return cls(id=rec["id"], label=rec["label"], description=rec.get("description", ""))


@dataclass(frozen=True)
class RelationClassGroup:
    id: str
    label: str
    description: str = ""

    def to_record(self) -> dict:
        return {"id": self.id, "label": self.label, "description": self.description}

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "RelationClassGroup":
        return cls(id=rec["id"], label=rec["label"], description=rec.get("description", ""))


@dataclass(frozen=True)
class Schema:
    """Two linked hierarchies: entity classes/groups and relation classes/groups.

    ``entity_class_of`` maps entity id -> entity class id, ``group_of_class``
    maps entity class id -> group id, ``class_of_relation`` maps canonical
    relation label -> relation class id and ``group_of_relation_class`` maps
    relation class id -> relation class group id.
    """

    entity_classes: tuple[EntityClass, ...] = ()
    entity_class_groups: tuple[EntityClassGroup, ...] = ()
    canonical_relations: tuple[CanonicalRelation, ...] = ()
    relation_classes: tuple[RelationClass, ...] = ()
    relation_class_groups: tuple[RelationClassGroup, ...] = ()
    entity_class_of: Mapping[str, str] = field(default_factory=dict)
    group_of_class: Mapping[str, str] = field(default_factory=dict)
    class_of_relation: Mapping[str, str] = field(default_factory=dict)
    group_of_relation_class: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "entity_classes",
                           tuple(sorted(self.entity_classes, key=lambda c: c.id)))
        object.__setattr__(self, "entity_class_groups",
                           tuple(sorted(self.entity_class_groups, key=lambda g: g.id)))
        object.__setattr__(self, "canonical_relations",
                           tuple(sorted(self.canonical_relations, key=lambda r: r.label)))
        object.__setattr__(self, "relation_classes",
                           tuple(sorted(self.relation_classes, key=lambda c: c.id)))
        object.__setattr__(self, "relation_class_groups",
                           tuple(sorted(self.relation_class_groups, key=lambda g: g.id)))

    @property
    def is_empty(self) -> bool:
        return not (self.entity_classes or self.canonical_relations)

    def to_records(self) -> list[dict]:
        """One typed record per schema element plus one per map entry."""
        records: list[dict] = []
        for cls_ in self.entity_classes:
            records.append({"kind": "entity_class", **cls_.to_record()})
        for grp in self.entity_class_groups:
            records.append({"kind": "entity_class_group", **grp.to_record()})
        for rel in self.canonical_relations:
            records.append({"kind": "canonical_relation", **rel.to_record()})
        for cls_ in self.relation_classes:
            records.append({"kind": "relation_class", **cls_.to_record()})
        for grp in self.relation_class_groups:
            records.append({"kind": "relation_class_group", **grp.to_record()})
        maps = (
            ("entity_class_of", self.entity_class_of),
            ("group_of_class", self.group_of_class),
            ("class_of_relation", self.class_of_relation),
            ("group_of_relation_class", self.group_of_relation_class),
        )
        for map_name, mapping in maps:
            for key in sorted(mapping):
                records.append({"kind": "map", "map": map_name, "key": key,
                                "value": mapping[key]})
        return records

    @classmethod
    def from_records(cls, records: Iterable[Mapping[str, Any]]) -> "Schema":
        builders: dict[str, list] = {
            "entity_class": [], "entity_class_group": [], "canonical_relation": [],
            "relation_class": [], "relation_class_group": [],
        }
        maps: dict[str, dict[str, str]] = {
            "entity_class_of": {}, "group_of_class": {},
            "class_of_relation": {}, "group_of_relation_class": {},
        }
        parsers = {
            "entity_class": EntityClass.from_record,
            "entity_class_group": EntityClassGroup.from_record,
            "canonical_relation": CanonicalRelation.from_record,
            "relation_class": RelationClass.from_record,
            "relation_class_group": RelationClassGroup.from_record,
        }
        for rec in records:
            kind = rec.get("kind")
            if kind == "map":
                maps[rec["map"]][rec["key"]] = rec["value"]
            elif kind in parsers:
                builders[kind].append(parsers[kind](rec))
            else:
                raise ModelError(f"unknown schema record kind {kind!r}")
        return cls(
            entity_classes=tuple(builders["entity_class"]),
            entity_class_groups=tuple(builders["entity_class_group"]),
            canonical_relations=tuple(builders["canonical_relation"]),
            relation_classes=tuple(builders["relation_class"]),
            relation_class_groups=tuple(builders["relation_class_group"]),
            entity_class_of=maps["entity_class_of"],
            group_of_class=maps["group_of_class"],
            class_of_relation=maps["class_of_relation"],
            group_of_relation_class=maps["group_of_relation_class"],
        )


@dataclass(frozen=True)
class ContextEnrichedGraph:
    """Directed multigraph of resolved entities, relation instances, schema."""

    entities: tuple[Entity, ...] = ()
    relations: tuple[RelationInstance, ...] = ()
    schema: Schema = field(default_factory=Schema)

    def __post_init__(self) -> None:
        object.__setattr__(self, "entities",
                           tuple(sorted(self.entities, key=lambda e: e.id)))
        object.__setattr__(self, "relations",
                           tuple(sorted(self.relations, key=lambda r: r.id)))

    def entity_by_id(self) -> dict[str, Entity]:
        return {e.id: e for e in self.entities}


@dataclass(frozen=True)
class ActionRecord:
    """Typed, validated, logged edit from the constrained action vocabulary."""

    stage: str
    kind: str
    payload: Mapping[str, Any]
    rationale: str
    status: str
    sequence_number: int
    rejection_reason: Optional[str] = None

    def __post_init__(self) -> None:
        _check(self.stage in STAGES, f"unknown stage {self.stage!r}")
        _check(self.kind in ACTION_VOCABULARY[self.stage],
               f"action kind {self.kind!r} outside {self.stage} vocabulary")
        _check(self.status in ("applied", "rejected"), f"bad status {self.status!r}")
        _check(self.sequence_number >= 0, "sequence_number must be >= 0")

    def to_record(self) -> dict:
        return {
            "stage": self.stage,
            "kind": self.kind,
            "payload": dict(self.payload),
            "rationale": self.rationale,
            "status": self.status,
            "sequence_number": self.sequence_number,
            "rejection_reason": self.rejection_reason,
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "ActionRecord":
        return cls(
            stage=rec["stage"],
            kind=rec["kind"],
            payload=rec.get("payload", {}),
            rationale=rec.get("rationale", ""),
            status=rec["status"],
            sequence_number=int(rec["sequence_number"]),
            rejection_reason=rec.get("rejection_reason"),
        )


@dataclass(frozen=True)
class Violation:
    offender_id: str
    invariant: str
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)
    warnings: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, offender_id: str, invariant: str, message: str) -> None:
        self.violations.append(Violation(offender_id, invariant, message))

    def warn(self, offender_id: str, invariant: str, message: str) -> None:
        self.warnings.append(Violation(offender_id, invariant, message))


def validate_graph(
    graph: ContextEnrichedGraph,
    chunk_ids: Optional[set[str]] = None,
    mentions: Optional[Sequence[Mention]] = None,
    require_schema: Optional[bool] = None,
) -> ValidationReport:
    """Check every graph-level invariant; violations are data, not failures.

    ``chunk_ids`` enables provenance-closure checks against the chunk store
    and ``mentions`` enables mention/provenance consistency checks. When
    ``require_schema`` is None, schema totality is enforced iff the graph
    carries a non-empty schema.
    """
    report = ValidationReport()
    schema = graph.schema
    if require_schema is None:
        require_schema = not schema.is_empty

    entity_ids = set()
    for entity in graph.entities:
        if entity.id in entity_ids:
            report.add(entity.id, "unique-id", "duplicate entity id")
        entity_ids.add(entity.id)
        if not entity.member_mentions:
            report.add(entity.id, "member-mentions", "entity has no member mentions")
        if not entity.description:
            report.warn(entity.id, "description", "entity description is empty")
        if require_schema and entity.class_id is None:
            report.add(entity.id, "tau_ent-total", "entity has no class assignment")
        if chunk_ids is not None:
            for cid in entity.provenance_chunks:
                if cid not in chunk_ids:
                    report.add(entity.id, "provenance-closure",
                               f"provenance chunk {cid} not in chunk store")
        if not entity.provenance_chunks:
            report.add(entity.id, "provenance", "entity has no provenance chunks")

    if mentions is not None:
        by_id = {m.id: m for m in mentions}
        seen_mentions: dict[str, str] = {}
        for entity in graph.entities:
            expected = set()
            for mid in entity.member_mentions:
                if mid in seen_mentions:
                    report.add(entity.id, "mention-partition",
                               f"mention {mid} also owned by {seen_mentions[mid]}")
                seen_mentions[mid] = entity.id
                mention = by_id.get(mid)
                if mention is None:
                    report.add(entity.id, "mention-closure", f"unknown mention {mid}")
                else:
                    expected.add(mention.chunk_id)
            if expected and set(entity.provenance_chunks) != expected:
                report.add(entity.id, "provenance-union",
                           "provenance_chunks differs from union of mention chunks")

    relation_ids = set()
    for rel in graph.relations:
        if rel.id in relation_ids:
            report.add(rel.id, "unique-id", "duplicate relation id")
        relation_ids.add(rel.id)
        for endpoint in (rel.subject_entity, rel.object_entity):
            if endpoint not in entity_ids:
                report.add(rel.id, "dangling-endpoint",
                           f"endpoint {endpoint} is not a known entity")
        if chunk_ids is not None:
            for cid in rel.provenance_chunks:
                if cid not in chunk_ids:
                    report.add(rel.id, "provenance-closure",
                               f"provenance chunk {cid} not in chunk store")
        if require_schema:
            if rel.canonical_label is None:
                report.add(rel.id, "canonical-total", "relation has no canonical label")
            if rel.rel_cls is None:
                report.add(rel.id, "tau_rel-total", "relation has no relation class")
            if rel.rel_cls_group is None:
                report.add(rel.id, "gamma_rel-total", "relation has no class group")

    _validate_schema(graph, report, require_schema)
    return report


def _validate_schema(graph: ContextEnrichedGraph, report: ValidationReport,
                     require_schema: bool) -> None:
    schema = graph.schema
    entity_ids = {e.id for e in graph.entities}
    class_ids = {c.id for c in schema.entity_classes}
    group_ids = {g.id for g in schema.entity_class_groups}
    rel_cls_ids = {c.id for c in schema.relation_classes}
    rel_grp_ids = {g.id for g in schema.relation_class_groups}
    canonical_labels = {r.label for r in schema.canonical_relations}

    assigned: dict[str, str] = {}
    for cls_ in schema.entity_classes:
        if cls_.group_id is None:
            if require_schema:
                report.add(cls_.id, "gamma_ent-total", "entity class has no group")
        elif cls_.group_id not in group_ids:
            report.add(cls_.id, "dangling-group", f"unknown group {cls_.group_id}")
        for eid in cls_.member_entities:
            if eid not in entity_ids:
                report.add(cls_.id, "dangling-member", f"unknown entity {eid}")
            if eid in assigned:
                report.add(eid, "tau_ent-single",
                           f"entity in both {assigned[eid]} and {cls_.id}")
            assigned[eid] = cls_.id

    if require_schema:
        for eid in sorted(entity_ids - set(assigned)):
            report.add(eid, "tau_ent-total", "entity not covered by any class")

    for entity in graph.entities:
        if entity.class_id is not None:
            if entity.class_id not in class_ids:
                report.add(entity.id, "dangling-class", f"unknown class {entity.class_id}")
            elif assigned.get(entity.id) != entity.class_id:
                report.add(entity.id, "tau_ent-consistent",
                           "entity.class_id disagrees with class membership")

    for eid, cid in schema.entity_class_of.items():
        if cid not in class_ids:
            report.add(eid, "dangling-class", f"map names unknown class {cid}")
    for cid, gid in schema.group_of_class.items():
        if gid not in group_ids:
            report.add(cid, "dangling-group", f"map names unknown group {gid}")
    for label, cid in schema.class_of_relation.items():
        if cid not in rel_cls_ids:
            report.add(label, "dangling-relation-class", f"map names unknown class {cid}")
    for cid, gid in schema.group_of_relation_class.items():
        if gid not in rel_grp_ids:
            report.add(cid, "dangling-relation-group", f"map names unknown group {gid}")

    if require_schema:
        for rel in graph.relations:
            if rel.canonical_label is not None:
                if canonical_labels and rel.canonical_label not in canonical_labels:
                    report.add(rel.id, "canonical-closure",
                               f"canonical label {rel.canonical_label!r} not in schema")
        for label in sorted(canonical_labels):
            if label not in schema.class_of_relation:
                report.add(label, "tau_rel-total", "canonical relation has no class")
        for cls_ in schema.relation_classes:
            if cls_.id not in schema.group_of_relation_class:
                report.add(cls_.id, "gamma_rel-total", "relation class has no group")
