"""Graph assembly, artifact round-trips, triple export, and action replay."""

from __future__ import annotations

from typing import Mapping, Optional, Sequence

from .artifacts import RunStore
from .config import PipelineConfig
from .entities import apply_entity_actions, initial_entity_state
from .entity_classes import (
    ClassDraft,
    ClassState,
    GroupDraft,
    apply_class_actions,
    finalize_classes,
)
from .model import (
    ActionRecord,
    Chunk,
    ContextEnrichedGraph,
    Entity,
    EntityClass,
    EntityClassGroup,
    Mention,
    RelationInstance,
    Schema,
    ValidationReport,
    validate_graph,
)
from .providers import EmbeddingProvider
from .relations import apply_relation_actions, finalize_relations, initial_relation_state


class AssemblyError(Exception):
    def __init__(self, report: ValidationReport):
        lines = [f"{v.offender_id}: {v.invariant}: {v.message}"
                 for v in report.violations]
        super().__init__("graph validation failed:\n" + "\n".join(lines))
        self.report = report


def assemble(entities: Sequence[Entity], relations: Sequence[RelationInstance],
             schema: Schema, chunk_ids: Optional[set[str]] = None,
             mentions: Optional[Sequence[Mention]] = None) -> ContextEnrichedGraph:
    """Build the final graph; any invariant violation fails the assembly."""
    graph = ContextEnrichedGraph(entities=tuple(entities),
                                 relations=tuple(relations), schema=schema)
    report = validate_graph(graph, chunk_ids=chunk_ids, mentions=mentions)
    if not report.ok:
        raise AssemblyError(report)
    return graph


def export_triples(graph: ContextEnrichedGraph) -> list[str]:
    """Flat per-line export: subject name, predicate label, object name."""
    names = {e.id: e.canonical_name for e in graph.entities}
    lines = []
    for rel in graph.relations:
        predicate = rel.canonical_label or rel.raw_label
        lines.append("\t".join((names.get(rel.subject_entity, rel.subject_entity),
                                predicate,
                                names.get(rel.object_entity, rel.object_entity))))
    return lines


# ---------------------------------------------------------------------------
# Store round-trips.
# ---------------------------------------------------------------------------


def write_graph(store: RunStore, graph: ContextEnrichedGraph) -> None:
    store.write_records("entities", (e.to_record() for e in graph.entities))
    store.write_records("relations_resolved",
                        (r.to_record() for r in graph.relations))
    store.write_records("schema", graph.schema.to_records())
    store.write_triples(export_triples(graph))


def load_graph(store: RunStore) -> ContextEnrichedGraph:
    entities = [Entity.from_record(rec) for rec in store.require("entities")]
    relations = [RelationInstance.from_record(rec)
                 for rec in store.require("relations_resolved")]
    schema = Schema.from_records(store.require("schema"))
    return ContextEnrichedGraph(entities=tuple(entities),
                                relations=tuple(relations), schema=schema)


def load_chunks(store: RunStore) -> list[Chunk]:
    return [Chunk.from_record(rec) for rec in store.require("chunks")]


def load_mentions(store: RunStore) -> list[Mention]:
    return [Mention.from_record(rec) for rec in store.require("mentions")]


def load_actions(store: RunStore, stage: Optional[str] = None) -> list[ActionRecord]:
    records = [ActionRecord.from_record(rec) for rec in store.require("actions")]
    if stage is not None:
        records = [rec for rec in records if rec.stage == stage]
    return sorted(records, key=lambda rec: rec.sequence_number)


# ---------------------------------------------------------------------------
# Deterministic replay from raw artifacts + action logs.
# ---------------------------------------------------------------------------


def replay_entities(mentions: Sequence[Mention],
                    actions: Sequence[ActionRecord]) -> tuple[list[Entity], list[str]]:
    """Re-derive resolved entities by re-applying the EntRes action log.

    Actions logged as rejected had no state effect and carry prompt-local
    validation context (batch scope), so only applied actions are
    re-executed; an applied action that fails re-validation is reported.
    """
    state = initial_entity_state(mentions)
    mismatches: list[str] = []
    for action in sorted(actions, key=lambda a: a.sequence_number):
        if action.status != "applied":
            continue
        records, _ = apply_entity_actions([{**dict(action.payload),
                                            "action": action.kind}], state)
        if records and records[0].status != "applied":
            mismatches.append(
                f"EntRes seq {action.sequence_number}: logged applied, "
                f"replay rejected: {records[0].rejection_reason}")
    return state.snapshot(), mismatches


def _class_state_from_records(records: Sequence[Mapping]) -> ClassState:
    state = ClassState()
    max_class = -1
    for rec in records:
        if rec.get("kind") not in (None, "entity_class"):
            continue
        cls = EntityClass.from_record(rec)
        state.drafts[cls.id] = ClassDraft(id=cls.id, label=cls.label,
                                          description=cls.description,
                                          group_id=cls.group_id,
                                          members=set(cls.member_entities))
        if cls.id.startswith("ec-"):
            max_class = max(max_class, int(cls.id[3:]))
    state.class_counter = max_class + 1
    return state


def replay_classes(candidate_records: Sequence[Mapping], entities: Sequence[Entity],
                   actions: Sequence[ActionRecord], config: PipelineConfig,
                   embedder: EmbeddingProvider):
    """Re-derive the resolved class hierarchy from candidates + action log."""
    state = _class_state_from_records(candidate_records)
    entity_ids = {e.id for e in entities}
    mismatches: list[str] = []
    for action in sorted(actions, key=lambda a: a.sequence_number):
        if action.status != "applied":
            continue
        records, _ = apply_class_actions([{**dict(action.payload),
                                           "action": action.kind}],
                                         state, entity_ids)
        if records and records[0].status != "applied":
            mismatches.append(
                f"EntClsRes seq {action.sequence_number}: logged applied, "
                f"replay rejected: {records[0].rejection_reason}")
    fragment = finalize_classes(state, entities, config, embedder)
    return fragment, mismatches


def replay_relations(raw_relations: Sequence[RelationInstance],
                     actions: Sequence[ActionRecord]):
    """Re-derive resolved relations + relation schema from raw + action log."""
    state = initial_relation_state(raw_relations)
    mismatches: list[str] = []
    for action in sorted(actions, key=lambda a: a.sequence_number):
        if action.status != "applied":
            continue
        records, _ = apply_relation_actions([{**dict(action.payload),
                                              "action": action.kind}], state)
        if records and records[0].status != "applied":
            mismatches.append(
                f"RelRes seq {action.sequence_number}: logged applied, "
                f"replay rejected: {records[0].rejection_reason}")
    relations, fragment = finalize_relations(state)
    return relations, fragment, mismatches


def diff_records(label: str, stored: Sequence[Mapping],
                 replayed: Sequence[Mapping]) -> list[str]:
    """Record-level differences between a stored and a replayed artifact."""
    from .artifacts import dumps_record

    stored_set = {dumps_record(rec) for rec in stored}
    replayed_set = {dumps_record(rec) for rec in replayed}
    out = []
    for line in sorted(stored_set - replayed_set):
        out.append(f"{label}: only in stored artifact: {line}")
    for line in sorted(replayed_set - stored_set):
        out.append(f"{label}: only in replay: {line}")
    return out
