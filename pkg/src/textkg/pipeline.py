"""Stage orchestration over a run directory.

Each stage reads its prerequisites from the artifact store, runs, and
persists its outputs plus its slice of the shared action/prompt logs, so
every CLI subcommand is idempotent and a full run is byte-reproducible
with stub providers.
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .artifacts import MissingArtifactError, RunStore
from .assembly import (
    AssemblyError,
    assemble,
    diff_records,
    load_actions,
    load_chunks,
    load_graph,
    load_mentions,
    replay_classes,
    replay_entities,
    replay_relations,
    write_graph,
)
from .config import PipelineConfig
from .entities import StageTrace, recognize_entities, run_entity_resolution
from .entity_classes import recognize_classes, run_class_resolution
from .ingest import ingest_document, resolve_textualizer
from .model import Chunk, Entity, EntityClass, EntityClassGroup, Mention, RelationInstance, Schema
from .providers import build_providers
from .relations import recognize_relations, run_relation_resolution


def _provider_names(config: PipelineConfig) -> dict[str, str]:
    return {"chat": config.providers.chat, "embedding": config.providers.embedding}


def _finish(store: RunStore, config: PipelineConfig, stage: str) -> None:
    store.write_manifest(config.to_dict(), _provider_names(config), stage)


def read_input_documents(paths: Sequence[str | Path]) -> list[dict]:
    """Load raw documents: .txt as plain text, .json as region-annotated."""
    documents = []
    for path in sorted(Path(p) for p in paths):
        if path.is_dir():
            documents.extend(read_input_documents(sorted(path.iterdir())))
            continue
        if path.suffix == ".txt":
            documents.append({"doc_id": path.stem, "source": str(path),
                              "text": path.read_text(encoding="utf-8")})
        elif path.suffix == ".json":
            data = json.loads(path.read_text(encoding="utf-8"))
            data.setdefault("doc_id", path.stem)
            data.setdefault("source", str(path))
            documents.append(data)
    return documents


def stage_ingest(config: PipelineConfig, store: RunStore,
                 input_paths: Sequence[str | Path]) -> list[Chunk]:
    documents = read_input_documents(input_paths)
    if not documents:
        raise MissingArtifactError("chunks", "ingest (no input documents found)")
    textualizer = resolve_textualizer(config.textualizer)
    chunks: list[Chunk] = []
    for document in sorted(documents, key=lambda d: d["doc_id"]):
        chunks.extend(ingest_document(document, textualizer,
                                      config.chunking.min_tokens,
                                      config.chunking.max_tokens))
    store.write_records("chunks", (c.to_record() for c in chunks))
    _finish(store, config, "ingest")
    return chunks


def stage_extract(config: PipelineConfig, store: RunStore) -> list[Mention]:
    chunks = load_chunks(store)
    chat, _ = build_providers(config)
    mentions: list[Mention] = []
    prompts: list[dict] = []
    by_doc: dict[str, list[Chunk]] = {}
    for chunk in chunks:
        by_doc.setdefault(chunk.doc_id, []).append(chunk)
    for doc_id in sorted(by_doc):
        doc_chunks = by_doc[doc_id]
        for i, chunk in enumerate(doc_chunks):
            context = doc_chunks[max(0, i - config.chunking.context_chunks):i]
            found, _, entry = recognize_entities(
                chunk, context, chat, config.providers.recognition_budget)
            mentions.extend(found)
            prompts.append({"stage": "EntRec", **entry})
    store.write_records("mentions", (m.to_record() for m in mentions))
    store.merge_stage_records("prompts", "EntRec", prompts)
    _finish(store, config, "extract")
    return mentions


def stage_resolve_entities(config: PipelineConfig, store: RunStore) -> list[Entity]:
    mentions = load_mentions(store)
    chat, embedder = build_providers(config)
    trace = StageTrace(stage="EntRes")
    entities, _ = run_entity_resolution(mentions, config, chat, embedder, trace)
    store.write_records("entities", (e.to_record() for e in entities))
    store.merge_stage_records("prompts", "EntRes", trace.prompts)
    store.merge_stage_records("actions", "EntRes",
                              (a.to_record() for a in trace.actions))
    _finish(store, config, "resolve-entities")
    return entities


def stage_induce_entity_schema(config: PipelineConfig, store: RunStore):
    entities = [Entity.from_record(rec) for rec in store.require("entities")]
    chat, embedder = build_providers(config)
    trace = StageTrace(stage="EntClsRes")
    candidate_state = recognize_classes(entities, config, chat, embedder, trace)
    store.write_records(
        "classes_candidate",
        ({"kind": "entity_class", **c.to_record()}
         for c in candidate_state.snapshot_classes()))
    fragment = run_class_resolution(candidate_state, entities, config, chat,
                                    embedder, trace)
    resolved_records = [{"kind": "entity_class", **c.to_record()}
                        for c in fragment.classes]
    resolved_records.extend({"kind": "entity_class_group", **g.to_record()}
                            for g in fragment.groups)
    store.write_records("classes_resolved", resolved_records)
    entities = [replace(e, class_id=fragment.entity_class_of[e.id])
                for e in entities]
    store.write_records("entities", (e.to_record() for e in entities))
    store.merge_stage_records("prompts", "EntClsRes", trace.prompts)
    store.merge_stage_records("actions", "EntClsRes",
                              (a.to_record() for a in trace.actions))
    _finish(store, config, "induce-entity-schema")
    return fragment


def _entities_by_chunk(entities: Sequence[Entity],
                       mentions: Sequence[Mention]) -> dict[str, list[Entity]]:
    owner: dict[str, Entity] = {}
    for entity in entities:
        for mid in entity.member_mentions:
            owner[mid] = entity
    by_chunk: dict[str, dict[str, Entity]] = {}
    for mention in mentions:
        entity = owner.get(mention.id)
        if entity is not None:
            by_chunk.setdefault(mention.chunk_id, {})[entity.id] = entity
    return {chunk_id: [members[eid] for eid in sorted(members)]
            for chunk_id, members in by_chunk.items()}


def _class_labels(store: RunStore) -> dict[str, str]:
    labels: dict[str, str] = {}
    class_names: dict[str, str] = {}
    for rec in store.require("classes_resolved"):
        if rec.get("kind") == "entity_class":
            class_names[rec["id"]] = rec["label"]
    for rec in store.require("entities"):
        if rec.get("class_id") in class_names:
            labels[rec["id"]] = class_names[rec["class_id"]]
    return labels


def stage_extract_relations(config: PipelineConfig, store: RunStore
                            ) -> list[RelationInstance]:
    chunks = load_chunks(store)
    mentions = load_mentions(store)
    entities = [Entity.from_record(rec) for rec in store.require("entities")]
    if not store.has("classes_resolved"):
        raise MissingArtifactError("classes_resolved", "induce-entity-schema")
    class_labels = _class_labels(store)
    chat, _ = build_providers(config)
    by_chunk = _entities_by_chunk(entities, mentions)
    relations: list[RelationInstance] = []
    prompts: list[dict] = []
    for chunk in chunks:
        resolved = by_chunk.get(chunk.id, [])
        if not resolved:
            continue
        found, _, entry = recognize_relations(
            chunk, resolved, chat, config.providers.recognition_budget,
            class_labels)
        relations.extend(found)
        prompts.append({"stage": "RelRec", **entry})
    store.write_records("relations_raw", (r.to_record() for r in relations))
    store.merge_stage_records("prompts", "RelRec", prompts)
    _finish(store, config, "extract-relations")
    return relations


def stage_resolve_relations(config: PipelineConfig, store: RunStore):
    raw = [RelationInstance.from_record(rec)
           for rec in store.require("relations_raw")]
    entities = [Entity.from_record(rec) for rec in store.require("entities")]
    class_labels = _class_labels(store)
    chat, embedder = build_providers(config)
    trace = StageTrace(stage="RelRes")
    relations, fragment = run_relation_resolution(
        raw, entities, config, chat, embedder, class_labels, trace)
    store.write_records("relations_resolved", (r.to_record() for r in relations))
    partial = Schema(
        canonical_relations=tuple(fragment.canonical_relations),
        relation_classes=tuple(fragment.relation_classes),
        relation_class_groups=tuple(fragment.relation_class_groups),
        class_of_relation=fragment.class_of_relation,
        group_of_relation_class=fragment.group_of_relation_class,
    )
    store.write_records("schema", partial.to_records())
    store.merge_stage_records("prompts", "RelRes", trace.prompts)
    store.merge_stage_records("actions", "RelRes",
                              (a.to_record() for a in trace.actions))
    _finish(store, config, "resolve-relations")
    return relations, fragment


def _compose_schema(store: RunStore) -> Schema:
    relation_side = Schema.from_records(store.require("schema"))
    classes = []
    groups = []
    for rec in store.require("classes_resolved"):
        if rec.get("kind") == "entity_class":
            classes.append(EntityClass.from_record(rec))
        elif rec.get("kind") == "entity_class_group":
            groups.append(EntityClassGroup.from_record(rec))
    tau = {eid: cls.id for cls in classes for eid in cls.member_entities}
    gamma = {cls.id: cls.group_id for cls in classes if cls.group_id}
    return Schema(
        entity_classes=tuple(classes),
        entity_class_groups=tuple(groups),
        canonical_relations=relation_side.canonical_relations,
        relation_classes=relation_side.relation_classes,
        relation_class_groups=relation_side.relation_class_groups,
        entity_class_of=tau,
        group_of_class=gamma,
        class_of_relation=dict(relation_side.class_of_relation),
        group_of_relation_class=dict(relation_side.group_of_relation_class),
    )


def stage_assemble(config: PipelineConfig, store: RunStore):
    entities = [Entity.from_record(rec) for rec in store.require("entities")]
    relations = [RelationInstance.from_record(rec)
                 for rec in store.require("relations_resolved")]
    schema = _compose_schema(store)
    chunks = load_chunks(store)
    mentions = load_mentions(store)
    graph = assemble(entities, relations, schema,
                     chunk_ids={c.id for c in chunks}, mentions=mentions)
    write_graph(store, graph)
    _finish(store, config, "assemble")
    return graph


def run_all(config: PipelineConfig, store: RunStore,
            input_paths: Sequence[str | Path]):
    stage_ingest(config, store, input_paths)
    stage_extract(config, store)
    stage_resolve_entities(config, store)
    stage_induce_entity_schema(config, store)
    stage_extract_relations(config, store)
    stage_resolve_relations(config, store)
    return stage_assemble(config, store)


def replay_run(config: PipelineConfig, store: RunStore) -> list[str]:
    """Re-derive resolved artifacts from raw artifacts + action logs.

    Returns a list of differences; an untampered run replays to an empty
    diff. Finalization steps that need embeddings reuse the configured
    embedding provider.
    """
    _, embedder = build_providers(config)
    diffs: list[str] = []

    mentions = load_mentions(store)
    entities, mismatches = replay_entities(mentions, load_actions(store, "EntRes"))
    diffs.extend(mismatches)

    fragment, mismatches = replay_classes(
        store.require("classes_candidate"), entities,
        load_actions(store, "EntClsRes"), config, embedder)
    diffs.extend(mismatches)
    entities = [replace(e, class_id=fragment.entity_class_of.get(e.id))
                for e in entities]
    diffs.extend(diff_records(
        "entities", store.require("entities"),
        [e.to_record() for e in entities]))
    resolved_records = [{"kind": "entity_class", **c.to_record()}
                        for c in fragment.classes]
    resolved_records.extend({"kind": "entity_class_group", **g.to_record()}
                            for g in fragment.groups)
    diffs.extend(diff_records("classes_resolved",
                              store.require("classes_resolved"), resolved_records))

    raw = [RelationInstance.from_record(rec)
           for rec in store.require("relations_raw")]
    relations, rel_fragment, mismatches = replay_relations(
        raw, load_actions(store, "RelRes"))
    diffs.extend(mismatches)
    diffs.extend(diff_records("relations_resolved",
                              store.require("relations_resolved"),
                              [r.to_record() for r in relations]))
    replayed_schema = Schema(
        entity_classes=tuple(fragment.classes),
        entity_class_groups=tuple(fragment.groups),
        canonical_relations=tuple(rel_fragment.canonical_relations),
        relation_classes=tuple(rel_fragment.relation_classes),
        relation_class_groups=tuple(rel_fragment.relation_class_groups),
        entity_class_of=fragment.entity_class_of,
        group_of_class=fragment.group_of_class,
        class_of_relation=rel_fragment.class_of_relation,
        group_of_relation_class=rel_fragment.group_of_relation_class,
    )
    if store.stage_completed("assemble"):
        diffs.extend(diff_records("schema", store.require("schema"),
                                  replayed_schema.to_records()))
    return diffs
