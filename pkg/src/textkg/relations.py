"""Relation layer: chunk-local recognition with qualifiers, then
canonicalization and relation-schema induction.

Relation instances are grounded evidence and are never deleted for mere
similarity; only ``merge_relations`` over equal endpoint pairs (after
direction normalization) removes an instance. Qualifier reconciliation is
conservative: a subset merge keeps the superset, a conflict keeps both
instances and adds remarks.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Optional, Sequence

from .config import PipelineConfig
from .entities import StageTrace
from .model import (
    ActionRecord,
    CanonicalRelation,
    Chunk,
    Entity,
    HINT_TYPES,
    QUALIFIER_KEYS,
    QualifierSet,
    RelationClass,
    RelationClassGroup,
    RelationInstance,
)
from .neighborhood import batch, build_representations, make_neighborhoods
from .providers import ChatProvider, ChatRequest, EmbeddingProvider, build_prompt

RELREC_INSTRUCTIONS = """\
Extract directed relations stated in the chunk below. Use only the listed
resolved entities as endpoints and only when the chunk text explicitly
supports the relation. Each relation carries a raw predicate label, a short
description, a required coarse hint from {IDENTITY, COMPOSITION, CAUSALITY,
TEMPORALITY, SPATIALITY, ROLE, PURPOSE, DEPENDENCY, COUPLING,
TRANSFORMATION, COMPARISON, INFORMATION, ASSOCIATION}, a confidence in
[0, 1], verbatim evidence excerpts, and a qualifier dictionary with exactly
the keys TemporalQualifier, SpatialQualifier, OperationalConstraint,
ConditionExpression, UncertaintyQualifier, CausalHint, LogicalMarker,
OtherQualifier (null when absent).

Reply with only a JSON array:
[{"subject_id": str, "object_id": str, "label": str, "description": str,
  "hint_type": str, "confidence": float, "evidence": [str],
  "qualifiers": {...}}]"""

RELRES_INSTRUCTIONS = """\
The items below are relation instances from one semantic neighborhood.
Canonicalize them with the allowed actions: set_canonical_rel, set_rel_cls,
set_rel_cls_group, modify_rel_schema, add_rel_remark, merge_relations
(only for instances connecting the same entity pair with equivalent
semantics; set "inverse": true when the pair is expressed in opposite
directions). Every action carries a one-line rationale. Reply with only a
JSON array of action objects, [] for none."""


class RelationStageError(ValueError):
    pass


def relation_id(chunk_id: str, index: int) -> str:
    suffix = chunk_id[3:] if chunk_id.startswith("ch-") else chunk_id
    return f"rl-{suffix}-{index:03d}"


def normalize_qualifiers(raw: Optional[Mapping[str, Any]]) -> QualifierSet:
    """Normalize a raw qualifier mapping to the eight canonical fields.

    Unknown keys fold into OtherQualifier as "Key: value" entries in sorted
    key order; empty strings become nulls.
    """
    if raw is None:
        return QualifierSet()
    values: dict[str, Optional[str]] = {}
    extras: list[str] = []
    for key in sorted(raw):
        value = raw[key]
        if value is None:
            continue
        text = str(value).strip()
        if not text:
            continue
        if key in QUALIFIER_KEYS:
            values[key] = text
        else:
            extras.append(f"{key}: {text}")
    if extras:
        existing = values.get("OtherQualifier")
        parts = ([existing] if existing else []) + extras
        values["OtherQualifier"] = "; ".join(parts)
    return QualifierSet(**values)


def recognize_relations(chunk: Chunk, resolved: Sequence[Entity],
                        chat: ChatProvider, budget: int = 8000,
                        class_labels: Optional[Mapping[str, str]] = None
                        ) -> tuple[list[RelationInstance], list[str], dict]:
    """Extract relation instances among the chunk's resolved entities."""
    class_labels = class_labels or {}
    allowed = {e.id for e in resolved}
    payload = {
        "chunk_id": chunk.id,
        "text": chunk.text,
        "entities": [{
            "id": e.id, "name": e.canonical_name,
            "class": class_labels.get(e.id),
        } for e in sorted(resolved, key=lambda e: e.id)],
    }
    prompt = build_prompt(RELREC_INSTRUCTIONS, payload)
    reply = chat.chat(ChatRequest(prompt=prompt, max_tokens=budget,
                                  expect="relation_recognition"))
    relations: list[RelationInstance] = []
    failures: list[str] = []
    try:
        items = json.loads(reply)
        if not isinstance(items, list):
            raise ValueError("reply is not a JSON array")
    except ValueError as exc:
        failures.append(f"parse failure: {exc}")
        items = []
    for item in items:
        if not isinstance(item, Mapping):
            failures.append("dropped non-object relation item")
            continue
        subject, obj = item.get("subject_id"), item.get("object_id")
        if subject not in allowed or obj not in allowed:
            failures.append(
                f"dropped relation {item.get('label')!r}: endpoint outside chunk entities")
            continue
        evidence = tuple(str(e) for e in item.get("evidence", ()))
        if any(e not in chunk.text for e in evidence):
            failures.append(
                f"dropped relation {item.get('label')!r}: evidence not in chunk")
            continue
        hint = item.get("hint_type", "ASSOCIATION")
        remarks: tuple[str, ...] = ()
        if hint not in HINT_TYPES:
            remarks = (f"hint {hint!r} outside vocabulary; normalized to ASSOCIATION",)
            hint = "ASSOCIATION"
        label = str(item.get("label", "")).strip()
        if not label:
            failures.append("dropped relation without a label")
            continue
        try:
            confidence = min(1.0, max(0.0, float(item.get("confidence", 1.0))))
        except (TypeError, ValueError):
            confidence = 1.0
        relations.append(RelationInstance(
            id=relation_id(chunk.id, len(relations)),
            subject_entity=str(subject), object_entity=str(obj),
            raw_label=label, description=str(item.get("description", "")),
            hint_type=hint,
            qualifiers=normalize_qualifiers(item.get("qualifiers")),
            confidence=confidence, provenance_chunks=(chunk.id,),
            evidence=evidence, remarks=remarks))
    entry = {"key": chunk.id, "prompt": prompt, "reply": reply, "failures": failures}
    return relations, failures, entry


def normalize_direction(r1: RelationInstance, r2: RelationInstance
                        ) -> tuple[RelationInstance, RelationInstance]:
    """Re-orient an inverse-equivalent pair so both run the same direction.

    ``r1`` is the surviving orientation: ``r2``'s endpoints are swapped and
    its canonical label is taken from ``r1``; evidence and provenance are
    untouched. A same-direction pair is returned unchanged.
    """
    pair1 = (r1.subject_entity, r1.object_entity)
    pair2 = (r2.subject_entity, r2.object_entity)
    if pair1 == pair2:
        return r1, r2
    if pair1 != (pair2[1], pair2[0]):
        raise RelationStageError(
            f"{r1.id} and {r2.id} do not connect the same unordered pair")
    reoriented = replace(r2, subject_entity=r2.object_entity,
                         object_entity=r2.subject_entity,
                         canonical_label=r1.canonical_label)
    return r1, reoriented


# ---------------------------------------------------------------------------
# Resolution state and action application.
# ---------------------------------------------------------------------------


@dataclass
class RelationState:
    drafts: dict[str, RelationInstance] = field(default_factory=dict)
    canonical_descriptions: dict[str, str] = field(default_factory=dict)
    seq: int = 0

    def next_seq(self) -> int:
        current = self.seq
        self.seq += 1
        return current

    def snapshot(self) -> list[RelationInstance]:
        return [self.drafts[rid] for rid in sorted(self.drafts)]


def initial_relation_state(relations: Sequence[RelationInstance]) -> RelationState:
    return RelationState(drafts={r.id: r for r in
                                 sorted(relations, key=lambda r: r.id)})


def _ids_of(payload: Mapping[str, Any]) -> list[str]:
    if "relation_ids" in payload:
        return list(payload["relation_ids"])
    if "relation_id" in payload:
        return [payload["relation_id"]]
    return []


def apply_relation_actions(payloads: Sequence[Mapping[str, Any]],
                           state: RelationState,
                           allowed_ids: Optional[set[str]] = None
                           ) -> tuple[list[ActionRecord], list[str]]:
    """Validate and execute RelRes actions; every action is logged.

    A merge whose qualifier sets conflict is rejected (both instances stay);
    the orchestrator records the conflict remarks through explicit
    add_rel_remark actions so replay reproduces them. When ``allowed_ids``
    is given (the batch the provider saw), actions naming instances outside
    it are rejected.
    """
    records: list[ActionRecord] = []
    failures: list[str] = []

    def log(kind: str, payload: Mapping[str, Any], status: str,
            reason: Optional[str] = None) -> None:
        records.append(ActionRecord(
            stage="RelRes", kind=kind, payload=dict(payload),
            rationale=str(payload.get("rationale", "")), status=status,
            sequence_number=state.next_seq(), rejection_reason=reason))

    def known(ids: list[str]) -> Optional[str]:
        for rid in ids:
            if rid not in state.drafts:
                return rid
        return None

    def out_of_scope(ids: list[str]) -> Optional[str]:
        if allowed_ids is None:
            return None
        for rid in ids:
            if rid not in allowed_ids:
                return rid
        return None

    for payload in payloads:
        kind = payload.get("action")
        if kind in ("set_canonical_rel", "set_rel_cls", "set_rel_cls_group",
                    "modify_rel_schema", "add_rel_remark"):
            ids = _ids_of(payload)
            if not ids:
                log(kind, payload, "rejected", "no relation ids given")
                continue
            outside = out_of_scope(ids)
            if outside is not None:
                log(kind, payload, "rejected", f"id {outside} outside the batch")
                continue
            bad = known(ids)
            if bad is not None:
                log(kind, payload, "rejected", f"unknown or stale id {bad}")
                continue
            for rid in ids:
                draft = state.drafts[rid]
                if kind == "set_canonical_rel":
                    label = str(payload.get("canonical_label", "")).strip()
                    if not label:
                        break
                    draft = replace(draft, canonical_label=label)
                    if payload.get("description"):
                        state.canonical_descriptions.setdefault(
                            label, str(payload["description"]))
                elif kind == "set_rel_cls":
                    cls_label = str(payload.get("rel_cls", "")).strip()
                    if not cls_label:
                        break
                    draft = replace(draft, rel_cls=cls_label)
                elif kind == "set_rel_cls_group":
                    group = str(payload.get("rel_cls_group", "")).strip()
                    if not group:
                        break
                    # Assigning a group is how RelRes revises the coarse hint.
                    hint = group if group in HINT_TYPES else draft.hint_type
                    draft = replace(draft, rel_cls_group=group, hint_type=hint)
                elif kind == "modify_rel_schema":
                    updates: dict[str, Any] = {}
                    if payload.get("canonical_label") is not None:
                        updates["canonical_label"] = str(payload["canonical_label"])
                    if payload.get("rel_cls") is not None:
                        updates["rel_cls"] = str(payload["rel_cls"])
                    if payload.get("rel_cls_group") is not None:
                        updates["rel_cls_group"] = str(payload["rel_cls_group"])
                    if payload.get("hint_type") in HINT_TYPES:
                        updates["hint_type"] = payload["hint_type"]
                    if payload.get("description") is not None:
                        updates["description"] = str(payload["description"])
                    draft = replace(draft, **updates)
                else:  # add_rel_remark
                    remark = str(payload.get("remark", "")).strip()
                    if remark and remark not in draft.remarks:
                        draft = replace(draft, remarks=draft.remarks + (remark,))
                state.drafts[rid] = draft
            else:
                log(kind, payload, "applied")
                continue
            log(kind, payload, "rejected", "missing required field")
        elif kind == "merge_relations":
            ids = _ids_of(payload)
            if len(ids) != 2 or ids[0] == ids[1]:
                log(kind, payload, "rejected", "merge takes exactly 2 distinct ids")
                continue
            outside = out_of_scope(ids)
            if outside is not None:
                log(kind, payload, "rejected", f"id {outside} outside the batch")
                continue
            bad = known(ids)
            if bad is not None:
                log(kind, payload, "rejected", f"unknown or stale id {bad}")
                continue
            keeper, other = state.drafts[ids[0]], state.drafts[ids[1]]
            inverse = bool(payload.get("inverse"))
            if inverse:
                if (keeper.subject_entity, keeper.object_entity) != (
                        other.object_entity, other.subject_entity):
                    log(kind, payload, "rejected",
                        "instances are not opposite orientations of one pair")
                    continue
                _, other = normalize_direction(keeper, other)
            elif (keeper.subject_entity, keeper.object_entity) != (
                    other.subject_entity, other.object_entity):
                log(kind, payload, "rejected",
                    "merge across different endpoint pairs")
                continue
            conflicts = keeper.qualifiers.conflicting_keys(other.qualifiers)
            if conflicts:
                log(kind, payload, "rejected",
                    f"qualifier conflict on {', '.join(conflicts)}")
                continue
            merged_evidence = list(keeper.evidence)
            merged_evidence.extend(e for e in other.evidence
                                   if e not in keeper.evidence)
            merged_remarks = list(keeper.remarks)
            merged_remarks.extend(r for r in other.remarks
                                  if r not in keeper.remarks)
            merged = replace(
                keeper,
                qualifiers=keeper.qualifiers.union(other.qualifiers),
                evidence=tuple(merged_evidence),
                provenance_chunks=tuple(set(keeper.provenance_chunks)
                                        | set(other.provenance_chunks)),
                confidence=max(keeper.confidence, other.confidence),
                description=keeper.description or other.description,
                canonical_label=keeper.canonical_label or other.canonical_label,
                rel_cls=keeper.rel_cls or other.rel_cls,
                rel_cls_group=keeper.rel_cls_group or other.rel_cls_group,
                remarks=tuple(merged_remarks))
            state.drafts[ids[0]] = merged
            del state.drafts[ids[1]]
            log(kind, payload, "applied")
        else:
            failures.append(f"unknown action kind {kind!r} skipped")
    return records, failures


def qualifier_conflict_followups(records: Sequence[ActionRecord]) -> list[dict]:
    """Remark actions recording a conflict-rejected merge's dual retention."""
    followups: list[dict] = []
    for record in records:
        if (record.kind == "merge_relations" and record.status == "rejected"
                and record.rejection_reason
                and record.rejection_reason.startswith("qualifier conflict")):
            ids = _ids_of(record.payload)
            for rid, other in ((ids[0], ids[1]), (ids[1], ids[0])):
                followups.append({
                    "action": "add_rel_remark",
                    "relation_ids": [rid],
                    "remark": (f"{record.rejection_reason}; "
                               f"duplicate of {other} retained"),
                    "rationale": "conservative qualifier conflict handling",
                })
    return followups


def _slug(label: str) -> str:
    return re.sub(r"\s+", "_", label.strip().lower())


@dataclass
class RelationSchemaFragment:
    canonical_relations: list[CanonicalRelation]
    relation_classes: list[RelationClass]
    relation_class_groups: list[RelationClassGroup]
    class_of_relation: dict[str, str]
    group_of_relation_class: dict[str, str]


def finalize_relations(state: RelationState) -> tuple[list[RelationInstance],
                                                      RelationSchemaFragment]:
    """Fallback-finalize untouched instances and derive the relation schema.

    Instances missing fields get canonical_label = slug(raw_label),
    rel_cls = canonical_label, rel_cls_group = hint_type. Per-instance class
    and group labels are reconciled per canonical label (most frequent, ties
    to the lexicographically smallest) so the schema maps stay single-valued;
    overridden instances gain a remark.
    """
    for rid in sorted(state.drafts):
        draft = state.drafts[rid]
        updates: dict[str, Any] = {}
        if draft.canonical_label is None:
            updates["canonical_label"] = _slug(draft.raw_label)
        if draft.rel_cls is None:
            updates["rel_cls"] = updates.get("canonical_label", draft.canonical_label)
        if draft.rel_cls_group is None:
            updates["rel_cls_group"] = draft.hint_type
        if updates:
            state.drafts[rid] = replace(draft, **updates)

    def reconcile(pairs: list[tuple[str, str]]) -> dict[str, str]:
        votes: dict[str, dict[str, int]] = {}
        for key, value in pairs:
            votes.setdefault(key, {}).setdefault(value, 0)
            votes[key][value] += 1
        return {key: min(options, key=lambda v: (-options[v], v))
                for key, options in votes.items()}

    cls_label_of = reconcile([(d.canonical_label, d.rel_cls)
                              for d in state.drafts.values()])
    group_label_of = reconcile([(cls_label_of[d.canonical_label], d.rel_cls_group)
                                for d in state.drafts.values()])

    cls_ids = {label: f"rc-{i:04d}"
               for i, label in enumerate(sorted(set(cls_label_of.values())))}
    group_ids = {label: f"rg-{i:04d}"
                 for i, label in enumerate(sorted(set(group_label_of.values())))}

    for rid in sorted(state.drafts):
        draft = state.drafts[rid]
        cls_label = cls_label_of[draft.canonical_label]
        group_label = group_label_of[cls_label]
        remarks = draft.remarks
        if draft.rel_cls != cls_label:
            remarks = remarks + (
                f"rel_cls {draft.rel_cls!r} reconciled to {cls_label!r}",)
        if draft.rel_cls_group != group_label:
            remarks = remarks + (
                f"rel_cls_group {draft.rel_cls_group!r} reconciled to {group_label!r}",)
        state.drafts[rid] = replace(draft, rel_cls=cls_ids[cls_label],
                                    rel_cls_group=group_ids[group_label],
                                    remarks=remarks)

    fragment = RelationSchemaFragment(
        canonical_relations=[
            CanonicalRelation(label=label,
                              description=state.canonical_descriptions.get(label, ""))
            for label in sorted(cls_label_of)],
        relation_classes=[RelationClass(id=cls_ids[label], label=label)
                          for label in sorted(cls_ids)],
        relation_class_groups=[RelationClassGroup(id=group_ids[label], label=label)
                               for label in sorted(group_ids)],
        class_of_relation={label: cls_ids[cls_label_of[label]]
                           for label in sorted(cls_label_of)},
        group_of_relation_class={cls_ids[label]: group_ids[group_label_of[label]]
                                 for label in sorted(cls_ids)},
    )
    return state.snapshot(), fragment


def relation_rep_fields(draft: RelationInstance, entities: Mapping[str, Entity],
                        class_labels: Mapping[str, str],
                        weights: Mapping[str, float]):
    subj = entities.get(draft.subject_entity)
    obj = entities.get(draft.object_entity)
    context_parts = []
    for endpoint in (subj, obj):
        if endpoint is None:
            continue
        label = class_labels.get(endpoint.id)
        context_parts.append(f"{endpoint.canonical_name}"
                             + (f" ({label})" if label else ""))
    qualifier_text = "; ".join(f"{k}: {v}"
                               for k, v in draft.qualifiers.populated().items())
    return [
        ("raw_label", draft.raw_label, weights.get("raw_label", 0.0)),
        ("description", draft.description, weights.get("description", 0.0)),
        ("endpoint_context", " -> ".join(context_parts),
         weights.get("endpoint_context", 0.0)),
        ("hints", draft.hint_type, weights.get("hints", 0.0)),
        ("qualifiers", qualifier_text, weights.get("qualifiers", 0.0)),
    ]


def run_relation_resolution(relations: Sequence[RelationInstance],
                            entities: Sequence[Entity], config: PipelineConfig,
                            chat: ChatProvider, embedder: EmbeddingProvider,
                            class_labels: Optional[Mapping[str, str]] = None,
                            trace: Optional[StageTrace] = None
                            ) -> tuple[list[RelationInstance], RelationSchemaFragment]:
    """Multi-run canonicalization with the plateau contract, then finalize."""
    trace = trace if trace is not None else StageTrace(stage="RelRes")
    state = initial_relation_state(relations)
    by_id = {e.id: e for e in entities}
    class_labels = class_labels or {}
    cfg = config.relation_resolution
    quiet_runs = 0
    for run_no in range(cfg.max_runs):
        if not state.drafts:
            break
        fields = {rid: relation_rep_fields(draft, by_id, class_labels,
                                           config.relation_weights)
                  for rid, draft in state.drafts.items()}
        reps = build_representations(fields, embedder, config.providers.batch_size)
        neighborhoods = make_neighborhoods(reps, config.clustering)
        edits = 0
        for nb in neighborhoods:
            if nb.is_noise and len(nb.member_ids) == 1:
                continue
            for batch_no, members in enumerate(batch(nb, config.clustering.batch_k)):
                live = [rid for rid in members if rid in state.drafts]
                if not live:
                    continue
                items = [{
                    "id": rid,
                    "subject": state.drafts[rid].subject_entity,
                    "object": state.drafts[rid].object_entity,
                    "subject_name": by_id[state.drafts[rid].subject_entity].canonical_name
                    if state.drafts[rid].subject_entity in by_id else "",
                    "object_name": by_id[state.drafts[rid].object_entity].canonical_name
                    if state.drafts[rid].object_entity in by_id else "",
                    "label": state.drafts[rid].raw_label,
                    "hint": state.drafts[rid].hint_type,
                } for rid in live]
                prompt = build_prompt(RELRES_INSTRUCTIONS, {"items": items})
                reply = chat.chat(ChatRequest(
                    prompt=prompt, max_tokens=config.providers.resolution_budget,
                    expect="relation_resolution"))
                failures: list[str] = []
                try:
                    payloads = json.loads(reply)
                    if not isinstance(payloads, list) or not all(
                            isinstance(p, Mapping) and "action" in p for p in payloads):
                        raise ValueError("reply is not an array of action objects")
                except ValueError as exc:
                    failures.append(f"batch treated as no-op: {exc}")
                    payloads = []
                records, apply_failures = apply_relation_actions(
                    payloads, state, allowed_ids=set(live))
                # Conflict-rejected merges keep both instances; record the
                # dual retention through explicit, replayable remark actions.
                followups = qualifier_conflict_followups(records)
                if followups:
                    remark_records, _ = apply_relation_actions(
                        followups, state, allowed_ids=set(live))
                    records = records + remark_records
                trace.log_prompt(f"relres-run{run_no}/{nb.id}/batch{batch_no}",
                                 prompt, reply, failures + apply_failures)
                trace.actions.extend(records)
                edits += sum(1 for r in records if r.status == "applied"
                             and r.kind != "add_rel_remark")
        if edits <= cfg.edit_threshold:
            quiet_runs += 1
            if quiet_runs >= cfg.patience:
                break
        else:
            quiet_runs = 0
    return finalize_relations(state)
