"""Entity layer: chunk-local recognition and iterative constrained resolution.

Recognition extracts mentions only from the focus chunk (preceding chunks
are context for disambiguation). Resolution loops cluster -> propose ->
apply until merges fall to the configured threshold or the round budget is
exhausted; every edit is validated deterministically and logged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence

from .config import PipelineConfig
from .model import ActionRecord, Chunk, Entity, IntrinsicProperty, Mention
from .neighborhood import FieldSpec, batch, build_representations, make_neighborhoods
from .providers import ChatProvider, ChatRequest, EmbeddingProvider, build_prompt

ENTREC_INSTRUCTIONS = """\
Extract every entity mention from the FOCUS chunk below. Earlier chunks are
given only as context for disambiguation; never extract from them. For each
mention report its exact character span in the focus text, a short
description, an optional broad type hint, a confidence in [0, 1], verbatim
evidence excerpts copied from the focus text, and any explicitly stated
intrinsic properties (typed key-value attributes with evidence).

Reply with only a JSON array of objects:
[{"name": str, "span": [start, end], "description": str, "type_hint": str|null,
  "confidence": float, "evidence": [str], "intrinsic_candidates":
  [{"key": str, "value": str, "value_kind": str, "unit": str|null, "evidence": [str]}]}]"""

ENTRES_INSTRUCTIONS = """\
The items below are candidate co-referent entities from one semantic
neighborhood. Decide which of them denote the same real-world object.
Allowed actions: MergeEntities (merge several into one canonical entity),
ModifyEntity (clarify name/description/type to prevent a wrong merge),
KeepEntity (explicitly keep as-is). Every action must carry a one-line
rationale. Reply with only a JSON array of action objects, [] if nothing
should change."""


@dataclass
class StageTrace:
    """Collects prompts, actions, and failure notes emitted by one stage."""

    stage: str
    prompts: list[dict] = field(default_factory=list)
    actions: list[ActionRecord] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)

    def log_prompt(self, key: str, prompt: str, reply: str,
                   failures: Optional[list[str]] = None) -> None:
        self.prompts.append({
            "stage": self.stage, "key": key, "prompt": prompt, "reply": reply,
            "failures": list(failures or ()),
        })

    def log_failure(self, key: str, message: str) -> None:
        self.failures.append({"stage": self.stage, "key": key, "message": message})


def mention_id(chunk_id: str, index: int) -> str:
    suffix = chunk_id[3:] if chunk_id.startswith("ch-") else chunk_id
    return f"mn-{suffix}-{index:03d}"


def entity_id_for_mention(mid: str) -> str:
    suffix = mid[3:] if mid.startswith("mn-") else mid
    return f"en-{suffix}"


def _clamp01(value: Any, default: float = 1.0) -> float:
    try:
        return min(1.0, max(0.0, float(value)))
    except (TypeError, ValueError):
        return default


def _parse_intrinsic(raw: Any, chunk_text: str) -> list[IntrinsicProperty]:
    out = []
    if not isinstance(raw, list):
        return out
    for item in raw:
        if not isinstance(item, Mapping) or not item.get("key"):
            continue
        evidence = tuple(e for e in item.get("evidence", ()) if e in chunk_text)
        kind = item.get("value_kind", "string")
        try:
            out.append(IntrinsicProperty(
                key=str(item["key"]), value=str(item.get("value", "")),
                value_kind=kind if kind in ("number", "string", "quantity",
                                            "identifier", "date", "other") else "other",
                unit=item.get("unit"), evidence=evidence))
        except ValueError:
            continue
    return out


def recognize_entities(chunk: Chunk, context: Sequence[Chunk],
                       chat: ChatProvider, budget: int = 8000
                       ) -> tuple[list[Mention], list[str], dict]:
    """Run entity recognition on one chunk.

    Returns (mentions, failure notes, prompt log entry). Mentions whose
    span or evidence falls outside the focus chunk are dropped and noted;
    an unparsable reply yields no mentions but does not fail the pipeline.
    """
    payload = {
        "chunk_id": chunk.id,
        "text": chunk.text,
        "context": [{"id": c.id, "text": c.text} for c in context],
    }
    prompt = build_prompt(ENTREC_INSTRUCTIONS, payload)
    reply = chat.chat(ChatRequest(prompt=prompt, max_tokens=budget,
                                  expect="entity_recognition"))
    mentions: list[Mention] = []
    failures: list[str] = []
    try:
        items = json.loads(reply)
        if not isinstance(items, list):
            raise ValueError("reply is not a JSON array")
    except ValueError as exc:
        failures.append(f"parse failure: {exc}")
        items = []
    for item in items:
        if not isinstance(item, Mapping) or not item.get("name"):
            failures.append("dropped mention without a name")
            continue
        name = str(item["name"])
        span = item.get("span")
        if (not isinstance(span, (list, tuple)) or len(span) != 2
                or not (0 <= int(span[0]) < int(span[1]) <= len(chunk.text))):
            located = chunk.text.find(name)
            if located < 0:
                failures.append(f"dropped mention {name!r}: span not in chunk")
                continue
            span = (located, located + len(name))
        span = (int(span[0]), int(span[1]))
        evidence = tuple(str(e) for e in item.get("evidence", ()))
        if any(e not in chunk.text for e in evidence):
            failures.append(f"dropped mention {name!r}: evidence not in chunk")
            continue
        mentions.append(Mention(
            id=mention_id(chunk.id, len(mentions)),
            chunk_id=chunk.id,
            span=span,
            name=name,
            description=str(item.get("description", "")),
            type_hint=(str(item["type_hint"]) if item.get("type_hint") else None),
            confidence=_clamp01(item.get("confidence", 1.0)),
            evidence=evidence,
            intrinsic_candidates=tuple(_parse_intrinsic(
                item.get("intrinsic_candidates"), chunk.text)),
        ))
    entry = {"key": chunk.id, "prompt": prompt, "reply": reply, "failures": failures}
    return mentions, failures, entry


# ---------------------------------------------------------------------------
# Resolution state and action application.
# ---------------------------------------------------------------------------


@dataclass
class EntityDraft:
    id: str
    canonical_name: str
    description: str
    type_hint: Optional[str]
    intrinsic: list[IntrinsicProperty]
    member_mentions: list[str]
    confidence: float
    provenance_chunks: set[str]
    remarks: list[str]

    def to_entity(self, class_id: Optional[str] = None) -> Entity:
        return Entity(
            id=self.id, canonical_name=self.canonical_name,
            description=self.description, type_hint=self.type_hint,
            intrinsic=tuple(self.intrinsic),
            member_mentions=tuple(self.member_mentions),
            confidence=self.confidence,
            provenance_chunks=tuple(self.provenance_chunks),
            class_id=class_id, remarks=tuple(self.remarks))


@dataclass
class EntityState:
    drafts: dict[str, EntityDraft]
    mention_names: dict[str, str]
    mention_evidence: dict[str, str]
    seq: int = 0

    def next_seq(self) -> int:
        current = self.seq
        self.seq += 1
        return current

    def snapshot(self) -> list[Entity]:
        return [self.drafts[eid].to_entity() for eid in sorted(self.drafts)]


def initial_entity_state(mentions: Sequence[Mention]) -> EntityState:
    drafts: dict[str, EntityDraft] = {}
    names: dict[str, str] = {}
    evidence: dict[str, str] = {}
    for mention in sorted(mentions, key=lambda m: m.id):
        eid = entity_id_for_mention(mention.id)
        drafts[eid] = EntityDraft(
            id=eid, canonical_name=mention.name, description=mention.description,
            type_hint=mention.type_hint,
            intrinsic=list(mention.intrinsic_candidates),
            member_mentions=[mention.id], confidence=mention.confidence,
            provenance_chunks={mention.chunk_id}, remarks=[])
        names[mention.id] = mention.name
        evidence[mention.id] = mention.evidence[0] if mention.evidence else mention.name
    return EntityState(drafts=drafts, mention_names=names, mention_evidence=evidence)


def propose_entity_actions(items: Sequence[Mapping[str, Any]], chat: ChatProvider,
                           budget: int = 16000) -> tuple[list[dict], list[str], dict]:
    """Ask the provider for actions over one neighborhood batch."""
    prompt = build_prompt(ENTRES_INSTRUCTIONS, {"items": list(items)})
    reply = chat.chat(ChatRequest(prompt=prompt, max_tokens=budget,
                                  expect="entity_resolution"))
    failures: list[str] = []
    try:
        payloads = json.loads(reply)
        if not isinstance(payloads, list) or not all(
                isinstance(p, Mapping) and "action" in p for p in payloads):
            raise ValueError("reply is not an array of action objects")
    except ValueError as exc:
        failures.append(f"batch treated as no-op: {exc}")
        payloads = []
    entry = {"prompt": prompt, "reply": reply, "failures": failures}
    return [dict(p) for p in payloads], failures, entry


def _merge_intrinsics(drafts: Sequence[EntityDraft]) -> tuple[list[IntrinsicProperty], list[str]]:
    merged: list[IntrinsicProperty] = []
    seen: set[tuple] = set()
    values_by_key: dict[str, set[str]] = {}
    for draft in sorted(drafts, key=lambda d: d.id):
        for prop in draft.intrinsic:
            key = (prop.key, prop.value, prop.value_kind, prop.unit)
            if key in seen:
                continue
            seen.add(key)
            merged.append(prop)
            values_by_key.setdefault(prop.key, set()).add(prop.value)
    remarks = [f"conflicting values for intrinsic {key!r}: all retained"
               for key in sorted(values_by_key) if len(values_by_key[key]) > 1]
    return merged, remarks


def apply_entity_actions(payloads: Sequence[Mapping[str, Any]], state: EntityState,
                         allowed_ids: Optional[set[str]] = None
                         ) -> tuple[list[ActionRecord], list[str]]:
    """Validate and execute EntRes actions; every action is logged.

    When ``allowed_ids`` is given (the batch the provider saw), actions
    naming entities outside it are rejected.
    """
    records: list[ActionRecord] = []
    failures: list[str] = []

    def log(kind: str, payload: Mapping[str, Any], status: str,
            reason: Optional[str] = None) -> None:
        records.append(ActionRecord(
            stage="EntRes", kind=kind, payload=dict(payload),
            rationale=str(payload.get("rationale", "")), status=status,
            sequence_number=state.next_seq(), rejection_reason=reason))

    def out_of_scope(ids: Sequence[str]) -> Optional[str]:
        if allowed_ids is None:
            return None
        for eid in ids:
            if eid not in allowed_ids:
                return eid
        return None

    for payload in payloads:
        kind = payload.get("action")
        if kind == "MergeEntities":
            ids = payload.get("entity_ids")
            if (not isinstance(ids, list) or len(ids) < 2
                    or len(set(ids)) != len(ids)):
                log(kind, payload, "rejected", "entity_ids must be >= 2 distinct ids")
                continue
            outside = out_of_scope(ids)
            if outside is not None:
                log(kind, payload, "rejected", f"id {outside} outside the batch")
                continue
            missing = [eid for eid in ids if eid not in state.drafts]
            if missing:
                log(kind, payload, "rejected", f"unknown or stale id {missing[0]}")
                continue
            drafts = [state.drafts[eid] for eid in ids]
            survivor_id = min(ids)
            member_mentions: list[str] = []
            provenance: set[str] = set()
            remarks: list[str] = []
            for draft in sorted(drafts, key=lambda d: d.id):
                member_mentions.extend(draft.member_mentions)
                provenance |= draft.provenance_chunks
                for remark in draft.remarks:
                    if remark not in remarks:
                        remarks.append(remark)
            intrinsic, conflict_remarks = _merge_intrinsics(drafts)
            for remark in conflict_remarks:
                if remark not in remarks:
                    remarks.append(remark)
            name = payload.get("canonical_name") or min(
                state.mention_names[mid] for mid in member_mentions)
            survivor = state.drafts[survivor_id]
            description = payload.get("canonical_description") or survivor.description
            type_hints = [d.type_hint for d in sorted(drafts, key=lambda d: d.id)
                          if d.type_hint]
            type_hint = payload.get("canonical_type") or (
                type_hints[0] if type_hints else None)
            confidence = max(d.confidence for d in drafts)
            for eid in ids:
                if eid != survivor_id:
                    del state.drafts[eid]
            state.drafts[survivor_id] = EntityDraft(
                id=survivor_id, canonical_name=str(name), description=str(description),
                type_hint=type_hint, intrinsic=intrinsic,
                member_mentions=sorted(member_mentions), confidence=confidence,
                provenance_chunks=provenance, remarks=remarks)
            log(kind, payload, "applied")
        elif kind == "ModifyEntity":
            eid = payload.get("entity_id")
            if out_of_scope([eid]) is not None:
                log(kind, payload, "rejected", f"id {eid} outside the batch")
                continue
            if eid not in state.drafts:
                log(kind, payload, "rejected", f"unknown or stale id {eid}")
                continue
            draft = state.drafts[eid]
            if payload.get("new_name") is not None:
                draft.canonical_name = str(payload["new_name"])
            if payload.get("new_description") is not None:
                draft.description = str(payload["new_description"])
            if payload.get("new_type_hint") is not None:
                draft.type_hint = str(payload["new_type_hint"])
            log(kind, payload, "applied")
        elif kind == "KeepEntity":
            eid = payload.get("entity_id")
            if out_of_scope([eid]) is not None:
                log(kind, payload, "rejected", f"id {eid} outside the batch")
                continue
            if eid not in state.drafts:
                log(kind, payload, "rejected", f"unknown or stale id {eid}")
                continue
            # Advisory only: logged, but does not pin the entity.
            log(kind, payload, "applied")
        else:
            failures.append(f"unknown action kind {kind!r} skipped")
    return records, failures


def entity_fields(name: str, description: str, type_hint: Optional[str],
                  intrinsic_text: str, evidence_text: str,
                  weights: Mapping[str, float]) -> list[FieldSpec]:
    return [
        ("name", name, weights.get("name", 0.0)),
        ("description", description, weights.get("description", 0.0)),
        ("type_hint", type_hint or "", weights.get("type_hint", 0.0)),
        ("intrinsic", intrinsic_text, weights.get("intrinsic", 0.0)),
        ("evidence", evidence_text, weights.get("evidence", 0.0)),
    ]


def intrinsic_text_of(props: Sequence[IntrinsicProperty]) -> str:
    parts = [f"{p.key}: {p.value}" + (f" {p.unit}" if p.unit else "")
             for p in sorted(props, key=lambda p: (p.key, p.value))]
    return "; ".join(parts)


def draft_fields(draft: EntityDraft, state: EntityState,
                 weights: Mapping[str, float]) -> list[FieldSpec]:
    evidence = " ".join(state.mention_evidence.get(mid, "")
                        for mid in draft.member_mentions[:4]).strip()
    return entity_fields(draft.canonical_name, draft.description, draft.type_hint,
                         intrinsic_text_of(draft.intrinsic), evidence[:500], weights)


def run_entity_resolution(mentions: Sequence[Mention], config: PipelineConfig,
                          chat: ChatProvider, embedder: EmbeddingProvider,
                          trace: Optional[StageTrace] = None
                          ) -> tuple[list[Entity], EntityState]:
    """Iterate cluster -> propose -> apply until merges plateau.

    With ``max_rounds`` 0 the identity resolution (one entity per mention)
    is returned unchanged.
    """
    trace = trace if trace is not None else StageTrace(stage="EntRes")
    state = initial_entity_state(mentions)
    cfg = config.entity_resolution
    for round_no in range(cfg.max_rounds):
        if not state.drafts:
            break
        fields = {eid: draft_fields(draft, state, config.entity_weights)
                  for eid, draft in state.drafts.items()}
        reps = build_representations(fields, embedder, config.providers.batch_size)
        neighborhoods = make_neighborhoods(reps, config.clustering)
        merges = 0
        for nb in neighborhoods:
            if nb.is_noise and len(nb.member_ids) == 1:
                continue
            for batch_no, members in enumerate(batch(nb, config.clustering.batch_k)):
                live = [eid for eid in members if eid in state.drafts]
                if not live:
                    continue
                items = [{
                    "id": eid,
                    "name": state.drafts[eid].canonical_name,
                    "description": state.drafts[eid].description,
                    "type_hint": state.drafts[eid].type_hint,
                } for eid in live]
                payloads, failures, entry = propose_entity_actions(
                    items, chat, config.providers.resolution_budget)
                records, apply_failures = apply_entity_actions(
                    payloads, state, allowed_ids=set(live))
                key = f"round{round_no}/{nb.id}/batch{batch_no}"
                trace.log_prompt(key, entry["prompt"], entry["reply"],
                                 failures + apply_failures)
                trace.actions.extend(records)
                merges += sum(1 for r in records
                              if r.kind == "MergeEntities" and r.status == "applied")
        if merges <= cfg.merge_threshold:
            break
    return state.snapshot(), state
