"""Entity schema induction: candidate classes, consolidation, class groups.

Recognition proposes candidate classes per neighborhood and guarantees
coverage through a single-entity fallback pass. Resolution applies the
constrained class-action vocabulary over multiple runs until structural
edits plateau, then finalizes: one class per entity, one group per class.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from .config import PipelineConfig
from .entities import StageTrace, entity_fields, intrinsic_text_of
from .model import ActionRecord, Entity, EntityClass, EntityClassGroup
from .neighborhood import batch, build_representations, make_neighborhoods
from .providers import ChatProvider, ChatRequest, EmbeddingProvider, EmbeddingVector, build_prompt

CLSREC_INSTRUCTIONS = """\
Group the entities below into candidate entity classes. Propose one or more
classes, each with a short label, a one-line description, and the member
entity ids drawn from this batch. Entities that fit no class may be left
unassigned. Reply with only a JSON array:
[{"label": str, "description": str, "member_ids": [str]}]"""

CLSRES_INSTRUCTIONS = """\
The items below are candidate entity classes from one semantic
neighborhood. Consolidate them with the allowed actions: merge_classes,
split_class, create_class, reassign_entities, modify_class (which may set a
class group). Newly created classes may be referenced later in the same
array through their provisional_id. Every action carries a one-line
rationale. Reply with only a JSON array of action objects, [] for none."""


@dataclass
class ClassDraft:
    id: str
    label: str
    description: str
    group_id: Optional[str]
    members: set[str]

    def to_class(self) -> EntityClass:
        return EntityClass(id=self.id, label=self.label, description=self.description,
                           group_id=self.group_id, member_entities=tuple(self.members))


@dataclass
class GroupDraft:
    id: str
    label: str
    description: str = ""


@dataclass
class ClassState:
    drafts: dict[str, ClassDraft] = field(default_factory=dict)
    groups: dict[str, GroupDraft] = field(default_factory=dict)
    class_counter: int = 0
    group_counter: int = 0
    seq: int = 0

    def next_seq(self) -> int:
        current = self.seq
        self.seq += 1
        return current

    def new_class(self, label: str, description: str = "",
                  members: Optional[set[str]] = None,
                  group_id: Optional[str] = None) -> ClassDraft:
        cid = f"ec-{self.class_counter:04d}"
        self.class_counter += 1
        draft = ClassDraft(id=cid, label=label, description=description,
                           group_id=group_id, members=set(members or ()))
        self.drafts[cid] = draft
        return draft

    def group_for_label(self, label: str) -> GroupDraft:
        for gid in sorted(self.groups):
            if self.groups[gid].label == label:
                return self.groups[gid]
        gid = f"eg-{self.group_counter:04d}"
        self.group_counter += 1
        group = GroupDraft(id=gid, label=label)
        self.groups[gid] = group
        return group

    def snapshot_classes(self) -> list[EntityClass]:
        return [self.drafts[cid].to_class() for cid in sorted(self.drafts)]

    def snapshot_groups(self) -> list[EntityClassGroup]:
        return [EntityClassGroup(id=g.id, label=g.label, description=g.description)
                for g in (self.groups[gid] for gid in sorted(self.groups))]


def class_oriented_fields(entity: Entity, weights: Mapping[str, float]):
    evidence = " ".join(entity.remarks[:2])
    return entity_fields(entity.canonical_name, entity.description,
                         entity.type_hint, intrinsic_text_of(entity.intrinsic),
                         evidence or entity.canonical_name, weights)


def recognize_classes(entities: Sequence[Entity], config: PipelineConfig,
                      chat: ChatProvider, embedder: EmbeddingProvider,
                      trace: Optional[StageTrace] = None) -> ClassState:
    """Iteratively propose candidate classes; fallback guarantees coverage."""
    trace = trace if trace is not None else StageTrace(stage="EntClsRes")
    state = ClassState()
    by_id = {e.id: e for e in entities}
    unassigned = set(by_id)
    for round_no in range(config.class_resolution.recognition_rounds):
        if not unassigned:
            break
        fields = {eid: class_oriented_fields(by_id[eid], config.entity_weights)
                  for eid in sorted(unassigned)}
        reps = build_representations(fields, embedder, config.providers.batch_size)
        neighborhoods = make_neighborhoods(reps, config.clustering)
        for nb in neighborhoods:
            if nb.is_noise and len(nb.member_ids) == 1:
                continue
            for batch_no, members in enumerate(batch(nb, config.clustering.batch_k)):
                items = [{
                    "id": eid,
                    "name": by_id[eid].canonical_name,
                    "description": by_id[eid].description,
                    "type_hint": by_id[eid].type_hint,
                } for eid in members]
                prompt = build_prompt(CLSREC_INSTRUCTIONS, {"items": items})
                reply = chat.chat(ChatRequest(
                    prompt=prompt, max_tokens=config.providers.recognition_budget,
                    expect="class_recognition"))
                failures: list[str] = []
                try:
                    candidates = json.loads(reply)
                    if not isinstance(candidates, list):
                        raise ValueError("reply is not a JSON array")
                except ValueError as exc:
                    failures.append(f"parse failure: {exc}")
                    candidates = []
                allowed = set(members)
                for cand in candidates:
                    if not isinstance(cand, Mapping) or not cand.get("label"):
                        failures.append("dropped candidate without label")
                        continue
                    member_ids = {m for m in cand.get("member_ids", ()) if m in allowed}
                    if not member_ids:
                        failures.append(
                            f"dropped candidate {cand.get('label')!r}: no members in batch")
                        continue
                    state.new_class(str(cand["label"]),
                                    str(cand.get("description", "")), member_ids)
                    unassigned -= member_ids
                trace.log_prompt(f"clsrec-round{round_no}/{nb.id}/batch{batch_no}",
                                 prompt, reply, failures)
    # Single-entity fallback pass: every entity belongs to >= 1 candidate.
    for eid in sorted(unassigned):
        entity = by_id[eid]
        label = entity.type_hint.title() if entity.type_hint else entity.canonical_name
        state.new_class(label, "", {eid})
    return state


# ---------------------------------------------------------------------------
# Action application.
# ---------------------------------------------------------------------------

STRUCTURAL_CLASS_KINDS = ("merge_classes", "split_class", "create_class",
                          "reassign_entities")


def apply_class_actions(payloads: Sequence[Mapping[str, Any]], state: ClassState,
                        entity_ids: set[str],
                        allowed_ids: Optional[set[str]] = None
                        ) -> tuple[list[ActionRecord], list[str]]:
    """Validate and execute EntClsRes actions.

    Provisional identifiers introduced earlier in the same payload array
    (``provisional_id`` on create/merge/split parts) resolve in array order.
    When ``allowed_ids`` is given (the class batch the provider saw),
    actions naming classes outside it are rejected; classes created within
    the same array join the scope.
    """
    records: list[ActionRecord] = []
    failures: list[str] = []
    provisional: dict[str, str] = {}
    scope = set(allowed_ids) if allowed_ids is not None else None

    def resolve(cid: Any) -> Any:
        return provisional.get(cid, cid)

    def out_of_scope(ids: Sequence[Any]) -> Optional[Any]:
        if scope is None:
            return None
        for cid in ids:
            if cid not in scope:
                return cid
        return None

    def admit(cid: str) -> None:
        if scope is not None:
            scope.add(cid)

    def log(kind: str, payload: Mapping[str, Any], status: str,
            reason: Optional[str] = None) -> None:
        # Log the resolved form: provisional references are a prompt-local
        # convenience and would not survive an action-by-action replay.
        logged = dict(payload)
        if "class_ids" in logged:
            logged["class_ids"] = [resolve(c) for c in logged["class_ids"]]
        if "class_id" in logged:
            logged["class_id"] = resolve(logged["class_id"])
        if "target_class_id" in logged:
            logged["target_class_id"] = resolve(logged["target_class_id"])
        records.append(ActionRecord(
            stage="EntClsRes", kind=kind, payload=logged,
            rationale=str(payload.get("rationale", "")), status=status,
            sequence_number=state.next_seq(), rejection_reason=reason))

    for payload in payloads:
        kind = payload.get("action")
        if kind == "merge_classes":
            ids = [resolve(c) for c in payload.get("class_ids", ())]
            if len(ids) < 2 or len(set(ids)) != len(ids):
                log(kind, payload, "rejected", "class_ids must be >= 2 distinct ids")
                continue
            outside = out_of_scope(ids)
            if outside is not None:
                log(kind, payload, "rejected", f"id {outside} outside the batch")
                continue
            missing = [c for c in ids if c not in state.drafts]
            if missing:
                log(kind, payload, "rejected", f"unknown class {missing[0]}")
                continue
            drafts = [state.drafts[c] for c in ids]
            survivor = state.drafts[min(ids)]
            members = set()
            for draft in drafts:
                members |= draft.members
            labels = sorted(d.label for d in drafts)
            survivor.label = str(payload.get("label") or labels[0])
            if payload.get("description"):
                survivor.description = str(payload["description"])
            groups = [d.group_id for d in sorted(drafts, key=lambda d: d.id)
                      if d.group_id]
            if payload.get("group"):
                survivor.group_id = state.group_for_label(str(payload["group"])).id
            elif survivor.group_id is None and groups:
                survivor.group_id = groups[0]
            survivor.members = members
            for cid in ids:
                if cid != survivor.id:
                    del state.drafts[cid]
            if payload.get("provisional_id"):
                provisional[str(payload["provisional_id"])] = survivor.id
            log(kind, payload, "applied")
        elif kind == "split_class":
            cid = resolve(payload.get("class_id"))
            if out_of_scope([cid]) is not None:
                log(kind, payload, "rejected", f"id {cid} outside the batch")
                continue
            if cid not in state.drafts:
                log(kind, payload, "rejected", f"unknown class {cid}")
                continue
            parts = payload.get("parts")
            if not isinstance(parts, list) or len(parts) < 2:
                log(kind, payload, "rejected", "split needs >= 2 parts")
                continue
            part_members = [set(p.get("member_ids", ())) for p in parts]
            union: set[str] = set()
            overlap = False
            for members in part_members:
                overlap = overlap or bool(union & members)
                union |= members
            if overlap or union != state.drafts[cid].members or not all(part_members):
                log(kind, payload, "rejected", "parts do not partition the class")
                continue
            original = state.drafts.pop(cid)
            for part, members in zip(parts, part_members):
                draft = state.new_class(str(part.get("label", original.label)),
                                        str(part.get("description", "")), members,
                                        group_id=original.group_id)
                admit(draft.id)
                if part.get("provisional_id"):
                    provisional[str(part["provisional_id"])] = draft.id
            log(kind, payload, "applied")
        elif kind == "create_class":
            members = set(payload.get("member_ids", ()))
            unknown = sorted(members - entity_ids)
            if not payload.get("label"):
                log(kind, payload, "rejected", "create_class requires a label")
                continue
            if not members or unknown:
                reason = (f"unknown entity {unknown[0]}" if unknown
                          else "create_class requires members")
                log(kind, payload, "rejected", reason)
                continue
            draft = state.new_class(str(payload["label"]),
                                    str(payload.get("description", "")), members)
            admit(draft.id)
            if payload.get("group"):
                draft.group_id = state.group_for_label(str(payload["group"])).id
            if payload.get("provisional_id"):
                provisional[str(payload["provisional_id"])] = draft.id
            log(kind, payload, "applied")
        elif kind == "reassign_entities":
            target = resolve(payload.get("target_class_id"))
            moved = list(payload.get("entity_ids", ()))
            if out_of_scope([target]) is not None:
                log(kind, payload, "rejected", f"id {target} outside the batch")
                continue
            if target not in state.drafts:
                log(kind, payload, "rejected", f"unknown class {target}")
                continue
            unknown = [e for e in moved if e not in entity_ids]
            if not moved or unknown:
                reason = (f"unknown entity {unknown[0]}" if unknown
                          else "no entities to reassign")
                log(kind, payload, "rejected", reason)
                continue
            for draft in state.drafts.values():
                if draft.id != target:
                    draft.members -= set(moved)
            state.drafts[target].members |= set(moved)
            log(kind, payload, "applied")
        elif kind == "modify_class":
            cid = resolve(payload.get("class_id"))
            if out_of_scope([cid]) is not None:
                log(kind, payload, "rejected", f"id {cid} outside the batch")
                continue
            if cid not in state.drafts:
                log(kind, payload, "rejected", f"unknown class {cid}")
                continue
            draft = state.drafts[cid]
            if payload.get("new_label") is not None:
                draft.label = str(payload["new_label"])
            if payload.get("new_description") is not None:
                draft.description = str(payload["new_description"])
            if payload.get("new_group") is not None:
                draft.group_id = state.group_for_label(str(payload["new_group"])).id
            log(kind, payload, "applied")
        else:
            failures.append(f"unknown action kind {kind!r} skipped")
    return records, failures


def _is_structural(record: ActionRecord) -> bool:
    if record.status != "applied":
        return False
    if record.kind in STRUCTURAL_CLASS_KINDS:
        return True
    return record.kind == "modify_class" and record.payload.get("new_group") is not None


def class_rep_fields(draft: ClassDraft, entities: Mapping[str, Entity],
                     weights: Mapping[str, float]):
    from .providers import singularize

    members = sorted(draft.members)
    member_names = " ".join(entities[eid].canonical_name for eid in members[:10])
    evidence = " ".join(entities[eid].description for eid in members[:5])[:500]
    # Singularized label keeps surface variants ("City"/"Cities") adjacent.
    label_text = " ".join(singularize(w) for w in draft.label.lower().split())
    return [
        ("label", label_text or draft.label, weights.get("label", 0.0)),
        ("description", draft.description, weights.get("description", 0.0)),
        ("evidence", evidence, weights.get("evidence", 0.0)),
        ("members", member_names, weights.get("members", 0.0)),
    ]


@dataclass
class EntitySchemaFragment:
    classes: list[EntityClass]
    groups: list[EntityClassGroup]
    entity_class_of: dict[str, str]
    group_of_class: dict[str, str]


def finalize_classes(state: ClassState, entities: Sequence[Entity],
                     config: PipelineConfig, embedder: EmbeddingProvider
                     ) -> EntitySchemaFragment:
    """Make class membership a partition of E and group assignment total.

    Multi-assigned entities keep the class whose member centroid is most
    cosine-similar to the entity's class-oriented representation (ties go
    to the smallest class id); empty classes are garbage-collected; classes
    without a group get a singleton group named after the class.
    """
    by_id = {e.id: e for e in entities}
    for cid in sorted(state.drafts):
        state.drafts[cid].members &= set(by_id)
    for cid in [c for c in sorted(state.drafts) if not state.drafts[c].members]:
        del state.drafts[cid]

    covered: set[str] = set()
    for draft in state.drafts.values():
        covered |= draft.members
    for eid in sorted(set(by_id) - covered):
        entity = by_id[eid]
        label = entity.type_hint.title() if entity.type_hint else entity.canonical_name
        state.new_class(label, "", {eid})

    owners: dict[str, list[str]] = {}
    for cid in sorted(state.drafts):
        for eid in state.drafts[cid].members:
            owners.setdefault(eid, []).append(cid)
    multi = {eid: cids for eid, cids in owners.items() if len(cids) > 1}
    if multi:
        fields = {eid: class_oriented_fields(by_id[eid], config.entity_weights)
                  for eid in sorted(by_id)}
        reps = build_representations(fields, embedder, config.providers.batch_size)
        centroids: dict[str, EmbeddingVector] = {}
        for cid in sorted(state.drafts):
            vectors = [reps[eid].combined.values
                       for eid in sorted(state.drafts[cid].members)]
            centroids[cid] = EmbeddingVector.from_raw(np.mean(vectors, axis=0))
        for eid in sorted(multi):
            scored = sorted(
                ((float(np.dot(reps[eid].combined.values, centroids[cid].values)), cid)
                 for cid in multi[eid]),
                key=lambda sc: (-sc[0], sc[1]))
            keeper = scored[0][1]
            for cid in multi[eid]:
                if cid != keeper:
                    state.drafts[cid].members.discard(eid)
        for cid in [c for c in sorted(state.drafts) if not state.drafts[c].members]:
            del state.drafts[cid]

    for cid in sorted(state.drafts):
        draft = state.drafts[cid]
        if draft.group_id is None or draft.group_id not in state.groups:
            draft.group_id = state.group_for_label(draft.label).id

    used_groups = {draft.group_id for draft in state.drafts.values()}
    for gid in [g for g in sorted(state.groups) if g not in used_groups]:
        del state.groups[gid]

    classes = state.snapshot_classes()
    tau = {eid: cls.id for cls in classes for eid in cls.member_entities}
    gamma = {cls.id: cls.group_id for cls in classes}
    return EntitySchemaFragment(classes=classes, groups=state.snapshot_groups(),
                                entity_class_of=tau, group_of_class=gamma)


def run_class_resolution(state: ClassState, entities: Sequence[Entity],
                         config: PipelineConfig, chat: ChatProvider,
                         embedder: EmbeddingProvider,
                         trace: Optional[StageTrace] = None
                         ) -> EntitySchemaFragment:
    """Multi-run consolidation until structural edits plateau, then finalize."""
    trace = trace if trace is not None else StageTrace(stage="EntClsRes")
    by_id = {e.id: e for e in entities}
    cfg = config.class_resolution
    quiet_runs = 0
    for run_no in range(cfg.max_runs):
        if not state.drafts:
            break
        fields = {cid: class_rep_fields(draft, by_id, config.class_weights)
                  for cid, draft in state.drafts.items()}
        reps = build_representations(fields, embedder, config.providers.batch_size)
        neighborhoods = make_neighborhoods(reps, config.clustering)
        edits = 0
        for nb in neighborhoods:
            if nb.is_noise and len(nb.member_ids) == 1:
                continue
            for batch_no, members in enumerate(batch(nb, config.clustering.batch_k)):
                items = [{
                    "id": cid,
                    "label": state.drafts[cid].label,
                    "description": state.drafts[cid].description,
                    "member_count": len(state.drafts[cid].members),
                } for cid in members if cid in state.drafts]
                if not items:
                    continue
                prompt = build_prompt(CLSRES_INSTRUCTIONS, {"items": items})
                reply = chat.chat(ChatRequest(
                    prompt=prompt, max_tokens=config.providers.resolution_budget,
                    expect="class_resolution"))
                failures: list[str] = []
                try:
                    payloads = json.loads(reply)
                    if not isinstance(payloads, list) or not all(
                            isinstance(p, Mapping) and "action" in p for p in payloads):
                        raise ValueError("reply is not an array of action objects")
                except ValueError as exc:
                    failures.append(f"batch treated as no-op: {exc}")
                    payloads = []
                records, apply_failures = apply_class_actions(
                    payloads, state, set(by_id),
                    allowed_ids={item["id"] for item in items})
                trace.log_prompt(f"clsres-run{run_no}/{nb.id}/batch{batch_no}",
                                 prompt, reply, failures + apply_failures)
                trace.actions.extend(records)
                edits += sum(1 for r in records if _is_structural(r))
        if edits <= cfg.edit_threshold:
            quiet_runs += 1
            if quiet_runs >= cfg.patience:
                break
        else:
            quiet_runs = 0
    return finalize_classes(state, entities, config, embedder)
