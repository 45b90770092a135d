"""Entity recognition and constrained-action resolution."""

import itertools
import json
from collections import Counter

from textkg.config import PipelineConfig
from textkg.entities import (
    StageTrace,
    apply_entity_actions,
    initial_entity_state,
    propose_entity_actions,
    recognize_entities,
    run_entity_resolution,
)
from textkg.model import Chunk, Mention, Provenance
from textkg.providers import StubChatProvider, StubEmbeddingProvider, prompt_hash


def make_chunk(text: str, doc: str = "d", ordinal: int = 0) -> Chunk:
    return Chunk(id=f"ch-{doc}-{ordinal:04d}", doc_id=doc, text=text,
                 token_count=max(1, len(text.split())),
                 provenance=(Provenance(source=doc),))


def make_mention(i: int, name: str, chunk: str = "ch-d-0000", **kw) -> Mention:
    return Mention(id=f"mn-d-0000-{i:03d}", chunk_id=chunk, span=(0, len(name)),
                   name=name, **kw)


def threshold_config() -> PipelineConfig:
    config = PipelineConfig()
    config.clustering.method = "threshold"
    return config


# ---------------------------------------------------------------------------
# recognize_entities.
# ---------------------------------------------------------------------------


def test_recognize_entities_rule_oracle():
    chunk = make_chunk("Alice works at Acme.")
    mentions, failures, _ = recognize_entities(chunk, [], StubChatProvider())
    assert [m.name for m in mentions] == ["Alice", "Acme"]
    for m in mentions:
        start, end = m.span
        assert chunk.text[start:end] == m.name
        assert all(e in chunk.text for e in m.evidence)
    assert not failures


def test_recognize_entities_empty_when_no_capitalized_spans():
    chunk = make_chunk("the pump hums along, nothing notable here.")
    mentions, _, _ = recognize_entities(chunk, [], StubChatProvider())
    assert mentions == []


def _canned_provider(chunk, items):
    from textkg.entities import ENTREC_INSTRUCTIONS
    from textkg.providers import build_prompt

    payload = {"chunk_id": chunk.id, "text": chunk.text, "context": []}
    prompt = build_prompt(ENTREC_INSTRUCTIONS, payload)
    return StubChatProvider(canned={prompt_hash(prompt): json.dumps(items)})


def test_mention_with_foreign_evidence_dropped_and_logged():
    chunk = make_chunk("Alice works at Acme.")
    provider = _canned_provider(chunk, [
        {"name": "Alice", "span": [0, 5], "evidence": ["not in the chunk"]},
        {"name": "Acme", "span": [15, 19], "evidence": ["Alice works at Acme."]},
    ])
    mentions, failures, _ = recognize_entities(chunk, [], provider)
    assert [m.name for m in mentions] == ["Acme"]
    assert any("evidence" in f for f in failures)


def test_unparsable_reply_recorded_and_pipeline_continues():
    chunk = make_chunk("Alice works at Acme.")
    provider = _canned_provider(chunk, None)
    provider.canned[list(provider.canned)[0]] = "not json at all"
    mentions, failures, _ = recognize_entities(chunk, [], provider)
    assert mentions == []
    assert any("parse failure" in f for f in failures)


def test_mention_span_recovered_from_name_when_missing():
    chunk = make_chunk("Alice works at Acme.")
    provider = _canned_provider(chunk, [{"name": "Acme"}])
    mentions, _, _ = recognize_entities(chunk, [], provider)
    assert mentions[0].span == (15, 19)


# ---------------------------------------------------------------------------
# propose / apply.
# ---------------------------------------------------------------------------


def test_propose_merge_for_surface_variants():
    items = [{"id": "en-a", "name": "IBM", "description": "", "type_hint": None},
             {"id": "en-b", "name": "I.B.M.", "description": "", "type_hint": None}]
    payloads, failures, _ = propose_entity_actions(items, StubChatProvider())
    assert len(payloads) == 1
    assert payloads[0]["action"] == "MergeEntities"
    assert sorted(payloads[0]["entity_ids"]) == ["en-a", "en-b"]
    assert not failures


def test_propose_singleton_batch_noop():
    items = [{"id": "en-a", "name": "IBM", "description": "", "type_hint": None}]
    payloads, _, _ = propose_entity_actions(items, StubChatProvider())
    assert payloads == []


def test_merge_unions_mentions_and_provenance():
    mentions = [make_mention(0, "IBM", chunk="ch-d-0000"),
                make_mention(1, "I.B.M.", chunk="ch-d-0001")]
    mentions[1] = Mention(id="mn-d-0001-000", chunk_id="ch-d-0001",
                          span=(0, 6), name="I.B.M.")
    state = initial_entity_state(mentions)
    ids = sorted(state.drafts)
    records, _ = apply_entity_actions([{
        "action": "MergeEntities", "entity_ids": ids,
        "canonical_name": "IBM", "rationale": "same company"}], state)
    assert records[0].status == "applied"
    assert len(state.drafts) == 1
    merged = state.drafts[min(ids)]
    assert sorted(merged.member_mentions) == sorted(m.id for m in mentions)
    assert merged.provenance_chunks == {"ch-d-0000", "ch-d-0001"}
    assert merged.canonical_name == "IBM"


def test_modify_entity_rewrites_only_non_null_fields():
    state = initial_entity_state([make_mention(0, "Pump",
                                               description="old words")])
    eid = next(iter(state.drafts))
    records, _ = apply_entity_actions([{
        "action": "ModifyEntity", "entity_id": eid, "new_name": None,
        "new_description": "pump controller", "rationale": "clarify"}], state)
    assert records[0].status == "applied"
    assert state.drafts[eid].canonical_name == "Pump"
    assert state.drafts[eid].description == "pump controller"


def test_stale_id_rejected_with_replay_oracle():
    mentions = [make_mention(i, name) for i, name in
                enumerate(["A", "B", "C"])]
    state = initial_entity_state(mentions)
    ids = sorted(state.drafts)
    actions = [
        {"action": "MergeEntities", "entity_ids": [ids[0], ids[1]],
         "rationale": "first"},
        {"action": "MergeEntities", "entity_ids": [ids[1], ids[2]],
         "rationale": "second uses stale id"},
    ]
    records, _ = apply_entity_actions(actions, state)
    assert [r.status for r in records] == ["applied", "rejected"]
    assert "stale" in records[1].rejection_reason

    # Replay oracle: applying one by one gives the same end state.
    replay_state = initial_entity_state(mentions)
    for action in actions:
        apply_entity_actions([action], replay_state)
    assert {eid: sorted(d.member_mentions)
            for eid, d in state.drafts.items()} == {
        eid: sorted(d.member_mentions)
        for eid, d in replay_state.drafts.items()}


def test_payload_with_unknown_id_rejected_at_apply_time():
    state = initial_entity_state([make_mention(0, "A"), make_mention(1, "B")])
    records, _ = apply_entity_actions([{
        "action": "MergeEntities",
        "entity_ids": ["en-d-0000-000", "en-not-in-batch"],
        "rationale": ""}], state)
    assert records[0].status == "rejected"
    assert "unknown or stale" in records[0].rejection_reason


def test_payload_naming_id_outside_batch_rejected():
    # The id exists in the corpus but was not shown in this batch.
    state = initial_entity_state([make_mention(0, "A"), make_mention(1, "A"),
                                  make_mention(2, "A")])
    ids = sorted(state.drafts)
    batch_scope = set(ids[:2])
    records, _ = apply_entity_actions([{
        "action": "MergeEntities", "entity_ids": [ids[0], ids[2]],
        "rationale": ""}], state, allowed_ids=batch_scope)
    assert records[0].status == "rejected"
    assert "outside the batch" in records[0].rejection_reason
    assert len(state.drafts) == 3


def test_intrinsic_conflicts_keep_both_values_with_remark():
    from textkg.model import IntrinsicProperty

    m0 = Mention(id="mn-d-0000-000", chunk_id="ch-d-0000", span=(0, 4),
                 name="Pump", intrinsic_candidates=(
                     IntrinsicProperty(key="mass", value="120", unit="kg"),))
    m1 = Mention(id="mn-d-0000-001", chunk_id="ch-d-0000", span=(0, 4),
                 name="Pump", intrinsic_candidates=(
                     IntrinsicProperty(key="mass", value="130", unit="kg"),))
    state = initial_entity_state([m0, m1])
    ids = sorted(state.drafts)
    apply_entity_actions([{"action": "MergeEntities", "entity_ids": ids,
                           "rationale": ""}], state)
    merged = state.drafts[min(ids)]
    values = sorted(p.value for p in merged.intrinsic if p.key == "mass")
    assert values == ["120", "130"]
    assert any("conflicting values" in r for r in merged.remarks)


def test_keep_entity_is_advisory_only():
    state = initial_entity_state([make_mention(0, "A")])
    eid = next(iter(state.drafts))
    before = dict(state.drafts)
    records, _ = apply_entity_actions([{
        "action": "KeepEntity", "entity_id": eid, "rationale": "fine"}], state)
    assert records[0].status == "applied"
    assert state.drafts == before


# ---------------------------------------------------------------------------
# run_entity_resolution.
# ---------------------------------------------------------------------------


def test_no_similar_pairs_identity_resolution_terminates_round_one():
    mentions = [make_mention(i, name) for i, name in
                enumerate(["Alpha", "Bravo", "Charlie", "Delta"])]
    trace = StageTrace(stage="EntRes")
    entities, _ = run_entity_resolution(mentions, threshold_config(),
                                        StubChatProvider(),
                                        StubEmbeddingProvider(), trace)
    assert len(entities) == len(mentions)
    assert sum(1 for a in trace.actions
               if a.kind == "MergeEntities" and a.status == "applied") == 0


def test_three_duplicate_mentions_become_one_entity():
    mentions = [make_mention(i, "Acme Corporation") for i in range(3)]
    entities, _ = run_entity_resolution(mentions, threshold_config(),
                                        StubChatProvider(),
                                        StubEmbeddingProvider())
    assert len(entities) == 1
    assert sorted(entities[0].member_mentions) == sorted(m.id for m in mentions)


def test_max_rounds_zero_is_identity_resolution():
    config = threshold_config()
    config.entity_resolution.max_rounds = 0
    mentions = [make_mention(i, "Acme") for i in range(3)]
    entities, _ = run_entity_resolution(mentions, config, StubChatProvider(),
                                        StubEmbeddingProvider())
    assert len(entities) == 3


def test_mention_conservation_and_resolvedent_total(pipeline_run):
    graph = pipeline_run["graph"]
    store = pipeline_run["store"]
    mentions = [Mention.from_record(r) for r in store.read_records("mentions")]
    owned = Counter()
    for entity in graph.entities:
        owned.update(entity.member_mentions)
    assert owned == Counter(m.id for m in mentions)  # conservation + totality
    assert all(count == 1 for count in owned.values())

    # E(c) computed from ResolvedEnt matches a brute-force scan of M(c).
    resolved_ent = {mid: e.id for e in graph.entities
                    for mid in e.member_mentions}
    for chunk_id in {m.chunk_id for m in mentions}:
        mentions_in_chunk = [m for m in mentions if m.chunk_id == chunk_id]
        via_map = {resolved_ent[m.id] for m in mentions_in_chunk}
        brute = {e.id for e in graph.entities
                 if any(m.id in e.member_mentions for m in mentions_in_chunk)}
        assert via_map == brute


def test_entity_count_never_increases_across_rounds():
    mentions = [make_mention(i, name) for i, name in enumerate(
        ["Acme", "Acme", "Beta Corp", "Beta Corp", "Gamma", "Acme"])]
    config = threshold_config()
    trace = StageTrace(stage="EntRes")
    run_entity_resolution(mentions, config, StubChatProvider(),
                          StubEmbeddingProvider(), trace)
    count = len(mentions)
    for record in sorted(trace.actions, key=lambda a: a.sequence_number):
        if record.kind == "MergeEntities" and record.status == "applied":
            count -= len(record.payload["entity_ids"]) - 1
        assert count <= len(mentions)
    assert count >= 1


def test_merge_order_insensitive_at_fixpoint():
    """Any permutation of batch processing yields the same final partition."""
    names = ["Acme", "Beta", "Acme", "Gamma", "Beta", "Acme"]
    mentions = [make_mention(i, name) for i, name in enumerate(names)]
    chat = StubChatProvider()

    def final_partition(order_key):
        state = initial_entity_state(mentions)
        changed = True
        while changed:
            changed = False
            ids = sorted(state.drafts)
            batches = [ids[i:i + 2] for i in range(0, len(ids), 2)]
            for index in order_key(len(batches)):
                batch_ids = [i for i in batches[index] if i in state.drafts]
                if len(batch_ids) < 2:
                    continue
                items = [{"id": eid, "name": state.drafts[eid].canonical_name,
                          "description": "", "type_hint": None}
                         for eid in batch_ids]
                payloads, _, _ = propose_entity_actions(items, chat)
                records, _ = apply_entity_actions(payloads, state,
                                                  allowed_ids=set(batch_ids))
                changed = changed or any(r.status == "applied"
                                         and r.kind == "MergeEntities"
                                         for r in records)
        return frozenset(frozenset(d.member_mentions)
                         for d in state.drafts.values())

    orders = [lambda n, p=perm: [i for i in p if i < n]
              for perm in itertools.permutations(range(3))]
    partitions = {final_partition(order) for order in orders}
    assert len(partitions) == 1
