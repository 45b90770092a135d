"""Core type invariants, serialization round-trips, graph validation."""

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from textkg.model import (
    ActionRecord,
    Chunk,
    ContextEnrichedGraph,
    Entity,
    EntityClass,
    EntityClassGroup,
    IntrinsicProperty,
    Mention,
    ModelError,
    Provenance,
    QUALIFIER_KEYS,
    QualifierSet,
    RelationInstance,
    Schema,
    validate_graph,
)

# ---------------------------------------------------------------------------
# Strategies.
# ---------------------------------------------------------------------------

names = st.text(st.characters(whitelist_categories=("Lu", "Ll", "Nd")),
                min_size=1, max_size=12)
texts = st.text(min_size=1, max_size=40)
confidences = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)


@st.composite
def provenances(draw):
    return Provenance(source=draw(names), kind=draw(st.sampled_from(
        ("narrative", "figure", "table", "equation", "other"))),
        page=draw(st.one_of(st.none(), names)),
        region=draw(st.one_of(st.none(), names)))


@st.composite
def intrinsics(draw):
    return IntrinsicProperty(
        key=draw(names), value=draw(texts),
        value_kind=draw(st.sampled_from(
            ("number", "string", "quantity", "identifier", "date", "other"))),
        unit=draw(st.one_of(st.none(), names)),
        evidence=tuple(draw(st.lists(texts, max_size=2))))


@st.composite
def mentions(draw):
    start = draw(st.integers(min_value=0, max_value=50))
    return Mention(
        id=f"mn-{draw(st.integers(0, 999)):03d}", chunk_id="ch-x-0000",
        span=(start, start + draw(st.integers(1, 20))), name=draw(names),
        description=draw(texts), type_hint=draw(st.one_of(st.none(), names)),
        confidence=draw(confidences),
        evidence=tuple(draw(st.lists(texts, max_size=2))),
        intrinsic_candidates=tuple(draw(st.lists(intrinsics(), max_size=2))))


@st.composite
def qualifier_sets(draw):
    values = {key: draw(st.one_of(st.none(), texts)) for key in QUALIFIER_KEYS}
    return QualifierSet(**values)


@st.composite
def entities(draw):
    return Entity(
        id=f"en-{draw(st.integers(0, 999)):03d}", canonical_name=draw(names),
        description=draw(texts), type_hint=draw(st.one_of(st.none(), names)),
        intrinsic=tuple(draw(st.lists(intrinsics(), max_size=2))),
        member_mentions=tuple(draw(st.lists(names, min_size=1, max_size=3))),
        confidence=draw(confidences),
        provenance_chunks=tuple(draw(st.lists(names, max_size=3))),
        class_id=draw(st.one_of(st.none(), names)),
        remarks=tuple(draw(st.lists(texts, max_size=2))))


@st.composite
def relations(draw):
    return RelationInstance(
        id=f"rl-{draw(st.integers(0, 999)):03d}",
        subject_entity=draw(names), object_entity=draw(names),
        raw_label=draw(texts), description=draw(texts),
        hint_type=draw(st.sampled_from(("ROLE", "CAUSALITY", "ASSOCIATION"))),
        qualifiers=draw(qualifier_sets()), confidence=draw(confidences),
        provenance_chunks=tuple(draw(st.lists(names, min_size=1, max_size=3))),
        evidence=tuple(draw(st.lists(texts, max_size=2))),
        canonical_label=draw(st.one_of(st.none(), names)),
        rel_cls=draw(st.one_of(st.none(), names)),
        rel_cls_group=draw(st.one_of(st.none(), names)),
        remarks=tuple(draw(st.lists(texts, max_size=2))))


# ---------------------------------------------------------------------------
# Round trips.
# ---------------------------------------------------------------------------


@settings(max_examples=60)
@given(mentions())
def test_mention_round_trip(mention):
    assert Mention.from_record(json.loads(json.dumps(mention.to_record()))) == mention


@settings(max_examples=60)
@given(entities())
def test_entity_round_trip(entity):
    assert Entity.from_record(json.loads(json.dumps(entity.to_record()))) == entity


@settings(max_examples=60)
@given(relations())
def test_relation_round_trip(relation):
    rec = json.loads(json.dumps(relation.to_record()))
    assert RelationInstance.from_record(rec) == relation


@settings(max_examples=40)
@given(st.lists(texts, min_size=1, max_size=5), provenances())
def test_chunk_round_trip(words, prov):
    text = " ".join(words)
    chunk = Chunk(id="ch-a-0000", doc_id="a", text=text,
                  token_count=max(1, len(text.split())), provenance=(prov,))
    assert Chunk.from_record(json.loads(json.dumps(chunk.to_record()))) == chunk


@settings(max_examples=60)
@given(qualifier_sets())
def test_qualifier_serialization_always_eight_keys(qs):
    record = qs.to_record()
    assert tuple(record) == QUALIFIER_KEYS
    assert QualifierSet.from_record(record) == qs


def test_qualifier_eight_keys_even_when_sparse():
    record = QualifierSet(TemporalQualifier="during ramp-up").to_record()
    assert len(record) == 8
    assert record["TemporalQualifier"] == "during ramp-up"
    assert all(record[k] is None for k in QUALIFIER_KEYS
               if k != "TemporalQualifier")


def test_schema_round_trip():
    schema = Schema(
        entity_classes=(EntityClass(id="ec-0000", label="City", group_id="eg-0000",
                                    member_entities=("en-1",)),),
        entity_class_groups=(EntityClassGroup(id="eg-0000", label="Place"),),
        entity_class_of={"en-1": "ec-0000"},
        group_of_class={"ec-0000": "eg-0000"})
    assert Schema.from_records(schema.to_records()) == schema


# ---------------------------------------------------------------------------
# Construction invariants.
# ---------------------------------------------------------------------------


def test_entity_requires_members():
    with pytest.raises(ModelError):
        Entity(id="en-0", canonical_name="x", member_mentions=())


def test_relation_hint_vocabulary_enforced():
    with pytest.raises(ModelError):
        RelationInstance(id="rl-0", subject_entity="a", object_entity="b",
                         raw_label="x", hint_type="NOT_A_HINT",
                         provenance_chunks=("ch-1",))


def test_confidence_range_enforced():
    with pytest.raises(ModelError):
        Mention(id="mn-0", chunk_id="c", span=(0, 1), name="x", confidence=1.5)


def test_action_record_vocabulary_enforced():
    with pytest.raises(ModelError):
        ActionRecord(stage="EntRes", kind="merge_classes", payload={},
                     rationale="", status="applied", sequence_number=0)


def test_self_loops_permitted():
    rel = RelationInstance(id="rl-0", subject_entity="a", object_entity="a",
                           raw_label="refers to", provenance_chunks=("ch-1",))
    assert rel.subject_entity == rel.object_entity


# ---------------------------------------------------------------------------
# validate_graph examples.
# ---------------------------------------------------------------------------


def _entity(eid, name, class_id=None):
    return Entity(id=eid, canonical_name=name, description=f"a {name}",
                  member_mentions=(f"m-{eid}",), provenance_chunks=("ch-1",),
                  class_id=class_id)


def test_validate_well_formed_graph_is_empty():
    graph = ContextEnrichedGraph(
        entities=(_entity("en-1", "a"), _entity("en-2", "b")),
        relations=(RelationInstance(id="rl-1", subject_entity="en-1",
                                    object_entity="en-2", raw_label="links",
                                    provenance_chunks=("ch-1",)),))
    assert validate_graph(graph).ok


def test_validate_dangling_endpoint():
    graph = ContextEnrichedGraph(
        entities=(_entity("en-1", "a"),),
        relations=(RelationInstance(id="rl-1", subject_entity="en-1",
                                    object_entity="en-missing", raw_label="x",
                                    provenance_chunks=("ch-1",)),))
    report = validate_graph(graph)
    dangles = [v for v in report.violations if v.invariant == "dangling-endpoint"]
    assert len(dangles) == 1 and dangles[0].offender_id == "rl-1"


def test_validate_tau_ent_not_total_after_schema_stage():
    # Independent oracle: scan the entity list for missing class ids.
    entities = (_entity("en-1", "a", class_id="ec-0000"), _entity("en-2", "b"))
    schema = Schema(
        entity_classes=(EntityClass(id="ec-0000", label="Thing",
                                    group_id="eg-0000",
                                    member_entities=("en-1",)),),
        entity_class_groups=(EntityClassGroup(id="eg-0000", label="Thing"),),
        entity_class_of={"en-1": "ec-0000"},
        group_of_class={"ec-0000": "eg-0000"})
    graph = ContextEnrichedGraph(entities=entities, schema=schema)
    expected_missing = [e.id for e in entities if e.class_id is None]
    report = validate_graph(graph, require_schema=True)
    flagged = sorted({v.offender_id for v in report.violations
                      if v.invariant == "tau_ent-total"})
    assert flagged == sorted(expected_missing)


def test_validate_empty_description_is_warning_not_violation():
    entity = Entity(id="en-1", canonical_name="a", description="",
                    member_mentions=("m-1",), provenance_chunks=("ch-1",))
    report = validate_graph(ContextEnrichedGraph(entities=(entity,)))
    assert report.ok
    assert any(w.invariant == "description" for w in report.warnings)


def test_validate_provenance_closure_against_chunk_store():
    graph = ContextEnrichedGraph(entities=(_entity("en-1", "a"),))
    ok = validate_graph(graph, chunk_ids={"ch-1"})
    missing = validate_graph(graph, chunk_ids={"ch-2"})
    assert ok.ok and not missing.ok
