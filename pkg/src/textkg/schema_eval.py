"""Ontology-held-out schema evaluation.

The reference ontology is introduced only after schema induction. Active
anchors (relations in the scope's gold triples plus their domain/range
concepts, frequency weighted) are aligned to the induced schema through a
retrieve-verify procedure; coverage, frequency-weighted MRR@5, direction-
relaxed domain/range consistency, and the granularity distribution are
reported. Low-confidence judgements are routed to an audit log.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from .config import PipelineConfig
from .model import ContextEnrichedGraph
from .neighborhood import build_representations
from .providers import ChatProvider, ChatRequest, EmbeddingProvider, build_prompt, label_tokens

VERIFY_INSTRUCTIONS = """\
Judge how the reference ontology anchor relates to the candidate element of
an induced schema, considering the candidate's hierarchy level and context.
Answer with one of Equivalent (same concept), Narrower (candidate is a more
specific refinement of the anchor), Broader (candidate is more general), or
Unrelated, plus a confidence in [0, 1]. Reply with only a JSON object
{"label": str, "confidence": float}."""

JUDGEMENT_LABELS = ("Equivalent", "Narrower", "Broader", "Unrelated")
COMPATIBLE = ("Equivalent", "Narrower")

PRIMITIVE_DATATYPES = frozenset({
    "string", "integer", "decimal", "float", "double", "boolean", "date",
    "datetime", "gyear", "gmonth", "anyuri", "time",
})


class SchemaEvalError(Exception):
    pass


def is_primitive(label: str) -> bool:
    return label.startswith("xsd:") or label.lower() in PRIMITIVE_DATATYPES


@dataclass(frozen=True)
class OntologyConcept:
    label: str
    description: str = ""


@dataclass(frozen=True)
class OntologyRelation:
    label: str
    domain: str
    range: str
    description: str = ""


@dataclass(frozen=True)
class ReferenceOntology:
    concepts: tuple[OntologyConcept, ...]
    relations: tuple[OntologyRelation, ...]

    def __post_init__(self) -> None:
        declared = {c.label for c in self.concepts}
        for rel in self.relations:
            for endpoint in (rel.domain, rel.range):
                if endpoint not in declared and not is_primitive(endpoint):
                    raise SchemaEvalError(
                        f"relation {rel.label!r} references undeclared "
                        f"concept {endpoint!r}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ReferenceOntology":
        concepts = tuple(
            OntologyConcept(label=c["label"], description=c.get("description", ""))
            if isinstance(c, Mapping) else OntologyConcept(label=c)
            for c in data.get("concepts", ()))
        relations = tuple(OntologyRelation(
            label=r["label"], domain=r["domain"], range=r["range"],
            description=r.get("description", "")) for r in data.get("relations", ()))
        return cls(concepts=concepts, relations=relations)


@dataclass(frozen=True)
class GoldTriple:
    sid: str
    subject: str
    relation: str
    object: str
    split: str = "train"

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "GoldTriple":
        return cls(sid=str(rec.get("sid", "")), subject=rec["subject"],
                   relation=rec["relation"], object=rec["object"],
                   split=rec.get("split", "train"))


@dataclass(frozen=True)
class Anchor:
    kind: str              # "concept" | "relation"
    ref: str               # ontology label
    weight: float

    def __post_init__(self) -> None:
        if self.weight <= 0:
            raise SchemaEvalError(f"anchor {self.ref!r} must have positive weight")


def scope_triples(triples: Sequence[GoldTriple], scope: str) -> list[GoldTriple]:
    if scope == "source":
        return [t for t in triples if t.split == "train"]
    if scope == "heldout":
        return [t for t in triples if t.split == "test"]
    if scope == "combined":
        return list(triples)
    raise SchemaEvalError(f"unknown scope {scope!r}")


def active_anchors(ontology: ReferenceOntology,
                   triples: Sequence[GoldTriple]) -> list[Anchor]:
    """Relations appearing in the gold triples plus their domain/range
    concepts, frequency weighted; primitive datatypes are excluded."""
    by_label = {r.label: r for r in ontology.relations}
    freq: Counter[str] = Counter()
    for triple in triples:
        if triple.relation not in by_label:
            raise SchemaEvalError(f"gold triple cites unknown relation "
                                  f"{triple.relation!r}")
        freq[triple.relation] += 1
    concept_weight: Counter[str] = Counter()
    for label, count in freq.items():
        rel = by_label[label]
        for endpoint in (rel.domain, rel.range):
            if not is_primitive(endpoint):
                concept_weight[endpoint] += count
    anchors = [Anchor(kind="concept", ref=label, weight=float(weight))
               for label, weight in sorted(concept_weight.items())]
    anchors.extend(Anchor(kind="relation", ref=label, weight=float(count))
                   for label, count in sorted(freq.items()))
    return anchors


# ---------------------------------------------------------------------------
# Induced-schema index.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SchemaElement:
    id: str
    kind: str              # "entity" | "relation"
    level: int             # 1 finest
    label: str
    variants: tuple[str, ...] = ()
    context: str = ""


@dataclass
class SchemaIndex:
    elements: dict[str, SchemaElement] = field(default_factory=dict)
    entity_chain: dict[str, tuple[str, ...]] = field(default_factory=dict)
    relation_signatures: dict[str, set[tuple[str, str]]] = field(default_factory=dict)
    canonicals_of_element: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def of_kind(self, kind: str) -> list[SchemaElement]:
        return [self.elements[eid] for eid in sorted(self.elements)
                if self.elements[eid].kind == kind]


def build_schema_index(graph: ContextEnrichedGraph) -> SchemaIndex:
    index = SchemaIndex()
    schema = graph.schema
    group_labels = {g.id: g.label for g in schema.entity_class_groups}
    members_of_group: dict[str, list[str]] = {}
    names = {e.id: e.canonical_name for e in graph.entities}

    for cls in schema.entity_classes:
        sample = ", ".join(names.get(eid, eid) for eid in cls.member_entities[:3])
        context = " ".join(filter(None, (cls.description,
                                         group_labels.get(cls.group_id, ""),
                                         sample)))
        index.elements[cls.id] = SchemaElement(
            id=cls.id, kind="entity", level=1, label=cls.label,
            variants=(cls.label,), context=context or cls.label)
        chain = [cls.id]
        if cls.group_id:
            chain.append(cls.group_id)
            members_of_group.setdefault(cls.group_id, []).append(cls.label)
        index.entity_chain[cls.id] = tuple(chain)
    for group in schema.entity_class_groups:
        member_labels = " ".join(sorted(members_of_group.get(group.id, ())))
        index.elements[group.id] = SchemaElement(
            id=group.id, kind="entity", level=2, label=group.label,
            variants=(group.label,), context=(group.description or member_labels
                                              or group.label))

    raw_variants: dict[str, set[str]] = {}
    for rel in graph.relations:
        if rel.canonical_label:
            raw_variants.setdefault(rel.canonical_label, set()).add(rel.raw_label)
            subj_cls = graph.schema.entity_class_of.get(rel.subject_entity)
            obj_cls = graph.schema.entity_class_of.get(rel.object_entity)
            if subj_cls and obj_cls:
                index.relation_signatures.setdefault(
                    rel.canonical_label, set()).add((subj_cls, obj_cls))

    cls_labels = {c.id: c.label for c in schema.relation_classes}
    grp_labels = {g.id: g.label for g in schema.relation_class_groups}
    ent_cls_labels = {c.id: c.label for c in schema.entity_classes}
    canonicals_by_cls: dict[str, list[str]] = {}
    for canonical in schema.canonical_relations:
        element_id = f"cr:{canonical.label}"
        cls_id = schema.class_of_relation.get(canonical.label)
        signature_text = " ".join(
            sorted({f"{ent_cls_labels.get(s, s)} -> {ent_cls_labels.get(o, o)}"
                    for s, o in index.relation_signatures.get(canonical.label, ())}))
        context = " ".join(filter(None, (
            canonical.description, cls_labels.get(cls_id, ""), signature_text)))
        index.elements[element_id] = SchemaElement(
            id=element_id, kind="relation", level=1, label=canonical.label,
            variants=tuple(sorted(raw_variants.get(canonical.label,
                                                   {canonical.label}))),
            context=context or canonical.label)
        index.canonicals_of_element[element_id] = (canonical.label,)
        if cls_id:
            canonicals_by_cls.setdefault(cls_id, []).append(canonical.label)
    for cls in schema.relation_classes:
        canonicals = tuple(sorted(canonicals_by_cls.get(cls.id, ())))
        group_id = schema.group_of_relation_class.get(cls.id)
        index.elements[cls.id] = SchemaElement(
            id=cls.id, kind="relation", level=2, label=cls.label,
            variants=canonicals or (cls.label,),
            context=(cls.description or grp_labels.get(group_id, "")
                     or cls.label))
        index.canonicals_of_element[cls.id] = canonicals
    canonicals_by_group: dict[str, list[str]] = {}
    for cls in schema.relation_classes:
        group_id = schema.group_of_relation_class.get(cls.id)
        if group_id:
            canonicals_by_group.setdefault(group_id, []).extend(
                canonicals_by_cls.get(cls.id, ()))
    for group in schema.relation_class_groups:
        canonicals = tuple(sorted(canonicals_by_group.get(group.id, ())))
        index.elements[group.id] = SchemaElement(
            id=group.id, kind="relation", level=3, label=group.label,
            variants=canonicals or (group.label,),
            context=group.description or group.label)
        index.canonicals_of_element[group.id] = canonicals
    return index


# ---------------------------------------------------------------------------
# Retrieve, cap, verify.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Candidate:
    element_id: str
    similarity: float
    rank: int


def _spaced(label: str) -> str:
    """Tokenized, singularized label text for retrieval embeddings, so
    surface variants (Cities/City, worksAt/works_at) compare equal."""
    from .providers import singularize

    return " ".join(singularize(t) for t in label_tokens(label)) or label


def anchor_examples(ontology: ReferenceOntology, triples: Sequence[GoldTriple]
                    ) -> dict[str, str]:
    """Surface evidence per anchor ref, from the given (source) triples."""
    by_label = {r.label: r for r in ontology.relations}
    texts: dict[str, list[str]] = {}
    for triple in triples:
        rel = by_label[triple.relation]
        sample = f"{triple.subject} {_spaced(triple.relation)} {triple.object}"
        texts.setdefault(triple.relation, []).append(sample)
        if not is_primitive(rel.domain):
            texts.setdefault(rel.domain, []).append(triple.subject)
        if not is_primitive(rel.range):
            texts.setdefault(rel.range, []).append(triple.object)
    return {ref: " ".join(sorted(set(samples))[:5])
            for ref, samples in texts.items()}


def retrieve_candidates(anchor: Anchor, index: SchemaIndex,
                        embedder: EmbeddingProvider, config: PipelineConfig,
                        ontology: ReferenceOntology,
                        examples: Optional[Mapping[str, str]] = None
                        ) -> list[Candidate]:
    """Rank same-kind schema elements by weighted multi-evidence cosine."""
    examples = examples or {}
    cfg = config.alignment
    aw = config.alignment_anchor_weights
    ew = config.alignment_element_weights
    target_kind = "entity" if anchor.kind == "concept" else "relation"
    elements = index.of_kind(target_kind)
    if not elements:
        return []

    if anchor.kind == "relation":
        rel = next(r for r in ontology.relations if r.label == anchor.ref)
        signature = f"{_spaced(rel.domain)} {_spaced(rel.range)}"
    else:
        incident = [r.label for r in ontology.relations
                    if anchor.ref in (r.domain, r.range)]
        signature = " ".join(_spaced(label) for label in sorted(incident))
    anchor_fields = [
        ("label", _spaced(anchor.ref), aw.get("label", 0.0)),
        ("signature", signature, aw.get("signature", 0.0)),
        ("examples", examples.get(anchor.ref, ""), aw.get("examples", 0.0)),
    ]
    items = {"anchor": anchor_fields}
    for element in elements:
        items[element.id] = [
            ("label", _spaced(element.label), ew.get("label", 0.0)),
            ("variants", " ".join(_spaced(v) for v in element.variants),
             ew.get("variants", 0.0)),
            ("context", element.context, ew.get("context", 0.0)),
        ]
    reps = build_representations(items, embedder, config.providers.batch_size)
    query = reps["anchor"].combined.values
    scored = sorted(
        ((float(np.dot(query, reps[e.id].combined.values)), e.id) for e in elements),
        key=lambda pair: (-pair[0], pair[1]))
    out = []
    for similarity, element_id in scored:
        if similarity < cfg.threshold:
            continue
        out.append(Candidate(element_id=element_id, similarity=similarity,
                             rank=len(out) + 1))
        if len(out) >= cfg.top_k:
            break
    return out


def apply_assignment_cap(candidates_by_ref: Mapping[str, list[Candidate]],
                         max_assign: int) -> dict[str, list[Candidate]]:
    """A schema element keeps only its ``max_assign`` best anchors."""
    claims: dict[str, list[tuple[float, str]]] = {}
    for ref in sorted(candidates_by_ref):
        for cand in candidates_by_ref[ref]:
            claims.setdefault(cand.element_id, []).append((cand.similarity, ref))
    allowed: dict[str, set[str]] = {}
    for element_id, claimants in claims.items():
        claimants.sort(key=lambda pair: (-pair[0], pair[1]))
        allowed[element_id] = {ref for _, ref in claimants[:max_assign]}
    out: dict[str, list[Candidate]] = {}
    for ref in sorted(candidates_by_ref):
        kept = [c for c in candidates_by_ref[ref] if ref in allowed[c.element_id]]
        out[ref] = [Candidate(element_id=c.element_id, similarity=c.similarity,
                              rank=i + 1) for i, c in enumerate(kept)]
    return out


@dataclass(frozen=True)
class AlignmentJudgement:
    anchor_ref: str
    anchor_kind: str
    element_id: str
    level: int
    label: str
    confidence: float
    rank: int
    similarity: float

    def to_record(self) -> dict:
        return {
            "anchor_ref": self.anchor_ref, "anchor_kind": self.anchor_kind,
            "element_id": self.element_id, "level": self.level,
            "label": self.label, "confidence": self.confidence,
            "rank": self.rank, "similarity": self.similarity,
        }


def verify(anchor: Anchor, candidate: Candidate, index: SchemaIndex,
           ontology: ReferenceOntology, chat: ChatProvider,
           config: PipelineConfig) -> AlignmentJudgement:
    """Four-way judgement; relations are judged direction-relaxed."""
    element = index.elements[candidate.element_id]
    orientations: list[dict] = []
    if anchor.kind == "relation":
        rel = next(r for r in ontology.relations if r.label == anchor.ref)
        orientations = [
            {"label": anchor.ref, "domain": rel.domain, "range": rel.range},
            {"label": anchor.ref, "domain": rel.range, "range": rel.domain},
        ]
    else:
        orientations = [{"label": anchor.ref}]

    preference = {"Equivalent": 0, "Narrower": 1, "Broader": 2, "Unrelated": 3}
    best: Optional[tuple[int, float, str, float]] = None
    for orientation in orientations:
        payload = {
            "anchor": {"kind": anchor.kind, **orientation},
            "candidate": {"label": element.label, "level": element.level,
                          "variants": list(element.variants),
                          "context": element.context},
        }
        prompt = build_prompt(VERIFY_INSTRUCTIONS, payload)
        reply = chat.chat(ChatRequest(prompt=prompt,
                                      max_tokens=config.providers.verifier_budget,
                                      expect="schema_alignment"))
        try:
            parsed = json.loads(reply)
            label = parsed["label"]
            if label not in JUDGEMENT_LABELS:
                raise ValueError(f"unknown judgement label {label!r}")
            confidence = min(1.0, max(0.0, float(parsed.get("confidence", 0.0))))
        except (ValueError, KeyError, TypeError):
            label, confidence = "Unrelated", 0.0
        key = (preference[label], -confidence, label, confidence)
        if best is None or key < (best[0], -best[3], best[2], best[3]):
            best = (preference[label], confidence, label, confidence)
    assert best is not None
    return AlignmentJudgement(
        anchor_ref=anchor.ref, anchor_kind=anchor.kind,
        element_id=candidate.element_id, level=element.level, label=best[2],
        confidence=best[3], rank=candidate.rank, similarity=candidate.similarity)


# ---------------------------------------------------------------------------
# Scoring.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScopeReport:
    scope: str
    anchor_counts: dict
    coverage_exact: float
    coverage_narrower: float
    coverage_compat: float
    mrr5: float
    dr_consistency: Optional[float]
    level_distribution: dict
    by_kind: dict

    def to_record(self) -> dict:
        return {
            "scope": self.scope,
            "anchor_counts": self.anchor_counts,
            "coverage_exact": self.coverage_exact,
            "coverage_narrower": self.coverage_narrower,
            "coverage_compat": self.coverage_compat,
            "mrr5": self.mrr5,
            "dr_consistency": self.dr_consistency,
            "level_distribution": self.level_distribution,
            "by_kind": self.by_kind,
        }


def _best_compatible(judgements: Sequence[AlignmentJudgement]
                     ) -> Optional[AlignmentJudgement]:
    compatible = [j for j in judgements if j.label in COMPATIBLE]
    if not compatible:
        return None
    preference = {"Equivalent": 0, "Narrower": 1}
    return min(compatible,
               key=lambda j: (preference[j.label], -j.confidence, j.rank))


def _dr_pass(anchor_ref: str, best: AlignmentJudgement, index: SchemaIndex,
             ontology: ReferenceOntology,
             aligned_concepts: Mapping[str, set[str]]) -> bool:
    """Direction-relaxed, hierarchy-aware domain/range check (L1->L2 backoff)."""
    rel = next(r for r in ontology.relations if r.label == anchor_ref)
    canonicals = index.canonicals_of_element.get(best.element_id, ())
    signatures: set[tuple[str, str]] = set()
    for canonical in canonicals:
        signatures |= index.relation_signatures.get(canonical, set())
    if not signatures:
        return False

    def side_ok(concept: str, cls_id: str) -> bool:
        if is_primitive(concept):
            return True
        chain = set(index.entity_chain.get(cls_id, (cls_id,)))
        return bool(chain & aligned_concepts.get(concept, set()))

    for subj_cls, obj_cls in sorted(signatures):
        if side_ok(rel.domain, subj_cls) and side_ok(rel.range, obj_cls):
            return True
        if side_ok(rel.range, subj_cls) and side_ok(rel.domain, obj_cls):
            return True
    return False


def score_scope(scope: str, anchors: Sequence[Anchor],
                judgements_by_ref: Mapping[str, Sequence[AlignmentJudgement]],
                index: SchemaIndex, ontology: ReferenceOntology) -> ScopeReport:
    """Weighted coverage, MRR@5, D/R consistency, and level distribution."""
    aligned_concepts: dict[str, set[str]] = {}
    for anchor in anchors:
        if anchor.kind != "concept":
            continue
        aligned_concepts[anchor.ref] = {
            j.element_id for j in judgements_by_ref.get(anchor.ref, ())
            if j.label in COMPATIBLE}

    buckets = {"concept": {"total": 0.0, "exact": 0.0, "narrower": 0.0,
                           "mrr": 0.0, "count": 0},
               "relation": {"total": 0.0, "exact": 0.0, "narrower": 0.0,
                            "mrr": 0.0, "count": 0}}
    levels: dict[str, Counter] = {"concept": Counter(), "relation": Counter()}
    level_totals = {"concept": 0.0, "relation": 0.0}
    dr_total = 0.0
    dr_pass = 0.0

    for anchor in anchors:
        bucket = buckets[anchor.kind]
        bucket["total"] += anchor.weight
        bucket["count"] += 1
        judgements = list(judgements_by_ref.get(anchor.ref, ()))
        has_exact = any(j.label == "Equivalent" for j in judgements)
        has_narrower = any(j.label == "Narrower" for j in judgements)
        if has_exact:
            bucket["exact"] += anchor.weight
        elif has_narrower:
            bucket["narrower"] += anchor.weight
        compatible_ranks = [j.rank for j in judgements if j.label in COMPATIBLE]
        if compatible_ranks:
            bucket["mrr"] += anchor.weight / min(compatible_ranks)
        best = _best_compatible(judgements)
        if best is not None:
            levels[anchor.kind][f"L{best.level}"] += anchor.weight
            level_totals[anchor.kind] += anchor.weight
        if anchor.kind == "relation" and best is not None:
            dr_total += anchor.weight
            if _dr_pass(anchor.ref, best, index, ontology, aligned_concepts):
                dr_pass += anchor.weight

    def rates(bucket: dict) -> dict:
        total = bucket["total"]
        if total <= 0:
            return {"coverage_exact": 0.0, "coverage_narrower": 0.0,
                    "coverage_compat": 0.0, "mrr5": 0.0, "anchors": 0}
        exact = bucket["exact"] / total
        narrower = bucket["narrower"] / total
        return {"coverage_exact": exact, "coverage_narrower": narrower,
                "coverage_compat": exact + narrower,
                "mrr5": bucket["mrr"] / total, "anchors": bucket["count"]}

    total_weight = sum(b["total"] for b in buckets.values())
    overall_exact = (sum(b["exact"] for b in buckets.values()) / total_weight
                     if total_weight else 0.0)
    overall_narrower = (sum(b["narrower"] for b in buckets.values()) / total_weight
                        if total_weight else 0.0)
    overall_mrr = (sum(b["mrr"] for b in buckets.values()) / total_weight
                   if total_weight else 0.0)

    level_distribution = {}
    for kind in ("concept", "relation"):
        total = level_totals[kind]
        level_distribution[kind] = {
            level: (levels[kind][level] / total if total else 0.0)
            for level in ("L1", "L2", "L3")}

    return ScopeReport(
        scope=scope,
        anchor_counts={kind: buckets[kind]["count"] for kind in buckets},
        coverage_exact=overall_exact,
        coverage_narrower=overall_narrower,
        coverage_compat=overall_exact + overall_narrower,
        mrr5=overall_mrr,
        dr_consistency=(dr_pass / dr_total) if dr_total > 0 else None,
        level_distribution=level_distribution,
        by_kind={kind: rates(buckets[kind]) for kind in buckets},
    )


def evaluate_schema(graph: ContextEnrichedGraph, ontology: ReferenceOntology,
                    gold: Sequence[GoldTriple], scope: str, chat: ChatProvider,
                    embedder: EmbeddingProvider, config: PipelineConfig
                    ) -> tuple[ScopeReport, list[AlignmentJudgement],
                               list[AlignmentJudgement]]:
    """Full retrieve-verify-score pass for one scope.

    Returns (report, all judgements, audit list). Reference-side retrieval
    evidence always comes from the source (train) split, preserving the
    held-out protocol; judgements below the audit confidence threshold are
    routed to the audit list.
    """
    anchors = active_anchors(ontology, scope_triples(gold, scope))
    index = build_schema_index(graph)
    examples = anchor_examples(ontology, scope_triples(gold, "source"))
    candidates_by_ref = {
        anchor.ref: retrieve_candidates(anchor, index, embedder, config,
                                        ontology, examples)
        for anchor in anchors}
    candidates_by_ref = apply_assignment_cap(candidates_by_ref,
                                             config.alignment.max_assign)
    judgements_by_ref: dict[str, list[AlignmentJudgement]] = {}
    all_judgements: list[AlignmentJudgement] = []
    audit: list[AlignmentJudgement] = []
    for anchor in anchors:
        judgements = [verify(anchor, cand, index, ontology, chat, config)
                      for cand in candidates_by_ref.get(anchor.ref, ())]
        judgements_by_ref[anchor.ref] = judgements
        all_judgements.extend(judgements)
        audit.extend(j for j in judgements
                     if j.confidence < config.alignment.audit_confidence)
    report = score_scope(scope, anchors, judgements_by_ref, index, ontology)
    return report, all_judgements, audit
