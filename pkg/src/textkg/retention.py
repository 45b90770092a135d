"""Retrieval-and-judge harness: Ret.Acc and AvgRank over a graph.

Each statement is embedded, matched to entities through the same
entity-layer multi-field representation used by resolution, expanded to an
induced subgraph (top-k seeds, bounded hops, node/edge caps), and judged
strictly against the serialized subgraph only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .config import PipelineConfig
from .entities import entity_fields, intrinsic_text_of
from .metrics import (
    RetentionReport,
    composites,
    graph_triples,
    leakage,
    structural_report,
    tricr,
)
from .model import ContextEnrichedGraph, Entity, RelationInstance
from .neighborhood import build_representations
from .providers import ChatProvider, ChatRequest, EmbeddingProvider, build_prompt

JUDGE_INSTRUCTIONS = """\
Decide whether the statement is supported by the triples below, using ONLY
those triples: no external knowledge, no inferred edges. Reply with only a
JSON object {"supported": true} or {"supported": false}."""


@dataclass(frozen=True)
class Subgraph:
    entities: tuple[Entity, ...]
    relations: tuple[RelationInstance, ...]
    seed_ids: tuple[str, ...]

    @property
    def node_ids(self) -> set[str]:
        return {e.id for e in self.entities}


def entity_index(graph: ContextEnrichedGraph, embedder: EmbeddingProvider,
                 config: PipelineConfig,
                 evidence: Optional[Mapping[str, str]] = None
                 ) -> dict[str, np.ndarray]:
    """Entity-layer representations reused as the retrieval space."""
    evidence = evidence or {}
    fields = {}
    for entity in graph.entities:
        fields[entity.id] = entity_fields(
            entity.canonical_name, entity.description, entity.type_hint,
            intrinsic_text_of(entity.intrinsic),
            evidence.get(entity.id, "") or entity.canonical_name,
            config.entity_weights)
    reps = build_representations(fields, embedder, config.providers.batch_size)
    return {eid: rep.combined.values for eid, rep in reps.items()}


def rank_entities(statement: str, index: Mapping[str, np.ndarray],
                  embedder: EmbeddingProvider) -> list[tuple[str, float]]:
    query = embedder.embed_batch([statement])[0].values
    scored = [(eid, float(np.dot(query, vec))) for eid, vec in index.items()]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored


def expand_seeds(graph: ContextEnrichedGraph, ranked: Sequence[tuple[str, float]],
                 k: int, hops: int, node_cap: int, edge_cap: int) -> Subgraph:
    """Breadth-first, direction-agnostic expansion of the top-k seeds.

    Truncation is deterministic: nodes in (distance, -similarity, id)
    order, induced edges in (distance of farther endpoint, id) order.
    """
    seeds = [eid for eid, _ in ranked[:k]]
    similarity = {eid: sim for eid, sim in ranked}
    adjacency: dict[str, set[str]] = {e.id: set() for e in graph.entities}
    for rel in graph.relations:
        if rel.subject_entity in adjacency and rel.object_entity in adjacency:
            adjacency[rel.subject_entity].add(rel.object_entity)
            adjacency[rel.object_entity].add(rel.subject_entity)

    distance: dict[str, int] = {seed: 0 for seed in seeds}
    frontier = sorted(seeds)
    for hop in range(1, hops + 1):
        nxt = []
        for node in frontier:
            for neighbor in sorted(adjacency.get(node, ())):
                if neighbor not in distance:
                    distance[neighbor] = hop
                    nxt.append(neighbor)
        frontier = sorted(nxt)

    candidates = sorted(distance,
                        key=lambda eid: (distance[eid],
                                         -similarity.get(eid, 0.0), eid))
    kept = set(candidates[:node_cap])

    edges = [rel for rel in graph.relations
             if rel.subject_entity in kept and rel.object_entity in kept]
    edges.sort(key=lambda rel: (max(distance[rel.subject_entity],
                                    distance[rel.object_entity]),
                                min(distance[rel.subject_entity],
                                    distance[rel.object_entity]),
                                rel.id))
    edges = edges[:edge_cap]
    by_id = graph.entity_by_id()
    return Subgraph(entities=tuple(by_id[eid] for eid in sorted(kept)),
                    relations=tuple(sorted(edges, key=lambda r: r.id)),
                    seed_ids=tuple(seeds))


def retrieve_subgraph(statement: str, graph: ContextEnrichedGraph,
                      index: Mapping[str, np.ndarray],
                      embedder: EmbeddingProvider, k: int = 8, hops: int = 2,
                      node_cap: int = 250, edge_cap: int = 300
                      ) -> tuple[Subgraph, list[tuple[str, float]]]:
    """Rank entities against the statement and expand the top-k seeds."""
    ranked = rank_entities(statement, index, embedder)
    return expand_seeds(graph, ranked, k, hops, node_cap, edge_cap), ranked


def serialize_subgraph(subgraph: Subgraph) -> list[dict]:
    names = {e.id: e.canonical_name for e in subgraph.entities}
    triples = []
    for rel in subgraph.relations:
        triples.append({
            "subject": names[rel.subject_entity],
            "predicate": rel.canonical_label or rel.raw_label,
            "object": names[rel.object_entity],
            "qualifiers": rel.qualifiers.populated(),
        })
    return triples


def judge(statement: str, subgraph: Subgraph, chat: ChatProvider,
          budget: int = 16000) -> tuple[bool, dict]:
    """Strict binary verdict over the serialized subgraph only."""
    payload = {"statement": statement, "triples": serialize_subgraph(subgraph)}
    prompt = build_prompt(JUDGE_INSTRUCTIONS, payload)
    reply = chat.chat(ChatRequest(prompt=prompt, max_tokens=budget,
                                  expect="retention_judge"))
    failures: list[str] = []
    try:
        parsed = json.loads(reply)
        supported = bool(parsed["supported"])
    except (ValueError, KeyError, TypeError) as exc:
        failures.append(f"unparsable verdict counted unsupported: {exc}")
        supported = False
    entry = {"prompt": prompt, "reply": reply, "failures": failures}
    return supported, entry


def run_retention(graph: ContextEnrichedGraph, statements: Sequence[str],
                  source_text: str, chat: ChatProvider,
                  embedder: EmbeddingProvider, config: PipelineConfig,
                  evidence: Optional[Mapping[str, str]] = None
                  ) -> RetentionReport:
    """Score knowledge retention of ``graph`` against derived statements.

    ret_acc is the supported fraction at the full seed budget; avg_rank is
    the mean, over supported statements, of the smallest seed count whose
    induced subgraph already yields a supported verdict (unsupported
    statements are excluded unless configured to count as k+1).
    """
    if not statements:
        raise ValueError("run_retention requires at least one statement")
    cfg = config.retention
    index = entity_index(graph, embedder, config, evidence)
    supported_flags: list[bool] = []
    ranks: list[int] = []
    for statement in statements:
        ranked = rank_entities(statement, index, embedder)
        full = expand_seeds(graph, ranked, cfg.top_k, cfg.hops,
                            cfg.node_cap, cfg.edge_cap)
        verdict, _ = judge(statement, full, chat, config.providers.judge_budget)
        supported_flags.append(verdict)
        if verdict:
            rank = cfg.top_k
            for r in range(1, cfg.top_k + 1):
                partial = expand_seeds(graph, ranked, r, cfg.hops,
                                       cfg.node_cap, cfg.edge_cap)
                sub_verdict, _ = judge(statement, partial, chat,
                                       config.providers.judge_budget)
                if sub_verdict:
                    rank = r
                    break
            ranks.append(rank)
        elif cfg.count_unsupported_in_avg_rank:
            ranks.append(cfg.top_k + 1)

    ret_acc = sum(supported_flags) / len(supported_flags)
    avg_rank = (sum(ranks) / len(ranks)) if ranks else None
    structural = structural_report(graph)
    leak = leakage([e.canonical_name for e in graph.entities], source_text)
    compression = tricr(graph_triples(graph), source_text)
    rwa, egu, sci = composites(ret_acc, structural, leak)
    return RetentionReport(ret_acc=ret_acc, leak=leak, tricr=compression,
                           rwa=rwa, egu=egu, sci=sci, avg_rank=avg_rank,
                           structural=structural)
