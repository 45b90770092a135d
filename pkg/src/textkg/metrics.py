"""Structural and representational graph metrics plus composite scores.

Composites:
    RWA = Ret.Acc x Conn
    EGU = Ret.Acc x Conn x (1 - Leak)
    SCI = AvgDeg x Clust x Conn

Connectivity is the largest weakly connected component fraction; clustering
is the mean local clustering coefficient on the undirected simple
projection (parallel edges collapsed, self-loops dropped, degree < 2
contributes 0). Word tokenization for Leak/TriCR/AvgEW is lower-cased
whitespace tokens with surrounding punctuation stripped. Multi-instance
benchmarks are scored per instance and macro-averaged.
"""

from __future__ import annotations

import math
import string
from dataclasses import dataclass
from typing import Hashable, Iterable, Optional, Sequence

import networkx as nx

from .model import ContextEnrichedGraph

_PUNCT = string.punctuation


def word_tokens(text: str) -> list[str]:
    out = []
    for token in text.lower().split():
        token = token.strip(_PUNCT)
        if token:
            out.append(token)
    return out


def connectivity(nodes: Sequence[Hashable],
                 edges: Iterable[tuple[Hashable, Hashable]]) -> float:
    """Fraction of nodes in the largest weakly connected component."""
    if not nodes:
        raise ValueError("connectivity is undefined for an empty graph")
    graph = nx.Graph()
    graph.add_nodes_from(nodes)
    graph.add_edges_from(edges)
    largest = max(len(component) for component in nx.connected_components(graph))
    return largest / graph.number_of_nodes()


def clustering_coefficient(nodes: Sequence[Hashable],
                           edges: Iterable[tuple[Hashable, Hashable]]) -> float:
    """Mean local clustering on the undirected simple projection."""
    if not nodes:
        raise ValueError("clustering is undefined for an empty graph")
    graph = nx.Graph()
    graph.add_nodes_from(nodes)
    graph.add_edges_from((u, v) for u, v in edges if u != v)
    local = nx.clustering(graph)
    # fsum: correctly rounded, so the mean is node-order independent.
    return math.fsum(local.values()) / graph.number_of_nodes()


def leakage(entity_names: Sequence[str], source_text: str) -> float:
    """Fraction of entities whose name shares a 4-word n-gram with the source."""
    if not source_text:
        raise ValueError("leakage requires a non-empty source text")
    if not entity_names:
        return 0.0
    source = word_tokens(source_text)
    grams = {tuple(source[i:i + 4]) for i in range(len(source) - 3)}
    leaky = 0
    for name in entity_names:
        tokens = word_tokens(name)
        if len(tokens) < 4:
            continue
        if any(tuple(tokens[i:i + 4]) in grams for i in range(len(tokens) - 3)):
            leaky += 1
    return leaky / len(entity_names)


def tricr(triples: Iterable[tuple[str, str, str]], source_text: str) -> float:
    """Total triple word count over source word count (1 is balanced)."""
    source_words = len(word_tokens(source_text))
    if source_words == 0:
        raise ValueError("tricr requires a non-empty source text")
    total = 0
    for subject, predicate, obj in triples:
        total += (len(word_tokens(subject)) + len(word_tokens(predicate))
                  + len(word_tokens(obj)))
    return total / source_words


@dataclass(frozen=True)
class StructuralReport:
    node_count: int
    edge_count: int
    avg_entity_words: float
    avg_degree: float
    connectivity: float
    clustering: float

    def to_record(self) -> dict:
        return {
            "node_count": self.node_count,
            "edge_count": self.edge_count,
            "avg_entity_words": self.avg_entity_words,
            "avg_degree": self.avg_degree,
            "connectivity": self.connectivity,
            "clustering": self.clustering,
        }


def structural_report(graph: ContextEnrichedGraph) -> StructuralReport:
    nodes = [e.id for e in graph.entities]
    edges = [(r.subject_entity, r.object_entity) for r in graph.relations]
    names = [e.canonical_name for e in graph.entities]
    if not nodes:
        raise ValueError("structural report is undefined for an empty graph")
    avg_words = sum(len(word_tokens(name)) for name in names) / len(names)
    return StructuralReport(
        node_count=len(nodes),
        edge_count=len(edges),
        avg_entity_words=avg_words,
        avg_degree=len(edges) / len(nodes),
        connectivity=connectivity(nodes, edges),
        clustering=clustering_coefficient(nodes, edges),
    )


def composite_scores(ret_acc: float, conn: float, leak: float,
                     avg_deg: float, clust: float) -> tuple[float, float, float]:
    rwa = ret_acc * conn
    egu = rwa * (1.0 - leak)
    sci = avg_deg * clust * conn
    return rwa, egu, sci


def composites(ret_acc: float, structural: StructuralReport,
               leak: float) -> tuple[float, float, float]:
    """(RWA, EGU, SCI) from retrieval accuracy, structure, and leakage."""
    return composite_scores(ret_acc, structural.connectivity, leak,
                            structural.avg_degree, structural.clustering)


@dataclass(frozen=True)
class RetentionReport:
    ret_acc: float
    leak: float
    tricr: float
    rwa: float
    egu: float
    sci: float
    avg_rank: Optional[float]
    structural: StructuralReport

    def to_record(self) -> dict:
        return {
            "ret_acc": self.ret_acc,
            "leak": self.leak,
            "tricr": self.tricr,
            "rwa": self.rwa,
            "egu": self.egu,
            "sci": self.sci,
            "avg_rank": self.avg_rank,
            "structural": self.structural.to_record(),
        }


def graph_triples(graph: ContextEnrichedGraph) -> list[tuple[str, str, str]]:
    names = {e.id: e.canonical_name for e in graph.entities}
    return [(names.get(r.subject_entity, r.subject_entity),
             r.canonical_label or r.raw_label,
             names.get(r.object_entity, r.object_entity))
            for r in graph.relations]


def macro_average(reports: Sequence[RetentionReport]) -> RetentionReport:
    """Per-instance-then-mean aggregation over a multi-instance benchmark."""
    if not reports:
        raise ValueError("cannot average zero reports")
    n = len(reports)

    def mean(values: Iterable[float]) -> float:
        values = list(values)
        return sum(values) / len(values)

    ranks = [r.avg_rank for r in reports if r.avg_rank is not None]
    structural = StructuralReport(
        node_count=round(mean(r.structural.node_count for r in reports)),
        edge_count=round(mean(r.structural.edge_count for r in reports)),
        avg_entity_words=mean(r.structural.avg_entity_words for r in reports),
        avg_degree=mean(r.structural.avg_degree for r in reports),
        connectivity=mean(r.structural.connectivity for r in reports),
        clustering=mean(r.structural.clustering for r in reports),
    )
    return RetentionReport(
        ret_acc=mean(r.ret_acc for r in reports),
        leak=mean(r.leak for r in reports),
        tricr=mean(r.tricr for r in reports),
        rwa=mean(r.rwa for r in reports),
        egu=mean(r.egu for r in reports),
        sci=mean(r.sci for r in reports),
        avg_rank=(sum(ranks) / len(ranks)) if ranks else None,
        structural=structural,
    )
