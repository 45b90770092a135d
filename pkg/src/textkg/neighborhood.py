"""Multi-field representations, semantic neighborhoods, and prompt batching.

Representations combine per-field embeddings with layer-specific weights
and L2 normalization (so uniform weight scaling is absorbed). Items are
always processed in sorted-id order, which makes clustering permutation
invariant up to neighborhood relabeling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .clustering import hdbscan_labels, threshold_labels
from .providers import EmbeddingProvider, EmbeddingVector

FieldSpec = tuple[str, str, float]   # (field name, text, weight)


class RepresentationError(ValueError):
    pass


@dataclass(frozen=True)
class MultiFieldRepresentation:
    item_id: str
    fields: tuple[FieldSpec, ...]
    combined: EmbeddingVector


@dataclass(frozen=True)
class Neighborhood:
    id: str
    member_ids: tuple[str, ...]
    is_noise: bool = False


def _usable_fields(fields: Sequence[FieldSpec]) -> list[FieldSpec]:
    usable = []
    for name, text, weight in fields:
        if weight < 0:
            raise RepresentationError(f"field {name!r} has negative weight {weight}")
        if weight > 0 and text:
            usable.append((name, text, float(weight)))
    if not usable:
        raise RepresentationError("no field with positive weight and non-empty text")
    return usable


def combine_embeddings(embeddings: Sequence[EmbeddingVector],
                       weights: Sequence[float]) -> EmbeddingVector:
    acc = np.zeros_like(embeddings[0].values)
    for vec, weight in zip(embeddings, weights):
        acc = acc + weight * vec.values
    return EmbeddingVector.from_raw(acc)


def build_representation(item_id: str, fields: Sequence[FieldSpec],
                         embedder: EmbeddingProvider,
                         batch_size: int = 32) -> MultiFieldRepresentation:
    usable = _usable_fields(fields)
    embeddings = embedder.embed_batch([text for _, text, _ in usable], batch_size)
    combined = combine_embeddings(embeddings, [w for _, _, w in usable])
    return MultiFieldRepresentation(item_id=item_id, fields=tuple(usable),
                                    combined=combined)


def build_representations(items: Mapping[str, Sequence[FieldSpec]],
                          embedder: EmbeddingProvider,
                          batch_size: int = 32) -> dict[str, MultiFieldRepresentation]:
    """Bulk variant: one embedding pass over every usable field text."""
    order = sorted(items)
    usable_by_item = {item_id: _usable_fields(items[item_id]) for item_id in order}
    texts: list[str] = []
    for item_id in order:
        texts.extend(text for _, text, _ in usable_by_item[item_id])
    embeddings = embedder.embed_batch(texts, batch_size) if texts else []
    out: dict[str, MultiFieldRepresentation] = {}
    cursor = 0
    for item_id in order:
        usable = usable_by_item[item_id]
        vecs = embeddings[cursor:cursor + len(usable)]
        cursor += len(usable)
        out[item_id] = MultiFieldRepresentation(
            item_id=item_id, fields=tuple(usable),
            combined=combine_embeddings(vecs, [w for _, _, w in usable]))
    return out


def _group_by_label(ids: Sequence[str], labels: np.ndarray) -> list[tuple[tuple[str, ...], bool]]:
    clusters: dict[int, list[str]] = {}
    noise: list[str] = []
    for item_id, label in zip(ids, labels):
        if label < 0:
            noise.append(item_id)
        else:
            clusters.setdefault(int(label), []).append(item_id)
    groups = [(tuple(sorted(members)), False) for members in clusters.values()]
    groups.extend(((item_id,), True) for item_id in noise)
    groups.sort(key=lambda g: g[0][0])
    return groups


def cluster(representations: Iterable[MultiFieldRepresentation],
            min_cluster_size: int = 2, method: str = "hdbscan",
            threshold: float = 0.30, id_prefix: str = "nb") -> list[Neighborhood]:
    """Group representations into suggestive co-reference neighborhoods.

    Noise items come back as singleton neighborhoods flagged ``is_noise``,
    so the output always partitions the input set.
    """
    reps = sorted(representations, key=lambda r: r.item_id)
    if not reps:
        return []
    ids = [r.item_id for r in reps]
    matrix = np.stack([r.combined.values for r in reps])
    if method == "hdbscan":
        labels = hdbscan_labels(matrix, min_cluster_size=min_cluster_size)
    elif method == "threshold":
        labels = threshold_labels(matrix, distance_threshold=threshold,
                                  min_cluster_size=min_cluster_size)
    else:
        raise ValueError(f"unknown clustering method {method!r}")
    return [
        Neighborhood(id=f"{id_prefix}-{i:04d}", member_ids=members, is_noise=noise)
        for i, (members, noise) in enumerate(_group_by_label(ids, labels))
    ]


def subcluster_oversized(neighborhood: Neighborhood,
                         representations: Mapping[str, MultiFieldRepresentation],
                         max_size: int, min_cluster_size: int = 2,
                         method: str = "hdbscan",
                         threshold: float = 0.30) -> list[Neighborhood]:
    """Re-cluster an oversized neighborhood among its own members only.

    Recurses until every part fits in ``max_size``; when a split makes no
    progress the members are sliced deterministically (sorted id order)
    into max_size-bounded groups.
    """
    if len(neighborhood.member_ids) <= max_size:
        return [neighborhood]

    out: list[Neighborhood] = []
    work: list[tuple[str, ...]] = [neighborhood.member_ids]
    while work:
        members = work.pop(0)
        if len(members) <= max_size:
            out.append(members)
            continue
        local = [representations[mid] for mid in members]
        parts = cluster(local, min_cluster_size=min_cluster_size, method=method,
                        threshold=threshold)
        part_sets = [p.member_ids for p in parts]
        # Progress requires an actual density split: at least one non-noise
        # part and every part strictly smaller than the input.
        made_progress = (any(not p.is_noise for p in parts)
                         and len(part_sets) > 1
                         and all(len(p) < len(members) for p in part_sets))
        if made_progress:
            work.extend(part_sets)
        else:
            ordered = sorted(members)
            out.extend(tuple(ordered[i:i + max_size])
                       for i in range(0, len(ordered), max_size))
    out.sort(key=lambda members: members[0])
    return [
        Neighborhood(id=f"{neighborhood.id}.{i}", member_ids=members,
                     is_noise=neighborhood.is_noise and len(members) == 1)
        for i, members in enumerate(out)
    ]


def batch(neighborhood: Neighborhood, k: int = 10) -> list[tuple[str, ...]]:
    """Split a neighborhood into prompt batches of at most ``k`` members."""
    if k < 2:
        raise ValueError(f"batch size k must be >= 2, got {k}")
    ordered = sorted(neighborhood.member_ids)
    return [tuple(ordered[i:i + k]) for i in range(0, len(ordered), k)]


def make_neighborhoods(representations: Mapping[str, MultiFieldRepresentation],
                       clustering_cfg) -> list[Neighborhood]:
    """Cluster then subcluster per the pipeline clustering config."""
    base = cluster(representations.values(),
                   min_cluster_size=clustering_cfg.min_cluster_size,
                   method=clustering_cfg.method,
                   threshold=clustering_cfg.threshold)
    out: list[Neighborhood] = []
    for nb in base:
        out.extend(subcluster_oversized(
            nb, representations, max_size=clustering_cfg.max_cluster_size,
            min_cluster_size=clustering_cfg.min_cluster_size,
            method=clustering_cfg.method, threshold=clustering_cfg.threshold))
    return out
