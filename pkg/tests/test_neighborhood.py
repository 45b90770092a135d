"""Representations, density neighborhoods, subclustering, batching."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from textkg.neighborhood import (
    MultiFieldRepresentation,
    Neighborhood,
    RepresentationError,
    batch,
    build_representation,
    build_representations,
    cluster,
    subcluster_oversized,
)
from textkg.providers import EmbeddingVector, StubEmbeddingProvider, hashed_bow_vector


def rep_from_vector(item_id: str, values: np.ndarray) -> MultiFieldRepresentation:
    return MultiFieldRepresentation(
        item_id=item_id, fields=(("raw", item_id, 1.0),),
        combined=EmbeddingVector.from_raw(values))


def basis_vector(i: int, dim: int = 16) -> np.ndarray:
    v = np.zeros(dim)
    v[i] = 1.0
    return v


def threshold_components_oracle(vectors: dict[str, np.ndarray],
                                threshold: float) -> set[frozenset]:
    """Pairwise-cosine threshold connected components, brute force."""
    ids = sorted(vectors)
    parent = {i: i for i in ids}

    def find(x):
        while parent[x] != x:
            x = parent[x]
        return x

    for i in ids:
        for j in ids:
            if i < j and 1.0 - float(vectors[i] @ vectors[j]) <= threshold:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[rj] = ri
    groups: dict[str, set] = {}
    for i in ids:
        groups.setdefault(find(i), set()).add(i)
    return {frozenset(g) for g in groups.values()}


# ---------------------------------------------------------------------------
# build_representation.
# ---------------------------------------------------------------------------


def test_single_field_weight_one_equals_field_embedding():
    embed = StubEmbeddingProvider()
    rep = build_representation("x", [("name", "pump", 1.0)], embed)
    np.testing.assert_allclose(rep.combined.values, hashed_bow_vector("pump"))


def test_identical_texts_any_weights_equal_field_embedding():
    embed = StubEmbeddingProvider()
    rep = build_representation(
        "x", [("a", "same text", 0.3), ("b", "same text", 0.7)], embed)
    np.testing.assert_allclose(rep.combined.values,
                               hashed_bow_vector("same text"), atol=1e-12)


def test_weighted_combination_matches_direct_arithmetic_oracle():
    embed = StubEmbeddingProvider()
    rep = build_representation(
        "x", [("name", "pump", 0.6), ("desc", "a device", 0.4)], embed)
    raw = 0.6 * hashed_bow_vector("pump") + 0.4 * hashed_bow_vector("a device")
    np.testing.assert_allclose(rep.combined.values, raw / np.linalg.norm(raw))


def test_all_zero_weights_error():
    embed = StubEmbeddingProvider()
    with pytest.raises(RepresentationError):
        build_representation("x", [("name", "pump", 0.0)], embed)


def test_negative_weight_error():
    embed = StubEmbeddingProvider()
    with pytest.raises(RepresentationError):
        build_representation("x", [("name", "pump", -0.1)], embed)


def test_empty_fields_error():
    embed = StubEmbeddingProvider()
    with pytest.raises(RepresentationError):
        build_representation("x", [("name", "", 1.0)], embed)


@settings(max_examples=40)
@given(st.floats(min_value=0.01, max_value=100.0, allow_nan=False))
def test_uniform_weight_scaling_absorbed_by_normalization(scale):
    embed = StubEmbeddingProvider()
    base = build_representation(
        "x", [("a", "pump", 0.6), ("b", "device", 0.4)], embed)
    scaled = build_representation(
        "x", [("a", "pump", 0.6 * scale), ("b", "device", 0.4 * scale)], embed)
    np.testing.assert_allclose(base.combined.values, scaled.combined.values,
                               atol=1e-9)


def test_bulk_matches_single():
    embed = StubEmbeddingProvider()
    items = {"a": [("name", "pump", 1.0)], "b": [("name", "valve", 1.0)]}
    bulk = build_representations(items, embed)
    for item_id, fields in items.items():
        single = build_representation(item_id, fields, embed)
        np.testing.assert_allclose(bulk[item_id].combined.values,
                                   single.combined.values)


# ---------------------------------------------------------------------------
# cluster.
# ---------------------------------------------------------------------------


def test_single_item_is_singleton_noise():
    reps = [rep_from_vector("only", basis_vector(0))]
    out = cluster(reps, min_cluster_size=2)
    assert len(out) == 1
    assert out[0].is_noise and out[0].member_ids == ("only",)


def test_two_tight_groups_of_identical_texts():
    embed = StubEmbeddingProvider()
    items = {}
    for i in range(5):
        items[f"a{i}"] = [("name", "turbine pump assembly", 1.0)]
        items[f"b{i}"] = [("name", "completely different words here", 1.0)]
    reps = build_representations(items, embed)
    out = cluster(reps.values(), min_cluster_size=3)
    non_noise = [set(n.member_ids) for n in out if not n.is_noise]
    # Oracle: pairwise-cosine threshold components on the stub embeddings.
    vectors = {k: reps[k].combined.values for k in reps}
    expected = {frozenset(g) for g in threshold_components_oracle(vectors, 0.05)
                if len(g) >= 3}
    assert {frozenset(g) for g in non_noise} == expected
    assert len(non_noise) == 2


def test_mutually_orthogonal_items_all_noise():
    reps = [rep_from_vector(f"v{i}", basis_vector(i)) for i in range(6)]
    out = cluster(reps, min_cluster_size=2)
    assert all(n.is_noise and len(n.member_ids) == 1 for n in out)
    assert len(out) == 6


def test_cluster_partition_property():
    embed = StubEmbeddingProvider()
    items = {f"i{i}": [("name", f"text {i % 3}", 1.0)] for i in range(12)}
    reps = build_representations(items, embed)
    out = cluster(reps.values(), min_cluster_size=2)
    seen = [m for n in out for m in n.member_ids]
    assert sorted(seen) == sorted(items)
    assert len(seen) == len(set(seen))


def test_cluster_permutation_invariant_up_to_relabeling():
    embed = StubEmbeddingProvider()
    items = {f"i{i}": [("name", f"text {i % 3}", 1.0)] for i in range(9)}
    reps = list(build_representations(items, embed).values())
    forward = cluster(reps, min_cluster_size=2)
    backward = cluster(list(reversed(reps)), min_cluster_size=2)
    canonical = lambda out: sorted(tuple(sorted(n.member_ids)) for n in out)
    assert canonical(forward) == canonical(backward)


def test_threshold_mode_matches_component_oracle():
    vectors = {f"v{i}": basis_vector(i % 3) for i in range(9)}
    reps = [rep_from_vector(k, v) for k, v in vectors.items()]
    out = cluster(reps, min_cluster_size=2, method="threshold", threshold=0.1)
    got = {frozenset(n.member_ids) for n in out if not n.is_noise}
    expected = {g for g in threshold_components_oracle(vectors, 0.1) if len(g) >= 2}
    assert got == expected


# ---------------------------------------------------------------------------
# subcluster_oversized.
# ---------------------------------------------------------------------------


def _reps_by_id(reps):
    return {r.item_id: r for r in reps}


def test_small_neighborhood_returned_unchanged():
    nb = Neighborhood(id="nb-0000", member_ids=("a", "b"))
    reps = _reps_by_id([rep_from_vector("a", basis_vector(0)),
                        rep_from_vector("b", basis_vector(0))])
    assert subcluster_oversized(nb, reps, max_size=5) == [nb]


def test_three_separated_groups_of_ten_split_to_three():
    reps = {}
    members = []
    for g in range(3):
        for i in range(10):
            item = f"g{g}i{i}"
            members.append(item)
            reps[item] = rep_from_vector(item, basis_vector(g))
    nb = Neighborhood(id="nb-0000", member_ids=tuple(sorted(members)))
    out = subcluster_oversized(nb, reps, max_size=12, min_cluster_size=2)
    got = {frozenset(n.member_ids) for n in out}
    vectors = {k: reps[k].combined.values for k in reps}
    expected = threshold_components_oracle(vectors, 0.05)
    assert got == expected
    assert len(out) == 3


def test_identical_members_fall_back_to_sorted_slicing():
    reps = {f"i{i:02d}": rep_from_vector(f"i{i:02d}", basis_vector(0))
            for i in range(30)}
    nb = Neighborhood(id="nb-0000", member_ids=tuple(sorted(reps)))
    out = subcluster_oversized(nb, reps, max_size=12, min_cluster_size=2)
    assert sorted(len(n.member_ids) for n in out) == [6, 12, 12]
    ordered = sorted(reps)
    assert list(out[0].member_ids) == ordered[:12]
    assert list(out[1].member_ids) == ordered[12:24]
    assert list(out[2].member_ids) == ordered[24:]


def test_subcluster_union_preserves_members():
    reps = {f"i{i:02d}": rep_from_vector(f"i{i:02d}", basis_vector(i % 5))
            for i in range(40)}
    nb = Neighborhood(id="nb-0000", member_ids=tuple(sorted(reps)))
    out = subcluster_oversized(nb, reps, max_size=9, min_cluster_size=2)
    assert sorted(m for n in out for m in n.member_ids) == sorted(reps)
    assert all(len(n.member_ids) <= 9 for n in out)


# ---------------------------------------------------------------------------
# batch.
# ---------------------------------------------------------------------------


def test_batch_sizes_25_into_10_10_5():
    nb = Neighborhood(id="nb-0000",
                      member_ids=tuple(f"i{i:02d}" for i in range(25)))
    sizes = [len(b) for b in batch(nb, k=10)]
    assert sizes == [10, 10, 5]


def test_batch_exact_fit_single_batch():
    nb = Neighborhood(id="nb-0000",
                      member_ids=tuple(f"i{i}" for i in range(10)))
    assert len(batch(nb, k=10)) == 1


def test_batch_deterministic_across_runs():
    nb = Neighborhood(id="nb-0000",
                      member_ids=("c", "a", "b", "e", "d"))
    assert batch(nb, k=2) == batch(nb, k=2)
    assert batch(nb, k=2)[0] == ("a", "b")


def test_batch_k_must_be_at_least_two():
    nb = Neighborhood(id="nb-0000", member_ids=("a",))
    with pytest.raises(ValueError):
        batch(nb, k=1)
