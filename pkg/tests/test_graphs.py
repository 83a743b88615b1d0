import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_atomistic_edges, brute_replicas, random_lattice, random_structure
from prism.errors import DimensionMismatch
from prism.graphs import (
    build_atomistic_graph,
    build_cell_graph,
    build_multiscale_graph,
    build_similarity_graph,
    shift_bounds,
    shift_block,
)
from prism.invariance import connected_components, oracle_min_image
from prism.lattice import CrystalStructure, apply_cell_transform, random_unimodular

CUBIC1 = CrystalStructure(5 * np.eye(3), [[0, 0, 0]], [6])


def test_shift_bounds_examples():
    assert shift_bounds(5 * np.eye(3), 5.1).tolist() == [2, 2, 2]
    assert shift_bounds(5 * np.eye(3), 4.9).tolist() == [1, 1, 1]


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.floats(1.0, 9.0))
def test_shift_bounds_cover_widened_block(seed, cutoff):
    rng = np.random.default_rng(seed)
    s = random_structure(rng, max_atoms=3)
    b = shift_bounds(s.lattice, cutoff)
    wide = shift_block(b + 1)
    inside = np.all(np.abs(wide) <= b, axis=1)
    cart = s.cart
    for i, j in itertools.product(range(s.num_atoms), repeat=2):
        d = cart[j] - cart[i] + wide @ s.lattice.T
        near = np.linalg.norm(d, axis=1) < cutoff
        assert not np.any(near & ~inside)


def test_atomistic_examples():
    g = build_atomistic_graph(CUBIC1, 5.1)
    assert g.num_edges == 6 and np.allclose(g.dist, 5.0)
    bcc = CrystalStructure(4 * np.eye(3), [[0, 0, 0], [0.5, 0.5, 0.5]], [26, 26])
    g = build_atomistic_graph(bcc, 3.5)
    assert np.bincount(g.src).tolist() == [8, 8]
    assert np.allclose(g.dist, 2 * np.sqrt(3))
    g = build_atomistic_graph(CUBIC1, 1.0)
    assert g.num_edges == 0 and g.empty_warning


@settings(max_examples=40)
@given(st.integers(0, 10_000), st.floats(1.5, 6.0))
def test_atomistic_matches_brute_force(seed, r_c):
    s = random_structure(np.random.default_rng(seed), max_atoms=5)
    g = build_atomistic_graph(s, r_c)
    ref = brute_atomistic_edges(s, r_c)
    assert set(g.edge_keys()) == set(ref)
    assert g.num_edges == len(ref)
    for key, dist in zip(g.edge_keys(), g.dist):
        assert abs(dist - ref[key]) < 1e-9


def test_atomistic_edges_come_in_reverse_pairs(rng):
    s = random_structure(rng)
    keys = set(build_atomistic_graph(s, 4.5).edge_keys())
    for i, j, a, b, c in keys:
        assert (j, i, -a, -b, -c) in keys


def test_cell_graph_examples():
    g = build_cell_graph(CUBIC1, 12.0)
    # nonzero integer vectors with l^2 + m^2 + n^2 <= 5: 6 + 12 + 8 + 6 + 24
    assert g.num_edges == 56
    assert build_cell_graph(CUBIC1, 4.0).num_edges == 0


@given(st.integers(0, 10_000), st.floats(3.0, 14.0))
def test_cell_graph_matches_enumeration(seed, R_c):
    L = random_lattice(np.random.default_rng(seed))
    s = CrystalStructure(L, [[0, 0, 0]], [1])
    g = build_cell_graph(s, R_c)
    ref = brute_replicas(L, R_c)
    assert {k[2:] for k in g.edge_keys()} == set(ref)


@given(st.integers(0, 10_000))
def test_cell_graph_distance_multiset_invariant(seed):
    rng = np.random.default_rng(seed)
    s = CrystalStructure(random_lattice(rng), [[0, 0, 0]], [1])
    t = apply_cell_transform(s, random_unimodular(seed, 4))
    a, b = build_cell_graph(s, 11.0).dist, build_cell_graph(t, 11.0).dist
    assert len(a) == len(b) and np.allclose(np.sort(a), np.sort(b), atol=1e-9)


def test_multiscale_counts_and_invariance():
    for n in (1, 5):
        s = CrystalStructure(5 * np.eye(3), np.random.default_rng(n).random((n, 3)), [1] * n)
        g = build_multiscale_graph(s)
        assert g.num_edges == 2 * n and g.num_nodes == n + 1 and g.dist is None
        t = apply_cell_transform(s, random_unimodular(3, 5))
        assert build_multiscale_graph(t).edge_keys() == g.edge_keys()


def test_similarity_examples():
    s = CrystalStructure(6 * np.eye(3), [[0, 0, 0], [0.5, 0, 0], [0, 0.5, 0]], [1, 1, 1])
    g = build_similarity_graph(s, [[0, 0], [0.1, 0], [5, 5]], 0.5)
    assert sorted((a, b) for a, b, *_ in g.edge_keys()) == [(0, 1), (1, 0)]
    assert np.allclose(g.dist, 3.0)

    g = build_similarity_graph(s, np.ones((3, 4)), 0.5, max_degree=2)
    assert np.bincount(g.src).tolist() == [2, 2, 2]
    g = build_similarity_graph(s, np.ones((3, 4)), 0.5, max_degree=1)
    assert [(a, b) for a, b, *_ in g.edge_keys()] == [(0, 1), (1, 0), (2, 0)]

    with pytest.raises(DimensionMismatch):
        build_similarity_graph(s, np.ones((2, 4)), 0.5)


@given(st.integers(0, 10_000))
def test_similarity_geometry_uses_min_image(seed):
    rng = np.random.default_rng(seed)
    s = random_structure(rng, max_atoms=6)
    emb = rng.normal(size=(s.num_atoms, 3)) * 0.3
    g = build_similarity_graph(s, emb, 0.6)
    for (i, j, *_), dist in zip(g.edge_keys(), g.dist):
        assert abs(dist - np.linalg.norm(oracle_min_image(s, j, i))) < 1e-9
        assert np.linalg.norm(emb[i] - emb[j]) < 0.6


@given(st.integers(0, 10_000))
def test_similarity_invariant_under_cell_change(seed):
    rng = np.random.default_rng(seed)
    s = random_structure(rng, max_atoms=6)
    emb = rng.normal(size=(s.num_atoms, 3)) * 0.3
    t = apply_cell_transform(s, random_unimodular(seed, 4))
    a = build_similarity_graph(s, emb, 0.6)
    b = build_similarity_graph(t, emb, 0.6)
    assert [k[:2] for k in a.edge_keys()] == [k[:2] for k in b.edge_keys()]
    assert np.allclose(np.sort(a.dist), np.sort(b.dist), atol=1e-9)


def test_graph_record_format():
    rec = build_atomistic_graph(CUBIC1, 5.1).to_record("x")
    assert rec["kind"] == "atomistic" and rec["num_nodes"] == 1 and len(rec["edges"]) == 6
    assert all(len(e) == 8 for e in rec["edges"])
    assert build_multiscale_graph(CUBIC1).to_record("x")["edges"][0][5:] == [None] * 3


def test_star_bridges_every_component(rng):
    s = random_structure(rng)
    a = build_atomistic_graph(s, 0.5)
    m = build_multiscale_graph(s)
    src = np.concatenate([a.src, m.src])
    dst = np.concatenate([a.dst, m.dst])
    assert connected_components(s.num_atoms + 1, src, dst) == 1
