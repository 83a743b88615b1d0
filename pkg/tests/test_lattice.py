import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import random_lattice, random_structure
from prism.errors import NonFinite, NotUnimodular, SingularLattice, UnknownElement
from prism.invariance import oracle_min_image
from prism.lattice import (
    CrystalStructure,
    apply_cell_transform,
    build_supercell,
    cart_to_frac,
    frac_to_cart,
    integer_inverse,
    min_image_displacement,
    min_image_displacements,
    random_unimodular,
    rotate_structure,
    rotation_matrix,
    wrap_to_cell,
)

SHEARED = np.column_stack([[4.0, 0, 0], [2.0, 4.0, 0], [0, 0, 4.0]])


def test_frac_to_cart_examples():
    assert np.allclose(frac_to_cart(5 * np.eye(3), [0.5, 0, 0]), [2.5, 0, 0])
    assert np.array_equal(frac_to_cart(5 * np.eye(3), [0, 0, 0]), [0, 0, 0])
    # matrix-vector product done by hand: 0.5*(4,0,0) + 0.5*(2,4,0)
    assert np.allclose(frac_to_cart(SHEARED, [0.5, 0.5, 0]), [3.0, 2.0, 0.0])


def test_cart_to_frac_examples():
    assert np.allclose(cart_to_frac(5 * np.eye(3), [2.5, 0, 0]), [0.5, 0, 0])
    assert np.allclose(cart_to_frac(SHEARED, [3.0, 2.0, 0.0]), [0.5, 0.5, 0])
    with pytest.raises(SingularLattice):
        cart_to_frac(np.ones((3, 3)), [0, 0, 0])


@given(st.integers(0, 10_000))
def test_frac_cart_round_trip(seed):
    rng = np.random.default_rng(seed)
    L = random_lattice(rng)
    f = rng.uniform(-2, 2, size=(5, 3))
    assert np.allclose(cart_to_frac(L, frac_to_cart(L, f)), f, atol=1e-12)


def test_wrap_examples():
    assert np.allclose(wrap_to_cell([1.25, -0.25, 0]), [0.25, 0.75, 0])
    assert np.array_equal(wrap_to_cell([0, 0, 0]), [0, 0, 0])
    assert wrap_to_cell([0.999999999, 0, 0])[0] == 0.999999999
    assert wrap_to_cell([-1e-17, 0, 0])[0] == 0.0
    with pytest.raises(NonFinite):
        wrap_to_cell([np.nan, 0, 0])


@given(st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=3))
def test_wrap_range(f):
    w = wrap_to_cell(f)
    assert np.all((w >= 0) & (w < 1))


def test_min_image_examples():
    d, n = min_image_displacement(5 * np.eye(3), [0, 0, 0], [4.9, 0, 0])
    assert np.allclose(d, [0.1, 0, 0], atol=1e-12) and n.tolist() == [1, 0, 0]
    d, n = min_image_displacement(5 * np.eye(3), [1, 2, 3], [1, 2, 3])
    assert np.array_equal(d, [0, 0, 0]) and n.tolist() == [0, 0, 0]
    d, _ = min_image_displacement(SHEARED, [0, 0, 0], [3.9, 0, 0])
    assert np.allclose(d, [0.1, 0, 0], atol=1e-12)


@given(st.integers(0, 10_000))
def test_min_image_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    s = random_structure(rng, max_atoms=4)
    i, j = rng.integers(0, s.num_atoms, size=2)
    d, n = min_image_displacement(s.lattice, s.cart[i], s.cart[j])
    ref = oracle_min_image(s, i, j, search_radius=4)
    assert abs(np.linalg.norm(d) - np.linalg.norm(ref)) < 1e-9
    assert np.allclose(d, s.cart[i] - s.cart[j] + s.lattice @ n, atol=1e-12)


def test_min_image_extreme_shear_uses_wide_search():
    L = np.column_stack([[1.0, 0, 0], [7.3, 1.0, 0], [0, 0, 1.0]])
    s = CrystalStructure(L, [[0, 0, 0], [0.4, 0.5, 0.3]], [1, 1])
    d, _ = min_image_displacement(L, s.cart[0], s.cart[1])
    ref = oracle_min_image(s, 0, 1, search_radius=9)
    assert abs(np.linalg.norm(d) - np.linalg.norm(ref)) < 1e-12


@given(st.integers(0, 10_000))
def test_min_image_antisymmetric(seed):
    rng = np.random.default_rng(seed)
    L = random_lattice(rng)
    a, b = rng.uniform(-5, 5, size=(2, 3))
    d1, n1 = min_image_displacement(L, a, b)
    d2, n2 = min_image_displacement(L, b, a)
    assert np.array_equal(n1, -n2)


def test_tie_break_prefers_small_shifts():
    # exactly half a cell apart: +-1 images tie, the zero shift wins
    d, n = min_image_displacement(4 * np.eye(3), [0, 0, 0], [2.0, 0, 0])
    assert n.tolist() == [0, 0, 0] and np.allclose(d, [-2, 0, 0])
    d, n = min_image_displacement(4 * np.eye(3), [2.0, 0, 0], [0, 0, 0])
    assert n.tolist() == [0, 0, 0] and np.allclose(d, [2, 0, 0])


def test_vectorized_matches_scalar(rng):
    L = random_lattice(rng)
    delta = rng.uniform(-10, 10, size=(50, 3))
    d, n = min_image_displacements(L, delta)
    for k in range(50):
        dk, nk = min_image_displacement(L, delta[k], np.zeros(3))
        assert np.array_equal(dk, d[k]) and np.array_equal(nk, n[k])


def test_structure_validation():
    with pytest.raises(SingularLattice):
        CrystalStructure(np.zeros((3, 3)), [[0, 0, 0]], [1])
    with pytest.raises(UnknownElement):
        CrystalStructure(np.eye(3), [[0, 0, 0]], [119])
    with pytest.raises(ValueError):
        CrystalStructure(np.eye(3), [[0, 0, 0]], [1, 2])
    s = CrystalStructure(np.eye(3), [[1.2, -0.3, 0]], [1])
    assert np.allclose(s.frac, [[0.2, 0.7, 0.0]])


def test_cell_transform_examples():
    s = CrystalStructure(5 * np.eye(3), [[0.1, 0.2, 0.3], [0.6, 0.7, 0.9]], [3, 8])
    same = apply_cell_transform(s, np.eye(3, dtype=int))
    assert np.array_equal(same.lattice, s.lattice) and np.allclose(same.frac, s.frac)

    swap = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 1]])
    t = apply_cell_transform(s, swap)
    assert np.allclose(t.cart, s.cart)

    shear = np.array([[1, 1, 0], [0, 1, 0], [0, 0, 1]])
    t = apply_cell_transform(s, shear)
    assert np.allclose(t.lattice[:, 1], [5, 5, 0])
    for i in range(2):
        for j in range(2):
            d0 = np.linalg.norm(oracle_min_image(s, i, j))
            d1 = np.linalg.norm(oracle_min_image(t, i, j))
            assert abs(d0 - d1) < 1e-9
    with pytest.raises(NotUnimodular):
        apply_cell_transform(s, 2 * np.eye(3, dtype=int))


@given(st.integers(0, 10_000), st.integers(0, 12))
def test_random_unimodular(seed, steps):
    M = random_unimodular(seed, steps)
    assert abs(round(np.linalg.det(M))) == 1
    assert np.array_equal(M, random_unimodular(seed, steps))
    assert np.array_equal(M @ integer_inverse(M), np.eye(3, dtype=int))
    if steps == 0:
        assert np.array_equal(M, np.eye(3, dtype=int))


def test_supercell_counts():
    s = CrystalStructure(5 * np.eye(3), [[0, 0, 0]], [1])
    assert build_supercell(s, (1, 1, 1)).num_atoms == 1
    t = build_supercell(s, (2, 1, 1))
    assert t.num_atoms == 2 and np.allclose(t.lattice[:, 0], [10, 0, 0])
    nacl = CrystalStructure(5.6 * np.eye(3), [[0, 0, 0], [0.5, 0.5, 0.5]], [11, 17])
    assert build_supercell(nacl, (2, 2, 2)).num_atoms == 16


def test_rotation_preserves_distances(rng):
    s = random_structure(rng)
    R = rotation_matrix(rng)
    assert np.allclose(R @ R.T, np.eye(3)) and np.isclose(np.linalg.det(R), 1)
    t = rotate_structure(s, R)
    assert np.allclose(t.cart, s.cart @ R.T)
