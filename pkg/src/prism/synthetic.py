"""
Synthetic crystal datasets with closed-form targets.

``short-range``
    Random triclinic cells with 1-8 atoms; the target is the per-atom
    Lennard-Jones-like energy over all periodic pairs closer than 4 Angstrom.
``long-range``
    Two identical flat layers per cell stacked along z with spacing ``d``
    (half the cell height). Layers sit further apart than the atomistic
    cutoff, so a radius graph cannot see ``d``; the target is ``1 / d``.
``mixed``
    The layered cells with target ``0.5 * short_range + 0.5 / d``.

:func:`recompute_target` re-derives every target by brute-force image
enumeration and serves as the independent checker.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .lattice import CrystalStructure

SYNTHETIC_KINDS = ("short-range", "long-range", "mixed")
PAIR_CUTOFF = 4.0
LJ_SIGMA = 1.5
LJ_EPSILON = 0.05
MIN_SEPARATION = 1.5
SPECIES = (3, 6, 8, 11, 14, 26)
MIX_WEIGHT = 0.5


def lattice_from_parameters(a, b, c, alpha, beta, gamma) -> np.ndarray:
    """Column lattice matrix from lengths (Angstrom) and angles (degrees)."""
    al, be, ga = (math.radians(x) for x in (alpha, beta, gamma))
    ax = np.array([a, 0.0, 0.0])
    bx = np.array([b * math.cos(ga), b * math.sin(ga), 0.0])
    cx = c * math.cos(be)
    cy = c * (math.cos(al) - math.cos(be) * math.cos(ga)) / math.sin(ga)
    cz = math.sqrt(max(c * c - cx * cx - cy * cy, 1e-12))
    return np.column_stack([ax, bx, np.array([cx, cy, cz])])


def lj_kernel(r):
    x = (LJ_SIGMA / np.asarray(r, dtype=np.float64)) ** 6
    return 4.0 * LJ_EPSILON * (x * x - x)


def _plane_heights(L):
    a, b, c = L[:, 0], L[:, 1], L[:, 2]
    vol = abs(float(np.dot(a, np.cross(b, c))))
    return np.array([vol / np.linalg.norm(np.cross(b, c)),
                     vol / np.linalg.norm(np.cross(c, a)),
                     vol / np.linalg.norm(np.cross(a, b))])


def _shift_grid(L, cutoff):
    bound = [int(math.ceil(cutoff / h)) + 1 for h in _plane_heights(L)]
    grid = itertools.product(*(range(-k, k + 1) for k in bound))
    return np.array(list(grid), dtype=np.float64) @ L.T


def _image_distances(L, origins, targets, cutoff):
    """Distances ``|t - o + L n|`` for all origin/target pairs and shifts.

    Returns an array of shape (len(origins), len(targets), S).
    """
    images = _shift_grid(L, cutoff)
    v = (np.asarray(targets)[None, :, None, :] - np.asarray(origins)[:, None, None, :]
         + images[None, None, :, :])
    return np.sqrt((v * v).sum(axis=-1))


def pair_energy(s: CrystalStructure) -> float:
    """Per-atom half-sum of the pair kernel over all images within 4 Angstrom."""
    cart = s.cart
    r = _image_distances(s.lattice, cart, cart, PAIR_CUTOFF)
    r = r[(r > 0.0) & (r < PAIR_CUTOFF)]
    return 0.5 * float(lj_kernel(r).sum()) / s.num_atoms


def layer_spacing(s: CrystalStructure) -> float:
    """Half the cell height normal to the first two lattice vectors."""
    return 0.5 * float(_plane_heights(s.lattice)[2])


def recompute_target(s: CrystalStructure, kind: str) -> float:
    if kind == "short-range":
        return pair_energy(s)
    if kind == "long-range":
        return 1.0 / layer_spacing(s)
    if kind == "mixed":
        return MIX_WEIGHT * pair_energy(s) + (1.0 - MIX_WEIGHT) / layer_spacing(s)
    raise ValueError(f"unknown synthetic kind {kind!r}")


def _min_distance(L, cart, p):
    return float(_image_distances(L, [p], cart, MIN_SEPARATION).min())


def _place(rng, L, count, sampler):
    cart = []
    for _ in range(count):
        for _ in range(200):
            f = sampler()
            p = L @ f
            if not cart or _min_distance(L, cart, p) >= MIN_SEPARATION:
                cart.append(p)
                break
    return cart


def _random_cell(rng):
    lengths = rng.uniform(3.0, 5.5, size=3)
    angles = rng.uniform(70.0, 110.0, size=3)
    L = lattice_from_parameters(*lengths, *angles)
    want = int(rng.integers(1, 9))
    cart = _place(rng, L, want, lambda: rng.random(3))
    frac = np.linalg.solve(L, np.array(cart).T).T
    numbers = rng.choice(SPECIES, size=len(cart))
    return L, frac, numbers


def _layered_cell(rng, gap_min):
    a, b = rng.uniform(3.0, 3.8, size=2)
    gamma = rng.uniform(75.0, 105.0)
    d = rng.uniform(gap_min, gap_min + 3.0)
    L = lattice_from_parameters(a, b, 2.0 * d, 90.0, 90.0, gamma)
    want = int(rng.integers(1, 5))
    cart = _place(rng, L, want, lambda: np.array([rng.random(), rng.random(), 0.0]))
    layer = np.linalg.solve(L, np.array(cart).T).T
    layer[:, 2] = 0.0
    offset = np.array([rng.uniform(0.0, 0.15), rng.uniform(0.0, 0.15), 0.5])
    frac = np.concatenate([layer, layer + offset])
    species = rng.choice(SPECIES, size=len(layer))
    return L, frac, np.concatenate([species, species])


def generate_synthetic(kind: str, n: int, seed: int, gap_min: float = 4.5):
    """``n`` structures of the given kind, reproducible from ``seed``.

    ``gap_min`` is the smallest interlayer spacing of the layered kinds and
    should exceed the atomistic cutoff.
    """
    if kind not in SYNTHETIC_KINDS:
        raise ValueError(f"kind must be one of {SYNTHETIC_KINDS}")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        if kind == "short-range":
            L, frac, numbers = _random_cell(rng)
        else:
            L, frac, numbers = _layered_cell(rng, gap_min)
        s = CrystalStructure(L, frac, numbers, id=f"{kind}-{seed}-{k:05d}")
        s.target = recompute_target(s, kind)
        out.append(s)
    return out
