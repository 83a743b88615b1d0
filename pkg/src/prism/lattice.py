"""
Periodic cell geometry.

Lattice matrices use the column convention: ``L[:, k]`` is the k-th lattice
vector, so Cartesian positions are ``r = L @ f`` and fractional positions are
``f = inv(L) @ r``. For stacks of points (shape ``(N, 3)``) the same maps
read ``r = f @ L.T``.

Minimum-image displacements are ``r_i - r_j + L @ n`` for the integer shift
``n`` of smallest norm. Ties between images of exactly equal norm are broken
by the key ``(sum|n|, |n1|, |n2|, |n3|, n1, n2, n3)``, which makes the
displacement of ``(j, i)`` the exact negation of that of ``(i, j)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFinite, NotUnimodular, SingularLattice, UnknownElement

#: Smallest admissible ``|det(L)|`` in cubic Angstrom.
DET_TOLERANCE = 1e-8

_OFFSETS_1 = np.array(list(itertools.product((-1, 0, 1), repeat=3)), dtype=np.int64)


def validate_lattice(lattice) -> np.ndarray:
    """Return ``lattice`` as a float (3, 3) array or raise ``SingularLattice``."""
    L = np.asarray(lattice, dtype=np.float64)
    if L.shape != (3, 3):
        raise SingularLattice(f"lattice must be 3x3, got shape {L.shape}")
    if not np.all(np.isfinite(L)):
        raise SingularLattice("lattice has non-finite entries")
    det = np.linalg.det(L)
    if not abs(det) > DET_TOLERANCE:
        raise SingularLattice(f"|det(L)| = {abs(det):.3g} <= {DET_TOLERANCE}")
    return L


def frac_to_cart(lattice, f) -> np.ndarray:
    """Map fractional coordinates (``(3,)`` or ``(N, 3)``) to Cartesian."""
    L = np.asarray(lattice, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    return f @ L.T


def cart_to_frac(lattice, r) -> np.ndarray:
    """Map Cartesian coordinates (``(3,)`` or ``(N, 3)``) to fractional."""
    L = validate_lattice(lattice)
    r = np.asarray(r, dtype=np.float64)
    return np.linalg.solve(L, r.T).T


def wrap_to_cell(f) -> np.ndarray:
    """Translate fractional coordinates by integers into ``[0, 1)``."""
    f = np.asarray(f, dtype=np.float64)
    if not np.all(np.isfinite(f)):
        raise NonFinite("fractional coordinates must be finite")
    w = f - np.floor(f)
    # -1e-17 - floor(-1e-17) rounds to exactly 1.0
    return np.where(w >= 1.0, 0.0, w)


def lattice_shift(lattice, n) -> np.ndarray:
    """``L @ n`` for integer shifts of shape ``(..., 3)``.

    Evaluated as an explicit sum of scaled columns so that ``L @ (-n)`` is
    bitwise ``-(L @ n)`` regardless of array shape.
    """
    L = np.asarray(lattice, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return (n[..., 0:1] * L[:, 0] + n[..., 1:2] * L[:, 1]) + n[..., 2:3] * L[:, 2]


def _norm2(d):
    return (d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1]) + d[..., 2] * d[..., 2]


def _select_image(norm2, shifts):
    """Index of the preferred image along the last candidate axis.

    ``norm2`` has shape (P, K), ``shifts`` (P, K, 3).
    """
    a = np.abs(shifts)
    keys = (
        shifts[..., 2], shifts[..., 1], shifts[..., 0],
        a[..., 2], a[..., 1], a[..., 0],
        a.sum(axis=-1),
        norm2,
    )
    order = np.lexsort(keys, axis=-1)
    return order[..., 0]


def min_image_displacements(lattice, delta):
    """Vectorized minimum image of Cartesian differences.

    Parameters
    ----------
    lattice : array_like, shape (3, 3)
        Lattice matrix, columns are lattice vectors.
    delta : array_like, shape (P, 3)
        Raw differences ``r_i - r_j``.

    Returns
    -------
    d_min : np.ndarray, shape (P, 3)
        ``delta + L @ shift`` of minimal norm.
    shift : np.ndarray of int64, shape (P, 3)
    """
    L = validate_lattice(lattice)
    Linv = np.linalg.inv(L)
    delta = np.asarray(delta, dtype=np.float64).reshape(-1, 3)
    d_frac = delta @ Linv.T
    n0 = -np.floor(d_frac + 0.5).astype(np.int64)

    shifts = n0[:, None, :] + _OFFSETS_1[None, :, :]
    d = delta[:, None, :] + lattice_shift(L, shifts)
    n2 = _norm2(d)
    pick = _select_image(n2, shifts)
    rows = np.arange(len(delta))
    best_shift = shifts[rows, pick]
    best_d = d[rows, pick]

    # Every image at least as short as the current best lies in the box
    # |f_k + n_k| <= rho * |row_k(inv(L))|; fall back to that box when it
    # pokes out of the searched block.
    rho = np.sqrt(n2[rows, pick]) * (1.0 + 1e-12) + 1e-12
    row_norms = np.linalg.norm(Linv, axis=1)
    lo = np.ceil(-d_frac - rho[:, None] * row_norms).astype(np.int64)
    hi = np.floor(-d_frac + rho[:, None] * row_norms).astype(np.int64)
    outside = np.any((lo < n0 - 1) | (hi > n0 + 1), axis=1)
    for p in np.flatnonzero(outside):
        box = np.array(
            list(itertools.product(*(range(lo[p, k], hi[p, k] + 1) for k in range(3)))),
            dtype=np.int64,
        )
        box = np.concatenate([box, best_shift[p][None]], axis=0)
        dp = delta[p] + lattice_shift(L, box)
        k = _select_image(_norm2(dp)[None], box[None])[0]
        best_shift[p] = box[k]
        best_d[p] = dp[k]
    return best_d, best_shift


def min_image_displacement(lattice, r_i, r_j):
    """Minimum-image displacement ``r_i - r_j + L @ n`` and its shift ``n``.

    Starts from the fractional rounding candidate ``n = -floor(d_frac + 0.5)``
    and refines over the neighbouring block, widening the search when the
    cell is skewed enough for the true minimum to lie further out.

    Examples
    --------
    >>> d, n = min_image_displacement(5 * np.eye(3), [0, 0, 0], [4.9, 0, 0])
    >>> np.round(d, 12).tolist(), n.tolist()
    ([0.1, 0.0, 0.0], [1, 0, 0])
    """
    delta = np.asarray(r_i, dtype=np.float64) - np.asarray(r_j, dtype=np.float64)
    d, n = min_image_displacements(lattice, delta[None])
    return d[0], n[0]


@dataclass
class CrystalStructure:
    """A periodic crystal: lattice, wrapped fractional sites and species.

    ``lattice`` columns are lattice vectors in Angstrom; ``frac`` has shape
    (N, 3) and every entry lies in ``[0, 1)``; ``numbers`` are atomic numbers
    in ``[1, 118]``.
    """

    lattice: np.ndarray
    frac: np.ndarray
    numbers: np.ndarray
    id: str = ""
    target: float | None = None
    extra: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.lattice = validate_lattice(self.lattice)
        frac = np.asarray(self.frac, dtype=np.float64).reshape(-1, 3)
        if len(frac) < 1:
            raise ValueError("a structure needs at least one site")
        self.frac = wrap_to_cell(frac)
        numbers = np.asarray(self.numbers)
        if numbers.shape != (len(frac),):
            raise ValueError(
                f"{len(frac)} sites but {numbers.size} atomic numbers"
            )
        if not np.all(numbers == np.round(numbers)):
            raise UnknownElement("atomic numbers must be integers")
        numbers = numbers.astype(np.int64)
        if numbers.min() < 1 or numbers.max() > 118:
            raise UnknownElement(f"atomic numbers must lie in [1, 118]: {numbers}")
        self.numbers = numbers

    @property
    def num_atoms(self) -> int:
        return len(self.numbers)

    @property
    def cart(self) -> np.ndarray:
        return frac_to_cart(self.lattice, self.frac)

    def copy(self, **changes) -> "CrystalStructure":
        base = dict(
            lattice=self.lattice.copy(), frac=self.frac.copy(),
            numbers=self.numbers.copy(), id=self.id, target=self.target,
        )
        base.update(changes)
        return CrystalStructure(**base)


def integer_inverse(M) -> np.ndarray:
    """Exact inverse of a unimodular integer matrix via the adjugate."""
    M = np.asarray(M, dtype=np.int64)
    det = int(round(np.linalg.det(M)))
    if M.shape != (3, 3) or abs(det) != 1:
        raise NotUnimodular(f"|det(M)| must be 1, got {det}")
    adj = np.empty((3, 3), dtype=np.int64)
    for i in range(3):
        for j in range(3):
            minor = np.delete(np.delete(M, i, axis=0), j, axis=1)
            adj[j, i] = (-1) ** (i + j) * (minor[0, 0] * minor[1, 1] - minor[0, 1] * minor[1, 0])
    inv = adj * det
    if not np.array_equal(M @ inv, np.eye(3, dtype=np.int64)):
        raise NotUnimodular("matrix is not unimodular")
    return inv


def apply_cell_transform(s: CrystalStructure, M) -> CrystalStructure:
    """Re-express ``s`` in the equivalent cell ``L @ M``.

    Site order is preserved; fractional coordinates become
    ``wrap(inv(M) @ f)`` so the infinite crystal is unchanged.
    """
    M = np.asarray(M)
    if M.shape != (3, 3) or not np.all(M == np.round(M)):
        raise NotUnimodular("cell transform must be a 3x3 integer matrix")
    Minv = integer_inverse(M)
    lattice = s.lattice @ M.astype(np.float64)
    frac = s.frac @ Minv.T.astype(np.float64)
    return s.copy(lattice=lattice, frac=wrap_to_cell(frac))


def build_supercell(s: CrystalStructure, reps) -> CrystalStructure:
    """Tile ``s`` ``reps[k]`` times along each lattice vector."""
    reps = tuple(int(r) for r in reps)
    if len(reps) != 3 or min(reps) < 1:
        raise ValueError(f"reps must be three integers >= 1, got {reps}")
    cells = np.array(list(itertools.product(*(range(r) for r in reps))), dtype=np.float64)
    scale = np.array(reps, dtype=np.float64)
    frac = (s.frac[None, :, :] + cells[:, None, :]) / scale
    lattice = s.lattice * scale[None, :]
    numbers = np.tile(s.numbers, len(cells))
    return s.copy(lattice=lattice, frac=frac.reshape(-1, 3), numbers=numbers)


def random_unimodular(seed: int, steps: int) -> np.ndarray:
    """Product of ``steps`` random elementary integer row operations.

    Each step either adds or subtracts one row to another, or swaps two rows,
    so the determinant stays +-1.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    rng = np.random.default_rng(seed)
    M = np.eye(3, dtype=np.int64)
    for _ in range(steps):
        i, j = rng.choice(3, size=2, replace=False)
        if rng.random() < 0.25:
            M[[i, j]] = M[[j, i]]
        else:
            M[i] += int(rng.choice((-1, 1))) * M[j]
    return M


def rotation_matrix(rng: np.random.Generator) -> np.ndarray:
    """Uniformly random proper rotation (QR of a Gaussian matrix)."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def rotate_structure(s: CrystalStructure, R) -> CrystalStructure:
    """Rigidly rotate the crystal; fractional coordinates are unchanged."""
    return s.copy(lattice=np.asarray(R, dtype=np.float64) @ s.lattice)
