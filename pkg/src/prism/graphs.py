"""
Expert graph topologies under periodic boundary conditions.

Every builder returns a :class:`PeriodicGraph` whose edges are sorted by
``(src, dst, n1, n2, n3)``. Geometric edges carry the displacement
``r_dst - r_src + L @ shift``; messages flow from ``src`` to ``dst``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .lattice import (
    CrystalStructure,
    lattice_shift,
    min_image_displacements,
    validate_lattice,
)

ATOMISTIC = "atomistic"
SIMILARITY = "similarity"
CELL = "cell"
MULTISCALE = "multiscale"
KINDS = (ATOMISTIC, SIMILARITY, CELL, MULTISCALE)


@dataclass
class PeriodicGraph:
    """Typed multigraph with per-edge lattice shifts.

    ``disp`` and ``dist`` are ``None`` for the multiscale kind, whose
    bipartite edges carry no geometry.
    """

    kind: str
    num_nodes: int
    src: np.ndarray
    dst: np.ndarray
    shift: np.ndarray
    disp: np.ndarray | None = None
    dist: np.ndarray | None = None
    empty_warning: bool = False

    @property
    def num_edges(self) -> int:
        return len(self.src)

    def edge_keys(self):
        """List of ``(src, dst, n1, n2, n3)`` tuples in canonical order."""
        return [
            (int(a), int(b), int(n[0]), int(n[1]), int(n[2]))
            for a, b, n in zip(self.src, self.dst, self.shift)
        ]

    def to_record(self, structure_id: str) -> dict:
        edges = []
        for e in range(self.num_edges):
            row = [int(self.src[e]), int(self.dst[e])] + [int(v) for v in self.shift[e]]
            if self.disp is None:
                row += [None, None, None]
            else:
                row += [float(v) for v in self.disp[e]]
            edges.append(row)
        return {"id": structure_id, "kind": self.kind, "num_nodes": int(self.num_nodes), "edges": edges}


def _canonical(kind, num_nodes, src, dst, shift, disp=None):
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    shift = np.asarray(shift, dtype=np.int64).reshape(-1, 3)
    order = np.lexsort((shift[:, 2], shift[:, 1], shift[:, 0], dst, src))
    src, dst, shift = src[order], dst[order], shift[order]
    dist = None
    if disp is not None:
        disp = np.asarray(disp, dtype=np.float64).reshape(-1, 3)[order]
        dist = np.sqrt(np.einsum("ij,ij->i", disp, disp))
    return PeriodicGraph(kind, num_nodes, src, dst, shift, disp, dist,
                         empty_warning=len(src) == 0)


def shift_bounds(lattice, cutoff: float) -> np.ndarray:
    """Per-axis image bound ``ceil(cutoff * |row_k(inv(L))|)``.

    ``1 / |row_k(inv(L))|`` is the spacing between lattice planes of the
    k-th family, so for wrapped sites every image closer than ``cutoff``
    has ``|n_k|`` within the bound.
    """
    if not cutoff > 0:
        raise ValueError("cutoff must be positive")
    L = validate_lattice(lattice)
    rows = np.linalg.norm(np.linalg.inv(L), axis=1)
    return np.ceil(cutoff * rows).astype(np.int64)


def shift_block(bounds) -> np.ndarray:
    """All integer shifts in ``[-b, b]`` per axis, shape (S, 3)."""
    return np.array(
        list(itertools.product(*(range(-int(b), int(b) + 1) for b in bounds))),
        dtype=np.int64,
    )


def build_atomistic_graph(s: CrystalStructure, r_c: float) -> PeriodicGraph:
    """Radius multigraph: one edge per image with ``0 < |disp| < r_c``.

    Self pairs ``i == j`` contribute their nonzero periodic images.
    """
    if not r_c > 0:
        raise ValueError("r_c must be positive")
    L = s.lattice
    shifts = shift_block(shift_bounds(L, r_c))
    cart = s.cart
    n = s.num_atoms
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    base = cart[jj] - cart[ii]
    disp = base[:, None, :] + lattice_shift(L, shifts)[None, :, :]
    d2 = np.einsum("psk,psk->ps", disp, disp)
    p, k = np.nonzero((d2 > 0.0) & (d2 < r_c * r_c))
    return _canonical(ATOMISTIC, n, ii[p], jj[p], shifts[k], disp[p, k])


def build_cell_graph(s: CrystalStructure, R_c: float) -> PeriodicGraph:
    """Superatom graph: node 0 linked to each replica ``L @ n`` with ``|L n| < R_c``."""
    if not R_c > 0:
        raise ValueError("R_c must be positive")
    L = s.lattice
    shifts = shift_block(shift_bounds(L, R_c))
    disp = lattice_shift(L, shifts)
    d2 = np.einsum("sk,sk->s", disp, disp)
    keep = np.any(shifts != 0, axis=1) & (d2 < R_c * R_c)
    m = int(keep.sum())
    zeros = np.zeros(m, dtype=np.int64)
    return _canonical(CELL, 1, zeros, zeros, shifts[keep], disp[keep])


def build_multiscale_graph(s: CrystalStructure) -> PeriodicGraph:
    """Bipartite star: superatom (index ``N``) to and from every atom."""
    n = s.num_atoms
    atoms = np.arange(n)
    sup = np.full(n, n)
    src = np.concatenate([atoms, sup])
    dst = np.concatenate([sup, atoms])
    g = _canonical(MULTISCALE, n + 1, src, dst, np.zeros((2 * n, 3)))
    return g


def select_feature_neighbors(H, valid, r_f: float, max_degree: int):
    """Nearest feature-space neighbours inside padded blocks.

    Parameters
    ----------
    H : np.ndarray, shape (B, N, d)
        Embeddings padded to a common ``N``.
    valid : np.ndarray of bool, shape (B, N)
    r_f : float
        Strict cutoff on the Euclidean embedding distance.
    max_degree : int
        At most this many neighbours per source node; ties go to the
        smaller node index.

    Returns
    -------
    b, i, j : np.ndarray
        Block, source and destination indices, in ``(b, i, j)`` order.
    """
    H = np.asarray(H, dtype=np.float64)
    B, N, _ = H.shape
    diff = H[:, :, None, :] - H[:, None, :, :]
    D = np.sqrt(np.einsum("bijk,bijk->bij", diff, diff))
    ok = valid[:, :, None] & valid[:, None, :] & ~np.eye(N, dtype=bool)[None]
    D = np.where(ok, D, np.inf)
    order = np.argsort(D, axis=-1, kind="stable")[:, :, :max_degree]
    Dk = np.take_along_axis(D, order, axis=-1)
    keep = Dk < r_f
    keep_full = np.zeros((B, N, N), dtype=bool)
    bb, ii, kk = np.nonzero(keep)
    keep_full[bb, ii, order[bb, ii, kk]] = True
    return np.nonzero(keep_full)


def min_image_table(s: CrystalStructure):
    """Minimum-image displacement from every site ``i`` to every site ``j``.

    Returns ``disp`` (N, N, 3) with ``disp[i, j] = r_j - r_i + L n`` of
    minimal norm, and the matching ``shift`` (N, N, 3).
    """
    cart = s.cart
    n = s.num_atoms
    delta = (cart[None, :, :] - cart[:, None, :]).reshape(-1, 3)
    d, sh = min_image_displacements(s.lattice, delta)
    return d.reshape(n, n, 3), sh.reshape(n, n, 3)


def build_similarity_graph(
    s: CrystalStructure,
    embeddings,
    r_f: float,
    max_degree: int = 8,
    table=None,
) -> PeriodicGraph:
    """Feature-space graph with minimum-image geometric attributes.

    Edge ``i -> j`` exists when ``|h_i - h_j| < r_f`` and ``j`` is among the
    ``max_degree`` feature-nearest atoms of ``i``. The edge geometry is the
    minimum-image displacement, so equivalent cells give identical edge
    lengths. The graph may be empty or disconnected.
    """
    H = np.asarray(embeddings, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != s.num_atoms:
        raise DimensionMismatch(
            f"expected {s.num_atoms} embeddings, got array of shape {H.shape}"
        )
    if not r_f > 0 or max_degree < 1:
        raise ValueError("r_f must be positive and max_degree >= 1")
    _, i, j = select_feature_neighbors(H[None], np.ones((1, len(H)), dtype=bool), r_f, max_degree)
    if table is None:
        table = min_image_table(s)
    disp, shift = table
    return _canonical(SIMILARITY, s.num_atoms, i, j, shift[i, j], disp[i, j])


def build_static_graphs(s: CrystalStructure, r_c: float, R_c: float) -> dict:
    """The three embedding-independent graphs of a structure."""
    return {
        ATOMISTIC: build_atomistic_graph(s, r_c),
        CELL: build_cell_graph(s, R_c),
        MULTISCALE: build_multiscale_graph(s),
    }
