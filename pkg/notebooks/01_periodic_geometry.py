"""Periodic geometry: coordinates, minimum images and equivalent cells.

Run with ``python3 notebooks/01_periodic_geometry.py``.
"""

import numpy as np

from prism import (
    CrystalStructure,
    apply_cell_transform,
    build_supercell,
    frac_to_cart,
    min_image_displacement,
    random_unimodular,
)

# Lattice vectors are the *columns* of L. A sheared cell:
L = np.column_stack([[4.0, 0.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 4.0]])
print("frac (0.5, 0.5, 0) ->", frac_to_cart(L, [0.5, 0.5, 0.0]))

# Two atoms 4.9 A apart in a 5 A cube are really 0.1 A apart through the boundary.
d, n = min_image_displacement(5 * np.eye(3), [0, 0, 0], [4.9, 0, 0])
print("minimum image", d.round(12), "via shift", n)

# The same crystal written in a skewed but equivalent cell keeps every distance.
s = CrystalStructure(5.6 * np.eye(3), [[0, 0, 0], [0.5, 0.5, 0.5]], [11, 17], id="nacl-like")
M = random_unimodular(seed=3, steps=5)
t = apply_cell_transform(s, M)
print("cell transform\n", M)
print("new lattice columns\n", t.lattice.round(3))
d0, _ = min_image_displacement(s.lattice, s.cart[0], s.cart[1])
d1, _ = min_image_displacement(t.lattice, t.cart[0], t.cart[1])
print(f"Na-Cl distance: {np.linalg.norm(d0):.12f} vs {np.linalg.norm(d1):.12f}")

print("2x2x2 supercell atoms:", build_supercell(s, (2, 2, 2)).num_atoms)
