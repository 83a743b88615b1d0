"""The four expert graphs on a small crystal and on the two failure cases.

Run with ``python3 notebooks/02_expert_graphs.py``.
"""

import numpy as np

from prism import (
    CrystalStructure,
    PrismModel,
    build_atomistic_graph,
    build_cell_graph,
    build_multiscale_graph,
    build_pathology_scenarios,
    build_similarity_graph,
    connected_components,
)
from prism.model import _as_params, encode_atoms

bcc = CrystalStructure(4 * np.eye(3), [[0, 0, 0], [0.5, 0.5, 0.5]], [26, 26], id="bcc")

# Radius multigraph: each of the 8 body-diagonal neighbours is a separate image edge.
g = build_atomistic_graph(bcc, 3.5)
print("atomistic edges per atom:", np.bincount(g.src), "length", g.dist[0].round(4))

# Superatom to its own periodic replicas.
print("cell graph edges at R_c = 12:", build_cell_graph(bcc, 12.0).num_edges)

# Bipartite star between atoms and the superatom (index N).
print("multiscale edges:", build_multiscale_graph(bcc).edge_keys())

# Feature-space graph: identical elements share an embedding, so the two iron
# atoms are neighbours regardless of where they sit.
model = PrismModel(seed=0)
emb = encode_atoms(bcc.numbers, _as_params(model.params)).data
sim = build_similarity_graph(bcc, emb, r_f=0.5)
print("similarity edges:", sim.edge_keys(), "lengths", sim.dist.round(4))

layered, distinct = build_pathology_scenarios()
a = build_atomistic_graph(layered, 3.0)
print("layered crystal, radius graph components:", connected_components(layered.num_atoms, a.src, a.dst))
emb = encode_atoms(distinct.numbers, _as_params(model.params)).data
print("one atom per element: similarity edges",
      build_similarity_graph(distinct, emb, 0.5).num_edges,
      "cell edges", build_cell_graph(distinct, 15.0).num_edges)
