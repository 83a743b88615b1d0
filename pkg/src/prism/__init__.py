"""Periodic multigraph expert networks for crystal property prediction."""

from .errors import *  # noqa: F401,F403
from .graphs import (
    PeriodicGraph,
    build_atomistic_graph,
    build_cell_graph,
    build_multiscale_graph,
    build_similarity_graph,
    shift_bounds,
)
from .invariance import (
    InvarianceReport,
    build_pathology_scenarios,
    check_cell_invariance,
    check_permutation,
    check_rotation,
    connected_components,
    oracle_min_image,
    run_invariance_suite,
)
from .io import parse_run_config, parse_structures, write_structures
from .lattice import (
    CrystalStructure,
    apply_cell_transform,
    build_supercell,
    cart_to_frac,
    frac_to_cart,
    min_image_displacement,
    random_unimodular,
    wrap_to_cell,
)
from .model import ModelConfig, PrismModel
from .synthetic import generate_synthetic, recompute_target
from .training import TrainConfig, evaluate, fusion_report, grad_check, mae, train

__version__ = "0.1.0"
