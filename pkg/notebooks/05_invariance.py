"""Invariance report for a model on a handful of structures.

Run with ``python3 notebooks/05_invariance.py``.
"""

import numpy as np

from prism import ModelConfig, PrismModel, generate_synthetic, run_invariance_suite

model = PrismModel(ModelConfig(), seed=0)
model.params["readout.w2"] = np.random.default_rng(0).normal(size=(32, 1))
structures = generate_synthetic("short-range", 3, seed=5)

report = run_invariance_suite(model, structures, trials=10)
for r in report.results:
    print(f"{r.check:24s} trials={r.trials:3d} max_dev={r.max_dev:.2e} tol={r.tol:.0e} "
          f"{'pass' if r.passed else 'FAIL'}")
