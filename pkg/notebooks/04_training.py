"""Training on the layered synthetic task, with and without the extra experts.

The long-range targets depend on the spacing between layers, which is wider
than the radius cutoff. A radius graph alone cannot see it; the cell and
multiscale experts can. This small run shows the gap in about half a
minute; the acceptance test repeats it at n = 2000 over three seeds.

Run with ``python3 notebooks/04_training.py``.
"""

from prism import TrainConfig, generate_synthetic, grad_check, train
from prism.model import ModelConfig, PrismModel

data = generate_synthetic("long-range", 500, seed=0)

for name, flags in [("full mixture", {}),
                    ("atomistic only", dict(similarity=False, multiscale=False, cell=False))]:
    model, rows = train(data, TrainConfig(epochs=20, seed=0, **flags), record_time=False)
    print(f"{name:15s} val MAE {rows[-1]['val_mae']:.5f}")

# Analytic gradients against central differences on a tiny model.
tiny = PrismModel(ModelConfig(dim=8, layers=1, edge_dim=8, num_rbf=8), seed=1,
                  target_mean=0.15, target_std=0.02)
tiny.params["readout.w2"][:] = 0.3
print("gradient check, max relative error:", grad_check(tiny, data[0]))
