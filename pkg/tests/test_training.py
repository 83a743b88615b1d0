import numpy as np
import pytest

from oracles import random_structure
from prism import autodiff as ad
from prism.errors import ConfigError, EmptyInput, LayerMismatch, LengthMismatch
from prism.lattice import CrystalStructure
from prism.model import ModelConfig, PrismModel
from prism.synthetic import generate_synthetic
from prism.training import (
    Adam,
    TrainConfig,
    evaluate,
    fusion_report,
    grad_check,
    mae,
    split_indices,
    train,
    write_epoch_log,
)

SMALL = dict(dim=8, layers=1, edge_dim=8, num_rbf=8)


def test_mae_examples():
    assert mae([1, 2], [1, 4]) == 1.0
    assert mae([3.0, 5.0], [3.0, 5.0]) == 0.0
    assert mae([3], [1]) == 2.0
    with pytest.raises(LengthMismatch):
        mae([1, 2], [1])
    with pytest.raises(EmptyInput):
        mae([], [])


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(augmentation="flip")
    with pytest.raises(ConfigError):
        TrainConfig(r_c=13.0)


def test_split_is_deterministic_and_disjoint():
    tr, va = split_indices(50, 0.2, 3)
    assert len(va) == 10 and not set(tr) & set(va)
    assert np.array_equal(tr, split_indices(50, 0.2, 3)[0])


def test_adam_minimises_quadratic():
    params = {"x": np.array([3.0, -2.0])}
    opt = Adam(params, lr=0.1)
    for _ in range(300):
        opt.step(params, {"x": 2 * params["x"]})
    assert np.all(np.abs(params["x"]) < 1e-2)


def test_constant_target_learned():
    data = [s.copy(target=1.7) for s in generate_synthetic("short-range", 30, 5)]
    model, rows = train(data, TrainConfig(epochs=3, batch_size=8, **SMALL))
    assert rows[-1]["val_mae"] < 1e-3


def test_training_is_reproducible(tmp_path):
    data = generate_synthetic("mixed", 24, 2)
    cfg = TrainConfig(epochs=2, batch_size=8, **SMALL)
    m1, r1 = train(data, cfg, record_time=False)
    m2, r2 = train(data, cfg, record_time=False)
    write_epoch_log(r1, tmp_path / "a.csv")
    write_epoch_log(r2, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    for k in m1.params:
        assert np.array_equal(m1.params[k], m2.params[k])


def test_training_reduces_loss():
    data = generate_synthetic("long-range", 60, 0)
    _, rows = train(data, TrainConfig(epochs=8, batch_size=16, **SMALL))
    assert rows[-1]["train_loss"] < rows[0]["train_loss"]


def test_rotation_augmentation_runs():
    data = generate_synthetic("short-range", 10, 0)
    cfg = TrainConfig(epochs=1, batch_size=5, augmentation="random-rotation", use_direction=True, **SMALL)
    _, rows = train(data, cfg)
    assert np.isfinite(rows[0]["train_loss"])


def test_evaluate_leaves_params_untouched():
    data = generate_synthetic("short-range", 6, 1)
    model = PrismModel(ModelConfig(**SMALL), seed=0, target_mean=0.1)
    before = {k: v.copy() for k, v in model.params.items()}
    assert evaluate(model, data) == evaluate(model, data)
    assert all(np.array_equal(before[k], model.params[k]) for k in before)


def _nontrivial_model(cfg, seed=3):
    model = PrismModel(cfg, seed=seed, target_mean=0.1, target_std=0.02)
    model.params["readout.w2"] = np.random.default_rng(seed).normal(size=(cfg.dim, 1))
    return model


def test_grad_check_linear_toy():
    """Exact differentiation of a purely linear map."""
    rng = np.random.default_rng(0)
    w0, x = rng.normal(size=(4, 2)), rng.normal(size=(3, 4))
    w = ad.parameter(w0)
    ad.backward(ad.sum(x @ w))
    eps = 1e-6
    worst = 0.0
    for k in np.ndindex(w0.shape):
        up, down = w0.copy(), w0.copy()
        up[k] += eps
        down[k] -= eps
        fd = ((x @ up).sum() - (x @ down).sum()) / (2 * eps)
        worst = max(worst, abs(w.grad[k] - fd) / max(abs(w.grad[k]), abs(fd), 1e-8))
    assert worst < 1e-7


def test_grad_check_unfrozen_detects_crossing():
    """Place the feature cutoff just above a pair distance so perturbations cross it."""
    from prism.model import _as_params, encode_atoms

    s = CrystalStructure(4 * np.eye(3), [[0, 0, 0], [0.5, 0.5, 0.5]], [6, 8], target=0.3)
    probe = _nontrivial_model(ModelConfig(**SMALL))
    emb = encode_atoms(s.numbers, _as_params(probe.params)).data
    gap = float(np.linalg.norm(emb[0] - emb[1]))
    cfg = ModelConfig(r_f=gap + 1e-7, **SMALL)
    model = _nontrivial_model(cfg)
    assert grad_check(model, s, frozen=True) < 1e-4
    assert grad_check(model, s, frozen=False) > 1e-2


def test_fusion_report_examples(tmp_path):
    m = PrismModel(ModelConfig(**SMALL))
    rep = fusion_report([m])
    assert np.allclose(rep.mean[:, 0], 0.5) and np.allclose(rep.mean[:, 2:], 1 / 3)
    m2 = PrismModel(ModelConfig(**SMALL), seed=5)
    m2.params["layers.0.fusion.logits"] = np.array([0.4, -1.0, 2.0])
    rep = fusion_report([m2, m2])
    assert np.all(rep.std == 0)
    assert np.allclose(rep.per_model[..., 2:].sum(-1), 1.0, atol=1e-12)
    rep.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0].startswith("layer,gate_cell,gate_multi,w_atomistic")
    with pytest.raises(LayerMismatch):
        fusion_report([m, PrismModel(ModelConfig(dim=8, layers=2, edge_dim=8, num_rbf=8))])
    with pytest.raises(EmptyInput):
        fusion_report([])
