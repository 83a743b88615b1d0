"""Desk-scale training, evaluation, gradient checking and fusion reports."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .errors import (
    ConfigError,
    DivergenceDetected,
    EmptyInput,
    LayerMismatch,
    LengthMismatch,
    NonFinite,
)
from .lattice import rotate_structure, rotation_matrix
from .model import ModelConfig, PrismModel, collate, forward, prepare

log = logging.getLogger(__name__)

AUGMENTATIONS = ("none", "random-rotation")
EPOCH_COLUMNS = ("epoch", "train_loss", "train_mae", "val_mae", "wall_seconds")
REPORT_COLUMNS = (
    "layer", "gate_cell", "gate_multi", "w_atomistic", "w_similarity", "w_multiscale",
    "seed_mean", "model",
    "gate_cell_std", "gate_multi_std", "w_atomistic_std", "w_similarity_std", "w_multiscale_std",
)


@dataclass
class TrainConfig:
    lr: float = 3e-3
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    val_fraction: float = 0.2
    huber_delta: float = 0.01
    augmentation: str = "none"
    r_c: float = 4.0
    R_c: float = 12.0
    r_f: float = 0.5
    max_degree: int = 8
    layers: int = 2
    dim: int = 32
    num_rbf: int = 16
    edge_dim: int = 16
    use_direction: bool = False
    atomistic: bool = True
    similarity: bool = True
    multiscale: bool = True
    cell: bool = True

    def __post_init__(self):
        if self.augmentation not in AUGMENTATIONS:
            raise ConfigError(f"augmentation must be one of {AUGMENTATIONS}")
        if self.epochs < 0 or self.batch_size < 1 or not self.lr > 0:
            raise ConfigError("epochs >= 0, batch_size >= 1 and lr > 0 required")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")
        self.model_config()

    def model_config(self) -> ModelConfig:
        names = {f.name for f in fields(ModelConfig)}
        return ModelConfig(**{k: v for k, v in asdict(self).items() if k in names})


def mae(preds, targets) -> float:
    """Mean absolute error."""
    p = np.asarray(preds, dtype=np.float64).ravel()
    t = np.asarray(targets, dtype=np.float64).ravel()
    if p.size != t.size:
        raise LengthMismatch(f"{p.size} predictions for {t.size} targets")
    if p.size == 0:
        raise EmptyInput("mae of an empty set")
    return float(np.mean(np.abs(p - t)))


class Adam:
    def __init__(self, params: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k in sorted(params):
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def loss_and_grads(model: PrismModel, batch, huber_delta: float, frozen_sim=None):
    """Mean smooth-L1 loss on normalised targets and its parameter gradients."""
    tensors = {k: ad.parameter(v) for k, v in model.params.items()}
    res = forward(tensors, batch, model.config, frozen_sim)
    y = (batch.targets - model.target_mean) / model.target_std
    loss = ad.mean(ad.huber(res.prediction - y, huber_delta / model.target_std))
    ad.backward(loss)
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in tensors.items()}
    return float(loss.data), grads, res


def split_indices(n: int, val_fraction: float, seed: int):
    """Deterministic train/validation split; tiny sets validate on train."""
    order = np.random.default_rng(seed).permutation(n)
    n_val = int(round(val_fraction * n))
    if n_val == 0 or n_val >= n:
        return order, order
    return order[n_val:], order[:n_val]


def _has_targets(dataset):
    return all(s.target is not None and np.isfinite(s.target) for s in dataset)


def train(dataset, config: TrainConfig, record_time: bool = True):
    """Fit a model with Adam on smooth-L1 loss.

    Returns ``(model, epoch_log)`` where each log row holds
    ``epoch, train_loss, train_mae, val_mae, wall_seconds``. Runs with the
    same ``config`` are bit-identical apart from ``wall_seconds``
    (``None`` when ``record_time`` is false).
    """
    dataset = list(dataset)
    if not dataset:
        raise EmptyInput("training set is empty")
    if not _has_targets(dataset):
        raise EmptyInput("every training structure needs a finite target")
    mcfg = config.model_config()
    train_idx, val_idx = split_indices(len(dataset), config.val_fraction, config.seed)
    y_train = np.array([dataset[i].target for i in train_idx], dtype=np.float64)
    std = float(y_train.std())
    model = PrismModel(mcfg, seed=config.seed, target_mean=float(y_train.mean()),
                       target_std=std if std > 1e-12 else 1.0)
    rng = np.random.default_rng(config.seed + 1)
    prepared = [prepare(dataset[i], mcfg) for i in range(len(dataset))]
    val_items = [prepared[i] for i in val_idx]
    opt = Adam(model.params, config.lr)

    rows = []
    start = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(train_idx)
        if config.augmentation == "random-rotation":
            items = [prepare(rotate_structure(dataset[i], rotation_matrix(rng)), mcfg) for i in order]
        else:
            items = [prepared[i] for i in order]
        loss_sum, abs_err = 0.0, 0.0
        for k in range(0, len(items), config.batch_size):
            chunk = items[k:k + config.batch_size]
            batch = collate(chunk, mcfg)
            loss, grads, res = loss_and_grads(model, batch, config.huber_delta)
            if not np.isfinite(loss):
                raise DivergenceDetected(f"loss became {loss} at epoch {epoch}, batch {k // config.batch_size}")
            opt.step(model.params, grads)
            loss_sum += loss * len(chunk)
            pred = model.target_mean + model.target_std * res.prediction.data
            abs_err += float(np.abs(pred - batch.targets).sum())
        val_mae = mae(model.predict(val_items), [it.structure.target for it in val_items])
        row = {
            "epoch": epoch,
            "train_loss": loss_sum / len(items),
            "train_mae": abs_err / len(items),
            "val_mae": val_mae,
            "wall_seconds": time.perf_counter() - start if record_time else None,
        }
        rows.append(row)
        log.info("epoch %d loss %.5g train_mae %.5g val_mae %.5g", epoch,
                 row["train_loss"], row["train_mae"], row["val_mae"])
    return model, rows


def evaluate(model: PrismModel, dataset) -> float:
    """MAE of ``model`` over ``dataset``; parameters are left untouched."""
    dataset = list(dataset)
    if not dataset:
        raise EmptyInput("evaluation set is empty")
    return mae(model.predict(dataset), [s.target for s in dataset])


def write_epoch_log(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPOCH_COLUMNS)
        for r in rows:
            w.writerow([r["epoch"], repr(r["train_loss"]), repr(r["train_mae"]), repr(r["val_mae"]),
                        "" if r["wall_seconds"] is None else f"{r['wall_seconds']:.3f}"])


def grad_check(model: PrismModel, structure, eps: float = 1e-5, frozen: bool = True,
               huber_delta: float = 0.01, return_details: bool = False):
    """Largest relative gap between analytic and central-difference gradients.

    The error per entry is ``|g_a - g_fd| / max(|g_a|, |g_fd|, 1e-8)``. With
    ``frozen`` the similarity topology of the unperturbed pass is reused for
    every perturbed pass, so edge existence does not jump across ``r_f``.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-6, 1e-3]")
    if structure.target is None:
        structure = structure.copy(target=0.0)
    batch = collate([prepare(structure, model.config)], model.config)
    _, grads, res = loss_and_grads(model, batch, huber_delta)
    frozen_sim = res.sim_graphs if frozen else None

    # perturbed passes run in extended precision so that gradients far
    # below the loss scale are not drowned by float64 round-off
    wide = {k: np.asarray(v, dtype=np.longdouble).copy() for k, v in model.params.items()}
    y = (batch.targets.astype(np.longdouble) - model.target_mean) / model.target_std
    delta = np.longdouble(huber_delta) / np.longdouble(model.target_std)

    def loss_at():
        tensors = {k: ad.Tensor(v) for k, v in wide.items()}
        out = forward(tensors, batch, model.config, frozen_sim)
        return ad.mean(ad.huber(out.prediction - y, delta)).data

    h = np.longdouble(eps)
    worst, where = 0.0, None
    for name in sorted(wide):
        flat = wide[name].reshape(-1)
        g_a = grads[name].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = loss_at()
            flat[k] = orig - h
            down = loss_at()
            flat[k] = orig
            g_fd = float((up - down) / (2 * h))
            if not np.isfinite(g_fd):
                raise NonFinite(f"non-finite finite difference for {name}[{k}]")
            err = abs(g_a[k] - g_fd) / max(abs(g_a[k]), abs(g_fd), 1e-8)
            if err > worst:
                worst, where = err, (name, k, float(g_a[k]), g_fd)
    if return_details:
        return worst, where
    return worst


@dataclass
class FusionReport:
    """Per-model rows ``(model, layer, values)`` plus across-model statistics.

    ``values`` is ``(gate_cell, gate_multi, w_atomistic, w_similarity,
    w_multiscale)``; ``mean`` and ``std`` have one row per layer followed by
    a row averaged over layers.
    """

    per_model: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    @property
    def num_layers(self) -> int:
        return self.per_model.shape[1]

    def rows(self):
        out = []
        n_models, n_layers, _ = self.per_model.shape
        for m in range(n_models):
            for l in range(n_layers):
                out.append([l, *self.per_model[m, l], 0, m, *([0.0] * 5)])
            out.append(["all", *self.per_model[m].mean(axis=0), 0, m, *([0.0] * 5)])
        for l in range(n_layers + 1):
            layer = l if l < n_layers else "all"
            out.append([layer, *self.mean[l], 1, "mean", *self.std[l]])
        return out

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for r in self.rows():
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def fusion_report(models) -> FusionReport:
    """Gate and softmax weights per layer, averaged over models (seeds)."""
    models = list(models)
    if not models:
        raise EmptyInput("fusion report needs at least one model")
    layers = {m.config.layers for m in models}
    if len(layers) != 1:
        raise LayerMismatch(f"models disagree on layer count: {sorted(layers)}")
    per_model = np.array([m.fusion_values() for m in models], dtype=np.float64)
    # append the average over layers as a final pseudo-layer for the stats
    with_all = np.concatenate([per_model, per_model.mean(axis=1, keepdims=True)], axis=1)
    return FusionReport(per_model, with_all.mean(axis=0), with_all.std(axis=0))
