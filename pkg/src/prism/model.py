"""
Expert message passing and learned fusion.

One layer runs four experts on the same input state and mixes their outputs:

* atomistic: residual message passing over the radius multigraph;
* similarity: the same backbone over a feature-space graph rebuilt from the
  current atom embeddings, with its own per-layer edge encoder;
* multiscale: a shared MLP ``phi`` pools atoms into the superatom and then
  broadcasts the updated superatom back, using no geometry;
* cell: message passing from the superatom to its own periodic replicas.

The superatom mixes cell and multiscale outputs through ``sigmoid(alpha)``;
atoms mix atomistic, similarity and multiscale outputs through a softmax of
three logits. Everything is batched: several structures are concatenated
and ``seg`` maps each atom to its structure.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.special import expit

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, KindMismatch, ShapeMismatch, UnknownElement
from .graphs import (
    ATOMISTIC,
    CELL,
    MULTISCALE,
    SIMILARITY,
    build_atomistic_graph,
    build_cell_graph,
    min_image_table,
    select_feature_neighbors,
)
from .lattice import CrystalStructure

NUM_ELEMENTS = 118
ATOM_EXPERTS = (ATOMISTIC, SIMILARITY, MULTISCALE)
CHECKPOINT_FORMAT = "prism-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    """Architecture and graph hyperparameters.

    ``sim_basis_cutoff`` is the upper end of the radial basis used for
    similarity edges; ``None`` means ``R_c``.
    """

    dim: int = 32
    layers: int = 2
    r_c: float = 4.0
    R_c: float = 12.0
    r_f: float = 0.5
    max_degree: int = 8
    num_rbf: int = 16
    edge_dim: int = 16
    sim_basis_cutoff: float | None = None
    use_direction: bool = False
    atomistic: bool = True
    similarity: bool = True
    multiscale: bool = True
    cell: bool = True

    def __post_init__(self):
        if not (self.r_c > 0 and self.R_c > 0 and self.r_f > 0):
            raise ConfigError("cutoffs must be positive")
        if not self.R_c > self.r_c:
            raise ConfigError(f"R_c ({self.R_c}) must exceed r_c ({self.r_c})")
        if self.layers < 1 or self.dim < 1 or self.num_rbf < 2 or self.max_degree < 1:
            raise ConfigError("layers, dim, max_degree >= 1 and num_rbf >= 2 required")
        if not any(getattr(self, k) for k in ATOM_EXPERTS):
            raise ConfigError("at least one atom-level expert must be enabled")

    @property
    def basis_cutoffs(self) -> dict:
        return {
            ATOMISTIC: self.r_c,
            CELL: self.R_c,
            SIMILARITY: self.sim_basis_cutoff or self.R_c,
        }

    def enabled(self, kind: str) -> bool:
        return bool(getattr(self, kind))

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


# ----------------------------------------------------------------------------
# parameters


def _dense(rng, fan_in, fan_out):
    return rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)


def _mp_params(rng, prefix, dim, edge_dim):
    return {
        f"{prefix}.msg.w_src": _dense(rng, dim, dim),
        f"{prefix}.msg.w_dst": _dense(rng, dim, dim),
        f"{prefix}.msg.w_edge": _dense(rng, edge_dim, dim),
        f"{prefix}.msg.b1": np.zeros(dim),
        f"{prefix}.msg.w2": _dense(rng, dim, dim),
        f"{prefix}.msg.b2": np.zeros(dim),
        f"{prefix}.upd.w_self": _dense(rng, dim, dim),
        f"{prefix}.upd.w_agg": _dense(rng, dim, dim),
        f"{prefix}.upd.b1": np.zeros(dim),
        f"{prefix}.upd.w2": _dense(rng, dim, dim),
        f"{prefix}.upd.b2": np.zeros(dim),
    }


def _edge_in(config):
    return config.num_rbf + (3 if config.use_direction else 0)


def init_params(config: ModelConfig, seed: int = 0) -> dict:
    """Fresh parameter map; every enabled expert gets its own weights.

    Fusion logits start at zero so no expert is favoured.
    """
    rng = np.random.default_rng(seed)
    d, de, ein = config.dim, config.edge_dim, _edge_in(config)
    p = {
        "embed.table": rng.standard_normal((NUM_ELEMENTS, d)) / np.sqrt(d),
        "super.score": rng.standard_normal(d) / np.sqrt(d),
    }
    if config.atomistic:
        p["edge.atomistic.w"] = _dense(rng, ein, de)
        p["edge.atomistic.b"] = np.zeros(de)
    if config.cell:
        p["edge.cell.w"] = _dense(rng, ein, de)
        p["edge.cell.b"] = np.zeros(de)
    for l in range(config.layers):
        pre = f"layers.{l}"
        if config.atomistic:
            p.update(_mp_params(rng, f"{pre}.atomistic", d, de))
        if config.similarity:
            p[f"{pre}.sim_edge.w"] = _dense(rng, ein, de)
            p[f"{pre}.sim_edge.b"] = np.zeros(de)
            p.update(_mp_params(rng, f"{pre}.similarity", d, de))
        if config.cell:
            p.update(_mp_params(rng, f"{pre}.cell", d, de))
        if config.multiscale:
            p[f"{pre}.multiscale.w1"] = _dense(rng, d, d)
            p[f"{pre}.multiscale.b1"] = np.zeros(d)
            p[f"{pre}.multiscale.w2"] = _dense(rng, d, d)
            p[f"{pre}.multiscale.b2"] = np.zeros(d)
        p[f"{pre}.fusion.alpha"] = np.zeros(())
        p[f"{pre}.fusion.logits"] = np.zeros(3)
    p["readout.w1"] = _dense(rng, d, d)
    p["readout.b1"] = np.zeros(d)
    # zero output weights: an untrained model predicts the training mean
    p["readout.w2"] = np.zeros((d, 1))
    p["readout.b2"] = np.zeros(1)
    return p


class _Sub:
    """View of a parameter map under a name prefix."""

    def __init__(self, params, prefix):
        self.params, self.prefix = params, prefix

    def __getitem__(self, key):
        return self.params[f"{self.prefix}.{key}"]


def _as_params(params):
    return {k: v if isinstance(v, Tensor) else Tensor(v) for k, v in params.items()}


# ----------------------------------------------------------------------------
# expert building blocks


def encode_atoms(numbers, params) -> Tensor:
    """Initial atom embeddings: row ``Z - 1`` of the element table."""
    z = np.asarray(numbers, dtype=np.int64)
    if z.size and (z.min() < 1 or z.max() > NUM_ELEMENTS):
        raise UnknownElement(f"atomic numbers must lie in [1, {NUM_ELEMENTS}]")
    return ad.take(ad.as_tensor(params["embed.table"]), z - 1)


def segment_softmax(scores: Tensor, seg, num_segments: int) -> Tensor:
    seg = np.asarray(seg, dtype=np.int64)
    m = np.full(num_segments, -np.inf)
    np.maximum.at(m, seg, scores.data)
    e = ad.exp(scores - m[seg])
    return e / ad.take(ad.segment_sum(e, seg, num_segments), seg)


def init_superatom(h_atoms, params, seg=None, num_segments=1) -> Tensor:
    """Attention pooling ``h_s = sum_i softmax(w . h_i) h_i`` per structure."""
    h = ad.as_tensor(h_atoms)
    if seg is None:
        seg = np.zeros(h.shape[0], dtype=np.int64)
    a = segment_softmax(h @ ad.as_tensor(params["super.score"]), seg, num_segments)
    return ad.segment_sum(h * ad.reshape(a, (-1, 1)), seg, num_segments)


def radial_basis(dist, cutoff: float, num: int) -> np.ndarray:
    """Gaussians centred on ``linspace(0, cutoff, num)`` with width = spacing."""
    centers = np.linspace(0.0, cutoff, num)
    sigma = centers[1] - centers[0]
    d = np.asarray(dist, dtype=np.float64)[:, None]
    return np.exp(-((d - centers) ** 2) / (2.0 * sigma * sigma))


def edge_basis(disp, dist, cutoff, num, use_direction=False) -> np.ndarray:
    feats = radial_basis(dist, cutoff, num)
    if use_direction:
        dist = np.asarray(dist)
        safe = np.where(dist > 0, dist, 1.0)[:, None]
        unit = np.where(dist[:, None] > 0, np.asarray(disp) / safe, 0.0)
        feats = np.concatenate([feats, unit], axis=1)
    return feats


def edge_encoder(basis, w, b) -> Tensor:
    return ad.silu(ad.as_tensor(basis) @ ad.as_tensor(w) + ad.as_tensor(b))


def encode_edges(graph, params, config: ModelConfig, prefix=None) -> Tensor:
    """Learned edge features of a geometric graph, one row per edge.

    ``prefix`` selects the encoder weights; by default the static encoder of
    the graph kind (``edge.atomistic`` / ``edge.cell``).
    """
    if graph.kind == MULTISCALE or graph.dist is None:
        raise KindMismatch("multiscale edges carry no geometry to encode")
    cutoff = config.basis_cutoffs[graph.kind]
    basis = edge_basis(graph.disp, graph.dist, cutoff, config.num_rbf, config.use_direction)
    prefix = prefix or f"edge.{graph.kind}"
    return edge_encoder(basis, params[f"{prefix}.w"], params[f"{prefix}.b"])


def mp_expert_forward(h_in, src, dst, edge_feats, params) -> Tensor:
    """Residual message passing.

    ``h_out_i = h_i + U([h_i, sum_{j->i} M([h_j, h_i, e_ji])])`` with two-layer
    SiLU perceptrons ``M`` and ``U``; ``params`` is indexed by short names
    (``msg.w_src`` ...). Messages are summed in edge order.
    """
    h = ad.as_tensor(h_in)
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    n = h.shape[0]
    if src.size and (src.max() >= n or dst.max() >= n):
        raise ShapeMismatch("edge endpoint out of range")
    if edge_feats is not None and edge_feats.shape[0] != src.size:
        raise ShapeMismatch("one edge feature row per edge required")
    P = {k: ad.as_tensor(params[k]) for k in (
        "msg.w_src", "msg.w_dst", "msg.w_edge", "msg.b1", "msg.w2", "msg.b2",
        "upd.w_self", "upd.w_agg", "upd.b1", "upd.w2", "upd.b2")}
    if src.size:
        pre = (ad.take(h @ P["msg.w_src"], src) + ad.take(h @ P["msg.w_dst"], dst)
               + edge_feats @ P["msg.w_edge"] + P["msg.b1"])
        msg = ad.silu(pre) @ P["msg.w2"] + P["msg.b2"]
        agg = ad.segment_sum(msg, dst, n)
    else:
        agg = Tensor(np.zeros(h.shape))
    hidden = ad.silu(h @ P["upd.w_self"] + agg @ P["upd.w_agg"] + P["upd.b1"])
    return h + (hidden @ P["upd.w2"] + P["upd.b2"])


def _phi(x, params):
    hidden = ad.silu(x @ ad.as_tensor(params["w1"]) + ad.as_tensor(params["b1"]))
    return hidden @ ad.as_tensor(params["w2"]) + ad.as_tensor(params["b2"])


def multiscale_forward(h_atoms, h_super, params, seg=None, num_segments=1):
    """Geometry-free exchange between atoms and their superatom.

    ``h_s' = h_s + mean_i phi(h_i)`` followed by ``h_i' = h_i + phi(h_s')``,
    with one shared ``phi``. Returns ``(h_atoms', h_s')``.
    """
    h = ad.as_tensor(h_atoms)
    hs = ad.as_tensor(h_super)
    if hs.data.ndim == 1:
        hs = ad.reshape(hs, (1, -1))
    if hs.shape[-1] != h.shape[-1]:
        raise ShapeMismatch("atom and superatom widths differ")
    if seg is None:
        seg = np.zeros(h.shape[0], dtype=np.int64)
    counts = np.bincount(seg, minlength=num_segments).astype(np.float64)
    pooled = ad.segment_sum(_phi(h, params), seg, num_segments) / counts[:, None]
    hs_new = hs + pooled
    h_new = h + ad.take(_phi(hs_new, params), seg)
    return h_new, hs_new


def fuse_superatom(h_cell, h_multi, alpha) -> Tensor:
    g = ad.sigmoid(ad.as_tensor(alpha))
    return g * ad.as_tensor(h_cell) + (1.0 - g) * ad.as_tensor(h_multi)


def fusion_weights(logits) -> Tensor:
    return ad.softmax(ad.as_tensor(logits))


def fuse_atoms(h_atomistic, h_feat, h_multi, logits) -> Tensor:
    """Convex mix ``beta h_atomistic + gamma h_feat + delta h_multi``."""
    parts = [ad.as_tensor(x) for x in (h_atomistic, h_feat, h_multi)]
    if len({p.shape for p in parts}) != 1:
        raise ShapeMismatch("expert outputs must share a shape")
    w = fusion_weights(logits)
    out = None
    for k, part in enumerate(parts):
        term = part * ad.take(w, np.array([k]))
        out = term if out is None else out + term
    return out


def readout(h_atoms, params, seg=None, num_segments=1) -> Tensor:
    """Mean-pool atoms per structure, then a two-layer perceptron to a scalar."""
    h = ad.as_tensor(h_atoms)
    if seg is None:
        seg = np.zeros(h.shape[0], dtype=np.int64)
    counts = np.bincount(seg, minlength=num_segments).astype(np.float64)
    pooled = ad.segment_sum(h, seg, num_segments) / counts[:, None]
    hidden = ad.silu(pooled @ ad.as_tensor(params["readout.w1"]) + ad.as_tensor(params["readout.b1"]))
    out = hidden @ ad.as_tensor(params["readout.w2"]) + ad.as_tensor(params["readout.b2"])
    return ad.reshape(out, (-1,))


# ----------------------------------------------------------------------------
# batching


@dataclass
class PreparedStructure:
    """Embedding-independent geometry of one structure."""

    structure: CrystalStructure
    atomistic: object
    cell: object
    table_disp: np.ndarray
    table_shift: np.ndarray


def prepare(s: CrystalStructure, config: ModelConfig) -> PreparedStructure:
    disp, shift = min_image_table(s)
    return PreparedStructure(
        s,
        build_atomistic_graph(s, config.r_c),
        build_cell_graph(s, config.R_c),
        disp,
        shift,
    )


@dataclass
class Batch:
    numbers: np.ndarray
    seg: np.ndarray
    num_structures: int
    pad: np.ndarray
    atom_src: np.ndarray
    atom_dst: np.ndarray
    atom_basis: np.ndarray
    cell_seg: np.ndarray
    cell_basis: np.ndarray
    table_disp: np.ndarray
    targets: np.ndarray
    ids: list = field(default_factory=list)


def collate(items, config: ModelConfig) -> Batch:
    cut = config.basis_cutoffs
    nums, segs, a_src, a_dst, a_disp, a_dist = [], [], [], [], [], []
    c_seg, c_disp, c_dist = [], [], []
    sizes = [p.structure.num_atoms for p in items]
    nmax = max(sizes)
    pad = -np.ones((len(items), nmax), dtype=np.int64)
    tables = np.zeros((len(items), nmax, nmax, 3))
    offset = 0
    for b, p in enumerate(items):
        n = sizes[b]
        nums.append(p.structure.numbers)
        segs.append(np.full(n, b))
        pad[b, :n] = offset + np.arange(n)
        tables[b, :n, :n] = p.table_disp
        g = p.atomistic
        a_src.append(g.src + offset)
        a_dst.append(g.dst + offset)
        a_disp.append(g.disp)
        a_dist.append(g.dist)
        c = p.cell
        c_seg.append(np.full(c.num_edges, b))
        c_disp.append(c.disp)
        c_dist.append(c.dist)
        offset += n
    cat = np.concatenate
    a_disp, a_dist = cat(a_disp).reshape(-1, 3), cat(a_dist)
    c_disp, c_dist = cat(c_disp).reshape(-1, 3), cat(c_dist)
    targets = np.array([np.nan if p.structure.target is None else p.structure.target for p in items])
    return Batch(
        numbers=cat(nums),
        seg=cat(segs).astype(np.int64),
        num_structures=len(items),
        pad=pad,
        atom_src=cat(a_src).astype(np.int64),
        atom_dst=cat(a_dst).astype(np.int64),
        atom_basis=edge_basis(a_disp, a_dist, cut[ATOMISTIC], config.num_rbf, config.use_direction),
        cell_seg=cat(c_seg).astype(np.int64),
        cell_basis=edge_basis(c_disp, c_dist, cut[CELL], config.num_rbf, config.use_direction),
        table_disp=tables,
        targets=targets,
        ids=[p.structure.id for p in items],
    )


def similarity_edges(batch: Batch, h: np.ndarray, config: ModelConfig):
    """Feature-space edges of every structure in the batch.

    Returns global ``(src, dst)`` and the minimum-image displacement per edge.
    """
    valid = batch.pad >= 0
    H = np.where(valid[..., None], h[np.maximum(batch.pad, 0)], 0.0)
    b, i, j = select_feature_neighbors(H, valid, config.r_f, config.max_degree)
    return batch.pad[b, i], batch.pad[b, j], batch.table_disp[b, i, j]


# ----------------------------------------------------------------------------
# full model


@dataclass
class ForwardResult:
    prediction: Tensor
    h_atoms: Tensor
    h_super: Tensor
    sim_graphs: list
    states: list


def prism_layer(layer, h, hs, batch, params, config, sim_graph=None):
    """One fused update; every expert reads the same ``(h, hs)``.

    ``sim_graph`` freezes the similarity topology ``(src, dst, disp)``;
    otherwise it is rebuilt from ``h``. Returns ``(h', hs', sim_graph)``.
    """
    pre = f"layers.{layer}"
    B = batch.num_structures
    outs = {}
    if config.atomistic:
        feats = edge_encoder(batch.atom_basis, params["edge.atomistic.w"], params["edge.atomistic.b"])
        outs[ATOMISTIC] = mp_expert_forward(h, batch.atom_src, batch.atom_dst, feats,
                                            _Sub(params, f"{pre}.atomistic"))
    if config.similarity:
        if sim_graph is None:
            sim_graph = similarity_edges(batch, h.data, config)
        src, dst, disp = sim_graph
        dist = np.sqrt(np.einsum("ij,ij->i", disp, disp)) if len(disp) else np.zeros(0)
        basis = edge_basis(disp.reshape(-1, 3), dist, config.basis_cutoffs[SIMILARITY],
                           config.num_rbf, config.use_direction)
        feats = edge_encoder(basis, params[f"{pre}.sim_edge.w"], params[f"{pre}.sim_edge.b"])
        outs[SIMILARITY] = mp_expert_forward(h, src, dst, feats, _Sub(params, f"{pre}.similarity"))
    if config.multiscale:
        h_multi, hs_multi = multiscale_forward(h, hs, _Sub(params, f"{pre}.multiscale"),
                                               batch.seg, B)
        outs[MULTISCALE] = h_multi
    if config.cell:
        feats = edge_encoder(batch.cell_basis, params["edge.cell.w"], params["edge.cell.b"])
        hs_cell = mp_expert_forward(hs, batch.cell_seg, batch.cell_seg, feats, _Sub(params, f"{pre}.cell"))

    if config.cell and config.multiscale:
        hs_new = fuse_superatom(hs_cell, hs_multi, params[f"{pre}.fusion.alpha"])
    elif config.cell:
        hs_new = hs_cell
    elif config.multiscale:
        hs_new = hs_multi
    else:
        hs_new = hs

    idx = [k for k, kind in enumerate(ATOM_EXPERTS) if config.enabled(kind)]
    w = ad.softmax(ad.take(ad.as_tensor(params[f"{pre}.fusion.logits"]), np.array(idx)))
    h_new = None
    for pos, k in enumerate(idx):
        term = outs[ATOM_EXPERTS[k]] * ad.take(w, np.array([pos]))
        h_new = term if h_new is None else h_new + term
    return h_new, hs_new, sim_graph


def forward(params, batch: Batch, config: ModelConfig, frozen_sim=None) -> ForwardResult:
    """Normalised predictions for every structure in ``batch``."""
    B = batch.num_structures
    h = encode_atoms(batch.numbers, params)
    hs = init_superatom(h, params, batch.seg, B)
    sims, states = [], [(h, hs)]
    for l in range(config.layers):
        frozen = None if frozen_sim is None else frozen_sim[l]
        h, hs, sim = prism_layer(l, h, hs, batch, params, config, frozen)
        sims.append(sim)
        states.append((h, hs))
    return ForwardResult(readout(h, params, batch.seg, B), h, hs, sims, states)


class PrismModel:
    """Parameters, configuration and target scaling bundled together.

    Predictions are ``target_mean + target_std * network_output``.
    """

    def __init__(self, config: ModelConfig | None = None, seed: int = 0, params=None,
                 target_mean: float = 0.0, target_std: float = 1.0):
        self.config = config or ModelConfig()
        self.seed = seed
        self.params = params if params is not None else init_params(self.config, seed)
        self.target_mean = float(target_mean)
        self.target_std = float(target_std)

    def prepare(self, structures):
        return [prepare(s, self.config) for s in structures]

    def run(self, structures_or_prepared, frozen_sim=None) -> ForwardResult:
        items = [p if isinstance(p, PreparedStructure) else prepare(p, self.config)
                 for p in structures_or_prepared]
        batch = collate(items, self.config)
        return forward(_as_params(self.params), batch, self.config, frozen_sim)

    def predict(self, structures, batch_size: int = 64) -> np.ndarray:
        items = [p if isinstance(p, PreparedStructure) else prepare(p, self.config)
                 for p in structures]
        out = []
        for k in range(0, len(items), batch_size):
            res = forward(_as_params(self.params), collate(items[k:k + batch_size], self.config),
                          self.config)
            out.append(res.prediction.data)
        return self.target_mean + self.target_std * np.concatenate(out)

    def fusion_values(self) -> list:
        """Per layer: ``(gate_cell, gate_multi, w_atomistic, w_similarity, w_multiscale)``.

        Disabled experts report weight 0; the superatom gate collapses to
        the single enabled path.
        """
        cfg = self.config
        rows = []
        for l in range(cfg.layers):
            alpha = float(self.params[f"layers.{l}.fusion.alpha"])
            if cfg.cell and cfg.multiscale:
                g = float(expit(alpha))
            else:
                g = 1.0 if cfg.cell else 0.0
            logits = np.asarray(self.params[f"layers.{l}.fusion.logits"], dtype=np.float64)
            idx = [k for k, kind in enumerate(ATOM_EXPERTS) if cfg.enabled(kind)]
            z = logits[idx] - logits[idx].max()
            e = np.exp(z)
            w = np.zeros(3)
            w[idx] = e / e.sum()
            rows.append((g, 1.0 - g, *w.tolist()))
        return rows

    def to_dict(self) -> dict:
        params = {}
        for name in sorted(self.params):
            arr = np.asarray(self.params[name], dtype=np.float64)
            params[name] = {"shape": list(arr.shape), "data": [float(v) for v in arr.ravel()]}
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.config),
            "seed": self.seed,
            "target_mean": self.target_mean,
            "target_std": self.target_std,
            "params": params,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PrismModel":
        if d.get("format") != CHECKPOINT_FORMAT:
            raise ConfigError("not a prism checkpoint")
        params = {
            name: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in d["params"].items()
        }
        return cls(ModelConfig.from_dict(d["config"]), seed=d.get("seed", 0), params=params,
                   target_mean=d["target_mean"], target_std=d["target_std"])

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "PrismModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
