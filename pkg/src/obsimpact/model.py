"""Graph network with reconstruction + regression heads, trained by Adam.

Everything is plain numpy with hand-written gradients: layer l computes
H_{l+1} = relu(A_hat @ H_l @ W_l + b_l) over the symmetric-normalized
adjacency, and two affine heads read the final hidden state. Keeping the
math explicit lets the gradient check compare against finite differences
and lets relevance propagation replay each affine stage exactly.
"""

from __future__ import annotations

import base64
import copy
import hashlib
import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .geo import MetGraph, NodeKind, VARIABLES, graph_hash
from .synth import Dataset, NormStats

N_KINDS = len(NodeKind)
N_FEATURES = N_KINDS + 2 * len(VARIABLES)  # one-hot | values | mask = 24
VALUE_SLICE = slice(N_KINDS, N_KINDS + len(VARIABLES))
MASK_SLICE = slice(N_KINDS + len(VARIABLES), N_FEATURES)
N_TARGETS = 4  # predicted channels [U, V, T, Q]


def encode_features(g: MetGraph) -> np.ndarray:
    """Node feature matrix: [12 one-hot kind | 6 value slots | 6 mask bits].

    Rows follow ascending node id. Requires normalized values; raw graphs
    are refused so unscaled units can never leak into the model.
    """
    if not g.normalized:
        raise ValueError("graph values are not normalized; split_and_normalize the dataset first")
    x = np.zeros((g.n_nodes, N_FEATURES))
    for row, node in enumerate(g.nodes):
        x[row, node.kind.one_hot_index] = 1.0
        x[row, VALUE_SLICE] = node.values
        x[row, MASK_SLICE] = node.mask
    return x


def grid_row_mask(g: MetGraph) -> np.ndarray:
    return np.array([n.kind is NodeKind.GRID_POINT for n in g.nodes])


def targets_matrix(g: MetGraph, targets: Mapping[int, Sequence[float]]) -> np.ndarray:
    """Stack targets for grid nodes in row (ascending id) order."""
    rows = [targets[n.id] for n in g.nodes if n.kind is NodeKind.GRID_POINT]
    return np.asarray(rows, dtype=float)


@dataclass
class AdjacencyOp:
    """Â = D^{-1/2} (A + I) D^{-1/2}, stored as symmetric COO triplets.

    Edges incident to fully-occluded nodes (all mask bits false) are
    dropped: a sensor with no readings is structurally absent from message
    passing, which makes occlusion equivalent to removing the node while
    the serialized edge list stays untouched.
    """

    n: int
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_graph(cls, g: MetGraph) -> "AdjacencyOp":
        index = g.index_of
        live = [not n.is_occluded for n in g.nodes]
        pairs = [
            (index[i], index[j])
            for i, j in g.edges
            if live[index[i]] and live[index[j]]
        ]
        n = g.n_nodes
        deg = np.ones(n)  # self-loop
        for i, j in pairs:
            deg[i] += 1.0
            deg[j] += 1.0
        inv_sqrt = 1.0 / np.sqrt(deg)
        rows = list(range(n))
        cols = list(range(n))
        weights = list(inv_sqrt * inv_sqrt)
        for i, j in pairs:
            w = inv_sqrt[i] * inv_sqrt[j]
            rows += [i, j]
            cols += [j, i]
            weights += [w, w]
        return cls(
            n=n,
            rows=np.asarray(rows, dtype=np.int64),
            cols=np.asarray(cols, dtype=np.int64),
            weights=np.asarray(weights, dtype=float),
        )

    def __post_init__(self) -> None:
        if np.any(self.weights <= 0):
            raise ValueError("adjacency weights must be positive")
        if np.any(self.rows < 0) or np.any(self.rows >= self.n):
            raise ValueError("adjacency row index out of range")
        if np.any(self.cols < 0) or np.any(self.cols >= self.n):
            raise ValueError("adjacency col index out of range")

    @cached_property
    def _csr(self) -> sp.csr_matrix:
        return sp.coo_matrix((self.weights, (self.rows, self.cols)), shape=(self.n, self.n)).tocsr()

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self._csr @ x

    def row_sums(self) -> np.ndarray:
        return np.asarray(self._csr.sum(axis=1)).ravel()

    def dense(self) -> np.ndarray:
        return self._csr.toarray()


@dataclass
class Model:
    """Stacked graph-convolution layers plus two linear heads."""

    dims: tuple[int, ...]
    gcn_weights: list[np.ndarray]
    gcn_biases: list[np.ndarray]
    recon_w: np.ndarray
    recon_b: np.ndarray
    reg_w: np.ndarray
    reg_b: np.ndarray

    def __post_init__(self) -> None:
        for l, (w, b) in enumerate(zip(self.gcn_weights, self.gcn_biases)):
            if w.shape != (self.dims[l], self.dims[l + 1]) or b.shape != (self.dims[l + 1],):
                raise ValueError(f"layer {l} shapes do not match dims {self.dims}")
        d_h = self.dims[-1]
        if self.recon_w.shape != (d_h, len(VARIABLES)) or self.reg_w.shape != (d_h, N_TARGETS):
            raise ValueError("head shapes must read the final hidden layer")

    @property
    def n_layers(self) -> int:
        return len(self.gcn_weights)

    def copy(self) -> "Model":
        return copy.deepcopy(self)


def init_model(dims: tuple[int, ...] = (N_FEATURES, 64, 64), seed: int = 0) -> Model:
    """Glorot-uniform weights, zero biases, deterministic in the seed."""
    rng = np.random.default_rng(seed & 0x7FFFFFFFFFFFFFFF)

    def glorot(fan_in: int, fan_out: int) -> np.ndarray:
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, (fan_in, fan_out))

    gcn_w = [glorot(dims[l], dims[l + 1]) for l in range(len(dims) - 1)]
    gcn_b = [np.zeros(dims[l + 1]) for l in range(len(dims) - 1)]
    return Model(
        dims=tuple(dims),
        gcn_weights=gcn_w,
        gcn_biases=gcn_b,
        recon_w=glorot(dims[-1], len(VARIABLES)),
        recon_b=np.zeros(len(VARIABLES)),
        reg_w=glorot(dims[-1], N_TARGETS),
        reg_b=np.zeros(N_TARGETS),
    )


@dataclass
class ActivationCache:
    """Every intermediate of one forward pass, for gradient-free replay."""

    x: np.ndarray
    adjacency: AdjacencyOp
    messages: list[np.ndarray]  # A_hat @ H_l per layer
    preacts: list[np.ndarray]  # Z_l = messages @ W_l + b_l
    posts: list[np.ndarray]  # relu(Z_l)
    pred: np.ndarray
    recon: np.ndarray
    graph_hash: str


def _forward_arrays(m: Model, x: np.ndarray, a: AdjacencyOp):
    h = x
    messages, preacts, posts = [], [], []
    for w, b in zip(m.gcn_weights, m.gcn_biases):
        msg = a.apply(h)
        z = msg @ w + b
        h = np.maximum(z, 0.0)
        messages.append(msg)
        preacts.append(z)
        posts.append(h)
    pred = h @ m.reg_w + m.reg_b
    recon = h @ m.recon_w + m.recon_b
    return pred, recon, messages, preacts, posts


def forward(m: Model, g: MetGraph) -> tuple[np.ndarray, np.ndarray, ActivationCache]:
    """Predictions (node x 4), reconstructions (node x 6), full cache."""
    x = encode_features(g)
    a = AdjacencyOp.from_graph(g)
    pred, recon, messages, preacts, posts = _forward_arrays(m, x, a)
    cache = ActivationCache(
        x=x,
        adjacency=a,
        messages=messages,
        preacts=preacts,
        posts=posts,
        pred=pred,
        recon=recon,
        graph_hash=graph_hash(g),
    )
    return pred, recon, cache


def loss(
    pred: np.ndarray,
    recon: np.ndarray,
    targets: np.ndarray,
    features: np.ndarray,
    lambda_recon: float = 0.5,
) -> float:
    """Grid-node regression MSE plus lambda * mask-weighted reconstruction MSE."""
    grid_rows = features[:, NodeKind.GRID_POINT.one_hot_index] == 1.0
    if not grid_rows.any():
        raise ValueError("loss needs at least one grid node")
    values = features[:, VALUE_SLICE]
    mask = features[:, MASK_SLICE]
    diff = pred[grid_rows] - targets
    pred_mse = float((diff**2).mean())
    recon_diff = (recon - values) * mask
    recon_mse = float((recon_diff**2).sum() / mask.sum())
    return pred_mse + lambda_recon * recon_mse


_PARAM_ORDER_HEADS = ("recon_w", "recon_b", "reg_w", "reg_b")


def _param_dict(m: Model) -> dict[str, np.ndarray]:
    params = {}
    for l in range(m.n_layers):
        params[f"w{l}"] = m.gcn_weights[l]
        params[f"b{l}"] = m.gcn_biases[l]
    params["recon_w"] = m.recon_w
    params["recon_b"] = m.recon_b
    params["reg_w"] = m.reg_w
    params["reg_b"] = m.reg_b
    return params


def _model_from_params(dims: tuple[int, ...], params: Mapping[str, np.ndarray]) -> Model:
    n_layers = len(dims) - 1
    return Model(
        dims=dims,
        gcn_weights=[params[f"w{l}"].copy() for l in range(n_layers)],
        gcn_biases=[params[f"b{l}"].copy() for l in range(n_layers)],
        recon_w=params["recon_w"].copy(),
        recon_b=params["recon_b"].copy(),
        reg_w=params["reg_w"].copy(),
        reg_b=params["reg_b"].copy(),
    )


def _loss_and_grads(
    m: Model,
    x: np.ndarray,
    a: AdjacencyOp,
    targets: np.ndarray,
    lambda_recon: float,
    recon_only: bool,
) -> tuple[float, dict[str, np.ndarray]]:
    pred, recon, messages, preacts, posts = _forward_arrays(m, x, a)
    grid_rows = x[:, NodeKind.GRID_POINT.one_hot_index] == 1.0
    if not recon_only and not grid_rows.any():
        raise ValueError("loss needs at least one grid node")
    values = x[:, VALUE_SLICE]
    mask = x[:, MASK_SLICE]
    n_mask = mask.sum()
    recon_diff = (recon - values) * mask
    recon_mse = float((recon_diff**2).sum() / n_mask)

    dpred = np.zeros_like(pred)
    if recon_only:
        total = recon_mse
        drecon = 2.0 * recon_diff / n_mask
    else:
        diff = pred[grid_rows] - targets
        pred_mse = float((diff**2).mean())
        total = pred_mse + lambda_recon * recon_mse
        dpred[grid_rows] = 2.0 * diff / diff.size
        drecon = 2.0 * lambda_recon * recon_diff / n_mask

    h_final = posts[-1]
    grads: dict[str, np.ndarray] = {
        "reg_w": h_final.T @ dpred,
        "reg_b": dpred.sum(axis=0),
        "recon_w": h_final.T @ drecon,
        "recon_b": drecon.sum(axis=0),
    }
    dh = dpred @ m.reg_w.T + drecon @ m.recon_w.T
    for l in reversed(range(m.n_layers)):
        dz = dh * (preacts[l] > 0)
        grads[f"w{l}"] = messages[l].T @ dz
        grads[f"b{l}"] = dz.sum(axis=0)
        if l > 0:
            dh = a.apply(dz @ m.gcn_weights[l].T)  # A_hat is symmetric
    return total, grads


class _Adam:
    def __init__(self, params: Mapping[str, np.ndarray], lr: float, grad_clip: float):
        self.lr = lr
        self.grad_clip = grad_clip
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        norm = math.sqrt(sum(float((g**2).sum()) for g in grads.values()))
        scale = self.grad_clip / norm if self.grad_clip > 0 and norm > self.grad_clip else 1.0
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            g = g * scale
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * (g * g)
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    epochs_pretrain: int = 50
    epochs_finetune: int = 60
    lambda_recon: float = 0.5
    seed: int = 0
    grad_clip: float = 5.0

    def __post_init__(self) -> None:
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.lambda_recon < 0:
            raise ValueError("lambda_recon must be non-negative")

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "epochs_pretrain": self.epochs_pretrain,
            "epochs_finetune": self.epochs_finetune,
            "lambda_recon": self.lambda_recon,
            "seed": self.seed,
            "grad_clip": self.grad_clip,
        }


class TrainingDivergedError(RuntimeError):
    pass


def _prepare_samples(ds: Dataset, indices: Sequence[int]):
    samples = []
    for i in indices:
        g = ds.graphs[i]
        x = encode_features(g)
        a = AdjacencyOp.from_graph(g)
        t = targets_matrix(g, ds.snapshots[i].targets)
        samples.append((x, a, t))
    return samples


def train(
    m: Model,
    ds: Dataset,
    cfg: TrainConfig,
    progress: Optional[Callable[[float, str], None]] = None,
) -> tuple[Model, list[dict]]:
    """Two-phase training: reconstruction pretrain, then the joint loss.

    One optimizer step per training graph, fixed order, so runs with the
    same seed are bit-identical. History carries per-epoch train/validation
    losses of the objective being optimized plus the validation regression
    MSE.
    """
    if ds.norm_stats is None:
        raise ValueError("dataset must be split_and_normalize'd before training")
    train_samples = _prepare_samples(ds, ds.train_indices())
    val_samples = _prepare_samples(ds, ds.holdout_indices())
    if not train_samples:
        raise ValueError("no training snapshots")

    params = {k: v.copy() for k, v in _param_dict(m).items()}
    opt = _Adam(params, lr=cfg.lr, grad_clip=cfg.grad_clip)
    # Adam updates the arrays in place, so this model tracks them for free.
    live = Model(
        dims=m.dims,
        gcn_weights=[params[f"w{l}"] for l in range(m.n_layers)],
        gcn_biases=[params[f"b{l}"] for l in range(m.n_layers)],
        recon_w=params["recon_w"],
        recon_b=params["recon_b"],
        reg_w=params["reg_w"],
        reg_b=params["reg_b"],
    )
    history: list[dict] = []
    total_epochs = max(1, cfg.epochs_pretrain + cfg.epochs_finetune)

    def mean_loss(samples, recon_only: bool, model: Model) -> float:
        if not samples:
            return float("nan")
        vals = []
        for x, a, t in samples:
            loss_val, _ = _loss_and_grads(model, x, a, t, cfg.lambda_recon, recon_only)
            vals.append(loss_val)
        return float(np.mean(vals))

    def val_pred_mse(model: Model) -> float:
        if not val_samples:
            return float("nan")
        errs = []
        for x, a, t in val_samples:
            pred, _, _, _, _ = _forward_arrays(model, x, a)
            grid_rows = x[:, NodeKind.GRID_POINT.one_hot_index] == 1.0
            errs.append(float(((pred[grid_rows] - t) ** 2).mean()))
        return float(np.mean(errs))

    epoch_counter = 0
    for phase, n_epochs, recon_only in (
        ("pretrain", cfg.epochs_pretrain, True),
        ("finetune", cfg.epochs_finetune, False),
    ):
        for epoch in range(n_epochs):
            step_losses = []
            for x, a, t in train_samples:
                loss_val, grads = _loss_and_grads(live, x, a, t, cfg.lambda_recon, recon_only)
                if not math.isfinite(loss_val):
                    raise TrainingDivergedError(
                        f"loss became non-finite in {phase} epoch {epoch}: {loss_val}"
                    )
                opt.step(params, grads)
                step_losses.append(loss_val)
            record = {
                "phase": phase,
                "epoch": epoch,
                "train_loss": float(np.mean(step_losses)),
                "val_loss": mean_loss(val_samples, recon_only, live),
                "val_pred_mse": val_pred_mse(live),
            }
            history.append(record)
            epoch_counter += 1
            if progress is not None:
                progress(epoch_counter / total_epochs, f"{phase} epoch {epoch + 1}/{n_epochs}")

    return _model_from_params(m.dims, params), history


def gradient_check(
    m: Model,
    g: MetGraph,
    eps: float = 1e-5,
    targets: Optional[np.ndarray] = None,
    n_coords: int = 10,
    rng_seed: int = 0,
    lambda_recon: float = 0.5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Coordinates whose +/- eps perturbation flips any relu activation are
    skipped: the loss is non-differentiable across the kink and a finite
    difference there is meaningless.
    """
    x = encode_features(g)
    a = AdjacencyOp.from_graph(g)
    grid_rows = x[:, NodeKind.GRID_POINT.one_hot_index] == 1.0
    if targets is None:
        targets = np.zeros((int(grid_rows.sum()), N_TARGETS))
    _, grads = _loss_and_grads(m, x, a, targets, lambda_recon, recon_only=False)

    params = {k: v.copy() for k, v in _param_dict(m).items()}
    names = sorted(params)
    sizes = [params[k].size for k in names]
    total = sum(sizes)
    rng = np.random.default_rng(rng_seed)
    flat_choices = rng.choice(total, size=min(n_coords, total), replace=False)

    def loss_and_pattern(p: Mapping[str, np.ndarray]):
        model = _model_from_params(m.dims, p)
        pred, recon, _, preacts, _ = _forward_arrays(model, x, a)
        values = x[:, VALUE_SLICE]
        mask = x[:, MASK_SLICE]
        recon_mse = (((recon - values) * mask) ** 2).sum() / mask.sum()
        pred_mse = ((pred[grid_rows] - targets) ** 2).mean()
        pattern = tuple((z > 0).tobytes() for z in preacts)
        return float(pred_mse + lambda_recon * recon_mse), pattern

    worst = 0.0
    for flat in flat_choices:
        offset = int(flat)
        for name, size in zip(names, sizes):
            if offset < size:
                break
            offset -= size
        perturbed = {k: v.copy() for k, v in params.items()}
        perturbed[name].flat[offset] += eps
        loss_plus, pat_plus = loss_and_pattern(perturbed)
        perturbed[name].flat[offset] -= 2 * eps
        loss_minus, pat_minus = loss_and_pattern(perturbed)
        if pat_plus != pat_minus:
            continue  # relu kink crossed
        fd = (loss_plus - loss_minus) / (2 * eps)
        analytic = float(grads[name].flat[offset])
        denom = max(abs(analytic), abs(fd))
        if denom > 1e-8:
            worst = max(worst, abs(analytic - fd) / denom)
    return worst


def _encode_array(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")


def _decode_array(text: str, shape: Sequence[int]) -> np.ndarray:
    flat = np.frombuffer(base64.b64decode(text), dtype="<f8")
    return flat.reshape(tuple(shape)).copy()


def model_to_dict(
    m: Model,
    train_config: Optional[TrainConfig] = None,
    norm_stats: Optional[NormStats] = None,
    climatology: Optional[Sequence[float]] = None,
) -> dict:
    """Checkpoint document; weights are base64 of little-endian IEEE-754 doubles."""
    return {
        "format": "gcn-checkpoint-v1",
        "encoding": "base64-f64-le",
        "dims": list(m.dims),
        "layers": [
            {"shape": list(w.shape), "w": _encode_array(w), "b": _encode_array(b)}
            for w, b in zip(m.gcn_weights, m.gcn_biases)
        ],
        "recon_head": {"shape": list(m.recon_w.shape), "w": _encode_array(m.recon_w), "b": _encode_array(m.recon_b)},
        "regress_head": {"shape": list(m.reg_w.shape), "w": _encode_array(m.reg_w), "b": _encode_array(m.reg_b)},
        "train_config": None if train_config is None else train_config.to_dict(),
        "norm_stats": None if norm_stats is None else norm_stats.to_dict(),
        "climatology": None if climatology is None else list(climatology),
    }


def model_from_dict(doc: Mapping) -> tuple[Model, dict]:
    dims = tuple(doc["dims"])
    gcn_w, gcn_b = [], []
    for layer in doc["layers"]:
        shape = layer["shape"]
        gcn_w.append(_decode_array(layer["w"], shape))
        gcn_b.append(_decode_array(layer["b"], (shape[1],)))
    rh, gh = doc["recon_head"], doc["regress_head"]
    m = Model(
        dims=dims,
        gcn_weights=gcn_w,
        gcn_biases=gcn_b,
        recon_w=_decode_array(rh["w"], rh["shape"]),
        recon_b=_decode_array(rh["b"], (rh["shape"][1],)),
        reg_w=_decode_array(gh["w"], gh["shape"]),
        reg_b=_decode_array(gh["b"], (gh["shape"][1],)),
    )
    meta = {
        "train_config": doc.get("train_config"),
        "norm_stats": None if doc.get("norm_stats") is None else NormStats.from_dict(doc["norm_stats"]),
        "climatology": None if doc.get("climatology") is None else tuple(doc["climatology"]),
    }
    return m, meta


def save_model(m: Model, path: str | Path, **meta) -> None:
    Path(path).write_text(json.dumps(model_to_dict(m, **meta), indent=1), encoding="utf-8")


def load_model(path: str | Path) -> tuple[Model, dict]:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def model_hash(m: Model) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(list(m.dims)).encode())
    for w, b in zip(m.gcn_weights, m.gcn_biases):
        h.update(np.ascontiguousarray(w, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(b, dtype="<f8").tobytes())
    for arr in (m.recon_w, m.recon_b, m.reg_w, m.reg_b):
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()
