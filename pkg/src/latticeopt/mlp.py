"""From-scratch MLP regression of compliance from selected features.

Architecture: fully connected [input, 900, 600, 300, 1], ReLU on hidden
layers, identity output, trained on raw compliance targets with minibatch
Adam on the mean squared error.  All arithmetic is float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import features as feat
from .data import Dataset
from .features import FeaturePipeline
from .lattice import UnitTopology

FORMAT_VERSION = 1
HIDDEN_DIMS = (900, 600, 300)


@dataclass(frozen=True)
class ModelMeta:
    m: int
    n_m: int | None
    conv_weight: float
    selected_indices: np.ndarray
    input_dim: int


@dataclass
class SurrogateModel:
    meta: ModelMeta | None
    layer_dims: list[int]
    weights: list[np.ndarray]  # weights[l] has shape (dims[l], dims[l+1])
    biases: list[np.ndarray]


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 200
    epochs: int = 100
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    split: float = 0.75
    seed: int = 0
    hidden_dims: tuple[int, ...] = HIDDEN_DIMS

    def __post_init__(self):
        if not 0.0 < self.split < 1.0:
            raise ValueError("split fraction must be in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


def init(dims, seed: int, meta: ModelMeta | None = None) -> SurrogateModel:
    """He-style init: weights uniform in +-sqrt(6/fan_in), biases zero."""
    dims = list(dims)
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ValueError("need at least input and output dims, all positive")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return SurrogateModel(meta=meta, layer_dims=dims, weights=weights, biases=biases)


def _forward_cached(model: SurrogateModel, x: np.ndarray):
    """Activations and pre-activations of every layer for a (B, d) batch."""
    acts = [x]
    zs = []
    a = x
    last = len(model.weights) - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        zs.append(z)
        a = z if l == last else np.maximum(z, 0.0)
        acts.append(a)
    return zs, acts


def forward(model: SurrogateModel, x: np.ndarray) -> np.ndarray | float:
    """Network output for a single feature vector or a (B, d) batch."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if x.shape[-1] != model.layer_dims[0]:
        raise ValueError(f"expected input dim {model.layer_dims[0]}, got {x.shape[-1]}")
    _, acts = _forward_cached(model, x.reshape(-1, x.shape[-1]))
    out = acts[-1][:, 0]
    return float(out[0]) if single else out


def grad(model: SurrogateModel, x: np.ndarray, y: np.ndarray):
    """Backprop gradients of batch-mean squared error; returns (dWs, dbs, mse)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    if len(x) == 0:
        raise ValueError("empty batch")
    zs, acts = _forward_cached(model, x)
    resid = acts[-1] - y
    mse = float((resid**2).mean())
    delta = 2.0 * resid / len(x)
    dws = [None] * len(model.weights)
    dbs = [None] * len(model.weights)
    for l in range(len(model.weights) - 1, -1, -1):
        dws[l] = acts[l].T @ delta
        dbs[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ model.weights[l].T) * (zs[l - 1] > 0.0)
    return dws, dbs, mse


@dataclass
class AdamState:
    step: int = 0
    m_w: list = field(default_factory=list)
    v_w: list = field(default_factory=list)
    m_b: list = field(default_factory=list)
    v_b: list = field(default_factory=list)

    @classmethod
    def for_model(cls, model: SurrogateModel) -> "AdamState":
        return cls(
            step=0,
            m_w=[np.zeros_like(w) for w in model.weights],
            v_w=[np.zeros_like(w) for w in model.weights],
            m_b=[np.zeros_like(b) for b in model.biases],
            v_b=[np.zeros_like(b) for b in model.biases],
        )


def adam_step(model: SurrogateModel, dws, dbs, state: AdamState, cfg: TrainConfig) -> None:
    """One bias-corrected Adam update, in place."""
    state.step += 1
    t = state.step
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    for params, grads, ms, vs in (
        (model.weights, dws, state.m_w, state.v_w),
        (model.biases, dbs, state.m_b, state.v_b),
    ):
        for p, g, mm, vv in zip(params, grads, ms, vs):
            mm *= cfg.beta1
            mm += (1.0 - cfg.beta1) * g
            vv *= cfg.beta2
            vv += (1.0 - cfg.beta2) * g**2
            p -= cfg.learning_rate * (mm / c1) / (np.sqrt(vv / c2) + cfg.epsilon)


def evaluate(model: SurrogateModel, x: np.ndarray, y: np.ndarray, chunk: int = 4096) -> float:
    """Mean squared residual over all rows, computed in one streaming pass."""
    y = np.asarray(y, dtype=np.float64)
    total = 0.0
    for start in range(0, len(y), chunk):
        pred = forward(model, x[start : start + chunk])
        total += float(((pred - y[start : start + chunk]) ** 2).sum())
    return total / len(y)


def train(dataset: Dataset, pipeline: FeaturePipeline, cfg: TrainConfig):
    """Train a surrogate on a dataset; returns (model, per-epoch loss history).

    The train/test split, feature selection (train rows only), weight init,
    and per-epoch shuffles all derive from cfg.seed, so the loss history is
    reproducible bit for bit.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(n)
    n_train = int(n * cfg.split)
    train_idx, test_idx = perm[:n_train], perm[n_train:]
    if n_train < cfg.batch_size:
        raise ValueError("training split smaller than one batch")

    all_feats = feat.training_matrix(dataset.bits, dataset.m, pipeline.n_m)
    y = dataset.compliances.astype(np.float64)
    if pipeline.top_k is None:
        selected = np.arange(all_feats.shape[1])
    else:
        scores = feat.f_scores(all_feats[train_idx], y[train_idx])
        selected = feat.select_top_k(scores, pipeline.top_k).selected
    x = np.ascontiguousarray(all_feats[:, selected])

    meta = ModelMeta(
        m=dataset.m,
        n_m=pipeline.n_m,
        conv_weight=pipeline.conv_weight,
        selected_indices=selected,
        input_dim=len(selected),
    )
    dims = [len(selected), *cfg.hidden_dims, 1]
    model = init(dims, seed=int(rng.integers(2**32)), meta=meta)
    state = AdamState.for_model(model)

    x_train, y_train = x[train_idx], y[train_idx]
    x_test, y_test = x[test_idx], y[test_idx]
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_train)
        for start in range(0, n_train, cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            dws, dbs, _ = grad(model, x_train[sel], y_train[sel])
            adam_step(model, dws, dbs, state, cfg)
        history.append(
            {
                "epoch": epoch,
                "train_mse": evaluate(model, x_train, y_train),
                "test_mse": evaluate(model, x_test, y_test) if len(y_test) else float("nan"),
            }
        )
    return model, history


def predict(model: SurrogateModel, x: UnitTopology) -> float:
    """Predicted compliance for a topology at the model grid or its double."""
    if model.meta is None:
        raise ValueError("model has no feature metadata")
    return float(forward(model, feat.features_for_prediction(x, model.meta)))


def predict_batch(model: SurrogateModel, bits: np.ndarray, data_m: int) -> np.ndarray:
    """Vectorized predict over sample rows at the model grid or its double."""
    meta = model.meta
    if data_m == meta.m:
        feats = feat.training_matrix(bits, meta.m, meta.n_m)
    elif data_m == 2 * meta.m:
        feats = feat.transfer_matrix(bits, data_m, meta.m, meta.n_m, meta.conv_weight)
    else:
        raise ValueError(f"data m={data_m} incompatible with model m={meta.m}")
    preds = []
    sel = feats[:, meta.selected_indices]
    for start in range(0, len(sel), 4096):
        preds.append(forward(model, sel[start : start + 4096]))
    return np.concatenate(preds) if preds else np.empty(0)


def save_loss_history(history, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("epoch,train_mse,test_mse\n")
        for row in history:
            fh.write(f"{row['epoch']},{row['train_mse']:.17g},{row['test_mse']:.17g}\n")


def save(model: SurrogateModel, path) -> None:
    """Serialize to JSON; floats use shortest round-trip decimal form."""
    if model.meta is None:
        raise ValueError("cannot save a model without feature metadata")
    doc = {
        "format_version": FORMAT_VERSION,
        "m": model.meta.m,
        "n_m": model.meta.n_m,
        "conv_weight": model.meta.conv_weight,
        "selected_indices": [int(i) for i in model.meta.selected_indices],
        "layer_dims": list(model.layer_dims),
        "layers": [
            {"weights": w.tolist(), "biases": b.tolist()}
            for w, b in zip(model.weights, model.biases)
        ],
    }
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load(path) -> SurrogateModel:
    try:
        with open(path, "r", encoding="ascii") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: malformed model file ({exc})") from exc
    try:
        if doc["format_version"] != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format_version {doc['format_version']}")
        dims = [int(d) for d in doc["layer_dims"]]
        selected = np.asarray(doc["selected_indices"], dtype=np.intp)
        weights = [np.asarray(layer["weights"], dtype=np.float64) for layer in doc["layers"]]
        biases = [np.asarray(layer["biases"], dtype=np.float64) for layer in doc["layers"]]
        meta = ModelMeta(
            m=int(doc["m"]),
            n_m=None if doc["n_m"] is None else int(doc["n_m"]),
            conv_weight=float(doc["conv_weight"]),
            selected_indices=selected,
            input_dim=len(selected),
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: missing or invalid model field ({exc})") from exc
    if len(weights) != len(dims) - 1 or dims[0] != len(selected):
        raise ValueError(f"{path}: layer dims inconsistent with metadata")
    for l, (w, b) in enumerate(zip(weights, biases)):
        if w.shape != (dims[l], dims[l + 1]) or b.shape != (dims[l + 1],):
            raise ValueError(f"{path}: layer {l} has shape {w.shape}, expected {(dims[l], dims[l+1])}")
    return SurrogateModel(meta=meta, layer_dims=dims, weights=weights, biases=biases)
