"""Two-layer message-propagation network trained per window.

Each layer aggregates neighbor rows (mean over the similarity graph),
mixes them with a self term into a hidden message, and reconstructs the
attribute vector from it. Training is transductive: a slice of the
observed entries is hidden as a validation set, the rest supervise a
masked reconstruction loss, and the epoch with the best validation error
defines the imputation for the window.

Gradients are derived by hand and checked against finite differences in
the test suite; nothing here depends on an autodiff framework.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, TrainingDivergedError, UndefinedMetricError
from .graph import SimilarityGraph, mean_fill_matrix
from .propagation import apply_bound
from .records import DataChunk

logger = logging.getLogger(__name__)

GraphBuilder = Callable[[np.ndarray], SimilarityGraph]


@dataclass
class MsgPropLayerParams:
    """Learnable arrays of one layer.

    w_self and w_neigh mix the node's own row and the aggregated
    neighborhood into the hidden message; w_rec and b_rec map the message
    back to attribute space.
    """

    w_self: np.ndarray
    w_neigh: np.ndarray
    b_msg: np.ndarray
    w_rec: np.ndarray
    b_rec: np.ndarray

    def copy(self) -> "MsgPropLayerParams":
        return MsgPropLayerParams(
            w_self=self.w_self.copy(),
            w_neigh=self.w_neigh.copy(),
            b_msg=self.b_msg.copy(),
            w_rec=self.w_rec.copy(),
            b_rec=self.b_rec.copy(),
        )

    @property
    def hidden_dim(self) -> int:
        return self.w_self.shape[1]


@dataclass
class ModelState:
    """All learnable parameters of the two stacked layers."""

    layer1: MsgPropLayerParams
    layer2: MsgPropLayerParams
    rng_seed: int

    def copy(self) -> "ModelState":
        return ModelState(self.layer1.copy(), self.layer2.copy(), self.rng_seed)

    def named_parameters(self) -> list[tuple[str, np.ndarray]]:
        """Stable (name, array) listing; arrays are the live objects."""
        out = []
        for prefix, layer in (("layer1", self.layer1), ("layer2", self.layer2)):
            for attr in ("w_self", "w_neigh", "b_msg", "w_rec", "b_rec"):
                out.append((f"{prefix}.{attr}", getattr(layer, attr)))
        return out


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters; defaults reproduce the reference setup."""

    epochs: int = 200
    learning_rate: float = 0.01
    weight_decay: float = 0.1
    lambda1: float = 1.0
    lambda2: float = 1.0
    validation_ratio: float = 0.05
    hidden_dim: int | None = None
    seed: int = 0
    # Stop after this many epochs without a validation improvement; the
    # best state is kept either way. None runs all epochs.
    early_stop_patience: int | None = 30

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 < self.validation_ratio < 1.0:
            raise ConfigurationError(
                f"validation_ratio must be in (0,1), got {self.validation_ratio}"
            )

    def resolve_hidden_dim(self, dim: int) -> int:
        hidden = self.hidden_dim if self.hidden_dim is not None else max(2 * dim, 32)
        if hidden <= dim:
            raise ConfigurationError(
                f"hidden_dim must exceed the data dimensionality {dim}, got {hidden}"
            )
        return hidden


def _glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_layer_params(
    rng: np.random.Generator, d_in: int, hidden: int, d_out: int
) -> MsgPropLayerParams:
    return MsgPropLayerParams(
        w_self=_glorot_uniform(rng, d_in, hidden),
        w_neigh=_glorot_uniform(rng, d_in, hidden),
        b_msg=np.zeros(hidden, dtype=np.float64),
        w_rec=_glorot_uniform(rng, hidden, d_out),
        b_rec=np.zeros(d_out, dtype=np.float64),
    )


def init_model_state(
    dim: int, config: TrainConfig, seed: int | np.random.SeedSequence | None = None
) -> ModelState:
    """Fresh parameters for D-dimensional data under the given config."""
    hidden = config.resolve_hidden_dim(dim)
    if seed is None:
        seed = config.seed
    rng = np.random.default_rng(seed)
    stored_seed = seed if isinstance(seed, int) else config.seed
    return ModelState(
        layer1=init_layer_params(rng, dim, hidden, dim),
        layer2=init_layer_params(rng, dim, hidden, dim),
        rng_seed=stored_seed,
    )


def msgprop_layer_forward(
    x_in: np.ndarray,
    graph: SimilarityGraph,
    params: MsgPropLayerParams,
    x_original: np.ndarray,
    mask: np.ndarray,
    *,
    activation: bool = True,
    propagation: str = "mean",
) -> tuple[np.ndarray, np.ndarray]:
    """One layer: aggregate, mix, reconstruct, and apply the bound.

    Args:
        x_in: (n, d_in) input rows.
        graph: similarity graph over the same n nodes.
        params: the layer's arrays.
        x_original: (n, d_out) reference values for the bound condition.
        mask: (n, d_out) observation indicator; observed entries of the
            output are overwritten with x_original.
        activation: apply the rectifier to the hidden message. The
            identity-reduction tests switch it off.
        propagation: "mean" aggregates neighbors by unweighted mean;
            "norm" uses the graph's stored per-edge weights directly
            (fixture path for explicit correlation weights).

    Returns:
        (x_tilde, x_bounded): raw reconstruction and its bounded form.
    """
    x = np.asarray(x_in, dtype=np.float64)
    if x.shape[0] != graph.node_count:
        raise ValueError(
            f"input has {x.shape[0]} rows but graph has {graph.node_count} nodes"
        )
    if x.shape[1] != params.w_self.shape[0]:
        raise ValueError(
            f"input dim {x.shape[1]} != w_self fan-in {params.w_self.shape[0]}"
        )
    if propagation == "mean":
        agg = graph.mean_adjacency() @ x
    elif propagation == "norm":
        agg = graph.norm_adjacency() @ x
    else:
        raise ConfigurationError(f"unknown propagation mode {propagation!r}")
    h = x @ params.w_self + agg @ params.w_neigh + params.b_msg
    z = np.maximum(h, 0.0) if activation else h
    x_tilde = z @ params.w_rec + params.b_rec
    return x_tilde, apply_bound(x_tilde, x_original, mask)


def mpin_forward(
    x_filled: np.ndarray,
    mask: np.ndarray,
    graph: SimilarityGraph,
    state: ModelState,
    *,
    activation: bool = True,
    propagation: str = "mean",
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Run both layers on a mean-filled matrix.

    Layer 1 reads the filled matrix; layer 2 reads layer 1's bounded
    output. Returns (x_tilde_1, x_1, x_tilde_2, x_2) where x_2 is the
    imputed chunk.
    """
    xt1, x1 = msgprop_layer_forward(
        x_filled, graph, state.layer1, x_filled, mask,
        activation=activation, propagation=propagation,
    )
    xt2, x2 = msgprop_layer_forward(
        x1, graph, state.layer2, x_filled, mask,
        activation=activation, propagation=propagation,
    )
    return xt1, x1, xt2, x2


def mpin_loss(
    x_0: np.ndarray,
    mask_train: np.ndarray,
    x_tilde_1: np.ndarray,
    x_tilde_2: np.ndarray,
    lambda1: float = 1.0,
    lambda2: float = 1.0,
) -> float:
    """Weighted sum of both layers' masked reconstruction errors.

    Each term sums squared differences over entries with mask_train set
    and divides by the count of such entries. The pre-bound
    reconstructions are scored, so the supervision signal is not erased
    by the bound condition.
    """
    m = np.asarray(mask_train, dtype=bool)
    count = int(m.sum())
    if count == 0:
        raise UndefinedMetricError("loss undefined: training mask has no set bits")
    d1 = float(np.sum((x_tilde_1[m] - x_0[m]) ** 2)) / count
    d2 = float(np.sum((x_tilde_2[m] - x_0[m]) ** 2)) / count
    return lambda1 * d1 + lambda2 * d2


def loss_and_gradients(
    x_filled: np.ndarray,
    mask_train: np.ndarray,
    graph: SimilarityGraph,
    state: ModelState,
    lambda1: float = 1.0,
    lambda2: float = 1.0,
) -> tuple[float, dict[str, np.ndarray], tuple[np.ndarray, ...]]:
    """Forward pass plus analytic gradients of the loss for every array.

    Returns (loss, grads keyed like named_parameters, forward outputs).
    The derivation mirrors the forward graph: the loss reaches layer 1
    both directly and through the bound condition feeding layer 2, where
    only entries missing under the training mask pass gradient through.
    """
    x0 = np.asarray(x_filled, dtype=np.float64)
    m = np.asarray(mask_train, dtype=bool)
    count = int(m.sum())
    if count == 0:
        raise UndefinedMetricError("loss undefined: training mask has no set bits")
    mf = m.astype(np.float64)
    p1, p2 = state.layer1, state.layer2
    P = graph.mean_adjacency()
    PT = P.T.tocsr()

    a1 = P @ x0
    h1 = x0 @ p1.w_self + a1 @ p1.w_neigh + p1.b_msg
    z1 = np.maximum(h1, 0.0)
    xt1 = z1 @ p1.w_rec + p1.b_rec
    x1 = np.where(m, x0, xt1)

    a2 = P @ x1
    h2 = x1 @ p2.w_self + a2 @ p2.w_neigh + p2.b_msg
    z2 = np.maximum(h2, 0.0)
    xt2 = z2 @ p2.w_rec + p2.b_rec
    x2 = np.where(m, x0, xt2)

    r1 = mf * (xt1 - x0)
    r2 = mf * (xt2 - x0)
    loss = (lambda1 * float(np.sum(r1 * r1)) + lambda2 * float(np.sum(r2 * r2))) / count

    g_t2 = (2.0 * lambda2 / count) * r2
    g_wr2 = z2.T @ g_t2
    g_br2 = g_t2.sum(axis=0)
    g_h2 = (g_t2 @ p2.w_rec.T) * (h2 > 0)
    g_ws2 = x1.T @ g_h2
    g_wn2 = a2.T @ g_h2
    g_b2 = g_h2.sum(axis=0)
    g_x1 = g_h2 @ p2.w_self.T + PT @ (g_h2 @ p2.w_neigh.T)

    g_t1 = (2.0 * lambda1 / count) * r1 + (1.0 - mf) * g_x1
    g_wr1 = z1.T @ g_t1
    g_br1 = g_t1.sum(axis=0)
    g_h1 = (g_t1 @ p1.w_rec.T) * (h1 > 0)
    g_ws1 = x0.T @ g_h1
    g_wn1 = a1.T @ g_h1
    g_b1 = g_h1.sum(axis=0)

    grads = {
        "layer1.w_self": g_ws1,
        "layer1.w_neigh": g_wn1,
        "layer1.b_msg": g_b1,
        "layer1.w_rec": g_wr1,
        "layer1.b_rec": g_br1,
        "layer2.w_self": g_ws2,
        "layer2.w_neigh": g_wn2,
        "layer2.b_msg": g_b2,
        "layer2.w_rec": g_wr2,
        "layer2.b_rec": g_br2,
    }
    return loss, grads, (xt1, x1, xt2, x2)


class AdamOptimizer:
    """Adam with bias correction and decoupled weight decay.

    Decay shrinks matrix parameters directly (never biases), separate
    from the adaptive gradient step.
    """

    def __init__(
        self,
        params: Sequence[tuple[str, np.ndarray]],
        learning_rate: float = 0.01,
        weight_decay: float = 0.0,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = {name: np.zeros_like(p) for name, p in self.params}
        self._v = {name: np.zeros_like(p) for name, p in self.params}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        for name, p in self.params:
            g = grads[name]
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            p -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
            if self.weight_decay and p.ndim == 2:
                p -= self.learning_rate * self.weight_decay * p


@dataclass(frozen=True)
class TrainResult:
    """Outcome of one per-window training run.

    completed is the fully imputed matrix: observed entries are the
    input's bit for bit, hidden validation entries are restored, and the
    rest come from the best epoch's output.
    """

    completed: np.ndarray
    state: ModelState
    best_val_mae: float
    best_epoch: int
    epochs_run: int
    val_mae_trace: tuple[float, ...]


def split_validation(
    mask: np.ndarray, validation_ratio: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Pick floor(ratio * observed) observed positions to hide.

    Returns (rows, cols) index arrays of the hidden positions.
    """
    m = np.asarray(mask, dtype=bool)
    observed = np.argwhere(m)
    n_val = int(math.floor(validation_ratio * len(observed)))
    if n_val < 1:
        raise ConfigurationError(
            f"validation split is empty: {len(observed)} observed entries "
            f"at ratio {validation_ratio}"
        )
    picked = rng.choice(len(observed), size=n_val, replace=False)
    pos = observed[picked]
    return pos[:, 0], pos[:, 1]


def train_impute(
    chunk: DataChunk,
    graph_builder: GraphBuilder,
    config: TrainConfig,
    init_state: ModelState | None = None,
) -> TrainResult:
    """Train on one chunk and return its imputation plus the best state.

    A validation slice of the observed entries is hidden under
    config.seed; mean-fill, graph build, bound condition, and loss all
    use the reduced mask. Every epoch runs one forward pass, one
    gradient step, and a validation MAE check on the final bounded
    output at the hidden positions; the epoch with the lowest validation
    MAE (earliest on ties) supplies the returned matrix and state.

    Raises:
        ConfigurationError: the validation split would be empty.
        TrainingDivergedError: a non-finite loss, reporting the epoch.
    """
    x = chunk.values_matrix()
    m = chunk.mask().bits.astype(bool)
    ss = np.random.SeedSequence(config.seed)
    split_ss, init_ss = ss.spawn(2)
    vi, vd = split_validation(m, config.validation_ratio, np.random.default_rng(split_ss))
    truth_val = x[vi, vd].copy()

    m_train = m.copy()
    m_train[vi, vd] = False
    x0 = mean_fill_matrix(np.where(m_train, x, np.nan), m_train)
    graph = graph_builder(x0)
    if init_state is not None:
        state = init_state.copy()
    else:
        state = init_model_state(chunk.dim, config, seed=init_ss)

    optimizer = AdamOptimizer(
        state.named_parameters(),
        learning_rate=config.learning_rate,
        weight_decay=config.weight_decay,
    )
    best_mae = math.inf
    best_state = state.copy()
    best_x2 = x0
    best_epoch = 0
    since_best = 0
    trace: list[float] = []
    epochs_run = 0
    for epoch in range(1, config.epochs + 1):
        epochs_run = epoch
        loss, grads, (_, _, _, x2) = loss_and_gradients(
            x0, m_train, graph, state, config.lambda1, config.lambda2
        )
        if not math.isfinite(loss):
            raise TrainingDivergedError(epoch, loss)
        val_mae = float(np.mean(np.abs(x2[vi, vd] - truth_val)))
        trace.append(val_mae)
        if val_mae < best_mae:
            best_mae = val_mae
            best_state = state.copy()
            best_x2 = x2
            best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if (
                config.early_stop_patience is not None
                and since_best >= config.early_stop_patience
            ):
                break
        optimizer.step(grads)

    completed = np.where(m, x, best_x2)
    return TrainResult(
        completed=completed,
        state=best_state,
        best_val_mae=best_mae,
        best_epoch=best_epoch,
        epochs_run=epochs_run,
        val_mae_trace=tuple(trace),
    )
