"""Shared-trunk multilayer perceptron with exact reverse-mode gradients.

The model is a plain encoder-decoder: a trunk of affine layers with an
elementwise nonlinearity (and optional inverted dropout) produces a shared
representation z, and one small affine head per task maps z to that task's
predictions.  Everything is float64 numpy; gradients are hand-derived and
checked against finite differences in the test suite.

Parameter flattening order is fixed: trunk layers in order, each as row-major
weight matrix followed by bias.  Gradient rows produced by
:func:`per_task_param_grads` are therefore comparable across calls.

Dropout masks are drawn once per step and shared across tasks, so per-task
gradients are gradients of the same sampled network.

The model keeps two backward-pass counters (`trunk_backwards`,
`head_backwards`) covering gradient computations on the update path;
diagnostic-only passes can opt out with ``count=False``.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, TrainingDivergedError, ValidationError
from .gradcore import GradientSet, GradSpace

__all__ = [
    "Batch",
    "AffineLayer",
    "MultiTaskModel",
    "forward",
    "task_loss",
    "loss_and_pred_grad",
    "per_task_param_grads",
    "per_task_repr_grads",
    "unitary_grad",
    "jvp_trunk",
    "AdamState",
    "sgd_or_adam_step",
    "save_checkpoint",
    "load_checkpoint",
]

LOSS_KINDS = ("cross_entropy", "mse", "l1")


@dataclass(frozen=True)
class Batch:
    """Shared inputs plus one target array per task."""

    X: np.ndarray
    ys: tuple

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise DimensionError(f"inputs must be (b, d_in), got shape {X.shape}")
        ys = tuple(np.asarray(y) for y in self.ys)
        for i, y in enumerate(ys):
            if y.shape[0] != X.shape[0]:
                raise DimensionError(
                    f"task {i} targets have batch size {y.shape[0]}, inputs have {X.shape[0]}"
                )
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "ys", ys)

    @property
    def size(self) -> int:
        return self.X.shape[0]


@dataclass
class AffineLayer:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)

    @classmethod
    def init(cls, fan_in: int, fan_out: int, rng: np.random.Generator) -> "AffineLayer":
        bound = 1.0 / math.sqrt(fan_in)
        return cls(
            W=rng.uniform(-bound, bound, size=(fan_out, fan_in)),
            b=rng.uniform(-bound, bound, size=fan_out),
        )

    @property
    def param_count(self) -> int:
        return self.W.size + self.b.size


def _activate(kind: str, x: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "tanh":
        return np.tanh(x)
    raise ValidationError(f"unknown activation {kind!r}")


def _activate_grad(kind: str, pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return (pre > 0.0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - post * post
    raise ValidationError(f"unknown activation {kind!r}")


@dataclass
class MultiTaskModel:
    """Shared trunk + per-task heads.

    `dropout_p[l]` is the drop probability after trunk layer l's activation
    (inverted scaling: kept units are divided by 1 - p at train time).
    """

    trunk: list
    heads: list               # heads[t] = list of AffineLayer
    activation: str = "relu"
    dropout_p: tuple = ()
    trunk_backwards: int = field(default=0, compare=False)
    head_backwards: int = field(default=0, compare=False)

    @classmethod
    def init(
        cls,
        input_dim: int,
        trunk_widths,
        task_out_dims,
        head_hidden: int | None = None,
        activation: str = "relu",
        dropout: float | tuple = 0.0,
        seed: int = 0,
    ) -> "MultiTaskModel":
        if activation not in ("relu", "tanh"):
            raise ValidationError(f"unknown activation {activation!r}")
        trunk_widths = list(trunk_widths)
        if not trunk_widths:
            raise ValidationError("trunk needs at least one layer")
        if isinstance(dropout, (int, float)):
            dropout_p = tuple(float(dropout) for _ in trunk_widths)
        else:
            dropout_p = tuple(float(p) for p in dropout)
        if len(dropout_p) != len(trunk_widths):
            raise DimensionError(
                f"need one dropout probability per trunk layer, got {len(dropout_p)}"
            )
        if any(not 0.0 <= p < 1.0 for p in dropout_p):
            raise ValidationError("dropout probabilities must lie in [0, 1)")

        rng = np.random.default_rng(seed)
        trunk = []
        fan_in = input_dim
        for width in trunk_widths:
            trunk.append(AffineLayer.init(fan_in, width, rng))
            fan_in = width
        repr_dim = trunk_widths[-1]
        heads = []
        for out_dim in task_out_dims:
            layers = []
            h_in = repr_dim
            if head_hidden:
                layers.append(AffineLayer.init(h_in, head_hidden, rng))
                h_in = head_hidden
            layers.append(AffineLayer.init(h_in, out_dim, rng))
            heads.append(layers)
        return cls(trunk=trunk, heads=heads, activation=activation, dropout_p=dropout_p)

    @property
    def task_count(self) -> int:
        return len(self.heads)

    @property
    def input_dim(self) -> int:
        return self.trunk[0].W.shape[1]

    @property
    def repr_dim(self) -> int:
        return self.trunk[-1].W.shape[0]

    @property
    def trunk_param_count(self) -> int:
        return sum(layer.param_count for layer in self.trunk)

    def trunk_param_vector(self) -> np.ndarray:
        """Flatten trunk parameters: per layer, row-major W then b."""
        parts = []
        for layer in self.trunk:
            parts.append(layer.W.ravel())
            parts.append(layer.b)
        return np.concatenate(parts)

    def set_trunk_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.trunk_param_count,):
            raise DimensionError(
                f"expected {self.trunk_param_count} trunk parameters, got {flat.shape}"
            )
        offset = 0
        for layer in self.trunk:
            n = layer.W.size
            layer.W = flat[offset : offset + n].reshape(layer.W.shape).copy()
            offset += n
            n = layer.b.size
            layer.b = flat[offset : offset + n].copy()
            offset += n

    def all_finite(self) -> bool:
        arrays = [layer.W for layer in self.trunk] + [layer.b for layer in self.trunk]
        for layers in self.heads:
            for layer in layers:
                arrays.extend((layer.W, layer.b))
        return all(np.all(np.isfinite(a)) for a in arrays)

    def clone_params(self):
        """Deep copy of all parameter arrays (for best-epoch snapshots)."""
        return (
            [(layer.W.copy(), layer.b.copy()) for layer in self.trunk],
            [[(layer.W.copy(), layer.b.copy()) for layer in layers] for layers in self.heads],
        )

    def load_params(self, snapshot) -> None:
        trunk_params, head_params = snapshot
        for layer, (W, b) in zip(self.trunk, trunk_params):
            layer.W = W.copy()
            layer.b = b.copy()
        for layers, params in zip(self.heads, head_params):
            for layer, (W, b) in zip(layers, params):
                layer.W = W.copy()
                layer.b = b.copy()


@dataclass
class TrunkCache:
    X: np.ndarray
    pre: list          # pre-activation per trunk layer
    post: list         # post-activation (pre-dropout)
    masks: list        # inverted-dropout masks (None in eval mode / p = 0)
    inputs: list       # input to each affine layer
    z: np.ndarray      # final representation (post-dropout), shape (b, r)
    mode: str = "eval"


@dataclass
class HeadCache:
    z: np.ndarray
    pre: list
    post: list
    inputs: list
    pred: np.ndarray


def forward_trunk(
    model: MultiTaskModel, X, mode: str = "eval", rng: np.random.Generator | None = None
) -> TrunkCache:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise DimensionError(f"inputs must be (b, {model.input_dim}), got shape {X.shape}")
    if mode not in ("train", "eval"):
        raise ValidationError(f"mode must be 'train' or 'eval', got {mode!r}")
    h = X
    pre, post, masks, inputs = [], [], [], []
    for layer, p in zip(model.trunk, model.dropout_p):
        inputs.append(h)
        a = h @ layer.W.T + layer.b
        pre.append(a)
        h = _activate(model.activation, a)
        post.append(h)
        mask = None
        if mode == "train" and p > 0.0:
            if rng is None:
                raise ValidationError("train-mode dropout requires a generator")
            mask = (rng.uniform(size=h.shape) >= p).astype(np.float64) / (1.0 - p)
            h = h * mask
        masks.append(mask)
    return TrunkCache(X=X, pre=pre, post=post, masks=masks, inputs=inputs, z=h, mode=mode)


def forward_head(model: MultiTaskModel, task: int, z: np.ndarray) -> HeadCache:
    layers = model.heads[task]
    h = z
    pre, post, inputs = [], [], []
    for l, layer in enumerate(layers):
        inputs.append(h)
        a = h @ layer.W.T + layer.b
        pre.append(a)
        if l < len(layers) - 1:
            h = _activate(model.activation, a)
        else:
            h = a  # linear output layer
        post.append(h)
    return HeadCache(z=z, pre=pre, post=post, inputs=inputs, pred=h)


def forward(
    model: MultiTaskModel,
    X,
    task: int,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
):
    """Predictions for one task plus the cached activations (including z)."""
    cache = forward_trunk(model, X, mode=mode, rng=rng)
    head = forward_head(model, task, cache.z)
    return head.pred, (cache, head)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def task_loss(predictions, y, kind: str) -> float:
    """Mean-over-batch loss of one task."""
    loss, _ = loss_and_pred_grad(predictions, y, kind)
    return loss


def loss_and_pred_grad(predictions, y, kind: str):
    """Loss plus its gradient wrt the predictions (both mean-over-batch)."""
    pred = np.asarray(predictions, dtype=np.float64)
    b = pred.shape[0]
    if kind == "cross_entropy":
        labels = np.asarray(y)
        if labels.shape != (b,):
            raise DimensionError(f"labels must be ({b},), got shape {labels.shape}")
        logp = _log_softmax(pred)
        loss = float(-logp[np.arange(b), labels].mean())
        grad = np.exp(logp)
        grad[np.arange(b), labels] -= 1.0
        return loss, grad / b
    target = np.asarray(y, dtype=np.float64)
    if target.shape != pred.shape:
        raise DimensionError(f"targets shape {target.shape} != predictions {pred.shape}")
    diff = pred - target
    if kind == "mse":
        return float((diff * diff).sum() / b), 2.0 * diff / b
    if kind == "l1":
        return float(np.abs(diff).sum() / b), np.sign(diff) / b
    raise ValidationError(f"unknown loss kind {kind!r}")


def head_backward(
    model: MultiTaskModel, task: int, head: HeadCache, dpred: np.ndarray, count: bool = True
):
    """Backprop through one head; returns ([(dW, db) per layer], dL/dz)."""
    layers = model.heads[task]
    grads = [None] * len(layers)
    d = dpred
    for l in range(len(layers) - 1, -1, -1):
        if l < len(layers) - 1:
            d = d * _activate_grad(model.activation, head.pre[l], head.post[l])
        dW = d.T @ head.inputs[l]
        db = d.sum(axis=0)
        grads[l] = (dW, db)
        d = d @ layers[l].W
    if count:
        model.head_backwards += 1
    return grads, d


def trunk_backward(
    model: MultiTaskModel, cache: TrunkCache, dz: np.ndarray, count: bool = True
) -> np.ndarray:
    """Backprop dz through the trunk; returns the flat trunk parameter gradient."""
    if dz.shape != cache.z.shape:
        raise DimensionError(f"cotangent shape {dz.shape} != representation {cache.z.shape}")
    parts = [None] * len(model.trunk)
    d = dz
    for l in range(len(model.trunk) - 1, -1, -1):
        if cache.masks[l] is not None:
            d = d * cache.masks[l]
        d = d * _activate_grad(model.activation, cache.pre[l], cache.post[l])
        dW = d.T @ cache.inputs[l]
        db = d.sum(axis=0)
        parts[l] = (dW, db)
        d = d @ model.trunk[l].W
    if count:
        model.trunk_backwards += 1
    return np.concatenate([np.concatenate((dW.ravel(), db)) for dW, db in parts])


def per_task_param_grads(
    model: MultiTaskModel,
    batch: Batch,
    kinds,
    lam: float = 0.0,
    rng: np.random.Generator | None = None,
    mode: str = "train",
):
    """Exact per-task gradients wrt the flattened shared trunk.

    Runs one trunk forward (dropout masks shared across tasks) and one trunk
    backward per task.  With lam > 0, each row additionally carries the
    task's even share (lam / m) of the trunk weight-decay gradient, so the
    rows sum to the standard decayed gradient of the summed loss.  Head
    gradients are returned data-only; decay on heads is the optimizer's job.

    Returns (GradientSet over trunk params, per-task head grads, losses, cache).
    """
    if lam < 0.0:
        raise ValidationError(f"l2 coefficient must be >= 0, got {lam}")
    m = model.task_count
    cache = forward_trunk(model, batch.X, mode=mode, rng=rng)
    rows = np.empty((m, model.trunk_param_count))
    head_grads, losses = [], np.empty(m)
    decay = (lam / m) * model.trunk_param_vector() if lam > 0.0 else None
    for t in range(m):
        head = forward_head(model, t, cache.z)
        losses[t], dpred = loss_and_pred_grad(head.pred, batch.ys[t], kinds[t])
        hg, dz = head_backward(model, t, head, dpred)
        rows[t] = trunk_backward(model, cache, dz)
        if decay is not None:
            rows[t] += decay
        head_grads.append(hg)
    if not np.all(np.isfinite(losses)):
        raise TrainingDivergedError("non-finite task loss")
    return GradientSet(rows, GradSpace.PARAMETER), head_grads, losses, cache


def per_task_repr_grads(
    model: MultiTaskModel,
    batch: Batch,
    kinds,
    rng: np.random.Generator | None = None,
    mode: str = "train",
):
    """Per-task gradients wrt the shared representation z, flattened (b x r).

    Cheap: m head-only backward passes, no trunk backward.  Returns
    (GradientSet in representation space, head grads, losses, cache).
    """
    m = model.task_count
    cache = forward_trunk(model, batch.X, mode=mode, rng=rng)
    rows = np.empty((m, cache.z.size))
    head_grads, losses = [], np.empty(m)
    for t in range(m):
        head = forward_head(model, t, cache.z)
        losses[t], dpred = loss_and_pred_grad(head.pred, batch.ys[t], kinds[t])
        hg, dz = head_backward(model, t, head, dpred)
        rows[t] = dz.ravel()
        head_grads.append(hg)
    if not np.all(np.isfinite(losses)):
        raise TrainingDivergedError("non-finite task loss")
    return GradientSet(rows, GradSpace.REPRESENTATION), head_grads, losses, cache


def unitary_grad(
    model: MultiTaskModel,
    batch: Batch,
    kinds,
    rng: np.random.Generator | None = None,
    mode: str = "train",
):
    """Single-backward gradient of the summed loss.

    One trunk forward, m head backwards, and exactly one trunk backward with
    the summed representation cotangent.  Returns (flat sum of per-task
    trunk gradients, head grads, losses, cache); no decay is included.
    """
    m = model.task_count
    cache = forward_trunk(model, batch.X, mode=mode, rng=rng)
    head_grads, losses = [], np.empty(m)
    dz_total = np.zeros_like(cache.z)
    for t in range(m):
        head = forward_head(model, t, cache.z)
        losses[t], dpred = loss_and_pred_grad(head.pred, batch.ys[t], kinds[t])
        hg, dz = head_backward(model, t, head, dpred)
        dz_total += dz
        head_grads.append(hg)
    if not np.all(np.isfinite(losses)):
        raise TrainingDivergedError("non-finite task loss")
    trunk_sum = trunk_backward(model, cache, dz_total)
    return trunk_sum, head_grads, losses, cache


def jvp_trunk(
    model: MultiTaskModel, cache: TrunkCache, v, count: bool = True
) -> np.ndarray:
    """Pull a representation-space vector back to parameter space.

    Computes (dz/dtheta)^T v with one trunk backward, using the cached
    forward state (same dropout masks).  `v` is flat of length b * r.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (cache.z.size,):
        raise DimensionError(f"cotangent length {v.shape} != b*r = {cache.z.size}")
    return trunk_backward(model, cache, v.reshape(cache.z.shape), count=count)


class AdamState:
    """Per-slot Adam moments with bias correction; one shared step count."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {}
        self._v = {}

    def begin_step(self) -> None:
        self.t += 1

    def direction(self, key: str, grad: np.ndarray) -> np.ndarray:
        m = self._m.get(key)
        if m is None:
            m = np.zeros_like(grad)
            self._v[key] = np.zeros_like(grad)
        v = self._v[key]
        m = self.beta1 * m + (1.0 - self.beta1) * grad
        v = self.beta2 * v + (1.0 - self.beta2) * grad * grad
        self._m[key] = m
        self._v[key] = v
        m_hat = m / (1.0 - self.beta1**self.t)
        v_hat = v / (1.0 - self.beta2**self.t)
        return m_hat / (np.sqrt(v_hat) + self.eps)


def sgd_or_adam_step(
    model: MultiTaskModel,
    update: np.ndarray,
    head_grads,
    eta: float,
    opt_state: AdamState | None = None,
    step: int = -1,
) -> MultiTaskModel:
    """Apply the aggregate direction to the trunk and per-task grads to heads.

    The trunk moves by ``theta <- theta + eta * update`` (descent direction
    convention); each head moves against its own gradient.  With an
    :class:`AdamState` the same moments machinery is used for both.  Raises
    :class:`TrainingDivergedError` if any parameter goes non-finite.
    """
    if not eta > 0.0:
        raise ValidationError(f"learning rate must be > 0, got {eta}")
    update = np.asarray(update, dtype=np.float64)
    trunk_grad = -update
    if opt_state is None:
        flat = model.trunk_param_vector() - eta * trunk_grad
        model.set_trunk_params(flat)
        for t, grads in enumerate(head_grads):
            for l, (dW, db) in enumerate(grads):
                layer = model.heads[t][l]
                layer.W = layer.W - eta * dW
                layer.b = layer.b - eta * db
    else:
        opt_state.begin_step()
        flat = model.trunk_param_vector() - eta * opt_state.direction("trunk", trunk_grad)
        model.set_trunk_params(flat)
        for t, grads in enumerate(head_grads):
            for l, (dW, db) in enumerate(grads):
                layer = model.heads[t][l]
                layer.W = layer.W - eta * opt_state.direction(f"head{t}.{l}.W", dW)
                layer.b = layer.b - eta * opt_state.direction(f"head{t}.{l}.b", db)
    if not model.all_finite():
        raise TrainingDivergedError("non-finite parameters after optimizer step", step=step)
    return model


CHECKPOINT_FORMAT = "mtopt-model"
CHECKPOINT_VERSION = 1


def save_checkpoint(model: MultiTaskModel, path) -> None:
    """Write a versioned plain-text checkpoint (shapes + exact float64 params)."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "activation": model.activation,
        "dropout_p": list(model.dropout_p),
        "trunk": [{"W": layer.W.tolist(), "b": layer.b.tolist()} for layer in model.trunk],
        "heads": [
            [{"W": layer.W.tolist(), "b": layer.b.tolist()} for layer in layers]
            for layers in model.heads
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> MultiTaskModel:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"not a model checkpoint: {path}")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {payload.get('version')}")
    trunk = [
        AffineLayer(W=np.array(d["W"], dtype=np.float64), b=np.array(d["b"], dtype=np.float64))
        for d in payload["trunk"]
    ]
    heads = [
        [
            AffineLayer(
                W=np.array(d["W"], dtype=np.float64), b=np.array(d["b"], dtype=np.float64)
            )
            for d in layers
        ]
        for layers in payload["heads"]
    ]
    return MultiTaskModel(
        trunk=trunk,
        heads=heads,
        activation=payload["activation"],
        dropout_p=tuple(payload["dropout_p"]),
    )
