"""Residual and shrinkage blocks, batch normalization, and the network
forward/backward passes.

Feature batches are ``(n, width)`` float64 arrays with one sample per row,
so a block's ``K1 y`` is computed as ``y @ K1.T``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class Activation(str, enum.Enum):
    TANH = "tanh"
    RELU = "relu"


class BlockKind(str, enum.Enum):
    RESIDUAL = "residual"
    SHRINKAGE = "shrinkage"


class DivergenceError(FloatingPointError):
    """Raised when activations leave the finite range.

    ``layer`` is the index of the first block whose output is non-finite
    (1-based, layer 0 being the projected input).
    """

    def __init__(self, layer: int):
        super().__init__(f"non-finite activations after layer {layer}")
        self.layer = layer


def activation_apply(x, kind=Activation.TANH):
    kind = Activation(kind)
    if kind is Activation.TANH:
        return np.tanh(x)
    return np.maximum(x, 0.0)


def activation_derivative(x, kind=Activation.TANH):
    """Elementwise derivative; the ReLU derivative at 0 is taken as 0."""
    kind = Activation(kind)
    if kind is Activation.TANH:
        t = np.tanh(x)
        return 1.0 - t * t
    return (np.asarray(x) > 0.0).astype(np.float64)


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-8
    momentum: float = 0.1

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError("momentum must lie in [0, 1]")

    @classmethod
    def identity(cls, width: int, epsilon: float = 1e-8, momentum: float = 0.1):
        return cls(
            gamma=np.ones(width),
            beta=np.zeros(width),
            running_mean=np.zeros(width),
            running_var=np.ones(width),
            epsilon=epsilon,
            momentum=momentum,
        )


@dataclass
class BlockParams:
    """Weights of one block. ``k2`` is ``None`` for shrinkage blocks."""

    k1: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    kind: BlockKind = BlockKind.RESIDUAL
    k2: np.ndarray | None = None

    def __post_init__(self):
        self.kind = BlockKind(self.kind)
        w = self.k1.shape[0]
        if self.k1.shape != (w, w) or self.b1.shape != (w,) or self.b2.shape != (w,):
            raise ValueError("block parameter shapes are inconsistent")
        if self.kind is BlockKind.RESIDUAL:
            if self.k2 is None or self.k2.shape != (w, w):
                raise ValueError("residual block needs a (width, width) k2")
        else:
            self.k2 = None

    @property
    def width(self) -> int:
        return self.k1.shape[0]


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int
    n_classes: int
    depth: int = 100
    width: int = 2
    h: float = 1.0
    block_kind: BlockKind = BlockKind.RESIDUAL
    use_batchnorm: bool = False
    activation: Activation = Activation.TANH
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "block_kind", BlockKind(self.block_kind))
        object.__setattr__(self, "activation", Activation(self.activation))
        if not 0.0 < self.h <= 1.0:
            raise ValueError(f"step size h must lie in (0, 1], got {self.h}")
        if self.depth < 0:
            raise ValueError("depth must be non-negative")
        if self.width < 1 or self.input_dim < 1:
            raise ValueError("width and input_dim must be positive")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")


@dataclass
class Model:
    blocks: list[BlockParams]
    head_w: np.ndarray
    head_b: np.ndarray
    proj_w: np.ndarray | None = None
    proj_b: np.ndarray | None = None
    norms: list[BatchNormParams | None] = field(default_factory=list)

    def __post_init__(self):
        if not self.norms:
            self.norms = [None] * len(self.blocks)
        if len(self.norms) != len(self.blocks):
            raise ValueError("one norm slot per block is required")

    @property
    def width(self) -> int:
        return self.head_w.shape[1]

    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable arrays by name. The arrays are live views of the model."""
        params = {}
        if self.proj_w is not None:
            params["proj.w"] = self.proj_w
            params["proj.b"] = self.proj_b
        for i, (blk, bn) in enumerate(zip(self.blocks, self.norms)):
            params[f"block{i}.k1"] = blk.k1
            if blk.k2 is not None:
                params[f"block{i}.k2"] = blk.k2
            params[f"block{i}.b1"] = blk.b1
            params[f"block{i}.b2"] = blk.b2
            if bn is not None:
                params[f"bn{i}.gamma"] = bn.gamma
                params[f"bn{i}.beta"] = bn.beta
        params["head.w"] = self.head_w
        params["head.b"] = self.head_b
        return params

    def copy(self) -> "Model":
        return model_from_dict(model_to_dict(self))


def init_model(cfg: NetworkConfig) -> Model:
    """Random model for ``cfg``; bit-identical for a given ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    w = cfg.width
    scale = 1.0 / np.sqrt(w)
    proj_w = proj_b = None
    if cfg.input_dim != w:
        proj_w = rng.normal(0.0, 1.0 / np.sqrt(cfg.input_dim), size=(w, cfg.input_dim))
        proj_b = np.zeros(w)
    blocks = []
    for _ in range(cfg.depth):
        k1 = rng.normal(0.0, scale, size=(w, w))
        k2 = None
        if cfg.block_kind is BlockKind.RESIDUAL:
            k2 = rng.normal(0.0, scale, size=(w, w))
        blocks.append(BlockParams(k1=k1, k2=k2, b1=np.zeros(w), b2=np.zeros(w),
                                  kind=cfg.block_kind))
    norms = [BatchNormParams.identity(w) if cfg.use_batchnorm else None
             for _ in range(cfg.depth)]
    head_w = rng.normal(0.0, scale, size=(cfg.n_classes, w))
    return Model(blocks=blocks, norms=norms, head_w=head_w,
                 head_b=np.zeros(cfg.n_classes), proj_w=proj_w, proj_b=proj_b)


def _check_width(y, p: BlockParams):
    if np.shape(y)[-1] != p.width:
        raise ValueError(f"feature width {np.shape(y)[-1]} does not match block width {p.width}")


def residual_block_forward(y, p: BlockParams, h: float, activation=Activation.TANH):
    """``y + h (K2 sigma(K1 y + b1) + b2)`` for a vector or a row batch."""
    _check_width(y, p)
    if p.k2 is None:
        raise ValueError("residual block needs k2")
    a = activation_apply(y @ p.k1.T + p.b1, activation)
    return y + h * (a @ p.k2.T + p.b2)


def shrinkage_block_forward(y, p: BlockParams, h: float, activation=Activation.TANH):
    """``y - h (K1^T sigma(K1 y + b1) + b2)`` for a vector or a row batch."""
    _check_width(y, p)
    a = activation_apply(y @ p.k1.T + p.b1, activation)
    return y - h * (a @ p.k1 + p.b2)


def block_jacobian(y, p: BlockParams, kind=None, activation=Activation.TANH,
                   norm: BatchNormParams | None = None):
    """Jacobian of the block's vector field ``f`` at the single point ``y``.

    ``f`` is the bracketed update without the identity and the step size,
    signed so that the block computes ``y + h f(y)``. A batch-norm layer is
    linearized with its running statistics.
    """
    kind = BlockKind(kind if kind is not None else p.kind)
    _check_width(y, p)
    y = np.asarray(y, dtype=np.float64)
    z = p.k1 @ y + p.b1
    scale = np.ones_like(z)
    if norm is not None:
        scale = norm.gamma / np.sqrt(norm.running_var + norm.epsilon)
        z = (z - norm.running_mean) * scale + norm.beta
    d = activation_derivative(z, activation) * scale
    if kind is BlockKind.SHRINKAGE:
        return -(p.k1.T * d) @ p.k1
    return (p.k2 * d) @ p.k1


def batchnorm_forward(x, p: BatchNormParams, training: bool = True):
    """Normalize each column of ``x`` and apply ``gamma * xhat + beta``.

    In training mode the batch statistics are used and the running
    statistics of ``p`` are updated in place. Use :func:`_bn_train` for the
    side-effect-free variant.
    """
    x = np.asarray(x, dtype=np.float64)
    if not training:
        inv = 1.0 / np.sqrt(p.running_var + p.epsilon)
        return (x - p.running_mean) * inv * p.gamma + p.beta
    out, state = _bn_train(x, p)
    _update_running(p, state)
    return out


@dataclass
class _BNState:
    xhat: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    inv_std: np.ndarray


def _bn_train(x, p: BatchNormParams):
    n = x.shape[0]
    if n < 2:
        raise ValueError("batch normalization in training mode needs at least 2 rows")
    mean = x.mean(axis=0)
    centered = x - mean
    # the mean of a constant column can be off by an ulp; pin it exactly
    constant = x.max(axis=0) == x.min(axis=0)
    if constant.any():
        centered[:, constant] = 0.0
    var = (centered * centered).mean(axis=0)
    inv = 1.0 / np.sqrt(var + p.epsilon)
    xhat = centered * inv
    return xhat * p.gamma + p.beta, _BNState(xhat, mean, var, inv)


def _update_running(p: BatchNormParams, state: _BNState):
    n = state.xhat.shape[0]
    m = p.momentum
    p.running_mean[:] = (1.0 - m) * p.running_mean + m * state.mean
    p.running_var[:] = (1.0 - m) * p.running_var + m * state.var * (n / (n - 1))


def _bn_backward(g, state: _BNState, p: BatchNormParams):
    n = g.shape[0]
    ggamma = (g * state.xhat).sum(axis=0)
    gbeta = g.sum(axis=0)
    gx = g * p.gamma
    gz = (state.inv_std / n) * (n * gx - gx.sum(axis=0) - state.xhat * (gx * state.xhat).sum(axis=0))
    return gz, ggamma, gbeta


@dataclass
class ForwardCache:
    """Intermediate state of one forward pass, consumed by the backward pass.

    ``ys[i]`` is the input to block ``i``; ``ys[-1]`` feeds the head.
    """

    x: np.ndarray
    ys: list
    pre: list
    acts: list
    bn_states: list
    training: bool


def _project(x, m: Model):
    if m.proj_w is None:
        return np.array(x, dtype=np.float64, copy=True)
    return x @ m.proj_w.T + m.proj_b


def network_forward(x, m: Model, cfg: NetworkConfig, training: bool = False,
                    keep_cache: bool = False):
    """Run the network on a row batch.

    Returns ``(logits, cache)``; ``cache`` is ``None`` unless ``keep_cache``.
    Batch-norm layers use batch statistics when ``training`` and running
    statistics otherwise; running statistics are never modified here (see
    :func:`apply_running_stats`).

    Raises :class:`DivergenceError` naming the first layer whose
    activations are not finite.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise ValueError(f"expected input of shape (n, {cfg.input_dim}), got {x.shape}")
    h = cfg.h
    act = cfg.activation
    tanh = act is Activation.TANH
    y = _project(x, m)
    ys, pres, acts, states = [y], [], [], []
    with np.errstate(over="ignore", invalid="ignore"):
        for blk, bn in zip(m.blocks, m.norms):
            z = y @ blk.k1.T + blk.b1
            state = None
            if bn is not None:
                if training:
                    z, state = _bn_train(z, bn)
                else:
                    z = (z - bn.running_mean) * (bn.gamma / np.sqrt(bn.running_var + bn.epsilon)) + bn.beta
            a = np.tanh(z) if tanh else np.maximum(z, 0.0)
            if blk.k2 is None:
                y = y - h * (a @ blk.k1 + blk.b2)
            else:
                y = y + h * (a @ blk.k2.T + blk.b2)
            if keep_cache:
                pres.append(z)
                acts.append(a)
                states.append(state)
            ys.append(y)
        if not np.isfinite(y).all():
            raise DivergenceError(_first_bad_layer(ys))
        logits = y @ m.head_w.T + m.head_b
    cache = None
    if keep_cache:
        cache = ForwardCache(x=x, ys=ys, pre=pres, acts=acts, bn_states=states,
                             training=training)
    return logits, cache


def forward_states(x, m: Model, cfg: NetworkConfig, training: bool = False):
    """All block inputs plus the final features, as a list of ``depth + 1`` arrays.

    Stops early without raising if activations become non-finite; the
    returned list then ends at the first non-finite layer.
    """
    x = np.asarray(x, dtype=np.float64)
    y = _project(x, m)
    ys = [y]
    with np.errstate(over="ignore", invalid="ignore"):
        for blk, bn in zip(m.blocks, m.norms):
            z = y @ blk.k1.T + blk.b1
            if bn is not None:
                z = _bn_train(z, bn)[0] if training else batchnorm_forward(z, bn, training=False)
            a = activation_apply(z, cfg.activation)
            if blk.k2 is None:
                y = y - cfg.h * (a @ blk.k1 + blk.b2)
            else:
                y = y + cfg.h * (a @ blk.k2.T + blk.b2)
            ys.append(y)
            if not np.isfinite(y).all():
                break
    return ys


def _first_bad_layer(ys) -> int:
    for i, y in enumerate(ys):
        if not np.isfinite(y).all():
            return i
    return len(ys) - 1


def apply_running_stats(m: Model, cache: ForwardCache):
    """Fold the batch statistics of a training-mode pass into the running stats."""
    for bn, state in zip(m.norms, cache.bn_states):
        if bn is not None and state is not None:
            _update_running(bn, state)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient with respect to the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError("one label per row is required")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(logsumexp - shifted[rows, labels]))
    grad = np.exp(shifted - logsumexp[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / n


def network_backward(m: Model, cfg: NetworkConfig, cache: ForwardCache | None, grad_logits):
    """Gradients of every trainable array, keyed as in :meth:`Model.parameters`."""
    if cache is None:
        raise ValueError("backward pass needs the cache of a forward pass (keep_cache=True)")
    h = cfg.h
    tanh = cfg.activation is Activation.TANH
    g = np.asarray(grad_logits, dtype=np.float64)
    grads = {}
    grads["head.w"] = g.T @ cache.ys[-1]
    grads["head.b"] = g.sum(axis=0)
    gy = g @ m.head_w
    for i in range(len(m.blocks) - 1, -1, -1):
        blk, bn = m.blocks[i], m.norms[i]
        y_in, z, a = cache.ys[i], cache.pre[i], cache.acts[i]
        if blk.k2 is None:
            gf = -h * gy
            gk1 = a.T @ gf  # path through the transposed K1
            ga = gf @ blk.k1.T
        else:
            gf = h * gy
            grads[f"block{i}.k2"] = gf.T @ a
            ga = gf @ blk.k2
            gk1 = 0.0
        grads[f"block{i}.b2"] = gf.sum(axis=0)
        gz = ga * (1.0 - a * a) if tanh else ga * (z > 0.0)
        if bn is not None:
            state = cache.bn_states[i]
            if state is None:
                scale = bn.gamma / np.sqrt(bn.running_var + bn.epsilon)
                xhat = (z - bn.beta) / np.where(bn.gamma == 0.0, 1.0, bn.gamma)
                grads[f"bn{i}.gamma"] = (gz * xhat).sum(axis=0)
                grads[f"bn{i}.beta"] = gz.sum(axis=0)
                gz = gz * scale
            else:
                gz, grads[f"bn{i}.gamma"], grads[f"bn{i}.beta"] = _bn_backward(gz, state, bn)
        grads[f"block{i}.k1"] = gk1 + gz.T @ y_in
        grads[f"block{i}.b1"] = gz.sum(axis=0)
        gy = gy + gz @ blk.k1
    if m.proj_w is not None:
        grads["proj.w"] = gy.T @ cache.x
        grads["proj.b"] = gy.sum(axis=0)
    return grads


def loss_and_grads(x, labels, m: Model, cfg: NetworkConfig, training: bool = True):
    logits, cache = network_forward(x, m, cfg, training=training, keep_cache=True)
    loss, g = softmax_cross_entropy(logits, labels)
    return loss, network_backward(m, cfg, cache, g), cache


MODEL_FORMAT_VERSION = 1


def _arr(a):
    return None if a is None else {"shape": list(a.shape), "data": a.ravel().tolist()}


def _unarr(d):
    if d is None:
        return None
    return np.asarray(d["data"], dtype=np.float64).reshape(d["shape"])


def model_to_dict(m: Model) -> dict:
    """JSON-ready representation; arrays are stored as shape + flat row-major data."""
    blocks = []
    for blk, bn in zip(m.blocks, m.norms):
        entry = {"kind": blk.kind.value, "k1": _arr(blk.k1), "k2": _arr(blk.k2),
                 "b1": _arr(blk.b1), "b2": _arr(blk.b2), "batchnorm": None}
        if bn is not None:
            entry["batchnorm"] = {
                "gamma": _arr(bn.gamma), "beta": _arr(bn.beta),
                "running_mean": _arr(bn.running_mean), "running_var": _arr(bn.running_var),
                "epsilon": bn.epsilon, "momentum": bn.momentum,
            }
        blocks.append(entry)
    return {
        "format": "eulernet-model",
        "version": MODEL_FORMAT_VERSION,
        "proj_w": _arr(m.proj_w),
        "proj_b": _arr(m.proj_b),
        "blocks": blocks,
        "head_w": _arr(m.head_w),
        "head_b": _arr(m.head_b),
    }


def model_from_dict(d: dict) -> Model:
    if d.get("format") != "eulernet-model":
        raise ValueError("not an eulernet model document")
    if d.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {d.get('version')}")
    blocks, norms = [], []
    for entry in d["blocks"]:
        blocks.append(BlockParams(k1=_unarr(entry["k1"]), k2=_unarr(entry["k2"]),
                                  b1=_unarr(entry["b1"]), b2=_unarr(entry["b2"]),
                                  kind=entry["kind"]))
        bn = entry.get("batchnorm")
        norms.append(None if bn is None else BatchNormParams(
            gamma=_unarr(bn["gamma"]), beta=_unarr(bn["beta"]),
            running_mean=_unarr(bn["running_mean"]), running_var=_unarr(bn["running_var"]),
            epsilon=bn["epsilon"], momentum=bn["momentum"]))
    return Model(blocks=blocks, norms=norms, head_w=_unarr(d["head_w"]),
                 head_b=_unarr(d["head_b"]), proj_w=_unarr(d["proj_w"]),
                 proj_b=_unarr(d["proj_b"]))
