"""Convolutional distance estimator: residual plot image + aux features -> D-hat.

Architecture per block ``b`` (``conv_blocks`` of them)::

    conv3x3 -> [batchnorm] -> ReLU -> conv3x3 -> [batchnorm] -> ReLU -> maxpool 2x2 -> dropout

then global max/average pooling, concatenation with the 5 auxiliary inputs,
``dense(dense_units) -> [batchnorm] -> ReLU -> dropout -> dense(1)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..errors import NonFiniteActivation, NonFiniteGradient, ShapeMismatch
from . import layers as L

N_AUX = 5


@dataclass(frozen=True)
class NetworkConfig:
    input_side: int = 32
    base_filters: int = 32
    conv_blocks: int = 5
    conv_dropout: float = 0.4
    conv_batchnorm: bool = True
    global_pool: str = "max"
    dense_units: int = 256
    dense_batchnorm: bool = False
    dense_dropout: float = 0.2
    learning_rate: float = 3e-4
    use_aux: bool = True
    batch_size: int = 32

    def __post_init__(self):
        if not (1 <= self.conv_blocks <= 5):
            raise ValueError("conv_blocks must be between 1 and 5")
        if self.input_side % (2**self.conv_blocks):
            raise ValueError(
                f"input_side {self.input_side} not divisible by 2^{self.conv_blocks}"
            )
        if self.global_pool not in ("max", "average"):
            raise ValueError("global_pool must be 'max' or 'average'")
        for name in ("conv_dropout", "dense_dropout"):
            if not (0.0 <= getattr(self, name) < 1.0):
                raise ValueError(f"{name} must be in [0, 1)")

    def filters(self) -> list[int]:
        """Filters per block: doubling, with the last block repeating its predecessor."""
        out = []
        for i in range(self.conv_blocks):
            if i == self.conv_blocks - 1 and i > 0:
                out.append(out[-1])
            else:
                out.append(self.base_filters * 2**i)
        return out

    @property
    def feature_dim(self) -> int:
        return self.filters()[-1]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        kw = {}
        for f in fields(cls):
            if f.name not in d:
                continue
            v = d[f.name]
            if f.type in ("bool", bool):
                v = v if isinstance(v, bool) else str(v).lower() in ("1", "true", "yes")
            elif f.type in ("int", int):
                v = int(v)
            elif f.type in ("float", float):
                v = float(v)
            kw[f.name] = v
        return cls(**kw)


FULL_CONFIG = NetworkConfig()
# faster, lighter-regularized variant; the default rate stalls at this data size
DESK_CONFIG = NetworkConfig(base_filters=8, learning_rate=1e-3, conv_dropout=0.1)
PRESETS = {"full": FULL_CONFIG, "desk": DESK_CONFIG}


@dataclass
class NetworkParams:
    """Trainable tensors plus batch-norm running statistics, keyed by layer name."""

    weights: dict[str, np.ndarray]
    state: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "NetworkParams":
        return NetworkParams({k: v.copy() for k, v in self.weights.items()},
                             {k: v.copy() for k, v in self.state.items()})

    def astype(self, dtype) -> "NetworkParams":
        return NetworkParams({k: v.astype(dtype) for k, v in self.weights.items()},
                             {k: v.astype(dtype) for k, v in self.state.items()})

    def tensors(self) -> dict[str, np.ndarray]:
        return {**self.weights, **self.state}

    @property
    def dtype(self):
        return next(iter(self.weights.values())).dtype


def _layer_names(config: NetworkConfig):
    for b in range(config.conv_blocks):
        for c in (1, 2):
            yield f"block{b + 1}_conv{c}"


def init_params(config: NetworkConfig, rng: np.random.Generator, dtype=np.float32) -> NetworkParams:
    """He-uniform kernels, zero biases, unit/zero batch-norm scale/shift.

    Layers followed by batch-norm carry no bias: the batch-norm shift already
    plays that role and a bias there would have an identically zero gradient.
    """
    w, s = {}, {}
    in_ch = 1
    for b, f in enumerate(config.filters()):
        for c in (1, 2):
            name = f"block{b + 1}_conv{c}"
            fan_in = in_ch * 9
            lim = np.sqrt(6.0 / fan_in)
            w[f"{name}/kernel"] = rng.uniform(-lim, lim, (f, in_ch, 3, 3))
            if config.conv_batchnorm:
                w[f"{name}/bn_gamma"] = np.ones(f)
                w[f"{name}/bn_beta"] = np.zeros(f)
                s[f"{name}/bn_mean"] = np.zeros(f)
                s[f"{name}/bn_var"] = np.ones(f)
            else:
                w[f"{name}/bias"] = np.zeros(f)
            in_ch = f
    d_in = config.feature_dim + (N_AUX if config.use_aux else 0)
    lim = np.sqrt(6.0 / d_in)
    w["dense1/kernel"] = rng.uniform(-lim, lim, (d_in, config.dense_units))
    if config.dense_batchnorm:
        w["dense1/bn_gamma"] = np.ones(config.dense_units)
        w["dense1/bn_beta"] = np.zeros(config.dense_units)
        s["dense1/bn_mean"] = np.zeros(config.dense_units)
        s["dense1/bn_var"] = np.ones(config.dense_units)
    else:
        w["dense1/bias"] = np.zeros(config.dense_units)
    lim = np.sqrt(3.0 / config.dense_units)
    w["output/kernel"] = rng.uniform(-lim, lim, (config.dense_units, 1))
    w["output/bias"] = np.zeros(1)
    return NetworkParams({k: v.astype(dtype) for k, v in w.items()},
                         {k: v.astype(dtype) for k, v in s.items()})


def expected_shapes(config: NetworkConfig) -> dict[str, tuple]:
    p = init_params(config, np.random.default_rng(0), dtype=np.float32)
    return {k: v.shape for k, v in p.tensors().items()}


def zero_params(config: NetworkConfig, dtype=np.float64) -> NetworkParams:
    p = init_params(config, np.random.default_rng(0), dtype=dtype)
    for k, v in p.weights.items():
        v[...] = 0.0
    return p


def prepare_images(images) -> np.ndarray:
    """Stack images into an ``(N, 1, H, W)`` ink tensor (``1 - intensity``)."""
    arrs = [im.pixels if hasattr(im, "pixels") else np.asarray(im) for im in images]
    x = 1.0 - np.stack(arrs).astype(float)
    return x[:, None, :, :]


def prepare_aux(aux) -> np.ndarray:
    return np.stack([a.network_input() if hasattr(a, "network_input") else np.asarray(a, dtype=float)
                     for a in aux])


@dataclass
class _Tape:
    ops: list = field(default_factory=list)
    features: np.ndarray | None = None


def _check(name, arr):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteActivation(f"non-finite activation after {name}")


def forward(
    params: NetworkParams,
    config: NetworkConfig,
    x: np.ndarray,
    aux: np.ndarray | None = None,
    training: bool = False,
    rng: np.random.Generator | None = None,
    update_stats: bool = True,
    tape: _Tape | None = None,
) -> np.ndarray:
    """Raw network output of shape ``(N,)`` (no clamping).

    ``x`` is the ``(N, 1, H, W)`` ink tensor from :func:`prepare_images` and
    ``aux`` the ``(N, 5)`` matrix from :func:`prepare_aux`.  Dropout is only
    applied when ``training`` is true and ``rng`` is given; batch-norm uses
    batch statistics in training mode and running statistics otherwise.
    """
    W, S = params.weights, params.state
    dt = params.dtype
    x = np.asarray(x, dtype=dt)
    if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != config.input_side or x.shape[3] != config.input_side:
        raise ShapeMismatch(f"expected (N, 1, {config.input_side}, {config.input_side}), got {x.shape}")
    if config.use_aux:
        if aux is None:
            raise ShapeMismatch("this configuration requires auxiliary inputs")
        aux = np.asarray(aux, dtype=dt)
        if aux.shape != (x.shape[0], N_AUX):
            raise ShapeMismatch(f"aux must have shape ({x.shape[0]}, {N_AUX}), got {aux.shape}")
    elif aux is not None:
        raise ShapeMismatch("auxiliary inputs given but use_aux is false")
    drop_rng = rng if training else None
    ops = tape.ops if tape is not None else None

    h = x
    for b in range(config.conv_blocks):
        for c in (1, 2):
            name = f"block{b + 1}_conv{c}"
            h, cache = L.conv3x3_forward(h, W[f"{name}/kernel"], W.get(f"{name}/bias"))
            if ops is not None:
                ops.append(("conv", name, cache))
            if config.conv_batchnorm:
                rm, rv = S[f"{name}/bn_mean"], S[f"{name}/bn_var"]
                if training and not update_stats:
                    rm, rv = rm.copy(), rv.copy()
                h, cache = L.batchnorm_forward(h, W[f"{name}/bn_gamma"], W[f"{name}/bn_beta"], rm, rv, training)
                if ops is not None:
                    ops.append(("bn", name, cache))
            h, mask = L.relu_forward(h)
            if ops is not None:
                ops.append(("relu", name, mask))
            _check(name, h)
        h, cache = L.maxpool2_forward(h)
        if ops is not None:
            ops.append(("pool", f"block{b + 1}", cache))
        h, mask = L.dropout_forward(h, config.conv_dropout, drop_rng)
        if ops is not None:
            ops.append(("dropout", f"block{b + 1}", mask))

    if config.global_pool == "max":
        h, cache = L.global_max_forward(h)
        if ops is not None:
            ops.append(("gmax", "global", cache))
    else:
        h, cache = L.global_avg_forward(h)
        if ops is not None:
            ops.append(("gavg", "global", cache))
    if tape is not None:
        tape.features = h
    if config.use_aux:
        h = np.concatenate([h, aux], axis=1)
        if ops is not None:
            ops.append(("concat", "concat", config.feature_dim))

    h, cache = L.dense_forward(h, W["dense1/kernel"], W.get("dense1/bias"))
    if ops is not None:
        ops.append(("dense", "dense1", cache))
    if config.dense_batchnorm:
        rm, rv = S["dense1/bn_mean"], S["dense1/bn_var"]
        if training and not update_stats:
            rm, rv = rm.copy(), rv.copy()
        h, cache = L.batchnorm_forward(h, W["dense1/bn_gamma"], W["dense1/bn_beta"], rm, rv, training)
        if ops is not None:
            ops.append(("bn", "dense1", cache))
    h, mask = L.relu_forward(h)
    if ops is not None:
        ops.append(("relu", "dense1", mask))
    h, mask = L.dropout_forward(h, config.dense_dropout, drop_rng)
    if ops is not None:
        ops.append(("dropout", "dense1", mask))
    h, cache = L.dense_forward(h, W["output/kernel"], W["output/bias"])
    if ops is not None:
        ops.append(("dense", "output", cache))
    _check("output", h)
    return h[:, 0]


def backward(tape: _Tape, dout: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Reverse pass over a recorded tape; returns (parameter grads, input grad)."""
    grads: dict[str, np.ndarray] = {}
    g = dout[:, None]
    for kind, name, cache in reversed(tape.ops):
        if kind == "dense":
            g, dw, db = L.dense_backward(g, cache)
            grads[f"{name}/kernel"] = dw
            if cache[2]:
                grads[f"{name}/bias"] = db
        elif kind == "dropout":
            g = L.dropout_backward(g, cache)
        elif kind == "relu":
            g = L.relu_backward(g, cache)
        elif kind == "bn":
            g, dg, dbeta = L.batchnorm_backward(g, cache)
            grads[f"{name}/bn_gamma"], grads[f"{name}/bn_beta"] = dg, dbeta
        elif kind == "concat":
            g = g[:, :cache]
        elif kind == "gmax":
            g = L.global_max_backward(g, cache)
        elif kind == "gavg":
            g = L.global_avg_backward(g, cache)
        elif kind == "pool":
            g = L.maxpool2_backward(g, cache)
        elif kind == "conv":
            g, dw, db = L.conv3x3_backward(g, cache)
            grads[f"{name}/kernel"] = dw
            if cache[3]:
                grads[f"{name}/bias"] = db
        else:  # pragma: no cover
            raise RuntimeError(f"unknown op {kind}")
    return grads, g


def loss_and_gradients(
    params: NetworkParams,
    config: NetworkConfig,
    x: np.ndarray,
    aux: np.ndarray | None,
    targets: np.ndarray,
    training: bool = True,
    rng: np.random.Generator | None = None,
    update_stats: bool = False,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean squared error over the batch and its exact gradient."""
    targets = np.asarray(targets, dtype=params.dtype)
    if targets.shape[0] == 0:
        raise ValueError("empty batch")
    tape = _Tape()
    pred = forward(params, config, x, aux, training=training, rng=rng, update_stats=update_stats, tape=tape)
    diff = pred - targets
    loss = float(np.mean(diff * diff))
    grads, _ = backward(tape, 2.0 * diff / diff.size)
    for k, v in grads.items():
        if not np.all(np.isfinite(v)):
            raise NonFiniteGradient(f"non-finite gradient for {k}")
    return loss, grads


def predict(params: NetworkParams, config: NetworkConfig, x: np.ndarray, aux: np.ndarray | None,
            batch_size: int = 256) -> np.ndarray:
    """Clamped inference-mode predictions ``max(0, f(x))`` for a whole array."""
    out = []
    for i in range(0, x.shape[0], batch_size):
        a = None if aux is None else aux[i : i + batch_size]
        out.append(forward(params, config, x[i : i + batch_size], a, training=False))
    return np.maximum(np.concatenate(out), 0.0).astype(float) if out else np.zeros(0)


def predict_distance(params: NetworkParams, config: NetworkConfig, image, aux=None) -> float:
    x = prepare_images([image])
    a = prepare_aux([aux]) if config.use_aux else None
    return float(predict(params, config, x, a)[0])


def attention_map(params: NetworkParams, config: NetworkConfig, image, aux=None) -> np.ndarray:
    """``|d output / d pixel|`` scaled to [0, 1] by its maximum."""
    x = prepare_images([image])
    a = prepare_aux([aux]) if config.use_aux else None
    tape = _Tape()
    forward(params, config, x, a, training=False, tape=tape)
    _, gx = backward(tape, np.ones(1, dtype=params.dtype))
    g = np.abs(gx[0, 0]).astype(float)
    top = g.max()
    return g / top if top > 0 else np.zeros_like(g)


def input_gradient(params: NetworkParams, config: NetworkConfig, image, aux=None) -> np.ndarray:
    """Signed gradient of the raw output with respect to grey intensities."""
    x = prepare_images([image])
    a = prepare_aux([aux]) if config.use_aux else None
    tape = _Tape()
    forward(params, config, x, a, training=False, tape=tape)
    _, gx = backward(tape, np.ones(1, dtype=params.dtype))
    return -gx[0, 0].astype(float)  # ink = 1 - intensity


def extract_features(params: NetworkParams, config: NetworkConfig, images, aux=None) -> np.ndarray:
    """Global pooling output (before concatenation), one row per image."""
    x = prepare_images(images if isinstance(images, (list, tuple)) else [images])
    a = None
    if config.use_aux:
        aux_list = aux if isinstance(aux, (list, tuple)) else [aux]
        a = prepare_aux(aux_list)
    tape = _Tape()
    forward(params, config, x, a, training=False, tape=tape)
    return tape.features.astype(float)
