"""From-scratch tensor ops, the four-conv classifier, and Adam training.

The network maps a 6x7x12 feature tensor through four VALID-padded
convolutions with ReLU (kernel sizes 2x2, 2x2, 2x2, 3x4; 32 planes each)
into a 1x1x32 code and a two-way dense layer.  All arithmetic is 64-bit
numpy; training is deterministic given the seed.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import _binio
from .dsp import DEFAULT_BANDS

__all__ = [
    "ARCH",
    "SHAPE_CHAIN",
    "ConvLayer",
    "DenseLayer",
    "CnnModel",
    "AdamState",
    "TrainConfig",
    "conv2d_valid_forward",
    "conv2d_valid_backward",
    "relu",
    "relu_backward",
    "dense_forward",
    "dense_backward",
    "softmax_cross_entropy",
    "adam_step",
    "train",
    "predict",
    "save_model",
    "load_model",
]

CLASSES = ("left", "right")

# (kh, kw, in_planes, out_planes) per conv layer.
ARCH = ((2, 2, 12, 32), (2, 2, 32, 32), (2, 2, 32, 32), (3, 4, 32, 32))

# Activation shapes from input tensor to logits.
SHAPE_CHAIN = ((6, 7, 12), (5, 6, 32), (4, 5, 32), (3, 4, 32), (1, 1, 32), (2,))

MODEL_MAGIC = b"MICN"
MODEL_VERSION = 1


@dataclass
class ConvLayer:
    weights: np.ndarray  # (kh, kw, in_planes, out_planes)
    bias: np.ndarray     # (out_planes,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 4:
            raise ValueError(f"conv weights must be 4-D, got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[3],):
            raise ValueError(
                f"conv bias shape {self.bias.shape} does not match "
                f"{self.weights.shape[3]} output planes")


@dataclass
class DenseLayer:
    weights: np.ndarray  # (in_features, out_features)
    bias: np.ndarray     # (out_features,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ValueError(
                f"bad dense shapes {self.weights.shape} / {self.bias.shape}")


def _as_batch(x: np.ndarray, ndim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == ndim:
        return x[None], True
    if x.ndim == ndim + 1:
        return x, False
    raise ValueError(f"expected a {ndim}-D array or a batch, got shape {x.shape}")


def conv2d_valid_forward(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """Cross-correlate with VALID padding, stride 1, plus per-plane bias.

    ``x`` is (h, w, planes) or a batch (n, h, w, planes); output spatial
    size shrinks by kernel size minus one per axis.
    """
    xb, single = _as_batch(x, 3)
    kh, kw, cin, cout = layer.weights.shape
    n, h, w, c = xb.shape
    if h < kh or w < kw or c != cin:
        raise ValueError(
            f"input {xb.shape[1:]} incompatible with kernel "
            f"{layer.weights.shape}")
    oh, ow = h - kh + 1, w - kw + 1
    out = np.zeros((n, oh, ow, cout))
    for di in range(kh):
        for dj in range(kw):
            out += np.tensordot(xb[:, di:di + oh, dj:dj + ow, :],
                                layer.weights[di, dj], axes=([3], [0]))
    out += layer.bias
    return out[0] if single else out


def conv2d_valid_backward(x: np.ndarray, layer: ConvLayer,
                          upstream: np.ndarray):
    """Exact gradients of :func:`conv2d_valid_forward`.

    Returns ``(grad_input, grad_weights, grad_bias)``; batch inputs sum the
    parameter gradients over the batch.
    """
    xb, single = _as_batch(x, 3)
    ub, usingle = _as_batch(upstream, 3)
    if single != usingle or ub.shape[0] != xb.shape[0]:
        raise ValueError("input and upstream gradient batch shapes disagree")
    kh, kw, cin, cout = layer.weights.shape
    n, h, w, _ = xb.shape
    oh, ow = h - kh + 1, w - kw + 1
    if ub.shape[1:] != (oh, ow, cout):
        raise ValueError(
            f"upstream gradient shape {ub.shape[1:]} does not match forward "
            f"output {(oh, ow, cout)}")
    grad_b = ub.sum(axis=(0, 1, 2))
    grad_w = np.zeros_like(layer.weights)
    grad_x = np.zeros_like(xb)
    for di in range(kh):
        for dj in range(kw):
            window = xb[:, di:di + oh, dj:dj + ow, :]
            grad_w[di, dj] = np.tensordot(window, ub, axes=([0, 1, 2], [0, 1, 2]))
            grad_x[:, di:di + oh, dj:dj + ow, :] += np.tensordot(
                ub, layer.weights[di, dj], axes=([3], [1]))
    return (grad_x[0] if single else grad_x), grad_w, grad_b


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Pass upstream gradient only where the forward input was positive."""
    return np.asarray(upstream, dtype=np.float64) * (np.asarray(x) > 0.0)


def dense_forward(x: np.ndarray, layer: DenseLayer) -> np.ndarray:
    xb, single = _as_batch(x, 1)
    if xb.shape[1] != layer.weights.shape[0]:
        raise ValueError(
            f"dense input length {xb.shape[1]} does not match weights "
            f"{layer.weights.shape}")
    out = xb @ layer.weights + layer.bias
    return out[0] if single else out


def dense_backward(x: np.ndarray, layer: DenseLayer, upstream: np.ndarray):
    xb, single = _as_batch(x, 1)
    ub, _ = _as_batch(upstream, 1)
    grad_x = ub @ layer.weights.T
    grad_w = xb.T @ ub
    grad_b = ub.sum(axis=0)
    return (grad_x[0] if single else grad_x), grad_w, grad_b


def softmax_cross_entropy(logits: np.ndarray, label: int):
    """Loss and logit gradient for one sample, stabilized by max-subtraction."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError(f"non-finite logits {logits}")
    shifted = logits - logits.max()
    logp = shifted - np.log(np.exp(shifted).sum())
    loss = -logp[label]
    grad = np.exp(logp)
    grad[label] -= 1.0
    return loss, grad


def _softmax_cross_entropy_batch(logits: np.ndarray, labels: np.ndarray):
    """Mean loss over a batch and the matching logit gradient."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


@dataclass
class AdamState:
    """First/second-moment accumulators for one flat parameter list."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps, t=0,
                   m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params])


def adam_step(state: AdamState, params, grads):
    """One Adam update with bias correction; mutates params and state."""
    if len(params) != len(state.m) or len(params) != len(grads):
        raise ValueError("parameter, gradient, and state lengths disagree")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


@dataclass
class CnnModel:
    """Parameters plus the metadata needed to reproduce the input encoding."""

    convs: list[ConvLayer]
    dense: DenseLayer
    band_order: tuple = DEFAULT_BANDS
    grid_hash: str = ""
    seed: int = 0
    config_digest: str = ""

    def __post_init__(self):
        if len(self.convs) != len(ARCH):
            raise ValueError(f"expected {len(ARCH)} conv layers, got {len(self.convs)}")
        for layer, spec in zip(self.convs, ARCH):
            if layer.weights.shape != spec:
                raise ValueError(
                    f"conv weights {layer.weights.shape} do not match "
                    f"architecture {spec}")
        if self.dense.weights.shape != (32, 2):
            raise ValueError(
                f"dense weights must be 32x2, got {self.dense.weights.shape}")

    @classmethod
    def initialize(cls, seed: int, band_order=DEFAULT_BANDS, grid_hash: str = "",
                   config_digest: str = "") -> "CnnModel":
        """Glorot-uniform weights, zero biases, all drawn from ``seed``."""
        rng = np.random.default_rng(seed)
        convs = []
        for kh, kw, cin, cout in ARCH:
            limit = np.sqrt(6.0 / (kh * kw * cin + kh * kw * cout))
            convs.append(ConvLayer(
                weights=rng.uniform(-limit, limit, size=(kh, kw, cin, cout)),
                bias=np.zeros(cout)))
        limit = np.sqrt(6.0 / (32 + 2))
        dense = DenseLayer(weights=rng.uniform(-limit, limit, size=(32, 2)),
                           bias=np.zeros(2))
        return cls(convs=convs, dense=dense, band_order=tuple(map(tuple, band_order)),
                   grid_hash=grid_hash, seed=seed, config_digest=config_digest)

    def parameters(self) -> list:
        params = []
        for layer in self.convs:
            params.extend([layer.weights, layer.bias])
        params.extend([self.dense.weights, self.dense.bias])
        return params

    def forward(self, x: np.ndarray, record: bool = False):
        """Logits for one tensor or a batch; checks the shape chain.

        With ``record=True`` also returns the per-layer forward state:
        for each conv layer its input and pre-activation, plus the dense
        input vector.
        """
        xb, single = _as_batch(x, 3)
        if xb.shape[1:] != SHAPE_CHAIN[0]:
            raise ValueError(
                f"input shape {xb.shape[1:]} does not match {SHAPE_CHAIN[0]}")
        cache = []
        h = xb
        for i, layer in enumerate(self.convs):
            z = conv2d_valid_forward(h, layer)
            if z.shape[1:] != SHAPE_CHAIN[i + 1]:
                raise ValueError(
                    f"layer {i + 1} produced {z.shape[1:]}, expected "
                    f"{SHAPE_CHAIN[i + 1]}")
            if record:
                cache.append((h, z))
            h = relu(z)
        code = h.reshape(h.shape[0], -1)
        logits = dense_forward(code, self.dense)
        if record:
            return (logits[0] if single else logits), cache, (code[0] if single else code)
        return logits[0] if single else logits


def predict(model: CnnModel, tensor) -> tuple[str, np.ndarray]:
    """Class decision for one feature tensor; ties go to the first class."""
    planes = tensor.planes if hasattr(tensor, "planes") else tensor
    logits = model.forward(planes)
    idx = 0 if logits[0] >= logits[1] else 1
    return CLASSES[idx], logits


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    iterations: int = 300
    batch_size: int | None = 64
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self):
        if self.lr <= 0 or self.iterations < 1:
            raise ValueError("learning rate must be positive and iterations >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch size must be positive (or None for full batch)")


def _loss_and_grads(model: CnnModel, xb: np.ndarray, yb: np.ndarray):
    logits, cache, code = model.forward(xb, record=True)
    loss, dlogits = _softmax_cross_entropy_batch(logits, yb)
    dcode, gwd, gbd = dense_backward(code, model.dense, dlogits)
    grads = [gwd, gbd]
    dh = dcode.reshape(xb.shape[0], *SHAPE_CHAIN[4])
    for layer, (h_in, z) in zip(reversed(model.convs), reversed(cache)):
        dz = relu_backward(z, dh)
        dh, gw, gb = conv2d_valid_backward(h_in, layer, dz)
        grads = [gw, gb] + grads
    return loss, grads


def train(model: CnnModel, tensors, config: TrainConfig):
    """Optimize a copy of ``model`` on the tensors; returns it with the loss trace.

    One iteration is one Adam step on one mini-batch (``batch_size=None``
    trains full-batch).  Shuffling and initialization are fully seeded, so
    identical inputs give bit-identical parameters.
    """
    config.validate()
    xs = np.stack([t.planes for t in tensors])
    ys = np.array([CLASSES.index(t.label) for t in tensors])
    if len(set(ys.tolist())) < 2:
        raise ValueError("training set must contain both classes")

    model = copy.deepcopy(model)
    params = model.parameters()
    state = AdamState.for_params(params, lr=config.lr, beta1=config.beta1,
                                 beta2=config.beta2, eps=config.eps)
    rng = np.random.default_rng(config.seed)
    n = len(tensors)
    batch = n if config.batch_size is None else min(config.batch_size, n)
    order = rng.permutation(n)
    cursor = 0
    losses = []
    for _ in range(config.iterations):
        if cursor + batch > n:
            order = rng.permutation(n)
            cursor = 0
        idx = order[cursor:cursor + batch]
        cursor += batch
        loss, grads = _loss_and_grads(model, xs[idx], ys[idx])
        adam_step(state, params, grads)
        losses.append(float(loss))
    return model, losses


def save_model(model: CnnModel, path) -> None:
    """Write the MICN container: header then f64 weights/bias per layer."""
    w = _binio.Writer()
    w.raw(MODEL_MAGIC)
    w.u32(MODEL_VERSION)
    w.u64(model.seed)
    w.u32(len(model.band_order))
    for lo, hi in model.band_order:
        w.f64(lo)
        w.f64(hi)
    w.string(model.grid_hash)
    w.string(model.config_digest)
    for layer in model.convs:
        w.array(layer.weights, "<f8")
        w.array(layer.bias, "<f8")
    w.array(model.dense.weights, "<f8")
    w.array(model.dense.bias, "<f8")
    with open(path, "wb") as f:
        f.write(w.getvalue())


def load_model(path) -> CnnModel:
    with open(path, "rb") as f:
        r = _binio.Reader(f.read(), name=str(path))
    if r.take(4, "magic") != MODEL_MAGIC:
        raise _binio.FormatError(f"{path}: not a model file (bad magic)")
    version = r.u32("version")
    if version != MODEL_VERSION:
        raise _binio.FormatError(
            f"{path}: unsupported model format version {version}")
    seed = r.u64("seed")
    n_bands = r.u32("band count")
    if n_bands > 64:
        raise _binio.FormatError(f"{path}: implausible band count {n_bands}")
    bands = tuple((r.f64("band low"), r.f64("band high")) for _ in range(n_bands))
    grid_hash = r.string("grid hash")
    digest = r.string("config digest")
    convs = []
    for kh, kw, cin, cout in ARCH:
        weights = r.array(kh * kw * cin * cout, "<f8", "conv weights",
                          shape=(kh, kw, cin, cout))
        bias = r.array(cout, "<f8", "conv bias")
        convs.append(ConvLayer(weights=weights, bias=bias))
    dense = DenseLayer(weights=r.array(64, "<f8", "dense weights", shape=(32, 2)),
                       bias=r.array(2, "<f8", "dense bias"))
    r.expect_end()
    return CnnModel(convs=convs, dense=dense, band_order=bands,
                    grid_hash=grid_hash, seed=seed, config_digest=digest)
