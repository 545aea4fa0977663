"""A minimal CNN with hand-written reverse-mode gradients.

Layer vocabulary: conv2d, maxpool2d, relu, flatten, dense, dropout, softmax.
Convolution and pooling use valid (no) padding; conv is implemented as an
im2col gather followed by one GEMM per layer, which keeps desk-scale training
fast on a single core. Everything is float64.

Parameters live in a flat dict keyed by (layer_position, "w"|"b") so the
optimizer, the regularizer and the checkpoint format all share one addressing
scheme.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from .exceptions import DimensionMismatch, InvalidConfig, InvalidLabel

PARAM_KINDS = ("conv2d", "dense")
LAYER_KINDS = ("conv2d", "maxpool2d", "relu", "flatten", "dense", "dropout", "softmax")

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    """One layer of the architecture table.

    window/stride apply to conv2d and maxpool2d, features to conv2d (output
    channels) and dense (units), dropout_rate to dropout, and lam is the
    per-layer regularizer weight for conv2d/dense.
    """

    kind: str
    window: tuple[int, int] | None = None
    stride: int = 1
    features: int = 0
    dropout_rate: float = 0.0
    lam: float = 0.0

    def validate(self) -> None:
        if self.kind not in LAYER_KINDS:
            raise InvalidConfig(f"unknown layer kind {self.kind!r}")
        if self.kind in ("conv2d", "maxpool2d"):
            if self.window is None or min(self.window) < 1:
                raise InvalidConfig(f"{self.kind} needs a positive window, got {self.window}")
            if self.stride < 1:
                raise InvalidConfig(f"{self.kind} needs a positive stride")
        if self.kind in ("conv2d", "dense") and self.features < 1:
            raise InvalidConfig(f"{self.kind} needs features >= 1")
        if self.kind == "dropout" and not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidConfig(f"dropout rate must lie in [0, 1), got {self.dropout_rate}")
        if self.lam < 0.0:
            raise InvalidConfig("regularizer weight lam must be >= 0")

    def to_json(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window) if self.window is not None else None
        return d

    @staticmethod
    def from_json(d: dict) -> "LayerSpec":
        w = d.get("window")
        return LayerSpec(
            kind=d["kind"],
            window=tuple(w) if w is not None else None,
            stride=int(d.get("stride", 1)),
            features=int(d.get("features", 0)),
            dropout_rate=float(d.get("dropout_rate", 0.0)),
            lam=float(d.get("lam", 0.0)),
        )


def infer_shapes(input_shape: tuple[int, int, int], layers: list[LayerSpec]) -> list:
    """Per-layer output shapes under valid padding; raises InvalidConfig on underflow."""
    shapes = []
    shape: tuple = tuple(input_shape)
    for pos, spec in enumerate(layers):
        spec.validate()
        if spec.kind == "softmax" and pos != len(layers) - 1:
            raise InvalidConfig("softmax must be the final layer")
        if spec.kind in ("conv2d", "maxpool2d"):
            if len(shape) != 3:
                raise InvalidConfig(f"layer {pos} ({spec.kind}) needs a C,H,W input")
            c, h, w = shape
            kh, kw = spec.window
            if h < kh or w < kw:
                raise InvalidConfig(
                    f"layer {pos} ({spec.kind}): window {spec.window} exceeds input {h}x{w}")
            oh = (h - kh) // spec.stride + 1
            ow = (w - kw) // spec.stride + 1
            shape = (spec.features if spec.kind == "conv2d" else c, oh, ow)
        elif spec.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif spec.kind == "dense":
            if len(shape) != 1:
                raise InvalidConfig(f"layer {pos} (dense) needs a flat input, got {shape}")
            shape = (spec.features,)
        elif spec.kind == "softmax":
            if len(shape) != 1:
                raise InvalidConfig("softmax needs a flat input")
        # relu/dropout keep their input shape
        shapes.append(shape)
    return shapes


class Network:
    """Layer specs plus their parameter tensors.

    Conv kernels are stored [out_ch, in_ch, kh, kw]; dense weights [in, out].
    Initialization is uniform with He-style fan-in bounds, biases start at 0.
    """

    def __init__(self, input_shape, layers, rng_seed=0, init=True):
        self.input_shape = tuple(int(v) for v in input_shape)
        self.layers = list(layers)
        self.rng_seed = int(rng_seed)
        self.shapes = infer_shapes(self.input_shape, self.layers)
        self.params: dict = {}
        rng = np.random.default_rng(self.rng_seed)
        in_shape: tuple = self.input_shape
        for pos, spec in enumerate(self.layers):
            if spec.kind == "conv2d":
                c = in_shape[0]
                kh, kw = spec.window
                fan_in = c * kh * kw
                bound = np.sqrt(6.0 / fan_in)
                w = rng.uniform(-bound, bound, size=(spec.features, c, kh, kw)) if init \
                    else np.zeros((spec.features, c, kh, kw))
                self.params[(pos, "w")] = w
                self.params[(pos, "b")] = np.zeros(spec.features)
            elif spec.kind == "dense":
                fan_in = in_shape[0]
                bound = np.sqrt(6.0 / fan_in)
                w = rng.uniform(-bound, bound, size=(fan_in, spec.features)) if init \
                    else np.zeros((fan_in, spec.features))
                self.params[(pos, "w")] = w
                self.params[(pos, "b")] = np.zeros(spec.features)
            in_shape = self.shapes[pos]

    @property
    def output_dim(self) -> int:
        return int(self.shapes[-1][0])

    def conv_positions(self) -> list[int]:
        return [i for i, s in enumerate(self.layers) if s.kind == "conv2d"]

    def dense_positions(self) -> list[int]:
        return [i for i, s in enumerate(self.layers) if s.kind == "dense"]

    def copy_params(self) -> dict:
        return {k: v.copy() for k, v in self.params.items()}

    def set_params(self, params: dict) -> None:
        for k, v in params.items():
            if k not in self.params or self.params[k].shape != v.shape:
                raise DimensionMismatch(f"parameter {k} does not fit this network")
            self.params[k] = np.array(v, dtype=np.float64)


# ---------------------------------------------------------------------------
# im2col plans, cached per geometry. Window elements are gathered into rows of
# length C*kh*kw so that each conv layer runs as a single GEMM per direction.

_PLAN_CACHE: dict = {}


def _conv_plan(c, h, w, kh, kw, stride):
    key = ("conv", c, h, w, kh, kw, stride)
    hit = _PLAN_CACHE.get(key)
    if hit is not None:
        return hit
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    cc = np.repeat(np.arange(c), kh * kw)
    ki = np.tile(np.repeat(np.arange(kh), kw), c)
    kj = np.tile(np.tile(np.arange(kw), kh), c)
    base = cc * (h * w) + ki * w + kj
    off = (stride * np.repeat(np.arange(oh), ow)) * w + stride * np.tile(np.arange(ow), oh)
    idx = off[:, None] + base[None, :]  # (P, CKK): window position x window element
    plan = {"idx": idx, "flat": np.ascontiguousarray(idx.ravel()),
            "oh": oh, "ow": ow, "scatter": {}}
    _PLAN_CACHE[key] = plan
    return plan


def _scatter_index(plan, n, plane):
    # flat target indices for col2im, cached per batch size
    hit = plan["scatter"].get(n)
    if hit is None:
        idx = plan["idx"]
        hit = ((np.arange(n) * plane)[:, None, None] + idx[None, :, :]).ravel()
        plan["scatter"][n] = hit
    return hit


def _pool_plan(h, w, kh, kw, stride):
    key = ("pool", h, w, kh, kw, stride)
    hit = _PLAN_CACHE.get(key)
    if hit is not None:
        return hit
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    ki = np.repeat(np.arange(kh), kw)
    kj = np.tile(np.arange(kw), kh)
    base = ki * w + kj
    off = (stride * np.repeat(np.arange(oh), ow)) * w + stride * np.tile(np.arange(ow), oh)
    idx = base[:, None] + off[None, :]  # (kh*kw, oh*ow)
    plan = (idx, oh, ow)
    _PLAN_CACHE[key] = plan
    return plan


# ---------------------------------------------------------------------------
# layer forward/backward


def _conv_forward(x, w, b, stride):
    n, c, h, win = x.shape
    f, cw, kh, kw = w.shape
    if cw != c:
        raise DimensionMismatch(f"conv kernel expects {cw} input channels, got {c}")
    plan = _conv_plan(c, h, win, kh, kw, stride)
    oh, ow = plan["oh"], plan["ow"]
    p = oh * ow
    # np.take keeps the gather sample-local, which matters on a cold cache
    cols = np.take(x.reshape(n, -1), plan["flat"], axis=1).reshape(n * p, c * kh * kw)
    w2 = w.reshape(f, c * kh * kw)
    out = cols @ w2.T + b                               # (N*P, F)
    out = np.ascontiguousarray(out.reshape(n, p, f).transpose(0, 2, 1))
    cache = (x.shape, cols, w2, plan)
    return out.reshape(n, f, oh, ow), cache


def _conv_backward(dout, cache, need_dx):
    (n, c, h, w), cols, w2, plan = cache
    f = dout.shape[1]
    g = dout.reshape(n, f, -1).transpose(0, 2, 1).reshape(-1, f)   # (N*P, F)
    dw2 = g.T @ cols                                    # (F, CKK)
    db = g.sum(axis=0)
    dx = None
    if need_dx:
        dcols = g @ w2                                  # (N*P, CKK)
        plane = c * h * w
        flat = np.bincount(_scatter_index(plan, n, plane), weights=dcols.ravel(),
                           minlength=n * plane)
        dx = flat.reshape(n, c, h, w)
    return dx, dw2, db


def _pool_forward(x, window, stride):
    n, c, h, w = x.shape
    kh, kw = window
    idx, oh, ow = _pool_plan(h, w, kh, kw, stride)
    planes = x.reshape(n * c, h * w)
    wins = np.take(planes, idx.ravel(), axis=1).reshape(n * c, *idx.shape)  # (N*C, KK, P)
    arg = np.argmax(wins, axis=1)                     # first max wins ties (row-major)
    out = np.take_along_axis(wins, arg[:, None, :], axis=1)[:, 0, :]
    cache = (x.shape, idx, arg)
    return out.reshape(n, c, oh, ow), cache


def _pool_backward(dout, cache):
    (n, c, h, w), idx, arg = cache
    g = dout.reshape(n * c, -1)
    pos = idx[arg, np.arange(idx.shape[1])[None, :]]  # (N*C, P) flat plane positions
    dplanes = np.zeros((n * c, h * w))
    np.add.at(dplanes, (np.arange(n * c)[:, None], pos), g)
    return dplanes.reshape(n, c, h, w)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a [N, classes] array."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _run(net: Network, x: np.ndarray, train_mode: bool, rng, want_cache: bool):
    if x.ndim != 4 or tuple(x.shape[1:]) != net.input_shape:
        raise DimensionMismatch(
            f"batch shape {x.shape} does not match network input {net.input_shape}")
    caches = [] if want_cache else None
    out = x
    for pos, spec in enumerate(net.layers):
        cache = None
        if spec.kind == "conv2d":
            out, cache = _conv_forward(out, net.params[(pos, "w")], net.params[(pos, "b")],
                                       spec.stride)
        elif spec.kind == "maxpool2d":
            out, cache = _pool_forward(out, spec.window, spec.stride)
        elif spec.kind == "relu":
            mask = out > 0
            out = out * mask
            cache = mask
        elif spec.kind == "flatten":
            cache = out.shape
            out = out.reshape(out.shape[0], -1)
        elif spec.kind == "dense":
            w = net.params[(pos, "w")]
            if out.shape[1] != w.shape[0]:
                raise DimensionMismatch(
                    f"dense layer {pos} expects {w.shape[0]} inputs, got {out.shape[1]}")
            cache = out
            out = out @ w + net.params[(pos, "b")]
        elif spec.kind == "dropout":
            if train_mode and spec.dropout_rate > 0.0:
                keep = 1.0 - spec.dropout_rate
                mask = (rng.random(out.shape) >= spec.dropout_rate) / keep
                out = out * mask
                cache = mask
        elif spec.kind == "softmax":
            pass  # the head stays in logit space; see softmax()/predict_proba()
        if want_cache:
            caches.append(cache)
    return out, caches


def forward(net: Network, batch: np.ndarray, train_mode: bool = False, rng=None) -> np.ndarray:
    """Logits for a [N, C, H, W] batch.

    Dropout is active only in train_mode; when no generator is supplied the
    network's own rng_seed is used, so the call is a pure function of
    (params, batch, rng_seed, train_mode).
    """
    if train_mode and rng is None:
        rng = np.random.default_rng(net.rng_seed)
    logits, _ = _run(net, np.asarray(batch, dtype=np.float64), train_mode, rng, False)
    return logits


def predict_proba(net: Network, batch: np.ndarray) -> np.ndarray:
    return softmax(forward(net, batch, train_mode=False))


def _backward(net: Network, caches, dlogits):
    grads = {}
    d = dlogits
    for pos in range(len(net.layers) - 1, -1, -1):
        spec = net.layers[pos]
        cache = caches[pos]
        if spec.kind == "conv2d":
            d, dw2, db = _conv_backward(d, cache, need_dx=pos > 0)
            grads[(pos, "w")] = dw2.reshape(net.params[(pos, "w")].shape)
            grads[(pos, "b")] = db
        elif spec.kind == "maxpool2d":
            d = _pool_backward(d, cache)
        elif spec.kind == "relu":
            d = d * cache
        elif spec.kind == "flatten":
            d = d.reshape(cache)
        elif spec.kind == "dense":
            x = cache
            grads[(pos, "w")] = x.T @ d
            grads[(pos, "b")] = d.sum(axis=0)
            d = d @ net.params[(pos, "w")].T
        elif spec.kind == "dropout":
            if cache is not None:
                d = d * cache
        elif spec.kind == "softmax":
            pass
    return grads


def loss_and_gradients(net: Network, batch, labels, class_weights=None, regularizer=None,
                       train_mode: bool = True, rng=None):
    """Weighted mean cross-entropy plus regularizer penalties, with gradients.

    Returns (loss, grads) where grads maps each (layer_position, "w"/"b") key
    to an array shaped like the parameter. The penalty gradient is added to
    the data gradient exactly once per parameter, in that order, so
    grads == data_grads + penalty_grads holds bitwise.
    """
    x = np.asarray(batch, dtype=np.float64)
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != x.shape[0]:
        raise DimensionMismatch(f"labels shape {y.shape} does not match batch {x.shape}")
    classes = net.output_dim
    if y.size and (y.min() < 0 or y.max() >= classes):
        raise InvalidLabel(f"labels must lie in [0, {classes})")
    if train_mode and rng is None:
        rng = np.random.default_rng(net.rng_seed)

    logits, caches = _run(net, x, train_mode, rng, True)
    logp = log_softmax(logits)
    n = x.shape[0]
    ce = -logp[np.arange(n), y]
    if class_weights is not None:
        cw = np.asarray(class_weights, dtype=np.float64)
        if cw.shape != (classes,):
            raise DimensionMismatch(f"class_weights must have length {classes}")
        w = cw[y]
    else:
        w = np.ones(n)
    wsum = w.sum()
    loss_data = float((w * ce).sum() / wsum)

    p = np.exp(logp)
    dlogits = p.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits *= (w / wsum)[:, None]
    grads = _backward(net, caches, dlogits)

    loss = loss_data
    if regularizer is not None:
        pen_value, pen_grads = regularizer.penalty(net)
        loss = loss_data + pen_value
        for key, g in pen_grads.items():
            grads[key] = grads[key] + g
    return loss, grads


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    step: int
    m: dict
    v: dict
    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: dict, alpha=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    zeros = lambda: {k: np.zeros_like(v) for k, v in params.items()}
    return AdamState(step=0, m=zeros(), v=zeros(), alpha=alpha, beta1=beta1, beta2=beta2,
                     eps=eps)


def adam_step(state: AdamState, params: dict, grads: dict):
    """One Adam update with bias correction; mutates params/state and returns them."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise DimensionMismatch(f"gradient for {key} has shape {g.shape}, want {p.shape}")
        m = state.m[key]
        v = state.v[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.alpha * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# kernel harvesting


@dataclass(frozen=True)
class KernelDump:
    """Conv kernels of one layer: ordinal index (1-based among conv layers),
    input-channel count, window size and the [out, in, kh, kw] values."""

    layer_index: int
    in_channels: int
    window: tuple[int, int]
    values: np.ndarray = field(repr=False)


def extract_kernels(net: Network) -> list[KernelDump]:
    """Conv kernels only (no biases, no dense weights), in layer order."""
    dumps = []
    for ordinal, pos in enumerate(net.conv_positions(), start=1):
        w = net.params[(pos, "w")]
        dumps.append(KernelDump(
            layer_index=ordinal,
            in_channels=w.shape[1],
            window=(w.shape[2], w.shape[3]),
            values=w.copy(),
        ))
    return dumps


# ---------------------------------------------------------------------------
# checkpoint I/O: length-prefixed JSON header + raw little-endian float64 blocks


def save_checkpoint(path, net: Network, epoch=None, metrics=None) -> None:
    keys = list(net.params.keys())
    header = {
        "format_version": CHECKPOINT_VERSION,
        "input_shape": list(net.input_shape),
        "layers": [s.to_json() for s in net.layers],
        "rng_seed": net.rng_seed,
        "epoch": epoch,
        "metrics": metrics,
        "params": [{"key": [k[0], k[1]], "shape": list(net.params[k].shape)} for k in keys],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for k in keys:
            fh.write(np.ascontiguousarray(net.params[k], dtype="<f8").tobytes())


def load_checkpoint(path):
    """Rebuild a Network (and its header dict) from a .ckpt file."""
    with open(path, "rb") as fh:
        raw = fh.read(8)
        if len(raw) != 8:
            raise InvalidConfig(f"checkpoint {path} is truncated")
        (hlen,) = struct.unpack("<Q", raw)
        blob = fh.read(hlen)
        if len(blob) != hlen:
            raise InvalidConfig(f"checkpoint {path} has a truncated header")
        try:
            header = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise InvalidConfig(f"checkpoint {path} has a corrupt header: {exc}") from exc
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise InvalidConfig(f"checkpoint {path}: unsupported format version")
        layers = [LayerSpec.from_json(d) for d in header["layers"]]
        net = Network(header["input_shape"], layers, rng_seed=header["rng_seed"], init=False)
        for entry in header["params"]:
            key = (int(entry["key"][0]), str(entry["key"][1]))
            shape = tuple(entry["shape"])
            count = int(np.prod(shape))
            data = fh.read(count * 8)
            if len(data) != count * 8:
                raise InvalidConfig(f"checkpoint {path}: parameter block for {key} truncated")
            if key not in net.params or net.params[key].shape != shape:
                raise InvalidConfig(f"checkpoint {path}: parameter {key} does not match specs")
            net.params[key] = np.frombuffer(data, dtype="<f8").reshape(shape).copy()
    return net, header
