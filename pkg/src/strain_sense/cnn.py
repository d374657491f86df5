"""
DenseNet-style convolutional network for 10x5 spectrograms, in plain numpy.

Layout (growth rate ``g``, input 1x10x5)::

    dense block A   3 x [BN -> ReLU -> conv3x3 (same) -> concat]    1 + 3g ch, 10x5
                    (no ReLU in the first layer, which reads the raw input)
    transition      BN -> ReLU -> conv1x1 (halve channels) -> avgpool 2x2   5x2
    dense block B   3 x [BN -> ReLU -> conv3x3 (same) -> concat]    cT + 3g ch, 5x2
    head            BN -> ReLU -> adaptive avgpool 2x2 -> flatten -> FC -> softmax

Every op works on batches shaped ``(N, C, H, W)``; single feature maps
``(C, H, W)`` are accepted where noted and promoted to a batch of one.
Forward passes in training mode return a cache that ``backward`` consumes
to produce gradients of the mean cross-entropy loss.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, FormatError, ShapeError, StateError
from .signal import N_BINS, N_FRAMES, NormStats, Spectrogram

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
LAYERS_PER_BLOCK = 3
INPUT_SHAPE = (1, N_BINS, N_FRAMES)
# the first layer sees the raw nonnegative input; a ReLU after centering
# would zero every below-mean bin, so it runs BN -> conv only
STEM = "A1"


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ShapeError(f"expected (C, H, W) or (N, C, H, W), got shape {x.shape}")
    return x, False


# -- primitive layers ---------------------------------------------------------

def conv2d(x, w, b=None, padding="same"):
    """Stride-1 cross-correlation.

    ``w`` has shape ``(out_channels, in_channels, k, k)``.  ``padding`` is
    ``"same"`` (odd ``k`` only) or ``"valid"``.
    """
    out, _ = conv2d_forward(x, w, b, padding)
    return out


def conv2d_forward(x, w, b=None, padding="same"):
    x, single = _as_batch(x)
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"kernel must be (O, C, k, k), got {w.shape}")
    if w.shape[1] != x.shape[1]:
        raise ShapeError(f"kernel expects {w.shape[1]} input channels, input has {x.shape[1]}")
    k = w.shape[2]
    if padding == "same":
        if k % 2 != 1:
            raise ShapeError("same padding needs an odd kernel size")
        p = k // 2
    elif padding == "valid":
        p = 0
    else:
        raise ConfigurationError(f"unknown padding {padding!r}")
    if x.shape[2] + 2 * p < k or x.shape[3] + 2 * p < k:
        raise ShapeError("input smaller than kernel")
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    cols = sliding_window_view(xp, (k, k), axis=(2, 3))  # N, C, H', W', k, k
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + np.asarray(b, dtype=np.float64)[None, :, None, None]
    out = np.ascontiguousarray(out)
    cache = (xp, cols, w, p, x.shape)
    return (out[0] if single else out), cache


def conv2d_backward(dout, cache):
    xp, cols, w, p, xshape = cache
    dout = np.asarray(dout, dtype=np.float64)
    if dout.ndim == 3:
        dout = dout[None]
    k = w.shape[2]
    ho, wo = dout.shape[2], dout.shape[3]
    dw = np.tensordot(dout, cols, axes=([0, 2, 3], [0, 2, 3]))
    db = dout.sum(axis=(0, 2, 3))
    dxp = np.zeros(xp.shape)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + ho, j:j + wo] += np.tensordot(dout, w[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
    dx = dxp[:, :, p:p + xshape[2], p:p + xshape[3]] if p else dxp
    return dx, dw, db


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(dout, x):
    return dout * (x > 0)


def batchnorm_forward(x, gamma, beta, running_mean, running_var, mode="train",
                      eps=BN_EPS, momentum=BN_MOMENTUM):
    """Per-channel batch normalization.

    In ``"train"`` mode the batch statistics are used and the running
    buffers are updated in place; ``"infer"`` uses the running buffers and
    touches nothing.  Returns ``(out, cache)``; cache is None in infer mode.
    """
    x, _ = _as_batch(x)
    g = np.asarray(gamma)[None, :, None, None]
    bt = np.asarray(beta)[None, :, None, None]
    if mode == "train":
        if x.shape[0] < 2:
            raise ConfigurationError("batchnorm in train mode needs a batch of at least 2")
        mu = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        m = x.shape[0] * x.shape[2] * x.shape[3]
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * m / max(m - 1, 1)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x - mu[None, :, None, None]) * inv_std[None, :, None, None]
        return g * xhat + bt, (xhat, inv_std, np.asarray(gamma))
    if mode == "infer":
        inv_std = 1.0 / np.sqrt(np.asarray(running_var) + eps)
        xhat = (x - np.asarray(running_mean)[None, :, None, None]) * inv_std[None, :, None, None]
        return g * xhat + bt, None
    raise ConfigurationError(f"unknown batchnorm mode {mode!r}")


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma = cache
    m = dout.shape[0] * dout.shape[2] * dout.shape[3]
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    dxhat = dout * gamma[None, :, None, None]
    dx = (inv_std[None, :, None, None] / m) * (
        m * dxhat
        - dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
        - xhat * (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
    )
    return dx, dgamma, dbeta


def avg_pool_2x2(x):
    """Stride-2 2x2 mean pooling; an odd trailing row or column is dropped."""
    x, single = _as_batch(x)
    n, c, h, w = x.shape
    if h < 2 or w < 2:
        raise ShapeError(f"avg_pool_2x2 needs at least 2x2 input, got {h}x{w}")
    ho, wo = h // 2, w // 2
    out = x[:, :, :2 * ho, :2 * wo].reshape(n, c, ho, 2, wo, 2).mean(axis=(3, 5))
    return out[0] if single else out


def avg_pool_2x2_backward(dout, in_shape):
    n, c, h, w = in_shape
    ho, wo = dout.shape[2], dout.shape[3]
    dx = np.zeros(in_shape)
    dx[:, :, :2 * ho, :2 * wo] = np.repeat(np.repeat(dout, 2, axis=2), 2, axis=3) / 4.0
    return dx


def _adaptive_edges(size, out):
    # bin i covers [ceil(i*size/out), ceil((i+1)*size/out)), e.g. 5 -> {0,1,2},{3,4}
    return [-((-i * size) // out) for i in range(out + 1)]


def adaptive_avg_pool(x, out_h=2, out_w=2):
    x, single = _as_batch(x)
    n, c, h, w = x.shape
    if h < out_h or w < out_w:
        raise ShapeError(f"cannot pool {h}x{w} down to {out_h}x{out_w}")
    re, ce = _adaptive_edges(h, out_h), _adaptive_edges(w, out_w)
    out = np.empty((n, c, out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            out[:, :, i, j] = x[:, :, re[i]:re[i + 1], ce[j]:ce[j + 1]].mean(axis=(2, 3))
    return out[0] if single else out


def adaptive_avg_pool_backward(dout, in_shape):
    n, c, h, w = in_shape
    out_h, out_w = dout.shape[2], dout.shape[3]
    re, ce = _adaptive_edges(h, out_h), _adaptive_edges(w, out_w)
    dx = np.zeros(in_shape)
    for i in range(out_h):
        for j in range(out_w):
            area = (re[i + 1] - re[i]) * (ce[j + 1] - ce[j])
            dx[:, :, re[i]:re[i + 1], ce[j]:ce[j + 1]] += dout[:, :, i:i + 1, j:j + 1] / area
    return dx


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs, targets) -> float:
    """Mean negative log-likelihood of ``targets`` under ``probs``."""
    targets = np.asarray(targets, dtype=np.int64)
    p = probs[np.arange(len(targets)), targets]
    return float(-np.mean(np.log(np.maximum(p, 1e-300))))


# -- network ------------------------------------------------------------------

@dataclass
class Network:
    num_classes: int
    growth_rate: int
    params: dict
    buffers: dict
    label_map: Optional[list] = None
    norm_stats: Optional[NormStats] = None
    trained: bool = field(default=False, compare=False)

    @property
    def block_a_channels(self) -> int:
        return INPUT_SHAPE[0] + LAYERS_PER_BLOCK * self.growth_rate

    @property
    def transition_channels(self) -> int:
        return max(1, self.block_a_channels // 2)

    @property
    def block_b_channels(self) -> int:
        return self.transition_channels + LAYERS_PER_BLOCK * self.growth_rate

    @property
    def feature_dim(self) -> int:
        return self.block_b_channels * 4

    def conv_layers(self) -> list:
        return [k[:-len(".conv.w")] for k in self.params if k.endswith(".conv.w") and k != "T.conv.w"]

    def transition_layers(self) -> list:
        return [k[:-len(".conv.w")] for k in self.params if k == "T.conv.w"]

    def param_count(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def copy(self) -> "Network":
        return Network(
            self.num_classes,
            self.growth_rate,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
            None if self.label_map is None else list(self.label_map),
            self.norm_stats,
            self.trained,
        )

    def flat_params(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.params.values()])

    def set_flat_params(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.param_count():
            raise ShapeError(f"expected {self.param_count()} values, got {flat.size}")
        i = 0
        for k, v in self.params.items():
            self.params[k] = flat[i:i + v.size].reshape(v.shape).copy()
            i += v.size


def _layer_specs(growth_rate, num_classes):
    """Ordered (name, shape, fan_in) for every trainable tensor."""
    g = growth_rate
    specs = []

    def bn(prefix, c):
        specs.append((f"{prefix}.bn.gamma", (c,), None))
        specs.append((f"{prefix}.bn.beta", (c,), None))

    def conv(prefix, cin, cout, k):
        specs.append((f"{prefix}.conv.w", (cout, cin, k, k), cin * k * k))
        specs.append((f"{prefix}.conv.b", (cout,), None))

    c = INPUT_SHAPE[0]
    for l in range(1, LAYERS_PER_BLOCK + 1):
        bn(f"A{l}", c)
        conv(f"A{l}", c, g, 3)
        c += g
    ct = max(1, c // 2)
    bn("T", c)
    conv("T", c, ct, 1)
    c = ct
    for l in range(1, LAYERS_PER_BLOCK + 1):
        bn(f"B{l}", c)
        conv(f"B{l}", c, g, 3)
        c += g
    bn("H", c)
    specs.append(("fc.w", (c * 4, num_classes), c * 4))
    specs.append(("fc.b", (num_classes,), None))
    return specs


def init_network(num_classes: int, growth_rate: int = 8, seed: int = 0) -> Network:
    """Fresh network with He fan-in initialisation from ``seed``."""
    if int(num_classes) < 2:
        raise ConfigurationError(f"num_classes must be at least 2, got {num_classes}")
    if int(growth_rate) < 1:
        raise ConfigurationError(f"growth_rate must be positive, got {growth_rate}")
    rng = np.random.default_rng(seed)
    params, buffers = {}, {}
    for name, shape, fan_in in _layer_specs(int(growth_rate), int(num_classes)):
        if name.endswith(".gamma"):
            params[name] = np.ones(shape)
            prefix = name[:-len(".gamma")]
            buffers[prefix + ".running_mean"] = np.zeros(shape)
            buffers[prefix + ".running_var"] = np.ones(shape)
        elif fan_in is None:
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    return Network(int(num_classes), int(growth_rate), params, buffers)


def _bn(net, prefix, x, mode):
    if mode == "calibrate":
        out, _ = batchnorm_forward(
            x,
            net.params[prefix + ".bn.gamma"],
            net.params[prefix + ".bn.beta"],
            net.buffers[prefix + ".bn.running_mean"],
            net.buffers[prefix + ".bn.running_var"],
            "train",
            momentum=1.0,
        )
        return out, None
    return batchnorm_forward(
        x,
        net.params[prefix + ".bn.gamma"],
        net.params[prefix + ".bn.beta"],
        net.buffers[prefix + ".bn.running_mean"],
        net.buffers[prefix + ".bn.running_var"],
        mode,
    )


def _preact_conv(net, prefix, x, mode, padding):
    z, bn_cache = _bn(net, prefix, x, mode)
    a = z if prefix == STEM else relu(z)
    out, conv_cache = conv2d_forward(a, net.params[prefix + ".conv.w"], net.params[prefix + ".conv.b"], padding)
    return out, (bn_cache, z, conv_cache)


def _preact_conv_backward(grads, prefix, dout, cache):
    bn_cache, z, conv_cache = cache
    da, dw, db = conv2d_backward(dout, conv_cache)
    grads[prefix + ".conv.w"] = dw
    grads[prefix + ".conv.b"] = db
    dz = da if prefix == STEM else relu_backward(da, z)
    dx, dgamma, dbeta = batchnorm_backward(dz, bn_cache)
    grads[prefix + ".bn.gamma"] = dgamma
    grads[prefix + ".bn.beta"] = dbeta
    return dx


def _dense_block(net, block, x, mode):
    caches = []
    for l in range(1, LAYERS_PER_BLOCK + 1):
        new, c = _preact_conv(net, f"{block}{l}", x, mode, "same")
        caches.append((x.shape[1], c))
        x = np.concatenate([x, new], axis=1)
    return x, caches


def _dense_block_backward(grads, block, dout, caches):
    for l in range(LAYERS_PER_BLOCK, 0, -1):
        cin, c = caches[l - 1]
        dnew = dout[:, cin:]
        dout = dout[:, :cin] + _preact_conv_backward(grads, f"{block}{l}", dnew, c)
    return dout


def _check_input(net, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[:, None]
    if x.ndim != 4 or x.shape[1:] != INPUT_SHAPE:
        raise ShapeError(f"network input must be N x {INPUT_SHAPE}, got {x.shape}")
    return x


def _trunk(net, x, mode):
    """Everything up to the flattened 2x2 features."""
    a, cache_a = _dense_block(net, "A", x, mode)
    t, cache_t = _preact_conv(net, "T", a, mode, "valid")
    tp = avg_pool_2x2(t)
    b, cache_b = _dense_block(net, "B", tp, mode)
    z, bn_cache = _bn(net, "H", b, mode)
    h = relu(z)
    pooled = adaptive_avg_pool(h, 2, 2)
    flat = pooled.reshape(len(x), -1)
    return flat, (cache_a, cache_t, t.shape, cache_b, bn_cache, z, h.shape)


def forward(net: Network, batch, mode: str = "infer"):
    """Class probabilities for a batch of 1x10x5 (or 10x5) inputs.

    Returns ``(probs, cache)``.  ``cache`` is only produced in train mode,
    which also updates the batchnorm running statistics.
    """
    if mode not in ("train", "infer"):
        raise ConfigurationError(f"unknown mode {mode!r}")
    x = _check_input(net, batch)
    flat, trunk_cache = _trunk(net, x, mode)
    logits = flat @ net.params["fc.w"] + net.params["fc.b"]
    probs = softmax(logits)
    if mode == "infer":
        return probs, None
    return probs, {"probs": probs, "flat": flat, "trunk": trunk_cache}


def forward_logits(net: Network, batch) -> np.ndarray:
    x = _check_input(net, batch)
    flat, _ = _trunk(net, x, "infer")
    return flat @ net.params["fc.w"] + net.params["fc.b"]


def recalibrate_batchnorm(net: Network, batch):
    """Overwrite every running mean/variance with the statistics of ``batch``.

    Momentum averages lag behind weights that are still moving; one pass
    over the training inputs with the final weights puts the inference
    statistics back in line with what the layers were trained on.
    """
    x = _check_input(net, batch)
    if len(x) < 2:
        raise ConfigurationError("recalibration needs at least two items")
    _trunk(net, x, "calibrate")


def backward(net: Network, cache, targets) -> dict:
    """Gradients of the mean cross-entropy w.r.t. every entry of ``net.params``."""
    if cache is None:
        raise StateError("backward needs the cache of a train-mode forward pass")
    probs, flat = cache["probs"], cache["flat"]
    targets = np.asarray(targets, dtype=np.int64)
    n = len(probs)
    if targets.shape != (n,):
        raise ShapeError(f"expected {n} targets, got shape {targets.shape}")
    if np.any(targets < 0) or np.any(targets >= net.num_classes):
        raise ShapeError("target index out of range")
    cache_a, cache_t, t_shape, cache_b, bn_cache, z, h_shape = cache["trunk"]
    grads = {}

    dlogits = probs.copy()
    dlogits[np.arange(n), targets] -= 1.0
    dlogits /= n
    grads["fc.w"] = flat.T @ dlogits
    grads["fc.b"] = dlogits.sum(axis=0)
    dflat = dlogits @ net.params["fc.w"].T

    dh = adaptive_avg_pool_backward(dflat.reshape(n, -1, 2, 2), h_shape)
    db, grads["H.bn.gamma"], grads["H.bn.beta"] = batchnorm_backward(relu_backward(dh, z), bn_cache)
    dtp = _dense_block_backward(grads, "B", db, cache_b)
    dt = avg_pool_2x2_backward(dtp, t_shape)
    da = _preact_conv_backward(grads, "T", dt, cache_t)
    _dense_block_backward(grads, "A", da, cache_a)
    return {k: grads[k] for k in net.params}


def loss_and_grads(net: Network, batch, targets):
    probs, cache = forward(net, batch, "train")
    return cross_entropy(probs, targets), backward(net, cache, targets)


def extract_features_array(net: Network, batch) -> np.ndarray:
    """Flattened final 2x2 feature maps (the FC layer input), infer mode."""
    x = _check_input(net, batch)
    flat, _ = _trunk(net, x, "infer")
    return flat


def spectrograms_to_batch(specs: Sequence[Spectrogram], stats: Optional[NormStats]) -> np.ndarray:
    arr = np.stack([s.bins for s in specs])
    if stats is not None:
        arr = stats.apply(arr)
    return arr[:, None]


def predict_batch(net: Network, specs: Sequence[Spectrogram], stats: Optional[NormStats] = None):
    """Infer-mode labels and probabilities for many spectrograms.

    Ties in the argmax resolve to the lowest class index.
    """
    if net.label_map is not None and len(net.label_map) != net.num_classes:
        raise ConfigurationError(
            f"label map has {len(net.label_map)} entries but the network has {net.num_classes} classes"
        )
    if len(specs) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros((0, net.num_classes))
    probs, _ = forward(net, spectrograms_to_batch(specs, stats), "infer")
    return np.argmax(probs, axis=1), probs


def predict(net: Network, spec: Spectrogram, stats: Optional[NormStats] = None):
    idx, probs = predict_batch(net, [spec], stats if stats is not None else net.norm_stats)
    return int(idx[0]), probs[0]


# -- model files --------------------------------------------------------------

MODEL_VERSION = 1


def model_to_dict(net: Network) -> dict:
    params = {k: [float(v) for v in a.ravel()] for k, a in net.params.items()}
    params.update({k: [float(v) for v in a.ravel()] for k, a in net.buffers.items()})
    return {
        "version": MODEL_VERSION,
        "num_classes": net.num_classes,
        "growth_rate": net.growth_rate,
        "label_map": net.label_map,
        "norm_stats": None if net.norm_stats is None else net.norm_stats.to_dict(),
        "params": params,
    }


def model_from_dict(d: dict) -> Network:
    try:
        if d.get("version") != MODEL_VERSION:
            raise FormatError(f"unsupported model version {d.get('version')!r}")
        net = init_network(int(d["num_classes"]), int(d["growth_rate"]), seed=0)
        stored = d["params"]
        for group in (net.params, net.buffers):
            for k, a in group.items():
                vals = np.asarray(stored[k], dtype=np.float64)
                if vals.size != a.size:
                    raise FormatError(f"parameter {k} has {vals.size} values, expected {a.size}")
                group[k] = vals.reshape(a.shape)
        net.label_map = None if d.get("label_map") is None else [str(s) for s in d["label_map"]]
        ns = d.get("norm_stats")
        net.norm_stats = None if ns is None else NormStats.from_dict(ns)
    except KeyError as exc:
        raise FormatError(f"model file is missing {exc}") from exc
    net.trained = True
    if net.label_map is not None and len(net.label_map) != net.num_classes:
        raise FormatError("label_map length does not match num_classes")
    return net


def save_model(path, net: Network):
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(json.dumps(model_to_dict(net)) + "\n", encoding="utf-8")
    tmp.replace(path)


def load_model(path) -> Network:
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise FormatError(f"no such model file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: bad JSON ({exc.msg})") from exc
    return model_from_dict(d)
