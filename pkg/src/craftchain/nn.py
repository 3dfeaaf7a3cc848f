"""Minimal float64 neural network engine built on numpy.

Everything here is explicit: forward passes cache what the backward pass
needs, backward passes accumulate parameter gradients and return the input
gradient. Layers hold `params` and matching `grads` lists of ndarrays so
optimizers can update any composition of layers in place.

Gradient correctness is validated by central finite differences (see
`finite_difference_check`), and the training code never touches float32.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointMismatchError, FormatError

CKPT_MAGIC = b"CRAFTCHAIN-CKPT"
CKPT_VERSION = 1


# ---------------------------------------------------------------------------
# numeric helpers

def logsumexp(x: np.ndarray, axis: int = -1, keepdims: bool = False) -> np.ndarray:
    """Numerically stable log(sum(exp(x)))."""
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    return out if keepdims else np.squeeze(out, axis=axis)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def one_hot(labels: np.ndarray, n: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], n), dtype=np.float64)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def _he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(np.float64)


# ---------------------------------------------------------------------------
# layers

class Layer:
    """Base layer: subclasses fill params/grads and the two passes."""

    def __init__(self):
        self.params: list[np.ndarray] = []
        self.grads: list[np.ndarray] = []

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def zero_grads(self) -> None:
        for g in self.grads:
            g.fill(0.0)


class Dense(Layer):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__()
        self.w = _he_uniform(rng, (in_features, out_features), in_features)
        self.b = np.zeros(out_features, dtype=np.float64)
        self.params = [self.w, self.b]
        self.grads = [np.zeros_like(self.w), np.zeros_like(self.b)]
        self._x = None

    def forward(self, x):
        self._x = x
        return x @ self.w + self.b

    def backward(self, dy):
        if self._x is None:
            raise RuntimeError("backward called before forward")
        self.grads[0] += self._x.T @ dy
        self.grads[1] += dy.sum(axis=0)
        dx = dy @ self.w.T
        self._x = None
        return dx


class ReLU(Layer):
    def __init__(self):
        super().__init__()
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dy):
        if self._mask is None:
            raise RuntimeError("backward called before forward")
        dx = np.where(self._mask, dy, 0.0)
        self._mask = None
        return dx


class Flatten(Layer):
    def __init__(self):
        super().__init__()
        self._shape = None

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        if self._shape is None:
            raise RuntimeError("backward called before forward")
        dx = dy.reshape(self._shape)
        self._shape = None
        return dx


class Conv2d(Layer):
    """2-d convolution on (batch, channels, height, width) arrays."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 stride: int, rng: np.random.Generator):
        super().__init__()
        self.kernel = kernel
        self.stride = stride
        fan_in = in_channels * kernel * kernel
        self.w = _he_uniform(rng, (out_channels, in_channels, kernel, kernel), fan_in)
        self.b = np.zeros(out_channels, dtype=np.float64)
        self.params = [self.w, self.b]
        self.grads = [np.zeros_like(self.w), np.zeros_like(self.b)]
        self._cols = None
        self._xshape = None

    def _out_hw(self, h: int, w: int) -> tuple[int, int]:
        k, s = self.kernel, self.stride
        return (h - k) // s + 1, (w - k) // s + 1

    def forward(self, x):
        b, c, h, w = x.shape
        k, s = self.kernel, self.stride
        oh, ow = self._out_hw(h, w)
        # im2col: gather every kernel-sized patch, then one matmul
        cols = np.empty((b, c, k, k, oh, ow), dtype=np.float64)
        for ki in range(k):
            for kj in range(k):
                cols[:, :, ki, kj] = x[:, :, ki:ki + s * oh:s, kj:kj + s * ow:s]
        cols = cols.reshape(b, c * k * k, oh * ow)
        self._cols = cols
        self._xshape = x.shape
        wmat = self.w.reshape(self.w.shape[0], -1)
        out = np.matmul(wmat, cols) + self.b[:, None]
        return out.reshape(b, -1, oh, ow)

    def backward(self, dy):
        if self._cols is None:
            raise RuntimeError("backward called before forward")
        b, oc, oh, ow = dy.shape
        k, s = self.kernel, self.stride
        dyf = dy.reshape(b, oc, oh * ow)
        dw = np.matmul(dyf, self._cols.transpose(0, 2, 1)).sum(axis=0)
        self.grads[0] += dw.reshape(self.w.shape)
        self.grads[1] += dyf.sum(axis=(0, 2))
        wmat = self.w.reshape(oc, -1)
        dcols = np.matmul(wmat.T, dyf).reshape(b, -1, k, k, oh, ow)
        dx = np.zeros(self._xshape, dtype=np.float64)
        for ki in range(k):
            for kj in range(k):
                dx[:, :, ki:ki + s * oh:s, kj:kj + s * ow:s] += dcols[:, :, ki, kj]
        self._cols = None
        return dx


class ConvTranspose2d(Layer):
    """Transposed convolution; the spatial adjoint of Conv2d.

    output size = (in - 1) * stride + kernel + output_padding
    """

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 stride: int, rng: np.random.Generator, output_padding: int = 0):
        super().__init__()
        if output_padding >= stride:
            raise ValueError("output_padding must be smaller than stride")
        self.kernel = kernel
        self.stride = stride
        self.output_padding = output_padding
        fan_in = in_channels * kernel * kernel
        self.w = _he_uniform(rng, (in_channels, out_channels, kernel, kernel), fan_in)
        self.b = np.zeros(out_channels, dtype=np.float64)
        self.params = [self.w, self.b]
        self.grads = [np.zeros_like(self.w), np.zeros_like(self.b)]
        self._x = None

    def _out_hw(self, h: int, w: int) -> tuple[int, int]:
        k, s, op = self.kernel, self.stride, self.output_padding
        return (h - 1) * s + k + op, (w - 1) * s + k + op

    def forward(self, x):
        self._x = x
        b, c, h, w = x.shape
        k, s = self.kernel, self.stride
        oh, ow = self._out_hw(h, w)
        oc = self.w.shape[1]
        # one matmul produces every kernel-position contribution, then scatter
        wmat = self.w.reshape(c, oc * k * k)
        prod = np.matmul(wmat.T, x.reshape(b, c, h * w))
        prod = prod.reshape(b, oc, k, k, h, w)
        out = np.tile(self.b[None, :, None, None], (b, 1, oh, ow))
        for ki in range(k):
            for kj in range(k):
                out[:, :, ki:ki + s * h:s, kj:kj + s * w:s] += prod[:, :, ki, kj]
        return out

    def backward(self, dy):
        if self._x is None:
            raise RuntimeError("backward called before forward")
        x = self._x
        b, c, h, w = x.shape
        k, s = self.kernel, self.stride
        oc = self.w.shape[1]
        dycols = np.empty((b, oc, k, k, h, w), dtype=np.float64)
        for ki in range(k):
            for kj in range(k):
                dycols[:, :, ki, kj] = dy[:, :, ki:ki + s * h:s, kj:kj + s * w:s]
        dycols = dycols.reshape(b, oc * k * k, h * w)
        xf = x.reshape(b, c, h * w)
        dw = np.matmul(xf, dycols.transpose(0, 2, 1)).sum(axis=0)
        self.grads[0] += dw.reshape(self.w.shape)
        self.grads[1] += dy.sum(axis=(0, 2, 3))
        wmat = self.w.reshape(c, oc * k * k)
        dx = np.matmul(wmat, dycols).reshape(x.shape)
        self._x = None
        return dx


class DuelingHead(Layer):
    """State-value + mean-centered advantage head: Q = V + A - mean(A)."""

    def __init__(self, in_features: int, n_actions: int, rng: np.random.Generator):
        super().__init__()
        self.wv = _he_uniform(rng, (in_features, 1), in_features)
        self.bv = np.zeros(1, dtype=np.float64)
        self.wa = _he_uniform(rng, (in_features, n_actions), in_features)
        self.ba = np.zeros(n_actions, dtype=np.float64)
        self.params = [self.wv, self.bv, self.wa, self.ba]
        self.grads = [np.zeros_like(p) for p in self.params]
        self._x = None

    def forward(self, x):
        self._x = x
        v = x @ self.wv + self.bv          # (B, 1)
        a = x @ self.wa + self.ba          # (B, n)
        return v + a - a.mean(axis=1, keepdims=True)

    def backward(self, dy):
        if self._x is None:
            raise RuntimeError("backward called before forward")
        x = self._x
        dv = dy.sum(axis=1, keepdims=True)                   # (B, 1)
        da = dy - dy.mean(axis=1, keepdims=True)             # (B, n)
        self.grads[0] += x.T @ dv
        self.grads[1] += dv.sum(axis=0)
        self.grads[2] += x.T @ da
        self.grads[3] += da.sum(axis=0)
        dx = dv @ self.wv.T + da @ self.wa.T
        self._x = None
        return dx


class Sequential(Layer):
    def __init__(self, layers: list[Layer]):
        super().__init__()
        self.layers = layers
        self.params = [p for lay in layers for p in lay.params]
        self.grads = [g for lay in layers for g in lay.grads]

    def forward(self, x):
        for lay in self.layers:
            x = lay.forward(x)
        return x

    def backward(self, dy):
        for lay in reversed(self.layers):
            dy = lay.backward(dy)
        return dy

    def zero_grads(self):
        for lay in self.layers:
            lay.zero_grads()


# ---------------------------------------------------------------------------
# losses: each returns (scalar value, gradient wrt the first argument)

def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    diff = pred - target
    value = float(np.mean(diff * diff))
    grad = 2.0 * diff / diff.size
    return value, grad


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross entropy of integer labels under softmax(logits)."""
    b = logits.shape[0]
    lse = logsumexp(logits, axis=1)
    picked = logits[np.arange(b), labels]
    value = float(np.mean(lse - picked))
    grad = (softmax(logits, axis=1) - one_hot(labels, logits.shape[1])) / b
    return value, grad


# ---------------------------------------------------------------------------
# optimizers

class Adam:
    def __init__(self, params: list[np.ndarray], grads: list[np.ndarray],
                 lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.grads = grads
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, self.grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"adam_t": np.array([self.t], dtype=np.int64)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"adam_m_{i}"] = m
            out[f"adam_v_{i}"] = v
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.t = int(arrays["adam_t"][0])
        for i in range(len(self.m)):
            self.m[i][...] = arrays[f"adam_m_{i}"]
            self.v[i][...] = arrays[f"adam_v_{i}"]


class SGDMomentum:
    def __init__(self, params: list[np.ndarray], grads: list[np.ndarray],
                 lr: float = 1e-2, momentum: float = 0.9):
        self.params = params
        self.grads = grads
        self.lr = lr
        self.momentum = momentum
        self.vel = [np.zeros_like(p) for p in params]

    def step(self) -> None:
        for p, g, v in zip(self.params, self.grads, self.vel):
            v *= self.momentum
            v -= self.lr * g
            p += v


# ---------------------------------------------------------------------------
# gradient checking

def relu_region_fingerprint(*modules) -> bytes:
    """Byte token of every ReLU activation pattern from the last forward.

    Two forward passes share a fingerprint exactly when every rectifier made
    the same on/off decisions, i.e. both inputs lie in the same linear region
    of the network. Pass the Sequential blocks that make up the model.
    """
    parts = []
    for m in modules:
        for layer in m.layers:
            if isinstance(layer, ReLU) and layer._mask is not None:
                parts.append(np.packbits(layer._mask.reshape(-1)).tobytes())
    return b"".join(parts)


def finite_difference_check(
    loss_fn,
    params: list[np.ndarray],
    analytic_grads: list[np.ndarray],
    h: float = 1e-5,
    max_checks_per_param: int = 24,
    seed: int = 0,
    region_fingerprint=None,
) -> float:
    """Compare analytic gradients against central finite differences.

    `loss_fn` must recompute the scalar loss from the current parameter
    values. Returns the worst relative error over the sampled entries, with
    the denominator floored at 1e-4 so near-zero gradients compare absolutely.

    With `region_fingerprint` set (a callable fingerprinting the active
    linear region of the most recent forward pass, e.g. built on
    relu_region_fingerprint), probe entries whose +h and -h evaluations land
    in different regions are discarded and replaced by other entries: a
    two-sided difference straddling a subgradient boundary estimates neither
    one-sided derivative, so it cannot falsify the analytic gradient.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    worst = 0.0
    for p, g in zip(params, analytic_grads):
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        n = flat_p.size
        if n <= max_checks_per_param:
            idxs = np.arange(n)
        else:
            # extra candidates cover entries skipped at region boundaries
            pool = min(n, 4 * max_checks_per_param)
            idxs = rng.choice(n, size=pool, replace=False)
        checked = 0
        for i in idxs:
            if checked >= max_checks_per_param:
                break
            orig = flat_p[i]
            flat_p[i] = orig + h
            hi = loss_fn()
            fp_hi = region_fingerprint() if region_fingerprint else None
            flat_p[i] = orig - h
            lo = loss_fn()
            fp_lo = region_fingerprint() if region_fingerprint else None
            flat_p[i] = orig
            if region_fingerprint is not None and fp_hi != fp_lo:
                continue
            num = (hi - lo) / (2.0 * h)
            ana = flat_g[i]
            err = abs(num - ana) / max(abs(num), abs(ana), 1e-4)
            worst = max(worst, err)
            checked += 1
    return worst


# ---------------------------------------------------------------------------
# checkpoint container

def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict,
                    spec_digest: bytes) -> None:
    """Write named float/int arrays plus a JSON meta block.

    `spec_digest` is a 32-byte fingerprint of whatever configuration produced
    the arrays; loading verifies it so checkpoints cannot silently cross
    incompatible setups.
    """
    if len(spec_digest) != 32:
        raise ValueError("spec digest must be 32 bytes")
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    chunks = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION), spec_digest,
              struct.pack("<I", len(meta_bytes)), meta_bytes,
              struct.pack("<I", len(arrays))]
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        name_b = name.encode("utf-8")
        dtype_b = arr.dtype.str.encode("ascii")
        chunks.append(struct.pack("<H", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<B", len(dtype_b)))
        chunks.append(dtype_b)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{max(arr.ndim, 1)}I",
                                  *(arr.shape if arr.ndim else (1,))))
        chunks.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path, expected_digest: bytes | None = None):
    """Read a checkpoint; returns (arrays, meta, spec_digest)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise FormatError(f"bad magic; not a {CKPT_MAGIC.decode()} file")
    off = len(CKPT_MAGIC)
    (version,) = struct.unpack_from("<I", raw, off)
    off += 4
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    digest = raw[off:off + 32]
    off += 32
    if expected_digest is not None and digest != expected_digest:
        raise CheckpointMismatchError(
            "checkpoint was produced under a different configuration")
    (meta_len,) = struct.unpack_from("<I", raw, off)
    off += 4
    meta = json.loads(raw[off:off + meta_len].decode("utf-8"))
    off += meta_len
    (n_arrays,) = struct.unpack_from("<I", raw, off)
    off += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        (name_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + name_len].decode("utf-8")
        off += name_len
        (dtype_len,) = struct.unpack_from("<B", raw, off)
        off += 1
        dtype = np.dtype(raw[off:off + dtype_len].decode("ascii"))
        off += dtype_len
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{max(ndim, 1)}I", raw, off)
        off += 4 * max(ndim, 1)
        if ndim == 0:
            shape = ()
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=off).reshape(shape)
        off += arr.nbytes
        arrays[name] = arr.copy()
    if off != len(raw):
        raise FormatError("trailing bytes in checkpoint")
    return arrays, meta, digest


def net_arrays(net: Layer, prefix: str = "param") -> dict[str, np.ndarray]:
    """Name a layer tree's parameters for checkpointing."""
    return {f"{prefix}_{i}": p for i, p in enumerate(net.params)}


def load_net_arrays(net: Layer, arrays: dict[str, np.ndarray],
                    prefix: str = "param") -> None:
    for i, p in enumerate(net.params):
        src = arrays[f"{prefix}_{i}"]
        if src.shape != p.shape:
            raise CheckpointMismatchError(
                f"{prefix}_{i}: shape {src.shape} does not match {p.shape}")
        p[...] = src
