"""Forward-only numpy inference of expanded graphs at random initialization.

Tensors are float32 arrays laid out (batch, channels, height, width).  Every
conv-like node flagged as a ReLU site contributes one code bit per output
unit: ``1[pre-activation > 0]``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .arch import ArchitectureSpec, Graph, Node, ShapeError, expand

DTYPE = np.float32


def _same_pad(k: int, dilation: int) -> int:
    return dilation * (k - 1) // 2


# Kernels work channels-last (B, H, W, C) so that every gather copies
# contiguous channel runs; the public wrappers take and return (B, C, H, W).


def _pad(x, pad, fill=0.0):
    if not pad:
        return x
    b, h, w, c = x.shape
    xp = np.full((b, h + 2 * pad, w + 2 * pad, c), fill, dtype=x.dtype)
    xp[:, pad:pad + h, pad:pad + w] = x
    return xp


def _offsets(x, k: int, stride: int, dilation: int, pad: int, fill=0.0):
    """Strided (B, Ho, Wo, C) views of the padded input, one per kernel offset."""
    b, h, w, c = x.shape
    ho = (h + 2 * pad - dilation * (k - 1) - 1) // stride + 1
    wo = (w + 2 * pad - dilation * (k - 1) - 1) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"kernel {k} (dilation {dilation}) does not fit input {(h, w)}")
    xp = _pad(x, pad, fill)
    views = []
    for i in range(k):
        for j in range(k):
            r, q = i * dilation, j * dilation
            views.append(xp[:, r:r + stride * (ho - 1) + 1:stride, q:q + stride * (wo - 1) + 1:stride])
    return views


def _conv_nhwc(x, weight, bias, stride, dilation):
    cout, cin, k, _ = weight.shape
    pad = _same_pad(k, dilation)
    b, h, w, _ = x.shape
    xp = _pad(x, pad)
    hp, wp = h + 2 * pad, w + 2 * pad
    flat = xp.reshape(b * hp * wp, cin)
    # Each kernel offset is a constant shift in the flattened padded input,
    # so its operand is a contiguous slice.  Rows whose window wraps across a
    # row or image edge are computed and then cropped away.
    span = dilation * (k - 1)
    n = b * hp * wp - (span * wp + span)
    out = np.zeros((b * hp * wp, cout), dtype=DTYPE)
    acc = out[:n]
    wk = np.ascontiguousarray(weight.transpose(2, 3, 1, 0), dtype=DTYPE)
    for i in range(k):
        for j in range(k):
            shift = (i * wp + j) * dilation
            acc += flat[shift:shift + n] @ wk[i, j]
    if bias is not None:
        out += bias
    out = out.reshape(b, hp, wp, cout)[:, :h + 2 * pad - span:stride, :w + 2 * pad - span:stride]
    return np.ascontiguousarray(out)


def _depthwise_nhwc(x, weight, stride, dilation):
    c, k, _ = weight.shape
    pad = _same_pad(k, dilation)
    b, h, w, _ = x.shape
    hp, wp = h + 2 * pad, w + 2 * pad
    flat = _pad(x, pad).reshape(b * hp * wp, c)
    span = dilation * (k - 1)
    n = b * hp * wp - (span * wp + span)
    out = np.zeros((b * hp * wp, c), dtype=DTYPE)
    acc = out[:n]
    wk = np.ascontiguousarray(weight.transpose(1, 2, 0), dtype=DTYPE)
    for i in range(k):
        for j in range(k):
            shift = (i * wp + j) * dilation
            acc += flat[shift:shift + n] * wk[i, j]
    out = out.reshape(b, hp, wp, c)[:, :h + 2 * pad - span:stride, :w + 2 * pad - span:stride]
    return np.ascontiguousarray(out)


def _pool_nhwc(x, kind, window, stride):
    pad = (window - 1) // 2
    if kind == "max":
        out = None
        for v in _offsets(x, window, stride, 1, pad, fill=-np.inf):
            out = v.copy() if out is None else np.maximum(out, v, out=out)
        return out
    if kind == "avg":
        total = None
        for v in _offsets(x, window, stride, 1, pad):
            total = v.copy() if total is None else np.add(total, v, out=total)
        count = None
        for v in _offsets(np.ones((1,) + x.shape[1:3] + (1,), x.dtype), window, stride, 1, pad):
            count = v.copy() if count is None else count + v
        return total / count
    raise ValueError(f"unknown pool kind {kind!r}")


def _nhwc(x):
    return np.ascontiguousarray(np.asarray(x, dtype=DTYPE).transpose(0, 2, 3, 1))


def _nchw(x):
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2))


def conv_forward(x, weight, bias=None, stride=1, dilation=1):
    """Dense 2D cross-correlation with zero "same" padding.

    ``x`` is (B, Cin, H, W), ``weight`` is (Cout, Cin, k, k), k odd.
    """
    cout, cin, k, k2 = weight.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"kernel must be square with odd size, got {weight.shape}")
    if x.shape[1] != cin:
        raise ShapeError(f"input has {x.shape[1]} channels, kernel expects {cin}")
    return _nchw(_conv_nhwc(_nhwc(x), np.asarray(weight, DTYPE), bias, stride, dilation))


def depthwise_forward(x, weight, stride=1, dilation=1):
    """Per-channel spatial conv, ``weight`` is (C, k, k)."""
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(f"input has {x.shape[1]} channels, depthwise kernel expects {weight.shape[0]}")
    return _nchw(_depthwise_nhwc(_nhwc(x), np.asarray(weight, DTYPE), stride, dilation))


def pool_forward(x, kind: str, window: int = 3, stride: int = 1):
    """Max or average pooling with same padding; padded cells are ignored."""
    return _nchw(_pool_nhwc(_nhwc(x), kind, window, stride))


def upsample2x(x):
    """Nearest-neighbour 2x upsampling of a (B, C, H, W) tensor."""
    return x.repeat(2, axis=2).repeat(2, axis=3)


def combine(a, b, mode: str, axis: int = 1):
    if mode == "concat":
        if a.ndim != b.ndim or any(a.shape[i] != b.shape[i] for i in range(a.ndim) if i != axis % a.ndim):
            raise ShapeError(f"concat of {a.shape} and {b.shape}")
        return np.concatenate([a, b], axis=axis)
    if mode == "add":
        if a.shape != b.shape:
            raise ShapeError(f"add of {a.shape} and {b.shape}")
        return a + b
    raise ValueError(f"unknown combine mode {mode!r}")


def _tconv_nhwc(x, weight, bias):
    b, h, w, _ = x.shape
    cout = weight.shape[1]
    y = np.einsum("bhwc,cokl->bhkwlo", x, weight).reshape(b, 2 * h, 2 * w, cout)
    return y + bias


def tconv_forward(x, weight, bias):
    """2x2 stride-2 transposed conv, ``weight`` is (Cin, Cout, 2, 2)."""
    return _nchw(_tconv_nhwc(_nhwc(x), weight, bias))


@dataclass(frozen=True)
class ActivationCodes:
    codes: np.ndarray  # (batch, N_A) uint8 in {0, 1}

    @property
    def n(self) -> int:
        return self.codes.shape[0]

    @property
    def n_units(self) -> int:
        return self.codes.shape[1]


@dataclass(frozen=True)
class NetworkInstance:
    graph: Graph
    weights: dict  # node index -> tuple of arrays
    seed: int | None

    @property
    def input_dims(self) -> tuple[int, int, int]:
        return self.graph.input_shape

    @property
    def n_relu(self) -> int:
        return self.graph.relu_units


def _gauss(rng, shape, fan_in, gain):
    return (rng.standard_normal(shape) * math.sqrt(gain / fan_in)).astype(DTYPE)


def init_weights(graph: Graph, seed) -> dict:
    """Zero-mean Gaussian weights, zero biases.

    Weights feeding a ReLU get variance 2/fan_in; weights with no ReLU right
    after them (depthwise stage, head, transposed conv) get 1/fan_in.
    """
    rng = np.random.default_rng(seed)
    weights = {}
    for i, node in enumerate(graph.nodes):
        if not node.inputs:
            continue
        cin = graph.nodes[node.inputs[0]].shape[0]
        cout, k = node.shape[0], node.kernel
        gain = 2.0 if node.relu else 1.0
        if node.op == "conv":
            weights[i] = (_gauss(rng, (cout, cin, k, k), cin * k * k, gain), np.zeros(cout, DTYPE))
        elif node.op == "sepconv":
            weights[i] = (
                _gauss(rng, (cin, k, k), k * k, 1.0),
                _gauss(rng, (cout, cin, 1, 1), cin, gain),
                np.zeros(cout, DTYPE),
            )
        elif node.op == "tconv":
            weights[i] = (_gauss(rng, (cin, cout, 2, 2), cin * 4, 1.0), np.zeros(cout, DTYPE))
    return weights


def init_network(spec: ArchitectureSpec | Graph, input_dims=None, seed=0) -> NetworkInstance:
    """Instantiate ``spec`` for inputs of ``input_dims`` = (channels, H, W)."""
    if isinstance(spec, Graph):
        graph = spec
        if input_dims is not None and tuple(input_dims) != graph.input_shape:
            raise ShapeError(f"graph built for {graph.input_shape}, not {tuple(input_dims)}")
    else:
        c, h, w = input_dims if input_dims is not None else (spec.macro.in_channels, 128, 128)
        if c != spec.macro.in_channels:
            raise ShapeError(f"spec expects {spec.macro.in_channels} input channels, got {c}")
        graph = expand(spec, (h, w))
    return NetworkInstance(graph, init_weights(graph, seed), seed)


def _node_forward(node: Node, w, xs):
    op = node.op
    if op == "conv":
        return _conv_nhwc(xs[0], w[0], w[1], node.stride, node.dilation)
    if op == "sepconv":
        y = _depthwise_nhwc(xs[0], w[0], node.stride, 1)
        return _conv_nhwc(y, w[1], w[2], 1, 1)
    if op == "maxpool":
        return _pool_nhwc(xs[0], "max", 3, node.stride)
    if op == "avgpool":
        return _pool_nhwc(xs[0], "avg", 3, node.stride)
    if op == "subsample":
        return xs[0][:, ::2, ::2]
    if op == "avgpool2":
        x = xs[0]
        b, h, wd, c = x.shape
        return x.reshape(b, h // 2, 2, wd // 2, 2, c).mean(axis=(2, 4))
    if op == "upsample":
        return xs[0].repeat(2, axis=1).repeat(2, axis=2)
    if op == "tconv":
        return _tconv_nhwc(xs[0], w[0], w[1])
    if op in ("add", "concat"):
        return combine(xs[0], xs[1], op, axis=3)
    raise ValueError(f"unsupported node op {op!r}")


def forward(net: NetworkInstance, batch, trace: list | None = None):
    """Run ``batch`` through ``net``; returns (logits, ActivationCodes).

    Code bits are laid out site by site in graph order, each site flattened
    as (C, H, W).  If ``trace`` is a list, each node's (B, C, H, W) output is
    appended to it.
    """
    batch = np.asarray(batch, dtype=DTYPE)
    if batch.ndim != 4 or batch.shape[1:] != net.input_dims:
        raise ShapeError(f"batch shape {batch.shape} does not match input dims {net.input_dims}")
    n = len(batch)
    values = [_nhwc(batch)]
    bits = []
    for i, node in enumerate(net.graph.nodes[1:], start=1):
        y = _node_forward(node, net.weights.get(i), [values[j] for j in node.inputs])
        c, h, w = node.shape
        if y.shape[1:] != (h, w, c):
            raise ShapeError(f"node {i} ({node.name}): produced {y.shape[1:]}, expected {(h, w, c)}")
        if node.relu:
            active = y > 0
            bits.append(active.transpose(0, 3, 1, 2).reshape(n, -1))
            y = np.maximum(y, DTYPE(0))
        values.append(y)
        if trace is not None:
            trace.append(_nchw(y))
    codes = np.concatenate(bits, axis=1).view(np.uint8) if bits else np.zeros((n, 0), np.uint8)
    return _nchw(values[-1]), ActivationCodes(codes)


# code dumps: magic, uint32 rows, uint32 cols, then rows*cols bytes (row-major)
_CODES_MAGIC = b"NACB"


def write_codes(path, codes: ActivationCodes) -> None:
    c = np.ascontiguousarray(codes.codes, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(_CODES_MAGIC + struct.pack("<II", *c.shape))
        f.write(c.tobytes())


def read_codes(path) -> ActivationCodes:
    data = Path(path).read_bytes()
    if data[:4] != _CODES_MAGIC:
        raise ValueError(f"{path}: not an activation-code dump")
    rows, cols = struct.unpack("<II", data[4:12])
    arr = np.frombuffer(data, dtype=np.uint8, offset=12)
    if arr.size != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} code bytes, found {arr.size}")
    return ActivationCodes(arr.reshape(rows, cols).copy())
