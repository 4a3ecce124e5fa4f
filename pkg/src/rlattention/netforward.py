"""Forward-only inference for small feedforward conv/deconv networks.

Architectures are data: a :class:`NetworkSpec` lists layers and their shapes,
and :class:`NetworkWeights` holds one parameter dict per layer. Both are
stored together in an ``ATNW`` weight file (see ``docs/weight_format.md``).

Parameters are stored as float32 and evaluated in float64 with a fixed
summation order, so repeated calls are bitwise reproducible.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    BadMagicError,
    ContractError,
    FormatError,
    NumericError,
    ShapeMismatchError,
    TruncatedBlobError,
)
from .imaging import FrameStack, SaliencyMap

MAGIC = b"ATNW"
FORMAT_VERSION = 1
DEFAULT_BN_EPSILON = 1e-5

LAYER_KINDS = (
    "conv",
    "deconv",
    "dense",
    "relu",
    "batchnorm",
    "dropout",
    "softmax_spatial",
    "softmax_vector",
    "flatten",
)
# action_values: unnormalized per-action scores (e.g. Q-values)
OUTPUT_KINDS = ("action_distribution", "action_values", "spatial_distribution")

# parameter blobs per layer kind, in file order
_PARAM_NAMES = {
    "conv": ("weight", "bias"),
    "deconv": ("weight", "bias"),
    "dense": ("weight", "bias"),
    "batchnorm": ("mean", "var", "scale", "shift"),
}


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    filters: int | None = None  # conv/deconv output channels, dense units
    kernel: tuple | None = None  # (kh, kw)
    stride: int = 1
    epsilon: float = DEFAULT_BN_EPSILON
    rate: float | None = None  # dropout, informational only
    input_shape: tuple | None = None
    output_shape: tuple | None = None

    def to_json(self) -> dict:
        out = {"kind": self.kind}
        if self.kind in ("conv", "deconv"):
            out.update(filters=self.filters, kernel=list(self.kernel), stride=self.stride)
        elif self.kind == "dense":
            out.update(units=self.filters)
        elif self.kind == "batchnorm":
            out.update(epsilon=self.epsilon)
        elif self.kind == "dropout" and self.rate is not None:
            out.update(rate=self.rate)
        if self.output_shape is not None:
            out["output_shape"] = list(self.output_shape)
        return out

    def param_shapes(self) -> dict:
        if self.kind in ("conv", "deconv"):
            kh, kw = self.kernel
            return {"weight": (self.filters, self.input_shape[0], kh, kw), "bias": (self.filters,)}
        if self.kind == "dense":
            return {"weight": (self.filters, self.input_shape[0]), "bias": (self.filters,)}
        if self.kind == "batchnorm":
            c = (self.input_shape[0],)
            return {"mean": c, "var": c, "scale": c, "shift": c}
        return {}


def layer_output_shape(layer: LayerSpec, in_shape: tuple) -> tuple:
    """Shape arithmetic for one layer with valid padding."""
    kind = layer.kind
    if kind in ("conv", "deconv"):
        if len(in_shape) != 3:
            raise ShapeMismatchError(f"{kind} needs a CxHxW input, got {in_shape}")
        _, h, w = in_shape
        kh, kw = layer.kernel
        s = layer.stride
        if kind == "conv":
            if h < kh or w < kw:
                raise ShapeMismatchError(f"conv kernel {kh}x{kw} larger than input {h}x{w}")
            return (layer.filters, (h - kh) // s + 1, (w - kw) // s + 1)
        return (layer.filters, (h - 1) * s + kh, (w - 1) * s + kw)
    if kind == "dense":
        if len(in_shape) != 1:
            raise ShapeMismatchError(f"dense needs a flat input, got {in_shape} (add a flatten layer)")
        return (layer.filters,)
    if kind == "flatten":
        return (int(np.prod(in_shape)),)
    if kind == "softmax_vector" and len(in_shape) != 1:
        raise ShapeMismatchError(f"softmax_vector needs a flat input, got {in_shape}")
    return tuple(in_shape)


@dataclass(frozen=True)
class NetworkSpec:
    """An ordered, shape-checked layer list."""

    input_shape: tuple
    output_kind: str
    layers: tuple

    @property
    def output_shape(self) -> tuple:
        return self.layers[-1].output_shape if self.layers else tuple(self.input_shape)

    def to_json(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "output_kind": self.output_kind,
            "layers": [layer.to_json() for layer in self.layers],
        }


def build_spec(input_shape: Sequence[int], output_kind: str, layers: Sequence[dict]) -> NetworkSpec:
    """Resolve and validate layer shapes.

    Each layer dict may declare ``output_shape``; a declaration that
    disagrees with the shape arithmetic raises :class:`ShapeMismatchError`.
    """
    if output_kind not in OUTPUT_KINDS:
        raise FormatError(f"unknown output kind {output_kind!r}")
    shape = tuple(int(v) for v in input_shape)
    resolved = []
    for index, desc in enumerate(layers):
        kind = desc.get("kind")
        if kind not in LAYER_KINDS:
            raise FormatError(f"layer {index}: unknown kind {kind!r}")
        kwargs = {"kind": kind}
        if kind in ("conv", "deconv"):
            kernel = desc["kernel"]
            if isinstance(kernel, int):
                kernel = (kernel, kernel)
            kwargs.update(filters=int(desc["filters"]), kernel=tuple(int(k) for k in kernel), stride=int(desc.get("stride", 1)))
            if kwargs["stride"] < 1 or min(kwargs["kernel"]) < 1 or kwargs["filters"] < 1:
                raise FormatError(f"layer {index}: filters, kernel and stride must be >= 1")
        elif kind == "dense":
            kwargs.update(filters=int(desc["units"]))
        elif kind == "batchnorm":
            kwargs.update(epsilon=float(desc.get("epsilon", DEFAULT_BN_EPSILON)))
        elif kind == "dropout":
            kwargs.update(rate=desc.get("rate"))
        probe = LayerSpec(**kwargs)
        try:
            out_shape = layer_output_shape(probe, shape)
        except ShapeMismatchError as exc:
            raise ShapeMismatchError(f"layer {index}: {exc}") from None
        declared = desc.get("output_shape")
        if declared is not None and tuple(int(v) for v in declared) != out_shape:
            raise ShapeMismatchError(
                f"layer {index} ({kind}): declared output {tuple(declared)} but shape rule gives {out_shape}"
            )
        resolved.append(LayerSpec(**kwargs, input_shape=shape, output_shape=out_shape))
        shape = out_shape
    spec = NetworkSpec(tuple(int(v) for v in input_shape), output_kind, tuple(resolved))
    _check_output_kind(spec)
    return spec


def _check_output_kind(spec: NetworkSpec) -> None:
    out = spec.output_shape
    if spec.output_kind == "spatial_distribution":
        if len(out) != 3 or out[0] != 1 or out[1:] != tuple(spec.input_shape[1:]):
            raise ShapeMismatchError(
                f"spatial_distribution output must be 1x{spec.input_shape[1]}x{spec.input_shape[2]}, got {out}"
            )
    elif len(out) != 1:
        raise ShapeMismatchError(f"{spec.output_kind} output must be a vector, got {out}")


@dataclass
class NetworkWeights:
    """Per-layer parameter dicts (empty for parameter-free layers)."""

    params: list = field(default_factory=list)

    def __post_init__(self):
        # evaluation copies in float64, computed once
        self._f64 = [{k: np.asarray(v, dtype=np.float32).astype(np.float64) for k, v in p.items()} for p in self.params]

    def float64(self, index: int) -> dict:
        return self._f64[index]


def check_weights(spec: NetworkSpec, weights: NetworkWeights) -> None:
    if len(weights.params) != len(spec.layers):
        raise ShapeMismatchError(f"{len(weights.params)} parameter sets for {len(spec.layers)} layers")
    for index, (layer, params) in enumerate(zip(spec.layers, weights.params)):
        expected = layer.param_shapes()
        if set(params) != set(expected):
            raise ShapeMismatchError(f"layer {index}: parameters {sorted(params)} != {sorted(expected)}")
        for name, shape in expected.items():
            if tuple(np.shape(params[name])) != shape:
                raise ShapeMismatchError(f"layer {index} {name}: shape {np.shape(params[name])} != {shape}")


# --------------------------------------------------------------------------
# weight file I/O


def save_network(path, spec: NetworkSpec, weights: NetworkWeights) -> None:
    check_weights(spec, weights)
    header = json.dumps(spec.to_json(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", FORMAT_VERSION, len(header)))
        fh.write(header)
        for layer, params in zip(spec.layers, weights.params):
            for name in _PARAM_NAMES.get(layer.kind, ()):
                fh.write(np.ascontiguousarray(params[name], dtype="<f4").tobytes())


def load_network(path) -> tuple:
    """Read an ``ATNW`` file; returns ``(NetworkSpec, NetworkWeights)``."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < 10:
        raise TruncatedBlobError(f"{path}: header truncated")
    version, header_len = struct.unpack_from("<HI", blob, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    start = 10
    if len(blob) < start + header_len:
        raise TruncatedBlobError(f"{path}: header truncated")
    try:
        header = json.loads(blob[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header: {exc}") from None
    try:
        spec = build_spec(header["input_shape"], header["output_kind"], header["layers"])
    except KeyError as exc:
        raise FormatError(f"{path}: header missing field {exc}") from None
    offset = start + header_len
    params = []
    for index, layer in enumerate(spec.layers):
        shapes = layer.param_shapes()
        layer_params = {}
        for name in _PARAM_NAMES.get(layer.kind, ()):
            shape = shapes[name]
            nbytes = int(np.prod(shape)) * 4
            if offset + nbytes > len(blob):
                raise TruncatedBlobError(f"{path}: layer {index} {name} blob truncated")
            layer_params[name] = np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=offset).reshape(shape).copy()
            offset += nbytes
        params.append(layer_params)
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes after last blob")
    return spec, NetworkWeights(params)


# --------------------------------------------------------------------------
# layer kernels


def _conv(x, w, b, stride):
    kh, kw = w.shape[2:]
    windows = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    # (C, Ho, Wo, kh, kw) x (O, C, kh, kw) -> (O, Ho, Wo)
    out = np.tensordot(w, windows, axes=([1, 2, 3], [0, 3, 4]))
    return out + b[:, None, None]


def _deconv(x, w, b, stride):
    c_out, _, kh, kw = w.shape
    _, h, wd = x.shape
    # (O, C, kh, kw) x (C, H, W) -> (O, kh, kw, H, W)
    taps = np.tensordot(w, x, axes=([1], [0]))
    out = np.zeros((c_out, (h - 1) * stride + kh, (wd - 1) * stride + kw))
    for a in range(kh):
        for c in range(kw):
            out[:, a:a + (h - 1) * stride + 1:stride, c:c + (wd - 1) * stride + 1:stride] += taps[:, a, c]
    return out + b[:, None, None]


def _softmax(x):
    z = x - x.max()
    e = np.exp(z)
    return e / e.sum()


def _apply(layer: LayerSpec, params: dict, x: np.ndarray) -> np.ndarray:
    kind = layer.kind
    if kind == "conv":
        return _conv(x, params["weight"], params["bias"], layer.stride)
    if kind == "deconv":
        return _deconv(x, params["weight"], params["bias"], layer.stride)
    if kind == "dense":
        return params["weight"] @ x + params["bias"]
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "batchnorm":
        inv = params["scale"] / np.sqrt(params["var"] + layer.epsilon)
        shift = params["shift"] - params["mean"] * inv
        if x.ndim == 3:
            return x * inv[:, None, None] + shift[:, None, None]
        return x * inv + shift
    if kind == "dropout":
        return x
    if kind == "flatten":
        return x.reshape(-1)
    if kind in ("softmax_vector", "softmax_spatial"):
        return _softmax(x)
    raise FormatError(f"unknown layer kind {kind!r}")


class Network:
    """A loaded network; calling it maps a ``(4, H, W)`` array to the raw output array."""

    def __init__(self, spec: NetworkSpec, weights: NetworkWeights):
        check_weights(spec, weights)
        self.spec = spec
        self.weights = weights

    @classmethod
    def load(cls, path) -> "Network":
        return cls(*load_network(path))

    def save(self, path) -> None:
        save_network(path, self.spec, self.weights)

    def __call__(self, x) -> np.ndarray:
        if isinstance(x, FrameStack):
            x = x.to_array()
        x = np.asarray(x, dtype=np.float64)
        if x.shape != tuple(self.spec.input_shape):
            raise ContractError(f"input shape {x.shape} does not match network input {tuple(self.spec.input_shape)}")
        for index, layer in enumerate(self.spec.layers):
            # overflow is reported below as a NumericError, not as a warning
            with np.errstate(over="ignore", invalid="ignore"):
                x = _apply(layer, self.weights.float64(index), x)
            if not np.all(np.isfinite(x)):
                raise NumericError(f"non-finite activation after layer {index} ({layer.kind})", layer_index=index)
        return x


def _wrap_output(spec: NetworkSpec, out: np.ndarray):
    if spec.output_kind == "spatial_distribution":
        values = out.reshape(out.shape[-2:])
        is_dist = bool(spec.layers) and spec.layers[-1].kind == "softmax_spatial"
        return SaliencyMap(values if is_dist else np.maximum(values, 0.0), normalized=is_dist)
    return out


def forward(spec: NetworkSpec, weights: NetworkWeights, stack):
    """Run one input through the network.

    Vector outputs are returned as a 1-D array (action probabilities, or
    action values for ``action_values`` networks); spatial outputs as a
    :class:`SaliencyMap`.
    """
    return _wrap_output(spec, Network(spec, weights)(stack))


def batch_forward(spec: NetworkSpec, weights: NetworkWeights, inputs: Sequence) -> list:
    """``forward`` applied to each input in order.

    Items are evaluated one by one so results are bitwise identical to
    sequential :func:`forward` calls.
    """
    net = Network(spec, weights)
    results = []
    for index, item in enumerate(inputs):
        try:
            results.append(_wrap_output(spec, net(item)))
        except NumericError as exc:
            raise NumericError(f"item {index}: {exc}", layer_index=exc.layer_index) from exc
        except ContractError as exc:
            raise ContractError(f"item {index}: {exc}") from exc
    return results


# --------------------------------------------------------------------------
# reference architectures


def _post_block():
    return [{"kind": "relu"}, {"kind": "batchnorm"}, {"kind": "dropout"}]


def gaze_network_spec(input_shape=(4, 84, 84)) -> NetworkSpec:
    """Convolution-deconvolution gaze predictor with a spatial softmax head."""
    layers = [
        {"kind": "conv", "filters": 32, "kernel": 8, "stride": 4}, *_post_block(),
        {"kind": "conv", "filters": 64, "kernel": 4, "stride": 2}, *_post_block(),
        {"kind": "conv", "filters": 64, "kernel": 3, "stride": 1}, *_post_block(),
        {"kind": "deconv", "filters": 64, "kernel": 3, "stride": 1}, *_post_block(),
        {"kind": "deconv", "filters": 64, "kernel": 4, "stride": 2}, *_post_block(),
        {"kind": "deconv", "filters": 1, "kernel": 8, "stride": 4},
        {"kind": "softmax_spatial"},
    ]
    return build_spec(input_shape, "spatial_distribution", layers)


def atari_policy_spec(n_actions: int, input_shape=(4, 84, 84), output_kind="action_distribution") -> NetworkSpec:
    """The common Atari CNN with a softmax policy head (or a raw value head)."""
    layers = [
        {"kind": "conv", "filters": 32, "kernel": 8, "stride": 4}, {"kind": "relu"},
        {"kind": "conv", "filters": 64, "kernel": 4, "stride": 2}, {"kind": "relu"},
        {"kind": "conv", "filters": 64, "kernel": 3, "stride": 1}, {"kind": "relu"},
        {"kind": "flatten"},
        {"kind": "dense", "units": 512}, {"kind": "relu"},
        {"kind": "dense", "units": n_actions},
    ]
    if output_kind == "action_distribution":
        layers.append({"kind": "softmax_vector"})
    return build_spec(input_shape, output_kind, layers)


def spatial_sizes(spec: NetworkSpec) -> list:
    """Spatial side lengths at the input and after each conv/deconv layer."""
    sizes = [spec.input_shape[1]]
    sizes += [layer.output_shape[1] for layer in spec.layers if layer.kind in ("conv", "deconv")]
    return sizes


def random_weights(spec: NetworkSpec, seed: int = 0) -> NetworkWeights:
    """He-scaled random weights with identity batchnorm statistics."""
    rng = np.random.default_rng(seed)
    params = []
    for layer in spec.layers:
        shapes = layer.param_shapes()
        p = {}
        if layer.kind in ("conv", "deconv", "dense"):
            w_shape = shapes["weight"]
            fan_in = int(np.prod(w_shape[1:]))
            p["weight"] = (rng.standard_normal(w_shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)
            p["bias"] = np.zeros(shapes["bias"], dtype=np.float32)
        elif layer.kind == "batchnorm":
            c = shapes["mean"]
            p = {
                "mean": np.zeros(c, np.float32),
                "var": np.ones(c, np.float32),
                "scale": np.ones(c, np.float32),
                "shift": np.zeros(c, np.float32),
            }
        params.append(p)
    return NetworkWeights(params)


def zero_weights(spec: NetworkSpec) -> NetworkWeights:
    weights = random_weights(spec)
    for p in weights.params:
        for name in ("weight", "bias"):
            if name in p:
                p[name][...] = 0.0
    return NetworkWeights(weights.params)
