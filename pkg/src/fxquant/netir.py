"""Linear-chain network representation, manifest I/O and batch-norm folding.

A model directory holds ``model.json`` plus one raw little-endian float32
blob per parameter tensor.
"""
from __future__ import annotations

import enum
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np

MANIFEST_VERSION = 1
MANIFEST_NAME = "model.json"
BLOB_DTYPE = np.dtype("<f4")


class ModelError(ValueError):
    """Malformed manifest or inconsistent model."""


class ShapeMismatchError(ModelError):
    pass


class MissingBlobError(ModelError):
    pass


class StructureError(ModelError):
    pass


class LayerKind(str, enum.Enum):
    CONV2D = "conv2d"
    FULLY_CONNECTED = "fully_connected"
    RELU = "relu"
    BATCHNORM = "batchnorm"
    MAXPOOL = "maxpool"
    AVGPOOL = "avgpool"
    FLATTEN = "flatten"


QUANTIZABLE = (LayerKind.CONV2D, LayerKind.FULLY_CONNECTED)

_ATTRS = {
    LayerKind.CONV2D: ("in_channels", "out_channels", "kernel", "stride", "padding"),
    LayerKind.FULLY_CONNECTED: ("in_features", "out_features"),
    LayerKind.RELU: (),
    LayerKind.BATCHNORM: ("num_features", "epsilon"),
    LayerKind.MAXPOOL: ("window", "stride"),
    LayerKind.AVGPOOL: ("window", "stride"),
    LayerKind.FLATTEN: (),
}
_BN_PARAMS = ("scale", "shift", "running_mean", "running_var")


def as_tensor(data, shape=None) -> np.ndarray:
    """Validated, read-only float32 tensor."""
    arr = np.array(data, dtype=np.float32)
    if shape is not None:
        shape = tuple(int(d) for d in shape)
        if arr.size != math.prod(shape):
            raise ShapeMismatchError(f"tensor has {arr.size} values, shape {shape} needs {math.prod(shape)}")
        arr = arr.reshape(shape)
    if arr.ndim == 0 or any(d < 1 for d in arr.shape):
        raise ShapeMismatchError(f"tensor dims must be >= 1, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ModelError("tensor contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: LayerKind
    attrs: Mapping[str, Any] = field(default_factory=dict)
    params: Mapping[str, np.ndarray] = field(default_factory=dict)

    @property
    def quantizable(self) -> bool:
        return self.kind in QUANTIZABLE

    @property
    def weight(self) -> np.ndarray:
        return self.params["weight"]

    @property
    def bias(self) -> np.ndarray | None:
        return self.params.get("bias")

    def __eq__(self, other):
        if not isinstance(other, LayerSpec):
            return NotImplemented
        return (
            self.name == other.name
            and self.kind == other.kind
            and dict(self.attrs) == dict(other.attrs)
            and self.params.keys() == other.params.keys()
            and all(np.array_equal(self.params[k], other.params[k]) for k in self.params)
        )

    __hash__ = None


def conv2d(name, in_channels, out_channels, kernel, *, stride=1, padding=0, weight=None, bias=None) -> LayerSpec:
    kh, kw = (kernel, kernel) if isinstance(kernel, int) else tuple(kernel)
    params = {}
    if weight is not None:
        params["weight"] = as_tensor(weight, (out_channels, in_channels, kh, kw))
    if bias is not None:
        params["bias"] = as_tensor(bias, (out_channels,))
    attrs = dict(in_channels=in_channels, out_channels=out_channels, kernel=[kh, kw], stride=stride, padding=padding)
    return LayerSpec(name, LayerKind.CONV2D, attrs, params)


def fully_connected(name, in_features, out_features, *, weight=None, bias=None) -> LayerSpec:
    params = {}
    if weight is not None:
        params["weight"] = as_tensor(weight, (out_features, in_features))
    if bias is not None:
        params["bias"] = as_tensor(bias, (out_features,))
    return LayerSpec(name, LayerKind.FULLY_CONNECTED, dict(in_features=in_features, out_features=out_features), params)


def batchnorm(name, scale, shift, running_mean, running_var, epsilon=1e-5) -> LayerSpec:
    n = len(np.ravel(scale))
    params = {
        k: as_tensor(v, (n,))
        for k, v in zip(_BN_PARAMS, (scale, shift, running_mean, running_var))
    }
    return LayerSpec(name, LayerKind.BATCHNORM, dict(num_features=n, epsilon=float(epsilon)), params)


def relu(name) -> LayerSpec:
    return LayerSpec(name, LayerKind.RELU)


def flatten(name) -> LayerSpec:
    return LayerSpec(name, LayerKind.FLATTEN)


def maxpool(name, window, stride=None) -> LayerSpec:
    return LayerSpec(name, LayerKind.MAXPOOL, dict(window=window, stride=stride or window))


def avgpool(name, window, stride=None) -> LayerSpec:
    return LayerSpec(name, LayerKind.AVGPOOL, dict(window=window, stride=stride or window))


def _conv_out(size, k, stride, pad):
    out = (size + 2 * pad - k) // stride + 1
    if out < 1:
        raise ValueError
    return out


def layer_output_shape(layer: LayerSpec, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    """Shape inference for one layer (per-sample shapes, no batch dim)."""
    a = layer.attrs
    bad = ShapeMismatchError(f"layer {layer.name!r} ({layer.kind.value}) cannot take input shape {in_shape}")
    try:
        if layer.kind is LayerKind.CONV2D:
            if len(in_shape) != 3 or in_shape[0] != a["in_channels"]:
                raise bad
            kh, kw = a["kernel"]
            return (
                a["out_channels"],
                _conv_out(in_shape[1], kh, a["stride"], a["padding"]),
                _conv_out(in_shape[2], kw, a["stride"], a["padding"]),
            )
        if layer.kind is LayerKind.FULLY_CONNECTED:
            if in_shape != (a["in_features"],):
                raise bad
            return (a["out_features"],)
        if layer.kind is LayerKind.BATCHNORM:
            if in_shape[0] != a["num_features"]:
                raise bad
            return in_shape
        if layer.kind in (LayerKind.MAXPOOL, LayerKind.AVGPOOL):
            if len(in_shape) != 3:
                raise bad
            w, s = a["window"], a["stride"]
            return (in_shape[0], _conv_out(in_shape[1], w, s, 0), _conv_out(in_shape[2], w, s, 0))
        if layer.kind is LayerKind.FLATTEN:
            return (math.prod(in_shape),)
        return in_shape
    except ValueError:
        raise bad from None


def _expected_param_shapes(layer: LayerSpec) -> dict[str, tuple[int, ...]]:
    a = layer.attrs
    if layer.kind is LayerKind.CONV2D:
        kh, kw = a["kernel"]
        return {"weight": (a["out_channels"], a["in_channels"], kh, kw), "bias": (a["out_channels"],)}
    if layer.kind is LayerKind.FULLY_CONNECTED:
        return {"weight": (a["out_features"], a["in_features"]), "bias": (a["out_features"],)}
    if layer.kind is LayerKind.BATCHNORM:
        return {k: (a["num_features"],) for k in _BN_PARAMS}
    return {}


def validate_layer(layer: LayerSpec) -> None:
    missing = [k for k in _ATTRS[layer.kind] if k not in layer.attrs]
    if missing:
        raise ModelError(f"layer {layer.name!r} missing attributes {missing}")
    expected = _expected_param_shapes(layer)
    required = set(expected) - {"bias"}
    for name in required:
        if name not in layer.params:
            raise ModelError(f"layer {layer.name!r} missing parameter {name!r}")
    for name, tensor in layer.params.items():
        if name not in expected:
            raise ModelError(f"layer {layer.name!r} has unexpected parameter {name!r}")
        if tuple(tensor.shape) != expected[name]:
            raise ShapeMismatchError(
                f"layer {layer.name!r}: {name} shape {tuple(tensor.shape)} != expected {expected[name]}"
            )


@dataclass(frozen=True)
class Model:
    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        self.infer_shapes()

    def infer_shapes(self) -> list[tuple[int, ...]]:
        """Validate the chain and return each layer's output shape."""
        seen = set()
        shape = self.input_shape
        if not shape or any(d < 1 for d in shape):
            raise ShapeMismatchError(f"invalid input shape {shape}")
        shapes = []
        for layer in self.layers:
            if layer.name in seen:
                raise ModelError(f"duplicate layer name {layer.name!r}")
            seen.add(layer.name)
            validate_layer(layer)
            shape = layer_output_shape(layer, shape)
            shapes.append(shape)
        return shapes

    @property
    def quantizable_layers(self) -> list[LayerSpec]:
        return [layer for layer in self.layers if layer.quantizable]

    def layer(self, name: str) -> LayerSpec:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)


def count_params(model: Model) -> dict[str, int]:
    """Weight plus bias element counts per conv / fully-connected layer."""
    return {
        layer.name: sum(int(t.size) for t in layer.params.values())
        for layer in model.quantizable_layers
    }


def count_macs(model: Model) -> dict[str, int]:
    """Multiply-accumulates per sample for each conv / fully-connected layer."""
    macs = {}
    for layer, out_shape in zip(model.layers, model.infer_shapes()):
        if layer.quantizable:
            w = layer.weight
            macs[layer.name] = int(w.size // w.shape[0] * math.prod(out_shape))
    return macs


def _blob_name(layer: str, param: str) -> str:
    return f"{layer}.{param}.bin"


def save_model(model: Model, path: "str | os.PathLike") -> Path:
    """Write ``model.json`` and blobs into directory ``path`` (or next to a ``.json`` path)."""
    path = Path(path)
    manifest_path = path if path.suffix == ".json" else path / MANIFEST_NAME
    root = manifest_path.parent
    root.mkdir(parents=True, exist_ok=True)
    layers = []
    for layer in model.layers:
        entry = {"name": layer.name, "kind": layer.kind.value, **dict(layer.attrs)}
        if layer.params:
            entry["params"] = {}
            for pname, tensor in layer.params.items():
                fname = _blob_name(layer.name, pname)
                (root / fname).write_bytes(np.ascontiguousarray(tensor, dtype=BLOB_DTYPE).tobytes())
                entry["params"][pname] = {"file": fname, "shape": list(tensor.shape)}
        layers.append(entry)
    doc = {"version": MANIFEST_VERSION, "input_shape": list(model.input_shape), "layers": layers}
    manifest_path.write_text(json.dumps(doc, indent=2) + "\n")
    return manifest_path


def read_blob(path: "str | os.PathLike", shape=None) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingBlobError(f"missing tensor blob {path}")
    raw = path.read_bytes()
    if len(raw) % BLOB_DTYPE.itemsize:
        raise ShapeMismatchError(f"blob {path} size {len(raw)} is not a multiple of 4 bytes")
    data = np.frombuffer(raw, dtype=BLOB_DTYPE)
    if shape is not None and data.size != math.prod(shape):
        raise ShapeMismatchError(f"blob {path} holds {data.size} values, shape {list(shape)} needs {math.prod(shape)}")
    return data if shape is None else data.reshape(shape)


def write_blob(path: "str | os.PathLike", data) -> None:
    Path(path).write_bytes(np.ascontiguousarray(data, dtype=BLOB_DTYPE).tobytes())


def load_model(path: "str | os.PathLike") -> Model:
    path = Path(path)
    manifest_path = path / MANIFEST_NAME if path.is_dir() else path
    if not manifest_path.is_file():
        raise MissingBlobError(f"manifest not found: {manifest_path}")
    try:
        doc = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"cannot parse {manifest_path}: {exc}") from exc
    if doc.get("version") != MANIFEST_VERSION:
        raise ModelError(f"unsupported manifest version {doc.get('version')!r}")
    layers = []
    try:
        for entry in doc["layers"]:
            entry = dict(entry)
            name = entry.pop("name")
            kind = LayerKind(entry.pop("kind"))
            param_specs = entry.pop("params", {})
            params = {}
            for pname, spec in param_specs.items():
                try:
                    data = read_blob(manifest_path.parent / spec["file"], spec["shape"])
                except ShapeMismatchError as exc:
                    raise ShapeMismatchError(f"layer {name!r}: {exc}") from None
                params[pname] = as_tensor(data, spec["shape"])
            layers.append(LayerSpec(name, kind, entry, params))
        return Model(tuple(layers), tuple(doc["input_shape"]))
    except (KeyError, TypeError) as exc:
        raise ModelError(f"malformed manifest {manifest_path}: {exc!r}") from exc


def fold_batchnorm(model: Model) -> Model:
    """Absorb every BatchNorm into the conv / fully-connected layer before it."""
    out: list[LayerSpec] = []
    for layer in model.layers:
        if layer.kind is not LayerKind.BATCHNORM:
            out.append(layer)
            continue
        if not out or not out[-1].quantizable:
            raise StructureError(f"batchnorm {layer.name!r} has no conv/fully-connected predecessor")
        prev = out.pop()
        p = {k: layer.params[k].astype(np.float64) for k in _BN_PARAMS}
        gain = p["scale"] / np.sqrt(p["running_var"] + layer.attrs["epsilon"])
        w = prev.weight.astype(np.float64)
        b = prev.bias.astype(np.float64) if prev.bias is not None else np.zeros(w.shape[0])
        new_w = w * gain.reshape((-1,) + (1,) * (w.ndim - 1))
        new_b = (b - p["running_mean"]) * gain + p["shift"]
        params = dict(prev.params, weight=as_tensor(new_w), bias=as_tensor(new_b))
        out.append(replace(prev, params=params))
    return Model(tuple(out), model.input_shape)
