"""Float and simulated fixed-point forward passes, calibration statistics."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from fxquant.netir import (
    LayerKind,
    LayerSpec,
    Model,
    ShapeMismatchError,
    StructureError,
    as_tensor,
    read_blob,
)
from fxquant.quantizer import (
    DegenerateStatsError,
    Distribution,
    QFormat,
    TensorStats,
    derive_qformat,
    measure_sqnr,
    quantize,
)

PLAN_SCHEMA = 1


class PlanError(ValueError):
    """Quantization plan does not match the model."""


def weight_key(layer: str) -> str:
    return f"{layer}.weight"


def bias_key(layer: str) -> str:
    return f"{layer}.bias"


def act_key(layer: str) -> str:
    return f"{layer}.act"


INPUT_KEY = "input"


@dataclass(frozen=True)
class QuantizationPlan:
    """Per-layer formats.  Biases without an entry reuse the weight format."""

    weights: Mapping[str, QFormat]
    activations: Mapping[str, QFormat]
    biases: Mapping[str, QFormat] = field(default_factory=dict)
    input: QFormat | None = None

    def check_covers(self, model: Model) -> None:
        names = {layer.name for layer in model.quantizable_layers}
        for label, table in (("weight", self.weights), ("activation", self.activations)):
            missing = names - set(table)
            extra = set(table) - names
            if missing or extra:
                raise PlanError(
                    f"plan {label} formats do not cover the model: missing {sorted(missing)}, unknown {sorted(extra)}"
                )
        extra = set(self.biases) - names
        if extra:
            raise PlanError(f"plan has bias formats for unknown layers {sorted(extra)}")

    def formats(self) -> dict[str, str]:
        """Flat tensor-name -> ``Qb.n`` mapping."""
        out = {}
        if self.input is not None:
            out[INPUT_KEY] = str(self.input)
        for name, fmt in self.weights.items():
            out[weight_key(name)] = str(fmt)
            if name in self.biases:
                out[bias_key(name)] = str(self.biases[name])
            out[act_key(name)] = str(self.activations[name])
        return out

    @classmethod
    def from_formats(cls, formats: Mapping[str, str]) -> "QuantizationPlan":
        weights, acts, biases, inp = {}, {}, {}, None
        for key, text in formats.items():
            fmt = QFormat.parse(text)
            if key == INPUT_KEY:
                inp = fmt
                continue
            layer, _, kind = key.rpartition(".")
            table = {"weight": weights, "act": acts, "bias": biases}.get(kind)
            if table is None or not layer:
                raise PlanError(f"unrecognized plan entry {key!r}")
            table[layer] = fmt
        return cls(weights, acts, biases, inp)


def save_plan(plan: QuantizationPlan, path: "str | os.PathLike") -> None:
    doc = {"schema": PLAN_SCHEMA, "formats": plan.formats()}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_plan(path: "str | os.PathLike") -> QuantizationPlan:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != PLAN_SCHEMA:
        raise PlanError(f"unsupported plan schema {doc.get('schema')!r}")
    return QuantizationPlan.from_formats(doc["formats"])


def _conv2d(x, w, bias, stride, padding):
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    kh, kw = w.shape[2:]
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (N, C, Ho, Wo, kh, kw) x (O, C, kh, kw) -> (N, Ho, Wo, O)
    out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.reshape(1, -1, 1, 1)
    return np.ascontiguousarray(out)


def _pool(x, window, stride, reduce):
    windows = sliding_window_view(x, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    return reduce(windows, axis=(4, 5))


def _apply(layer: LayerSpec, x, weight=None, bias=None):
    a = layer.attrs
    kind = layer.kind
    if kind is LayerKind.CONV2D:
        return _conv2d(x, weight, bias, a["stride"], a["padding"])
    if kind is LayerKind.FULLY_CONNECTED:
        out = x @ weight.T
        return out + bias if bias is not None else out
    if kind is LayerKind.RELU:
        return np.maximum(x, 0.0)
    if kind is LayerKind.BATCHNORM:
        p = {k: v.astype(np.float64) for k, v in layer.params.items()}
        shape = (1, -1) + (1,) * (x.ndim - 2)
        gain = p["scale"] / np.sqrt(p["running_var"] + a["epsilon"])
        return (x - p["running_mean"].reshape(shape)) * gain.reshape(shape) + p["shift"].reshape(shape)
    if kind is LayerKind.MAXPOOL:
        return _pool(x, a["window"], a["stride"], np.max)
    if kind is LayerKind.AVGPOOL:
        return _pool(x, a["window"], a["stride"], np.mean)
    if kind is LayerKind.FLATTEN:
        return x.reshape(x.shape[0], -1)
    raise StructureError(f"unsupported layer kind {kind}")


def _as_batch(model: Model, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.shape == model.input_shape:
        x = x[np.newaxis]
    if x.shape[1:] != model.input_shape:
        raise ShapeMismatchError(f"batch shape {x.shape} does not match model input {model.input_shape}")
    return x


def forward_float(model: Model, batch) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Run the model in float64; returns the output and the pre-activation trace.

    The trace holds every conv / fully-connected layer output, keyed by layer
    name, before any following activation.  A batch without a leading batch
    dimension is treated as a batch of one.
    """
    x = _as_batch(model, batch)
    trace = {}
    for layer in model.layers:
        if layer.quantizable:
            bias = layer.bias.astype(np.float64) if layer.bias is not None else None
            x = _apply(layer, x, layer.weight.astype(np.float64), bias)
            trace[layer.name] = x
        else:
            x = _apply(layer, x)
    return x, trace


def forward_quantized(model: Model, batch, plan: QuantizationPlan) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Simulated fixed-point forward pass.

    Weights and biases are quantized once per layer, the input when the plan
    has an input format, and each conv / fully-connected output right after
    accumulation.  Accumulation itself stays in float64.
    """
    plan.check_covers(model)
    if any(layer.kind is LayerKind.BATCHNORM for layer in model.layers):
        raise StructureError("fold batch-norm layers before quantized simulation")
    x = _as_batch(model, batch)
    if plan.input is not None:
        x = quantize(x, plan.input)
    trace = {}
    for layer in model.layers:
        if not layer.quantizable:
            x = _apply(layer, x)
            continue
        wfmt = plan.weights[layer.name]
        weight = quantize(layer.weight, wfmt)
        bias = None
        if layer.bias is not None:
            bias = quantize(layer.bias, plan.biases.get(layer.name, wfmt))
        x = quantize(_apply(layer, x, weight, bias), plan.activations[layer.name])
        trace[layer.name] = x
    return x, trace


def collect_stats(model: Model, calibration_batches: Iterable) -> dict[str, TensorStats]:
    """Statistics for the input, every weight / bias tensor and every pre-activation.

    Activation statistics are merged batch by batch.
    """
    stats: dict[str, TensorStats] = {}
    for layer in model.quantizable_layers:
        stats[weight_key(layer.name)] = TensorStats.from_values(layer.weight)
        if layer.bias is not None:
            stats[bias_key(layer.name)] = TensorStats.from_values(layer.bias)
    seen = False
    for batch in calibration_batches:
        x = _as_batch(model, batch)
        seen = True
        _, trace = forward_float(model, x)
        partial = {INPUT_KEY: TensorStats.from_values(x)}
        partial.update({act_key(name): TensorStats.from_values(v) for name, v in trace.items()})
        for key, st in partial.items():
            stats[key] = stats[key].merge(st) if key in stats else st
    if not seen:
        raise ValueError("calibration set is empty")
    return stats


def _per_layer(value, names, what) -> dict[str, int]:
    if isinstance(value, Mapping):
        missing = set(names) - set(value)
        if missing:
            raise PlanError(f"no {what} bit-width for layers {sorted(missing)}")
        return {n: int(value[n]) for n in names}
    return {n: int(value) for n in names}


def make_plan(
    model: Model,
    stats: Mapping[str, TensorStats],
    weight_bits,
    act_bits,
    *,
    input_bits: int | None = None,
    dist: "Distribution | str | Mapping[str, Distribution | str]" = Distribution.GAUSSIAN,
    xi_multiplier: float = 3.0,
) -> QuantizationPlan:
    """Derive every tensor's Q-format from calibration statistics.

    ``weight_bits`` / ``act_bits`` are an int or a layer-name mapping.  ``dist``
    may map the tensor classes ``weight``, ``activation`` and ``input`` to
    distributions.  Biases get their own fractional bits at the weight
    bit-width.  All degenerate tensors are reported together.
    """
    if isinstance(dist, Mapping):
        dists = {k: Distribution.parse(dist.get(k, Distribution.GAUSSIAN)) for k in ("weight", "activation", "input")}
    else:
        d = Distribution.parse(dist)
        dists = {"weight": d, "activation": d, "input": d}
    names = [layer.name for layer in model.quantizable_layers]
    wbits = _per_layer(weight_bits, names, "weight")
    abits = _per_layer(act_bits, names, "activation")
    failures = []

    def fmt_for(key, bits, klass):
        if key not in stats:
            raise PlanError(f"no statistics for tensor {key!r}")
        try:
            return derive_qformat(stats[key], bits, dists[klass], xi_multiplier)
        except DegenerateStatsError:
            failures.append(key)
            return None

    weights, acts, biases = {}, {}, {}
    for name in names:
        weights[name] = fmt_for(weight_key(name), wbits[name], "weight")
        acts[name] = fmt_for(act_key(name), abits[name], "activation")
        if model.layer(name).bias is not None:
            st = stats.get(bias_key(name))
            # all-equal biases (e.g. zeros) fall back to the weight format
            if st is not None and st.std_dev > 0:
                biases[name] = fmt_for(bias_key(name), wbits[name], "weight")
    inp = fmt_for(INPUT_KEY, input_bits, "input") if input_bits is not None else None
    if failures:
        raise DegenerateStatsError(f"degenerate statistics for tensors: {', '.join(failures)}")
    return QuantizationPlan(weights, acts, biases, inp)


def measure_layer_sqnr(model: Model, batch, plan: QuantizationPlan) -> dict[str, float]:
    """Measured SQNR (dB) of every pre-activation, quantized vs float."""
    _, ref = forward_float(model, batch)
    _, got = forward_quantized(model, batch, plan)
    return {name: measure_sqnr(ref[name], got[name]) for name in ref}


def quantize_model(model: Model, plan: QuantizationPlan) -> Model:
    """Copy of ``model`` whose weights and biases hold their quantized values."""
    plan.check_covers(model)
    layers = []
    for layer in model.layers:
        if layer.quantizable:
            wfmt = plan.weights[layer.name]
            params = {"weight": as_tensor(quantize(layer.weight, wfmt))}
            if layer.bias is not None:
                params["bias"] = as_tensor(quantize(layer.bias, plan.biases.get(layer.name, wfmt)))
            layer = replace(layer, params=params)
        layers.append(layer)
    return Model(tuple(layers), model.input_shape)


def batches_from_blobs(model: Model, paths: Iterable["str | os.PathLike"]) -> list[np.ndarray]:
    """Read calibration blobs; each holds one or more row-major input samples."""
    per_sample = math.prod(model.input_shape)
    out = []
    for path in paths:
        data = read_blob(path)
        if data.size == 0 or data.size % per_sample:
            raise ShapeMismatchError(
                f"calibration blob {path} holds {data.size} values, not a multiple of input size {per_sample}"
            )
        out.append(data.reshape((-1,) + model.input_shape).astype(np.float64))
    return out
