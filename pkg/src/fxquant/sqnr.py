"""Theoretical SQNR through a quantized network.

Every quantization step (input, a layer's weights, a layer's activations)
contributes ``kappa * bits`` dB; step SQNRs compose as a harmonic mean, so
inverse linear SQNRs add.  Biases are not modelled.  The composition fits
convolutional layers better than fully-connected ones.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from fxquant.quantizer import predict_sqnr_db

DEFAULT_DCN_KAPPA = 3.0
DEFAULT_GAUSSIAN_KAPPA = 5.0


@dataclass(frozen=True)
class QuantStep:
    label: str
    bitwidth: int
    kappa: float = DEFAULT_DCN_KAPPA
    rho: float = 0.0

    def __post_init__(self):
        if self.bitwidth < 1:
            raise ValueError(f"step {self.label!r}: bitwidth must be >= 1")
        if not self.kappa > 0:
            raise ValueError(f"step {self.label!r}: kappa must be positive")
        if self.rho < 0:
            raise ValueError(f"step {self.label!r}: rho must be non-negative")

    @property
    def sqnr_db(self) -> float:
        return predict_sqnr_db(self.bitwidth, self.kappa)


@dataclass(frozen=True)
class SqnrPrediction:
    per_layer: Mapping[str, float]
    output: float


def db_to_linear(db: float) -> float:
    return math.inf if db == math.inf else 10.0 ** (db / 10.0)


def linear_to_db(value: float) -> float:
    return math.inf if value == math.inf else 10.0 * math.log10(value)


def inverse_sqnr(db: float) -> float:
    """Noise-to-signal ratio of one step; zero for a noiseless step."""
    return 0.0 if db == math.inf else 10.0 ** (-db / 10.0)


def compose_sqnr(steps_db: Iterable[float]) -> float:
    """Harmonic-mean composition of per-step SQNRs (dB in, dB out)."""
    steps_db = list(steps_db)
    if not steps_db:
        raise ValueError("compose_sqnr needs at least one step")
    total = 0.0
    for db in steps_db:
        if math.isnan(db) or db == -math.inf:
            raise ValueError(f"invalid step SQNR {db!r}")
        total += inverse_sqnr(db)
    if total == 0.0:
        return math.inf
    return -10.0 * math.log10(total)


def predict_network_sqnr(
    layers: "Mapping[str, Sequence[QuantStep]] | Sequence[tuple[str, Sequence[QuantStep]]]",
    input_step: QuantStep | None = None,
) -> SqnrPrediction:
    """Cumulative prediction after each layer, in layer order.

    ``layers`` maps layer names to their steps (weights then activations).
    """
    items = list(layers.items()) if isinstance(layers, Mapping) else list(layers)
    if not items:
        raise ValueError("no layers to predict")
    running = [input_step.sqnr_db] if input_step is not None else []
    per_layer = {}
    for name, steps in items:
        running.extend(step.sqnr_db for step in steps)
        per_layer[name] = compose_sqnr(running) if running else math.inf
    return SqnrPrediction(per_layer, per_layer[items[-1][0]])


def estimate_kappa(measured: Iterable[tuple[int, float]]) -> float:
    """Least-squares slope (with intercept) of SQNR in dB against bit-width."""
    pairs = [(float(b), float(s)) for b, s in measured]
    if len({b for b, _ in pairs}) < 2:
        raise ValueError("estimate_kappa needs at least two distinct bit-widths")
    bits, sqnr = np.array(pairs).T
    return float(np.polyfit(bits, sqnr, 1)[0])
