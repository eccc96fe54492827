"""Glue between models, allocation problems and SQNR predictions."""
from __future__ import annotations

from typing import Mapping

from fxquant.allocator import AllocationProblem, BitAllocation
from fxquant.engine import QuantizationPlan, act_key, weight_key
from fxquant.netir import LayerKind, Model, count_macs, count_params
from fxquant.sqnr import QuantStep, SqnrPrediction, predict_network_sqnr

OBJECTIVES = ("size", "compute")


def build_problem(
    model: Model,
    *,
    kappa: float = 3.0,
    min_output_sqnr_db: float | None = None,
    max_total_cost: float | None = None,
    objective: str = "size",
    fc_bits: int = 16,
    act_bits_pinned: int = 16,
    min_bits: int = 2,
    max_bits: int = 16,
) -> AllocationProblem:
    """One weight step and one activation step per conv / fully-connected layer.

    ``size``: rho is the weight count, activations are pinned.  ``compute``:
    rho is the layer's MAC count for both its weight and activation step.
    Fully-connected weights (and activations) are pinned to ``fc_bits``.
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}")
    params = count_params(model)
    macs = count_macs(model)
    labels, rhos, pinned = [], [], {}
    for layer in model.quantizable_layers:
        fc = layer.kind is LayerKind.FULLY_CONNECTED
        w, a = weight_key(layer.name), act_key(layer.name)
        if objective == "size":
            labels += [w, a]
            rhos += [float(params[layer.name]), 0.0]
            pinned[a] = fc_bits if fc else act_bits_pinned
        else:
            labels += [w, a]
            rhos += [float(macs[layer.name])] * 2
            if fc:
                pinned[a] = fc_bits
        if fc:
            pinned[w] = fc_bits
    if len(pinned) == len(labels):
        raise ValueError("model has no conv layers to optimize")
    return AllocationProblem(
        tuple(labels), tuple(rhos), kappa, min_output_sqnr_db, max_total_cost, min_bits, max_bits, pinned
    )


def model_bits(model: Model, weight_bits: Mapping[str, int]) -> int:
    """Storage for all weights (and biases) at their layer bit-widths."""
    params = count_params(model)
    return sum(params[name] * int(weight_bits[name]) for name in params)


def split_allocation(model: Model, alloc: BitAllocation) -> tuple[dict[str, int], dict[str, int]]:
    bits = alloc.as_dict()
    names = [layer.name for layer in model.quantizable_layers]
    return {n: bits[weight_key(n)] for n in names}, {n: bits[act_key(n)] for n in names}


def predict_for_bits(
    model: Model,
    weight_bits: Mapping[str, int],
    act_bits: Mapping[str, int],
    kappa: float,
    input_bits: int | None = None,
) -> SqnrPrediction:
    layers = [
        (
            layer.name,
            [
                QuantStep(weight_key(layer.name), int(weight_bits[layer.name]), kappa),
                QuantStep(act_key(layer.name), int(act_bits[layer.name]), kappa),
            ],
        )
        for layer in model.quantizable_layers
    ]
    inp = QuantStep("input", int(input_bits), kappa) if input_bits is not None else None
    return predict_network_sqnr(layers, inp)


def predict_for_plan(model: Model, plan: QuantizationPlan, kappa: float, with_input: bool = True) -> SqnrPrediction:
    return predict_for_bits(
        model,
        {n: f.bitwidth for n, f in plan.weights.items()},
        {n: f.bitwidth for n, f in plan.activations.items()},
        kappa,
        plan.input.bitwidth if (with_input and plan.input is not None) else None,
    )
