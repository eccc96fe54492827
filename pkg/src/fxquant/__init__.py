"""Post-training fixed-point quantization toolkit."""
from fxquant.allocator import (
    AllocationProblem,
    BitAllocation,
    InfeasibleError,
    equal_allocation,
    exhaustive_allocate,
    relative_bitwidths,
    solve_waterfilling,
    sweep_tradeoff,
)
from fxquant.engine import (
    QuantizationPlan,
    collect_stats,
    forward_float,
    forward_quantized,
    make_plan,
    measure_layer_sqnr,
)
from fxquant.netir import Model, count_params, fold_batchnorm, load_model, save_model
from fxquant.quantizer import (
    Distribution,
    QFormat,
    TensorStats,
    derive_qformat,
    measure_sqnr,
    optimal_step_size,
    predict_sqnr_db,
    quantize,
)
from fxquant.sqnr import QuantStep, compose_sqnr, estimate_kappa, predict_network_sqnr

__version__ = "0.1.0"

__all__ = [
    "AllocationProblem",
    "BitAllocation",
    "Distribution",
    "InfeasibleError",
    "Model",
    "QFormat",
    "QuantStep",
    "QuantizationPlan",
    "TensorStats",
    "collect_stats",
    "compose_sqnr",
    "count_params",
    "derive_qformat",
    "equal_allocation",
    "estimate_kappa",
    "exhaustive_allocate",
    "fold_batchnorm",
    "forward_float",
    "forward_quantized",
    "load_model",
    "make_plan",
    "measure_layer_sqnr",
    "measure_sqnr",
    "optimal_step_size",
    "predict_network_sqnr",
    "predict_sqnr_db",
    "quantize",
    "relative_bitwidths",
    "save_model",
    "solve_waterfilling",
    "sweep_tradeoff",
]
