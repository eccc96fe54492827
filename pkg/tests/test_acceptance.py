"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
"""
import math
import time

import numpy as np
import pytest

import oracles
from fxquant import fixtures, planning
from fxquant.allocator import (
    AllocationProblem,
    InfeasibleError,
    continuous_allocation,
    equal_allocation,
    exhaustive_allocate,
    relative_bitwidths,
    solve_waterfilling,
    sweep_tradeoff,
)
from fxquant.engine import collect_stats, forward_float, forward_quantized, make_plan, measure_layer_sqnr
from fxquant.netir import fold_batchnorm
from fxquant.quantizer import (
    QFormat,
    TensorStats,
    derive_qformat,
    least_squares_slope,
    measure_sqnr,
    optimal_step_size,
    quantize,
    relative_error,
)
from fxquant.sqnr import QuantStep, compose_sqnr
from test_netir import bn_reference, conv_bn_net

CIFAR10_CONV_WEIGHTS = [6912, 294912, 294912, 589824, 589824, 1605632]
ALEXNET_CONV_WEIGHTS = [14112, 384000, 276480, 331776, 276480]
PUBLISHED_STEPS = {
    "uniform": (1.0, 0.5, 0.25, 0.125),
    "gaussian": (1.596, 0.996, 0.586, 0.335),
    "laplacian": (1.414, 1.087, 0.731, 0.456),
    "gamma": (1.154, 1.060, 0.796, 0.540),
}


def test_01_cifar10_offsets(record):
    t0 = time.perf_counter()
    offsets = relative_bitwidths(CIFAR10_CONV_WEIGHTS, 3.0)
    elapsed = time.perf_counter() - t0
    ok = offsets == [0, -5, -5, -6, -6, -8] and elapsed < 1.0
    record(1, "CIFAR-10 relative bit-widths", ok, f"offsets={offsets} in {elapsed:.3f}s")
    assert ok


def test_02_alexnet_offsets(record):
    t0 = time.perf_counter()
    offsets = relative_bitwidths(ALEXNET_CONV_WEIGHTS, 3.0)
    elapsed = time.perf_counter() - t0
    ok = offsets == [0, -5, -4, -5, -4] and elapsed < 1.0
    record(2, "AlexNet relative bit-widths", ok, f"offsets={offsets} in {elapsed:.3f}s")
    assert ok


@pytest.mark.slow
def test_03_step_size_optimality(record):
    t0 = time.perf_counter()
    worst, worst_at = 0.0, None
    for i, (dist, steps) in enumerate(PUBLISHED_STEPS.items()):
        for bits, published in enumerate(steps, start=1):
            assert optimal_step_size(dist, bits) == published
            scanned = oracles.mc_optimal_step(dist, bits, n=1_000_000, seed=100 * i + bits)
            dev = abs(scanned - published) / published
            if dev > worst:
                worst, worst_at = dev, (dist, bits)
    elapsed = time.perf_counter() - t0
    ok = worst <= 0.02 and elapsed < 120
    record(3, "Monte Carlo step-size scan", ok, f"worst deviation {worst:.2%} at {worst_at}, {elapsed:.1f}s")
    assert ok


def test_04_efficiency_slopes(record):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    bits = range(2, 9)
    g = rng.standard_normal(1_000_000)
    g_stats = TensorStats.from_values(g)
    # Gaussian formats sized at xi = sigma, so the step is exactly the tabulated one
    g_sqnr = [measure_sqnr(g, quantize(g, derive_qformat(g_stats, b, "gaussian", 1.0))) for b in bits]
    u = rng.uniform(-1.0, 1.0, 1_000_000)
    u_stats = TensorStats.from_values(u)
    u_sqnr = [measure_sqnr(u, quantize(u, derive_qformat(u_stats, b, "uniform"))) for b in bits]
    g_slope, u_slope = least_squares_slope(bits, g_sqnr), least_squares_slope(bits, u_sqnr)
    elapsed = time.perf_counter() - t0
    ok = abs(g_slope - 5.0) <= 1.0 and abs(u_slope - 6.02) <= 0.5 and elapsed < 60
    record(4, "quantization efficiency slopes", ok, f"gaussian {g_slope:.2f}, uniform {u_slope:.2f} dB/bit")
    assert ok


def test_05_harmonic_composition(record):
    two = compose_sqnr([20.0, 20.0])
    base = compose_sqnr([QuantStep("s", 10).sqnr_db] * 5)
    doubled = compose_sqnr([QuantStep("s", 10).sqnr_db] * 10)
    recovered = compose_sqnr([QuantStep("s", 11).sqnr_db] * 10)
    loss = base - doubled
    ok = abs(two - 16.99) <= 0.01 and abs(loss - 3.01) <= 0.01 and abs(recovered - base) <= 0.1
    record(5, "harmonic-mean composition", ok, f"[20,20]->{two:.3f} dB, loss {loss:.3f} dB, 1 bit back {recovered - base:+.3f} dB")
    assert ok


def test_06_kkt_optimality(record):
    worst_const, worst_eq = 0.0, 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        rhos = 10.0 ** rng.uniform(3.0, 6.0, 6)
        target = float(rng.uniform(20.0, 40.0))
        p = AllocationProblem(tuple(f"s{i}" for i in range(6)), tuple(rhos), 3.0, target, min_bits=1, max_bits=32)
        b = continuous_allocation(p)
        assert np.all((b > 1) & (b < 32)), "bounds must stay inactive for this check"
        weighted = rhos * 10.0 ** (3.0 * b / 10.0)
        worst_const = max(worst_const, float(np.max(np.abs(weighted / weighted.mean() - 1.0))))
        budget = 10.0 ** (-target / 10.0)
        worst_eq = max(worst_eq, abs(p.noise(b) - budget) / budget)
    ok = worst_const <= 1e-9 and worst_eq <= 1e-9
    record(6, "water-filling KKT conditions", ok, f"rho*gamma spread {worst_const:.1e}, constraint {worst_eq:.1e}")
    assert ok


def test_07_oracle_equivalence(record):
    t0 = time.perf_counter()
    worst, below = 0.0, 0
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        n = int(rng.integers(2, 6))
        rhos = tuple(float(r) for r in rng.uniform(1.0, 1000.0, n))
        # feasible by construction: every step at 10 bits gives 30 - 10log10(n) dB
        target = float(rng.uniform(5.0, 30.0 - 10.0 * math.log10(n)))
        p = AllocationProblem(tuple(f"s{i}" for i in range(n)), rhos, 3.0, target, min_bits=2, max_bits=10)
        wf, best = solve_waterfilling(p), exhaustive_allocate(p, (2, 10))
        below += wf.total_cost < best.total_cost - 1e-9
        worst = max(worst, (wf.total_cost - best.total_cost) / max(rhos))
    elapsed = time.perf_counter() - t0
    ok = below == 0 and worst <= 1.0 and elapsed < 120
    record(7, "rounded water-filling vs exhaustive oracle", ok, f"worst excess {worst:.2f} max-rho, {below} below oracle")
    assert ok


def test_08_prediction_vs_measurement(record):
    t0 = time.perf_counter()
    model = fixtures.chain_net(seed=8)
    x = fixtures.gaussian_inputs(model, 32, seed=8)
    names = [layer.name for layer in model.quantizable_layers]
    wbits = dict(zip(names, (16 + o for o in (-5, -5, -6, -6, -8))))
    abits = dict.fromkeys(names, 16)
    stats = collect_stats(model, [x])
    plan = make_plan(model, stats, wbits, abits, xi_multiplier=1.0)
    measured = measure_layer_sqnr(model, x, plan)
    predicted = planning.predict_for_bits(model, wbits, abits, kappa=5.0).per_layer
    m = [measured[n] for n in names]
    p = [predicted[n] for n in names]
    mono = all(b < a for a, b in zip(m, m[1:])) and all(b < a for a, b in zip(p, p[1:]))
    gap = max(abs(predicted[n] - measured[n]) for n in names if wbits[n] >= 8)
    elapsed = time.perf_counter() - t0
    ok = mono and gap <= 6.0 and elapsed < 120
    detail = "measured " + "/".join(f"{v:.1f}" for v in m) + ", predicted " + "/".join(f"{v:.1f}" for v in p)
    record(8, "predicted vs measured trend", ok, f"{detail}, max gap {gap:.2f} dB")
    assert ok


def test_09_batchnorm_folding(record):
    worst = 0.0
    for seed in range(10):
        model = conv_bn_net(seed, bias=seed % 2 == 0)
        x = np.random.default_rng(500 + seed).standard_normal((8, 3, 6, 6))
        worst = max(worst, relative_error(forward_float(fold_batchnorm(model), x)[0], bn_reference(model, x)))
    ok = worst <= 1e-5
    record(9, "batch-norm folding", ok, f"worst relative error {worst:.1e}")
    assert ok


def test_10_wide_format_convergence(record):
    worst = 0.0
    models = [fixtures.build(kind) for kind in fixtures.FIXTURES]
    models += [fold_batchnorm(conv_bn_net(s)) for s in range(2)]
    for model in models:
        n = 1 if model.input_shape[-1] > 100 else 4
        x = fixtures.gaussian_inputs(model, n, seed=10)
        stats = collect_stats(model, [x])
        plan = make_plan(model, stats, 24, 24, input_bits=24)
        worst = max(worst, relative_error(forward_quantized(model, x, plan)[0], forward_float(model, x)[0]))
    rng = np.random.default_rng(10)
    values = rng.standard_normal(1_000_000) * 10.0 ** rng.uniform(-3, 3, 1_000_000)
    idempotent = True
    for fmt in (QFormat(1, 0), QFormat(4, 2), QFormat(8, 3), QFormat(16, 10), QFormat(24, 12), QFormat(32, 8)):
        once = quantize(values, fmt)
        idempotent &= bool(np.array_equal(quantize(once, fmt), once))
    ok = worst <= 1e-4 and idempotent
    record(10, "24-bit convergence and idempotence", ok, f"worst relative error {worst:.1e}, idempotent={idempotent}")
    assert ok


def test_11_sweep_dominance(record):
    model = fixtures.cifar10_net()
    template = planning.build_problem(model, kappa=3.0, min_output_sqnr_db=0.0)
    targets = [float(t) for t in range(0, 42, 2)]
    rows = sweep_tradeoff(template, targets)
    sizes = {}
    for row in rows:
        if row.feasible:
            wbits, _ = planning.split_allocation(model, row.allocation)
            sizes[row.policy, row.target_sqnr_db] = planning.model_bits(model, wbits)
    matched = [t for t in targets if ("optimized", t) in sizes and ("equal", t) in sizes]
    dominated = all(sizes["optimized", t] <= sizes["equal", t] for t in matched)
    # constrained region: targets where the equal-bit model stays under 25 Mbit
    region = [t for t in matched if sizes["equal", t] < 25e6]
    gaps = {t: 1.0 - sizes["optimized", t] / sizes["equal", t] for t in region}
    best_t = max(gaps, key=gaps.get)

    # truncated instance: the first four conv layers, exhaustively searchable
    rhos = tuple(float(r) for r in CIFAR10_CONV_WEIGHTS[:4])
    oracle_ok, oracle_gap = True, 0.0
    for t in targets:
        p = AllocationProblem(("conv0", "conv1", "conv2", "conv3"), rhos, 3.0, t, min_bits=2, max_bits=13)
        try:
            wf, eq, best = solve_waterfilling(p), equal_allocation(p), exhaustive_allocate(p)
        except InfeasibleError:
            continue
        oracle_ok &= best.total_cost <= wf.total_cost <= min(eq.total_cost, best.total_cost + max(rhos))
        oracle_gap = max(oracle_gap, 1.0 - best.total_cost / eq.total_cost)
    ok = dominated and gaps[best_t] >= 0.2 and oracle_ok and oracle_gap >= 0.2
    record(
        11,
        "sweep dominance",
        ok,
        f"max gap {gaps[best_t]:.1%} at {best_t:g} dB "
        f"({sizes['optimized', best_t] / 1e6:.2f} vs {sizes['equal', best_t] / 1e6:.2f} Mbit), "
        f"truncated oracle gap {oracle_gap:.1%}",
    )
    assert ok
