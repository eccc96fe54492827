"""Cross-layer bit-width allocation.

With the linear model ``sqnr_db = kappa * bits`` the problem

    minimize  sum_i rho_i * bits_i   s.t.  sum_i 10**(-kappa*bits_i/10) <= 1/gamma_min

is convex in the per-step noise ratios and its solution keeps
``rho_i * gamma_i`` equal across steps (water-filling).  Box bounds clip the
water level per step; pinned steps only consume noise budget.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from fxquant.sqnr import compose_sqnr

DEFAULT_MIN_BITS = 2
DEFAULT_MAX_BITS = 16
MAX_EXHAUSTIVE_STEPS = 8
MAX_EXHAUSTIVE_WIDTH = 12


class InfeasibleError(ValueError):
    """No allocation inside the bounds meets the constraint."""


@dataclass(frozen=True)
class AllocationProblem:
    """Bit allocation over labelled steps with cost weights ``rhos``.

    Exactly one of ``min_output_sqnr_db`` / ``max_total_cost`` is set.  Steps
    listed in ``pinned`` keep their bit-width and are excluded from the
    optimization; they still count toward noise and cost.
    """

    labels: tuple[str, ...]
    rhos: tuple[float, ...]
    kappa: float = 3.0
    min_output_sqnr_db: float | None = None
    max_total_cost: float | None = None
    min_bits: int = DEFAULT_MIN_BITS
    max_bits: int = DEFAULT_MAX_BITS
    pinned: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "rhos", tuple(float(r) for r in self.rhos))
        object.__setattr__(self, "pinned", dict(self.pinned))
        if len(self.labels) != len(self.rhos) or not self.labels:
            raise ValueError("labels and rhos must be non-empty and the same length")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("step labels must be unique")
        if (self.min_output_sqnr_db is None) == (self.max_total_cost is None):
            raise ValueError("set exactly one of min_output_sqnr_db / max_total_cost")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not 1 <= self.min_bits <= self.max_bits:
            raise ValueError(f"invalid bit bounds [{self.min_bits}, {self.max_bits}]")
        unknown = set(self.pinned) - set(self.labels)
        if unknown:
            raise ValueError(f"pinned steps not in problem: {sorted(unknown)}")
        for label, rho in zip(self.labels, self.rhos):
            if label not in self.pinned and not rho > 0:
                raise ValueError(f"free step {label!r} needs rho > 0, got {rho}")
            if rho < 0:
                raise ValueError(f"step {label!r} has negative rho")

    @property
    def free(self) -> list[int]:
        return [i for i, label in enumerate(self.labels) if label not in self.pinned]

    def with_target(self, min_output_sqnr_db: float) -> "AllocationProblem":
        return AllocationProblem(
            self.labels, self.rhos, self.kappa, min_output_sqnr_db, None, self.min_bits, self.max_bits, self.pinned
        )

    def noise(self, bits: Sequence[float]) -> float:
        return float(sum(10.0 ** (-self.kappa * b / 10.0) for b in bits))

    def cost(self, bits: Sequence[float]) -> float:
        return float(sum(r * b for r, b in zip(self.rhos, bits)))

    def sqnr_db(self, bits: Sequence[float]) -> float:
        return compose_sqnr(self.kappa * b for b in bits)

    def feasible(self, bits: Sequence[float], rtol: float = 1e-12) -> bool:
        if self.min_output_sqnr_db is not None:
            budget = 10.0 ** (-self.min_output_sqnr_db / 10.0)
            return self.noise(bits) <= budget * (1.0 + rtol)
        return self.cost(bits) <= self.max_total_cost * (1.0 + rtol)


@dataclass(frozen=True)
class BitAllocation:
    labels: tuple[str, ...]
    continuous: tuple[float, ...]
    bits: tuple[int, ...]
    total_cost: float
    predicted_sqnr_db: float

    def as_dict(self) -> dict[str, int]:
        return dict(zip(self.labels, self.bits))


def _lam(bits, kappa):
    return 10.0 ** (-kappa * np.asarray(bits, dtype=np.float64) / 10.0)


def _continuous_sqnr(problem: AllocationProblem) -> np.ndarray:
    k = problem.kappa
    rho = np.array(problem.rhos)
    free = problem.free
    bits = np.array([float(problem.pinned.get(lbl, 0)) for lbl in problem.labels])
    pinned_idx = [i for i in range(len(bits)) if i not in free]
    budget = 10.0 ** (-problem.min_output_sqnr_db / 10.0) - float(_lam(bits[pinned_idx], k).sum())
    if budget <= 0:
        raise InfeasibleError(
            f"pinned steps {[problem.labels[i] for i in pinned_idx]} alone exceed the "
            f"{problem.min_output_sqnr_db:g} dB noise budget"
        )
    r = rho[free]
    lam_lo = _lam(problem.max_bits, k)  # most bits -> least noise
    lam_hi = _lam(problem.min_bits, k)
    if lam_lo * len(free) > budget * (1 + 1e-12):
        raise InfeasibleError(
            f"max_bits={problem.max_bits} bound is binding: target {problem.min_output_sqnr_db:g} dB unreachable"
        )
    if lam_hi * len(free) <= budget:
        bits[free] = problem.min_bits
        return bits

    def used(t):
        return np.clip(r * t, lam_lo, lam_hi).sum()

    # bracket and bisect the water level t, then solve the active set exactly
    lo, hi = lam_lo / r.max(), lam_hi / r.min()
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if used(mid) < budget:
            lo = mid
        else:
            hi = mid
        if hi / lo - 1 < 1e-15:
            break
    t = math.sqrt(lo * hi)
    lam = np.clip(r * t, lam_lo, lam_hi)
    active = (r * t > lam_lo) & (r * t < lam_hi)
    if active.any():
        t = (budget - lam[~active].sum()) / r[active].sum()
        lam = np.where(active, r * t, lam)
    bits[free] = -10.0 * np.log10(lam) / k
    return bits


def _continuous_cost(problem: AllocationProblem) -> np.ndarray:
    k = problem.kappa
    rho = np.array(problem.rhos)
    free = problem.free
    bits = np.array([float(problem.pinned.get(lbl, 0)) for lbl in problem.labels])
    pinned_cost = float(sum(rho[i] * bits[i] for i in range(len(bits)) if i not in free))
    budget = problem.max_total_cost - pinned_cost
    r = rho[free]
    if r.sum() * problem.min_bits > budget * (1 + 1e-12):
        raise InfeasibleError(
            f"min_bits={problem.min_bits} bound is binding: cost budget {problem.max_total_cost:g} too small"
        )
    if r.sum() * problem.max_bits <= budget:
        bits[free] = problem.max_bits
        return bits
    offset = 10.0 * np.log10(r) / k

    def spent(a):
        return float((r * np.clip(a - offset, problem.min_bits, problem.max_bits)).sum())

    lo = problem.min_bits + offset.min()
    hi = problem.max_bits + offset.max()
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if spent(mid) < budget:
            lo = mid
        else:
            hi = mid
    a = 0.5 * (lo + hi)
    raw = a - offset
    active = (raw > problem.min_bits) & (raw < problem.max_bits)
    fixed = np.clip(raw, problem.min_bits, problem.max_bits)
    if active.any():
        a = (budget - (r * fixed)[~active].sum() + (r * offset)[active].sum()) / r[active].sum()
        fixed = np.where(active, a - offset, fixed)
    bits[free] = fixed
    return bits


def continuous_allocation(problem: AllocationProblem) -> np.ndarray:
    """Real-valued water-filling bit-widths (pinned steps keep their value)."""
    if problem.min_output_sqnr_db is not None:
        return _continuous_sqnr(problem)
    return _continuous_cost(problem)


def _round_sqnr(problem: AllocationProblem, cont: np.ndarray) -> list[int]:
    bits = [int(problem.pinned.get(lbl, 0)) for lbl in problem.labels]
    for i in problem.free:
        bits[i] = min(max(math.ceil(cont[i] - 1e-9), problem.min_bits), problem.max_bits)
    if not problem.feasible(bits):
        # ceiling of a feasible point cannot lose SQNR; only float slack lands here
        raise InfeasibleError("rounded allocation violates the SQNR target")
    order = sorted(problem.free, key=lambda i: (-problem.rhos[i], i))
    starts = [bits]
    try:
        starts.append(list(equal_allocation(problem).bits))
    except InfeasibleError:
        pass
    results = []
    for start in starts:
        while _drop_bit(problem, start, order) or _swap_bit(problem, start, order):
            pass
        results.append(start)
    return min(results, key=problem.cost)


def _drop_bit(problem, bits, order) -> bool:
    """Remove one bit from the most expensive step that stays feasible."""
    for i in order:
        if bits[i] > problem.min_bits:
            bits[i] -= 1
            if problem.feasible(bits):
                return True
            bits[i] += 1
    return False


def _swap_bit(problem, bits, order) -> bool:
    """Move one bit from an expensive step to a cheaper one if still feasible."""
    for i in order:
        if bits[i] <= problem.min_bits:
            continue
        for j in reversed(order):
            if problem.rhos[j] >= problem.rhos[i] or bits[j] >= problem.max_bits:
                continue
            bits[i] -= 1
            bits[j] += 1
            if problem.feasible(bits):
                return True
            bits[i] += 1
            bits[j] -= 1
    return False


def _round_cost(problem: AllocationProblem, cont: np.ndarray) -> list[int]:
    bits = [int(problem.pinned.get(lbl, 0)) for lbl in problem.labels]
    for i in problem.free:
        bits[i] = min(max(math.floor(cont[i] + 1e-9), problem.min_bits), problem.max_bits)
    while True:
        # best noise reduction per unit cost among steps that still fit
        best, best_gain = None, 0.0
        for i in problem.free:
            if bits[i] >= problem.max_bits:
                continue
            trial = bits.copy()
            trial[i] += 1
            if not problem.feasible(trial):
                continue
            gain = (problem.noise(bits) - problem.noise(trial)) / problem.rhos[i]
            if gain > best_gain:
                best, best_gain = i, gain
        if best is None:
            return bits
        bits[best] += 1


def solve_waterfilling(problem: AllocationProblem) -> BitAllocation:
    """Closed-form continuous allocation plus a feasible integer rounding.

    SQNR target: round every free step up, then repeatedly drop one bit from
    the most expensive step that stays feasible, or move a bit from an
    expensive step to a cheaper one, until neither helps.  The same descent
    also runs from the equal-bit solution and the cheaper result wins, so the
    optimized cost never exceeds the equal-bit cost.  Cost budget: round down,
    then add bits greedily by noise reduction per unit cost.
    """
    cont = continuous_allocation(problem)
    if problem.min_output_sqnr_db is not None:
        bits = _round_sqnr(problem, cont)
    else:
        bits = _round_cost(problem, cont)
    return BitAllocation(
        problem.labels,
        tuple(float(b) for b in cont),
        tuple(bits),
        problem.cost(bits),
        problem.sqnr_db(bits),
    )


def equal_allocation(problem: AllocationProblem) -> BitAllocation:
    """Baseline: one shared bit-width for all free steps."""
    best = None
    for b in range(problem.min_bits, problem.max_bits + 1):
        bits = [int(problem.pinned.get(lbl, b)) for lbl in problem.labels]
        if problem.feasible(bits):
            if problem.min_output_sqnr_db is not None:
                best = bits
                break
            best = bits
    if best is None:
        raise InfeasibleError("no shared bit-width within bounds satisfies the constraint")
    return BitAllocation(
        problem.labels, tuple(float(b) for b in best), tuple(best), problem.cost(best), problem.sqnr_db(best)
    )


def relative_bitwidths(rhos: Sequence[float], kappa: float) -> list[int]:
    """Integer bit offsets of each step relative to the first one.

    ``round(10*log10(rho_0/rho_i)/kappa)`` with ties toward zero.
    """
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    rhos = [float(r) for r in rhos]
    if not rhos or any(not r > 0 for r in rhos):
        raise ValueError("rhos must be positive")
    out = []
    for r in rhos:
        v = 10.0 * math.log10(rhos[0] / r) / kappa
        out.append(int(math.copysign(math.ceil(abs(v) - 0.5), v)) if v else 0)
    return out


def exhaustive_allocate(problem: AllocationProblem, beta_range: tuple[int, int] | None = None) -> BitAllocation:
    """Brute-force integer optimum (ties: lexicographically smallest bits).

    Minimizes cost for an SQNR target, maximizes SQNR for a cost budget.
    """
    lo, hi = beta_range or (problem.min_bits, problem.max_bits)
    free = problem.free
    if len(free) > MAX_EXHAUSTIVE_STEPS or hi - lo + 1 > MAX_EXHAUSTIVE_WIDTH or lo > hi:
        raise ValueError(
            f"exhaustive search limited to {MAX_EXHAUSTIVE_STEPS} steps and {MAX_EXHAUSTIVE_WIDTH} values per step"
        )
    base = [int(problem.pinned.get(lbl, 0)) for lbl in problem.labels]
    grid = np.arange(lo, hi + 1)
    rest = list(itertools.product(grid, repeat=max(len(free) - 1, 0)))
    rest = np.array(rest, dtype=np.int64).reshape(len(rest), max(len(free) - 1, 0))
    heads = grid if free else grid[:1]
    best_bits, best_key = None, None
    # chunk over the first free step to bound memory
    for head in heads:
        combos = np.hstack([np.full((len(rest), 1), head), rest])[:, : len(free)]
        full = np.tile(np.array(base, dtype=np.float64), (len(combos), 1))
        full[:, free] = combos
        noise = _lam(full, problem.kappa).sum(axis=1)
        cost = full @ np.array(problem.rhos)
        if problem.min_output_sqnr_db is not None:
            ok = noise <= 10.0 ** (-problem.min_output_sqnr_db / 10.0) * (1 + 1e-12)
            key = cost
        else:
            ok = cost <= problem.max_total_cost * (1 + 1e-12)
            key = noise
        if not ok.any():
            continue
        idx = np.flatnonzero(ok)
        j = idx[np.argmin(key[idx])]  # argmin returns the first (lexicographic) minimum
        if best_key is None or key[j] < best_key * (1 - 1e-12):
            best_key, best_bits = key[j], [int(v) for v in full[j]]
    if best_bits is None:
        raise InfeasibleError(f"no assignment in [{lo}, {hi}] satisfies the constraint")
    return BitAllocation(
        problem.labels,
        tuple(float(b) for b in best_bits),
        tuple(best_bits),
        problem.cost(best_bits),
        problem.sqnr_db(best_bits),
    )


@dataclass(frozen=True)
class SweepRow:
    policy: str
    target_sqnr_db: float
    feasible: bool
    allocation: BitAllocation | None
    note: str = ""

    @property
    def total_cost(self) -> float:
        return self.allocation.total_cost if self.allocation else math.nan

    @property
    def predicted_sqnr_db(self) -> float:
        return self.allocation.predicted_sqnr_db if self.allocation else math.nan


def sweep_tradeoff(template: AllocationProblem, sqnr_targets: Sequence[float]) -> list[SweepRow]:
    """Optimized and equal-bit allocations for each SQNR target, in target order."""
    targets = list(sqnr_targets)
    if any(b < a for a, b in zip(targets, targets[1:])):
        raise ValueError("sqnr_targets must be sorted ascending")
    rows = []
    for target in targets:
        problem = template.with_target(target)
        for policy, solve in (("optimized", solve_waterfilling), ("equal", equal_allocation)):
            try:
                rows.append(SweepRow(policy, target, True, solve(problem)))
            except InfeasibleError as exc:
                rows.append(SweepRow(policy, target, False, None, str(exc)))
    return rows
