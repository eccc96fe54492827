"""Command-line front end.

Exit statuses: 0 success, 2 input error, 3 infeasible constraint,
1 internal error.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from fxquant import fixtures, planning
from fxquant.allocator import InfeasibleError, equal_allocation, relative_bitwidths, solve_waterfilling, sweep_tradeoff
from fxquant.engine import (
    INPUT_KEY,
    PlanError,
    batches_from_blobs,
    collect_stats,
    forward_float,
    forward_quantized,
    load_plan,
    make_plan,
    measure_layer_sqnr,
    quantize_model,
    save_plan,
)
from fxquant.netir import ModelError, fold_batchnorm, load_model, save_model, write_blob
from fxquant.quantizer import DegenerateStatsError, Distribution, TensorStats, measure_sqnr
from fxquant.reports import fmt_db, fmt_float, read_csv, write_csv

log = logging.getLogger("fxquant")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3


class InputError(Exception):
    pass


@dataclass
class RunConfig:
    model: Path | None = None
    calib: list[Path] = field(default_factory=list)
    dist: dict[str, Distribution] = field(default_factory=dict)
    xi_mult: float = 3.0
    kappa: float = 3.0
    min_sqnr_db: float | None = None
    fc_bits: int = 16
    act_bits_pinned: int = 16
    out: Path = Path(".")
    seed: int = 0

    def validate(self) -> None:
        if self.model is not None and not self.model.exists():
            raise InputError(f"model not found: {self.model}")
        for path in self.calib:
            if not path.is_file():
                raise InputError(f"calibration blob not found: {path}")
        if not self.kappa > 0:
            raise InputError("--kappa must be positive")
        if not self.xi_mult > 0:
            raise InputError("--xi-mult must be positive")


def parse_dist(text: str) -> dict[str, Distribution]:
    """``gaussian`` or per-class ``weight=laplacian,activation=gaussian``."""
    classes = ("weight", "activation", "input")
    if "=" not in text:
        d = Distribution.parse(text)
        return {c: d for c in classes}
    out = {c: Distribution.GAUSSIAN for c in classes}
    for item in text.split(","):
        key, _, value = item.partition("=")
        if key.strip() not in classes:
            raise ValueError(f"unknown tensor class {key!r} in --dist")
        out[key.strip()] = Distribution.parse(value.strip())
    return out


def parse_targets(text: str) -> list[float]:
    text = text.strip()
    if not text:
        return []
    if ":" in text:
        start, stop, step = (float(v) for v in text.split(":"))
        if step <= 0:
            raise ValueError("target step must be positive")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 10) for i in range(max(n, 0))]
    return sorted(float(v) for v in text.split(","))


def _config(args) -> RunConfig:
    cfg = RunConfig(
        model=Path(args.model) if getattr(args, "model", None) else None,
        calib=[Path(p) for p in getattr(args, "calib", None) or []],
        dist=parse_dist(getattr(args, "dist", "gaussian")),
        xi_mult=getattr(args, "xi_mult", 3.0),
        kappa=getattr(args, "kappa", 3.0),
        min_sqnr_db=getattr(args, "min_sqnr_db", None),
        fc_bits=getattr(args, "fc_bits", 16),
        act_bits_pinned=getattr(args, "act_bits_pinned", 16),
        out=Path(args.out),
        seed=getattr(args, "seed", 0),
    )
    cfg.validate()
    return cfg


def _load(cfg: RunConfig):
    model = fold_batchnorm(load_model(cfg.model))
    batches = batches_from_blobs(model, cfg.calib)
    return model, batches


def _tensor_class(key: str) -> str:
    if key == INPUT_KEY:
        return "input"
    return {"weight": "weight", "bias": "bias", "act": "activation"}[key.rpartition(".")[2]]


STATS_COLUMNS = ("tensor", "class", "count", "mean", "std_dev", "max_abs")


def write_stats(path: Path, stats: dict[str, TensorStats]) -> Path:
    rows = [
        (key, _tensor_class(key), st.count, fmt_float(st.mean), fmt_float(st.std_dev), fmt_float(st.max_abs))
        for key, st in stats.items()
    ]
    return write_csv(path, STATS_COLUMNS, rows)


def read_stats(path: Path) -> dict[str, TensorStats]:
    return {
        row["tensor"]: TensorStats(int(row["count"]), float(row["mean"]), float(row["std_dev"]), float(row["max_abs"]))
        for row in read_csv(path)
    }


def cmd_stats(cfg: RunConfig) -> Path:
    if not cfg.calib:
        raise InputError("stats needs at least one --calib blob")
    model, batches = _load(cfg)
    stats = collect_stats(model, batches)
    path = write_stats(cfg.out / "stats.csv", stats)
    log.info("wrote %s (%d tensors)", path, len(stats))
    return path


ALLOC_COLUMNS = ("policy", "step", "layer", "class", "rho", "continuous_bits", "bits", "offset")
SUMMARY_COLUMNS = ("policy", "target_sqnr_db", "total_model_bits", "predicted_sqnr_db")


def cmd_allocate(cfg: RunConfig, objective: str = "size") -> Path:
    if cfg.calib and not (cfg.out / "stats.csv").exists():
        cmd_stats(cfg)
    model = fold_batchnorm(load_model(cfg.model))
    target = 30.0 if cfg.min_sqnr_db is None else cfg.min_sqnr_db
    problem = planning.build_problem(
        model,
        kappa=cfg.kappa,
        min_output_sqnr_db=target,
        objective=objective,
        fc_bits=cfg.fc_bits,
        act_bits_pinned=cfg.act_bits_pinned,
    )
    free = problem.free
    offsets = dict(zip((problem.labels[i] for i in free), relative_bitwidths([problem.rhos[i] for i in free], cfg.kappa)))
    rows, summary = [], []
    for policy, solve in (("optimized", solve_waterfilling), ("equal", equal_allocation)):
        alloc = solve(problem)
        wbits, _ = planning.split_allocation(model, alloc)
        for label, rho, cont, bits in zip(alloc.labels, problem.rhos, alloc.continuous, alloc.bits):
            layer, _, klass = label.rpartition(".")
            rows.append(
                (
                    policy,
                    label,
                    layer,
                    "weight" if klass == "weight" else "activation",
                    fmt_float(rho),
                    f"{cont:.4f}",
                    bits,
                    offsets.get(label, "") if policy == "optimized" else "",
                )
            )
        summary.append((policy, fmt_db(target), planning.model_bits(model, wbits), fmt_db(alloc.predicted_sqnr_db)))
    write_csv(cfg.out / "allocation_summary.csv", SUMMARY_COLUMNS, summary)
    path = write_csv(cfg.out / "allocation.csv", ALLOC_COLUMNS, rows)
    log.info("wrote %s", path)
    return path


def read_allocation(path: Path, policy: str) -> tuple[dict[str, int], dict[str, int]]:
    wbits, abits = {}, {}
    for row in read_csv(path):
        if row["policy"] != policy:
            continue
        table = wbits if row["class"] == "weight" else abits
        table[row["layer"]] = int(row["bits"])
    if not wbits:
        raise InputError(f"no rows for policy {policy!r} in {path}")
    return wbits, abits


def _stats_for(cfg: RunConfig, model, batches, stats_path: Path | None):
    if stats_path is not None:
        return read_stats(stats_path)
    if not batches:
        raise InputError("need --calib blobs or --stats to derive formats")
    return collect_stats(model, batches)


def cmd_quantize(
    cfg: RunConfig,
    allocation: Path | None = None,
    policy: str = "optimized",
    bits: int | None = None,
    act_bits: int | None = None,
    input_bits: int | None = None,
    stats_path: Path | None = None,
) -> Path:
    model, batches = _load(cfg)
    if allocation is not None:
        wbits, abits = read_allocation(allocation, policy)
    elif bits is not None:
        wbits = {layer.name: bits for layer in model.quantizable_layers}
        abits = {layer.name: act_bits or bits for layer in model.quantizable_layers}
    else:
        raise InputError("quantize needs --allocation or --bits")
    stats = _stats_for(cfg, model, batches, stats_path)
    plan = make_plan(model, stats, wbits, abits, input_bits=input_bits, dist=cfg.dist, xi_multiplier=cfg.xi_mult)
    cfg.out.mkdir(parents=True, exist_ok=True)
    save_plan(plan, cfg.out / "plan.json")
    save_model(quantize_model(model, plan), cfg.out / "model")
    log.info("wrote %s and %s", cfg.out / "plan.json", cfg.out / "model")
    return cfg.out / "plan.json"


REPORT_COLUMNS = (
    "layer",
    "kind",
    "weight_format",
    "act_format",
    "predicted_sqnr_db",
    "predicted_no_input_sqnr_db",
    "measured_sqnr_db",
)


def cmd_simulate(cfg: RunConfig, plan_path: Path) -> Path:
    if not cfg.calib:
        raise InputError("simulate needs evaluation batches (--calib)")
    model, batches = _load(cfg)
    plan = load_plan(plan_path)
    plan.check_covers(model)
    batch = np.concatenate(batches)
    pred = planning.predict_for_plan(model, plan, cfg.kappa, with_input=True)
    pred_raw = planning.predict_for_plan(model, plan, cfg.kappa, with_input=False)
    measured = measure_layer_sqnr(model, batch, plan)
    rows = []
    for layer in model.quantizable_layers:
        n = layer.name
        rows.append(
            (
                n,
                layer.kind.value,
                str(plan.weights[n]),
                str(plan.activations[n]),
                fmt_db(pred.per_layer[n]),
                fmt_db(pred_raw.per_layer[n]),
                fmt_db(measured[n]),
            )
        )
    out_float, _ = forward_float(model, batch)
    out_q, _ = forward_quantized(model, batch, plan)
    rows.append(("output", "", "", "", fmt_db(pred.output), fmt_db(pred_raw.output), fmt_db(measure_sqnr(out_float, out_q))))
    path = write_csv(cfg.out / "sqnr_report.csv", REPORT_COLUMNS, rows)
    log.info("wrote %s", path)
    return path


SWEEP_COLUMNS = (
    "policy",
    "target_sqnr_db",
    "feasible",
    "total_model_bits",
    "predicted_sqnr_db",
    "measured_sqnr_db",
    "note",
)


def cmd_sweep(cfg: RunConfig, targets: Sequence[float], objective: str = "size") -> Path:
    model, batches = _load(cfg)
    template = planning.build_problem(
        model,
        kappa=cfg.kappa,
        min_output_sqnr_db=0.0,
        objective=objective,
        fc_bits=cfg.fc_bits,
        act_bits_pinned=cfg.act_bits_pinned,
    )
    stats = collect_stats(model, batches) if batches else None
    batch = np.concatenate(batches) if batches else None
    ref = forward_float(model, batch)[0] if batches else None
    rows = []
    for row in sweep_tradeoff(template, targets):
        if not row.feasible:
            rows.append((row.policy, fmt_db(row.target_sqnr_db), 0, "", "", "", row.note))
            continue
        wbits, abits = planning.split_allocation(model, row.allocation)
        measured = ""
        if stats is not None:
            plan = make_plan(model, stats, wbits, abits, dist=cfg.dist, xi_multiplier=cfg.xi_mult)
            measured = fmt_db(measure_sqnr(ref, forward_quantized(model, batch, plan)[0]))
        rows.append(
            (
                row.policy,
                fmt_db(row.target_sqnr_db),
                1,
                planning.model_bits(model, wbits),
                fmt_db(row.predicted_sqnr_db),
                measured,
                "",
            )
        )
    path = write_csv(cfg.out / "sweep.csv", SWEEP_COLUMNS, rows)
    log.info("wrote %s", path)
    return path


def cmd_make_fixture(kind: str, out: Path, seed: int = 0, calib_files: int = 2, calib_samples: int = 4) -> Path:
    model = fixtures.build(kind, seed)
    save_model(model, out)
    for i in range(calib_files):
        batch = fixtures.gaussian_inputs(model, calib_samples, seed=seed * 1000 + i + 1)
        write_blob(out / f"calib_{i:03d}.bin", batch)
    log.info("wrote fixture %s to %s", kind, out)
    return out / "model.json"


def _common(p, model=True, calib=True):
    if model:
        p.add_argument("--model", required=True, help="model directory or manifest path")
    if calib:
        p.add_argument("--calib", nargs="*", default=[], help="calibration / evaluation tensor blobs")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)


def _modelling(p):
    p.add_argument("--kappa", type=float, default=3.0, help="quantization efficiency, dB per bit")
    p.add_argument("--fc-bits", type=int, default=16)
    p.add_argument("--act-bits-pinned", type=int, default=16)
    p.add_argument("--objective", choices=planning.OBJECTIVES, default="size")


def _formats(p):
    p.add_argument("--dist", default="gaussian", help="distribution, or per class: weight=...,activation=...")
    p.add_argument("--xi-mult", type=float, default=3.0, help="effective width in standard deviations")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fxquant", description="Post-training fixed-point quantization toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="collect tensor statistics")
    _common(p)

    p = sub.add_parser("allocate", help="water-filling bit allocation")
    _common(p)
    _modelling(p)
    p.add_argument("--min-sqnr-db", type=float, default=None, help="output SQNR target (default 30)")

    p = sub.add_parser("quantize", help="derive formats and write the converted model")
    _common(p)
    _formats(p)
    p.add_argument("--allocation", help="allocation.csv from the allocate command")
    p.add_argument("--policy", choices=("optimized", "equal"), default="optimized")
    p.add_argument("--bits", type=int, help="uniform bit-width instead of an allocation")
    p.add_argument("--act-bits", type=int, help="activation bit-width with --bits (default: same)")
    p.add_argument("--input-bits", type=int, help="also quantize the network input")
    p.add_argument("--stats", help="stats.csv to use instead of recomputing from --calib")

    p = sub.add_parser("simulate", help="predicted vs measured per-layer SQNR")
    _common(p)
    p.add_argument("--plan", required=True)
    p.add_argument("--kappa", type=float, default=3.0)

    p = sub.add_parser("sweep", help="model size vs SQNR trade-off for both policies")
    _common(p)
    _modelling(p)
    _formats(p)
    p.add_argument("--targets", default="0:40:2", help="start:stop:step or comma list, dB")

    p = sub.add_parser("make-fixture", help="write a seeded synthetic model and calibration blobs")
    p.add_argument("--kind", choices=fixtures.FIXTURES, required=True)
    p.add_argument("--calib-files", type=int, default=2)
    p.add_argument("--calib-samples", type=int, default=4)
    _common(p, model=False, calib=False)
    return parser


def run(args) -> None:
    if args.command == "make-fixture":
        cmd_make_fixture(args.kind, Path(args.out), args.seed, args.calib_files, args.calib_samples)
        return
    cfg = _config(args)
    if args.command == "stats":
        cmd_stats(cfg)
    elif args.command == "allocate":
        cmd_allocate(cfg, args.objective)
    elif args.command == "quantize":
        cmd_quantize(
            cfg,
            allocation=Path(args.allocation) if args.allocation else None,
            policy=args.policy,
            bits=args.bits,
            act_bits=args.act_bits,
            input_bits=args.input_bits,
            stats_path=Path(args.stats) if args.stats else None,
        )
    elif args.command == "simulate":
        cmd_simulate(cfg, Path(args.plan))
    elif args.command == "sweep":
        cmd_sweep(cfg, parse_targets(args.targets), args.objective)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        run(args)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (InputError, ModelError, PlanError, DegenerateStatsError, FileNotFoundError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
