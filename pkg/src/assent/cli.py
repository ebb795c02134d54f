"""Command-line front end: configuration, orchestration, result emission.

Subcommands: ``run`` (execute a TOML experiment config), ``list-benchmarks``,
``verify`` (independent-oracle suites) and ``trace-plotdata`` (best-objective
versus simulations CSV from a saved buffer).  Exit codes from ``run``: 0 when
the final design satisfies every hard constraint, 2 when the budget ran out
without a feasible design, 1 for usage or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import benchmarks, circuits
from .evolve import GAConfig, run_step1
from .finetune import FineTuneConfig, run_step2
from .problem import SimulationBuffer, objective_values
from .rngutil import derive_seed
from .surrogate import TrainConfig


class ConfigError(ValueError):
    pass


def _load_config(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(p, "rb") as f:
            return tomllib.load(f)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from None


def _pair_or_int(v):
    if isinstance(v, list):
        if len(v) != 2:
            raise ConfigError("expected [first_trial, later_trials]")
        return (int(v[0]), int(v[1]))
    return int(v)


def _ga_config(section: dict, seed: int) -> GAConfig:
    known = {
        "population_size",
        "max_generations",
        "crossover_prob",
        "mutation_prob",
        "tournament_size",
        "final_metric",
        "metric_threshold",
        "stall_generations",
        "min_generations_before_stall",
        "max_simulations",
    }
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown [step1] keys: {sorted(unknown)}")
    return GAConfig(rng_seed=seed, **{k: section[k] for k in section})


def _train_config(section: dict, seed: int) -> TrainConfig:
    cfg = TrainConfig(rng_seed=seed)
    for k, v in section.items():
        if not hasattr(cfg, k):
            raise ConfigError(f"unknown [step2.train] key: {k}")
        setattr(cfg, k, v)
    return cfg


def _finetune_config(section: dict, seed: int, train_seed: int) -> FineTuneConfig:
    section = dict(section)
    train_section = section.pop("train", {})
    kwargs = {}
    for k, v in section.items():
        if k in ("max_valid_sims", "init_sobol"):
            kwargs[k] = _pair_or_int(v)
        elif k == "architecture_library":
            kwargs[k] = tuple(tuple(int(s) for s in arch) for arch in v)
        elif k == "nominal":
            continue  # handled by the runner
        else:
            kwargs[k] = v
    try:
        return FineTuneConfig(
            rng_seed=seed, train=_train_config(train_section, train_seed), **kwargs
        )
    except TypeError as exc:
        raise ConfigError(f"bad [step2] section: {exc}") from None


def build_report(problem, buffer: SimulationBuffer, objective_index: int, provenances) -> dict:
    """Recompute every reported number from the buffer alone."""
    spec = problem.spec
    considered = [r for r in buffer if r.provenance in provenances]
    valid = [r for r in considered if r.valid]
    feasible = [r for r in valid if spec.constraints_satisfied(r.raw_outputs)]

    def obj(r):
        return objective_values(spec, r)[objective_index]

    report = {
        "problem": problem.name,
        "simulations": len(considered),
        "valid_simulations": len(valid),
        "feasible_simulations": len(feasible),
        "feasible": bool(feasible),
    }
    pick = None
    if feasible:
        pick = min(feasible, key=lambda r: (obj(r), r.simulation_index))
    elif valid:
        from .finetune import fractional_deviation

        pick = min(
            valid,
            key=lambda r: (fractional_deviation(spec, r), obj(r), r.simulation_index),
        )
    if pick is not None:
        slacks = {}
        for idx, rel, bound in spec.hard_constraints:
            name = spec.output_names[idx] if spec.output_names else f"out{idx}"
            v = pick.raw_outputs[idx]
            slacks[f"{name} {rel} {bound}"] = v - bound if rel == ">=" else bound - v
        report["best"] = {
            "input": list(pick.input),
            "outputs": list(pick.raw_outputs),
            "objective": obj(pick),
            "simulation_index": pick.simulation_index,
            "constraint_slacks": slacks,
        }
    return report


def cmd_run(args) -> int:
    try:
        cfg = _load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    try:
        problem_name = cfg["problem"]["name"]
        run_cfg = cfg.get("run", {})
        step = run_cfg.get("step", "pipeline")
        if step not in ("step1", "step2", "pipeline"):
            raise ConfigError(f"run.step must be step1|step2|pipeline, got {step!r}")
        master_seed = int(args.seed if args.seed is not None else run_cfg.get("seed", 0))
        out_dir = Path(args.out or run_cfg.get("output_dir", "runs") ) / problem_name
        out_dir.mkdir(parents=True, exist_ok=True)
        jobs = args.jobs or int(os.environ.get("ASSENT_JOBS", "1"))

        entry = benchmarks.registry().get(problem_name)
        if entry is None:
            raise ConfigError(f"unknown problem {problem_name!r}; see list-benchmarks")
    except (KeyError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    t0 = time.monotonic()
    buffer = SimulationBuffer()
    provenances = set()
    report_problem = None
    objective_index = int(cfg.get("step2", {}).get("objective_index", 0))

    try:
        step2_problem = None
        nominal = None
        if step in ("step1", "pipeline"):
            ga = _ga_config(cfg.get("step1", {}), derive_seed(master_seed, "step1"))
            if entry.architecture:
                problem, arch_space, seed_chrom = circuits.lowpass_architecture_problem()
                ga.seeds = (seed_chrom,)
                result = run_step1(
                    problem,
                    ga,
                    buffer,
                    space=arch_space,
                    decoder=circuits.chromosome_decoder(circuits.LOWPASS_SPACE),
                    trace_path=out_dir / "step1_generations.csv",
                    jobs=jobs,
                )
                netlist = circuits.point_to_netlist(result.best_point, circuits.LOWPASS_SPACE)
                cleaned = circuits.prune_dangling(circuits.merge_parallel(netlist))
                (out_dir / "coarse_netlist.txt").write_text(circuits.format_netlist(cleaned))
                if step == "pipeline":
                    nominal = circuits.lowpass_bridge(result.best_point)
                    step2_problem = benchmarks.get_problem("lowpass-rc")
            else:
                problem = entry.factory()
                result = run_step1(
                    problem,
                    ga,
                    buffer,
                    trace_path=out_dir / "step1_generations.csv",
                    jobs=jobs,
                )
                nominal = result.best_point
                step2_problem = problem
            provenances.add("step1")
            report_problem = problem

        if step in ("step2", "pipeline"):
            sec = cfg.get("step2", {})
            if step == "step2":
                step2_problem = entry.factory()
                if "nominal" in sec:
                    nominal = tuple(float(v) for v in sec["nominal"])
                else:
                    raise ConfigError("step2-only runs need step2.nominal in the config")
            ft = _finetune_config(
                sec, derive_seed(master_seed, "step2"), derive_seed(master_seed, "train")
            )
            run_step2(
                step2_problem,
                nominal,
                buffer,
                ft,
                trace_path=out_dir / "step2_trace.csv",
            )
            provenances.update(("step2-init", "step2-milp", "step2-random"))
            report_problem = step2_problem
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    buffer.save_jsonl(out_dir / "buffer.jsonl")
    report = build_report(report_problem, buffer, objective_index, provenances)
    report["step"] = step
    report["master_seed"] = master_seed
    report["wall_time_s"] = round(time.monotonic() - t0, 3)
    with open(out_dir / "report.json", "w") as f:
        json.dump(report, f, indent=2)
    print(json.dumps(report, indent=2))
    return 0 if report.get("feasible") else 2


def cmd_list_benchmarks(_args) -> int:
    reg = benchmarks.registry()
    for name in sorted(reg):
        e = reg[name]
        mode = "architecture" if e.architecture else "values"
        print(f"{name:12s} [{mode}] {e.description}")
        if e.reference:
            print(f"{'':12s}   reference: {e.reference}")
        prob = e.factory()
        if prob.variables:
            spans = ", ".join(
                f"{v.name} in [{v.span[0]:g}, {v.span[1]:g}]" for v in prob.variables[:4]
            )
            more = "" if len(prob.variables) <= 4 else f", ... ({len(prob.variables)} vars)"
            print(f"{'':12s}   variables: {spans}{more}")
        if prob.spec.output_names:
            print(f"{'':12s}   outputs: {', '.join(prob.spec.output_names)}")
    return 0


def cmd_verify(args) -> int:
    from . import verify

    results = verify.run_all(quick=args.quick)
    ok = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"[{status}] {r.name}: {r.detail}")
        ok = ok and r.passed
    return 0 if ok else 1


def cmd_trace_plotdata(args) -> int:
    try:
        cfg = _load_config(args.config)
        problem_name = cfg["problem"]["name"]
        entry = benchmarks.registry().get(problem_name)
        if entry is None:
            raise ConfigError(f"unknown problem {problem_name!r}")
    except (ConfigError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if entry.architecture:
        problem = benchmarks.get_problem("lowpass-rc")
    else:
        problem = entry.factory()
    objective_index = int(cfg.get("step2", {}).get("objective_index", 0))
    buffer = SimulationBuffer.load_jsonl(args.buffer)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    w = csv.writer(out)
    w.writerow(["simulation_index", "best_objective"])
    best = float("inf")
    for rec in buffer:
        if rec.valid and len(rec.raw_outputs) == len(problem.spec.output_names):
            if problem.spec.constraints_satisfied(rec.raw_outputs):
                best = min(best, objective_values(problem.spec, rec)[objective_index])
        w.writerow([rec.simulation_index, repr(best) if np.isfinite(best) else ""])
    if args.out:
        out.close()
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="assent",
        description="Two-step design-space exploration: evolutionary coarse search "
        "plus surrogate/MILP fine-tuning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config", help="TOML config file")
    p_run.add_argument("--jobs", type=int, default=None, help="concurrent fitness evaluations (env ASSENT_JOBS)")
    p_run.add_argument("--seed", type=int, default=None, help="override the master seed")
    p_run.add_argument("--out", default=None, help="override the output directory")
    p_run.set_defaults(func=cmd_run)

    p_list = sub.add_parser("list-benchmarks", help="show the benchmark registry")
    p_list.set_defaults(func=cmd_list_benchmarks)

    p_verify = sub.add_parser("verify", help="run the independent-oracle suites")
    p_verify.add_argument("--quick", action="store_true", help="smaller instance counts")
    p_verify.set_defaults(func=cmd_verify)

    p_trace = sub.add_parser("trace-plotdata", help="best-vs-simulations CSV from a buffer")
    p_trace.add_argument("config", help="TOML config the buffer was produced with")
    p_trace.add_argument("--buffer", required=True, help="buffer.jsonl path")
    p_trace.add_argument("--out", default=None, help="output CSV (default stdout)")
    p_trace.set_defaults(func=cmd_trace_plotdata)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
