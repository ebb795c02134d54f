"""Continuous fine-tuning around the coarse design.

Each trial boxes the search around the current nominal design, seeds the
surrogate with Sobol samples (plus optionally filtered records reused from
the coarse search), then alternates: retrain the surrogate, ask the MILP
encoding for an input predicted to satisfy the hard constraints and beat the
incumbent objective, simulate it, and fall back to a Sobol sample whenever
the MILP is infeasible or times out.  After a trial, the design with the
least fractional constraint deviation becomes the next nominal.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .milp import FEASIBLE, encode_network, solve_milp
from .problem import (
    DesignProblem,
    EvaluationRecord,
    SimulationBuffer,
    Specification,
    evaluate,
    objective_values,
)
from .sobol import SobolStream, box_around, scale_to_box
from .surrogate import MLPModel, TrainConfig, select_architecture, train


@dataclass
class FineTuneConfig:
    """Knobs for the fine-tuning loop.

    ``max_valid_sims`` and ``init_sobol`` accept either a single int or a
    (first trial, later trials) pair.
    """

    trials: int = 50
    max_valid_sims: int | tuple[int, int] = (20, 50)
    arch_update_every: int = 10
    box_fraction: float = 0.7
    init_sobol: int | tuple[int, int] = 10
    reuse_step1_buffer: bool = False
    step1_filter: Callable[[EvaluationRecord], bool] | None = None
    # which provenances count as reusable pre-training data; chained
    # fine-tuning runs widen this to the step2 provenances
    reuse_provenances: tuple[str, ...] = ("step1",)
    architecture_library: tuple[tuple[int, ...], ...] = ((10,), (40, 20, 8), (50,))
    objective_index: int = 0
    improvement_margin_frac: float = 0.01
    improvement_margin_floor: float = 1e-6
    milp_time_limit: float = 30.0
    wall_clock_limit: float | None = None
    rng_seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.arch_update_every < 1:
            raise ValueError("arch_update_every must be >= 1")
        if self.box_fraction <= 0:
            raise ValueError("box_fraction must be positive")

    def sims_for_trial(self, trial: int) -> int:
        v = self.max_valid_sims
        if isinstance(v, int):
            return v
        return v[0] if trial == 0 else v[1]

    def init_for_trial(self, trial: int) -> int:
        v = self.init_sobol
        if isinstance(v, int):
            return v
        return v[0] if trial == 0 else v[1]


@dataclass
class FineTuneState:
    best_obj: float
    best_point: tuple[float, ...] | None
    best_record: EvaluationRecord | None
    nominal: tuple[float, ...]
    trial_id: int = 0
    valid_sim_count: int = 0
    training_inputs: list[tuple[float, ...]] = field(default_factory=list)
    training_outputs: list[tuple[float, ...]] = field(default_factory=list)


@dataclass
class TraceRow:
    simulation_index: int
    trial_id: int
    source: str  # init | milp | fallback
    objective: float
    deviation: float
    best_obj: float


@dataclass
class Step2Result:
    best_point: tuple[float, ...]
    best_record: EvaluationRecord | None
    feasible: bool
    trace: list[TraceRow]
    state: FineTuneState


def fractional_deviation(spec: Specification, record: EvaluationRecord) -> float:
    """Sum over violated hard constraints of |obs - spec| / |spec|.

    Satisfied constraints contribute nothing; a zero specification bound uses
    denominator 1 so e.g. "peaking <= 0" targets stay finite.
    """
    if not record.valid:
        raise ValueError("fractional deviation needs a valid record")
    total = 0.0
    for idx, rel, bound in spec.hard_constraints:
        obs = record.raw_outputs[idx]
        violated = obs > bound if rel == "<=" else obs < bound
        if violated:
            total += abs(obs - bound) / (abs(bound) if bound != 0 else 1.0)
    return total


def _objective_of(problem: DesignProblem, record: EvaluationRecord, index: int) -> float:
    return objective_values(problem.spec, record)[index]


def _is_feasible(problem: DesignProblem, record: EvaluationRecord) -> bool:
    return record.valid and problem.spec.constraints_satisfied(record.raw_outputs)


class _Clock:
    def __init__(self, limit: float | None):
        self.t0 = time.monotonic()
        self.limit = limit

    def expired(self) -> bool:
        return self.limit is not None and time.monotonic() - self.t0 > self.limit


def _sobol_valid_sample(
    problem: DesignProblem,
    stream: SobolStream,
    box,
    buffer: SimulationBuffer,
    trial_id: int,
    provenance: str,
    max_draws: int = 1000,
) -> EvaluationRecord:
    """Draw Sobol points in the box until one simulates validly."""
    record = None
    for _ in range(max_draws):
        point = tuple(scale_to_box(stream.next_points(1)[0], box))
        record = evaluate(problem, point, buffer, provenance=provenance, trial_id=trial_id)
        if record.valid:
            return record
    return record  # give the caller the last invalid record rather than loop forever


def _maybe_update_best(
    problem: DesignProblem, config: FineTuneConfig, state: FineTuneState, record: EvaluationRecord
) -> None:
    if not _is_feasible(problem, record):
        return
    obj = _objective_of(problem, record, config.objective_index)
    if obj < state.best_obj:
        state.best_obj = obj
        state.best_point = record.input
        state.best_record = record


def run_trial(
    problem: DesignProblem,
    state: FineTuneState,
    config: FineTuneConfig,
    sobol: SobolStream,
    buffer: SimulationBuffer,
    clock: _Clock | None = None,
    trace: list[TraceRow] | None = None,
    arch_state: dict | None = None,
) -> FineTuneState:
    """One trial of the fine-tuning loop; mutates and returns the state."""
    if clock is None:
        clock = _Clock(config.wall_clock_limit)
    if trace is None:
        trace = []
    if arch_state is None:
        arch_state = {"layers": None, "since_update": 0}
    trial = state.trial_id
    bounds = problem.bounds()
    box = box_around(np.array(state.nominal), config.box_fraction, bounds)
    budget = config.sims_for_trial(trial)
    spec = problem.spec
    obj_idx, obj_dir = spec.objectives[config.objective_index]

    trial_records: list[EvaluationRecord] = []
    sims_this_trial = 0

    def note(record: EvaluationRecord, source: str) -> None:
        nonlocal sims_this_trial
        sims_this_trial += 1
        state.valid_sim_count += 1
        arch_state["since_update"] += 1
        state.training_inputs.append(record.input)
        state.training_outputs.append(record.raw_outputs)
        trial_records.append(record)
        _maybe_update_best(problem, config, state, record)
        trace.append(
            TraceRow(
                simulation_index=record.simulation_index,
                trial_id=trial,
                source=source,
                objective=_objective_of(problem, record, config.objective_index),
                deviation=fractional_deviation(spec, record),
                best_obj=state.best_obj,
            )
        )

    # (1) Sobol initialization; invalid draws are redrawn and not budgeted
    for _ in range(config.init_for_trial(trial)):
        if sims_this_trial >= budget or clock.expired():
            break
        record = _sobol_valid_sample(problem, sobol, box, buffer, trial, "step2-init")
        if record is None or not record.valid:
            break
        note(record, "init")

    # (2) surrogate / MILP / fallback loop
    while sims_this_trial < budget and not clock.expired():
        if len(state.training_inputs) < 5:
            record = _sobol_valid_sample(problem, sobol, box, buffer, trial, "step2-init")
            if record is None or not record.valid:
                break
            note(record, "init")
            continue

        data = (np.array(state.training_inputs), np.array(state.training_outputs))
        if arch_state["layers"] is None or arch_state["since_update"] >= config.arch_update_every:
            model = select_architecture(config.architecture_library, data, config.train)
            arch_state["layers"] = model.hidden_sizes
            arch_state["since_update"] = 0
        else:
            model, _ = train(data, arch_state["layers"], config.train)

        improvement = None
        if math.isfinite(state.best_obj):
            margin = max(
                config.improvement_margin_floor,
                config.improvement_margin_frac * abs(state.best_obj),
            )
            # the MILP works on raw outputs: undo the minimize-negation
            best_raw = state.best_obj if obj_dir == "minimize" else -state.best_obj
            improvement = (obj_idx, obj_dir, best_raw, margin)

        encoded = encode_network(model, box, spec.hard_constraints, improvement)
        outcome = solve_milp(encoded, time_limit=config.milp_time_limit)

        if outcome.status == FEASIBLE:
            raw = encoded.extract_input(outcome.witness)
            lo = np.array([b[0] for b in box])
            hi = np.array([b[1] for b in box])
            point = tuple(np.clip(raw, lo, hi))
            record = evaluate(problem, point, buffer, provenance="step2-milp", trial_id=trial)
            source = "milp"
            if not record.valid:
                record = _sobol_valid_sample(problem, sobol, box, buffer, trial, "step2-random")
                source = "fallback"
        else:
            record = _sobol_valid_sample(problem, sobol, box, buffer, trial, "step2-random")
            source = "fallback"
        if record is None or not record.valid:
            break
        note(record, source)

    # (3) nominal replacement: least fractional deviation, ties by objective
    # then by recency (earlier simulation index)
    if trial_records:
        best = min(
            trial_records,
            key=lambda r: (
                fractional_deviation(spec, r),
                _objective_of(problem, r, config.objective_index),
                r.simulation_index,
            ),
        )
        state.nominal = best.input
    state.trial_id += 1
    return state


def run_step2(
    problem: DesignProblem,
    nominal: Sequence[float],
    buffer: SimulationBuffer,
    config: FineTuneConfig,
    trace_path=None,
) -> Step2Result:
    """Run all trials and return the best hard-constraint-feasible design.

    The nominal design's own record initializes the incumbent objective when
    it is feasible; otherwise the incumbent starts at +inf and the first
    feasible point takes it.  If no feasible point is ever seen, the returned
    point is the minimum-deviation one, flagged infeasible.
    """
    nominal = tuple(float(v) for v in nominal)
    nominal_record = evaluate(problem, nominal, buffer, provenance="step2-init", trial_id=0)
    state = FineTuneState(
        best_obj=float("inf"),
        best_point=None,
        best_record=None,
        nominal=nominal,
    )
    if _is_feasible(problem, nominal_record):
        state.best_obj = _objective_of(problem, nominal_record, config.objective_index)
        state.best_point = nominal_record.input
        state.best_record = nominal_record

    if config.reuse_step1_buffer:
        keep = config.step1_filter or (lambda r: True)
        for rec in buffer:
            if rec.provenance in config.reuse_provenances and rec.valid and keep(rec):
                state.training_inputs.append(rec.input)
                state.training_outputs.append(rec.raw_outputs)
    if nominal_record.valid:
        state.training_inputs.append(nominal_record.input)
        state.training_outputs.append(nominal_record.raw_outputs)

    clock = _Clock(config.wall_clock_limit)
    sobol = SobolStream(len(problem.variables))
    trace: list[TraceRow] = []
    arch_state = {"layers": None, "since_update": 0}
    seen: list[EvaluationRecord] = [nominal_record] if nominal_record.valid else []

    for _ in range(config.trials):
        if clock.expired():
            break
        before = len(trace)
        run_trial(problem, state, config, sobol, buffer, clock, trace, arch_state)
        seen.extend(
            r
            for r in (buffer.records[t.simulation_index] for t in trace[before:])
            if r.valid
        )

    if trace_path:
        with open(trace_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(
                ["simulation_index", "trial_id", "source", "objective", "deviation", "best_obj"]
            )
            for row in trace:
                w.writerow(
                    [
                        row.simulation_index,
                        row.trial_id,
                        row.source,
                        repr(row.objective),
                        repr(row.deviation),
                        repr(row.best_obj),
                    ]
                )

    if state.best_point is not None:
        return Step2Result(state.best_point, state.best_record, True, trace, state)
    # nothing feasible: fall back to the minimum-deviation valid record
    if seen:
        fallback = min(
            seen,
            key=lambda r: (
                fractional_deviation(problem.spec, r),
                _objective_of(problem, r, config.objective_index),
                r.simulation_index,
            ),
        )
        return Step2Result(fallback.input, fallback, False, trace, state)
    return Step2Result(nominal, nominal_record, False, trace, state)
