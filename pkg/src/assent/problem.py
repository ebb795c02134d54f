"""Problem definitions: variables, objectives, hard constraints, and the
simulation buffer shared by the coarse search and the fine-tuning step.

Every simulator call is recorded exactly once; the buffer doubles as a lookup
table so re-evaluating an already-seen design point never touches the
simulator again.
"""

from __future__ import annotations

import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

SENTINEL_OBJECTIVE = 1e18

MINIMIZE = "minimize"
MAXIMIZE = "maximize"

PROVENANCES = ("step1", "step2-init", "step2-milp", "step2-random")


class SimulationError(RuntimeError):
    """Raised by simulators to signal a failed/invalid evaluation."""


@dataclass(frozen=True)
class DesignVariable:
    """One decision variable: a continuous interval or an ordered catalog."""

    name: str
    kind: str  # "continuous" | "catalog"
    lower: float | None = None
    upper: float | None = None
    catalog_values: tuple[float, ...] | None = None
    unit: str = ""

    def __post_init__(self):
        if self.kind == "continuous":
            if self.lower is None or self.upper is None or not self.lower < self.upper:
                raise ValueError(f"variable {self.name}: continuous requires lower < upper")
        elif self.kind == "catalog":
            vals = self.catalog_values
            if not vals:
                raise ValueError(f"variable {self.name}: catalog requires values")
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise ValueError(f"variable {self.name}: catalog must be strictly sorted")
        else:
            raise ValueError(f"variable {self.name}: unknown kind {self.kind!r}")

    @property
    def span(self) -> tuple[float, float]:
        if self.kind == "continuous":
            return (self.lower, self.upper)
        return (self.catalog_values[0], self.catalog_values[-1])

    def contains(self, value: float) -> bool:
        if self.kind == "continuous":
            return self.lower <= value <= self.upper
        return any(value == v for v in self.catalog_values)


@dataclass(frozen=True)
class Specification:
    """Objectives and hard constraints over named simulator outputs.

    ``objectives`` holds (output_index, direction) pairs; ``hard_constraints``
    holds (output_index, relation, bound) with relation "<=" or ">=".  An
    equality requirement is expressed as a ``<=``/``>=`` pair with equal
    bounds.
    """

    objectives: tuple[tuple[int, str], ...]
    hard_constraints: tuple[tuple[int, str, float], ...] = ()
    output_names: tuple[str, ...] = ()

    def __post_init__(self):
        n = len(self.output_names)
        if not self.objectives:
            raise ValueError("at least one objective is required")
        for idx, direction in self.objectives:
            if direction not in (MINIMIZE, MAXIMIZE):
                raise ValueError(f"bad objective direction {direction!r}")
            if n and not 0 <= idx < n:
                raise ValueError(f"objective output index {idx} out of range")
        for idx, rel, _ in self.hard_constraints:
            if rel not in ("<=", ">="):
                raise ValueError(f"bad constraint relation {rel!r}")
            if n and not 0 <= idx < n:
                raise ValueError(f"constraint output index {idx} out of range")

    @property
    def n_objectives(self) -> int:
        return len(self.objectives)

    def constraints_satisfied(self, outputs: Sequence[float], tol: float = 0.0) -> bool:
        for idx, rel, bound in self.hard_constraints:
            v = outputs[idx]
            if rel == "<=" and v > bound + tol:
                return False
            if rel == ">=" and v < bound - tol:
                return False
        return True


@dataclass(frozen=True)
class EvaluationRecord:
    """One simulator call: input point, raw outputs, validity, provenance."""

    input: tuple[float, ...]
    raw_outputs: tuple[float, ...]
    valid: bool
    provenance: str
    trial_id: int
    simulation_index: int

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")


def canonical_key(values: Sequence[float]) -> str:
    """Exact full-precision decimal key for a design point.

    repr() of a Python float is the shortest decimal string that round-trips,
    so distinct doubles always get distinct keys and exact repeats collide.
    """
    return ",".join(repr(float(v)) for v in values)


class SimulationBuffer:
    """Append-only log of simulator calls, indexed for exact-input lookup.

    Thread-safety: appends are serialized by a lock; reads of already-appended
    records are safe from any thread (records are immutable).
    """

    def __init__(self):
        self._records: list[EvaluationRecord] = []
        self._index: dict[str, int] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[EvaluationRecord]:
        return iter(self._records)

    @property
    def records(self) -> tuple[EvaluationRecord, ...]:
        return tuple(self._records)

    def lookup(self, values: Sequence[float]) -> EvaluationRecord | None:
        pos = self._index.get(canonical_key(values))
        return None if pos is None else self._records[pos]

    def append(
        self,
        values: Sequence[float],
        raw_outputs: Sequence[float],
        valid: bool,
        provenance: str,
        trial_id: int,
    ) -> EvaluationRecord:
        """Record a fresh simulator call; returns the stored record.

        If the key is already present (a concurrent racer got there first)
        the existing record is returned unchanged.
        """
        key = canonical_key(values)
        with self._lock:
            pos = self._index.get(key)
            if pos is not None:
                return self._records[pos]
            rec = EvaluationRecord(
                input=tuple(float(v) for v in values),
                raw_outputs=tuple(float(v) for v in raw_outputs),
                valid=valid,
                provenance=provenance,
                trial_id=trial_id,
                simulation_index=len(self._records),
            )
            self._records.append(rec)
            self._index[key] = len(self._records) - 1
            return rec

    def save_jsonl(self, path) -> None:
        with open(path, "w", encoding="ascii") as f:
            for rec in self._records:
                f.write(
                    json.dumps(
                        {
                            "input": list(rec.input),
                            "outputs": list(rec.raw_outputs),
                            "valid": rec.valid,
                            "provenance": rec.provenance,
                            "trial_id": rec.trial_id,
                            "simulation_index": rec.simulation_index,
                        },
                        separators=(",", ":"),
                    )
                )
                f.write("\n")

    @classmethod
    def load_jsonl(cls, path) -> "SimulationBuffer":
        buf = cls()
        with open(path, "r", encoding="ascii") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                d = json.loads(line)
                rec = buf.append(
                    d["input"], d["outputs"], d["valid"], d["provenance"], d["trial_id"]
                )
                if rec.simulation_index != d["simulation_index"]:
                    raise ValueError("buffer file has non-consecutive simulation indices")
        return buf


@dataclass
class DesignProblem:
    """A simulator bound to its variables, objectives and hard constraints."""

    name: str
    variables: tuple[DesignVariable, ...]
    spec: Specification
    simulator: Callable[[tuple[float, ...]], Sequence[float]]
    description: str = ""
    reference_optimum: float | None = None

    @property
    def n_variables(self) -> int:
        return len(self.variables)

    def bounds(self) -> list[tuple[float, float]]:
        return [v.span for v in self.variables]

    def validate_point(self, values: Sequence[float]) -> None:
        if len(values) != len(self.variables):
            raise ValueError(
                f"point has {len(values)} entries, problem has {len(self.variables)} variables"
            )
        for v, var in zip(values, self.variables):
            if not var.contains(float(v)):
                raise ValueError(f"value {v} outside variable {var.name}")


def evaluate(
    problem: DesignProblem,
    point: Sequence[float],
    buffer: SimulationBuffer,
    provenance: str = "step1",
    trial_id: int = 0,
) -> EvaluationRecord:
    """Evaluate a design point, reusing the buffer as a lookup table.

    A cached input returns its stored record without touching the simulator.
    Simulator failures (SimulationError or non-finite outputs) are stored as
    valid=False records and never raised past this boundary.
    """
    cached = buffer.lookup(point)
    if cached is not None:
        return cached
    try:
        outputs = tuple(float(v) for v in problem.simulator(tuple(point)))
        if len(outputs) != len(problem.spec.output_names):
            raise SimulationError(
                f"simulator returned {len(outputs)} outputs, expected "
                f"{len(problem.spec.output_names)}"
            )
        if not all(np.isfinite(outputs)):
            raise SimulationError("simulator returned non-finite outputs")
        return buffer.append(point, outputs, True, provenance, trial_id)
    except SimulationError:
        return buffer.append(point, (), False, provenance, trial_id)


def evaluate_many(
    problem: DesignProblem,
    points: Iterable[Sequence[float]],
    buffer: SimulationBuffer,
    provenance: str = "step1",
    trial_id: int = 0,
    jobs: int = 1,
) -> list[EvaluationRecord]:
    """Evaluate many points; results and buffer order match serial evaluation.

    With jobs > 1 the simulator calls run on a thread pool, but records are
    appended in first-occurrence order so the buffer contents are identical
    to a serial run.
    """
    points = [tuple(float(v) for v in p) for p in points]
    if jobs <= 1:
        return [evaluate(problem, p, buffer, provenance, trial_id) for p in points]

    fresh: list[tuple[float, ...]] = []
    seen: set[str] = set()
    for p in points:
        key = canonical_key(p)
        if key not in seen and buffer.lookup(p) is None:
            seen.add(key)
            fresh.append(p)

    def _run(p):
        try:
            outputs = tuple(float(v) for v in problem.simulator(p))
            if len(outputs) != len(problem.spec.output_names) or not all(np.isfinite(outputs)):
                return None
            return outputs
        except SimulationError:
            return None

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        results = dict(zip((canonical_key(p) for p in fresh), pool.map(_run, fresh)))

    out = []
    for p in points:
        cached = buffer.lookup(p)
        if cached is not None:
            out.append(cached)
            continue
        outputs = results[canonical_key(p)]
        if outputs is None:
            out.append(buffer.append(p, (), False, provenance, trial_id))
        else:
            out.append(buffer.append(p, outputs, True, provenance, trial_id))
    return out


def objective_values(spec: Specification, record: EvaluationRecord) -> tuple[float, ...]:
    """Per-objective values under the minimization convention.

    Maximize objectives are negated; invalid records map to a sentinel vector
    so failed simulations sort behind every real design.
    """
    if not record.valid:
        return (SENTINEL_OBJECTIVE,) * spec.n_objectives
    out = []
    for idx, direction in spec.objectives:
        v = record.raw_outputs[idx]
        out.append(-v if direction == MAXIMIZE else v)
    return tuple(out)
