"""Coarse design search: NSGA-II over chromosomes that encode either a full
architecture (typed components with nodes and catalog values, plus an active
bit) or a plain vector of component values.

The loop follows the classic elitist scheme: evaluate the population through
the shared simulation buffer, rank with fast nondominated sorting and
crowding distance, breed a same-size child population via tournament
selection, single-point crossover and one-field mutation, then keep the best
P of the combined 2P.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .problem import (
    DesignProblem,
    DesignVariable,
    SimulationBuffer,
    evaluate_many,
    objective_values,
)
from .sobol import SobolStream


@dataclass(frozen=True)
class Gene:
    """One component slot: type, terminals, catalog value index, active bit."""

    component_type: int
    node_a: int
    node_b: int
    value_index: int
    active: bool


@dataclass(frozen=True)
class Chromosome:
    """A complete design choice: a fixed-length gene list or a value vector."""

    mode: str  # "architecture" | "values"
    genes: tuple[Gene, ...] | None = None
    values: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.mode == "architecture":
            if not self.genes:
                raise ValueError("architecture chromosome needs genes")
        elif self.mode == "values":
            if self.values is None:
                raise ValueError("values chromosome needs values")
        else:
            raise ValueError(f"unknown chromosome mode {self.mode!r}")

    def __len__(self) -> int:
        return len(self.genes) if self.mode == "architecture" else len(self.values)


@dataclass(frozen=True)
class ArchitectureSpace:
    """Domains for architecture-mode genes."""

    catalogs: tuple[tuple[float, ...], ...]  # per component type, sorted values
    node_count: int
    max_components: int
    fixed_terminals: tuple[int, ...]

    @property
    def n_types(self) -> int:
        return len(self.catalogs)


@dataclass(frozen=True)
class ValueSpace:
    """Domains for values-mode chromosomes."""

    variables: tuple[DesignVariable, ...]


@dataclass
class GAConfig:
    population_size: int = 50
    max_generations: int = 100
    crossover_prob: float = 0.9
    mutation_prob: float = 0.1
    tournament_size: int = 10
    seeds: tuple[Chromosome, ...] = ()
    final_metric: int = 0  # objective index used for stopping and the returned best
    metric_threshold: float | None = None
    stall_generations: int | None = None
    min_generations_before_stall: int = 10
    max_simulations: int | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if len(self.seeds) > self.population_size:
            raise ValueError("more seeds than population slots")
        if self.tournament_size > self.population_size:
            raise ValueError("tournament larger than population")


@dataclass
class RankedPopulation:
    members: list[Chromosome]
    objectives: list[tuple[float, ...]]
    front_index: list[int]
    crowding: list[float]

    def front(self, k: int) -> list[int]:
        return [i for i, f in enumerate(self.front_index) if f == k]


# ---------------------------------------------------------------------------
# ranking
# ---------------------------------------------------------------------------


def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    """a dominates b: no worse everywhere, strictly better somewhere (minimization)."""
    no_worse = all(x <= y for x, y in zip(a, b))
    return no_worse and any(x < y for x, y in zip(a, b))


def fast_nondominated_sort(objectives: Sequence[Sequence[float]]) -> list[int]:
    """Front index per member, front 0 being the nondominated set."""
    n = len(objectives)
    dominated_by: list[list[int]] = [[] for _ in range(n)]
    dom_count = [0] * n
    fronts = [[]]
    for p in range(n):
        for q in range(n):
            if p == q:
                continue
            if dominates(objectives[p], objectives[q]):
                dominated_by[p].append(q)
            elif dominates(objectives[q], objectives[p]):
                dom_count[p] += 1
        if dom_count[p] == 0:
            fronts[0].append(p)
    rank = [0] * n
    i = 0
    while fronts[i]:
        nxt = []
        for p in fronts[i]:
            for q in dominated_by[p]:
                dom_count[q] -= 1
                if dom_count[q] == 0:
                    rank[q] = i + 1
                    nxt.append(q)
        i += 1
        fronts.append(nxt)
    return rank


def crowding_distance(front_objectives: Sequence[Sequence[float]]) -> list[float]:
    """Per-member crowding distance within one front.

    Boundary members get +inf per objective; interior members accumulate the
    neighbour gap normalized by the objective range.  Zero-range objectives
    contribute nothing.
    """
    n = len(front_objectives)
    if n == 0:
        raise ValueError("empty front")
    dist = [0.0] * n
    n_obj = len(front_objectives[0])
    for m in range(n_obj):
        vals = [(front_objectives[i][m], i) for i in range(n)]
        vals.sort()
        span = vals[-1][0] - vals[0][0]
        dist[vals[0][1]] = float("inf")
        dist[vals[-1][1]] = float("inf")
        if span <= 0.0:
            continue
        for k in range(1, n - 1):
            i = vals[k][1]
            if dist[i] != float("inf"):
                dist[i] += (vals[k + 1][0] - vals[k - 1][0]) / span
    return dist


def rank_population(
    members: list[Chromosome], objectives: list[tuple[float, ...]]
) -> RankedPopulation:
    rank = fast_nondominated_sort(objectives)
    crowding = [0.0] * len(members)
    for f in range(max(rank) + 1 if rank else 0):
        idx = [i for i, r in enumerate(rank) if r == f]
        if not idx:
            continue
        dists = crowding_distance([objectives[i] for i in idx])
        for i, d in zip(idx, dists):
            crowding[i] = d
    return RankedPopulation(members, objectives, rank, crowding)


def tournament_select(ranked: RankedPopulation, k: int, rng: np.random.Generator) -> Chromosome:
    """Crowded-comparison tournament: lower front wins, then larger crowding,
    then the earlier index."""
    n = len(ranked.members)
    cand = rng.integers(0, n, size=k)
    best = None
    for i in cand:
        i = int(i)
        if best is None:
            best = i
            continue
        fi, fb = ranked.front_index[i], ranked.front_index[best]
        if fi < fb or (
            fi == fb
            and (
                ranked.crowding[i] > ranked.crowding[best]
                or (ranked.crowding[i] == ranked.crowding[best] and i < best)
            )
        ):
            best = i
    return ranked.members[best]


# ---------------------------------------------------------------------------
# variation operators
# ---------------------------------------------------------------------------


def crossover(
    a: Chromosome, b: Chromosome, prob: float, rng: np.random.Generator
) -> tuple[Chromosome, Chromosome]:
    """Single-point crossover at gene/coordinate boundaries."""
    if a.mode != b.mode or len(a) != len(b):
        raise ValueError("parents must share mode and length")
    n = len(a)
    if n < 2 or rng.random() >= prob:
        return a, b
    cut = int(rng.integers(1, n))
    if a.mode == "architecture":
        ga = a.genes[:cut] + b.genes[cut:]
        gb = b.genes[:cut] + a.genes[cut:]
        return replace(a, genes=ga), replace(b, genes=gb)
    va = a.values[:cut] + b.values[cut:]
    vb = b.values[:cut] + a.values[cut:]
    return replace(a, values=va), replace(b, values=vb)


def _redraw_variable(var: DesignVariable, rng: np.random.Generator) -> float:
    if var.kind == "catalog":
        return float(var.catalog_values[int(rng.integers(0, len(var.catalog_values)))])
    return float(rng.uniform(var.lower, var.upper))


def mutate(
    c: Chromosome,
    prob: float,
    rng: np.random.Generator,
    space: ArchitectureSpace | ValueSpace,
) -> Chromosome:
    """Independent per-gene mutation; a mutating gene has exactly one field
    re-drawn uniformly from its domain.  Values mode re-draws coordinates
    within their bounds/catalogs."""
    if c.mode == "values":
        vals = list(c.values)
        for i, var in enumerate(space.variables):
            if rng.random() < prob:
                vals[i] = _redraw_variable(var, rng)
        return replace(c, values=tuple(vals))

    genes = list(c.genes)
    for i, g in enumerate(genes):
        if rng.random() >= prob:
            continue
        which = int(rng.integers(0, 5))
        if which == 0:
            genes[i] = replace(g, component_type=int(rng.integers(0, space.n_types)))
            cat = space.catalogs[genes[i].component_type]
            if genes[i].value_index >= len(cat):
                genes[i] = replace(genes[i], value_index=int(rng.integers(0, len(cat))))
        elif which == 1:
            genes[i] = replace(g, node_a=int(rng.integers(0, space.node_count)))
        elif which == 2:
            genes[i] = replace(g, node_b=int(rng.integers(0, space.node_count)))
        elif which == 3:
            cat = space.catalogs[g.component_type]
            genes[i] = replace(g, value_index=int(rng.integers(0, len(cat))))
        else:
            genes[i] = replace(g, active=not g.active)
    return replace(c, genes=tuple(genes))


def repair(chromosome: Chromosome, fixed_terminals: Sequence[int]) -> Chromosome:
    """Ensure every fixed terminal touches at least one active gene.

    Deterministic procedure: activate gene 0 if nothing is active, then for
    each uncovered terminal (in declaration order) rewire node_a of the
    lowest-indexed gene not yet used by this repair, activating it if needed.
    """
    if chromosome.mode != "architecture":
        return chromosome
    genes = list(chromosome.genes)
    if not any(g.active for g in genes):
        genes[0] = replace(genes[0], active=True)
    used: set[int] = set()
    for _ in range(len(genes) + len(fixed_terminals)):
        covered = set()
        for g in genes:
            if g.active:
                covered.add(g.node_a)
                covered.add(g.node_b)
        uncovered = [t for t in fixed_terminals if t not in covered]
        if not uncovered:
            break
        target = uncovered[0]
        pick = None
        for i, g in enumerate(genes):  # active genes first
            if g.active and i not in used:
                pick = i
                break
        if pick is None:
            for i, g in enumerate(genes):
                if i not in used:
                    pick = i
                    break
        if pick is None:
            # every gene already rewired; reuse the last one rather than loop
            pick = len(genes) - 1
        genes[pick] = replace(genes[pick], node_a=int(target), active=True)
        used.add(pick)
    return replace(chromosome, genes=tuple(genes))


# ---------------------------------------------------------------------------
# initialization & decoding
# ---------------------------------------------------------------------------


def random_architecture(
    space: ArchitectureSpace, rng: np.random.Generator
) -> Chromosome:
    genes = []
    for _ in range(space.max_components):
        t = int(rng.integers(0, space.n_types))
        genes.append(
            Gene(
                component_type=t,
                node_a=int(rng.integers(0, space.node_count)),
                node_b=int(rng.integers(0, space.node_count)),
                value_index=int(rng.integers(0, len(space.catalogs[t]))),
                active=bool(rng.random() < 0.5),
            )
        )
    return repair(Chromosome("architecture", genes=tuple(genes)), space.fixed_terminals)


def initialize_population(
    config: GAConfig,
    space: ArchitectureSpace | ValueSpace,
    sobol: SobolStream,
    rng: np.random.Generator,
) -> list[Chromosome]:
    """Seeds first, the rest random (architecture) or Sobol-scaled (values)."""
    pop: list[Chromosome] = []
    for s in config.seeds:
        if isinstance(space, ArchitectureSpace):
            pop.append(repair(s, space.fixed_terminals))
        else:
            pop.append(s)
    need = config.population_size - len(pop)
    if isinstance(space, ArchitectureSpace):
        pop.extend(random_architecture(space, rng) for _ in range(need))
        return pop
    u = sobol.next_points(need) if need else np.zeros((0, len(space.variables)))
    for row in u:
        vals = []
        for ui, var in zip(row, space.variables):
            if var.kind == "catalog":
                k = min(int(ui * len(var.catalog_values)), len(var.catalog_values) - 1)
                vals.append(float(var.catalog_values[k]))
            else:
                vals.append(float(var.lower + ui * (var.upper - var.lower)))
        pop.append(Chromosome("values", values=tuple(vals)))
    return pop


def decode_values(chromosome: Chromosome) -> tuple[float, ...]:
    return chromosome.values


# ---------------------------------------------------------------------------
# the loop
# ---------------------------------------------------------------------------


@dataclass
class Step1Result:
    best: Chromosome
    best_point: tuple[float, ...]
    best_objectives: tuple[float, ...]
    ranked: RankedPopulation
    generations: int
    simulations: int
    stop_reason: str


def _select_survivors(
    objectives: list[tuple[float, ...]], count: int
) -> list[int]:
    """NSGA-II environmental selection: whole fronts, last one by crowding."""
    rank = fast_nondominated_sort(objectives)
    chosen: list[int] = []
    f = 0
    while True:
        idx = [i for i, r in enumerate(rank) if r == f]
        if not idx:
            break
        if len(chosen) + len(idx) <= count:
            chosen.extend(idx)
        else:
            dists = crowding_distance([objectives[i] for i in idx])
            order = sorted(range(len(idx)), key=lambda k: (-dists[k], idx[k]))
            chosen.extend(idx[k] for k in order[: count - len(chosen)])
            break
        if len(chosen) == count:
            break
        f += 1
    return chosen


def run_step1(
    problem: DesignProblem,
    config: GAConfig,
    buffer: SimulationBuffer,
    space: ArchitectureSpace | ValueSpace | None = None,
    decoder: Callable[[Chromosome], tuple[float, ...]] | None = None,
    trace_path=None,
    jobs: int = 1,
) -> Step1Result:
    """Run the evolutionary coarse search until a stopping criterion fires.

    Stop criteria (any): the tracked metric reaches metric_threshold; the
    metric has not strictly decreased for stall_generations after
    min_generations_before_stall; the generation or simulation budget is
    exhausted.  Returns the final-generation member minimizing
    config.final_metric.
    """
    if space is None:
        space = ValueSpace(problem.variables)
    if decoder is None:
        decoder = decode_values
    rng = np.random.default_rng(config.rng_seed)
    sobol = SobolStream(len(problem.variables))
    pop = initialize_population(config, space, sobol, rng)

    sims_start = len(buffer)
    trace_file = open(trace_path, "w", newline="") if trace_path else None
    writer = None
    n_obj = problem.spec.n_objectives
    if trace_file:
        writer = csv.writer(trace_file)
        writer.writerow(
            ["generation"]
            + [f"best_obj{m}" for m in range(n_obj)]
            + [f"mean_obj{m}" for m in range(n_obj)]
            + ["front0_size", "cumulative_simulations"]
        )

    def eval_pop(members: list[Chromosome]) -> list[tuple[float, ...]]:
        points = [decoder(c) for c in members]
        records = evaluate_many(problem, points, buffer, provenance="step1", jobs=jobs)
        return [objective_values(problem.spec, r) for r in records]

    objs = eval_pop(pop)
    best_metric = min(o[config.final_metric] for o in objs)
    stall = 0
    stop_reason = "max_generations"
    generation = 0

    for generation in range(config.max_generations):
        ranked = rank_population(pop, objs)
        if writer:
            front0 = sum(1 for f in ranked.front_index if f == 0)
            cols = [generation]
            cols += [min(o[m] for o in objs) for m in range(n_obj)]
            cols += [float(np.mean([o[m] for o in objs])) for m in range(n_obj)]
            cols += [front0, len(buffer) - sims_start]
            writer.writerow(cols)

        if (
            config.metric_threshold is not None
            and best_metric <= config.metric_threshold
        ):
            stop_reason = "metric_threshold"
            break
        if config.stall_generations is not None and stall >= config.stall_generations:
            stop_reason = "stalled"
            break
        if (
            config.max_simulations is not None
            and len(buffer) - sims_start >= config.max_simulations
        ):
            stop_reason = "simulation_budget"
            break
        if generation == config.max_generations - 1:
            break

        mating = [
            tournament_select(ranked, config.tournament_size, rng)
            for _ in range(config.population_size)
        ]
        children: list[Chromosome] = []
        for i in range(0, len(mating) - 1, 2):
            c1, c2 = crossover(mating[i], mating[i + 1], config.crossover_prob, rng)
            children.append(mutate(c1, config.mutation_prob, rng, space))
            children.append(mutate(c2, config.mutation_prob, rng, space))
        if len(children) < config.population_size:  # odd population
            children.append(mutate(mating[-1], config.mutation_prob, rng, space))
        if isinstance(space, ArchitectureSpace):
            children = [repair(c, space.fixed_terminals) for c in children]
        children = children[: config.population_size]

        child_objs = eval_pop(children)
        combined = pop + children
        combined_objs = objs + child_objs
        keep = _select_survivors(combined_objs, config.population_size)
        pop = [combined[i] for i in keep]
        objs = [combined_objs[i] for i in keep]

        new_best = min(o[config.final_metric] for o in objs)
        if generation + 1 > config.min_generations_before_stall:
            if new_best < best_metric:
                stall = 0
            else:
                stall += 1
        best_metric = min(best_metric, new_best)

    ranked = rank_population(pop, objs)
    if writer:
        front0 = sum(1 for f in ranked.front_index if f == 0)
        cols = [generation + 1]
        cols += [min(o[m] for o in objs) for m in range(n_obj)]
        cols += [float(np.mean([o[m] for o in objs])) for m in range(n_obj)]
        cols += [front0, len(buffer) - sims_start]
        writer.writerow(cols)
        trace_file.close()

    best_i = min(range(len(pop)), key=lambda i: (objs[i][config.final_metric], i))
    return Step1Result(
        best=pop[best_i],
        best_point=decoder(pop[best_i]),
        best_objectives=objs[best_i],
        ranked=ranked,
        generations=generation + 1,
        simulations=len(buffer) - sims_start,
        stop_reason=stop_reason,
    )
