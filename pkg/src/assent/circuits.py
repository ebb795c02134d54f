"""Analytic linear-circuit simulation via modified nodal analysis.

R, L, C elements plus a single ideal 1 V AC source; the complex nodal system
is assembled and solved per frequency, giving the transfer function from the
source to the designated output node.  This is the in-repo "expensive
simulator" behind the low-pass filter case study: chromosomes decode to
netlists, netlists produce frequency responses, and responses reduce to
filter metrics and search objectives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .evolve import ArchitectureSpace, Chromosome, Gene
from .problem import (
    DesignProblem,
    DesignVariable,
    SimulationError,
    Specification,
)

KINDS = ("R", "L", "C")
MIN_VALUE = 1e-15

PASSBAND_WEIGHT = 40.0
STOPBAND_WEIGHT = 1.0
HALF_POWER_DB = 20.0 * math.log10(math.sqrt(2.0))  # ~3.0103 dB


class InvalidDesignError(SimulationError):
    """The netlist cannot be analysed (floating nodes, singular system, ...)."""


@dataclass(frozen=True)
class Element:
    kind: str  # R | L | C | VAC
    node_a: int
    node_b: int
    value: float


@dataclass(frozen=True)
class Netlist:
    """Elements plus the designated input and output nodes; node 0 is ground."""

    elements: tuple[Element, ...]
    input_node: int
    output_node: int

    def __post_init__(self):
        sources = [e for e in self.elements if e.kind == "VAC"]
        if len(sources) != 1:
            raise InvalidDesignError(f"netlist needs exactly one VAC source, has {len(sources)}")
        for e in self.elements:
            if e.kind not in ("VAC",) + KINDS:
                raise InvalidDesignError(f"unknown element kind {e.kind!r}")
            if e.value <= MIN_VALUE:
                raise InvalidDesignError(f"degenerate element value {e.value!r}")
            if e.node_a < 0 or e.node_b < 0:
                raise InvalidDesignError("negative node index")
        nodes = self.nodes()
        if self.input_node not in nodes or self.output_node not in nodes:
            raise InvalidDesignError("input/output node not present in the netlist")

    def nodes(self) -> set[int]:
        out = {0}
        for e in self.elements:
            out.add(e.node_a)
            out.add(e.node_b)
        return out

    @property
    def source(self) -> Element:
        return next(e for e in self.elements if e.kind == "VAC")

    def passives(self) -> tuple[Element, ...]:
        return tuple(e for e in self.elements if e.kind != "VAC")


@dataclass(frozen=True)
class FrequencyResponse:
    frequencies: np.ndarray
    transfer: np.ndarray  # complex V(output)/V(source)


@dataclass(frozen=True)
class FilterMetrics:
    dc_gain_db: float
    bandwidth_hz: float
    phase_at_bw_deg: float
    probe_gains_db: tuple[float, ...]
    active_count: int
    bandwidth_found: bool = True


def default_grid(f_lo: float = 10.0, f_hi: float = 1e6, per_decade: int = 30) -> np.ndarray:
    """Log-spaced frequency grid, 30 points per decade by default."""
    n = int(round(per_decade * math.log10(f_hi / f_lo))) + 1
    return np.logspace(math.log10(f_lo), math.log10(f_hi), n)


# ---------------------------------------------------------------------------
# modified nodal analysis
# ---------------------------------------------------------------------------


def ac_solve(netlist: Netlist, frequencies: Sequence[float]) -> FrequencyResponse:
    """Solve the complex nodal system at every frequency.

    Raises InvalidDesignError when the system is singular or numerically
    untrustworthy (floating subcircuits, zero-admittance paths).
    """
    freqs = np.asarray(frequencies, dtype=float)
    nodes = sorted(netlist.nodes() - {0})
    pos = {n: i for i, n in enumerate(nodes)}
    n = len(nodes)
    src = netlist.source
    F = freqs.size

    A = np.zeros((F, n + 1, n + 1), dtype=complex)
    omega = 2.0 * math.pi * freqs
    for e in netlist.passives():
        if e.kind == "R":
            y = np.full(F, 1.0 / e.value, dtype=complex)
        elif e.kind == "C":
            y = 1j * omega * e.value
        else:  # L
            y = 1.0 / (1j * omega * e.value)
        a = pos.get(e.node_a, -1)
        b = pos.get(e.node_b, -1)
        if a >= 0:
            A[:, a, a] += y
        if b >= 0:
            A[:, b, b] += y
        if a >= 0 and b >= 0:
            A[:, a, b] -= y
            A[:, b, a] -= y

    rhs = np.zeros(n + 1, dtype=complex)
    # source branch: current unknown is column/row n
    p = pos.get(src.node_a, -1)
    q = pos.get(src.node_b, -1)
    if p >= 0:
        A[:, p, n] += 1.0
        A[:, n, p] += 1.0
    if q >= 0:
        A[:, q, n] -= 1.0
        A[:, n, q] -= 1.0
    rhs[n] = src.value

    try:
        v = np.linalg.solve(A, np.broadcast_to(rhs, (F, n + 1))[:, :, None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise InvalidDesignError(f"singular nodal system: {exc}") from None
    if not np.all(np.isfinite(v)):
        raise InvalidDesignError("non-finite nodal solution")
    resid = np.abs(np.einsum("fij,fj->fi", A, v) - rhs).max()
    if resid > 1e-6 * (1.0 + abs(src.value)):
        raise InvalidDesignError(f"ill-conditioned nodal system (residual {resid:.2e})")

    if netlist.output_node == 0:
        transfer = np.zeros(F, dtype=complex)
    else:
        transfer = v[:, pos[netlist.output_node]] / src.value
    if not np.all(np.isfinite(transfer)):
        raise InvalidDesignError("non-finite transfer")
    return FrequencyResponse(freqs, transfer)


def measure(
    response: FrequencyResponse,
    probes: Sequence[float] = (),
    active_count: int = 0,
) -> FilterMetrics:
    """Gain/bandwidth/phase metrics from a frequency response.

    Bandwidth is the first half-power crossing relative to the low-frequency
    gain, located by log-frequency interpolation; if the response never
    crosses, the grid maximum is reported with bandwidth_found=False.
    """
    f = response.frequencies
    mag = np.abs(response.transfer)
    gain_db = 20.0 * np.log10(np.maximum(mag, 1e-18))
    phase_deg = np.degrees(np.unwrap(np.angle(response.transfer)))
    logf = np.log10(f)

    dc_gain = float(gain_db[0])
    threshold = dc_gain - HALF_POWER_DB
    below = np.where(gain_db < threshold)[0]
    if below.size == 0 or below[0] == 0:
        bw = float(f[-1]) if below.size == 0 else float(f[0])
        found = False
        phase_at_bw = float(np.interp(math.log10(bw), logf, phase_deg))
    else:
        i = int(below[0])
        x0, x1 = logf[i - 1], logf[i]
        y0, y1 = gain_db[i - 1], gain_db[i]
        t = (threshold - y0) / (y1 - y0)
        bw_log = x0 + t * (x1 - x0)
        bw = float(10.0**bw_log)
        found = True
        phase_at_bw = float(np.interp(bw_log, logf, phase_deg))

    probe_gains = tuple(float(np.interp(math.log10(p), logf, gain_db)) for p in probes)
    return FilterMetrics(
        dc_gain_db=dc_gain,
        bandwidth_hz=bw,
        phase_at_bw_deg=phase_at_bw,
        probe_gains_db=probe_gains,
        active_count=active_count,
        bandwidth_found=found,
    )


def first_order_template(frequencies: np.ndarray, cutoff_hz: float) -> tuple[np.ndarray, np.ndarray]:
    """Magnitude (dB) and phase (deg) of the ideal single-pole low-pass."""
    r = frequencies / cutoff_hz
    mag_db = -10.0 * np.log10(1.0 + r**2)
    phase_deg = -np.degrees(np.arctan(r))
    return mag_db, phase_deg


def filter_objectives(
    response: FrequencyResponse,
    cutoff_hz: float,
    active_count: int,
    passband_weight: float = PASSBAND_WEIGHT,
    stopband_weight: float = STOPBAND_WEIGHT,
) -> tuple[float, float, float]:
    """Weighted template-tracking errors plus the active component count.

    (i) weighted sum of |template - observed| magnitude in dB over the grid,
    (ii) the same for phase in degrees, (iii) the number of active
    components; all minimized.
    """
    f = response.frequencies
    mag_t, phase_t = first_order_template(f, cutoff_hz)
    mag_o = 20.0 * np.log10(np.maximum(np.abs(response.transfer), 1e-18))
    phase_o = np.degrees(np.unwrap(np.angle(response.transfer)))
    w = np.where(f <= cutoff_hz, passband_weight, stopband_weight)
    mag_err = float(np.sum(w * np.abs(mag_t - mag_o)))
    phase_err = float(np.sum(w * np.abs(phase_t - phase_o)))
    return mag_err, phase_err, float(active_count)


# ---------------------------------------------------------------------------
# chromosome <-> netlist <-> flat point
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CircuitSpace:
    """Gene domains plus the fixed terminals of the circuit being evolved."""

    catalogs: tuple[tuple[float, ...], ...]  # indexed by KINDS order
    node_count: int
    input_node: int
    output_node: int
    ground: int = 0
    source_amplitude: float = 1.0

    @property
    def fixed_terminals(self) -> tuple[int, ...]:
        return (self.input_node, self.output_node, self.ground)

    def arch_space(self, max_components: int) -> ArchitectureSpace:
        return ArchitectureSpace(
            catalogs=self.catalogs,
            node_count=self.node_count,
            max_components=max_components,
            fixed_terminals=self.fixed_terminals,
        )


def decode(chromosome: Chromosome, space: CircuitSpace) -> Netlist:
    """Active genes become elements; the AC source is attached input-to-ground.

    Parallel duplicates are kept as distinct elements: merging them is an
    explicit cleanup step, never automatic.
    """
    if chromosome.mode != "architecture":
        raise ValueError("decode expects an architecture chromosome")
    elements = [Element("VAC", space.input_node, space.ground, space.source_amplitude)]
    for g in chromosome.genes:
        if not g.active:
            continue
        kind = KINDS[g.component_type]
        value = space.catalogs[g.component_type][g.value_index]
        elements.append(Element(kind, g.node_a, g.node_b, float(value)))
    return Netlist(tuple(elements), space.input_node, space.output_node)


def netlist_to_point(netlist: Netlist) -> tuple[float, ...]:
    """Flatten passive elements to (kind_index, node_a, node_b, value) groups.

    This is the canonical design point stored in the simulation buffer, so
    chromosomes that decode to the same active elements share cache entries
    regardless of their inactive genes.
    """
    flat: list[float] = []
    for e in netlist.passives():
        flat.extend((float(KINDS.index(e.kind)), float(e.node_a), float(e.node_b), e.value))
    return tuple(flat)


def point_to_netlist(point: Sequence[float], space: CircuitSpace) -> Netlist:
    if len(point) % 4 != 0:
        raise InvalidDesignError("flat circuit point length must be a multiple of 4")
    elements = [Element("VAC", space.input_node, space.ground, space.source_amplitude)]
    for i in range(0, len(point), 4):
        k, a, b, v = point[i : i + 4]
        elements.append(Element(KINDS[int(k)], int(a), int(b), float(v)))
    return Netlist(tuple(elements), space.input_node, space.output_node)


def chromosome_decoder(space: CircuitSpace):
    """Decoder callable for run_step1: chromosome -> buffer design point."""

    def _decode(chromosome: Chromosome) -> tuple[float, ...]:
        return netlist_to_point(decode(chromosome, space))

    return _decode


# ---------------------------------------------------------------------------
# netlist text format
# ---------------------------------------------------------------------------


def format_netlist(netlist: Netlist) -> str:
    """Canonical text form: an output directive, then one element per line.

    Element lines are ``<KIND><id> <node_a> <node_b> <value-SI>``; the VAC
    line carries the source amplitude.  The output node cannot be inferred
    from the elements, hence the leading ``.output`` directive.
    """
    lines = [f".output {netlist.output_node}"]
    counters: dict[str, int] = {}
    src = netlist.source
    lines.append(f"VAC1 {src.node_a} {src.node_b} {src.value!r}")
    for e in netlist.passives():
        counters[e.kind] = counters.get(e.kind, 0) + 1
        lines.append(f"{e.kind}{counters[e.kind]} {e.node_a} {e.node_b} {e.value!r}")
    return "\n".join(lines) + "\n"


def parse_netlist(text: str) -> Netlist:
    output_node = None
    elements = []
    input_node = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith("*"):
            continue
        if line.startswith(".output"):
            output_node = int(line.split()[1])
            continue
        name, a, b, value = line.split()
        kind = "VAC" if name.upper().startswith("VAC") else name[0].upper()
        e = Element(kind, int(a), int(b), float(value))
        if kind == "VAC":
            input_node = e.node_a
        elements.append(e)
    if output_node is None:
        raise ValueError("netlist text is missing the .output directive")
    if input_node is None:
        raise ValueError("netlist text has no VAC source")
    return Netlist(tuple(elements), input_node, output_node)


# ---------------------------------------------------------------------------
# explicit cleanup passes (never run automatically)
# ---------------------------------------------------------------------------


def merge_parallel(netlist: Netlist) -> Netlist:
    """Merge same-kind elements that share the same (unordered) node pair."""
    groups: dict[tuple[str, int, int], list[Element]] = {}
    order: list[tuple[str, int, int]] = []
    for e in netlist.passives():
        key = (e.kind, min(e.node_a, e.node_b), max(e.node_a, e.node_b))
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(e)
    elements = [netlist.source]
    for key in order:
        kind, a, b = key
        vals = [e.value for e in groups[key]]
        if kind == "C":
            merged = sum(vals)
        else:  # parallel R or L combine reciprocally
            merged = 1.0 / sum(1.0 / v for v in vals)
        elements.append(Element(kind, a, b, merged))
    return Netlist(tuple(elements), netlist.input_node, netlist.output_node)


def prune_dangling(netlist: Netlist) -> Netlist:
    """Drop self-loops, elements off the input/output component, and
    iteratively any element hanging from a degree-1 internal node."""
    keep = [e for e in netlist.passives() if e.node_a != e.node_b]
    protected = {netlist.input_node, netlist.output_node, 0}

    def component(elements, start):
        adj: dict[int, set[int]] = {}
        for e in elements:
            adj.setdefault(e.node_a, set()).add(e.node_b)
            adj.setdefault(e.node_b, set()).add(e.node_a)
        seen = {start}
        stack = [start]
        while stack:
            u = stack.pop()
            for w in adj.get(u, ()):
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return seen

    changed = True
    while changed:
        changed = False
        reach = component(keep + [netlist.source], netlist.input_node)
        pruned = [e for e in keep if e.node_a in reach and e.node_b in reach]
        if len(pruned) != len(keep):
            keep, changed = pruned, True
        degree: dict[int, int] = {}
        for e in keep + [netlist.source]:
            degree[e.node_a] = degree.get(e.node_a, 0) + 1
            degree[e.node_b] = degree.get(e.node_b, 0) + 1
        pruned = [
            e
            for e in keep
            if not (
                (degree[e.node_a] == 1 and e.node_a not in protected)
                or (degree[e.node_b] == 1 and e.node_b not in protected)
            )
        ]
        if len(pruned) != len(keep):
            keep, changed = pruned, True
    return Netlist((netlist.source, *keep), netlist.input_node, netlist.output_node)


# ---------------------------------------------------------------------------
# the low-pass filter case study
# ---------------------------------------------------------------------------

LOWPASS_CATALOGS = (
    (1.0, 10.0, 600.0, 1200.0),  # R, ohm
    (1e-6, 10e-3, 15.24e-3, 61.86e-3),  # L, henry
    (1e-12, 119.37e-9, 155.12e-9, 1e-5),  # C, farad
)
LOWPASS_SPACE = CircuitSpace(
    catalogs=LOWPASS_CATALOGS,
    node_count=5,
    input_node=1,
    output_node=3,
)
LOWPASS_CUTOFF_HZ = 1000.0
LOWPASS_PROBES_HZ = (200.0, 500.0, 2000.0)
LOWPASS_MAX_COMPONENTS = 10


def butterworth_seed() -> Chromosome:
    """Seed chromosome: an RLC ladder low-pass around 1 kHz, padded inactive.

    R 600 from the input, shunt C 155.12n, series L 61.86m to the output,
    shunt C 119.37n; the remaining six gene slots are inactive padding.
    """
    active = [
        Gene(0, 1, 2, 2, True),  # R 600 between input and node 2
        Gene(2, 2, 0, 2, True),  # C 155.12e-9 to ground
        Gene(1, 2, 3, 3, True),  # L 61.86e-3 to the output node
        Gene(2, 3, 0, 1, True),  # C 119.37e-9 to ground
    ]
    padding = [Gene(0, 0, 0, 0, False)] * (LOWPASS_MAX_COMPONENTS - len(active))
    return Chromosome("architecture", genes=tuple(active + padding))


def lowpass_architecture_problem(
    grid: np.ndarray | None = None,
) -> tuple[DesignProblem, ArchitectureSpace, Chromosome]:
    """Architecture-mode search problem for the 1 kHz low-pass case study."""
    freqs = default_grid() if grid is None else grid
    space = LOWPASS_SPACE

    def simulator(point: tuple[float, ...]) -> tuple[float, ...]:
        netlist = point_to_netlist(point, space)
        response = ac_solve(netlist, freqs)
        n_active = len(netlist.passives())
        mag_err, phase_err, count = filter_objectives(response, LOWPASS_CUTOFF_HZ, n_active)
        metrics = measure(response, LOWPASS_PROBES_HZ, n_active)
        return (
            mag_err,
            phase_err,
            count,
            metrics.bandwidth_hz,
            metrics.dc_gain_db,
            metrics.phase_at_bw_deg,
        )

    spec = Specification(
        objectives=((0, "minimize"), (1, "minimize"), (2, "minimize")),
        output_names=(
            "mag_error",
            "phase_error",
            "active_components",
            "bandwidth_hz",
            "dc_gain_db",
            "phase_at_bw_deg",
        ),
    )
    problem = DesignProblem(
        name="lowpass-architecture",
        variables=(),
        spec=spec,
        simulator=simulator,
        description="architecture search for a 1 kHz unity-gain low-pass filter",
    )
    return problem, space.arch_space(LOWPASS_MAX_COMPONENTS), butterworth_seed()


def lowpass_bridge(point: Sequence[float]) -> tuple[float, float]:
    """Re-parameterize a coarse architecture-search design as an (R, C) nominal.

    The coarse netlist is cleaned (parallel merge + dangling prune), its
    bandwidth measured, and the nominal first-order equivalent picked as
    R = 600 ohm with C chosen to reproduce that bandwidth, clipped to the
    fine-tuning bounds.
    """
    netlist = point_to_netlist(point, LOWPASS_SPACE)
    cleaned = prune_dangling(merge_parallel(netlist))
    metrics = measure(ac_solve(cleaned, default_grid()))
    bw = metrics.bandwidth_hz if metrics.bandwidth_found else LOWPASS_CUTOFF_HZ
    r = 600.0
    c = 1.0 / (2.0 * math.pi * r * bw)
    return (min(max(r, 400.0), 800.0), min(max(c, 0.01e-6), 1e-6))


def lowpass_rc_problem(grid: np.ndarray | None = None) -> DesignProblem:
    """Continuous fine-tuning problem: series R, shunt C, first-order low-pass.

    Outputs are the gain, the bandwidth, probe-gain responses at 200/500/2000
    Hz and the absolute bandwidth deviation from 1 kHz (the fine-tuning
    objective); hard constraints pin gain and bandwidth windows.
    """
    freqs = default_grid() if grid is None else grid

    def simulator(point: tuple[float, ...]) -> tuple[float, ...]:
        r_val, c_val = point
        netlist = Netlist(
            (
                Element("VAC", 1, 0, 1.0),
                Element("R", 1, 2, float(r_val)),
                Element("C", 2, 0, float(c_val)),
            ),
            input_node=1,
            output_node=2,
        )
        response = ac_solve(netlist, freqs)
        metrics = measure(response, LOWPASS_PROBES_HZ, 2)
        return (
            metrics.dc_gain_db,
            metrics.bandwidth_hz,
            *metrics.probe_gains_db,
            abs(metrics.bandwidth_hz - LOWPASS_CUTOFF_HZ),
        )

    spec = Specification(
        objectives=((5, "minimize"),),
        hard_constraints=(
            (0, ">=", -0.92),
            (0, "<=", 0.83),
            (1, ">=", 990.0),
            (1, "<=", 1010.0),
        ),
        output_names=(
            "gain_db",
            "bandwidth_hz",
            "gain_200hz_db",
            "gain_500hz_db",
            "gain_2000hz_db",
            "bandwidth_dev_hz",
        ),
    )
    return DesignProblem(
        name="lowpass-rc",
        variables=(
            DesignVariable("R", "continuous", 400.0, 800.0, unit="ohm"),
            DesignVariable("C", "continuous", 0.01e-6, 1e-6, unit="farad"),
        ),
        spec=spec,
        simulator=simulator,
        description="fine-tuning of the series-R shunt-C low-pass filter",
    )
