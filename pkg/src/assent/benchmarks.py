"""Built-in problems and the penalized-objective constructors.

The penalty forms are shared by several system-design benchmarks: a ratio
objective with an indicator-gated linear penalty, a reward reciprocal, and a
family of shifted indicator penalties.  External-simulator benchmarks (lunar
lander, acrobot, waveglider, grid sensor placement) ship as objective presets
only; binding a simulator is the caller's job via :func:`register_problem`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import circuits
from .problem import DesignProblem, DesignVariable, Specification
from .sobol import SobolStream, scale_to_box
from .surrogate import AffineScaler, MLPModel

# ---------------------------------------------------------------------------
# penalized objective constructors
# ---------------------------------------------------------------------------

PENALIZE_ABOVE = "penalize-above"
PENALIZE_BELOW = "penalize-below"


@dataclass(frozen=True)
class PenaltySpec:
    """Reference value, penalty weight and direction for the ratio form."""

    reference: float
    alpha: float = 15.0
    direction: str = PENALIZE_ABOVE

    def __post_init__(self):
        if self.reference == 0:
            raise ValueError("ratio penalty needs a nonzero reference")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.direction not in (PENALIZE_ABOVE, PENALIZE_BELOW):
            raise ValueError(f"unknown direction {self.direction!r}")


def penalized_ratio(value: float, p: PenaltySpec) -> float:
    """value/ref plus an indicator-gated linear penalty on the violation side.

    The indicator is strict: sitting exactly on the reference incurs no
    penalty.  The penalty term uses the absolute fractional deviation so it
    always increases the objective.
    """
    if p.reference <= 0:
        raise ValueError("ratio form requires reference > 0")
    base = value / p.reference
    if p.direction == PENALIZE_ABOVE and value > p.reference:
        return base + p.alpha * (value - p.reference) / p.reference
    if p.direction == PENALIZE_BELOW and value < p.reference:
        return base + p.alpha * (p.reference - value) / p.reference
    return base


def reward_objective(reward: float, numerator: float = 400.0, neg_offset: float = 1000.0) -> float:
    """Reciprocal reward objective: numerator/reward for positive rewards,
    |reward| + neg_offset otherwise (large, so negative rewards sort last)."""
    if reward > 0:
        return numerator / reward
    return abs(reward) + neg_offset


def shifted_penalty(value: float, bound: float, alpha: float, variant: str) -> float:
    """Indicator-gated penalty families used by the system benchmarks.

    variant "ratio-above": (c + alpha*(c-bound)/bound) when c >= bound, else 0.
    variant "negative":    (c - alpha*c) when c <= 0, else 0 (bound unused).
    variant "excess":      (c - bound) when c > bound, else 0.
    """
    if variant == "ratio-above":
        if bound == 0:
            raise ValueError("ratio-above variant needs a nonzero bound")
        return value + alpha * (value - bound) / bound if value >= bound else 0.0
    if variant == "negative":
        return value - alpha * value if value <= 0 else 0.0
    if variant == "excess":
        return value - bound if value > bound else 0.0
    raise ValueError(f"unknown variant {variant!r}")


# ---------------------------------------------------------------------------
# polak3 minimax benchmark
# ---------------------------------------------------------------------------

# f(x) = max_{1<=i<=10} sum_{j=0}^{10} 1/(i+j) * exp((x_{j+1} - sin(i-1+2j))^2)
# over x in R^11.  This is the standard Polak 3 nonsmooth minimax test problem
# (Polak, Mayne & Higgins 1992, example 3, as transcribed in the
# Luksan-Vlcek nonsmooth test collection); see README for the provenance
# discussion and the verification of the reported minimum.
_P3_I = np.arange(1, 11).reshape(-1, 1)
_P3_J = np.arange(0, 11).reshape(1, -1)
_P3_COEF = 1.0 / (_P3_I + _P3_J)
_P3_SIN = np.sin(_P3_I - 1 + 2 * _P3_J)

POLAK3_KNOWN_MINIMUM = 3.7034827
POLAK3_BOUNDS = (-1.0, 1.0)


def polak3(x: Sequence[float]) -> float:
    """Maximum of the ten transcendental component functions; pure and total."""
    x = np.asarray(x, dtype=float)
    if x.shape != (11,):
        raise ValueError("polak3 takes an 11-dimensional point")
    vals = (_P3_COEF * np.exp((x.reshape(1, -1) - _P3_SIN) ** 2)).sum(axis=1)
    return float(vals.max())


def polak3_problem() -> DesignProblem:
    lo, hi = POLAK3_BOUNDS
    return DesignProblem(
        name="polak3",
        variables=tuple(
            DesignVariable(f"x{i}", "continuous", lo, hi) for i in range(11)
        ),
        spec=Specification(objectives=((0, "minimize"),), output_names=("fmax",)),
        simulator=lambda x: (polak3(x),),
        description="minimax over ten transcendental functions of eleven inputs",
        reference_optimum=POLAK3_KNOWN_MINIMUM,
    )


# ---------------------------------------------------------------------------
# synthetic suite
# ---------------------------------------------------------------------------

SPHERE_OPTIMUM = 0.04


def sphere_problem(dim: int = 4) -> DesignProblem:
    """min sum(x^2) with the hard constraint x0 >= 0.2; optimum 0.04 at (0.2,0,...)."""

    def simulator(x):
        arr = np.asarray(x, dtype=float)
        return (float(np.dot(arr, arr)), float(arr[0]))

    return DesignProblem(
        name="sphere",
        variables=tuple(DesignVariable(f"x{i}", "continuous", -5.0, 5.0) for i in range(dim)),
        spec=Specification(
            objectives=((0, "minimize"),),
            hard_constraints=((1, ">=", 0.2),),
            output_names=("sum_sq", "x0"),
        ),
        simulator=simulator,
        description="constrained sphere with analytic optimum 0.04",
        reference_optimum=SPHERE_OPTIMUM,
    )


def _fixed_mlp(seed: int = 12345) -> MLPModel:
    rng = np.random.default_rng(seed)
    sizes = (2, 8, 2)
    ws, bs = [], []
    for fi, fo in zip(sizes[:-1], sizes[1:]):
        ws.append(rng.normal(0.0, 1.0, (fo, fi)))
        bs.append(rng.normal(0.0, 0.3, fo))
    return MLPModel(sizes, ws, bs, AffineScaler.identity(2), AffineScaler.identity(2))


def linear_mlp_problem() -> DesignProblem:
    """Simulator is a fixed, known ReLU network; ideal terrain for the
    surrogate loop since the response is exactly representable."""
    net = _fixed_mlp()
    probe = SobolStream(2).next_points(1024)
    outs = net.forward_batch(probe)
    # constraint threshold at the 60th percentile keeps a healthy feasible set
    threshold = float(np.quantile(outs[:, 0], 0.6))

    def simulator(x):
        y = net.forward(np.asarray(x, dtype=float))
        return (float(y[0]), float(y[1]))

    return DesignProblem(
        name="linear-mlp",
        variables=(
            DesignVariable("x0", "continuous", 0.0, 1.0),
            DesignVariable("x1", "continuous", 0.0, 1.0),
        ),
        spec=Specification(
            objectives=((1, "minimize"),),
            hard_constraints=((0, ">=", threshold),),
            output_names=("y0", "y1"),
        ),
        simulator=simulator,
        description="fixed ReLU-network simulator; surrogate can model it exactly",
    )


_ROVER_OBSTACLES = (
    ((0.35, 0.45), 2.0),
    ((0.62, 0.30), 1.5),
    ((0.55, 0.75), 2.5),
)
_ROVER_SIGMA = 0.12
_ROVER_START = (0.05, 0.05)
_ROVER_GOAL = (0.95, 0.95)
ROVER_WAYPOINTS = 30


def rover_cost(flat: Sequence[float]) -> float:
    """Second-difference smoothness + Gaussian obstacle field + endpoint pull.

    A straight, evenly spaced line through a zero-obstacle field has zero
    smoothness cost by construction.
    """
    pts = np.asarray(flat, dtype=float).reshape(ROVER_WAYPOINTS, 2)
    second = pts[2:] - 2.0 * pts[1:-1] + pts[:-2]
    smooth = float(np.sum(second**2))
    obstacle = 0.0
    for (cx, cy), w in _ROVER_OBSTACLES:
        d2 = (pts[:, 0] - cx) ** 2 + (pts[:, 1] - cy) ** 2
        obstacle += float(w * np.sum(np.exp(-d2 / (2.0 * _ROVER_SIGMA**2))))
    anchor = float(
        np.sum((pts[0] - _ROVER_START) ** 2) + np.sum((pts[-1] - _ROVER_GOAL) ** 2)
    )
    return smooth + obstacle + 10.0 * anchor


def rover_like_problem() -> DesignProblem:
    n = ROVER_WAYPOINTS * 2
    return DesignProblem(
        name="rover-like",
        variables=tuple(DesignVariable(f"p{i}", "continuous", 0.0, 1.0) for i in range(n)),
        spec=Specification(objectives=((0, "minimize"),), output_names=("cost",)),
        simulator=lambda x: (rover_cost(x),),
        description="trajectory of 30 2-D waypoints over a synthetic cost field",
    )


def synthetic_suite() -> dict[str, DesignProblem]:
    return {
        "sphere": sphere_problem(),
        "linear-mlp": linear_mlp_problem(),
        "rover-like": rover_like_problem(),
    }


# ---------------------------------------------------------------------------
# external-simulator presets (objective configurations only)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExternalPreset:
    """Objective construction for a benchmark whose simulator is not bundled.

    ``objectives`` maps the simulator's raw output dict to the GA objective
    vector (minimization convention).  Bind a simulator with
    :func:`register_problem` to run these.
    """

    name: str
    output_names: tuple[str, ...]
    objectives: Callable[[dict], tuple[float, ...]]
    notes: str


def _lunar_objectives(out: dict) -> tuple[float, float, float]:
    fuel = penalized_ratio(out["fuel"], PenaltySpec(100.0))
    landing = penalized_ratio(out["time"], PenaltySpec(10.0))
    return (fuel, landing, reward_objective(out["reward"]))


def _waveglider_objectives(out: dict) -> tuple[float, float, float]:
    con1 = (out["f_boat_x"] - out["f_glider_x"]) / (out["f_boat_x"] + 1e-12)
    con2 = out["v_boat_x"] - out["v_boat_y"]
    return (
        shifted_penalty(con1, 0.05, 15.0, "ratio-above"),
        shifted_penalty(con2, 0.0, 15.0, "negative"),
        -out["v_boat_x"],
    )


def _sensor_objectives(out: dict) -> tuple[float, float]:
    return (shifted_penalty(out["sensors_used"], 50.0, 15.0, "excess"), out["ambiguity"])


EXTERNAL_PRESETS = {
    "lunar-lander": ExternalPreset(
        "lunar-lander",
        ("fuel", "time", "reward"),
        _lunar_objectives,
        "gym LunarLander; fuel/time ratio penalties (alpha 15), reciprocal reward",
    ),
    "waveglider": ExternalPreset(
        "waveglider",
        ("f_boat_x", "f_glider_x", "v_boat_x", "v_boat_y"),
        _waveglider_objectives,
        "force-match and velocity-order penalties; maximize v_boat_x",
    ),
    "grid-sensors": ExternalPreset(
        "grid-sensors",
        ("sensors_used", "ambiguity"),
        _sensor_objectives,
        "sensor-count excess penalty plus ambiguity",
    ),
}


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------


@dataclass
class BenchmarkEntry:
    name: str
    factory: Callable[[], DesignProblem]
    description: str
    reference: str
    architecture: bool = False


_REGISTRY: dict[str, BenchmarkEntry] = {}


def register_problem(
    name: str,
    factory: Callable[[], DesignProblem],
    description: str = "",
    reference: str = "",
    architecture: bool = False,
) -> None:
    """Extension point for binding user simulators into the CLI registry."""
    _REGISTRY[name] = BenchmarkEntry(name, factory, description, reference, architecture)


def registry() -> dict[str, BenchmarkEntry]:
    return dict(_REGISTRY)


def get_problem(name: str) -> DesignProblem:
    if name not in _REGISTRY:
        raise KeyError(f"unknown benchmark {name!r}; see list-benchmarks")
    return _REGISTRY[name].factory()


register_problem(
    "sphere",
    sphere_problem,
    "constrained 4-D sphere",
    "analytic optimum 0.04 at (0.2, 0, 0, 0)",
)
register_problem(
    "linear-mlp",
    linear_mlp_problem,
    "fixed ReLU-network simulator",
    "surrogate-exact response; first witness should satisfy constraints",
)
register_problem(
    "rover-like",
    rover_like_problem,
    "synthetic 30-waypoint trajectory cost",
    "straight line has zero smoothness cost; full field optimum not claimed",
)
register_problem(
    "polak3",
    polak3_problem,
    "minimax of ten transcendental functions, eleven inputs",
    f"known minimum {POLAK3_KNOWN_MINIMUM} (see README for provenance)",
)
register_problem(
    "lowpass",
    lambda: circuits.lowpass_architecture_problem()[0],
    "1 kHz unity-gain low-pass filter, architecture search",
    "coarse target: bandwidth in [900, 1100] Hz with <= 4 active components",
    architecture=True,
)
register_problem(
    "lowpass-rc",
    circuits.lowpass_rc_problem,
    "series-R shunt-C low-pass, continuous fine-tuning",
    "gain in [-0.92, 0.83] dB and bandwidth in [990, 1010] Hz",
)
