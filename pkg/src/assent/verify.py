"""Independent-oracle verification suites, runnable via ``assent verify``.

Each check re-derives expected behaviour by a route independent of the
implementation it validates: Sobol against the frozen prefix, dyadic balance
and SciPy's generator; the simplex against brute-force vertex enumeration;
NSGA-II ranking against the quadratic dominance oracle; branch-and-bound
against exhaustive activation-pattern enumeration (SciPy LPs); and the nodal
analysis against closed-form filter formulas.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .circuits import Element, Netlist, ac_solve, default_grid, measure
from .evolve import crowding_distance, dominates, fast_nondominated_sort
from .milp import LinearProgram, encode_network, solve_lp, solve_milp
from .sobol import SobolStream
from .surrogate import AffineScaler, MLPModel

SOBOL_PREFIX_1D = (0.0, 0.5, 0.75, 0.25, 0.375, 0.875, 0.625, 0.125)


@dataclass
class VerifyResult:
    name: str
    passed: bool
    detail: str


# ---------------------------------------------------------------------------
# sobol
# ---------------------------------------------------------------------------


def check_sobol(n_dims: tuple[int, ...] = (1, 2, 8, 32, 128)) -> VerifyResult:
    got = tuple(SobolStream(1).next_points(8)[:, 0])
    if got != SOBOL_PREFIX_1D:
        return VerifyResult("sobol-prefix", False, f"1-D prefix {got}")
    # dyadic balance: any aligned block of 2^k consecutive points puts one
    # point into each dyadic interval of width 2^-k
    for k in range(1, 7):
        block = 2**k
        pts = SobolStream(1).next_points(block * 4)[:, 0]
        for j in range(4):
            cells = np.floor(pts[j * block : (j + 1) * block] * block).astype(int)
            if sorted(cells) != list(range(block)):
                return VerifyResult(
                    "sobol-dyadic", False, f"k={k} block {j} cells {sorted(cells)}"
                )
    try:
        from scipy.stats import qmc
    except ImportError:
        return VerifyResult("sobol", True, "prefix+dyadic OK (scipy unavailable, skipped)")
    for d in n_dims:
        ref = qmc.Sobol(d=d, scramble=False).random(256)
        mine = SobolStream(d).next_points(256)
        if not np.array_equal(ref, mine):
            return VerifyResult("sobol-reference", False, f"mismatch at dim {d}")
    return VerifyResult("sobol", True, f"prefix, dyadic k<=6, reference dims {n_dims}")


# ---------------------------------------------------------------------------
# simplex vs vertex enumeration
# ---------------------------------------------------------------------------


def vertex_enumeration(lp: LinearProgram, tol: float = 1e-9):
    """Brute-force optimum of a bounded LP by enumerating basic solutions.

    All variable bounds must be finite.  Returns (status, objective).
    """
    n = lp.n_vars
    rows = []  # (normal, rhs, is_equality)
    for i, rel in enumerate(lp.relations):
        rows.append((lp.A[i], lp.b[i], rel == "="))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        rows.append((e.copy(), lp.lower[j], False))
        rows.append((e.copy(), lp.upper[j], False))

    def feasible(x):
        if np.any(x < lp.lower - tol) or np.any(x > lp.upper + tol):
            return False
        for i, rel in enumerate(lp.relations):
            v = lp.A[i] @ x
            if rel == "<=" and v > lp.b[i] + tol:
                return False
            if rel == ">=" and v < lp.b[i] - tol:
                return False
            if rel == "=" and abs(v - lp.b[i]) > tol:
                return False
        return True

    best = None
    found = False
    for combo in itertools.combinations(range(len(rows)), n):
        M = np.array([rows[i][0] for i in combo])
        rhs = np.array([rows[i][1] for i in combo])
        try:
            x = np.linalg.solve(M, rhs)
        except np.linalg.LinAlgError:
            continue
        if feasible(x):
            found = True
            val = float(lp.c @ x)
            if best is None or val < best:
                best = val
    if not found:
        return "infeasible", None
    return "optimal", best


def random_bounded_lp(rng: np.random.Generator) -> LinearProgram:
    n = int(rng.integers(1, 7))
    m = int(rng.integers(1, 9))
    A = rng.normal(0, 2, (m, n)).round(3)
    b = rng.normal(0, 3, m).round(3)
    c = rng.normal(0, 1, n).round(3)
    rels = tuple(str(rng.choice(["<=", ">=", "="])) for _ in range(m))
    lo = rng.uniform(-5, 0, n).round(3)
    hi = lo + rng.uniform(0.5, 6, n).round(3)
    return LinearProgram(c, A, rels, b, lo, hi)


def check_simplex(n_instances: int = 500, seed: int = 2024) -> VerifyResult:
    rng = np.random.default_rng(seed)
    for k in range(n_instances):
        lp = random_bounded_lp(rng)
        mine = solve_lp(lp)
        status, obj = vertex_enumeration(lp)
        if mine.status != status:
            return VerifyResult(
                "simplex", False, f"instance {k}: status {mine.status} vs oracle {status}"
            )
        if status == "optimal" and abs(mine.objective - obj) > 1e-7 * (1 + abs(obj)):
            return VerifyResult(
                "simplex", False, f"instance {k}: objective {mine.objective} vs {obj}"
            )
    return VerifyResult("simplex", True, f"{n_instances} random LPs match vertex enumeration")


# ---------------------------------------------------------------------------
# NSGA-II ranking oracle
# ---------------------------------------------------------------------------


def brute_force_fronts(objectives) -> list[int]:
    """Quadratic peeling: repeatedly remove the nondominated set."""
    n = len(objectives)
    remaining = set(range(n))
    rank = [0] * n
    level = 0
    while remaining:
        front = {
            p
            for p in remaining
            if not any(dominates(objectives[q], objectives[p]) for q in remaining if q != p)
        }
        for p in front:
            rank[p] = level
        remaining -= front
        level += 1
    return rank


def check_nsga(n_instances: int = 200, seed: int = 77) -> VerifyResult:
    rng = np.random.default_rng(seed)
    for k in range(n_instances):
        n = int(rng.integers(2, 65))
        m = int(rng.integers(2, 5))
        objs = [tuple(rng.integers(0, 8, m).astype(float)) for _ in range(n)]
        if fast_nondominated_sort(objs) != brute_force_fronts(objs):
            return VerifyResult("nsga-ranking", False, f"instance {k} front mismatch")
        front0 = [o for o, r in zip(objs, fast_nondominated_sort(objs)) if r == 0]
        dists = crowding_distance(front0)
        for mi in range(m):
            vals = sorted(range(len(front0)), key=lambda i: front0[i][mi])
            if dists[vals[0]] != float("inf") or dists[vals[-1]] != float("inf"):
                return VerifyResult("nsga-crowding", False, f"instance {k} boundary not inf")
    return VerifyResult("nsga", True, f"{n_instances} populations match the dominance oracle")


# ---------------------------------------------------------------------------
# MILP vs activation-pattern enumeration
# ---------------------------------------------------------------------------


def random_relu_model(rng: np.random.Generator, max_neurons: int = 10) -> MLPModel:
    n_in = int(rng.integers(1, 4))
    n_out = int(rng.integers(1, 3))
    n_layers = int(rng.integers(1, 3))
    remaining = max_neurons
    hidden = []
    for li in range(n_layers):
        hi = int(rng.integers(1, min(6, remaining - (n_layers - li - 1)) + 1))
        hidden.append(hi)
        remaining -= hi
    sizes = (n_in, *hidden, n_out)
    ws, bs = [], []
    for fi, fo in zip(sizes[:-1], sizes[1:]):
        ws.append(rng.normal(0, 1.2, (fo, fi)))
        bs.append(rng.normal(0, 0.4, fo))
    if rng.random() < 0.5:
        insc = AffineScaler(rng.normal(0, 1, n_in), rng.uniform(0.5, 2, n_in), True)
        outsc = AffineScaler(rng.normal(0, 1, n_out), rng.uniform(0.5, 2, n_out), True)
    else:
        insc, outsc = AffineScaler.identity(n_in), AffineScaler.identity(n_out)
    return MLPModel(sizes, ws, bs, insc, outsc)


def pattern_enumeration_feasible(model: MLPModel, box, constraints) -> bool:
    """Oracle: one LP per ReLU activation pattern, solved with SciPy."""
    from scipy.optimize import linprog

    lo = model.input_scaler.transform(np.array([b[0] for b in box]))
    hi = model.input_scaler.transform(np.array([b[1] for b in box]))
    hidden = [w.shape[0] for w in model.weights[:-1]]
    H = sum(hidden)
    n_in = model.weights[0].shape[1]
    for bits in itertools.product((0, 1), repeat=H):
        nv = n_in + H
        A_ub, b_ub, A_eq, b_eq = [], [], [], []
        ofs = 0
        prev = list(range(n_in))
        for li, size in enumerate(hidden):
            W, b = model.weights[li], model.biases[li]
            layer_vars = []
            for u in range(size):
                z = np.zeros(nv)
                for k, pv in enumerate(prev):
                    z[pv] = W[u, k]
                xv = n_in + ofs + u
                if bits[ofs + u]:  # active: x = z + b and z + b >= 0
                    row = z.copy()
                    row[xv] -= 1.0
                    A_eq.append(row)
                    b_eq.append(-b[u])
                    A_ub.append(-z)
                    b_ub.append(b[u])
                else:  # inactive: x = 0 and z + b <= 0
                    row = np.zeros(nv)
                    row[xv] = 1.0
                    A_eq.append(row)
                    b_eq.append(0.0)
                    A_ub.append(z)
                    b_ub.append(-b[u])
                layer_vars.append(xv)
            prev = layer_vars
            ofs += size
        Wl, bl = model.weights[-1], model.biases[-1]
        for oi, rel, bound in constraints:
            srow = np.zeros(nv)
            for k, pv in enumerate(prev):
                srow[pv] = Wl[oi, k]
            sb = model.output_scaler.transform_one(oi, bound) - bl[oi]
            if rel == ">=":
                A_ub.append(-srow)
                b_ub.append(-sb)
            else:
                A_ub.append(srow)
                b_ub.append(sb)
        bounds = [(lo[i], hi[i]) for i in range(n_in)] + [(0, None)] * H
        res = linprog(
            np.zeros(nv),
            A_ub=np.array(A_ub),
            b_ub=np.array(b_ub),
            A_eq=np.array(A_eq),
            b_eq=np.array(b_eq),
            bounds=bounds,
            method="highs",
        )
        if res.status == 0:
            return True
    return False


def check_milp_completeness(n_instances: int = 100, seed: int = 4242) -> VerifyResult:
    rng = np.random.default_rng(seed)
    for k in range(n_instances):
        model = random_relu_model(rng)
        n_in = model.n_inputs
        box = [
            (a, a + w)
            for a, w in zip(rng.uniform(-2, 0, n_in), rng.uniform(0.5, 3, n_in))
        ]
        oi = int(rng.integers(0, model.n_outputs))
        cons = [(oi, ">=" if rng.random() < 0.5 else "<=", float(rng.normal(0, 1)))]
        mine = solve_milp(encode_network(model, box, cons), time_limit=30)
        ref = pattern_enumeration_feasible(model, box, cons)
        if (mine.status == "feasible") != ref:
            return VerifyResult(
                "milp-completeness", False, f"instance {k}: {mine.status} vs oracle {ref}"
            )
    return VerifyResult(
        "milp-completeness", True, f"{n_instances} nets match pattern enumeration"
    )


def check_milp_soundness(n_instances: int = 100, seed: int = 515) -> VerifyResult:
    rng = np.random.default_rng(seed)
    checked = 0
    for k in range(n_instances):
        n_in = int(rng.integers(1, 4))
        hidden = tuple(int(rng.integers(2, 17)) for _ in range(int(rng.integers(1, 4))))
        n_out = int(rng.integers(1, 3))
        sizes = (n_in, *hidden, n_out)
        ws, bs = [], []
        for fi, fo in zip(sizes[:-1], sizes[1:]):
            ws.append(rng.normal(0, 1.0 / math.sqrt(fi), (fo, fi)))
            bs.append(rng.normal(0, 0.3, fo))
        model = MLPModel(
            sizes, ws, bs, AffineScaler.identity(n_in), AffineScaler.identity(n_out)
        )
        box = [
            (a, a + w)
            for a, w in zip(rng.uniform(-2, 0, n_in), rng.uniform(0.5, 3, n_in))
        ]
        # make the constraint satisfiable: demand a bit less than a reachable value
        probe = np.array([rng.uniform(a, b) for a, b in box])
        reachable = model.forward(probe)
        oi = int(rng.integers(0, n_out))
        cons = [(oi, ">=", float(reachable[oi] - 0.1))]
        prob = encode_network(model, box, cons)
        out = solve_milp(prob, time_limit=30)
        if out.status != "feasible":
            return VerifyResult(
                "milp-soundness", False, f"instance {k}: satisfiable problem came back {out.status}"
            )
        x = prob.extract_input(out.witness)
        y = model.forward(x)
        slack = y[oi] - (reachable[oi] - 0.1)
        if slack < -1e-5:
            return VerifyResult("milp-soundness", False, f"instance {k}: slack {slack}")
        acts, _ = model.hidden_activations(x)
        flat = np.concatenate(acts)
        neurons = np.array(
            [out.witness[i] for i, r in prob.var_roles.items() if r.kind == "neuron"]
        )
        if np.max(np.abs(flat - neurons)) > 1e-5:
            return VerifyResult(
                "milp-soundness", False, f"instance {k}: neuron mismatch "
                f"{np.max(np.abs(flat - neurons)):.2e}"
            )
        checked += 1
    return VerifyResult(
        "milp-soundness", True, f"{checked} witnesses re-verified through the forward pass"
    )


# ---------------------------------------------------------------------------
# nodal-analysis fixtures
# ---------------------------------------------------------------------------


def check_mna() -> VerifyResult:
    grid = default_grid()
    # RC low-pass: fc = 1/(2 pi R C) = 1000 Hz
    rc = Netlist(
        (Element("VAC", 1, 0, 1.0), Element("R", 1, 2, 159.155), Element("C", 2, 0, 1e-6)),
        1,
        2,
    )
    m = measure(ac_solve(rc, grid))
    if abs(m.bandwidth_hz - 1000.0) > 5.0:
        return VerifyResult("mna-rc", False, f"bandwidth {m.bandwidth_hz}")
    if abs(m.phase_at_bw_deg + 45.0) > 0.5:
        return VerifyResult("mna-rc", False, f"phase {m.phase_at_bw_deg}")
    resp = ac_solve(rc, grid)
    fc = 1.0 / (2 * math.pi * 159.155 * 1e-6)
    analytic = 1.0 / (1.0 + 1j * grid / fc)
    if np.max(np.abs(resp.transfer - analytic) / np.abs(analytic)) > 1e-3:
        return VerifyResult("mna-rc", False, "transfer deviates from the analytic curve")

    # RL high-pass-ish fixture: output across L; H = jwL/R / (1 + jwL/R)
    rl = Netlist(
        (Element("VAC", 1, 0, 1.0), Element("R", 1, 2, 100.0), Element("L", 2, 0, 10e-3)),
        1,
        2,
    )
    resp = ac_solve(rl, grid)
    analytic = (1j * grid * 2 * math.pi * 10e-3 / 100.0) / (
        1.0 + 1j * grid * 2 * math.pi * 10e-3 / 100.0
    )
    if np.max(np.abs(resp.transfer - analytic) / np.maximum(np.abs(analytic), 1e-12)) > 1e-3:
        return VerifyResult("mna-rl", False, "RL transfer deviates")

    # series RLC, output across C
    r_v, l_v, c_v = 100.0, 10e-3, 1e-6
    rlc = Netlist(
        (
            Element("VAC", 1, 0, 1.0),
            Element("R", 1, 2, r_v),
            Element("L", 2, 3, l_v),
            Element("C", 3, 0, c_v),
        ),
        1,
        3,
    )
    resp = ac_solve(rlc, grid)
    w = 2 * math.pi * grid
    zc = 1.0 / (1j * w * c_v)
    analytic = zc / (r_v + 1j * w * l_v + zc)
    if np.max(np.abs(resp.transfer - analytic) / np.abs(analytic)) > 1e-3:
        return VerifyResult("mna-rlc", False, "RLC transfer deviates")

    # resistive divider
    div = Netlist(
        (Element("VAC", 1, 0, 1.0), Element("R", 1, 2, 250.0), Element("R", 2, 0, 250.0)),
        1,
        2,
    )
    resp = ac_solve(div, grid)
    if np.max(np.abs(resp.transfer - 0.5)) > 5e-4:
        return VerifyResult("mna-divider", False, "divider is not flat 0.5")
    return VerifyResult("mna", True, "RC/RL/RLC/divider fixtures within tolerance")


ALL_CHECKS = (
    check_sobol,
    check_simplex,
    check_nsga,
    check_milp_soundness,
    check_milp_completeness,
    check_mna,
)


def run_all(quick: bool = False) -> list[VerifyResult]:
    results = []
    for fn in ALL_CHECKS:
        if quick and fn in (check_simplex, check_milp_completeness, check_milp_soundness):
            if fn is check_simplex:
                results.append(fn(n_instances=50))
            else:
                results.append(fn(n_instances=15))
        else:
            results.append(fn())
    return results
