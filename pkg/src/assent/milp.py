"""ReLU-network inverse design as mixed-integer linear feasibility.

A trained feedforward ReLU regressor is encoded with the big-M construction:
every hidden neuron gets four linear rows and one binary indicator, with the
big-M chosen per neuron from interval bound propagation.  The resulting
feasibility problem is solved by an in-repo dense two-phase simplex wrapped in
depth-first branch-and-bound on the indicator variables.

The solver targets the surrogate sizes used by the fine-tuning loop (a few
hundred neurons at most); it is not a general-purpose MILP engine.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

FEAS_TOL = 1e-7
PIVOT_TOL = 1e-11
INT_TOL = 1e-6

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

FEASIBLE = "feasible"
TIMEOUT = "timeout"
# INFEASIBLE is shared with the LP statuses above


# ---------------------------------------------------------------------------
# linear programs
# ---------------------------------------------------------------------------


@dataclass
class LinearProgram:
    """min c.x  s.t.  A x (<=,>=,=) b,  lower <= x <= upper (+-inf allowed)."""

    c: np.ndarray
    A: np.ndarray
    relations: tuple[str, ...]
    b: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    row_names: tuple[str, ...] = ()

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.A = np.asarray(self.A, dtype=float).reshape(len(self.relations), -1)
        self.b = np.asarray(self.b, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        n = self.c.size
        if self.A.shape != (self.b.size, n) or self.lower.size != n or self.upper.size != n:
            raise ValueError("inconsistent LP dimensions")
        if np.any(self.lower > self.upper + 1e-12):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def n_vars(self) -> int:
        return self.c.size

    def residuals(self, x: np.ndarray) -> np.ndarray:
        """Signed constraint slack per row; negative means violated."""
        ax = self.A @ x
        out = np.empty(len(self.relations))
        for i, rel in enumerate(self.relations):
            if rel == "<=":
                out[i] = self.b[i] - ax[i]
            elif rel == ">=":
                out[i] = ax[i] - self.b[i]
            else:
                out[i] = -abs(ax[i] - self.b[i])
        return out

    def check(self, x: np.ndarray, tol: float = INT_TOL) -> bool:
        if np.any(x < self.lower - tol) or np.any(x > self.upper + tol):
            return False
        return bool(np.all(self.residuals(x) >= -tol))


@dataclass
class LPResult:
    status: str  # optimal | infeasible | unbounded
    x: np.ndarray | None = None
    objective: float | None = None
    warning: str | None = None


def _pivot(T: np.ndarray, r: int, j: int) -> None:
    T[r] /= T[r, j]
    col = T[:, j].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])


def solve_lp(lp: LinearProgram, max_iter: int = 50000) -> LPResult:
    """Two-phase dense simplex.

    Dantzig pricing by default; a degeneracy streak switches permanently to
    Bland's rule so cycling cannot occur.  Numeric breakdown (no admissible
    pivot above 1e-11) is reported as infeasible with a warning rather than
    raised.
    """
    n = lp.n_vars
    lo, hi = lp.lower, lp.upper

    if np.any(lo > hi + 1e-12):
        return LPResult(INFEASIBLE)

    # substitutions: x_i = shift + sign * u_i with u_i >= 0 (or a constant)
    fixed = (hi - lo) <= 1e-12
    shift = np.where(np.isfinite(lo), lo, 0.0)
    sign = np.ones(n)
    ubound = np.full(n, np.inf)  # upper bound of u_i, may become a row
    free = np.zeros(n, dtype=bool)
    for i in range(n):
        if fixed[i]:
            continue
        if np.isfinite(lo[i]):
            shift[i] = lo[i]
            ubound[i] = hi[i] - lo[i] if np.isfinite(hi[i]) else np.inf
        elif np.isfinite(hi[i]):
            shift[i] = hi[i]
            sign[i] = -1.0
        else:
            shift[i] = 0.0
            free[i] = True

    keep = np.where(~fixed)[0]
    n_u = keep.size
    n_free = int(free.sum())
    col_of = {int(v): k for k, v in enumerate(keep)}
    # free variables get a paired negative column appended after the u block
    free_pair = {}
    k = n_u
    for i in np.where(free)[0]:
        free_pair[int(i)] = k
        k += 1
    n_struct = n_u + n_free

    # structural rows in u-space; shift covers fixed vars (lo == hi) too
    const = lp.A @ shift
    rows_A = []
    rows_rel = []
    rows_b = []
    for r in range(len(lp.relations)):
        row = np.zeros(n_struct)
        for i in keep:
            a = lp.A[r, i]
            if a == 0.0:
                continue
            row[col_of[i]] = a * sign[i]
            if free[i]:
                row[free_pair[i]] = -a
        rows_A.append(row)
        rows_rel.append(lp.relations[r])
        rows_b.append(lp.b[r] - const[r])
    # upper-bound rows for two-sided variables
    for i in keep:
        if np.isfinite(ubound[i]):
            row = np.zeros(n_struct)
            row[col_of[i]] = 1.0
            rows_A.append(row)
            rows_rel.append("<=")
            rows_b.append(ubound[i])

    m = len(rows_A)
    A = np.array(rows_A) if m else np.zeros((0, n_struct))
    b = np.array(rows_b)
    rel = list(rows_rel)

    # objective in u-space (+ constant offset)
    c_u = np.zeros(n_struct)
    for i in keep:
        c_u[col_of[i]] = lp.c[i] * sign[i]
        if free[i]:
            c_u[free_pair[i]] = -lp.c[i]
    obj_offset = float(lp.c @ shift)

    # normalize rhs >= 0
    for r in range(m):
        if b[r] < 0:
            A[r] = -A[r]
            b[r] = -b[r]
            rel[r] = {"<=": ">=", ">=": "<=", "=": "="}[rel[r]]

    n_slack = sum(1 for x in rel if x in ("<=", ">="))
    n_art = sum(1 for x in rel if x in (">=", "="))
    total = n_struct + n_slack + n_art
    # tableau: m rows, then phase-2 cost row, then phase-1 cost row
    T = np.zeros((m + 2, total + 1))
    T[:m, :n_struct] = A
    T[:m, -1] = b
    basis = np.empty(m, dtype=int)
    art_cols = []
    js, ja = n_struct, n_struct + n_slack
    for r in range(m):
        if rel[r] == "<=":
            T[r, js] = 1.0
            basis[r] = js
            js += 1
        elif rel[r] == ">=":
            T[r, js] = -1.0
            T[r, ja] = 1.0
            basis[r] = ja
            art_cols.append(ja)
            js += 1
            ja += 1
        else:
            T[r, ja] = 1.0
            basis[r] = ja
            art_cols.append(ja)
            ja += 1
    art_set = set(art_cols)

    T[m, :n_struct] = c_u
    for col in art_cols:
        T[m + 1, col] = 1.0
    # reduce both cost rows against the starting basis
    for r in range(m):
        if basis[r] in art_set:
            T[m + 1] -= T[r]
    # (phase-2 row needs no initial reduction: slack/artificial costs are 0)

    bland = False
    stall = 0
    cost_row = m + 1
    phase2_trivial = not np.any(c_u)

    def run(cost_row: int, allowed: int) -> str:
        nonlocal bland, stall
        it = 0
        while True:
            it += 1
            if it > max_iter:
                return "itlimit"
            red = T[cost_row, :allowed]
            if bland:
                cand = np.where(red < -FEAS_TOL)[0]
                if cand.size == 0:
                    return "done"
                j = int(cand[0])
            else:
                j = int(np.argmin(red))
                if red[j] >= -FEAS_TOL:
                    return "done"
            colv = T[:m, j]
            # entries at or below the pivot tolerance count as zero
            pos = np.where(colv > PIVOT_TOL)[0]
            if pos.size == 0:
                return "unbounded"
            ratios = T[pos, -1] / colv[pos]
            rmin = ratios.min()
            tie = pos[np.where(ratios <= rmin + 1e-12)[0]]
            # Bland-compatible tie break: lowest basis index
            r = int(tie[np.argmin(basis[tie])])
            before = T[cost_row, -1]
            _pivot(T, r, j)
            basis[r] = j
            if not np.isfinite(T[r, -1]) or abs(T).max() > 1e14:
                return "breakdown"
            if T[cost_row, -1] >= before - 1e-12:
                stall += 1
                if stall > 30:
                    bland = True
            else:
                stall = 0

    # phase 1
    if art_cols:
        status = run(m + 1, total)
        if status in ("breakdown", "itlimit", "unbounded"):
            return LPResult(INFEASIBLE, warning=f"simplex {status} in phase 1")
        if -T[m + 1, -1] > 1e-7:
            return LPResult(INFEASIBLE)
        # drive remaining artificials out of the basis
        for r in range(m):
            if basis[r] in art_set:
                row = T[r, :n_struct + n_slack]
                nz = np.where(np.abs(row) > PIVOT_TOL)[0]
                if nz.size:
                    _pivot(T, r, int(nz[0]))
                    basis[r] = int(nz[0])
        # forbid artificials from re-entering
        T[:, list(art_set)] = 0.0

    # phase 2
    if not phase2_trivial:
        bland = False
        stall = 0
        status = run(m, n_struct + n_slack)
        if status == "unbounded":
            return LPResult(UNBOUNDED)
        if status in ("breakdown", "itlimit"):
            return LPResult(INFEASIBLE, warning=f"simplex {status} in phase 2")

    u = np.zeros(total)
    for r in range(m):
        u[basis[r]] = T[r, -1]
    x = shift.copy()
    for i in keep:
        xi = u[col_of[i]] * sign[i]
        if free[i]:
            xi -= u[free_pair[i]]
        x[i] = shift[i] + xi
    return LPResult(OPTIMAL, x=x, objective=float(lp.c @ x))


# ---------------------------------------------------------------------------
# network encoding
# ---------------------------------------------------------------------------


@dataclass
class BigMBounds:
    """Per-neuron pre-activation intervals and big-M constants, layer by layer."""

    pre_lo: list[np.ndarray]
    pre_hi: list[np.ndarray]
    q: list[np.ndarray]
    output_lo: np.ndarray | None = None
    output_hi: np.ndarray | None = None


def propagate_bounds(model, input_box: Sequence[tuple[float, float]]) -> BigMBounds:
    """Interval propagation through the network in its scaled space.

    Q per neuron is 1.05x the largest pre-activation magnitude the interval
    arithmetic allows, floored at 1.0 so degenerate neurons keep a usable
    big-M.
    """
    lo = np.array([b[0] for b in input_box], dtype=float)
    hi = np.array([b[1] for b in input_box], dtype=float)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValueError("input box must be finite")
    pre_lo, pre_hi, qs = [], [], []
    n_layers = len(model.weights)
    for li in range(n_layers):
        W = model.weights[li]
        b = model.biases[li]
        Wp = np.maximum(W, 0.0)
        Wm = np.minimum(W, 0.0)
        zlo = Wp @ lo + Wm @ hi + b
        zhi = Wp @ hi + Wm @ lo + b
        if li < n_layers - 1:
            pre_lo.append(zlo)
            pre_hi.append(zhi)
            qs.append(np.maximum(1.0, 1.05 * np.maximum(np.abs(zlo), np.abs(zhi))))
            lo = np.maximum(zlo, 0.0)
            hi = np.maximum(zhi, 0.0)
        else:
            out_lo, out_hi = zlo, zhi
    return BigMBounds(pre_lo, pre_hi, qs, out_lo, out_hi)


@dataclass(frozen=True)
class VarRole:
    kind: str  # input | neuron | delta | output
    layer: int = -1
    unit: int = -1


@dataclass
class MILPProblem:
    """A big-M encoded network plus input/output constraints."""

    lp: LinearProgram
    binary_vars: tuple[int, ...]
    var_roles: dict[int, VarRole]
    input_indices: tuple[int, ...]
    output_indices: tuple[int, ...]
    model: object = None

    def extract_input(self, witness: np.ndarray) -> np.ndarray:
        """Witness input coordinates mapped back to raw (unscaled) space."""
        u = np.array([witness[i] for i in self.input_indices])
        if self.model is not None:
            return self.model.input_scaler.inverse(u)
        return u


def encode_network(
    model,
    input_box: Sequence[tuple[float, float]],
    output_constraints: Sequence[tuple[int, str, float]] = (),
    improvement: tuple[int, str, float, float] | None = None,
) -> MILPProblem:
    """Encode forward(x) in box, outputs within constraints, as a feasibility MILP.

    ``input_box`` and the constraint/improvement bounds are given in raw
    space; the encoding itself lives in the model's scaled space and converts
    all bounds through the scalers.  ``improvement`` is
    (output_index, direction, best_obj, margin): minimize adds
    pred <= best-margin, maximize adds pred >= best+margin.  The LP objective
    is zero: this is a pure feasibility problem.
    """
    lo_raw = np.array([b[0] for b in input_box], dtype=float)
    hi_raw = np.array([b[1] for b in input_box], dtype=float)
    if not (np.all(np.isfinite(lo_raw)) and np.all(np.isfinite(hi_raw))):
        raise ValueError("input box must be finite")
    in_lo = model.input_scaler.transform(lo_raw)
    in_hi = model.input_scaler.transform(hi_raw)
    bounds = propagate_bounds(model, list(zip(in_lo, in_hi)))

    hidden_sizes = [w.shape[0] for w in model.weights[:-1]]
    n_in = model.weights[0].shape[1]
    n_out = model.weights[-1].shape[0]

    roles: dict[int, VarRole] = {}
    idx = 0
    input_idx = []
    for u in range(n_in):
        roles[idx] = VarRole("input", -1, u)
        input_idx.append(idx)
        idx += 1
    neuron_idx: list[list[int]] = []
    for li, size in enumerate(hidden_sizes):
        layer = []
        for u in range(size):
            roles[idx] = VarRole("neuron", li, u)
            layer.append(idx)
            idx += 1
        neuron_idx.append(layer)
    output_idx = []
    for u in range(n_out):
        roles[idx] = VarRole("output", len(hidden_sizes), u)
        output_idx.append(idx)
        idx += 1
    delta_idx: list[list[int]] = []
    binaries = []
    for li, size in enumerate(hidden_sizes):
        layer = []
        for u in range(size):
            roles[idx] = VarRole("delta", li, u)
            layer.append(idx)
            binaries.append(idx)
            idx += 1
        delta_idx.append(layer)
    n_vars = idx

    lower = np.full(n_vars, -np.inf)
    upper = np.full(n_vars, np.inf)
    lower[input_idx] = in_lo
    upper[input_idx] = in_hi
    for li, layer in enumerate(neuron_idx):
        lower[layer] = 0.0
        upper[layer] = np.maximum(bounds.pre_hi[li], 0.0)
    lower[output_idx] = bounds.output_lo
    upper[output_idx] = bounds.output_hi
    for li, layer in enumerate(delta_idx):
        # bound-propagation fixes sign-stable neurons: always-on => delta 0,
        # always-off => delta 1
        for u, d in enumerate(layer):
            if bounds.pre_lo[li][u] >= 0.0:
                lower[d], upper[d] = 0.0, 0.0
            elif bounds.pre_hi[li][u] <= 0.0:
                lower[d], upper[d] = 1.0, 1.0
            else:
                lower[d], upper[d] = 0.0, 1.0

    rows_A, rows_rel, rows_b, names = [], [], [], []

    def add_row(coeffs: dict[int, float], rel: str, rhs: float, name: str):
        row = np.zeros(n_vars)
        for j, v in coeffs.items():
            row[j] = v
        rows_A.append(row)
        rows_rel.append(rel)
        rows_b.append(rhs)
        names.append(name)

    prev = input_idx
    for li, layer in enumerate(neuron_idx):
        W = model.weights[li]
        bvec = model.biases[li]
        for u, xj in enumerate(layer):
            q = float(bounds.q[li][u])
            wrow = {prev[k]: -float(W[u, k]) for k in range(len(prev)) if W[u, k] != 0.0}
            # x >= W x_prev + b
            add_row({xj: 1.0, **wrow}, ">=", float(bvec[u]), f"relu_lo_{li}_{u}")
            # x <= W x_prev + b + Q delta
            add_row(
                {xj: 1.0, **wrow, delta_idx[li][u]: -q}, "<=", float(bvec[u]), f"relu_hi_{li}_{u}"
            )
            # x <= Q (1 - delta)
            add_row({xj: 1.0, delta_idx[li][u]: q}, "<=", q, f"relu_off_{li}_{u}")
        prev = layer

    W = model.weights[-1]
    bvec = model.biases[-1]
    for u, yj in enumerate(output_idx):
        coeffs = {yj: 1.0}
        for k in range(len(prev)):
            if W[u, k] != 0.0:
                coeffs[prev[k]] = -float(W[u, k])
        add_row(coeffs, "=", float(bvec[u]), f"out_{u}")

    for out_i, rel, bound_raw in output_constraints:
        scaled = float(model.output_scaler.transform_one(out_i, bound_raw))
        add_row({output_idx[out_i]: 1.0}, rel, scaled, f"spec_{out_i}_{rel}")

    if improvement is not None:
        out_i, direction, best_obj, margin = improvement
        if direction == "minimize":
            target = model.output_scaler.transform_one(out_i, best_obj - margin)
            add_row({output_idx[out_i]: 1.0}, "<=", float(target), "improve")
        else:
            target = model.output_scaler.transform_one(out_i, best_obj + margin)
            add_row({output_idx[out_i]: 1.0}, ">=", float(target), "improve")

    lp = LinearProgram(
        c=np.zeros(n_vars),
        A=np.array(rows_A) if rows_A else np.zeros((0, n_vars)),
        relations=tuple(rows_rel),
        b=np.array(rows_b),
        lower=lower,
        upper=upper,
        row_names=tuple(names),
    )
    return MILPProblem(
        lp=lp,
        binary_vars=tuple(binaries),
        var_roles=roles,
        input_indices=tuple(input_idx),
        output_indices=tuple(output_idx),
        model=model,
    )


# ---------------------------------------------------------------------------
# branch and bound
# ---------------------------------------------------------------------------


@dataclass
class SolveOutcome:
    status: str  # feasible | infeasible | timeout
    witness: np.ndarray | None
    nodes_explored: int
    wall_time: float


def solve_milp(problem: MILPProblem, time_limit: float = 30.0) -> SolveOutcome:
    """Depth-first branch-and-bound over the binary indicator variables.

    Each node solves the LP relaxation with deltas in [0,1] (or fixed by
    earlier branching); the branch matching the relaxation's rounding is
    explored first, and the search stops at the first integral-feasible node.
    """
    t0 = time.monotonic()
    base = problem.lp
    binaries = list(problem.binary_vars)
    nodes = 0
    # each stack entry: dict var -> fixed value
    stack: list[dict[int, float]] = [{}]
    while stack:
        if time.monotonic() - t0 > time_limit:
            return SolveOutcome(TIMEOUT, None, nodes, time.monotonic() - t0)
        fixes = stack.pop()
        lower = base.lower.copy()
        upper = base.upper.copy()
        for j, v in fixes.items():
            lower[j] = v
            upper[j] = v
        lp = LinearProgram(
            base.c, base.A, base.relations, base.b, lower, upper, base.row_names
        )
        res = solve_lp(lp)
        nodes += 1
        if res.status != OPTIMAL:
            continue
        x = res.x
        frac = np.array([min(x[j] - np.floor(x[j]), np.ceil(x[j]) - x[j]) for j in binaries])
        worst = int(np.argmax(frac))
        if frac[worst] <= INT_TOL:
            witness = x.copy()
            for j in binaries:
                witness[j] = round(witness[j])
            if lp.check(witness, tol=INT_TOL):
                return SolveOutcome(FEASIBLE, witness, nodes, time.monotonic() - t0)
            # rounding broke a row: branch on the first ambiguous binary
            amb = [j for j in binaries if lower[j] < upper[j]]
            if not amb:
                continue
            jvar = amb[0]
        else:
            jvar = binaries[worst]
        preferred = float(round(x[jvar]))
        other = 1.0 - preferred
        stack.append({**fixes, jvar: other})
        stack.append({**fixes, jvar: preferred})
    return SolveOutcome(INFEASIBLE, None, nodes, time.monotonic() - t0)


def lp_format(problem: MILPProblem, name: str = "assent") -> str:
    """Render a MILPProblem in LP text format for external cross-checking."""
    lp = problem.lp
    lines = [f"\\ {name}", "Minimize", " obj: 0"]
    lines.append("Subject To")
    row_names = lp.row_names or tuple(f"c{i}" for i in range(len(lp.relations)))
    for i, rel in enumerate(lp.relations):
        terms = []
        for j in np.nonzero(lp.A[i])[0]:
            coef = lp.A[i, j]
            terms.append(f"{'+' if coef >= 0 else '-'} {abs(coef):.17g} x{j}")
        expr = " ".join(terms) if terms else "0 x0"
        op = {"<=": "<=", ">=": ">=", "=": "="}[rel]
        lines.append(f" {row_names[i]}: {expr} {op} {lp.b[i]:.17g}")
    lines.append("Bounds")
    for j in range(lp.n_vars):
        lo, hi = lp.lower[j], lp.upper[j]
        lo_s = "-inf" if not np.isfinite(lo) else f"{lo:.17g}"
        hi_s = "+inf" if not np.isfinite(hi) else f"{hi:.17g}"
        lines.append(f" {lo_s} <= x{j} <= {hi_s}")
    if problem.binary_vars:
        lines.append("Binary")
        lines.append(" " + " ".join(f"x{j}" for j in problem.binary_vars))
    lines.append("End")
    return "\n".join(lines) + "\n"
