"""Deterministic dense LP / MILP solver.

A two-phase tableau simplex with Bland's pivoting rule plus a best-first
branch-and-bound layer for binary variables.  Problem sizes in this package
are tens of variables, so a dense tableau is the right tool; the pivot
itself is delegated to the compiled kernel when available.

Conventions fixed here and relied upon by tests:
  * equality constraints are expanded into a <= / >= pair internally,
  * entering variable: lowest index with negative reduced cost,
  * leaving variable: minimum ratio, ties broken by lowest basic index,
  * branching: lowest fractional binary, down-branch explored first.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from watersec._kernels import pivot

FEAS_TOL = 1e-7
GAP_TOL = 1e-6
NODE_LIMIT = 100_000
_PIVOT_TOL = 1e-9
_MAX_PIVOTS = 50_000

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration-limit"


class DimensionError(ValueError):
    """Objective, constraint, or bound dimensions disagree."""


@dataclass
class LinearProgram:
    """min/max c.x subject to a x (<=|=|>=) b and lo <= x <= hi."""

    c: np.ndarray
    a: np.ndarray
    rel: list[str]
    b: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    sense: str = "min"
    binaries: frozenset[int] = frozenset()
    names: list[str] | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.a = np.asarray(self.a, dtype=float)
        if self.a.size == 0:
            self.a = self.a.reshape(0, self.c.size)
        self.b = np.asarray(self.b, dtype=float)
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        n = self.c.size
        if self.a.shape != (self.b.size, n) or len(self.rel) != self.b.size:
            raise DimensionError(
                f"constraint block {self.a.shape} inconsistent with "
                f"{n} variables / {self.b.size} rhs entries"
            )
        if self.lo.size != n or self.hi.size != n:
            raise DimensionError("bound vectors must match variable count")
        if self.sense not in ("min", "max"):
            raise ValueError(f"unknown sense {self.sense!r}")
        bad = [r for r in self.rel if r not in ("<=", "=", ">=")]
        if bad:
            raise ValueError(f"unknown relations {bad}")
        if np.any(self.lo > self.hi + 1e-12):
            raise ValueError("lo > hi for some variable")
        for j in self.binaries:
            if self.lo[j] < -1e-12 or self.hi[j] > 1 + 1e-12:
                raise ValueError(f"binary variable {j} has bounds outside [0, 1]")

    @property
    def n_vars(self) -> int:
        return self.c.size


@dataclass
class Solution:
    status: str
    values: np.ndarray | None = None
    objective_value: float | None = None
    nodes: int = 0

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


class LPBuilder:
    """Incremental construction of a LinearProgram with named variables."""

    def __init__(self):
        self._names: list[str] = []
        self._index: dict[str, int] = {}
        self._obj: list[float] = []
        self._lo: list[float] = []
        self._hi: list[float] = []
        self._binary: set[int] = set()
        self._rows: list[tuple[dict[int, float], str, float]] = []

    def var(self, name, lo=-np.inf, hi=np.inf, obj=0.0, binary=False) -> int:
        if name in self._index:
            raise ValueError(f"duplicate variable {name!r}")
        j = len(self._names)
        self._index[name] = j
        self._names.append(name)
        self._obj.append(obj)
        self._lo.append(0.0 if binary and lo == -np.inf else lo)
        self._hi.append(1.0 if binary and hi == np.inf else hi)
        if binary:
            self._binary.add(j)
        return j

    def __contains__(self, name) -> bool:
        return name in self._index

    def index(self, name) -> int:
        return self._index[name]

    def set_obj(self, name, coeff: float) -> None:
        self._obj[self._index[name]] = coeff

    def add_obj(self, name, coeff: float) -> None:
        self._obj[self._index[name]] += coeff

    def set_bounds(self, name, lo=None, hi=None) -> None:
        j = self._index[name]
        if lo is not None:
            self._lo[j] = lo
        if hi is not None:
            self._hi[j] = hi

    def add(self, coeffs: dict, rel: str, rhs: float) -> None:
        """Add a row; coefficient keys may be names or column indices."""
        row: dict[int, float] = {}
        for key, val in coeffs.items():
            j = self._index[key] if isinstance(key, str) else key
            row[j] = row.get(j, 0.0) + float(val)
        self._rows.append((row, rel, float(rhs)))

    def build(self, sense="min") -> LinearProgram:
        n = len(self._names)
        a = np.zeros((len(self._rows), n))
        b = np.zeros(len(self._rows))
        rel = []
        for i, (row, r, rhs) in enumerate(self._rows):
            for j, v in row.items():
                a[i, j] = v
            rel.append(r)
            b[i] = rhs
        return LinearProgram(
            c=np.array(self._obj, dtype=float),
            a=a,
            rel=rel,
            b=b,
            lo=np.array(self._lo, dtype=float),
            hi=np.array(self._hi, dtype=float),
            sense=sense,
            binaries=frozenset(self._binary),
            names=list(self._names),
        )


def write_lp(p: LinearProgram, fh) -> None:
    """Dump a program in a CPLEX-LP-like text form (debugging aid)."""

    def vname(j):
        return p.names[j] if p.names else f"x{j}"

    def terms(coeffs):
        out = []
        for j, v in enumerate(coeffs):
            if v != 0.0:
                out.append(f"{'+' if v >= 0 else '-'} {abs(v):.12g} {vname(j)}")
        return " ".join(out) if out else "0"

    fh.write("Minimize\n" if p.sense == "min" else "Maximize\n")
    fh.write(f" obj: {terms(p.c)}\n")
    fh.write("Subject To\n")
    for i in range(p.b.size):
        rel = {"<=": "<=", ">=": ">=", "=": "="}[p.rel[i]]
        fh.write(f" c{i}: {terms(p.a[i])} {rel} {p.b[i]:.12g}\n")
    fh.write("Bounds\n")
    for j in range(p.n_vars):
        fh.write(f" {p.lo[j]:.12g} <= {vname(j)} <= {p.hi[j]:.12g}\n")
    if p.binaries:
        fh.write("Binaries\n")
        fh.write(" " + " ".join(vname(j) for j in sorted(p.binaries)) + "\n")
    fh.write("End\n")


class _StandardForm:
    """Reduction to min c.u, A u <= b, u >= 0 with recovery bookkeeping.

    Variable maps: ("fixed",), ("shift", col, off) for x = off + u,
    ("flip", col, off) for x = off - u, ("free", col) for x = u+ - u-.
    """

    def __init__(self, p: LinearProgram, lo=None, hi=None):
        self.p = p
        lo = p.lo if lo is None else lo
        hi = p.hi if hi is None else hi
        n = p.n_vars
        c = p.c if p.sense == "min" else -p.c

        self.cols: list[tuple] = [("fixed",)] * n
        self.fixed = np.zeros(n)
        cols_c: list[float] = []
        ub_rows: list[tuple[int, float]] = []  # (column, upper bound on u)
        for j in range(n):
            if lo[j] == hi[j]:
                self.fixed[j] = lo[j]
            elif np.isfinite(lo[j]):
                col = len(cols_c)
                self.cols[j] = ("shift", col, lo[j])
                cols_c.append(c[j])
                if np.isfinite(hi[j]):
                    ub_rows.append((col, hi[j] - lo[j]))
            elif np.isfinite(hi[j]):
                col = len(cols_c)
                self.cols[j] = ("flip", col, hi[j])
                cols_c.append(-c[j])
            else:
                col = len(cols_c)
                self.cols[j] = ("free", col)
                cols_c.append(c[j])
                cols_c.append(-c[j])

        self.n_cols = len(cols_c)
        self.c_std = np.array(cols_c) if cols_c else np.zeros(0)

        rows: list[np.ndarray] = []
        rhs: list[float] = []
        self.degenerate_infeasible = False
        for i in range(p.b.size):
            coeffs = np.zeros(self.n_cols)
            base = 0.0
            for j in range(n):
                v = p.a[i, j]
                if v == 0.0:
                    continue
                kind = self.cols[j][0]
                if kind == "fixed":
                    base += v * self.fixed[j]
                elif kind == "shift":
                    _, col, off = self.cols[j]
                    base += v * off
                    coeffs[col] += v
                elif kind == "flip":
                    _, col, off = self.cols[j]
                    base += v * off
                    coeffs[col] -= v
                else:
                    _, col = self.cols[j]
                    coeffs[col] += v
                    coeffs[col + 1] -= v
            r = p.b[i] - base
            if p.rel[i] in ("<=", "="):
                rows.append(coeffs.copy())
                rhs.append(r)
            if p.rel[i] in (">=", "="):
                rows.append(-coeffs)
                rhs.append(-r)
            if not np.any(coeffs) and (
                (p.rel[i] == "<=" and r < -FEAS_TOL)
                or (p.rel[i] == ">=" and r > FEAS_TOL)
                or (p.rel[i] == "=" and abs(r) > FEAS_TOL)
            ):
                self.degenerate_infeasible = True
        for col, ub in ub_rows:
            coeffs = np.zeros(self.n_cols)
            coeffs[col] = 1.0
            rows.append(coeffs)
            rhs.append(ub)
        self.a_std = np.vstack(rows) if rows else np.zeros((0, self.n_cols))
        self.b_std = np.array(rhs)

    def recover(self, u: np.ndarray) -> np.ndarray:
        x = self.fixed.copy()
        for j, spec in enumerate(self.cols):
            kind = spec[0]
            if kind == "fixed":
                continue
            if kind == "shift":
                x[j] = spec[2] + u[spec[1]]
            elif kind == "flip":
                x[j] = spec[2] - u[spec[1]]
            else:
                x[j] = u[spec[1]] - u[spec[1] + 1]
        return x


def _simplex(tableau, basis, n_real, allow_cols, max_iters=_MAX_PIVOTS):
    """Bland-rule simplex on a prepared tableau; returns a status string.

    tableau: (m+1, width) with objective as the last row and rhs as the
    last column; basis: per-row basic column index.
    """
    m = tableau.shape[0] - 1
    for _ in range(max_iters):
        costs = tableau[-1, :-1]
        candidates = (costs < -_PIVOT_TOL) & allow_cols
        if not candidates.any():
            return OPTIMAL
        enter = int(np.argmax(candidates))  # lowest candidate index (Bland)
        col = tableau[:m, enter]
        positive = col > _PIVOT_TOL
        if not positive.any():
            return UNBOUNDED
        ratios = np.full(m, np.inf)
        ratios[positive] = tableau[:m, -1][positive] / col[positive]
        best = ratios.min()
        ties = np.flatnonzero(ratios == best)
        leave = int(min(ties, key=lambda i: basis[i]))
        pivot(tableau, leave, enter)
        basis[leave] = enter
    return ITERATION_LIMIT


def solve_lp(p: LinearProgram, lo=None, hi=None, max_iters=_MAX_PIVOTS) -> Solution:
    """Solve the LP relaxation of ``p`` (binaries treated as [0,1] bounds).

    ``lo``/``hi`` optionally override the program bounds (used by
    branch-and-bound).  Deterministic: Bland's rule throughout.
    """
    sf = _StandardForm(p, lo=lo, hi=hi)
    if sf.degenerate_infeasible:
        return Solution(INFEASIBLE)
    n = sf.n_cols
    m = sf.b_std.size
    if n == 0:
        x = sf.recover(np.zeros(0))
        return Solution(OPTIMAL, x, float(p.c @ x))

    # tableau layout: [structural | slack | artificial | rhs]
    neg = sf.b_std < 0
    a = np.where(neg[:, None], -sf.a_std, sf.a_std)
    b = np.where(neg, -sf.b_std, sf.b_std)
    slack = np.where(neg, -1.0, 1.0)
    art_rows = np.flatnonzero(neg)
    n_art = art_rows.size

    width = n + m + n_art + 1
    tableau = np.zeros((m + 1, width))
    tableau[:m, :n] = a
    tableau[np.arange(m), n + np.arange(m)] = slack
    tableau[:m, -1] = b
    basis = np.empty(m, dtype=int)
    basis[~neg] = n + np.flatnonzero(~neg)
    for k, i in enumerate(art_rows):
        tableau[i, n + m + k] = 1.0
        basis[i] = n + m + k

    allow = np.ones(width - 1, dtype=bool)
    if n_art:
        # phase 1: minimize the artificial sum
        tableau[-1, n + m:-1] = 1.0
        for i in art_rows:
            tableau[-1, :] -= tableau[i, :]
        status = _simplex(tableau, basis, n, allow, max_iters)
        if status == ITERATION_LIMIT:
            return Solution(ITERATION_LIMIT)
        if -tableau[-1, -1] > FEAS_TOL:
            return Solution(INFEASIBLE)
        # drive remaining artificials out of the basis
        for i in range(m):
            if basis[i] >= n + m:
                row = tableau[i, : n + m]
                nz = np.flatnonzero(np.abs(row) > _PIVOT_TOL)
                if nz.size:
                    pivot(tableau, i, int(nz[0]))
                    basis[i] = int(nz[0])
        allow[n + m:] = False
        keep = basis < n + m
        if not keep.all():
            # redundant rows: the artificial stayed basic at zero
            rows = np.flatnonzero(keep)
            tableau = np.vstack([tableau[rows], tableau[-1:]])
            basis = basis[rows]
            m = rows.size

    # phase 2
    tableau[-1, :] = 0.0
    tableau[-1, :n] = sf.c_std
    for i in range(m):
        cb = tableau[-1, basis[i]]
        if cb != 0.0:
            tableau[-1, :] -= cb * tableau[i, :]
    status = _simplex(tableau, basis, n, allow, max_iters)
    if status != OPTIMAL:
        return Solution(status)

    u = np.zeros(width - 1)
    u[basis] = tableau[: tableau.shape[0] - 1, -1]
    x = sf.recover(u[:n])
    lo_eff = p.lo if lo is None else lo
    hi_eff = p.hi if hi is None else hi
    x = np.clip(x, lo_eff, hi_eff)
    return Solution(OPTIMAL, x, float(p.c @ x))


def check_feasible(p: LinearProgram, x: np.ndarray, tol=FEAS_TOL) -> float:
    """Maximum constraint violation of x against p's rows and bounds."""
    worst = 0.0
    if p.b.size:
        ax = p.a @ x
        for i, r in enumerate(p.rel):
            if r == "<=":
                worst = max(worst, ax[i] - p.b[i])
            elif r == ">=":
                worst = max(worst, p.b[i] - ax[i])
            else:
                worst = max(worst, abs(ax[i] - p.b[i]))
    worst = max(worst, float(np.max(p.lo - x, initial=0.0)))
    worst = max(worst, float(np.max(x - p.hi, initial=0.0)))
    return worst


def solve_milp(
    p: LinearProgram,
    gap_tol: float = GAP_TOL,
    node_limit: int = NODE_LIMIT,
    int_tol: float = 1e-6,
) -> Solution:
    """Best-first branch-and-bound over the declared binary variables."""
    if not p.binaries:
        return solve_lp(p)
    sign = 1.0 if p.sense == "min" else -1.0
    binaries = sorted(p.binaries)

    def normalized(sol):
        return sign * sol.objective_value

    incumbent: Solution | None = None
    counter = 0
    root = solve_lp(p)
    if root.status in (INFEASIBLE, UNBOUNDED, ITERATION_LIMIT):
        return root
    heap: list = []
    heapq.heappush(heap, (normalized(root), 0, p.lo.copy(), p.hi.copy()))
    nodes = 0
    limited = False
    while heap:
        bound, _, lo, hi = heapq.heappop(heap)
        if incumbent is not None and bound >= normalized(incumbent) - gap_tol:
            continue
        if nodes >= node_limit:
            limited = True
            break
        nodes += 1
        sol = solve_lp(p, lo=lo, hi=hi)
        if sol.status == INFEASIBLE:
            continue
        if sol.status == ITERATION_LIMIT:
            limited = True
            break
        if incumbent is not None and normalized(sol) >= normalized(incumbent) - gap_tol:
            continue
        frac = [j for j in binaries if abs(sol.values[j] - round(sol.values[j])) > int_tol]
        if not frac:
            # re-solve with binaries pinned so the solution is exactly integral
            flo, fhi = lo.copy(), hi.copy()
            for j in binaries:
                v = round(sol.values[j])
                flo[j] = fhi[j] = v
            exact = solve_lp(p, lo=flo, hi=fhi)
            if exact.status == OPTIMAL and (
                incumbent is None or normalized(exact) < normalized(incumbent) - 0.0
            ):
                exact.nodes = nodes
                incumbent = exact
            continue
        j = frac[0]
        for branch_hi in (0.0, 1.0):  # down-branch first
            blo, bhi = lo.copy(), hi.copy()
            if branch_hi == 0.0:
                bhi[j] = 0.0
            else:
                blo[j] = 1.0
            counter += 1
            heapq.heappush(heap, (normalized(sol), counter, blo, bhi))
    if limited:
        if incumbent is not None:
            incumbent.status = ITERATION_LIMIT
            incumbent.nodes = nodes
            return incumbent
        return Solution(ITERATION_LIMIT, nodes=nodes)
    if incumbent is None:
        return Solution(INFEASIBLE, nodes=nodes)
    incumbent.nodes = nodes
    return incumbent
