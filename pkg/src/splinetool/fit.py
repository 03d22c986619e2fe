"""Deterministic solver for slope-constrained, TV2-penalized spline fitting.

The discretized problem is

    minimize  ||y - S f||^2 + lam * || first differences of slopes ||_1
    subject to slopes of f within [s_min, s_max] entrywise

over nodal values ``f`` on a fixed grid.  ``fit`` solves it by consensus
ADMM with an auxiliary slope variable: the slope subproblem (1-D total
variation plus a box) is solved exactly per iteration by a direct TV prox
followed by entrywise clipping, and the nodal subproblem is a banded
Cholesky solve.  ``oracle_fit`` is a structurally different reference
solver used to certify objectives in tests: projected subgradient descent
with Polyak averaging, exhaustive sign-pattern enumeration of the l1 term,
and an interior-point QP cross-check with an active-set polish.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .constraints import SlopeBounds, apply_divided_difference_adjoint
from .errors import DidNotConverge, GridMismatch, TooLarge
from .pwl import Grid, NodalSpline, eval_spline, slopes, tv2

_BALANCE_EVERY = 25
_BALANCE_RATIO = 10.0
_BALANCE_FACTOR = 2.0


@dataclass(frozen=True)
class SolverConfig:
    """Stopping rule for :func:`fit`.

    ``tol`` bounds the scaled primal and dual residuals; ``opt_tol`` is the
    objective accuracy the solver is certified to in tests.
    """

    tol: float = 1e-10
    max_iters: int = 200_000
    opt_tol: float = 1e-6


@dataclass(frozen=True, eq=False)
class FitProblem:
    """Data points, grid, regularization weight, and slope box."""

    x: np.ndarray
    y: np.ndarray
    grid: Grid
    lam: float
    bounds: SlopeBounds = field(default_factory=SlopeBounds)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim != 1 or x.shape != y.shape or x.size == 0:
            raise ValueError("need matching 1-d abscissa/ordinate arrays")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("data must be finite")
        if np.any(np.diff(x) <= 0):
            raise ValueError("data abscissas must be strictly increasing")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.grid.t[0] > x[0] or self.grid.t[-1] < x[-1]:
            raise ValueError("grid must span the data abscissas")
        for name, arr in (("x", x), ("y", y)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def m(self) -> int:
        return self.x.size


def default_grid(x) -> Grid:
    """Data abscissas with one pad node on each side."""
    x = np.asarray(x, dtype=float)
    return Grid(np.concatenate(([x[0] - 1.0], x, [x[-1] + 1.0])))


def make_problem(data, grid=None, lam=0.0, bounds=None) -> FitProblem:
    """Build a :class:`FitProblem` from ``(x, y)`` pairs.

    With ``grid=None`` the default padded data grid is used.
    """
    data = np.asarray(data, dtype=float).reshape(-1, 2)
    x, y = data[:, 0], data[:, 1]
    if grid is None:
        grid = default_grid(x)
    elif not isinstance(grid, Grid):
        grid = Grid(np.asarray(grid, dtype=float))
    return FitProblem(x, y, grid, float(lam), bounds or SlopeBounds())


@dataclass(frozen=True, eq=False)
class FitResult:
    spline: NodalSpline
    objective: float
    data_term: float
    reg_term: float
    max_slope_violation: float
    optimality_residual: float
    iterations: int


@dataclass(frozen=True, eq=False)
class SamplingOperator:
    """Sparse point-evaluation operator: each row holds the (at most two)
    active basis weights at one sample location, summing to one."""

    grid: Grid
    xs: np.ndarray
    seg: np.ndarray
    w: np.ndarray

    def apply(self, f):
        f = np.asarray(f, dtype=float)
        return f[self.seg] * (1.0 - self.w) + f[self.seg + 1] * self.w

    def adjoint(self, u):
        u = np.asarray(u, dtype=float)
        out = np.zeros(self.grid.n)
        np.add.at(out, self.seg, u * (1.0 - self.w))
        np.add.at(out, self.seg + 1, u * self.w)
        return out

    def dense(self):
        mat = np.zeros((self.xs.size, self.grid.n))
        rows = np.arange(self.xs.size)
        mat[rows, self.seg] = 1.0 - self.w
        mat[rows, self.seg + 1] = self.w
        return mat


def build_sampling(grid: Grid, xs) -> SamplingOperator:
    """Point-evaluation operator for the given sample locations."""
    xs = np.asarray(xs, dtype=float)
    if not np.all(np.isfinite(xs)):
        raise ValueError("sample locations must be finite")
    seg = grid.segment_of(xs)
    t = grid.t
    w = (xs - t[seg]) / (t[seg + 1] - t[seg])
    return SamplingOperator(grid, xs, seg, w)


def objective(problem: FitProblem, spline: NodalSpline):
    """(total, data term, regularizer) of a candidate spline.

    Slope feasibility is reported separately by the solver, never folded
    into the objective.
    """
    if not np.array_equal(spline.grid.t, problem.grid.t):
        raise GridMismatch("spline grid differs from the problem grid")
    resid = problem.y - eval_spline(spline, problem.x)
    data = float(resid @ resid)
    reg = tv2(spline)
    return data + problem.lam * reg, data, reg


# ---------------------------------------------------------------------------
# exact 1-D total-variation prox (direct non-iterative algorithm)


def tv1d_prox(y, lam: float) -> np.ndarray:
    """Minimizer of ``0.5*||x - y||^2 + lam * sum_i |x[i+1] - x[i]|``.

    Single forward pass maintaining a tube of admissible line segments;
    exact up to float rounding.  Optimality is certified in tests through
    the dual (KKT) conditions.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    if n <= 1 or lam <= 0.0:
        return y.copy()
    x = np.empty(n)
    k = k0 = km = kp = 0
    vmin = y[0] - lam
    vmax = y[0] + lam
    umin = lam
    umax = -lam
    while True:
        if k == n - 1:
            # tail of the signal: flush what the tube forces, then emit
            if umin < 0.0:
                x[k0 : km + 1] = vmin
                k = k0 = km = km + 1
                vmin = y[k]
                umin = lam
                umax = y[k] + lam - vmax
                continue
            if umax > 0.0:
                x[k0 : kp + 1] = vmax
                k = k0 = kp = kp + 1
                vmax = y[k]
                umax = -lam
                umin = y[k] - lam - vmin
                continue
            x[k0:] = vmin + umin / (k - k0 + 1)
            return x
        if y[k + 1] + umin < vmin - lam:  # forced negative jump
            x[k0 : km + 1] = vmin
            k = k0 = km = kp = km + 1
            vmin = y[k]
            vmax = y[k] + 2.0 * lam
            umin = lam
            umax = -lam
        elif y[k + 1] + umax > vmax + lam:  # forced positive jump
            x[k0 : kp + 1] = vmax
            k = k0 = km = kp = kp + 1
            vmin = y[k] - 2.0 * lam
            vmax = y[k]
            umin = lam
            umax = -lam
        else:  # keep extending the current segment
            k += 1
            umin += y[k] - vmin
            umax += y[k] - vmax
            if umin >= lam:
                vmin += (umin - lam) / (k - k0 + 1)
                umin = lam
                km = k
            if umax <= -lam:
                vmax += (umax + lam) / (k - k0 + 1)
                umax = -lam
                kp = k


# ---------------------------------------------------------------------------
# ADMM solver


def _divided_difference_banded(grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """(diag, superdiag) of the Gram matrix of the divided-difference map."""
    n = grid.n
    diag = np.zeros(n)
    off = np.zeros(n - 1)
    inv2 = 1.0 / grid.spacing**2
    weight = inv2.copy()
    weight[0] *= 2.0  # duplicated head counts its segment twice
    diag[:-1] += weight
    diag[1:] += weight
    off -= weight
    return diag, off


def _sampling_banded(op: SamplingOperator) -> tuple[np.ndarray, np.ndarray]:
    """(diag, superdiag) of the Gram matrix of the sampling operator."""
    n = op.grid.n
    diag = np.zeros(n)
    off = np.zeros(n - 1)
    wl, wr = 1.0 - op.w, op.w
    np.add.at(diag, op.seg, wl * wl)
    np.add.at(diag, op.seg + 1, wr * wr)
    np.add.at(off, op.seg, wl * wr)
    return diag, off


def _factor(diag, off):
    ab = np.zeros((2, diag.size))
    ab[0, 1:] = off
    ab[1] = diag
    return scipy.linalg.cholesky_banded(ab, lower=False)


def fit(problem: FitProblem, config: SolverConfig | None = None) -> FitResult:
    """Minimize the penalized data fit over splines with box-bounded slopes.

    Deterministic consensus ADMM; stops when the scaled primal and dual
    residuals both fall below ``config.tol``.  Raises
    :class:`DidNotConverge` (carrying the best iterate) at the iteration
    cap.
    """
    cfg = config or SolverConfig()
    grid = problem.grid
    n = grid.n
    sampler = build_sampling(grid, problem.x)
    lam = problem.lam
    lo, hi = problem.bounds.s_min, problem.bounds.s_max

    s_diag, s_off = _sampling_banded(sampler)
    d_diag, d_off = _divided_difference_banded(grid)
    sty2 = 2.0 * sampler.adjoint(problem.y)

    rho = max(1.0, lam)
    factor = _factor(2.0 * s_diag + rho * d_diag, 2.0 * s_off + rho * d_off)

    def dd(f):
        d = np.diff(f) / grid.spacing
        return np.concatenate((d[:1], d))

    f = np.zeros(n)
    u = np.zeros(n)
    w = np.zeros(n)
    residual = np.inf
    iters = cfg.max_iters
    for it in range(cfg.max_iters):
        rhs = sty2 + rho * apply_divided_difference_adjoint(grid, u - w)
        f = scipy.linalg.cho_solve_banded((factor, False), rhs)
        s = dd(f)
        u_prev = u
        u = np.clip(tv1d_prox(s + w, lam / rho), lo, hi)
        w = w + s - u

        r_pri = np.max(np.abs(s - u))
        r_dual = rho * np.max(
            np.abs(apply_divided_difference_adjoint(grid, u - u_prev))
        )
        scale_pri = 1.0 + max(np.max(np.abs(s)), np.max(np.abs(u)))
        scale_dual = 1.0 + rho * np.max(
            np.abs(apply_divided_difference_adjoint(grid, w))
        )
        residual = max(r_pri / scale_pri, r_dual / scale_dual)
        if residual < cfg.tol:
            iters = it + 1
            break
        if (it + 1) % _BALANCE_EVERY == 0:
            if r_pri / scale_pri > _BALANCE_RATIO * (r_dual / scale_dual):
                rho *= _BALANCE_FACTOR
                w = w / _BALANCE_FACTOR
                factor = _factor(
                    2.0 * s_diag + rho * d_diag, 2.0 * s_off + rho * d_off
                )
            elif r_dual / scale_dual > _BALANCE_RATIO * (r_pri / scale_pri):
                rho /= _BALANCE_FACTOR
                w = w * _BALANCE_FACTOR
                factor = _factor(
                    2.0 * s_diag + rho * d_diag, 2.0 * s_off + rho * d_off
                )

    result = _result_from_values(problem, f, residual, iters)
    if residual >= cfg.tol:
        raise DidNotConverge(
            f"residual {residual:.3e} after {cfg.max_iters} iterations",
            result=result,
            residual=residual,
        )
    return result


def _result_from_values(problem, f, residual, iters) -> FitResult:
    spline = NodalSpline(problem.grid, f)
    total, data, reg = objective(problem, spline)
    s = slopes(spline)
    viol = max(
        float(np.max(s - problem.bounds.s_max, initial=0.0)),
        float(np.max(problem.bounds.s_min - s, initial=0.0)),
        0.0,
    )
    return FitResult(
        spline=spline,
        objective=total,
        data_term=data,
        reg_term=reg,
        max_slope_violation=viol,
        optimality_residual=float(residual),
        iterations=int(iters),
    )


# ---------------------------------------------------------------------------
# knot pruning


def prune_knots(spline: NodalSpline, tol: float) -> NodalSpline:
    """Drop interior grid nodes whose slope jump is at most ``tol``."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    s = slopes(spline)
    jumps = np.abs(s[2:] - s[1:-1])
    keep = np.concatenate(([True], jumps > tol, [True]))
    if keep.all():
        return spline
    return NodalSpline(Grid(spline.grid.t[keep]), spline.f[keep])


# ---------------------------------------------------------------------------
# reference solver


_ORACLE_CAP = 12


def _slope_parametrization(problem):
    """Dense map from (f1, segment slopes) to nodal values and samples."""
    grid = problem.grid
    n = grid.n
    h = grid.spacing
    lift = np.zeros((n, n))  # f = lift @ p, p = (f1, slopes of the n-1 segments)
    lift[:, 0] = 1.0
    for j in range(n - 1):
        lift[j + 1 :, j + 1] = h[j]
    sampler = build_sampling(grid, problem.x)
    design = sampler.dense() @ lift
    return lift, design


def _oracle_objective(problem, design, p):
    lam = problem.lam
    resid = problem.y - design @ p
    seg = p[1:]
    return float(resid @ resid) + lam * float(np.sum(np.abs(np.diff(seg))))


def _oracle_candidate(problem, design, p):
    """Clip a parameter vector into the box and score it exactly."""
    lo, hi = problem.bounds.s_min, problem.bounds.s_max
    p = p.copy()
    p[1:] = np.clip(p[1:], lo, hi)
    return _oracle_objective(problem, design, p), p


def _subgradient_route(problem, design, budget):
    """Projected subgradient descent with Polyak averaging."""
    lo, hi = problem.bounds.s_min, problem.bounds.s_max
    lam = problem.lam
    d = design.shape[1]
    gram2 = 2.0 * design.T @ design
    dty2 = 2.0 * design.T @ problem.y
    # deterministic start: box-clipped least squares
    p = np.linalg.lstsq(design, problem.y, rcond=None)[0]
    p[1:] = np.clip(p[1:], lo, hi)
    step0 = 1.0 / (1.0 + np.linalg.norm(design, 2) ** 2)
    best_val, best_p = _oracle_candidate(problem, design, p)
    avg = np.zeros(d)
    for k in range(budget):
        g = gram2 @ p - dty2
        if d > 2:
            sign = np.sign(np.diff(p[1:]))
            g[2:] += lam * sign
            g[1:-1] -= lam * sign
        p = p - step0 / np.sqrt(k + 1.0) * g
        p[1:] = np.clip(p[1:], lo, hi)
        avg += p
        val = _oracle_objective(problem, design, p)
        if val < best_val:
            best_val, best_p = val, p.copy()
    if budget > 0:
        val, p_avg = _oracle_candidate(problem, design, avg / budget)
        if val < best_val:
            best_val, best_p = val, p_avg
    return best_val, best_p


def _pattern_solve(problem, design, pattern, clamps):
    """Equality-constrained least squares for one sign/clamp pattern.

    ``pattern[j]`` in {-1, 0, +1} fixes the sign of the j-th slope
    difference (0 merges the two segments); ``clamps`` optionally pins
    single segments to a bound value.  Returns the parameter vector or
    None when the pattern admits no stationary point.
    """
    lam = problem.lam
    nseg = design.shape[1] - 1
    block = np.zeros(nseg, dtype=int)
    for j in range(1, nseg):
        block[j] = block[j - 1] + (pattern[j - 1] != 0)
    nblocks = block[-1] + 1

    # merge clamps along blocks; conflicting clamps kill the pattern
    block_value = {}
    for seg_idx, value in clamps.items():
        b = block[seg_idx]
        if b in block_value and block_value[b] != value:
            return None
        block_value[b] = value

    free_blocks = [b for b in range(nblocks) if b not in block_value]
    expand = np.zeros((nseg, nblocks))
    expand[np.arange(nseg), block] = 1.0

    linear = np.zeros(nblocks)
    for j, sgn in enumerate(pattern):
        if sgn:
            linear[block[j + 1]] += lam * sgn
            linear[block[j]] -= lam * sgn

    # columns: intercept + free blocks; clamped blocks move to the offset
    cols = [design[:, :1]] + [
        (design[:, 1:] @ expand)[:, [b]] for b in free_blocks
    ]
    mat = np.hstack(cols) if cols else np.zeros((design.shape[0], 0))
    offset = np.zeros(design.shape[0])
    for b, value in block_value.items():
        offset += (design[:, 1:] @ expand)[:, b] * value
    rhs_vec = problem.y - offset
    lin_free = np.array([linear[b] for b in free_blocks])
    lin_full = np.concatenate(([0.0], lin_free))

    gram = 2.0 * mat.T @ mat
    rhs = 2.0 * mat.T @ rhs_vec - lin_full
    sol, *_ = np.linalg.lstsq(gram, rhs, rcond=None)
    if not np.allclose(gram @ sol, rhs, atol=1e-9 * (1.0 + np.abs(rhs).max())):
        return None  # unbounded below under this pattern

    g = np.zeros(nblocks)
    for b, value in block_value.items():
        g[b] = value
    for i, b in enumerate(free_blocks):
        g[b] = sol[1 + i]
    p = np.empty(1 + nseg)
    p[0] = sol[0]
    p[1:] = expand @ g
    return p


def _pattern_feasible(problem, pattern, p, tol=1e-9):
    lo, hi = problem.bounds.s_min, problem.bounds.s_max
    seg = p[1:]
    if np.any(seg < lo - tol) or np.any(seg > hi + tol):
        return False
    diffs = np.diff(seg)
    for j, sgn in enumerate(pattern):
        if sgn and sgn * diffs[j] < -tol:
            return False
    return True


def _enumeration_route(problem, design):
    """Exhaustive sign patterns of the l1 term, box-feasibility checked."""
    nseg = design.shape[1] - 1
    ndiff = max(nseg - 1, 0)
    best = (np.inf, None)
    if problem.lam == 0.0:
        # with no l1 weight the sign split is vacuous: one unconstrained solve
        p = _pattern_solve(problem, design, (1,) * ndiff, {})
        if p is not None and _pattern_feasible(problem, (), p):
            best = _oracle_candidate(problem, design, p)
        return best
    for code in range(3**ndiff):
        pattern = []
        c = code
        for _ in range(ndiff):
            pattern.append((c % 3) - 1)
            c //= 3
        pattern = tuple(pattern)
        p = _pattern_solve(problem, design, pattern, {})
        if p is None or not _pattern_feasible(problem, pattern, p):
            continue
        val, pc = _oracle_candidate(problem, design, p)
        if val < best[0]:
            best = (val, pc)
    return best


def _qp_route(problem, design):
    """Interior-point QP on (nodal values in slope coordinates, slack |.|)."""
    import cvxopt

    lam = problem.lam
    lo, hi = problem.bounds.s_min, problem.bounds.s_max
    d = design.shape[1]
    nseg = d - 1
    ndiff = max(nseg - 1, 0)
    nr = ndiff if lam > 0 else 0
    dim = d + nr

    quad = np.zeros((dim, dim))
    quad[:d, :d] = 2.0 * design.T @ design
    lin = np.zeros(dim)
    lin[:d] = -2.0 * design.T @ problem.y
    lin[d:] = lam

    rows = []
    rhs = []
    diff_mat = np.zeros((ndiff, dim))
    for j in range(ndiff):
        diff_mat[j, 1 + j] = -1.0
        diff_mat[j, 2 + j] = 1.0
    if nr:
        slack = np.zeros((ndiff, dim))
        slack[:, d:] = np.eye(ndiff)
        rows += [diff_mat - slack, -diff_mat - slack]
        rhs += [np.zeros(ndiff), np.zeros(ndiff)]
    box = np.zeros((nseg, dim))
    box[:, 1 : 1 + nseg] = np.eye(nseg)
    if np.isfinite(hi):
        rows.append(box)
        rhs.append(np.full(nseg, hi))
    if np.isfinite(lo):
        rows.append(-box)
        rhs.append(np.full(nseg, -lo))
    if not rows:
        return (np.inf, None)

    g_mat = np.vstack(rows)
    h_vec = np.concatenate(rhs)
    options = {
        "show_progress": False,
        "abstol": 1e-12,
        "reltol": 1e-12,
        "feastol": 1e-12,
        "maxiters": 200,
    }
    try:
        sol = cvxopt.solvers.qp(
            cvxopt.matrix(quad),
            cvxopt.matrix(lin),
            cvxopt.matrix(g_mat),
            cvxopt.matrix(h_vec),
            options=options,
        )
    except (ValueError, ZeroDivisionError, ArithmeticError):
        return (np.inf, None)
    if sol["x"] is None:
        return (np.inf, None)
    p = np.array(sol["x"]).ravel()[:d]
    return _oracle_candidate(problem, design, p)


def _active_set_polish(problem, design, p, tol=1e-6):
    """Re-solve with the pattern identified from an approximate solution."""
    lo, hi = problem.bounds.s_min, problem.bounds.s_max
    seg = p[1:]
    diffs = np.diff(seg)
    pattern = tuple(
        0 if abs(dv) <= tol else (1 if dv > 0 else -1) for dv in diffs
    )
    clamps = {}
    for j, value in enumerate(seg):
        if np.isfinite(lo) and abs(value - lo) <= tol:
            clamps[j] = lo
        elif np.isfinite(hi) and abs(value - hi) <= tol:
            clamps[j] = hi
    refined = _pattern_solve(problem, design, pattern, clamps)
    if refined is None or not _pattern_feasible(problem, pattern, refined):
        return (np.inf, None)
    return _oracle_candidate(problem, design, refined)


def oracle_fit(problem: FitProblem, budget: int = 100_000) -> FitResult:
    """Reference solve of the same problem by structurally different means.

    Combines three certificate generators and returns the best feasible
    one: (a) projected subgradient descent in slope coordinates with
    diminishing steps and Polyak averaging, run for ``budget`` iterations;
    (b) exhaustive enumeration of the sign patterns of the l1 term, each
    reduced to an equality-constrained least-squares problem and checked
    against the slope box; (c) an interior-point QP followed by an
    active-set polish, which covers optima pinned to the box (a case the
    plain enumeration misses by design).  Capped at small dimensions.
    """
    if problem.grid.n > _ORACLE_CAP or problem.m > _ORACLE_CAP:
        raise TooLarge(
            f"reference solver accepts at most {_ORACLE_CAP} nodes/samples"
        )
    lift, design = _slope_parametrization(problem)

    candidates = []
    candidates.append(_subgradient_route(problem, design, budget))
    candidates.append(_enumeration_route(problem, design))
    candidates.append(_qp_route(problem, design))
    for val, p in list(candidates):
        if p is not None and np.isfinite(val):
            candidates.append(_active_set_polish(problem, design, p))

    best_val, best_p = min(
        (c for c in candidates if c[1] is not None), key=lambda c: c[0]
    )
    f = lift @ best_p
    return _result_from_values(problem, f, np.nan, budget)
