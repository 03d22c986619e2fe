"""Nonuniform piecewise-linear splines and general piecewise-linear curves.

Two representations live here:

* :class:`NodalSpline` -- a continuous linear spline stored by its values at
  the nodes of a strictly increasing :class:`Grid`, evaluated through the
  interpolating triangular basis (two one-sided boundary ramps, triangles
  inside).  Evaluation of any point touches at most two basis functions.
* :class:`PwlCurve` -- an ordered set of ``(x, y)`` points describing a
  general piecewise-linear map, possibly with jump discontinuities encoded
  as repeated abscissas.  Curves support inversion of monotone maps, which
  turns flat segments into jumps and vice versa.

Slope vectors follow the convention of a duplicated head: for a spline with
``N`` nodes the slope vector ``s`` has length ``N`` with ``s[0] == s[1]`` and
``s[n] = (f[n] - f[n-1]) / (t[n] - t[n-1])`` for ``n >= 1``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    IndexOutOfRange,
    InconsistentSlopeHead,
    JumpNotAllowed,
    NonMonotoneGrid,
    NotMonotone,
    TooFewPoints,
    TooShort,
)

ZERO_WEIGHT_TOL = 1e-12


def _frozen_array(values, dtype=float):
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Grid:
    """Strictly increasing node locations of a nonuniform spline mesh."""

    t: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise TooShort(f"grid needs at least 2 nodes, got shape {t.shape}")
        if not np.all(np.isfinite(t)):
            raise NonMonotoneGrid("grid nodes must be finite")
        if np.any(np.diff(t) <= 0):
            raise NonMonotoneGrid("grid nodes must be strictly increasing")
        object.__setattr__(self, "t", _frozen_array(t))

    @property
    def n(self) -> int:
        return self.t.size

    @property
    def spacing(self) -> np.ndarray:
        return np.diff(self.t)

    def segment_of(self, x):
        """Index of the half-open segment containing ``x``.

        Segment ``j`` spans ``[t[j], t[j+1])``; the first and last segments
        extend to -inf and +inf so every real lands somewhere.
        """
        j = np.searchsorted(self.t, x, side="right") - 1
        return np.clip(j, 0, self.n - 2)


def make_grid(locations) -> Grid:
    """Validate node locations and build a :class:`Grid`."""
    return Grid(np.asarray(locations, dtype=float))


@dataclass(frozen=True, eq=False)
class NodalSpline:
    """Linear spline stored as nodal values on a grid.

    Extends linearly beyond the grid with the slopes of the two boundary
    segments.
    """

    grid: Grid
    f: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        f = np.asarray(self.f, dtype=float)
        if f.shape != self.grid.t.shape:
            raise TooShort(
                f"nodal values have shape {f.shape}, grid has {self.grid.t.shape}"
            )
        object.__setattr__(self, "f", _frozen_array(f))

    def __call__(self, x):
        return eval_spline(self, x)


@dataclass(frozen=True, eq=False)
class ReluForm:
    """Linear spline as intercept/slope plus weighted ReLU atoms.

    ``value(x) = b0 + b1 * x + sum_k a[k] * max(x - knots[k], 0)``.
    """

    b0: float
    b1: float
    knots: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        a = np.asarray(self.a, dtype=float)
        if knots.shape != a.shape or knots.ndim != 1:
            raise TooShort("knots and weights must be 1-d arrays of equal length")
        if knots.size and np.any(np.diff(knots) <= 0):
            raise NonMonotoneGrid("knots must be strictly increasing")
        object.__setattr__(self, "knots", _frozen_array(knots))
        object.__setattr__(self, "a", _frozen_array(a))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        v = self.b0 + self.b1 * x
        for tau, w in zip(self.knots, self.a):
            v = v + w * np.maximum(x - tau, 0.0)
        return v


@dataclass(frozen=True, eq=False)
class PwlCurve:
    """Ordered point set describing a piecewise-linear map.

    Abscissas are nondecreasing; a repeated abscissa with differing
    ordinates encodes a jump.  ``minimal=True`` asserts that every interior
    point is either a knot (off the line of its neighbors) or part of a
    jump pair.
    """

    points: np.ndarray
    minimal: bool = False

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise TooFewPoints(f"need an (N, 2) array with N >= 2, got {pts.shape}")
        dx = np.diff(pts[:, 0])
        if np.any(dx < 0):
            raise NotMonotone("abscissas must be nondecreasing")
        same_x = dx == 0
        if np.any(same_x & (np.diff(pts[:, 1]) == 0)):
            raise NotMonotone("repeated abscissa requires differing ordinates")
        object.__setattr__(self, "points", _frozen_array(pts))
        if self.minimal and not _check_minimal(pts):
            raise ValueError("curve flagged minimal but has removable points")

    @property
    def x(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.points[:, 1]

    @property
    def has_jumps(self) -> bool:
        return bool(np.any(np.diff(self.x) == 0))

    def __call__(self, x):
        return eval_curve(self, x)


def _check_minimal(pts, tol=ZERO_WEIGHT_TOL):
    x, y = pts[:, 0], pts[:, 1]
    for i in range(1, len(pts) - 1):
        if x[i] == x[i - 1] or x[i] == x[i + 1]:
            continue
        s_in = (y[i] - y[i - 1]) / (x[i] - x[i - 1])
        s_out = (y[i + 1] - y[i]) / (x[i + 1] - x[i])
        if abs(s_out - s_in) <= tol:
            return False
    return True


# ---------------------------------------------------------------------------
# basis and spline evaluation


def _segment_weights(grid: Grid, x):
    """Active segment index and barycentric weight of its right node.

    The weight leaves [0, 1] outside the grid, which is exactly what linear
    extrapolation requires.
    """
    x = np.asarray(x, dtype=float)
    j = grid.segment_of(x)
    t = grid.t
    w = (x - t[j]) / (t[j + 1] - t[j])
    return j, w


def eval_basis(grid: Grid, n: int, x):
    """Value of the n-th interpolating basis function (0-based index).

    Interior basis functions are triangles supported on two adjacent
    segments; the two at each boundary extend linearly outward so that the
    family reproduces affine functions on all of R.  The family sums to one
    everywhere and at most two members are nonzero at any point.
    """
    if not 0 <= n < grid.n:
        raise IndexOutOfRange(f"basis index {n} outside [0, {grid.n})")
    x = np.asarray(x, dtype=float)
    j, w = _segment_weights(grid, x)
    out = np.where(j == n, 1.0 - w, 0.0)
    out = np.where(j + 1 == n, w, out)
    if out.ndim == 0:
        return float(out)
    return out


def eval_spline(spline: NodalSpline, x):
    """Evaluate a nodal spline at scalar or array ``x``.

    Only the two nodal values flanking the active segment are touched.
    """
    j, w = _segment_weights(spline.grid, x)
    f = spline.f
    out = f[j] * (1.0 - w) + f[j + 1] * w
    if out.ndim == 0:
        return float(out)
    return out


def eval_spline_slope(spline: NodalSpline, x):
    """Local slope of the spline at ``x`` (right-continuous at nodes)."""
    j = spline.grid.segment_of(np.asarray(x, dtype=float))
    t, f = spline.grid.t, spline.f
    out = (f[j + 1] - f[j]) / (t[j + 1] - t[j])
    if out.ndim == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# slope algebra


def slopes(spline: NodalSpline) -> np.ndarray:
    """Slope vector with duplicated head (length N, ``s[0] == s[1]``)."""
    d = np.diff(spline.f) / spline.grid.spacing
    return np.concatenate((d[:1], d))


def from_slopes(grid: Grid, s, f1: float) -> NodalSpline:
    """Rebuild nodal values from a slope vector and the first value.

    Left inverse of :func:`slopes` up to the integration constant ``f1``;
    a single O(N) cumulative pass.
    """
    s = np.asarray(s, dtype=float)
    if s.shape != grid.t.shape:
        raise InconsistentSlopeHead(
            f"slope vector has shape {s.shape}, expected {grid.t.shape}"
        )
    if s[0] != s[1]:
        raise InconsistentSlopeHead(f"s[0]={s[0]!r} != s[1]={s[1]!r}")
    f = np.empty(grid.n)
    f[0] = f1
    f[1:] = f1 + np.cumsum(s[1:] * grid.spacing)
    return NodalSpline(grid, f)


def tv2(spline: NodalSpline) -> float:
    """Second-order total variation: summed absolute slope jumps.

    Zero exactly on affine splines; equals the l1 norm of the ReLU weights
    of :func:`to_relu_form`.
    """
    s = slopes(spline)
    return float(np.sum(np.abs(np.diff(s))))


def slope_range(spline: NodalSpline) -> tuple[float, float]:
    """Minimum and maximum slope of the spline (its derivative's range)."""
    s = slopes(spline)
    return float(s.min()), float(s.max())


def lipschitz(spline: NodalSpline) -> float:
    """Lipschitz constant: largest slope magnitude."""
    lo, hi = slope_range(spline)
    return max(abs(lo), abs(hi))


# ---------------------------------------------------------------------------
# ReLU form


def to_relu_form(spline: NodalSpline, prune_tol: float = ZERO_WEIGHT_TOL) -> ReluForm:
    """Convert to intercept/slope/ReLU-weight form.

    Each interior node contributes a ReLU atom weighted by its slope jump;
    atoms with ``|weight| < prune_tol`` are dropped as numerically inactive.
    """
    s = slopes(spline)
    t = spline.grid.t
    a = s[2:] - s[1:-1]
    knots = t[1:-1]
    keep = np.abs(a) >= prune_tol
    b1 = float(s[1])
    b0 = float(spline.f[0] - b1 * t[0])
    return ReluForm(b0=b0, b1=b1, knots=knots[keep], a=a[keep])


def from_relu_form(r: ReluForm, pad: float = 1.0) -> NodalSpline:
    """Sample a ReLU-form spline on its knots plus one pad node per side.

    ``pad > 0`` places the extra nodes at ``knots[0] - pad`` and
    ``knots[-1] + pad``.  A knot-free (affine) form is sampled at
    ``(-pad, +pad)``.
    """
    if pad <= 0:
        raise ValueError("pad must be positive")
    if r.knots.size == 0:
        t = np.array([-pad, pad])
    else:
        t = np.concatenate(([r.knots[0] - pad], r.knots, [r.knots[-1] + pad]))
    grid = Grid(t)
    return NodalSpline(grid, r(t))


# ---------------------------------------------------------------------------
# curves


def canonical_interpolant(curve: PwlCurve) -> NodalSpline:
    """Unique continuous piecewise-linear interpolant of a jump-free curve.

    Knots sit exactly at the interior abscissas; the two boundary segments
    extend linearly outward.
    """
    pts = curve.points
    if pts.shape[0] < 2:
        raise TooFewPoints("need at least two points")
    if np.any(np.diff(pts[:, 0]) <= 0):
        raise JumpNotAllowed("abscissas must be strictly increasing (no jumps)")
    return NodalSpline(Grid(pts[:, 0]), pts[:, 1])


def spline_curve(spline: NodalSpline) -> PwlCurve:
    """Graph of a nodal spline as an ordered point set."""
    return PwlCurve(np.column_stack((spline.grid.t, spline.f)))


def _tail_slopes(xs, ys):
    """Slopes of the first and last non-vertical segments (0 if none)."""
    dx = np.diff(xs)
    nz = np.nonzero(dx > 0)[0]
    if nz.size == 0:
        return 0.0, 0.0
    i, k = nz[0], nz[-1]
    left = (ys[i + 1] - ys[i]) / dx[i]
    right = (ys[k + 1] - ys[k]) / dx[k]
    return left, right


def eval_curve(curve: PwlCurve, x):
    """Evaluate a piecewise-linear curve at scalar or array ``x``.

    Between points: linear interpolation.  Outside the point range: linear
    extrapolation of the boundary segment.  At a jump abscissa the upper
    branch (the later point's ordinate) is returned, so the result is a
    genuine function.
    """
    xs, ys = curve.x, curve.y
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    left_slope, right_slope = _tail_slopes(xs, ys)

    j = np.searchsorted(xs, x, side="right")
    out = np.empty_like(x)

    lo = j == 0
    out[lo] = ys[0] + left_slope * (x[lo] - xs[0])
    hi = j == xs.size
    out[hi] = ys[-1] + right_slope * (x[hi] - xs[-1])

    mid = ~(lo | hi)
    jm = j[mid]
    xm = x[mid]
    x0, y0 = xs[jm - 1], ys[jm - 1]
    x1, y1 = xs[jm], ys[jm]
    # x0 == xm marks an exact hit (upper branch of a jump); otherwise
    # x0 < xm < x1 strictly, so the division is safe.
    exact = x0 == xm
    w = (xm - x0) / np.where(exact, 1.0, x1 - x0)
    out[mid] = np.where(exact, y0, y0 + w * (y1 - y0))

    return float(out[0]) if scalar else out


def invert_monotone(curve: PwlCurve) -> PwlCurve:
    """Swap coordinates of a nondecreasing curve.

    Flat segments become jumps and jumps become flats; on strictly
    increasing curves this is an involution.
    """
    if np.any(np.diff(curve.y) < 0):
        raise NotMonotone("ordinates must be nondecreasing to invert")
    return PwlCurve(curve.points[:, ::-1])


def minimal_curve(curve: PwlCurve, tol: float = ZERO_WEIGHT_TOL) -> PwlCurve:
    """Drop interior points that are neither knots nor jump members.

    A point is removable when the slope into it and out of it agree within
    ``tol``; boundary points and jump pairs are always kept.  Removal runs
    to a fixpoint so the result carries a validated ``minimal=True`` flag.
    """
    pts = [tuple(p) for p in curve.points]
    changed = True
    while changed:
        changed = False
        for i in range(1, len(pts) - 1):
            (x0, y0), (x1, y1), (x2, y2) = pts[i - 1], pts[i], pts[i + 1]
            if x1 == x0 or x1 == x2:
                continue
            s_in = (y1 - y0) / (x1 - x0)
            s_out = (y2 - y1) / (x2 - x1)
            if abs(s_out - s_in) <= tol:
                del pts[i]
                changed = True
                break
    return PwlCurve(np.array(pts), minimal=True)
