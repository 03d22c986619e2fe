"""Piecewise-quadratic scalar potentials tied to linear-spline maps.

A potential here is a continuous, piecewise-quadratic function ``phi`` with
``phi(0) = 0``, stored as quadratic coefficients per interval together with
its (possibly discontinuous) piecewise-linear derivative.  Two constructions
are provided:

* ``potential_from_derivative``: the unique potential whose derivative is a
  given spline; its convexity class follows the spline's minimum slope.
* ``potential_from_prox``: the unique potential whose proximal map is a
  given nondecreasing spline, built by inverting the spline's graph and
  subtracting the identity.  Flat segments of the spline turn into jumps of
  the potential's derivative (kinks of ``phi``), exactly as with the
  absolute value and soft thresholding.

``numeric_prox_oracle`` is a deliberately naive grid minimizer used as the
independent reference when testing the constructive routes.
"""

from dataclasses import dataclass

import numpy as np

from .constraints import classify
from .errors import LambdaOutOfRange, NotNondecreasing, WeakConvexityTooLarge
from .pwl import (
    NodalSpline,
    PwlCurve,
    ZERO_WEIGHT_TOL,
    eval_curve,
    minimal_curve,
    slope_range,
    spline_curve,
)

CONTINUITY_TOL = 1e-10
CONSISTENCY_TOL = 1e-9


@dataclass(frozen=True)
class Convexity:
    """Convexity class: ``phi'' >= rho`` (strong), ``>= 0`` (convex), or
    ``>= -rho`` with genuinely negative curvature somewhere (weak)."""

    kind: str
    rho: float = 0.0

    def __post_init__(self):
        if self.kind not in ("convex", "weak", "strong"):
            raise ValueError(f"unknown convexity kind {self.kind!r}")
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")
        if self.kind == "convex" and self.rho != 0.0:
            raise ValueError("plain convexity carries rho = 0")


@dataclass(frozen=True, eq=False)
class PwQuadPotential:
    """Continuous piecewise-quadratic potential with ``phi(0) = 0``.

    ``pieces[j] = (c, b, a)`` encodes ``c + b*y + (a/2)*y**2`` on the j-th
    interval of the breakpoint partition (piece 0 is the left tail).  The
    derivative curve must reproduce ``b + a*y`` on every open interval; its
    jumps, if any, point upward (subdifferential monotonicity).
    """

    breakpoints: np.ndarray
    pieces: np.ndarray
    derivative_curve: PwlCurve
    convexity: Convexity

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float).reshape(-1)
        pieces = np.asarray(self.pieces, dtype=float)
        if pieces.ndim != 2 or pieces.shape[1] != 3:
            raise ValueError(f"pieces must be (K+1, 3), got {pieces.shape}")
        if pieces.shape[0] != bp.size + 1:
            raise ValueError("need exactly one more piece than breakpoints")
        if bp.size and np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        bp = bp.copy()
        bp.setflags(write=False)
        pieces = pieces.copy()
        pieces.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "pieces", pieces)
        self._validate()

    def _validate(self):
        bp, pieces = self.breakpoints, self.pieces
        if abs(eval_potential(self, 0.0)) > 1e-12:
            raise ValueError("potential must vanish at the origin")
        c, b, a = pieces.T
        if bp.size:
            left = c[:-1] + b[:-1] * bp + 0.5 * a[:-1] * bp**2
            right = c[1:] + b[1:] * bp + 0.5 * a[1:] * bp**2
            scale = 1.0 + np.abs(left)
            if np.any(np.abs(left - right) > CONTINUITY_TOL * scale):
                raise ValueError("potential is discontinuous at a breakpoint")
            jumps = (b[1:] + a[1:] * bp) - (b[:-1] + a[:-1] * bp)
            if np.any(jumps < -CONSISTENCY_TOL):
                raise ValueError("derivative jumps must point upward")
        # derivative curve must agree with the analytic slope of each piece
        probes = _interval_probes(bp)
        for j, y in enumerate(probes):
            want = b[j] + a[j] * y
            got = eval_curve(self.derivative_curve, y)
            if abs(got - want) > CONSISTENCY_TOL * (1.0 + abs(want)):
                raise ValueError(
                    f"derivative curve disagrees with piece {j} at y={y}"
                )
        min_curv = float(a.min())
        kind, rho = self.convexity.kind, self.convexity.rho
        if kind == "convex" and min_curv < -CONSISTENCY_TOL:
            raise ValueError("declared convex but curvature is negative")
        if kind == "strong" and abs(min_curv - rho) > CONSISTENCY_TOL * (1 + rho):
            raise ValueError("strong-convexity modulus inconsistent with pieces")
        if kind == "weak" and abs(max(0.0, -min_curv) - rho) > CONSISTENCY_TOL * (
            1 + rho
        ):
            raise ValueError("weak-convexity modulus inconsistent with pieces")

    @property
    def rho_weak(self) -> float:
        return self.convexity.rho if self.convexity.kind == "weak" else 0.0

    def __call__(self, y):
        return eval_potential(self, y)


def _interval_probes(bp):
    """One probe point inside each interval of the partition."""
    if bp.size == 0:
        return np.array([0.0])
    inner = 0.5 * (bp[:-1] + bp[1:])
    return np.concatenate(([bp[0] - 1.0], inner, [bp[-1] + 1.0]))


def eval_potential(potential: PwQuadPotential, y):
    """Evaluate the potential at scalar or array ``y`` of any shape."""
    y = np.asarray(y, dtype=float)
    j = np.searchsorted(potential.breakpoints, y, side="right")
    c, b, a = np.moveaxis(potential.pieces[j], -1, 0)
    out = c + b * y + 0.5 * a * y * y
    if out.ndim == 0:
        return float(out)
    return out


def eval_potential_derivative(potential: PwQuadPotential, y):
    """Derivative of the potential; at kinks the upper branch is returned."""
    return eval_curve(potential.derivative_curve, y)


# ---------------------------------------------------------------------------
# construction


def _pieces_from_derivative_curve(dcurve: PwlCurve):
    """Integrate a piecewise-linear derivative into quadratic pieces.

    Breakpoints are the distinct abscissas of the derivative curve; the
    integration constant of the piece containing the origin is pinned so
    that the potential vanishes at 0, and continuity propagates the rest.
    Jumps of the derivative contribute no area, so the potential stays
    continuous (with a kink).  Redundant breakpoints (equal neighboring
    pieces) are merged away.
    """
    xs, ys = dcurve.x, dcurve.y
    bp = np.unique(xs)
    slopes_ab = []  # (b, a) per piece, len(bp) + 1 entries

    left_slope, right_slope = _curve_tail_slopes(xs, ys)
    slopes_ab.append((ys[0] - left_slope * xs[0], left_slope))
    for i in range(len(xs) - 1):
        dx = xs[i + 1] - xs[i]
        if dx > 0:
            a = (ys[i + 1] - ys[i]) / dx
            slopes_ab.append((ys[i] - a * xs[i], a))
    slopes_ab.append((ys[-1] - right_slope * xs[-1], right_slope))
    if len(slopes_ab) != bp.size + 1:
        raise ValueError("derivative curve does not partition the line")

    ba = np.array(slopes_ab)
    pieces = np.zeros((bp.size + 1, 3))
    pieces[:, 1] = ba[:, 0]
    pieces[:, 2] = ba[:, 1]

    def poly(j, y):
        c, b, a = pieces[j]
        return c + b * y + 0.5 * a * y * y

    j0 = int(np.searchsorted(bp, 0.0, side="right"))
    pieces[j0, 0] = 0.0
    for j in range(j0 + 1, bp.size + 1):
        beta = bp[j - 1]
        pieces[j, 0] = poly(j - 1, beta) - (
            pieces[j, 1] * beta + 0.5 * pieces[j, 2] * beta * beta
        )
    for j in range(j0 - 1, -1, -1):
        beta = bp[j]
        pieces[j, 0] = poly(j + 1, beta) - (
            pieces[j, 1] * beta + 0.5 * pieces[j, 2] * beta * beta
        )

    return _merge_equal_pieces(bp, pieces)


def _curve_tail_slopes(xs, ys):
    dx = np.diff(xs)
    nz = np.nonzero(dx > 0)[0]
    if nz.size == 0:
        raise ValueError("derivative curve is a single vertical jump")
    i, k = nz[0], nz[-1]
    return (ys[i + 1] - ys[i]) / dx[i], (ys[k + 1] - ys[k]) / dx[k]


def _merge_equal_pieces(bp, pieces):
    keep = np.ones(bp.size, dtype=bool)
    for j in range(bp.size):
        if np.array_equal(pieces[j], pieces[j + 1]):
            keep[j] = False
    if keep.all():
        return bp, pieces
    piece_keep = np.concatenate(([True], keep))
    return bp[keep], pieces[piece_keep]


def potential_from_derivative(spline: NodalSpline) -> PwQuadPotential:
    """Unique potential whose derivative equals the spline, zero at 0.

    Convexity follows the smallest slope: nonnegative slopes give a convex
    potential, strictly positive ones a strongly convex potential, and a
    negative minimum slope a weakly convex one with that modulus.
    """
    dcurve = minimal_curve(spline_curve(spline))
    bp, pieces = _pieces_from_derivative_curve(dcurve)
    lo, _ = slope_range(spline)
    if lo > 0:
        conv = Convexity("strong", lo)
    elif lo == 0:
        conv = Convexity("convex")
    else:
        conv = Convexity("weak", -lo)
    return PwQuadPotential(bp, pieces, dcurve, conv)


def potential_from_prox(spline: NodalSpline) -> PwQuadPotential:
    """Unique potential whose proximal map equals the nondecreasing spline.

    The derivative is obtained by inverting the spline's graph (swapping
    coordinates of its minimal point set) and subtracting the identity.
    The spline's boundary segments must rise strictly: a flat tail would
    bound the range of the map, and the matching potential then has an
    infinite wall that a finite quadratic piece cannot encode.
    """
    if not classify(spline).nondecreasing:
        raise NotNondecreasing("prox construction needs a nondecreasing spline")
    curve = minimal_curve(spline_curve(spline))
    x, y = curve.x, curve.y
    if y[1] - y[0] <= ZERO_WEIGHT_TOL * (x[1] - x[0]) or y[-1] - y[-2] <= (
        ZERO_WEIGHT_TOL * (x[-1] - x[-2])
    ):
        raise ValueError(
            "boundary segments must rise strictly; a flat tail has no finite "
            "piecewise-quadratic potential"
        )
    dcurve = PwlCurve(np.column_stack((y, x - y)))
    bp, pieces = _pieces_from_derivative_curve(dcurve)
    _, hi = slope_range(spline)
    if hi < 1:
        conv = Convexity("strong", 1.0 / hi - 1.0)
    elif hi == 1:
        conv = Convexity("convex")
    else:
        conv = Convexity("weak", 1.0 - 1.0 / hi)
    return PwQuadPotential(bp, pieces, dcurve, conv)


def reweight_prox(curve: PwlCurve, lam: float) -> PwlCurve:
    """Proximal map of the lambda-scaled potential, directly on points.

    Maps each point ``(x, y)`` to ``(lam*x + (1-lam)*y, y)``.  When the
    curve has slopes above one, ``lam`` must stay strictly below
    ``s_max / (s_max - 1)``; at the bound a segment collapses to a jump and
    the result stops being a function.
    """
    if np.any(np.diff(curve.y) < 0):
        raise NotNondecreasing("reweighting needs a nondecreasing curve")
    if lam <= 0:
        raise LambdaOutOfRange(f"lambda must be positive, got {lam}")
    dx = np.diff(curve.x)
    dy = np.diff(curve.y)
    seg = np.where(dx > 0, dy / np.where(dx > 0, dx, 1.0), np.inf)
    s_max = float(seg.max()) if seg.size else 0.0
    if s_max > 1.0:
        lam_max = s_max / (s_max - 1.0) if np.isfinite(s_max) else 1.0
        if lam >= lam_max:
            raise LambdaOutOfRange(
                f"lambda={lam} >= {lam_max}: a segment of slope {s_max} "
                "collapses to a jump and the reweighted map is no longer a "
                "function"
            )
    new_x = lam * curve.x + (1.0 - lam) * curve.y
    return PwlCurve(np.column_stack((new_x, curve.y)))


def scale_potential(potential: PwQuadPotential, lam: float) -> PwQuadPotential:
    """The potential multiplied by ``lam > 0``, with its class recomputed."""
    if lam <= 0:
        raise LambdaOutOfRange(f"lambda must be positive, got {lam}")
    pieces = potential.pieces * lam
    dcurve = PwlCurve(
        np.column_stack((potential.derivative_curve.x, lam * potential.derivative_curve.y))
    )
    min_curv = float(pieces[:, 2].min())
    if min_curv > 0:
        conv = Convexity("strong", min_curv)
    elif min_curv == 0:
        conv = Convexity("convex")
    else:
        conv = Convexity("weak", -min_curv)
    return PwQuadPotential(potential.breakpoints, pieces, dcurve, conv)


# ---------------------------------------------------------------------------
# brute-force prox


def default_search_halfwidth(potential: PwQuadPotential, x: float) -> float:
    """Window guaranteed wide enough for the prox of mildly weak potentials."""
    return (abs(x) + 10.0) / (1.0 - potential.rho_weak)


def numeric_prox_oracle(
    potential: PwQuadPotential,
    x: float,
    search_halfwidth: float | None = None,
    grid_step: float = 1e-4,
) -> float:
    """Proximal map by brute-force minimization of the prox objective.

    Minimizes ``0.5*(x - z)**2 + phi(z)`` over a symmetric window around
    ``x``: a coarse localization grid, a refinement grid of spacing
    ``grid_step`` (valid because the objective is strictly convex for
    weak-convexity modulus below one), and one Newton step on the active
    quadratic piece.  Accuracy is no worse than ``grid_step``.
    """
    if grid_step <= 0:
        raise ValueError("grid_step must be positive")
    if potential.rho_weak >= 1.0:
        raise WeakConvexityTooLarge(
            f"rho={potential.rho_weak} >= 1: prox objective not strictly convex"
        )
    hw = search_halfwidth if search_halfwidth is not None else (
        default_search_halfwidth(potential, x)
    )

    def objective(z):
        return 0.5 * (x - z) ** 2 + eval_potential(potential, z)

    # coarse localization; widen if the minimum sits on the window edge
    for _ in range(60):
        zs = np.linspace(x - hw, x + hw, 2001)
        k = int(np.argmin(objective(zs)))
        if 0 < k < zs.size - 1:
            break
        hw *= 2.0
    lo, hi = zs[max(k - 1, 0)], zs[min(k + 1, zs.size - 1)]

    fine = np.arange(lo, hi + grid_step, grid_step)
    k = int(np.argmin(objective(fine)))
    z = float(fine[k])

    # one Newton step on the active piece
    j = int(np.searchsorted(potential.breakpoints, z, side="right"))
    _, b, a = potential.pieces[j]
    if a > -1.0:
        z_new = (x - b) / (1.0 + a)
        piece_lo = potential.breakpoints[j - 1] if j > 0 else -np.inf
        piece_hi = (
            potential.breakpoints[j] if j < potential.breakpoints.size else np.inf
        )
        z_new = min(max(z_new, piece_lo), piece_hi)
        if objective(z_new) <= objective(z):
            z = float(z_new)
    return z
