"""Shared random generators for the property suites.

Everything draws from an explicit ``numpy`` Generator so failures are
reproducible from the printed seed.
"""

import numpy as np
import pytest

from splinetool import NodalSpline, SlopeBounds, from_slopes, make_grid
from splinetool.fit import make_problem


def random_grid(rng, n_min=3, n_max=9, start_lo=-3.0, gap_lo=0.2, gap_hi=1.2):
    n = int(rng.integers(n_min, n_max + 1))
    start = rng.uniform(start_lo, start_lo + 1.0)
    gaps = rng.uniform(gap_lo, gap_hi, n - 1)
    return make_grid(start + np.concatenate(([0.0], np.cumsum(gaps))))


def random_spline(rng, n_min=3, n_max=9, scale=2.0):
    grid = random_grid(rng, n_min, n_max)
    return NodalSpline(grid, rng.normal(0.0, scale, grid.n))


def random_nondecreasing_spline(rng, s_cap=3.0, n_min=3, n_max=9, flat_prob=0.3):
    """Nondecreasing spline whose boundary segments rise strictly.

    Interior segments are flat with probability ``flat_prob`` so that the
    graph-inversion path with jumps stays exercised.
    """
    grid = random_grid(rng, n_min, n_max)
    nseg = grid.n - 1
    seg = rng.uniform(0.05, s_cap, nseg)
    if nseg > 2:
        flats = rng.random(nseg - 2) < flat_prob
        seg[1:-1] = np.where(flats, 0.0, seg[1:-1])
    s = np.concatenate(([seg[0]], seg))
    return from_slopes(grid, s, float(rng.uniform(-1.0, 1.0)))


def random_monotone_convex_spline(rng, n_min=3, n_max=9):
    """Slopes sorted ascending with a common sign (possibly zero head)."""
    grid = random_grid(rng, n_min, n_max)
    nseg = grid.n - 1
    seg = np.sort(rng.uniform(0.0, 3.0, nseg))
    if rng.random() < 0.5:
        seg = np.sort(-seg)  # decreasing convex branch
    s = np.concatenate(([seg[0]], seg))
    return from_slopes(grid, s, float(rng.uniform(-1.0, 1.0)))


def random_nonmonotone_spline(rng, n_min=3, n_max=9, margin=0.1):
    """Spline whose slopes take both signs with a safety margin."""
    grid = random_grid(rng, n_min, n_max)
    nseg = grid.n - 1
    while True:
        seg = rng.uniform(-2.0, 2.0, nseg)
        if seg.min() <= -margin and seg.max() >= margin:
            break
    s = np.concatenate(([seg[0]], seg))
    return from_slopes(grid, s, float(rng.uniform(-1.0, 1.0)))


def random_bounds(rng, inf_prob=0.3):
    while True:
        lo = -np.inf if rng.random() < inf_prob else rng.uniform(-2.5, 1.5)
        hi = np.inf if rng.random() < inf_prob else rng.uniform(-1.5, 2.5)
        if lo < hi:
            return SlopeBounds(lo, hi)


def random_fit_problem(rng, m_max=6, n_max=8, lams=(0.0, 0.1, 1.0, 10.0)):
    m = int(rng.integers(2, m_max + 1))
    x = np.sort(rng.uniform(-3.0, 3.0, m))
    while np.any(np.diff(x) < 1e-3):
        x = np.sort(rng.uniform(-3.0, 3.0, m))
    y = rng.normal(0.0, 2.0, m)
    n = int(rng.integers(3, n_max + 1))
    start = x[0] - rng.uniform(0.2, 1.0)
    end = x[-1] + rng.uniform(0.2, 1.0)
    gaps = rng.uniform(0.2, 1.5, n - 1)
    t = np.concatenate(([0.0], np.cumsum(gaps)))
    t = start + t * (end - start) / t[-1]
    return make_problem(
        np.column_stack((x, y)),
        grid=t,
        lam=float(rng.choice(lams)),
        bounds=random_bounds(rng),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
