"""Weighted local maximal functions and empirical checks of their estimates.

``M_r^tau f(x) = sup_{0<q<r} |B_q|^-1 int_{B_q(0)} |z|^tau f(x + z) dz``

On the grid the supremum runs over the radius ladder ``q = 2h, 3h, ...,
floor(r/h) h`` and a cell belongs to ``B_q(x)`` when its centre does.  The
limit ``q -> 0`` is included too: it contributes ``f(x)`` when ``tau = 0``
and nothing otherwise, so the classical function dominates ``f``.  Ball
sums are accumulated shell by shell with direct summation, so constant
inputs give exact results.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .field import PeriodicGrid, ScalarField, fourier_eval, spectral_gradient


@dataclass(frozen=True)
class MaxFnParams:
    r: float
    tau: float

    def __post_init__(self):
        if not 0.0 < self.r <= 1.0:
            raise ValueError(f"r must lie in (0, 1], got {self.r}")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")

    def ladder_top(self, grid: PeriodicGrid) -> int:
        top = int(np.floor(self.r / grid.h + 1e-9))
        if top < 2:
            raise ValueError(f"r={self.r} under-resolved: need r >= 2h = {2 * grid.h}")
        return top


def _shells(dim: int, top: int) -> list[list[tuple[int, ...]]]:
    """Integer offsets grouped by shell: shell j holds ``j-1 < |o| <= j``."""
    rng = np.arange(-top, top + 1)
    offs = np.stack(np.meshgrid(*([rng] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    r2 = np.sum(offs**2, axis=1)
    shells: list[list[tuple[int, ...]]] = [[] for _ in range(top + 1)]
    for o, s in zip(offs, r2):
        if s > top * top:
            continue
        j = int(np.ceil(np.sqrt(s) - 1e-12))
        # correct the float ceiling against exact integer comparisons
        while j * j < s:
            j += 1
        while j > 0 and (j - 1) ** 2 >= s:
            j -= 1
        shells[j].append(tuple(int(c) for c in o))
    return shells


def ball_averages(f: ScalarField, params: MaxFnParams) -> np.ndarray:
    """Weighted ball averages for every ladder radius, shape ``(top - 1, *grid.shape)``.

    Entry ``j - 2`` is the average over the ball of radius ``j h``.
    """
    grid = f.grid
    top = params.ladder_top(grid)
    shells = _shells(grid.dim, top)
    padded = np.pad(f.values, top, mode="wrap")
    n = grid.n

    def view(o):
        sl = tuple(slice(top + c, top + c + n) for c in o)
        return padded[sl]

    acc = np.zeros(grid.shape)
    count = 0
    out = []
    for j in range(top + 1):
        for o in shells[j]:
            if params.tau == 0.0:
                acc += view(o)
            else:
                dist = float(np.sqrt(sum(c * c for c in o))) * grid.h
                if dist > 0.0:
                    acc += dist**params.tau * view(o)
            count += 1
        if j >= 2:
            out.append(acc / count)
    return np.stack(out)


def weighted_max_fn(f: ScalarField, params: MaxFnParams) -> ScalarField:
    """Weighted local maximal function ``M_r^tau f`` at every cell centre."""
    if np.any(f.values < 0):
        raise ValueError("maximal function expects a nonnegative field")
    M = ball_averages(f, params).max(axis=0)
    if params.tau == 0.0:
        M = np.maximum(M, f.values)
    return f.with_values(M)


def max_fn_ladder(f: ScalarField, tau: float, radii) -> dict[float, ScalarField]:
    """``M_r^tau f`` for several radii from a single pass at the largest radius."""
    if np.any(f.values < 0):
        raise ValueError("maximal function expects a nonnegative field")
    radii = sorted(radii)
    big = MaxFnParams(radii[-1], tau)
    avgs = ball_averages(f, big)
    running = np.maximum.accumulate(avgs, axis=0)
    if tau == 0.0:
        running = np.maximum(running, f.values)
    out = {}
    for r in radii:
        top = MaxFnParams(r, tau).ladder_top(f.grid)
        out[r] = f.with_values(running[top - 2])
    return out


def _interp_linear(field: ScalarField, points: np.ndarray) -> np.ndarray:
    """Periodic multilinear interpolation of cell-centred values."""
    grid = field.grid
    pos = points / grid.h - 0.5
    base = np.floor(pos).astype(int)
    frac = pos - base
    out = np.zeros(len(points))
    for corner in np.ndindex(*([2] * grid.dim)):
        w = np.ones(len(points))
        idx = []
        for a, c in enumerate(corner):
            w *= frac[:, a] if c else 1.0 - frac[:, a]
            idx.append((base[:, a] + c) % grid.n)
        out += w * field.values[tuple(idx)]
    return out


def sample_pairs(grid: PeriodicGrid, r: float, samples: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Point pairs with ``h <= |x - y| <= r``, ``y`` uniform in the annulus around ``x``."""
    rng = np.random.default_rng(seed)
    x = rng.random((samples, grid.dim))
    if grid.dim == 1:
        dist = rng.uniform(grid.h, r, samples)
        step = dist * rng.choice([-1.0, 1.0], samples)
        y = x + step[:, None]
    else:
        # uniform in the annulus h <= |z| <= r
        dist = np.sqrt(rng.uniform(grid.h**2, r**2, samples))
        ang = rng.uniform(0.0, 2 * np.pi, samples)
        y = x + dist[:, None] * np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    return x, y % 1.0


def check_pointwise_bound(
    f: ScalarField, theta: float, r: float, samples: int = 2000, seed: int = 0
) -> float:
    """Empirical constant of the Hoelder-type maximal-function bound.

    Returns the largest ``|f(x) - f(y)| / (|x-y|^theta (M g(x) + M g(y)))``
    over sampled pairs, where ``g = |grad f|`` and ``M = M_r^{1 - theta}``.
    ``f`` must be band-limited: point values and the gradient are taken from
    its trigonometric interpolant.  Pairs closer than ``h`` are never drawn.
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError(f"theta must lie in (0, 1], got {theta}")
    if samples < 100:
        raise ValueError("need at least 100 samples")
    grid = f.grid
    grad = np.sqrt(np.sum(spectral_gradient(f) ** 2, axis=0))
    M = weighted_max_fn(f.with_values(grad), MaxFnParams(r, 1.0 - theta))
    x, y = sample_pairs(grid, r, samples, seed)
    num = np.abs(fourier_eval(f, x) - fourier_eval(f, y))
    d = np.abs(x - y)
    d = np.sqrt(np.sum(np.minimum(d, 1.0 - d) ** 2, axis=-1))
    den = d**theta * (_interp_linear(M, x) + _interp_linear(M, y))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(den > 0, num / den, 0.0)
    # a vanishing numerator counts as zero whatever the denominator
    ratio[num <= 1e-13 * max(1.0, np.abs(f.values).max())] = 0.0
    return float(ratio.max())


def check_l1_bound(f: ScalarField, tau: float, r: float) -> float:
    """``avg(M_r^tau f) / (r^tau avg(f))``; 0 (with a warning) when ``f == 0``."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    mean = f.mean()
    if mean == 0.0:
        warnings.warn("check_l1_bound: f vanishes identically, ratio undefined", stacklevel=2)
        return 0.0
    M = weighted_max_fn(f, MaxFnParams(r, tau))
    return M.mean() / (r**tau * mean)


def l1_ratios(f: ScalarField, tau: float, radii) -> dict[float, float]:
    """:func:`check_l1_bound` for several radii in one pass."""
    mean = f.mean()
    if mean == 0.0:
        warnings.warn("l1_ratios: f vanishes identically, ratio undefined", stacklevel=2)
        return {r: 0.0 for r in radii}
    return {r: M.mean() / (r**tau * mean) for r, M in max_fn_ladder(f, tau, radii).items()}


def check_classical_lp_bound(f: ScalarField, p: float, r: float) -> float:
    """``||M_r^0 |f| ||_{L^p} / ||f||_{L^p}`` on the grid."""
    if p <= 1:
        raise ValueError(f"p must exceed 1, got {p}")
    af = f.with_values(np.abs(f.values))
    M = weighted_max_fn(af, MaxFnParams(r, 0.0))
    if np.isinf(p):
        return float(M.values.max() / af.values.max())
    num = np.mean(M.values**p) ** (1.0 / p)
    den = np.mean(af.values**p) ** (1.0 / p)
    return float(num / den)
