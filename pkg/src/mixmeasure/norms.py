"""Mixing norms and energies of scalar fields on the unit torus."""

from __future__ import annotations

from dataclasses import dataclass
from math import gamma, inf, pi, sqrt

import numpy as np

from .field import PeriodicGrid, ScalarField


@dataclass(frozen=True)
class NormReport:
    hminus1: float
    bv: float
    variance: float
    gl_energy: float

    def as_csv_row(self) -> str:
        return f"{self.hminus1!r},{self.bv!r},{self.variance!r},{self.gl_energy!r}"


def fourier_coefficients(rho: ScalarField) -> np.ndarray:
    """Unitary-normalised DFT, ``rho_hat_k = n^-d sum_j rho(x_j) exp(-2 pi i k.x_j)``."""
    return np.fft.fftn(rho.values) / rho.grid.size


def _wavenumber_sq(grid: PeriodicGrid) -> np.ndarray:
    k = np.fft.fftfreq(grid.n, d=1.0 / grid.n)
    grids = np.meshgrid(*([k] * grid.dim), indexing="ij")
    return sum(g**2 for g in grids)


def hminus1(rho: ScalarField) -> float:
    """Homogeneous H^-1 norm, ``sqrt(sum_{k != 0} |rho_hat_k|^2 / (2 pi |k|)^2)``.

    With the ``2 pi`` in the weight this is the dual of ``||grad zeta||_{L^2}``
    on the unit torus.
    """
    if abs(rho.mean()) > 1e-10:
        raise ValueError(f"H^-1 norm needs a mean-zero field, mean is {rho.mean():.3e}")
    c = fourier_coefficients(rho)
    k2 = _wavenumber_sq(rho.grid)
    k2.flat[0] = inf
    return float(sqrt(np.sum(np.abs(c) ** 2 / (4 * pi**2 * k2))))


def centered_gradient(rho: ScalarField) -> np.ndarray:
    h = rho.grid.h
    return np.stack(
        [(np.roll(rho.values, -1, axis=a) - np.roll(rho.values, 1, axis=a)) / (2 * h) for a in range(rho.grid.dim)]
    )


def bv_seminorm(rho: ScalarField) -> float:
    """Total variation of ``rho``.

    Binary fields use interface counting: every cell face across which the
    sign flips contributes a jump of 2 over a face of measure ``h^(d-1)``.
    Other fields use the centred-difference quadrature of ``|grad rho|``.
    """
    grid = rho.grid
    v = rho.values
    if rho.is_binary():
        faces = sum(int(np.count_nonzero(v != np.roll(v, -1, axis=a))) for a in range(grid.dim))
        return 2.0 * faces * grid.h ** (grid.dim - 1)
    g = centered_gradient(rho)
    return float(np.sqrt(np.sum(g**2, axis=0)).mean())


def variance(rho: ScalarField) -> float:
    """Cell average of ``rho^2`` (the L^2 norm squared; 1 for binary fields)."""
    return float(np.mean(rho.values**2))


def gl_energy(rho: ScalarField) -> float:
    """Ginzburg-Landau energy ``int |grad rho|^2 / 2 + (1 - rho^2)^2 / 2``."""
    if np.abs(rho.values).max() > 1.5:
        raise ValueError("Ginzburg-Landau energy expects values in [-1.5, 1.5]")
    g = centered_gradient(rho)
    dens = 0.5 * np.sum(g**2, axis=0) + 0.5 * (1.0 - rho.values**2) ** 2
    return float(dens.mean())


def norm_report(rho: ScalarField) -> NormReport:
    return NormReport(hminus1(rho), bv_seminorm(rho), variance(rho), gl_energy(rho))


def cos_lp_norm(p: float) -> float:
    """``||cos(2 pi x)||_{L^p(0,1)}``; 1 for ``p = inf``."""
    if p == inf:
        return 1.0
    return (gamma((p + 1) / 2) / (sqrt(pi) * gamma(p / 2 + 1))) ** (1.0 / p)


def lp_grad_velocity(u, t: float, p: float, n: int = 128, quadrature: bool = False) -> float:
    """``||grad u(t, .)||_{L^p}`` with the pointwise operator 2-norm of the Jacobian.

    Uses the field's closed form when it has one, unless ``quadrature`` is
    set; otherwise cell-centre quadrature on an ``n``-cell grid.
    """
    if p <= 1:
        raise ValueError(f"p must exceed 1, got {p}")
    if u.closed_form_lp_grad is not None and not quadrature:
        return float(u.closed_form_lp_grad(t, p))
    grid = PeriodicGrid(u.dim, n)
    jac = u.jacobian(t, grid.points())
    s = np.linalg.norm(jac, ord=2, axis=(-2, -1))
    if p == inf:
        return float(s.max())
    return float(np.mean(s**p) ** (1.0 / p))
