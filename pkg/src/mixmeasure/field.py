"""Periodic grids, scalar fields and the generators used as initial data.

Fields are cell-centred samples on the unit torus ``[0, 1)^d`` with
``d in {1, 2}``.  Cell ``i`` along an axis sits at ``x_i = (i + 1/2) h``.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"MXB1"


@dataclass(frozen=True)
class PeriodicGrid:
    dim: int
    n: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.n < 4:
            raise ValueError(f"need at least 4 cells per axis, got {self.n}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    def axis_coords(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) / self.n

    def mesh(self) -> list[np.ndarray]:
        """Coordinate arrays, one per axis, each of shape ``self.shape``."""
        x = self.axis_coords()
        return list(np.meshgrid(*([x] * self.dim), indexing="ij"))

    def points(self) -> np.ndarray:
        """Cell centres as an array of shape ``(size, dim)`` in row-major order."""
        return np.stack([m.ravel() for m in self.mesh()], axis=-1)


@dataclass(frozen=True)
class ScalarField:
    grid: PeriodicGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def mean(self) -> float:
        return float(self.values.mean())

    def is_binary(self) -> bool:
        return bool(np.all(np.abs(self.values) == 1.0))

    def shifted(self, shift: int | tuple[int, ...]) -> ScalarField:
        """Cyclic translation by whole cells."""
        axes = tuple(range(self.grid.dim))
        if isinstance(shift, int):
            shift = (shift,) + (0,) * (self.grid.dim - 1)
        return ScalarField(self.grid, np.roll(self.values, shift, axis=axes))

    def with_values(self, values: np.ndarray) -> ScalarField:
        return ScalarField(self.grid, values)


@dataclass(frozen=True)
class DensityPair:
    """Normalised positive and negative parts of a signed field.

    ``plus_mass`` and ``minus_mass`` are the integrals of ``(rho - m)_+`` and
    ``(rho - m)_-`` before normalisation, so that
    ``rho = plus_mass * plus - minus_mass * minus + m``.
    """

    plus: ScalarField
    minus: ScalarField
    plus_mass: float
    minus_mass: float
    m: float = 0.0

    def recombine(self) -> ScalarField:
        v = self.plus_mass * self.plus.values - self.minus_mass * self.minus.values + self.m
        return self.plus.with_values(v)


def _check_period(grid: PeriodicGrid, k: int) -> None:
    if k < 1:
        raise ValueError("k must be a positive integer")
    if grid.n % (2 * k):
        raise ValueError(f"2k={2 * k} must divide n={grid.n} so interfaces fall on cell faces")


def make_stripes(grid: PeriodicGrid, k: int, axis: int = 0) -> ScalarField:
    """Square wave of period ``1/k`` along ``axis``: +1 on the first half period."""
    _check_period(grid, k)
    if not 0 <= axis < grid.dim:
        raise ValueError(f"axis {axis} out of range for dim {grid.dim}")
    width = grid.n // (2 * k)
    idx = np.arange(grid.n)
    profile = np.where((idx // width) % 2 == 0, 1.0, -1.0)
    shape = [1] * grid.dim
    shape[axis] = grid.n
    return ScalarField(grid, np.broadcast_to(profile.reshape(shape), grid.shape))


def make_checkerboard(grid: PeriodicGrid, k: int) -> ScalarField:
    """k x k full periods of a +/-1 checkerboard (blocks of side ``1/(2k)``)."""
    if grid.dim != 2:
        raise ValueError("checkerboard requires dim=2")
    _check_period(grid, k)
    width = grid.n // (2 * k)
    b = np.arange(grid.n) // width
    parity = (b[:, None] + b[None, :]) % 2
    return ScalarField(grid, np.where(parity == 0, 1.0, -1.0))


def _mode_indices(grid: PeriodicGrid, cutoff: int) -> np.ndarray:
    ks = np.arange(-cutoff, cutoff + 1)
    return np.stack(np.meshgrid(*([ks] * grid.dim), indexing="ij"), axis=-1).reshape(-1, grid.dim)


def random_smooth_field(grid: PeriodicGrid, seed: int, cutoff: int) -> ScalarField:
    """Real band-limited random field with modes ``0 < |k|_inf <= cutoff``.

    The coefficients are drawn independently of ``grid.n``, so the same seed
    samples the same continuous function at every resolution.  The result is
    mean-zero with unit variance.
    """
    if not 0 < cutoff < grid.n / 2:
        raise ValueError(f"cutoff must lie in (0, n/2), got {cutoff}")
    rng = np.random.default_rng(seed)
    modes = _mode_indices(grid, cutoff)
    coef = rng.standard_normal(len(modes)) + 1j * rng.standard_normal(len(modes))
    spec = np.zeros(grid.shape, dtype=complex)
    for k, c in zip(modes, coef):
        if not np.any(k):
            continue
        # evaluate at cell centres (j + 1/2) h, not at j h
        spec[tuple(k % grid.n)] += c * np.exp(1j * np.pi * k.sum() * grid.h)
    # real part of the spectrum's synthesis is band-limited with the same cutoff
    values = np.fft.ifftn(spec).real
    values -= values.mean()
    values /= np.sqrt(np.mean(values**2))
    return ScalarField(grid, values)


def make_random_binary(grid: PeriodicGrid, seed: int, cutoff_mode: int = 4) -> ScalarField:
    """Threshold a band-limited random field so exactly half the cells are +1."""
    g = random_smooth_field(grid, seed, cutoff_mode).values.ravel()
    if grid.size % 2:
        raise ValueError("an odd number of cells cannot be balanced")
    # ranking by value: the upper half becomes +1, ties broken by cell index
    order = np.argsort(g, kind="stable")
    out = np.full(grid.size, -1.0)
    out[order[grid.size // 2 :]] = 1.0
    return ScalarField(grid, out.reshape(grid.shape))


def split_signed(rho: ScalarField, m: float = 0.0) -> DensityPair:
    """Normalised parts ``(rho - m)_+ / Z_+`` and ``(rho - m)_- / Z_-``.

    For a binary mean-zero field and ``m = 0`` this gives
    ``plus = 2 max(rho, 0)`` and ``minus = -2 min(rho, 0)``.
    """
    if not -1.0 < m < 1.0:
        raise ValueError(f"m must lie in (-1, 1), got {m}")
    if abs(rho.mean() - m) > 1e-10:
        raise ValueError(f"field mean {rho.mean():.3e} differs from m={m}")
    d = rho.values - m
    pos = np.maximum(d, 0.0)
    neg = np.maximum(-d, 0.0)
    zp, zm = float(pos.mean()), float(neg.mean())
    if zp == 0.0 or zm == 0.0:
        raise ValueError("field is uniform: one of the signed parts has zero mass")
    return DensityPair(rho.with_values(pos / zp), rho.with_values(neg / zm), zp, zm, m)


def mollifier_kernel(grid: PeriodicGrid, R: float) -> np.ndarray:
    """Standard bump ``exp(-1/(1-|z/R|^2))`` sampled at cell offsets, unit sum.

    The kernel is laid out with the zero offset at index 0 (FFT order).
    """
    offsets = np.minimum(np.arange(grid.n), grid.n - np.arange(grid.n)) * grid.h
    grids = np.meshgrid(*([offsets] * grid.dim), indexing="ij")
    s = np.sqrt(sum(g**2 for g in grids)) / R
    k = np.zeros(grid.shape)
    inside = s < 1.0
    k[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return k / k.sum()


def mollify(rho: ScalarField, R: float) -> ScalarField:
    """Periodic convolution with a radially symmetric bump of radius ``R``."""
    grid = rho.grid
    if not 0.0 < R < 0.5:
        raise ValueError(f"R must lie in (0, 1/2), got {R}")
    if R < 2 * grid.h:
        raise ValueError(f"R={R} under-resolved: need R >= 2h = {2 * grid.h}")
    k = mollifier_kernel(grid, R)
    out = np.fft.ifftn(np.fft.fftn(rho.values) * np.fft.fftn(k)).real
    return rho.with_values(out)


def coarsen(rho: ScalarField, factor: int) -> ScalarField:
    """Aggregate ``factor**d`` blocks of cells by averaging."""
    if factor == 1:
        return rho
    grid = rho.grid
    if grid.n % factor:
        raise ValueError(f"factor {factor} does not divide n={grid.n}")
    m = grid.n // factor
    shape = []
    for _ in range(grid.dim):
        shape += [m, factor]
    v = rho.values.reshape(shape).mean(axis=tuple(range(1, 2 * grid.dim, 2)))
    return ScalarField(PeriodicGrid(grid.dim, m), v)


def spectral_gradient(rho: ScalarField) -> np.ndarray:
    """Exact gradient of the trigonometric interpolant, shape ``(dim, *grid.shape)``."""
    grid = rho.grid
    k = np.fft.fftfreq(grid.n, d=1.0 / grid.n)
    if grid.n % 2 == 0:
        k[grid.n // 2] = 0.0  # Nyquist mode has no real derivative
    spec = np.fft.fftn(rho.values)
    out = []
    for a in range(grid.dim):
        shape = [1] * grid.dim
        shape[a] = grid.n
        out.append(np.fft.ifftn(spec * (2j * np.pi * k.reshape(shape))).real)
    return np.stack(out)


def fourier_eval(rho: ScalarField, points: np.ndarray) -> np.ndarray:
    """Evaluate the trigonometric interpolant of ``rho`` at arbitrary points.

    Exact for band-limited fields whose cutoff is below n/2.  ``points`` has
    shape ``(m, dim)``.
    """
    grid = rho.grid
    points = np.atleast_2d(np.asarray(points, dtype=float))
    spec = np.fft.fftn(rho.values) / grid.size
    k = np.fft.fftfreq(grid.n, d=1.0 / grid.n)
    idx = np.nonzero(np.abs(spec) > 1e-14 * np.abs(spec).max())
    coef = spec[idx]
    kk = np.stack([k[i] for i in idx], axis=-1)
    # the grid is shifted by h/2: the sample at index j sits at (j + 1/2) h
    phase = np.exp(2j * np.pi * (points - 0.5 * grid.h) @ kk.T)
    return (phase @ coef).real


def write_field(path: str | Path, rho: ScalarField) -> None:
    """Write the MXB1 binary format: magic, <u32 dim, <u32 n, float64 LE row-major."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", rho.grid.dim, rho.grid.n))
        fh.write(np.ascontiguousarray(rho.values, dtype="<f8").tobytes())


def read_field(path: str | Path) -> ScalarField:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not an MXB1 field file")
    dim, n = struct.unpack("<II", data[4:12])
    grid = PeriodicGrid(dim, n)
    body = data[12:]
    if len(body) != 8 * grid.size:
        raise ValueError(f"{path}: expected {grid.size} values, found {len(body) // 8}")
    return ScalarField(grid, np.frombuffer(body, dtype="<f8").reshape(grid.shape))


def write_field_csv(path: str | Path, rho: ScalarField) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if rho.grid.dim == 1:
            w.writerow(["i", "value"])
            for i, v in enumerate(rho.values):
                w.writerow([i, repr(float(v))])
        else:
            w.writerow(["i", "j", "value"])
            for (i, j), v in np.ndenumerate(rho.values):
                w.writerow([i, j, repr(float(v))])
