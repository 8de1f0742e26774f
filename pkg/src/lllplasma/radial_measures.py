"""Logarithmic potential theory for radial measures on a cell grid.

A radial measure is stored as one constant density value per annular cell.
Angular averaging of the kernel -log|x - y| gives -log max(|x|, |y|), so
potentials and Coulomb energies reduce to one-dimensional integrals that are
evaluated exactly for piecewise-constant densities (closed forms in the cell
at the origin, 8-point Gauss-Legendre elsewhere where the integrands are
analytic).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import DomainError, GridMismatchError, MassError, SingularSupportError

MASS_TOL = 1e-9
DEFAULT_BINS = 2048

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


def _gl(f, a, b):
    """Integrate f over [a, b] elementwise (a, b arrays) with 8-point Gauss-Legendre."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    s = mid[..., None] + half[..., None] * _GL_X
    return half * np.sum(_GL_W * f(s), axis=-1)


def _slog(s):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(s > 0, s * np.log(np.where(s > 0, s, 1.0)), 0.0)


def _prim_slog(s):
    """Antiderivative of s log s, continuous at 0."""
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.log(np.where(s > 0, s, 1.0))
    return np.where(s > 0, 0.5 * s * s * logs - 0.25 * s * s, 0.0)


def _int_slog(a, b):
    """int_a^b s log s ds for cells; exact when a == 0."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    exact = _prim_slog(b) - _prim_slog(a)
    quad = _gl(_slog, np.where(a > 0, a, 1.0), np.where(a > 0, b, 2.0))
    return np.where(a > 0, quad, exact)


def _int_self(a, b):
    """int_a^b r log r (r^2 - a^2) dr; exact when a == 0."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        exact = np.where(b > 0, 0.25 * b**4 * np.log(np.where(b > 0, b, 1.0)) - b**4 / 16.0, 0.0)
    a_safe = np.where(a > 0, a, 1.0)
    b_safe = np.where(a > 0, b, 2.0)
    quad = _gl(lambda r: _slog(r) * (r * r - a_safe[..., None] ** 2), a_safe, b_safe)
    return np.where(a > 0, quad, exact)


@dataclass(frozen=True)
class RadialGrid:
    """Uniform annular cells on [r_min, r_max].

    ``nodes`` are cell midpoints, so no quantity is ever evaluated at r = 0 and
    ``2 pi r dr`` at a node is exactly the annulus area of its cell.
    """

    r_max: float
    n_bins: int = DEFAULT_BINS
    r_min: float = 0.0

    def __post_init__(self):
        if not (self.r_max > 0 and math.isfinite(self.r_max)):
            raise DomainError(f"r_max must be > 0, got {self.r_max!r}")
        if int(self.n_bins) != self.n_bins or self.n_bins < 2:
            raise DomainError(f"n_bins must be an integer >= 2, got {self.n_bins!r}")
        if not (0.0 <= self.r_min < self.r_max):
            raise DomainError("need 0 <= r_min < r_max")
        object.__setattr__(self, "n_bins", int(self.n_bins))

    @cached_property
    def edges(self) -> np.ndarray:
        return np.linspace(self.r_min, self.r_max, self.n_bins + 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        e = self.edges
        return 0.5 * (e[1:] + e[:-1])

    @property
    def dr(self) -> float:
        return (self.r_max - self.r_min) / self.n_bins

    @cached_property
    def areas(self) -> np.ndarray:
        return 2.0 * np.pi * self.nodes * np.diff(self.edges)

    @cached_property
    def _log_moments(self) -> np.ndarray:
        # int_cell log r dA
        e = self.edges
        return 2.0 * np.pi * _int_slog(e[:-1], e[1:])

    @cached_property
    def _self_kernel(self) -> np.ndarray:
        e = self.edges
        return -4.0 * np.pi**2 * _int_self(e[:-1], e[1:])

    def compatible(self, other: "RadialGrid") -> bool:
        return (
            self.n_bins == other.n_bins
            and math.isclose(self.r_max, other.r_max, rel_tol=1e-14, abs_tol=0.0)
            and math.isclose(self.r_min, other.r_min, rel_tol=1e-14, abs_tol=1e-300)
        )

    def cell_index(self, r) -> np.ndarray:
        idx = np.floor((np.asarray(r, dtype=float) - self.r_min) / self.dr).astype(np.int64)
        return np.clip(idx, 0, self.n_bins - 1)

    def cell_average(self, f, order: int = 8) -> np.ndarray:
        """Cell averages of a radial function f(r) w.r.t. area (Gauss-Legendre)."""
        x, w = np.polynomial.legendre.leggauss(order)
        e = self.edges
        half = 0.5 * np.diff(e)
        mid = 0.5 * (e[1:] + e[:-1])
        r = mid[:, None] + half[:, None] * x
        vals = f(r) * 2.0 * np.pi * r
        return half * np.sum(w * vals, axis=1) / self.areas


def default_grid(params, n_bins: int = DEFAULT_BINS) -> RadialGrid:
    """Grid covering the support of the mean-field profiles plus their tails.

    Electrostatic regime (m <= N^2): [0, max(3, 2 sqrt(2 + m/N))], widened when
    T is large so that exp(-r^2/T) underflows inside the grid. Thermal regime
    (m > N^2): a window around r_opt wide enough for the Gaussian ridge.
    """
    T = params.T
    x = params.m / params.N
    if params.m <= params.N**2:
        r_max = max(3.0, 2.0 * math.sqrt(2.0 + x), math.sqrt(x) + 7.0 * math.sqrt(T))
        return RadialGrid(r_max=r_max, n_bins=n_bins)
    r0 = math.sqrt(x)
    curvature = 2.0 + 2.0 * x / r0**2
    sigma = math.sqrt(T / curvature)
    # Coulomb push of the ridge is ~ 1/r0; keep both scales inside the window
    half = 12.0 * sigma + 4.0 / r0 + 2.0 * math.sqrt(2.0 + x) - 2.0 * r0
    return RadialGrid(r_max=r0 + half, n_bins=n_bins, r_min=max(0.0, r0 - half))


class _GridMeasure:
    __slots__ = ("grid", "values")

    def __init__(self, grid: RadialGrid, values):
        values = np.array(values, dtype=float)
        if values.shape != (grid.n_bins,):
            raise GridMismatchError(f"expected {grid.n_bins} values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DomainError("measure values must be finite")
        values.setflags(write=False)
        self.grid = grid
        self.values = values

    @property
    def r(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def cell_masses(self) -> np.ndarray:
        return self.values * self.grid.areas

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.cell_masses))

    def _check(self, other) -> None:
        if not self.grid.compatible(other.grid):
            raise GridMismatchError("measures live on different grids")

    def __sub__(self, other) -> "SignedRadialMeasure":
        self._check(other)
        return SignedRadialMeasure(self.grid, self.values - other.values)

    def __add__(self, other) -> "SignedRadialMeasure":
        self._check(other)
        return SignedRadialMeasure(self.grid, self.values + other.values)

    def __mul__(self, c: float) -> "SignedRadialMeasure":
        return SignedRadialMeasure(self.grid, self.values * float(c))

    __rmul__ = __mul__

    def __neg__(self) -> "SignedRadialMeasure":
        return SignedRadialMeasure(self.grid, -self.values)

    def to_csv(self, path) -> None:
        write_profile_csv(path, self.grid.nodes, {"value": self.values})


class SignedRadialMeasure(_GridMeasure):
    """Signed piecewise-constant radial density (e.g. a difference of profiles)."""

    def __repr__(self):
        return f"SignedRadialMeasure(n_bins={self.grid.n_bins}, mass={self.total_mass:.3e})"


class RadialDensity(_GridMeasure):
    """Nonnegative radial density whose total mass matches ``mass`` to 1e-9."""

    __slots__ = ("mass",)

    def __init__(self, grid: RadialGrid, values, mass: float = 1.0, tol: float = MASS_TOL):
        super().__init__(grid, values)
        if np.any(self.values < 0):
            raise DomainError("density values must be nonnegative")
        total = self.total_mass
        if abs(total - mass) > tol * max(1.0, abs(mass)):
            raise MassError(f"total mass {total!r} differs from declared {mass!r}")
        self.mass = float(mass)

    @classmethod
    def from_unnormalized(cls, grid: RadialGrid, values, mass: float = 1.0) -> "RadialDensity":
        """Explicitly rescale nonnegative values to the requested mass."""
        values = np.asarray(values, dtype=float)
        total = float(np.sum(values * grid.areas))
        if not total > 0:
            raise MassError("cannot normalize a measure of zero mass")
        return cls(grid, values * (mass / total), mass=mass)

    @classmethod
    def from_csv(cls, path, mass: float = 1.0) -> "RadialDensity":
        r, cols = read_profile_csv(path)
        grid = grid_from_nodes(r)
        return cls(grid, cols[0], mass=mass)

    @property
    def max(self) -> float:
        return float(np.max(self.values))

    def __repr__(self):
        return f"RadialDensity(n_bins={self.grid.n_bins}, mass={self.mass})"


def grid_from_nodes(r) -> RadialGrid:
    r = np.asarray(r, dtype=float)
    if r.ndim != 1 or r.size < 2:
        raise DomainError("need at least two radii")
    d = np.diff(r)
    if np.any(d <= 0):
        raise DomainError("radii must be strictly increasing")
    dr = float(np.mean(d))
    if np.max(np.abs(d - dr)) > 1e-9 * max(1.0, float(r[-1])):
        raise DomainError("radii must be uniformly spaced cell midpoints")
    r_min = float(r[0]) - 0.5 * dr
    if abs(r_min) < 1e-9 * dr:
        r_min = 0.0
    return RadialGrid(r_max=float(r[-1]) + 0.5 * dr, n_bins=r.size, r_min=r_min)


def newton_potential(mu: _GridMeasure, r):
    """Potential h(r) = -int log|x - y| dmu(y) at |x| = r (Newton's theorem).

    Beyond the grid the measure looks like a point charge: h = -M log r.
    Vectorized over ``r``.
    """
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0) or np.any(np.isnan(r_arr)):
        raise DomainError("radius must be >= 0")
    grid = mu.grid
    e = grid.edges
    c = mu.values
    masses = mu.cell_masses
    inside = np.concatenate(([0.0], np.cumsum(masses)))  # mass below edge i
    logm = c * grid._log_moments
    tail = np.concatenate((np.cumsum(logm[::-1])[::-1], [0.0]))  # sum over cells >= i
    total = inside[-1]

    flat = r_arr.ravel()
    out = np.empty_like(flat)
    with np.errstate(divide="ignore", invalid="ignore"):
        logr = np.log(np.where(flat > 0, flat, 1.0))

    below = flat < grid.r_min
    above = flat >= grid.r_max
    mid = ~(below | above)

    out[below] = -tail[0]
    out[above] = -total * logr[above]
    if np.any(mid):
        rm = flat[mid]
        k = grid.cell_index(rm)
        a = e[k]
        b = e[k + 1]
        m_in = inside[k] + c[k] * np.pi * (rm * rm - a * a)
        partial = c[k] * 2.0 * np.pi * (_prim_slog(b) - _prim_slog(rm))
        t = tail[k + 1] + partial
        out[mid] = np.where(rm > 0, -logr[mid] * m_in, 0.0) - t
    if r_arr.ndim == 0:
        return float(out[0])
    return out.reshape(r_arr.shape)


def coulomb_energy(mu: _GridMeasure, nu: _GridMeasure) -> float:
    """D(mu, nu) = -iint log|x - y| dmu(x) dnu(y), exact for cell-constant densities."""
    mu._check(nu)
    grid = mu.grid
    a = mu.values
    b = nu.values
    areas = grid.areas
    pa = np.concatenate(([0.0], np.cumsum(a * areas)[:-1]))
    pb = np.concatenate(([0.0], np.cumsum(b * areas)[:-1]))
    self_part = np.sum(a * b * grid._self_kernel)
    cross = -np.sum(grid._log_moments * (a * pb + b * pa))
    return float(self_part + cross)


def total_variation(mu: _GridMeasure) -> float:
    """int |mu|, the total variation norm."""
    return float(np.sum(np.abs(mu.values) * mu.grid.areas))


def relative_entropy(mu: RadialDensity, nu: RadialDensity) -> float:
    """int mu log(mu / nu) for two probability densities, with 0 log 0 = 0."""
    mu._check(nu)
    for name, d in (("mu", mu), ("nu", nu)):
        if abs(d.total_mass - 1.0) > MASS_TOL:
            raise MassError(f"{name} must be a probability density")
    p = mu.values
    q = nu.values
    if np.any((q <= 0) & (p > 0)):
        raise SingularSupportError("mu charges cells where nu vanishes")
    pos = p > 0
    val = np.sum(p[pos] * np.log(p[pos] / q[pos]) * mu.grid.areas[pos])
    return float(val)


def _disc_rule(n_rad: int = 16, n_ang: int = 64):
    """Nodes (s, phi) and weights for int over the unit disc of f(s, phi) dA."""
    x, w = np.polynomial.legendre.leggauss(n_rad)
    s = 0.5 * (x + 1.0)
    ws = 0.5 * w * s
    phi = 2.0 * np.pi * np.arange(n_ang) / n_ang
    return s, ws, phi, 2.0 * np.pi / n_ang


def smeared_charge_correction(rho: _GridMeasure, l: float, x: float = 0.0) -> float:
    """Exact D(rho, delta_x - mu_x) for mu_x the uniform unit charge on B(x, l).

    The difference of the two potentials vanishes outside B(x, l) (Newton), so
    the value is exactly 0 when that disc misses the support of rho.
    """
    if not l > 0:
        raise DomainError("smearing radius must be > 0")
    if x < 0:
        raise DomainError("center radius must be >= 0")
    grid = rho.grid
    e = grid.edges
    charged = rho.values != 0
    lo, hi = max(0.0, x - l), x + l
    touching = charged & (e[1:] > lo) & (e[:-1] < hi)
    if not np.any(touching):
        return 0.0
    # polar coordinates around x, s = l u^2 tames the log weight at s = 0
    u, wu = np.polynomial.legendre.leggauss(64)
    u = 0.5 * (u + 1.0)
    wu = 0.5 * wu
    s = l * u * u
    ds = 2.0 * l * u * wu
    kern = -np.log(u * u) - 0.5 * (1.0 - u**4)  # -log(s/l) - (1 - s^2/l^2)/2
    n_ang = 256
    phi = 2.0 * np.pi * (np.arange(n_ang) + 0.5) / n_ang
    px = x + s[:, None] * np.cos(phi)
    py = s[:, None] * np.sin(phi)
    rad = np.hypot(px, py)
    vals = _density_at(rho, rad)
    ang = vals.mean(axis=1) * 2.0 * np.pi
    return float(np.sum(ang * kern * s * ds))


def _density_at(mu: _GridMeasure, r) -> np.ndarray:
    grid = mu.grid
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    ok = (r >= grid.r_min) & (r < grid.r_max)
    out[ok] = mu.values[grid.cell_index(r[ok])]
    return out


def write_profile_csv(path, r, columns: dict, version: str = "1") -> None:
    """Write (r, col...) with a versioned header comment, full double precision."""
    path = Path(path)
    names = ["r", *columns.keys()]
    data = [np.asarray(r, dtype=float)] + [np.asarray(v, dtype=float) for v in columns.values()]
    with path.open("w", newline="", encoding="ascii") as fh:
        fh.write(f"# lllplasma-csv v{version} columns={','.join(names)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*data):
            w.writerow([_fmt(v) for v in row])


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def read_profile_csv(path):
    """Read a CSV written by :func:`write_profile_csv`; returns (r, [columns])."""
    rows = []
    header = None
    with Path(path).open(encoding="ascii") as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            parts = line.strip().split(",")
            if header is None:
                header = parts
                continue
            rows.append([float(p) for p in parts])
    if header is None or header[0] != "r" or len(header) < 2:
        raise DomainError("CSV must start with an 'r' column followed by values")
    arr = np.array(rows, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != len(header):
        raise DomainError("malformed CSV body")
    return arr[:, 0], [arr[:, j] for j in range(1, arr.shape[1])]
