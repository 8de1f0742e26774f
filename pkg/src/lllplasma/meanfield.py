"""Mean-field functionals of the 2D one-component plasma and their minimizers.

E_MF[rho] = int W rho + 2 D(rho, rho) + T int rho log rho
E_el[rho] = int W rho + 2 D(rho, rho)
E_th[rho] = int W rho + T int rho log rho

with W(r) = r^2 - 2 (m/N) log r. The electrostatic and thermal minimizers are
explicit; the full functional is minimized numerically on a radial grid.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import ConvergenceError, DomainError, UnboundedError
from .params import ModelParams
from .radial_measures import (
    RadialDensity,
    RadialGrid,
    _GridMeasure,
    coulomb_energy,
    default_grid,
    total_variation,
)

log = logging.getLogger(__name__)

DENSITY_FLOOR = 1e-12
MAX_NEWTON = 60


def potential_W(params: ModelParams, r):
    """One-body plasma potential r^2 - 2 (m/N) log r.

    At r = 0 with m > 0 the value is +inf (the pinned charge repels).
    """
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise DomainError("radius must be >= 0")
    x = params.m / params.N
    if x == 0:
        out = r * r
    else:
        with np.errstate(divide="ignore"):
            out = np.where(r > 0, r * r - 2.0 * x * np.log(np.where(r > 0, r, 1.0)), np.inf)
    return float(out) if out.ndim == 0 else out


def cell_potential(params: ModelParams, grid: RadialGrid) -> np.ndarray:
    """Cell averages of W (exact cell integrals divided by the cell area)."""
    e = grid.edges
    r2 = 0.5 * np.pi * (e[1:] ** 4 - e[:-1] ** 4)
    x = params.m / params.N
    return (r2 - 2.0 * x * grid._log_moments) / grid.areas


def _cell_coulomb_potential(rho: _GridMeasure) -> np.ndarray:
    """Cell averages of h_rho; the gradient of D(rho, rho) is 2 * areas * this."""
    grid = rho.grid
    c = rho.values
    A = grid.areas
    Lw = grid._log_moments
    inner = np.concatenate(([0.0], np.cumsum(c * A)[:-1]))
    outer = np.concatenate((np.cumsum((c * Lw)[::-1])[::-1][1:], [0.0]))
    kc = grid._self_kernel * c - Lw * inner - A * outer
    return kc / A


def electrostatic_profile(params: ModelParams, grid: RadialGrid | None = None) -> RadialDensity:
    """Flat density 1/(2 pi) on the disc B(0, sqrt 2) (m = 0) or on the annulus
    sqrt(m/N) <= r <= sqrt(2 + m/N); edge cells carry their exact area fraction."""
    grid = grid or default_grid(params)
    lo, hi = params.inner_radius, params.outer_radius
    e = grid.edges
    a = np.clip(e[:-1], lo, hi)
    b = np.clip(e[1:], lo, hi)
    covered = np.pi * (b * b - a * a)
    return RadialDensity(grid, covered / grid.areas / (2.0 * np.pi))


def _thermal_shape(params: ModelParams):
    alpha = params.m / (params.N * params.T)
    log_z = math.log(math.pi) + (alpha + 1.0) * math.log(params.T) + special.gammaln(alpha + 1.0)
    return alpha, log_z


def thermal_partition_log(params: ModelParams) -> float:
    """log Z_th with Z_th = int exp(-W/T)."""
    return _thermal_shape(params)[1]


def thermal_density(params: ModelParams, r):
    """Pointwise exp(-W(r)/T) / Z_th, evaluated in log space."""
    alpha, log_z = _thermal_shape(params)
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        logr = np.log(r)
    logp = 2.0 * alpha * logr - r * r / params.T - log_z
    if alpha == 0:
        logp = -r * r / params.T - log_z
    return np.exp(logp)


def thermal_profile(params: ModelParams, grid: RadialGrid | None = None) -> RadialDensity:
    """Gibbs profile of W alone, exp(-W/T)/Z_th.

    For T = 1/N this is N^(m+1) |z|^(2m) exp(-N |z|^2) / (pi m!). Cell masses
    come from regularized incomplete gamma functions, so nothing overflows.
    """
    grid = grid or default_grid(params)
    alpha, _ = _thermal_shape(params)
    s = grid.edges**2 / params.T
    a1 = alpha + 1.0
    lower = special.gammainc(a1, s)
    upper = special.gammaincc(a1, s)
    # difference of whichever tail is small keeps relative precision
    use_upper = lower > 0.5
    cell_mass = np.where(
        use_upper[:-1] & use_upper[1:],
        upper[:-1] - upper[1:],
        lower[1:] - lower[:-1],
    )
    cell_mass = np.clip(cell_mass, 0.0, None)
    return RadialDensity(grid, cell_mass / grid.areas)


@dataclass(frozen=True)
class FunctionalValues:
    E_MF: float
    E_el: float
    E_th: float
    potential: float
    coulomb: float
    entropy: float


def _entropy(rho: _GridMeasure) -> float:
    c = rho.values
    pos = c > 0
    return float(np.sum(c[pos] * np.log(c[pos]) * rho.grid.areas[pos]))


def functional_energies(params: ModelParams, rho: RadialDensity) -> FunctionalValues:
    """Evaluate the three mean-field functionals on a probability density."""
    if abs(rho.total_mass - 1.0) > 1e-9:
        raise DomainError("functionals are defined on probability densities")
    pot = float(np.sum(cell_potential(params, rho.grid) * rho.values * rho.grid.areas))
    d = coulomb_energy(rho, rho)
    ent = _entropy(rho)
    T = params.T
    return FunctionalValues(
        E_MF=pot + 2.0 * d + T * ent,
        E_el=pot + 2.0 * d,
        E_th=pot + T * ent,
        potential=pot,
        coulomb=d,
        entropy=ent,
    )


@dataclass(frozen=True)
class MeanFieldSolution:
    """Converged minimizer of E_MF on a grid."""

    params: ModelParams
    density: RadialDensity
    energy: float
    lagrange_constant: float
    iterations: int
    residual: float
    history: list = field(default_factory=list, repr=False)


class _FixedPoint:
    """phi -> W + 4 h_rho(phi) with rho(phi) = exp(-phi/T)/Z, on cell averages.

    Working with the total potential phi instead of log rho keeps the map
    smooth in the far tail, where rho underflows.
    """

    def __init__(self, params: ModelParams, grid: RadialGrid):
        self.params = params
        self.grid = grid
        self.W = cell_potential(params, grid)
        self.log_areas = np.log(grid.areas)

    def density(self, phi):
        s = -phi / self.params.T
        return np.exp(s - special.logsumexp(s + self.log_areas))

    def image(self, phi):
        return self.W + 4.0 * _cell_coulomb_potential(_Plain(self.grid, self.density(phi)))

    def newton_step(self, phi, image):
        """Solve (I - d image/d phi) delta = image - phi."""
        grid = self.grid
        A, Lw = grid.areas, grid._log_moments
        n = grid.n_bins
        i, j = np.indices((n, n))
        K = np.where(i > j, -Lw[:, None] * A[None, :], -Lw[None, :] * A[:, None])
        K[np.diag_indices(n)] = grid._self_kernel
        K /= A[:, None]
        rho = self.density(phi)
        J = (4.0 / self.params.T) * (K * rho[None, :] - np.outer(K @ rho, rho * A))
        J[np.diag_indices(n)] += 1.0
        return np.linalg.solve(J, image - phi)

    def energy(self, phi):
        rho = self.density(phi)
        A = self.grid.areas
        pos = rho > 0
        d = coulomb_energy(_Plain(self.grid, rho), _Plain(self.grid, rho))
        ent = np.sum(rho[pos] * np.log(rho[pos]) * A[pos])
        return float(np.sum(self.W * rho * A) + 2.0 * d + self.params.T * ent)

    def residual(self, phi, image):
        rho = self.density(phi)
        mask = rho > DENSITY_FLOOR
        return float(np.max(np.abs(rho[mask] - self.density(image)[mask])))


class _Plain(_GridMeasure):
    pass


def mf_minimize(
    params: ModelParams,
    tol: float = 1e-10,
    grid: RadialGrid | None = None,
    max_iter: int = 5000,
    damping: float = 0.5,
    stall_limit: int = 200,
) -> MeanFieldSolution:
    """Minimize E_MF by the damped Euler-Lagrange fixed point.

    Plain damped iteration on the total potential runs first. After
    ``stall_limit`` iterations without improvement the solver switches to
    Newton steps, restarted from the initial profile, with a dense Jacobian and
    backtracking on E_MF. The residual
    sup|rho - exp(-(W + 4 h_rho)/T)/Z| is taken over cells with rho > 1e-12
    (the grid truncates the exponentially small tail).
    """
    if not tol > 0:
        raise DomainError("tol must be > 0")
    if not 0 < damping <= 1:
        raise DomainError("damping must lie in (0, 1]")
    grid = grid or default_grid(params)
    fp = _FixedPoint(params, grid)
    start = electrostatic_profile(params, grid) if not params.is_thermal else thermal_profile(params, grid)
    phi = phi0 = fp.image(-params.T * np.log(np.maximum(start.values, 1e-300)))

    history = []
    best = math.inf
    stalled = 0
    newton = False
    newton_steps = 0
    img = fp.image(phi)
    res = fp.residual(phi, img)
    for _ in range(max_iter):
        history.append(res)
        if res <= tol:
            break
        if res < best * (1 - 1e-3):
            best, stalled = res, 0
        else:
            stalled += 1
        if not newton and stalled >= stall_limit:
            log.debug("damped iteration stalled at %.3e; switching to Newton", res)
            newton = True
            phi = phi0
            img = fp.image(phi)
            res = fp.residual(phi, img)
        if newton:
            newton_steps += 1
            if newton_steps > MAX_NEWTON:
                break
            delta = fp.newton_step(phi, img)
            e0 = fp.energy(phi)
            t = 1.0
            # backtrack on the (convex) functional itself; the sup residual is
            # not monotone along Newton paths
            for _ in range(30):
                trial = phi + t * delta
                if fp.energy(trial) <= e0 + 1e-14 * abs(e0):
                    break
                t *= 0.5
            trial_img = fp.image(trial)
            trial_res = fp.residual(trial, trial_img)
            phi, img, res = trial, trial_img, trial_res
        else:
            phi = phi + damping * (img - phi)
            img = fp.image(phi)
            res = fp.residual(phi, img)
    if res > tol:
        raise ConvergenceError(
            f"mean-field iteration did not reach tol={tol:g} in {len(history)} steps "
            f"(last residual {res:.3e})",
            history,
        )
    rho = RadialDensity.from_unnormalized(grid, fp.density(phi))
    vals = functional_energies(params, rho)
    lam = vals.E_MF + 2.0 * vals.coulomb
    return MeanFieldSolution(params, rho, vals.E_MF, lam, len(history), res, history)


def coulomb_distance(mu: _GridMeasure, nu: _GridMeasure) -> float:
    """D(mu - nu, mu - nu), the squared Coulomb norm of a difference."""
    diff = mu - nu
    return coulomb_energy(diff, diff)


def tv_distance(mu: _GridMeasure, nu: _GridMeasure) -> float:
    return total_variation(mu - nu)


@dataclass(frozen=True)
class DecayConstants:
    """Calibrated constants of the envelope prefactor * exp(-rate N (r - r_opt)^2),
    applicable when |r - r_opt| > width_factor * bulk_halfwidth."""

    rate: float
    prefactor: float
    width_factor: float = 1.5

    def to_dict(self):
        return {"rate": self.rate, "prefactor": self.prefactor, "width_factor": self.width_factor}


def bulk_halfwidth(params: ModelParams) -> float:
    """Half-width of the bulk region around r_opt.

    max(N^{1/2} m^{-1/2}, N^{-1/2}) up to constants; for small m the annulus
    geometry sqrt(2 + m/N) - sqrt(m/N) replaces the first scale (at m = 0 it
    is the disc radius sqrt 2).
    """
    r0 = params.r_opt
    return max(params.outer_radius - r0, r0 - params.inner_radius, 1.0 / math.sqrt(params.N))


def calibrate_decay(params: ModelParams, rho: RadialDensity, width_factor: float = 1.5) -> DecayConstants:
    """Fit rate and prefactor so that rho lies below the envelope on the far region."""
    r = rho.grid.nodes
    d2 = (r - params.r_opt) ** 2
    far = np.abs(r - params.r_opt) > width_factor * bulk_halfwidth(params)
    far &= rho.values > 1e-300
    if np.count_nonzero(far) < 2:
        return DecayConstants(rate=1.0, prefactor=1.0, width_factor=width_factor)
    t = params.N * d2[far]
    y = np.log(rho.values[far])
    slope = np.polyfit(t, y, 1)[0]
    rate = max(-slope, 1e-3)
    prefactor = float(np.exp(np.max(y + rate * t)))
    return DecayConstants(rate=float(rate), prefactor=max(prefactor, 1e-300), width_factor=width_factor)


def decay_envelope(params: ModelParams, r, constants: DecayConstants | None = None):
    """Upper envelope for the mean-field density outside the bulk.

    Returns NaN (the not-applicable sentinel) for radii inside the bulk region.
    """
    c = constants or DecayConstants(rate=1.0, prefactor=1.0)
    r = np.asarray(r, dtype=float)
    d = np.abs(r - params.r_opt)
    env = c.prefactor * np.exp(-c.rate * params.N * d * d)
    out = np.where(d > c.width_factor * bulk_halfwidth(params), env, np.nan)
    return float(out) if out.ndim == 0 else out


def optimal_vortex(params: ModelParams) -> int:
    """Integer vortex degree minimizing the electrostatic main term.

    0 when omega >= -2kN, otherwise -omega/(2k) - N rounded to the nearest
    integer (ties go to the smaller m).
    """
    N, w, k = params.N, params.omega, params.k
    if w < 0 and k == 0:
        raise UnboundedError("omega < 0 with k = 0: the trap is unbounded below")
    if w >= -2.0 * k * N:
        return 0
    m_real = -w / (2.0 * k) - N
    return max(0, int(math.ceil(m_real - 0.5)))
