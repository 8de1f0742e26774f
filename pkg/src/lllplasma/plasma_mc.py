"""Metropolis sampling of the 2D one-component plasma Gibbs measure.

The measure is exp(-H_N/T)/Z_N with

    H_N(Z) = sum_j W_m(z_j) - (2/N) sum_{i != j} log|z_i - z_j|.

At T = 1/N it is the modulus squared of the Laughlin quasi-hole state in
scaled coordinates. Random numbers come from a numpy Generator in blocks and
are consumed by a numba kernel, so a seed fixes the whole chain.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from numba import njit
from scipy import special

from .errors import DomainError, IntegrityError, UnsupportedError
from .meanfield import electrostatic_profile, mf_minimize
from .params import ModelParams
from .radial_measures import (
    RadialDensity,
    RadialGrid,
    coulomb_energy,
    default_grid,
    newton_potential,
)

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
COINCIDENCE = 1e-24  # squared distance below which a proposal is rejected
CACHE_CHECK_EVERY = 1000
CACHE_TOL = 1e-8


# ---------------------------------------------------------------- kernels


@njit(cache=True)
def _energy(x, y, xm):
    n = x.size
    e = 0.0
    for i in range(n):
        r2 = x[i] * x[i] + y[i] * y[i]
        if xm != 0.0:
            if r2 < COINCIDENCE:
                return np.inf
            e += r2 - xm * math.log(r2)
        else:
            e += r2
    pair = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            dx = x[i] - x[j]
            dy = y[i] - y[j]
            d2 = dx * dx + dy * dy
            if d2 < COINCIDENCE:
                return np.inf
            pair += math.log(d2)
    # (2/N) sum over ordered pairs of log|z| = (2/N) sum_{i<j} log d^2
    return e - 2.0 / n * pair


@njit(cache=True)
def _delta(x, y, i, xn, yn, xm):
    n = x.size
    r2o = x[i] * x[i] + y[i] * y[i]
    r2n = xn * xn + yn * yn
    if xm != 0.0:
        if r2n < COINCIDENCE:
            return np.inf
        dw = (r2n - r2o) - xm * math.log(r2n / r2o)
    else:
        dw = r2n - r2o
    acc = 0.0
    for j in range(n):
        if j == i:
            continue
        ax = xn - x[j]
        ay = yn - y[j]
        d2n = ax * ax + ay * ay
        if d2n < COINCIDENCE:
            return np.inf
        bx = x[i] - x[j]
        by = y[i] - y[j]
        acc += math.log(d2n / (bx * bx + by * by))
    return dw - 2.0 / n * acc


@njit(cache=True)
def _run_block(x, y, energy, xm, inv_t, step, noise, unif, sampling, thin, sweep0,
               r_min, r_max, hist, moments, snap_r, snap_xy, since_check, check_every):
    """Run noise.shape[0] sweeps in place.

    Returns (energy, accepted, snapshots taken, moves since last cache check,
    largest cache discrepancy seen).
    """
    n = x.size
    nb = hist.size - 1
    accepted = 0
    taken = 0
    worst = 0.0
    for s in range(noise.shape[0]):
        for i in range(n):
            xn = x[i] + step * noise[s, i, 0]
            yn = y[i] + step * noise[s, i, 1]
            de = _delta(x, y, i, xn, yn, xm)
            if de == np.inf:
                continue
            if de <= 0.0 or unif[s, i] < math.exp(-de * inv_t):
                x[i] = xn
                y[i] = yn
                energy += de
                accepted += 1
                since_check += 1
                if since_check >= check_every:
                    full = _energy(x, y, xm)
                    err = abs(full - energy) / max(1.0, abs(full))
                    if err > worst:
                        worst = err
                    energy = full
                    since_check = 0
        if sampling and (sweep0 + s + 1) % thin == 0:
            for i in range(n):
                r2 = x[i] * x[i] + y[i] * y[i]
                r = math.sqrt(r2)
                b = nb
                if r_min <= r < r_max:
                    b = min(int((r - r_min) / (r_max - r_min) * nb), nb - 1)
                hist[b] += 1
                moments[0] += r2
                moments[1] += r2 * r2
            if snap_r.shape[0] > 0:
                for i in range(n):
                    snap_r[taken, i] = math.sqrt(x[i] * x[i] + y[i] * y[i])
            if snap_xy.shape[0] > 0:
                for i in range(n):
                    snap_xy[taken, i, 0] = x[i]
                    snap_xy[taken, i, 1] = y[i]
            taken += 1
    return energy, accepted, taken, since_check, worst


# ---------------------------------------------------------------- data types


@dataclass
class PlasmaConfiguration:
    """N planar points (rows of ``positions``) and the cached value of H_N."""

    positions: np.ndarray
    cached_energy: float

    @classmethod
    def from_positions(cls, params: ModelParams, positions) -> "PlasmaConfiguration":
        pos = np.array(positions, dtype=float).reshape(-1, 2)
        if pos.shape[0] != params.N:
            raise DomainError(f"expected {params.N} points, got {pos.shape[0]}")
        return cls(pos, hamiltonian(params, pos))

    @property
    def N(self) -> int:
        return self.positions.shape[0]


def hamiltonian(params: ModelParams, config) -> float:
    """H_N of a configuration (PlasmaConfiguration or an (N, 2) array).

    Coincident points, or a point at the origin when m > 0, give +inf.
    """
    pos = config.positions if isinstance(config, PlasmaConfiguration) else np.asarray(config, dtype=float)
    pos = pos.reshape(-1, 2)
    x = np.ascontiguousarray(pos[:, 0])
    y = np.ascontiguousarray(pos[:, 1])
    return float(_energy(x, y, params.m / params.N))


def energy_delta(params: ModelParams, config, i: int, new_point) -> float:
    """H_N after moving particle ``i`` to ``new_point`` minus H_N before."""
    pos = config.positions if isinstance(config, PlasmaConfiguration) else np.asarray(config, dtype=float)
    x = np.ascontiguousarray(pos[:, 0])
    y = np.ascontiguousarray(pos[:, 1])
    return float(_delta(x, y, int(i), float(new_point[0]), float(new_point[1]), params.m / params.N))


@dataclass(frozen=True)
class SamplerConfig:
    """Metropolis settings. ``step_size=None`` starts from sqrt(T/2)."""

    step_size: float | None = None
    n_burnin: int = 1000
    n_samples: int = 10000
    thinning: int = 1
    seed: int = 0
    target_acceptance: float = 0.35
    n_batches: int = 32
    tune: bool = True

    def __post_init__(self):
        for name in ("n_burnin", "n_samples"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be >= 0")
        if self.thinning < 1:
            raise DomainError("thinning must be >= 1")
        if self.n_batches < 2:
            raise DomainError("need at least two batches")
        if not 0.0 < self.target_acceptance < 1.0:
            raise DomainError("target_acceptance must lie in (0, 1)")
        if self.step_size is not None and not self.step_size > 0:
            raise DomainError("step_size must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DensityEstimate:
    """Binned one-particle density with batch-means error bars.

    ``counts`` has one extra overflow slot for radii outside the grid.
    ``batch_counts`` keeps per-batch tallies so estimates can be merged.
    """

    grid: RadialGrid
    counts: np.ndarray
    batch_counts: np.ndarray
    batch_snapshots: np.ndarray
    batch_moments: np.ndarray
    N: int
    min_count: int = 25
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_snapshots(self) -> int:
        return int(self.batch_snapshots.sum())

    @property
    def density(self) -> np.ndarray:
        return self.counts[:-1] / (self.N * self.n_snapshots * self.grid.areas)

    @property
    def batch_densities(self) -> np.ndarray:
        return self.batch_counts[:, :-1] / (self.N * self.batch_snapshots[:, None] * self.grid.areas)

    @property
    def stderr(self) -> np.ndarray:
        # sort across batches so the result does not depend on merge order
        b = np.sort(self.batch_densities, axis=0)
        return b.std(axis=0, ddof=1) / math.sqrt(b.shape[0])

    @property
    def undersampled(self) -> np.ndarray:
        """Bins whose tally is too small for the batch-means error to be trusted."""
        return self.counts[:-1] < self.min_count

    @property
    def overflow_fraction(self) -> float:
        return float(self.counts[-1] / (self.N * self.n_snapshots))

    def moment(self, k: int) -> tuple[float, float]:
        """Mean of r^2 (k=1) or r^4 (k=2) per particle, with batch-means error."""
        per = np.sort(self.batch_moments[:, k - 1] / (self.N * self.batch_snapshots))
        total = self.batch_moments[:, k - 1].sum() / (self.N * self.n_snapshots)
        return float(total), float(per.std(ddof=1) / math.sqrt(per.size))

    def as_density(self) -> RadialDensity:
        return RadialDensity.from_unnormalized(self.grid, self.density)

    def merge(self, other: "DensityEstimate") -> "DensityEstimate":
        """Pool two independent estimates (associative and order independent)."""
        if not self.grid.compatible(other.grid) or self.N != other.N:
            raise DomainError("cannot merge estimates on different grids or particle numbers")
        return DensityEstimate(
            self.grid,
            self.counts + other.counts,
            np.concatenate((self.batch_counts, other.batch_counts)),
            np.concatenate((self.batch_snapshots, other.batch_snapshots)),
            np.concatenate((self.batch_moments, other.batch_moments)),
            self.N,
            self.min_count,
            {},
        )


def estimation_grid(params: ModelParams, n_bins: int = 64) -> RadialGrid:
    """Histogram bins for sampled radii: the default mean-field window, coarsened.

    Radii outside the window land in the overflow slot.
    """
    g = default_grid(params)
    return RadialGrid(r_max=g.r_max, n_bins=n_bins, r_min=g.r_min)


# ---------------------------------------------------------------- chains


def initial_configuration(params: ModelParams, rng: np.random.Generator) -> PlasmaConfiguration:
    """i.i.d. points from rho^el, or from rho^th when m > N^2."""
    N = params.N
    u = rng.random(N)
    theta = 2.0 * np.pi * rng.random(N)
    if params.is_thermal:
        a = params.m / (N * params.T)
        r2 = params.T * special.gammaincinv(a + 1.0, u)
    else:
        lo, hi = params.inner_radius, params.outer_radius
        r2 = lo * lo + u * (hi * hi - lo * lo)
    r = np.sqrt(r2)
    pos = np.column_stack((r * np.cos(theta), r * np.sin(theta)))
    return PlasmaConfiguration.from_positions(params, pos)


class Chain:
    """A single Metropolis chain owning its configuration and RNG."""

    def __init__(self, params: ModelParams, sampler: SamplerConfig, config: PlasmaConfiguration | None = None):
        self.params = params
        self.sampler = sampler
        self.rng = np.random.default_rng(sampler.seed)
        self.config = config or initial_configuration(params, self.rng)
        self.step = sampler.step_size or math.sqrt(params.T / 2.0)
        self.sweeps_done = 0
        self.burned_in = False
        self._since_check = 0
        self.accepted = 0
        self.proposed = 0

    # -- low level

    def _block(self, n_sweeps, sampling=False, thin=1, r_min=0.0, r_max=1.0, hist=None, moments=None,
               snap_r=None, snap_xy=None):
        N = self.params.N
        noise = self.rng.standard_normal((n_sweeps, N, 2))
        unif = self.rng.random((n_sweeps, N))
        x = np.ascontiguousarray(self.config.positions[:, 0])
        y = np.ascontiguousarray(self.config.positions[:, 1])
        hist = hist if hist is not None else np.zeros(2, dtype=np.int64)
        moments = moments if moments is not None else np.zeros(2)
        snap_r = snap_r if snap_r is not None else np.zeros((0, N))
        snap_xy = snap_xy if snap_xy is not None else np.zeros((0, N, 2))
        energy, acc, taken, self._since_check, worst = _run_block(
            x, y, self.config.cached_energy, self.params.m / N, 1.0 / self.params.T,
            self.step, noise, unif, sampling, thin, self.sweeps_done, r_min, r_max, hist, moments,
            snap_r, snap_xy, self._since_check, CACHE_CHECK_EVERY,
        )
        if worst > CACHE_TOL:
            raise IntegrityError(f"cached energy drifted by {worst:.2e} (relative)")
        self.config = PlasmaConfiguration(np.column_stack((x, y)), energy)
        self.sweeps_done += n_sweeps
        self.accepted += acc
        self.proposed += n_sweeps * N
        return acc, taken

    def sweep(self) -> int:
        """One sweep (N single-particle proposals); returns the accepted count."""
        return self._block(1)[0]

    def burn_in(self) -> None:
        """Equilibrate, tuning the step towards the target acceptance, then freeze it."""
        s = self.sampler
        done = 0
        window = 50
        while done < s.n_burnin:
            n = min(window, s.n_burnin - done)
            acc, _ = self._block(n)
            if s.tune:
                rate = acc / (n * self.params.N)
                self.step *= math.exp(2.0 * (rate - s.target_acceptance))
            done += n
        self.burned_in = True
        self.accepted = 0
        self.proposed = 0

    @property
    def acceptance(self) -> float:
        return self.accepted / self.proposed if self.proposed else float("nan")

    def sample(self, grid: RadialGrid | None = None, collect_radii: bool = False,
               collect_positions: bool = False):
        """Run the production sweeps. Returns (DensityEstimate, radii, positions)."""
        if not self.burned_in:
            self.burn_in()
        s = self.sampler
        N = self.params.N
        grid = grid or estimation_grid(self.params)
        nb = grid.n_bins
        B = s.n_batches
        per_batch = [s.n_samples // B + (1 if b < s.n_samples % B else 0) for b in range(B)]
        batch_counts = np.zeros((B, nb + 1), dtype=np.int64)
        batch_snaps = np.zeros(B, dtype=np.int64)
        batch_moments = np.zeros((B, 2))
        radii, positions = [], []
        chunk = max(1, 2_000_000 // (3 * N))
        for b in range(B):
            left = per_batch[b]
            while left > 0:
                n = min(chunk, left)
                n_snap = (self.sweeps_done + n) // s.thinning - self.sweeps_done // s.thinning
                sr = np.zeros((n_snap, N)) if collect_radii else None
                sxy = np.zeros((n_snap, N, 2)) if collect_positions else None
                _, taken = self._block(n, True, s.thinning, grid.r_min, grid.r_max, batch_counts[b],
                                       batch_moments[b], sr, sxy)
                batch_snaps[b] += taken
                if collect_radii:
                    radii.append(sr[:taken])
                if collect_positions:
                    positions.append(sxy[:taken])
                left -= n
        if np.any(batch_snaps == 0):
            raise DomainError("every batch needs at least one snapshot: raise n_samples or lower thinning")
        est = DensityEstimate(
            grid,
            batch_counts.sum(axis=0),
            batch_counts,
            batch_snaps,
            batch_moments,
            N,
        )
        est.diagnostics = {
            "acceptance": self.acceptance,
            "step_size": self.step,
            "sweeps": self.sweeps_done,
            "snapshots": est.n_snapshots,
            "overflow_fraction": est.overflow_fraction,
            "undersampled_bins": int(np.count_nonzero(est.undersampled)),
            "max_batch_variance": float(np.max(est.batch_densities.var(axis=0, ddof=1))),
        }
        r = np.concatenate(radii) if collect_radii else None
        p = np.concatenate(positions) if collect_positions else None
        return est, r, p

    # -- checkpoints

    def save(self, path) -> None:
        """Binary checkpoint (npz) with a versioned JSON header."""
        header = {
            "format": "lllplasma-chain",
            "version": CHECKPOINT_VERSION,
            "params": self.params.to_dict(),
            "sampler": self.sampler.to_dict(),
            "step": self.step,
            "sweeps_done": self.sweeps_done,
            "burned_in": self.burned_in,
            "since_check": self._since_check,
            "rng": self.rng.bit_generator.state,
        }
        with open(path, "wb") as fh:
            np.savez(fh, header=np.frombuffer(json.dumps(header, default=int).encode(), dtype=np.uint8),
                     positions=self.config.positions, energy=np.array([self.config.cached_energy]))

    @classmethod
    def load(cls, path) -> "Chain":
        with np.load(path) as data:
            header = json.loads(bytes(data["header"]).decode())
            if header.get("format") != "lllplasma-chain" or header.get("version") != CHECKPOINT_VERSION:
                raise IntegrityError(f"unsupported checkpoint header {header.get('format')!r} v{header.get('version')}")
            pos = data["positions"].copy()
            energy = float(data["energy"][0])
        params = ModelParams(**header["params"])
        sampler = SamplerConfig(**header["sampler"])
        chain = cls(params, sampler, PlasmaConfiguration(pos, energy))
        chain.rng.bit_generator.state = header["rng"]
        chain.step = header["step"]
        chain.sweeps_done = header["sweeps_done"]
        chain.burned_in = header["burned_in"]
        chain._since_check = header["since_check"]
        return chain


def metropolis_sweep(params: ModelParams, config: PlasmaConfiguration, sampler: SamplerConfig,
                     rng: np.random.Generator):
    """One sweep of single-particle Gaussian proposals at step ``sampler.step_size``.

    Returns the new configuration and the number of accepted moves.
    """
    N = params.N
    step = sampler.step_size or math.sqrt(params.T / 2.0)
    noise = rng.standard_normal((1, N, 2))
    unif = rng.random((1, N))
    x = np.ascontiguousarray(config.positions[:, 0])
    y = np.ascontiguousarray(config.positions[:, 1])
    energy, acc, _, _, _ = _run_block(
        x, y, config.cached_energy, params.m / N, 1.0 / params.T, step, noise, unif,
        False, 1, 0, 0.0, 1.0, np.zeros(2, dtype=np.int64), np.zeros(2), np.zeros((0, N)),
        np.zeros((0, N, 2)), 0, CACHE_CHECK_EVERY,
    )
    return PlasmaConfiguration(np.column_stack((x, y)), energy), int(acc)


def estimate_density(params: ModelParams, sampler: SamplerConfig, grid: RadialGrid | None = None) -> DensityEstimate:
    """Sampled one-particle density mu_N^(1) with batch-means error bars."""
    if sampler.n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    est, _, _ = Chain(params, sampler).sample(grid)
    return est


def merge_estimates(estimates) -> DensityEstimate:
    it = iter(estimates)
    out = next(it)
    for e in it:
        out = out.merge(e)
    return out


# ---------------------------------------------------------------- estimators


def _batch_mean(values: np.ndarray, n_batches: int) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    n = values.size
    if n < n_batches:
        n_batches = max(2, n)
    parts = np.array_split(values, n_batches)
    means = np.sort(np.array([p.mean() for p in parts]))
    return float(values.mean()), float(means.std(ddof=1) / math.sqrt(means.size))


def reference_profile(params: ModelParams, grid: RadialGrid | None = None) -> RadialDensity:
    """rho^el when m <= N^2, rho^th otherwise."""
    from .meanfield import thermal_profile

    return thermal_profile(params, grid) if params.is_thermal else electrostatic_profile(params, grid)


@dataclass(frozen=True)
class PairTestResult:
    mc: float
    stderr: float
    reference: float
    difference: float
    rhs_shape: float

    @property
    def ratio(self) -> float:
        """|difference| / (N^{-1/2} log N ||grad V||_inf): the empirical constant."""
        return self.difference / self.rhs_shape if self.rhs_shape > 0 else float("nan")


def integrate_radial(V, rho: RadialDensity) -> float:
    """int V rho for a radial function V (cell averages, 8-point Gauss rule)."""
    return float(np.sum(rho.grid.cell_average(V) * rho.cell_masses))


def pair_test_function(params: ModelParams, sampler: SamplerConfig, V, rho: RadialDensity | None = None) -> PairTestResult:
    """Compare the sampled int V mu_N^(1) with int V rho for a radial test function V.

    ``rho`` defaults to the regime profile (rho^el or rho^th).
    """
    chain = Chain(params, sampler)
    _, radii, _ = chain.sample(collect_radii=True)
    vals = np.asarray(V(radii), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise DomainError("test function is not finite on the sampled support")
    mc, err = _batch_mean(vals.mean(axis=1), sampler.n_batches)
    rho = rho or reference_profile(params)
    ref = integrate_radial(V, rho)
    r = np.linspace(0.0, max(float(radii.max()), rho.grid.r_max), 4097)
    grad = float(np.max(np.abs(np.gradient(np.asarray(V(r), dtype=float), r))))
    N = params.N
    shape = grad * math.log(N) / math.sqrt(N) if N > 1 else grad
    return PairTestResult(mc, err, ref, abs(mc - ref), shape)


@lru_cache(maxsize=1)
def _overlap_table(n: int = 801):
    """G(t) = int over the unit disc centered at distance t of phi(|y|) dy / pi,
    phi(s) = (1 - s^2)/2 inside the unit disc and -log s outside; t in [0, 2]."""
    t = np.linspace(0.0, 2.0, n)
    xs, ws = np.polynomial.legendre.leggauss(96)
    s = 0.5 * (xs + 1.0)
    ws = 0.5 * ws * s
    n_ang = 192
    ang = 2.0 * np.pi * (np.arange(n_ang) + 0.5) / n_ang
    out = np.empty(n)
    for k, tk in enumerate(t):
        px = tk + s[:, None] * np.cos(ang)
        py = s[:, None] * np.sin(ang)
        q = np.hypot(px, py)
        with np.errstate(divide="ignore"):
            phi = np.where(q < 1.0, 0.5 * (1.0 - q * q), -np.log(np.maximum(q, 1e-300)))
        out[k] = 2.0 * np.sum(ws * phi.mean(axis=1))
    return t, out


def smeared_pair_energy(d, l: float):
    """D(mu_a, mu_b) for unit charges smeared uniformly on discs of radius l
    whose centers are a distance d apart."""
    d = np.asarray(d, dtype=float)
    t, G = _overlap_table()
    u = d / l
    with np.errstate(divide="ignore"):
        far = -np.log(np.maximum(d, 1e-300))
    near = np.interp(np.minimum(u, 2.0), t, G) - math.log(l)
    return np.where(u >= 2.0, far, near)


def smeared_potential_table(rho: RadialDensity, l: float, n: int = 600):
    """Radii q and D(rho, mu_x) for |x| = q, mu_x the unit charge smeared on B(x, l)."""
    q = np.linspace(0.0, rho.grid.r_max + 2.0 * l, n)
    xs, ws = np.polynomial.legendre.leggauss(24)
    s = 0.5 * (xs + 1.0) * l
    ws = 0.5 * ws * l * s / (math.pi * l * l)
    n_ang = 48
    ang = 2.0 * np.pi * (np.arange(n_ang) + 0.5) / n_ang
    px = q[:, None, None] + s[None, :, None] * np.cos(ang)[None, None, :]
    py = s[None, :, None] * np.sin(ang)[None, None, :]
    h = newton_potential(rho, np.hypot(px, py))
    vals = 2.0 * math.pi * np.sum(ws[None, :] * h.mean(axis=2), axis=1)
    return q, vals


@dataclass(frozen=True)
class FluctuationEstimate:
    value: float
    stderr: float
    smearing: float
    snapshots: int
    self_energy: float

    def to_dict(self) -> dict:
        return asdict(self)


def fluctuation_functional(positions: np.ndarray, rho: RadialDensity, l: float, table=None) -> np.ndarray:
    """D(N rho - sum_i mu_{x_i}) for each snapshot in ``positions`` (S, N, 2)."""
    pos = np.asarray(positions, dtype=float)
    if pos.ndim == 2:
        pos = pos[None]
    S, N, _ = pos.shape
    q, hv = table or smeared_potential_table(rho, l)
    d_rr = coulomb_energy(rho, rho)
    iu = np.triu_indices(N, 1)
    out = np.empty(S)
    for k in range(S):
        p = pos[k]
        r = np.hypot(p[:, 0], p[:, 1])
        cross = np.interp(r, q, hv, right=np.nan)
        far = np.isnan(cross)
        if np.any(far):
            cross[far] = newton_potential(rho, r[far])  # disc entirely beyond the grid
        d = np.hypot(p[iu[0], 0] - p[iu[1], 0], p[iu[0], 1] - p[iu[1], 1])
        pairs = 2.0 * np.sum(smeared_pair_energy(d, l))
        selfs = N * (0.25 - math.log(l))
        out[k] = N * N * d_rr - 2.0 * N * np.sum(cross) + pairs + selfs
    return out


def onsager_fluctuation(params: ModelParams, sampler: SamplerConfig, l: float | None = None,
                        rho: RadialDensity | None = None) -> FluctuationEstimate:
    """Gibbs expectation of D(N rho^MF - sum_i mu_{x_i}, same) with mu_x the unit
    charge smeared over B(x, l), l = N^{-1/2} by default."""
    N = params.N
    l = l if l is not None else 1.0 / math.sqrt(N)
    if not l > 0:
        raise DomainError("smearing radius must be > 0")
    rho = rho or mf_minimize(params).density
    chain = Chain(params, sampler)
    _, _, positions = chain.sample(collect_positions=True)
    vals = fluctuation_functional(positions, rho, l)
    mean, err = _batch_mean(vals, sampler.n_batches)
    return FluctuationEstimate(mean, err, l, int(vals.size), N * (0.25 - math.log(l)))


# ---------------------------------------------------------------- small-N free energy


@dataclass(frozen=True)
class FreeEnergyResult:
    F: float
    log_Z: float
    n_radial: int
    n_angular: int
    exact_rule: bool


def free_energy_quadrature(params: ModelParams, n_radial: int | None = None,
                           n_angular: int | None = None) -> FreeEnergyResult:
    """F_N = -T log Z_N for N <= 3 by tensor quadrature.

    Radial variables t = r^2/T use generalized Gauss-Laguerre nodes with weight
    t^a e^{-t}, a = m/(NT); angles use the trapezoid rule with the first angle
    fixed by rotation invariance. When 2/(NT) is an integer (T = 1/N gives 2)
    the remaining integrand is a polynomial and the rule is exact.
    """
    N = params.N
    if N > 3:
        raise UnsupportedError("free-energy quadrature is limited to N <= 3")
    T = params.T
    a = params.m / (N * T)
    p = 2.0 / (N * T)  # exponent on |z_i - z_j|^2
    exact = abs(p - round(p)) < 1e-12
    deg = int(round(p)) * (N - 1) if exact else 0
    nr = n_radial or (deg + 2 if exact else 48)
    K = n_angular or (4 * max(deg, 1) + 8 if exact else 64)
    t, w = special.roots_genlaguerre(nr, a)
    # per-particle measure: int r^{2a} e^{-r^2/T} r dr dtheta = T^{a+1}/2 int t^a e^{-t} dt dtheta
    log_pref = N * ((a + 1.0) * math.log(T) - math.log(2.0)) + math.log(2.0 * math.pi)
    if N == 1:
        log_z = log_pref + math.log(np.sum(w))
        return FreeEnergyResult(-T * log_z, log_z, nr, 1, exact)
    r = np.sqrt(T * t)
    theta = 2.0 * np.pi * np.arange(K) / K
    wt = 2.0 * np.pi / K
    z = r[:, None] * np.exp(1j * theta)[None, :]  # (nr, K)
    if N == 2:
        d2 = np.abs(r[:, None, None] - z[None, :, :]) ** 2  # particle 1 at angle 0
        f = d2**p
        total = np.einsum("i,j,ijk->", w, w, f) * wt
    else:
        z1 = r.astype(complex)
        d12 = np.abs(z1[:, None, None] - z[None, :, :]) ** 2  # (i, j, k2)
        d13 = d12  # same shape for the third particle
        d23 = np.abs(z[:, :, None, None] - z[None, None, :, :]) ** 2  # (j, k2, l, k3)
        f12 = d12**p
        f23 = d23**p
        # sum_i w_i sum_{j,k2} w_j f12[i,j,k2] sum_{l,k3} w_l f13[i,l,k3] f23[j,k2,l,k3]
        inner = np.einsum("l,ilm,jklm->ijk", w, d13**p, f23)
        total = np.einsum("i,j,ijk,ijk->", w, w, f12, inner) * wt * wt
    log_z = log_pref + math.log(total)
    return FreeEnergyResult(-T * log_z, log_z, nr, K, exact)


@dataclass(frozen=True)
class FreeEnergySandwich:
    N: int
    F: float
    E_MF: float
    D_MF: float
    lower_shape: float
    upper: float
    upper_product: float
    C_needed: float

    @property
    def upper_holds(self) -> bool:
        return self.F <= self.upper + 1e-10

    def to_dict(self) -> dict:
        return asdict(self)


def free_energy_sandwich(params: ModelParams, tol: float = 1e-11) -> FreeEnergySandwich:
    """F_N against N E^MF - log(N)/2 - C (below) and N E^MF - D(rho^MF, rho^MF) (above).

    ``upper_product`` is N E^MF - 2 D(rho^MF, rho^MF), the exact free energy of
    the product trial state, which F_N never exceeds. ``C_needed`` is the
    smallest C making the lower bound hold.
    """
    sol = mf_minimize(params, tol=tol)
    F = free_energy_quadrature(params).F
    d = coulomb_energy(sol.density, sol.density)
    N = params.N
    base = N * sol.energy
    lower = base - 0.5 * math.log(N)
    return FreeEnergySandwich(N, F, sol.energy, d, lower, base - d, base - 2.0 * d, lower - F)
