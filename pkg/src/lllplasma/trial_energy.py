"""Energies of quasi-hole trial states, energy bounds and the vortex phase diagram.

In scaled coordinates the trial-state energy is

    E[Psi_m] = N^2 int (omega r^2 + k N r^4) mu_N^(1),

and replacing mu_N^(1) by the flat profile gives the closed-form main term.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate

from .errors import DomainError, IntegrityError, UnboundedError
from .meanfield import (
    DecayConstants,
    calibrate_decay,
    decay_envelope,
    electrostatic_profile,
    mf_minimize,
    optimal_vortex,
    thermal_profile,
)
from .params import ModelParams
from .plasma_mc import Chain, DensityEstimate, SamplerConfig, estimation_grid

ENVELOPE_SIGMAS = 3.0


def trial_momentum(N: int, m: int) -> int:
    """Total degree N(N-1) + N m of the quasi-hole polynomial."""
    if N < 1 or m < 0:
        raise DomainError("need N >= 1 and m >= 0")
    return N * (N - 1) + N * m


def main_term_energy(params: ModelParams, m: float) -> float:
    """omega N^2 (1 + m/N) + k N^3 (4/3 + 2m/N + m^2/N^2)."""
    N, w, k = params.N, params.omega, params.k
    x = m / N
    return w * N**2 * (1.0 + x) + k * N**3 * (4.0 / 3.0 + 2.0 * x + x * x)


def lower_bound_e(params: ModelParams, L: int) -> float:
    """e(L) = (omega + 3k) L + k L^2 / N, a lower bound on the one-body part of
    the energy at angular momentum L (sharp when N divides L)."""
    if L < 0:
        raise DomainError("L must be >= 0")
    return (params.omega + 3.0 * params.k) * L + params.k * L * L / params.N


def energy_lower_bound(params: ModelParams, L: int) -> float:
    """N(omega + 2k) + e(L): the full potential energy bound at momentum L."""
    return params.N * (params.omega + 2.0 * params.k) + lower_bound_e(params, L)


def _smoothstep(x):
    """C-infinity step from 0 (x <= 0) to 1 (x >= 1) and its complement."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    s = a + b
    return a / s, b / s


@dataclass(frozen=True)
class CutoffPair:
    """Smooth radial cut-offs with chi_in = 1 for r <= inner, 0 for r >= outer,
    and chi_in + chi_out = 1."""

    inner: float
    outer: float

    def __post_init__(self):
        if not 0 <= self.inner < self.outer:
            raise DomainError("need 0 <= inner < outer")

    @property
    def width(self) -> float:
        return self.outer - self.inner

    def chi_in(self, r):
        return _smoothstep((np.asarray(r, dtype=float) - self.inner) / self.width)[1]

    def chi_out(self, r):
        return _smoothstep((np.asarray(r, dtype=float) - self.inner) / self.width)[0]

    @classmethod
    def for_params(cls, params: ModelParams, constants: DecayConstants | None = None,
                   c: float = 1.0) -> "CutoffPair":
        """Inner edge past the bulk by c sqrt(log N / N); the transition spans one
        decade of the decay envelope."""
        N = params.N
        rate = (constants or DecayConstants(rate=1.0, prefactor=1.0)).rate
        if params.is_thermal:
            edge = params.r_opt + 3.0 * math.sqrt(params.T / 4.0)
        else:
            edge = params.outer_radius
        inner = edge + c * math.sqrt(max(math.log(N), 1.0) / N)
        d_in = inner - params.r_opt
        d_out = math.sqrt(d_in * d_in + math.log(10.0) / (rate * N))
        return cls(inner, params.r_opt + d_out)


def potential_V(params: ModelParams, r):
    """omega r^2 + k N r^4."""
    r = np.asarray(r, dtype=float)
    return params.omega * r * r + params.k * params.N * r**4


@dataclass
class EnergyReport:
    m: int
    L: int
    main_term: float
    mc_term: float
    stderr: float
    terms: tuple
    cutoff_error: float
    lower_bound: float
    upper_bound_case: str
    source: str
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _tail_integral(params, cut, constants):
    """N^2 int chi_out |V| envelope, the bound on the exterior term."""
    r = np.linspace(cut.inner, cut.inner + 20.0 + 10.0 * cut.width, 20001)
    env = np.nan_to_num(decay_envelope(params, r, constants), nan=0.0)
    f = cut.chi_out(r) * np.abs(potential_V(params, r)) * env * 2.0 * np.pi * r
    return float(params.N**2 * integrate.trapezoid(f, r))


def evaluate_trial_energy(params: ModelParams, m: int | None = None, sampler: SamplerConfig | None = None,
                          estimate: DensityEstimate | None = None) -> EnergyReport:
    """Energy of the quasi-hole state of degree m (default params.m).

    With a sampler (or a ready estimate) the energy is the Monte Carlo value of
    N^2 int V mu_N^(1), split as chi_in V rho + chi_in V (mu - rho) + chi_out V mu
    with rho the regime profile. Without one it falls back to N^2 int V rho.
    """
    m = params.m if m is None else int(m)
    p = params.replace(m=m)
    N = p.N
    L = trial_momentum(N, m)
    sol = mf_minimize(p, tol=1e-9)
    constants = calibrate_decay(p, sol.density)
    cut = CutoffPair.for_params(p, constants)
    rho = thermal_profile(p) if p.is_thermal else electrostatic_profile(p)
    g = rho.grid
    vin = g.cell_average(lambda r: cut.chi_in(r) * potential_V(p, r))
    vout = g.cell_average(lambda r: cut.chi_out(r) * potential_V(p, r))
    t1 = N**2 * float(np.sum(vin * rho.cell_masses))
    tail = _tail_integral(p, cut, constants)
    main = main_term_energy(p, m)
    case = upper_bound(p).case
    low = energy_lower_bound(p, L)
    if sampler is None and estimate is None:
        t3 = N**2 * float(np.sum(vout * rho.cell_masses))
        total = t1 + t3
        return EnergyReport(m, L, main, total, 0.0, (t1, 0.0, t3), tail, low, case, "mean-field")

    if estimate is None:
        chain = Chain(p, sampler)
        estimate, _, _ = chain.sample(estimation_grid(p))
    # exact per-particle moments from the chain give an unbiased total
    bm = estimate.batch_moments / (N * estimate.batch_snapshots[:, None])
    per_batch = N**2 * (p.omega * bm[:, 0] + p.k * N * bm[:, 1])
    r2, _ = estimate.moment(1)
    r4, _ = estimate.moment(2)
    total = N**2 * (p.omega * r2 + p.k * N * r4)
    err = float(np.sort(per_batch).std(ddof=1) / math.sqrt(per_batch.size))
    eg = estimate.grid
    dens = estimate.density
    masses = dens * eg.areas
    t3 = N**2 * float(np.sum(eg.cell_average(lambda r: cut.chi_out(r) * potential_V(p, r)) * masses))
    t2 = total - t1 - t3

    # the sampled tail must sit under the (loosened) envelope
    loose = DecayConstants(rate=0.5 * constants.rate, prefactor=10.0 * constants.prefactor,
                           width_factor=constants.width_factor)
    env = decay_envelope(p, eg.nodes, loose)
    outside = (eg.nodes >= cut.outer) & ~estimate.undersampled & np.isfinite(env)
    excess = dens[outside] - (env[outside] + ENVELOPE_SIGMAS * estimate.stderr[outside])
    if np.any(excess > 0):
        raise IntegrityError("sampled density exceeds the decay envelope beyond the cut-off: sample longer")
    diag = dict(estimate.diagnostics)
    diag["decay_constants"] = constants.to_dict()
    diag["cutoff"] = {"inner": cut.inner, "outer": cut.outer}
    return EnergyReport(m, L, main, total, err, (t1, t2, t3), tail, low, case, "monte-carlo", diag)


@dataclass(frozen=True)
class UpperBound:
    case: str
    value: float | None
    candidates: tuple
    condition: str
    o1_caveat: bool


def upper_bound(params: ModelParams) -> UpperBound:
    """Trial-state energy upper bound and the regime it belongs to.

    Regimes: omega >= -2kN; omega < -2kN with |omega| <= k N^{7/5} log N;
    |omega| >= k N^{10/3}. Between the last two both candidates are returned
    under the label "unproven window" and ``value`` is None.
    """
    N, w, k = params.N, params.omega, params.k
    if w < 0 and k == 0:
        raise UnboundedError("omega < 0 with k = 0: energy unbounded below")
    if w >= -2.0 * k * N:
        return UpperBound("laughlin", w * N**2 + 4.0 / 3.0 * k * N**3, (), "omega >= -2kN", True)
    vortex = -N * w * w / (4.0 * k) + k * N**3 / 3.0
    giant = -N * w * w / (4.0 * k) - 1.5 * w * N
    a = abs(w)
    if a <= k * N**1.4 * math.log(N):
        return UpperBound("vortex", vortex, (), "-2kN > omega, |omega| <= k N^(7/5) log N", True)
    if a >= k * N ** (10.0 / 3.0):
        return UpperBound("giant-vortex", giant, (), "|omega| >= k N^(10/3)", True)
    return UpperBound("unproven window", None, (vortex, giant),
                      "k N^(7/5) log N < |omega| < k N^(10/3)", True)


@dataclass(frozen=True)
class PhaseRow:
    omega: float
    m_opt: int
    L: int
    main_term: float
    bound: float | None
    case: str
    regime: str


@dataclass(frozen=True)
class PhaseDiagram:
    N: int
    k: float
    rows: tuple
    laughlin_boundary: float | None
    thermal_boundary: float | None

    @property
    def closed_forms(self) -> dict:
        return {"laughlin": -2.0 * self.k * self.N, "thermal": -2.0 * self.k * (self.N**2 + self.N)}


def _transition(omegas, flags):
    """Midpoint of the first grid interval where ``flags`` changes value."""
    for i in range(1, len(flags)):
        if flags[i] != flags[i - 1]:
            return 0.5 * (omegas[i] + omegas[i - 1])
    return None


def phase_diagram(N: int, k: float, omegas, sampler: SamplerConfig | None = None) -> PhaseDiagram:
    """Tabulate m_opt, momentum, main term, upper-bound case and density regime
    along a monotone omega grid. ``sampler`` switches on Monte Carlo refinement
    of the energy at every point (slow)."""
    omegas = [float(w) for w in omegas]
    if len(omegas) > 1:
        d = np.diff(omegas)
        if not (np.all(d > 0) or np.all(d < 0)):
            raise DomainError("omega grid must be strictly monotone")
    rows = []
    for w in omegas:
        p = ModelParams(N=N, omega=w, k=k)
        m = optimal_vortex(p)
        ub = upper_bound(p)
        energy = main_term_energy(p, m)
        if sampler is not None:
            energy = evaluate_trial_energy(p, m, sampler).mc_term
        regime = "thermal" if m > N * N else "electrostatic"
        rows.append(PhaseRow(w, m, trial_momentum(N, m), energy, ub.value, ub.case, regime))
    lb = _transition(omegas, [r.m_opt > 0 for r in rows])
    tb = _transition(omegas, [r.regime == "thermal" for r in rows])
    return PhaseDiagram(N, k, tuple(rows), lb, tb)
