import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special

from lllplasma.errors import DomainError, UnsupportedError
from lllplasma.params import ModelParams
from lllplasma.plasma_mc import (
    Chain,
    PlasmaConfiguration,
    SamplerConfig,
    energy_delta,
    estimate_density,
    fluctuation_functional,
    free_energy_quadrature,
    free_energy_sandwich,
    hamiltonian,
    merge_estimates,
    onsager_fluctuation,
    pair_test_function,
    smeared_pair_energy,
)
from lllplasma.radial_measures import RadialDensity, RadialGrid, coulomb_energy


def test_hamiltonian_two_points():
    p = ModelParams(N=2)
    assert hamiltonian(p, [[1, 0], [-1, 0]]) == pytest.approx(2 - 2 * math.log(2), abs=1e-14)
    assert hamiltonian(p, [[1, 0], [1, 0]]) == math.inf
    assert hamiltonian(ModelParams(N=2, m=1), [[0, 0], [1, 0]]) == math.inf


def test_hamiltonian_vortex_term():
    # single particle: W = r^2 - (m/N) log r^2
    p = ModelParams(N=1, m=3)
    assert hamiltonian(p, [[2.0, 0.0]]) == pytest.approx(4 - 3 * math.log(4))


coord = st.floats(-2.0, 2.0, allow_nan=False)


@settings(max_examples=80, deadline=None)
@given(pts=st.lists(st.tuples(coord, coord), min_size=5, max_size=5), i=st.integers(0, 4),
       new=st.tuples(coord, coord), m=st.integers(0, 6))
def test_energy_delta_matches_difference(pts, i, new, m):
    p = ModelParams(N=5, m=m)
    pos = np.array(pts)
    moved = pos.copy()
    moved[i] = new
    before, after = hamiltonian(p, pos), hamiltonian(p, moved)
    if not (math.isfinite(before) and math.isfinite(after)):
        return
    assert energy_delta(p, pos, i, new) == pytest.approx(after - before, rel=1e-9, abs=1e-9)


def test_configuration_size_checked():
    with pytest.raises(DomainError):
        PlasmaConfiguration.from_positions(ModelParams(N=3), np.zeros((2, 2)))


@pytest.mark.parametrize("kw", [dict(n_burnin=-1), dict(thinning=0), dict(n_batches=1),
                                dict(target_acceptance=1.0), dict(step_size=0.0)])
def test_sampler_validation(kw):
    with pytest.raises(DomainError):
        SamplerConfig(**kw)


def test_single_particle_gaussian():
    # N = 1, T = 1: density exp(-r^2)/pi
    p = ModelParams(N=1)
    g = RadialGrid(r_max=3.0, n_bins=30)
    est = estimate_density(p, SamplerConfig(n_samples=100_000, seed=11), g)
    e = g.edges
    exact = (np.exp(-e[:-1] ** 2) - np.exp(-e[1:] ** 2)) / g.areas
    z = np.abs(est.density - exact) / np.maximum(est.stderr, 1e-6)
    assert np.max(z) < 4.5
    r2, err = est.moment(1)
    assert abs(r2 - 1.0) < 4 * err


@pytest.mark.parametrize("N,m", [(5, 0), (5, 3), (20, 40)])
def test_second_moment_identity(N, m):
    est = estimate_density(ModelParams(N=N, m=m), SamplerConfig(n_samples=20_000, seed=N + m))
    r2, err = est.moment(1)
    assert abs(r2 - (1 + m / N)) < 4 * err + 1e-4


def test_seed_determinism_and_checkpoint(tmp_path):
    p = ModelParams(N=8, m=2)
    s = SamplerConfig(n_samples=500, n_burnin=200, seed=5)
    a = Chain(p, s)
    a.burn_in()
    a.save(tmp_path / "c.npz")
    b = Chain.load(tmp_path / "c.npz")
    ea, _, _ = a.sample()
    eb, _, _ = b.sample()
    np.testing.assert_array_equal(ea.counts, eb.counts)
    ec, _, _ = Chain(p, s).sample()
    np.testing.assert_array_equal(ea.counts, ec.counts)


def test_merge_is_order_independent():
    p = ModelParams(N=6)
    g = RadialGrid(r_max=3.0, n_bins=12)
    ests = [estimate_density(p, SamplerConfig(n_samples=400, n_burnin=100, seed=s, n_batches=4), g)
            for s in range(3)]
    a = merge_estimates(ests)
    b = merge_estimates(ests[::-1])
    np.testing.assert_array_equal(a.counts, b.counts)
    np.testing.assert_allclose(a.stderr, b.stderr, rtol=1e-14)
    assert a.n_snapshots == sum(e.n_snapshots for e in ests)


def test_free_energy_closed_forms():
    assert free_energy_quadrature(ModelParams(N=1)).F == pytest.approx(-math.log(math.pi), abs=1e-13)
    # N = 2: centre of mass and relative coordinate separate, Z = pi^2 / 2
    assert free_energy_quadrature(ModelParams(N=2)).F == pytest.approx(-0.5 * math.log(math.pi**2 / 2), abs=1e-12)


def test_free_energy_rule_is_stable():
    p = ModelParams(N=3)
    a = free_energy_quadrature(p)
    b = free_energy_quadrature(p, n_radial=a.n_radial + 4, n_angular=a.n_angular + 8)
    assert a.exact_rule
    assert a.F == pytest.approx(b.F, abs=1e-11)
    with pytest.raises(UnsupportedError):
        free_energy_quadrature(ModelParams(N=4))


def test_product_state_upper_bound():
    for N in (1, 2, 3):
        s = free_energy_sandwich(ModelParams(N=N))
        assert s.F <= s.upper_product + 1e-10
        assert s.F >= s.lower_shape - s.C_needed - 1e-12


def test_smeared_pair_energy_limits():
    l = 0.2
    d = np.array([0.4, 0.5, 3.0])
    np.testing.assert_allclose(smeared_pair_energy(d, l), -np.log(d), rtol=1e-14)
    # coincident discs: self energy of a uniform disc
    assert float(smeared_pair_energy(0.0, l)) == pytest.approx(0.25 - math.log(l), abs=1e-5)
    vals = smeared_pair_energy(np.linspace(0, 0.5, 50), l)
    assert np.all(np.diff(vals) <= 1e-12)


def test_fluctuation_functional_single_particle():
    # Gaussian rho = exp(-r^2)/pi has potential h(r) = -log r - E1(r^2)/2
    g = RadialGrid(r_max=6.0, n_bins=3000)
    e = g.edges
    rho = RadialDensity(g, (np.exp(-e[:-1] ** 2) - np.exp(-e[1:] ** 2)) / g.areas)
    h = lambda r: -math.log(r) - 0.5 * special.exp1(r * r)
    d_rr = integrate.quad(lambda r: h(r) * math.exp(-r * r) * 2 * r, 0, 8, limit=200)[0]
    assert coulomb_energy(rho, rho) == pytest.approx(d_rr, abs=1e-6)
    x, l = 0.7, 0.25
    cross = integrate.dblquad(lambda s, t: h(math.hypot(x + s * math.cos(t), s * math.sin(t))) * s,
                              0, 2 * math.pi, 0, l)[0] / (math.pi * l * l)
    expected = d_rr - 2 * cross + 0.25 - math.log(l)
    got = fluctuation_functional(np.array([[x, 0.0]]), rho, l)[0]
    assert got == pytest.approx(expected, abs=2e-4)


def test_pair_test_function_second_moment():
    p = ModelParams(N=20)
    res = pair_test_function(p, SamplerConfig(n_samples=4000, seed=1), lambda r: r * r)
    assert res.reference == pytest.approx(1.0, abs=1e-5)
    assert res.mc == pytest.approx(1.0, abs=5 * res.stderr + 1e-3)
    assert math.isfinite(res.ratio)


def test_onsager_fluctuation_small():
    est = onsager_fluctuation(ModelParams(N=8), SamplerConfig(n_samples=2000, thinning=10, seed=2))
    assert est.value > 0
    assert est.smearing == pytest.approx(8**-0.5)
    with pytest.raises(DomainError):
        onsager_fluctuation(ModelParams(N=8), SamplerConfig(n_samples=10), l=0.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), m=st.integers(0, 4))
def test_estimators_invariant_under_relabeling(seed, m):
    p = ModelParams(N=7, m=m)
    rng = np.random.default_rng(seed)
    pos = rng.normal(size=(7, 2))
    perm = rng.permutation(7)
    assert hamiltonian(p, pos[perm]) == pytest.approx(hamiltonian(p, pos), rel=1e-12)
    g = RadialGrid(r_max=4.0, n_bins=200)
    rho = RadialDensity.from_unnormalized(g, np.exp(-g.nodes**2))
    a = fluctuation_functional(pos, rho, 0.2)
    b = fluctuation_functional(pos[perm], rho, 0.2)
    assert a[0] == pytest.approx(b[0], rel=1e-12)


def test_detailed_balance_single_particle():
    # transitions between radial shells of a reversible chain are symmetric in flux
    p = ModelParams(N=1)
    _, _, pos = Chain(p, SamplerConfig(n_samples=400_000, seed=9)).sample(collect_positions=True)
    r = np.hypot(pos[:, 0, 0], pos[:, 0, 1])
    state = np.minimum((r / 0.4).astype(int), 5)
    C = np.zeros((6, 6))
    np.add.at(C, (state[:-1], state[1:]), 1)
    asym = np.max(np.abs(C - C.T)) / C.sum()
    assert asym < 1e-2
