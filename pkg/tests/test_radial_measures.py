import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from lllplasma.errors import DomainError, GridMismatchError, MassError, SingularSupportError
from lllplasma.radial_measures import (
    RadialDensity,
    RadialGrid,
    SignedRadialMeasure,
    coulomb_energy,
    grid_from_nodes,
    newton_potential,
    read_profile_csv,
    relative_entropy,
    smeared_charge_correction,
    total_variation,
    write_profile_csv,
)


def disc(grid, R):
    """Uniform unit mass on B(0, R) with R on a cell edge."""
    vals = np.where(grid.nodes < R, 1.0 / (math.pi * R * R), 0.0)
    return RadialDensity(grid, vals)


GRID = RadialGrid(r_max=4.0, n_bins=400)


def test_grid_geometry():
    g = RadialGrid(r_max=2.0, n_bins=8)
    assert g.nodes[0] == pytest.approx(0.125)
    assert g.areas.sum() == pytest.approx(4.0 * math.pi, rel=1e-14)
    avg = g.cell_average(lambda r: r * r)
    exact = 0.5 * math.pi * np.diff(g.edges**4) / g.areas
    np.testing.assert_allclose(avg, exact, rtol=1e-13)


@pytest.mark.parametrize("kw", [dict(r_max=0.0), dict(r_max=1.0, n_bins=1), dict(r_max=1.0, r_min=2.0)])
def test_grid_rejects_bad_input(kw):
    with pytest.raises(DomainError):
        RadialGrid(**kw)


def test_newton_potential_of_uniform_disc():
    R = 2.0
    rho = disc(GRID, R)
    r = np.array([0.0, 0.3, 1.0, 1.9, 2.0, 3.0, 3.99, 10.0])
    inside = -math.log(R) + (R * R - r * r) / (2 * R * R)
    expected = np.where(r <= R, inside, -np.log(np.maximum(r, 1e-300)))
    np.testing.assert_allclose(newton_potential(rho, r), expected, atol=1e-12)


def test_newton_potential_rejects_negative_radius():
    with pytest.raises(DomainError):
        newton_potential(disc(GRID, 1.0), -0.1)


def test_coulomb_energy_of_disc():
    # -log R + 1/4 for the uniform unit disc
    for R in (0.5, 1.0, 2.0):
        assert coulomb_energy(disc(GRID, R), disc(GRID, R)) == pytest.approx(-math.log(R) + 0.25, abs=1e-12)


def test_coulomb_energy_matches_potential_integral():
    g = RadialGrid(r_max=3.0, n_bins=300)
    rho = RadialDensity.from_unnormalized(g, np.exp(-g.nodes**2))
    nu = RadialDensity.from_unnormalized(g, g.nodes**2 * np.exp(-2 * g.nodes**2))
    # D(rho, nu) = int h_nu rho; quadrature of the exact potential at fine points
    r = np.linspace(0, 3, 30001)
    h = newton_potential(nu, r)
    dens = np.interp(r, g.nodes, rho.values)
    direct = integrate.trapezoid(h * dens * 2 * np.pi * r, r)
    assert coulomb_energy(rho, nu) == pytest.approx(direct, rel=2e-3)


vals = st.lists(st.floats(-1.0, 1.0, allow_nan=False), min_size=12, max_size=12)


@settings(max_examples=60, deadline=None)
@given(a=vals, b=vals)
def test_coulomb_symmetric_and_neutral_positive(a, b):
    g = RadialGrid(r_max=2.0, n_bins=12)
    mu = SignedRadialMeasure(g, a)
    nu = SignedRadialMeasure(g, b)
    assert coulomb_energy(mu, nu) == pytest.approx(coulomb_energy(nu, mu), abs=1e-12)
    # neutral measures have nonnegative Coulomb energy
    neutral = SignedRadialMeasure(g, np.array(a) - mu.total_mass / g.areas.sum())
    assert coulomb_energy(neutral, neutral) >= -1e-12


@settings(max_examples=60, deadline=None)
@given(a=st.lists(st.floats(0.0, 1.0), min_size=10, max_size=10),
       b=st.lists(st.floats(0.01, 1.0), min_size=10, max_size=10))
def test_pinsker_and_tv_range(a, b):
    g = RadialGrid(r_max=1.0, n_bins=10)
    if sum(a) == 0:
        a = [1.0] * 10
    mu = RadialDensity.from_unnormalized(g, a)
    nu = RadialDensity.from_unnormalized(g, b)
    tv = total_variation(mu - nu)
    assert 0.0 <= tv <= 2.0 + 1e-12
    assert relative_entropy(mu, nu) >= 0.5 * tv * tv - 1e-12


def test_relative_entropy_singular_support():
    g = RadialGrid(r_max=1.0, n_bins=4)
    mu = RadialDensity.from_unnormalized(g, [1, 1, 1, 1])
    nu = RadialDensity.from_unnormalized(g, [1, 1, 0, 1])
    with pytest.raises(SingularSupportError):
        relative_entropy(mu, nu)


def test_mass_and_grid_checks():
    g = RadialGrid(r_max=1.0, n_bins=4)
    with pytest.raises(MassError):
        RadialDensity(g, [1, 1, 1, 1])
    with pytest.raises(DomainError):
        RadialDensity(g, [-1, 1, 1, 1])
    with pytest.raises(GridMismatchError):
        disc(GRID, 1.0) - RadialDensity.from_unnormalized(g, [1, 1, 1, 1])


def test_smeared_charge_correction_flat_density():
    # constant density c around the disc: c * pi l^2 / 4
    rho = disc(GRID, 2.0)
    c = 1 / (4 * math.pi)
    assert smeared_charge_correction(rho, 0.1, x=0.5) == pytest.approx(c * math.pi * 0.01 / 4, rel=1e-6)
    assert smeared_charge_correction(rho, 0.1, x=3.0) == 0.0


def test_smeared_charge_correction_against_dblquad():
    g = RadialGrid(r_max=3.0, n_bins=600)
    rho = RadialDensity.from_unnormalized(g, np.exp(-g.nodes**2))
    l, x = 0.3, 0.4
    # oracle uses the continuous Gaussian; the grid version differs by O(dr^2)

    def integrand(s, phi):
        px, py = x + s * math.cos(phi), s * math.sin(phi)
        dens = math.exp(-(px * px + py * py)) / math.pi
        return dens * (-math.log(s / l) - 0.5 * (1 - s * s / (l * l))) * s

    ref, _ = integrate.dblquad(integrand, 0, 2 * math.pi, 0, l, epsabs=1e-10)
    assert smeared_charge_correction(rho, l, x) == pytest.approx(ref, rel=1e-3)


def test_csv_round_trip(tmp_path):
    g = RadialGrid(r_max=2.0, n_bins=16)
    rho = RadialDensity.from_unnormalized(g, np.exp(-g.nodes))
    path = tmp_path / "rho.csv"
    rho.to_csv(path)
    first = path.read_text().splitlines()[0]
    assert first.startswith("# lllplasma-csv v1")
    back = RadialDensity.from_csv(path)
    assert back.grid.compatible(g)
    np.testing.assert_array_equal(back.values, rho.values)
    write_profile_csv(tmp_path / "two.csv", g.nodes, {"a": g.nodes, "b": 2 * g.nodes})
    r, cols = read_profile_csv(tmp_path / "two.csv")
    np.testing.assert_array_equal(cols[1], 2 * g.nodes)


def test_grid_from_nodes_rejects_irregular():
    with pytest.raises(DomainError):
        grid_from_nodes([0.1, 0.2, 0.5])
    assert grid_from_nodes([0.05, 0.15, 0.25]).r_min == 0.0


@settings(max_examples=20, deadline=None)
@given(a=st.lists(st.floats(0.05, 1.0), min_size=6, max_size=6), R=st.floats(0.2, 5.0))
def test_dilation_law(a, R):
    g = RadialGrid(r_max=2.0, n_bins=6)
    rho = RadialDensity.from_unnormalized(g, a)
    big = RadialGrid(r_max=2.0 * R, n_bins=6)
    dil = RadialDensity(big, rho.values / R**2)
    assert coulomb_energy(dil, dil) == pytest.approx(coulomb_energy(rho, rho) - math.log(R), abs=1e-9)


@settings(max_examples=6, deadline=None)
@given(a=st.lists(st.floats(0.1, 1.0), min_size=4, max_size=4), x=st.floats(0.05, 2.5))
def test_newton_potential_against_2d_quadrature(a, x):
    g = RadialGrid(r_max=2.0, n_bins=4)
    rho = RadialDensity.from_unnormalized(g, a)
    total = 0.0
    for c, lo, hi in zip(rho.values, g.edges[:-1], g.edges[1:]):
        def radial(s):
            ang = integrate.quad(lambda t: math.log(abs(x - s * complex(math.cos(t), math.sin(t)))),
                                 0, math.pi, points=[0.0], limit=200, epsabs=1e-13)[0]
            return 2.0 * ang * s
        pts = [x] if lo < x < hi else None
        total -= c * integrate.quad(radial, lo, hi, points=pts, limit=200, epsabs=1e-12)[0]
    assert newton_potential(rho, x) == pytest.approx(total, rel=1e-6, abs=1e-9)
