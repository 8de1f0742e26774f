import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lllplasma.errors import ConvergenceError, DomainError, UnboundedError
from lllplasma.meanfield import (
    calibrate_decay,
    coulomb_distance,
    decay_envelope,
    electrostatic_profile,
    functional_energies,
    mf_minimize,
    optimal_vortex,
    potential_W,
    thermal_density,
    thermal_partition_log,
    thermal_profile,
    tv_distance,
)
from lllplasma.params import ModelParams
from lllplasma.radial_measures import RadialDensity, newton_potential


@pytest.fixture(scope="module")
def sol1():
    return mf_minimize(ModelParams(N=1), tol=1e-11)


def test_potential_W():
    p = ModelParams(N=4, m=8)
    assert potential_W(p, 1.0) == 1.0
    assert potential_W(p, 2.0) == pytest.approx(4 - 4 * math.log(2))
    assert potential_W(p, 0.0) == math.inf
    assert potential_W(ModelParams(N=4), 0.0) == 0.0
    with pytest.raises(DomainError):
        potential_W(p, -1.0)


@pytest.mark.parametrize("N,m", [(10, 0), (10, 25), (100, 100)])
def test_electrostatic_profile(N, m):
    p = ModelParams(N=N, m=m)
    rho = electrostatic_profile(p)
    assert rho.total_mass == pytest.approx(1.0, abs=1e-12)
    bulk = (rho.r > p.inner_radius + 0.01) & (rho.r < p.outer_radius - 0.01)
    np.testing.assert_allclose(rho.values[bulk], 1 / (2 * math.pi), rtol=1e-12)
    assert np.all(rho.values[rho.r > p.outer_radius + 0.01] == 0)


def test_electrostatic_energy_closed_form():
    # E_el(rho_el) at m = 0: int r^2 rho = 1, D = 1/4 - log(2)/2; the partially
    # covered edge cell costs O(dr^2)
    f = functional_energies(ModelParams(N=10), electrostatic_profile(ModelParams(N=10)))
    assert f.potential == pytest.approx(1.0, abs=1e-5)
    assert f.coulomb == pytest.approx(0.25 - 0.5 * math.log(2), abs=1e-5)
    assert f.E_el == pytest.approx(1.5 - math.log(2), abs=1e-5)


@pytest.mark.parametrize("N,m", [(1, 0), (2, 3), (5, 7)])
def test_thermal_density_closed_form(N, m):
    p = ModelParams(N=N, m=m)
    r = np.linspace(0.05, 3, 40)
    ref = N ** (m + 1) * r ** (2 * m) * np.exp(-N * r * r) / (math.pi * math.factorial(m))
    np.testing.assert_allclose(thermal_density(p, r), ref, rtol=1e-11)
    assert thermal_partition_log(p) == pytest.approx(math.log(math.pi * math.factorial(m) / N ** (m + 1)))


def test_thermal_profile_mass_and_mean():
    p = ModelParams(N=30, m=90000)
    rho = thermal_profile(p)
    assert rho.total_mass == pytest.approx(1.0, abs=1e-9)
    # <r^2> = (m + 1)/N for the Gamma law in r^2
    mean_r2 = np.sum(rho.grid.cell_average(lambda r: r * r) * rho.cell_masses)
    assert mean_r2 == pytest.approx((p.m + 1) / p.N, rel=1e-9)


def test_euler_lagrange_residual(sol1):
    # W + 4 h_rho + T log rho is constant where rho is not negligible
    rho = sol1.density
    r = rho.r
    keep = rho.values > 1e-6
    phi = r[keep] ** 2 + 4 * newton_potential(rho, r[keep]) + np.log(rho.values[keep])
    assert np.ptp(phi) < 1e-3
    assert sol1.residual <= 1e-11
    assert sol1.history[-1] == sol1.residual


def test_minimizer_beats_reference_profiles(sol1):
    p = ModelParams(N=1)
    e = sol1.energy
    assert e <= functional_energies(p, thermal_profile(p, sol1.density.grid)).E_MF + 1e-12
    assert e == pytest.approx(-1.669965, abs=1e-6)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-0.3, 0.3), b=st.floats(0.2, 2.5), w=st.floats(0.1, 1.0))
def test_minimizer_is_local_minimum(sol1, a, b, w):
    p = ModelParams(N=1)
    rho = sol1.density
    bump = 1 + a * np.exp(-((rho.r - b) / w) ** 2)
    trial = RadialDensity.from_unnormalized(rho.grid, rho.values * bump)
    assert functional_energies(p, trial).E_MF >= sol1.energy - 1e-12


def test_meanfield_approaches_electrostatic():
    d = []
    for N in (25, 50):
        p = ModelParams(N=N)
        s = mf_minimize(p)
        d.append(coulomb_distance(s.density, electrostatic_profile(p, s.density.grid)))
    assert 0 < d[1] < d[0]


def test_meanfield_approaches_thermal():
    p = ModelParams(N=10, m=10**6)
    s = mf_minimize(p)
    assert tv_distance(s.density, thermal_profile(p, s.density.grid)) < 0.02


def test_convergence_error_carries_history():
    with pytest.raises(ConvergenceError) as exc:
        mf_minimize(ModelParams(N=50), max_iter=3, stall_limit=1000)
    assert len(exc.value.history) == 3


def test_decay_envelope_dominates(sol1):
    p = ModelParams(N=1)
    c = calibrate_decay(p, sol1.density)
    env = decay_envelope(p, sol1.density.r, c)
    far = np.isfinite(env)
    assert far.any()
    assert np.all(sol1.density.values[far] <= env[far] * (1 + 1e-9))
    assert math.isnan(decay_envelope(p, 0.0, c))


def test_optimal_vortex_regimes():
    k, N = 1e-3, 20
    assert optimal_vortex(ModelParams(N=N, omega=1.0, k=k)) == 0
    assert optimal_vortex(ModelParams(N=N, omega=-2 * k * N, k=k)) == 0
    assert optimal_vortex(ModelParams(N=N, omega=-4 * k * N, k=k)) == N
    with pytest.raises(UnboundedError):
        optimal_vortex(ModelParams(N=N, omega=-1.0))


def test_regime_monotonicity():
    N = 10
    el = []
    # electrostatic side only; past m = N^2 the annulus thins and D is not monotone
    for m in (100, 30, 10, 0):
        p = ModelParams(N=N, m=m)
        s = mf_minimize(p)
        el.append(coulomb_distance(s.density, electrostatic_profile(p, s.density.grid)))
    th = []
    for m in (100, 1000, 10**4, 10**5):
        p = ModelParams(N=N, m=m)
        s = mf_minimize(p)
        th.append(tv_distance(s.density, thermal_profile(p, s.density.grid)))
    assert np.all(np.diff(el) < 0), el
    assert np.all(np.diff(th) < 0), th
