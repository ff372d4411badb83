import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from ssmfrs.amplitude import AmplitudeSpec
from ssmfrs.frs import frc_slice
from ssmfrs.mech import build_duffing, eigenpairs
from ssmfrs.oracle import (CollocationError, CollocationOrbit, CollocationScheme, collocation_periodic_orbit,
                           compare_with_rom, frc_full, linear_frs_analytic, linear_ridge_frequency,
                           shooting_periodic_orbit)

X = AmplitudeSpec.opt(0, name="x")


def test_linear_closed_forms():
    W = np.linspace(0.5, 1.5, 11)
    direct = 0.03 / np.abs(1 - W**2 + 0.2j * W)
    np.testing.assert_allclose(linear_frs_analytic(0.1, W, 0.03), direct, rtol=1e-14)
    assert linear_ridge_frequency(0.1) == pytest.approx(math.sqrt(0.98))
    for bad in (0.0, -0.1, 0.8):
        with pytest.raises(ValueError):
            linear_ridge_frequency(bad)
        with pytest.raises(ValueError):
            linear_frs_analytic(bad, 1.0, 0.1)


@given(st.integers(1, 7), st.floats(0, 1))
def test_lagrange_basis_partition_of_unity(degree, sigma):
    L, dL = CollocationScheme(degree, 3).basis(np.array([sigma]))
    assert L.sum() == pytest.approx(1.0, abs=1e-11)
    assert dL.sum() == pytest.approx(0.0, abs=1e-9)


def test_scheme_validation_and_mesh():
    with pytest.raises(ValueError):
        CollocationScheme(0, 10)
    sch = CollocationScheme(3, 5)
    assert sch.n_nodes == 15
    assert sch.node_index()[-1, -1] == 0  # periodic wrap
    assert np.all(np.diff(sch.times()) > 0) and sch.times()[-1] < 1


@pytest.mark.parametrize("Omega", [0.7, 0.99, 1.4])
def test_linear_orbit_matches_closed_form(linear_fos, Omega):
    orb = collocation_periodic_orbit(linear_fos, Omega, 0.02)
    assert orb.amplitude(X) == pytest.approx(float(linear_frs_analytic(0.1, Omega, 0.02)), rel=1e-8)
    assert orb.defect <= 1e-9
    t, Z = orb.sample(8)
    phase = math.atan2(0.2 * Omega, 1 - Omega**2)
    np.testing.assert_allclose(Z[:, 0], orb.amplitude(X) * np.cos(Omega * t - phase), atol=1e-9)


def test_unforced_orbit_is_zero(linear_fos):
    orb = collocation_periodic_orbit(linear_fos, 1.0, 0.0)
    assert np.abs(orb.z).max() == 0.0


def test_linear_floquet_multipliers(linear_fos):
    Omega = 1.1
    orb = collocation_periodic_orbit(linear_fos, Omega, 0.02)
    lam = eigenpairs(linear_fos).eigenvalues
    expected = np.sort_complex(np.exp(lam * 2 * np.pi / Omega))
    np.testing.assert_allclose(np.sort_complex(orb.multipliers), expected, atol=1e-8)
    assert orb.stable


def test_stability_requires_multipliers(linear_fos):
    orb = collocation_periodic_orbit(linear_fos, 1.0, 0.01, floquet=False)
    with pytest.raises(ValueError):
        orb.stable


def test_mesh_convergence_rate(duffing_fos):
    ref = collocation_periodic_orbit(duffing_fos, 1.05, 0.05, scheme=CollocationScheme(4, 160), floquet=False)
    errs = []
    for n in (10, 20):
        orb = collocation_periodic_orbit(duffing_fos, 1.05, 0.05, scheme=CollocationScheme(4, n), floquet=False)
        errs.append(abs(orb.z[0, 0] - ref.z[0, 0]))
    assert errs[0] / errs[1] >= 2**4 / 1.5


def test_shooting_converges_to_collocation(duffing_fos):
    # the trapezoidal Newmark map is second order, so halving the step quarters the gap
    mech = build_duffing(zeta=0.05, kappa=0.5)
    orb = collocation_periodic_orbit(duffing_fos, 1.05, 0.05)
    gaps = []
    for steps in (250, 500, 1000):
        x0, v0, _ = shooting_periodic_orbit(mech, 1.05, 0.05, x0=orb.z[0, :1], v0=orb.z[0, 1:], steps=steps)
        gaps.append(np.linalg.norm(np.r_[x0, v0] - orb.z[0]))
    assert gaps[0] / gaps[1] == pytest.approx(4.0, rel=0.05)
    assert gaps[1] / gaps[2] == pytest.approx(4.0, rel=0.05)
    assert gaps[2] <= 1e-4 * np.abs(orb.z).max()


def test_stable_orbit_matches_long_time_integration(duffing_fos):
    Omega, eps = 0.8, 0.02
    orb = collocation_periodic_orbit(duffing_fos, Omega, eps)
    assert orb.stable
    T = 2 * np.pi / Omega
    n_per = 60
    sol = solve_ivp(duffing_fos.rhs, (0, n_per * T), np.zeros(2), args=(Omega, eps), rtol=1e-11, atol=1e-13,
                    dense_output=True)
    t = np.linspace((n_per - 1) * T, n_per * T, 4001)
    peak = sol.sol(t)[0].max()
    assert orb.amplitude(X) == pytest.approx(peak, rel=1e-3)


def test_newton_failure_reports_defect(duffing_fos):
    bad = np.full((CollocationScheme().n_nodes, 2), 50.0)
    with pytest.raises(CollocationError, match="defect"):
        collocation_periodic_orbit(duffing_fos, 1.0, 0.05, init=bad, max_iter=2)


def test_full_linear_frc(linear_fos, tmp_path):
    frc = frc_full(linear_fos, 0.02, (0.8, 1.2), X)
    np.testing.assert_allclose(frc.amplitude, linear_frs_analytic(0.1, frc.Omega, 0.02), rtol=1e-8)
    folds = [e.u[-1] for e in frc.events if e.kind == "FOLD"]
    assert len(folds) == 1 and folds[0] == pytest.approx(linear_ridge_frequency(0.1), abs=1e-6)
    assert frc.stable.all()
    frc.to_csv(tmp_path / "frc.csv")
    rows = (tmp_path / "frc.csv").read_text().splitlines()
    assert rows[0] == "Omega,amplitude,stable" and len(rows) == frc.Omega.size + 1


def test_orbit_csv(linear_fos, tmp_path):
    orb = collocation_periodic_orbit(linear_fos, 1.0, 0.02, scheme=CollocationScheme(4, 10))
    orb.to_csv(tmp_path / "orbit.csv")
    data = np.loadtxt(tmp_path / "orbit.csv", delimiter=",", skiprows=1)
    assert data.shape == (80, 3)
    assert isinstance(orb, CollocationOrbit)


def test_rom_comparison_on_duffing(duffing_ssm, duffing_fos):
    eps = 0.02
    rom = frc_slice(duffing_ssm, duffing_fos, X, eps, (0.8, 1.3), mode="TV")
    rows = compare_with_rom(duffing_ssm, duffing_fos, rom, X, samples=10)
    assert len(rows) == 10
    for r in rows:
        assert r["full_amplitude"] == pytest.approx(r["rom_amplitude"], rel=0.02)
        assert r["rom_stable"] == r["full_stable"]
