import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ssmfrs.frs import polar_coefficients
from ssmfrs.mech import assemble_first_order, build_duffing
from ssmfrs.rom import load_rom, save_rom
from ssmfrs.ssm import (check_spectral_quotient, compute_autonomous_ssm, compute_nonautonomous_correction,
                        invariance_residual)


def _slope(fos, ssm, radii=np.geomspace(1e-3, 1e-1, 9)):
    phase = np.exp(0.3j)
    res = [invariance_residual(fos, ssm, np.full(ssm.m, r * phase)) for r in radii]
    return np.polyfit(np.log(radii), np.log(res), 1)[0]


def test_linear_model_is_exact(linear_fos, linear_ssm):
    assert all(sum(c) + sum(d) == 1 for (c, d), _ in linear_ssm.R)
    q = np.array([0.2 - 0.1j])
    assert invariance_residual(linear_fos, linear_ssm, q) < 1e-14


@pytest.mark.parametrize("order", [3, 5, 7])
def test_duffing_residual_order(duffing_fos, order):
    ssm = compute_autonomous_ssm(duffing_fos, order=order)
    assert _slope(duffing_fos, ssm) >= order - 0.2


def test_duffing_backbone_coefficient():
    # x'' + x + kappa x^3: frequency shift 3 kappa a^2 / 8 with a = 2 |q|
    for kappa in (0.5, 2.0):
        ssm = compute_autonomous_ssm(assemble_first_order(build_duffing(zeta=1e-3, kappa=kappa)), order=3)
        _, g = polar_coefficients(ssm)
        assert abs(g[1].imag - 1.5 * kappa) < 1e-3 * kappa


def test_reduced_dynamics_is_real_and_resonant(beam5):
    _, _, ssm = beam5
    ssm.validate()


def test_rom_file_roundtrip(tmp_path, duffing_ssm):
    save_rom(duffing_ssm, tmp_path / "rom.json")
    back = load_rom(tmp_path / "rom.json")
    q = np.array([0.05 + 0.02j])
    np.testing.assert_allclose(back.W.eval(q, q.conj()), duffing_ssm.W.eval(q, q.conj()), rtol=1e-14)
    np.testing.assert_allclose(back.R.eval(q, q.conj()), duffing_ssm.R.eval(q, q.conj()), rtol=1e-14)


def test_rom_file_rejects_missing_fields(tmp_path):
    (tmp_path / "bad.json").write_text('{"m": 1}')
    with pytest.raises(ValueError):
        load_rom(tmp_path / "bad.json")


@settings(max_examples=10, deadline=None)
@given(st.floats(0.8, 1.2))
def test_forced_correction_solves_bordered_system(duffing_fos, duffing_ssm, Omega):
    corr = compute_nonautonomous_correction(duffing_fos, duffing_ssm, Omega)
    assert corr.residual < 1e-12
    # no component along the resonant master direction
    assert abs(duffing_ssm.U_E[:, 0].conj() @ duffing_fos.B @ corr.x0) < 1e-12
    h = 1e-6
    lo = compute_nonautonomous_correction(duffing_fos, duffing_ssm, Omega - h, derivatives=False).x0
    hi = compute_nonautonomous_correction(duffing_fos, duffing_ssm, Omega + h, derivatives=False).x0
    np.testing.assert_allclose(corr.dx0, (hi - lo) / (2 * h), rtol=1e-5, atol=1e-9)


def test_spectral_quotient_report(beam5):
    from ssmfrs.mech import eigenpairs
    _, fos, _ = beam5
    rep = check_spectral_quotient(eigenpairs(fos), (0, 1))
    assert rep["sigma"] is not None and rep["sigma"] >= 5


def test_order_must_be_positive(duffing_fos):
    with pytest.raises(ValueError):
        compute_autonomous_ssm(duffing_fos, order=0)
