import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ssmfrs.amplitude import AmplitudeSpec
from ssmfrs.oracle import linear_frs_analytic, linear_ridge_frequency
from ssmfrs.ridge import (AugmentedState, Layout, adjoint_residual, build_fonc_L2, build_fonc_opt, default_scale,
                          normalize_multipliers, run_successive_L2, run_successive_opt, second_derivative_along_frc,
                          simple_bifurcation_eps, solve_multipliers, stationarity_defect)

OB, EB = (0.8, 1.2), (0.005, 0.05)


@pytest.fixture(scope="module")
def linear_l2(linear_ssm, linear_fos):
    spec = AmplitudeSpec.l2([0], name="rms")
    zp = build_fonc_L2(linear_ssm, spec, "TV", linear_fos, scale=default_scale(linear_ssm, spec, OB, EB, mode="TV",
                                                                               fos=linear_fos))
    return spec, zp, run_successive_L2(zp, 0.02, OB, EB)


@pytest.fixture(scope="module")
def linear_opt(linear_ssm, linear_fos):
    spec = AmplitudeSpec.opt(0, name="x")
    zp = build_fonc_opt(linear_ssm, spec, "TV", linear_fos,
                        scale=default_scale(linear_ssm, spec, OB, EB, with_time=True, mode="TV", fos=linear_fos))
    return spec, zp, run_successive_opt(zp, 0.02, 0.9, OB, EB)


@given(st.integers(1, 3), st.booleans(), st.data())
def test_layout_roundtrip(m, with_time, data):
    L = Layout(m, with_time)
    u = np.array(data.draw(st.lists(st.floats(-5, 5), min_size=L.n_u, max_size=L.n_u)))
    np.testing.assert_array_equal(AugmentedState.from_vector(L, u).to_vector(L), u)
    assert L.n_u == L.n_design + (3 + int(with_time)) + 2 * m
    assert L.names.index("eta_A") == L.n_design


@pytest.mark.parametrize("builder", [build_fonc_L2, build_fonc_opt])
def test_fonc_jacobian(builder, duffing_ssm, duffing_fos, rng):
    spec = AmplitudeSpec.l2([0, 1]) if builder is build_fonc_L2 else AmplitudeSpec.opt(0)
    for mode in ("TI", "TV"):
        zp = builder(duffing_ssm, spec, mode, duffing_fos)
        u = rng.standard_normal(zp.n_u) * 0.1
        u[2], u[3] = 1.02, 0.02
        assert zp.check_jacobian(u) < 1e-6


def test_linear_l2_ridge_at_closed_form_frequency(linear_l2):
    _, _, res = linear_l2
    assert len(res.curves) == 1
    c = res.curves[0]
    assert c.kind == "ridge"
    assert np.abs(c.Omega - linear_ridge_frequency(0.1)).max() <= 1e-6
    assert c.eps.min() == pytest.approx(EB[0]) and c.eps.max() == pytest.approx(EB[1])


def test_linear_opt_ridge_amplitude(linear_opt):
    _, _, res = linear_opt
    assert len(res.curves) == 1
    c = res.curves[0]
    assert np.abs(c.Omega - linear_ridge_frequency(0.1)).max() <= 1e-6
    np.testing.assert_allclose(c.amplitude, linear_frs_analytic(0.1, c.Omega, c.eps), atol=1e-9)


def test_stationarity_on_linear_ridges(linear_ssm, linear_fos, linear_l2, linear_opt):
    for spec, _, res in (linear_l2, linear_opt):
        c = res.curves[0]
        for k in range(0, len(c), 5):
            pt = dict(y=c.y[k], Omega=c.Omega[k], eps=c.eps[k], t=c.t[k] if c.t is not None else 0.0)
            assert stationarity_defect(linear_ssm, spec, pt, "TV", linear_fos) <= 1e-6


def test_step2_freezes_design_and_reaches_unit_multiplier(linear_l2):
    _, zp, res = linear_l2
    nd = zp.layout.n_design
    for br in res.step2:
        U = br.u
        assert np.abs(U[:, :nd] - U[0, :nd]).max() <= 1e-9
        assert abs(U[0, nd]) < 0.1 and U[-1, nd] == pytest.approx(1.0, abs=1e-9)


def test_trivial_multipliers_have_zero_adjoint_residual(linear_l2):
    _, zp, res = linear_l2
    u0 = res.step1[0].points[0]
    assert np.all(adjoint_residual(zp, u0) == 0.0)


def test_classification_by_curvature(linear_l2):
    _, zp, res = linear_l2
    c = res.curves[0]
    assert np.all(c.curvature < 0)
    zp1 = zp
    u = solve_multipliers(zp1, c.u[len(c) // 2])
    assert second_derivative_along_frc(zp1, u) < 0


def test_normalize_multipliers():
    L = Layout(1, False)
    u = np.arange(1.0, L.n_u + 1)
    v = normalize_multipliers(L, u)
    assert v[L.n_design] == 1.0
    np.testing.assert_array_equal(v[: L.n_design], u[: L.n_design])
    with pytest.raises(ZeroDivisionError):
        normalize_multipliers(L, np.zeros(L.n_u))


def test_pipelines_validate_inputs(linear_l2, linear_opt):
    _, zp_l2, _ = linear_l2
    _, zp_opt, _ = linear_opt
    with pytest.raises(ValueError):
        run_successive_L2(zp_l2, 1.0, OB, EB)
    with pytest.raises(ValueError):
        run_successive_L2(zp_opt, 0.02, OB, EB)
    with pytest.raises(ValueError):
        run_successive_opt(zp_l2, 0.02, 0.9, OB, EB)


def test_beam_opt_pipeline_finds_simple_bifurcation(beam5):
    mech, fos, ssm = beam5
    from ssmfrs.mech import beam_tip_index
    spec = AmplitudeSpec.opt(beam_tip_index(mech), name="w")
    Ob, Eb = (6.96, 7.04), (1e-4, 0.01)
    zp = build_fonc_opt(ssm, spec, "TI", fos, scale=default_scale(ssm, spec, Ob, Eb, with_time=True))
    res = run_successive_opt(zp, 0.000855, 7.0005, Ob, Eb)
    merges = simple_bifurcation_eps(res)
    assert len(merges) == 1 and merges[0] == pytest.approx(1.802e-3, rel=0.01)
    kinds = sorted(c.kind for c in res.curves)
    assert kinds == ["ridge", "trench"]
    for c in res.curves:
        for k in range(0, len(c), 6):
            pt = dict(y=c.y[k], Omega=c.Omega[k], eps=c.eps[k], t=c.t[k])
            assert stationarity_defect(ssm, spec, pt, "TI", fos) <= 1e-6
