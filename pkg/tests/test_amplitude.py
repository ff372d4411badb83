import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ssmfrs.amplitude import (AmplitudeSpec, amp_L2, amp_opt, amplitude_jet, assemble_harmonics, grad_amp_L2,
                              grad_amp_opt, peak_time)
from ssmfrs.rom import SlowState, find_fixed_point


def _fd_gradient(spec, ssm, s, mode, fos, t=0.0, step=1e-6):
    m2 = 2 * ssm.m
    v = np.r_[s.coords, s.Omega, s.eps, t]
    g = np.zeros(v.size)
    for k in range(v.size):
        vals = []
        for sg in (1, -1):
            w = v.copy()
            w[k] += sg * step
            st_ = SlowState(w[:m2], w[m2], w[m2 + 1], s.polar)
            vals.append(amplitude_jet(spec, ssm, st_, mode, t=w[m2 + 2], fos=fos)[0])
        g[k] = (vals[0] - vals[1]) / (2 * step)
    return g


@settings(max_examples=25, deadline=None)
@given(st.floats(0.02, 0.3), st.floats(-3, 3), st.floats(0.9, 1.1), st.floats(0, 0.05),
       st.sampled_from(["TI", "TV"]), st.booleans(), st.sampled_from(["L2", "OPT"]), st.floats(0, 6))
def test_amplitude_gradient_matches_finite_differences(duffing_ssm, duffing_fos, rho, theta, Omega, eps, mode,
                                                       polar, kind, t):
    spec = AmplitudeSpec.l2([0, 1]) if kind == "L2" else AmplitudeSpec.opt(0)
    s = SlowState([rho, theta], Omega, eps, polar=True)
    s = s if polar else s.to_cartesian()
    _, g, _ = amplitude_jet(spec, duffing_ssm, s, mode, t=t, fos=duffing_fos)
    fd = _fd_gradient(spec, duffing_ssm, s, mode, duffing_fos, t)
    np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-8 * max(1.0, np.abs(g).max()))


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(-0.1, 0.1), min_size=2, max_size=2), st.floats(0.9, 1.1), st.floats(1e-3, 0.05),
       st.sampled_from(["TI", "TV"]), st.floats(0, 6))
def test_amplitude_hessian_matches_finite_differences(duffing_ssm, duffing_fos, y, Omega, eps, mode, t):
    spec = AmplitudeSpec.opt(0)
    s = SlowState(y, Omega, eps)
    _, _, H = amplitude_jet(spec, duffing_ssm, s, mode, t=t, second=True, fos=duffing_fos)
    step = 1e-5
    v = np.r_[y, Omega, eps, t]
    for k in range(v.size):
        gs = []
        for sg in (1, -1):
            w = v.copy()
            w[k] += sg * step
            gs.append(amplitude_jet(spec, duffing_ssm, SlowState(w[:2], w[2], w[3]), mode, t=w[4],
                                    fos=duffing_fos)[1])
        np.testing.assert_allclose(H[:, k], (gs[0] - gs[1]) / (2 * step), atol=1e-6)


def test_l2_amplitude_is_rms_of_linear_response(linear_ssm, linear_fos):
    fp = find_fixed_point(linear_ssm, 1.0, 0.02)
    harm = assemble_harmonics(linear_ssm, fp.state, mode="TV", fos=linear_fos)
    assert amp_L2(AmplitudeSpec.l2([0]), harm) == pytest.approx(0.1 / np.sqrt(2), rel=1e-10)


def test_peak_time_maximizes_coordinate(linear_ssm, linear_fos):
    fp = find_fixed_point(linear_ssm, 0.95, 0.02)
    spec = AmplitudeSpec.opt(0)
    harm = assemble_harmonics(linear_ssm, fp.state, mode="TV", fos=linear_fos)
    tp = peak_time(spec, harm, 0.95)
    grid = np.linspace(0, 2 * np.pi / 0.95, 2000)
    assert amp_opt(spec, harm, 0.95, tp) >= max(amp_opt(spec, harm, 0.95, tt) for tt in grid) - 1e-12


def test_gradient_helpers_check_kind(duffing_ssm):
    s = SlowState([0.1, 0.0], 1.0, 0.01)
    with pytest.raises(ValueError):
        grad_amp_L2(AmplitudeSpec.opt(0), duffing_ssm, s)
    with pytest.raises(ValueError):
        grad_amp_opt(AmplitudeSpec.l2([0]), duffing_ssm, s)


@pytest.mark.parametrize("kwargs", [dict(kind="XX", indices=(0,)), dict(kind="OPT", indices=(0, 1)),
                                    dict(kind="L2", indices=(0, 1), Q=np.eye(3))])
def test_invalid_specs(kwargs):
    with pytest.raises(ValueError):
        AmplitudeSpec(**kwargs)
