import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ssmfrs.mech import (MechanicalSystem, assemble_first_order, beam_tip_index, build_beam_model,
                         build_duffing, build_linear_oscillator, eigenpairs, load_system, save_system)


@given(st.floats(0.01, 0.7))
def test_linear_oscillator_eigenvalues(zeta):
    lam = eigenpairs(assemble_first_order(build_linear_oscillator(zeta))).eigenvalues
    np.testing.assert_allclose(lam, [-zeta + 1j * np.sqrt(1 - zeta**2), -zeta - 1j * np.sqrt(1 - zeta**2)],
                               atol=1e-12)


def test_beam_slowest_mode_matches_reference():
    lam = eigenpairs(assemble_first_order(build_beam_model(n_elements=25)), k=2).eigenvalues
    assert abs(lam[0].real + 0.0062) < 5e-5
    assert abs(lam[0].imag - 7.0005) < 5e-4


def test_eigenvectors_are_b_orthonormal():
    fos = assemble_first_order(build_beam_model(n_elements=4))
    spec = eigenpairs(fos)
    np.testing.assert_allclose(spec.U.conj().T @ fos.B @ spec.V, np.eye(fos.N), atol=1e-9)
    assert spec.stable
    # sorted by descending real part, conjugate pairs adjacent
    assert np.all(np.diff(spec.eigenvalues.real) <= 1e-12)
    np.testing.assert_allclose(spec.eigenvalues[0::2], spec.eigenvalues[1::2].conj())


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=2, max_size=2), st.lists(st.floats(-1, 1), min_size=2, max_size=2),
       st.floats(0, 10), st.floats(0.5, 2.0), st.floats(0, 0.1))
def test_first_order_form_reproduces_second_order_dynamics(x, v, t, Omega, eps):
    mech = build_duffing(zeta=0.05, kappa=0.7)
    fos = assemble_first_order(mech)
    z = np.array([x[0], v[0]])
    acc = (eps * mech.fext[0] * np.cos(Omega * t) - mech.C[0, 0] * v[0] - mech.K[0, 0] * x[0]
           - 0.7 * x[0] ** 3) / mech.M[0, 0]
    np.testing.assert_allclose(fos.rhs(t, z, Omega, eps), [v[0], acc], rtol=1e-10, atol=1e-12)


def test_nonlinear_jacobian_matches_finite_differences(rng):
    fos = assemble_first_order(build_beam_model(n_elements=3))
    z = rng.standard_normal(fos.N) * 0.1
    J = fos.nonlinear_jacobian(z)
    h = 1e-6
    fd = np.column_stack([(fos.nonlinear_force(z + h * e) - fos.nonlinear_force(z - h * e)) / (2 * h)
                          for e in np.eye(fos.N)])
    np.testing.assert_allclose(J, fd, atol=1e-8)


def test_tip_index_and_forcing():
    mech = build_beam_model(n_elements=5)
    tip = beam_tip_index(mech)
    assert mech.fext[tip] != 0
    assert np.count_nonzero(mech.fext) == 1


def test_system_file_roundtrip(tmp_path):
    mech = build_beam_model(n_elements=3)
    save_system(mech, tmp_path / "beam.json")
    back = load_system(tmp_path / "beam.json")
    for name in ("M", "C", "K", "fext"):
        np.testing.assert_array_equal(getattr(back, name), getattr(mech, name))
    assert back.nonlinearity == mech.nonlinearity


@pytest.mark.parametrize("M,K", [
    (np.array([[1.0, 0.1], [0.0, 1.0]]), np.eye(2)),
    (np.array([[-1.0, 0.0], [0.0, 1.0]]), np.eye(2)),
    (np.eye(2), np.array([[-1.0, 0.0], [0.0, 1.0]])),
])
def test_invalid_matrices_rejected(M, K):
    with pytest.raises(ValueError):
        MechanicalSystem(M=M, C=np.zeros((2, 2)), K=K, fext=np.ones(2))


def test_linear_oscillator_rejects_overdamping():
    with pytest.raises(ValueError):
        build_linear_oscillator(0.8)
