import numpy as np
import pytest

from ssmfrs.amplitude import AmplitudeSpec
from ssmfrs.mech import (assemble_first_order, beam_tip_index, build_beam_model, build_duffing,
                         build_duffing_chain, build_linear_oscillator)
from ssmfrs.ssm import compute_autonomous_ssm


@pytest.fixture(scope="session")
def linear_fos():
    return assemble_first_order(build_linear_oscillator(0.1))


@pytest.fixture(scope="session")
def linear_ssm(linear_fos):
    return compute_autonomous_ssm(linear_fos, order=3)


@pytest.fixture(scope="session")
def duffing_fos():
    return assemble_first_order(build_duffing(zeta=0.05, kappa=0.5))


@pytest.fixture(scope="session")
def duffing_ssm(duffing_fos):
    return compute_autonomous_ssm(duffing_fos, order=5)


@pytest.fixture(scope="session")
def chain_fos():
    return assemble_first_order(build_duffing_chain())


@pytest.fixture(scope="session")
def chain_ssm(chain_fos):
    return compute_autonomous_ssm(chain_fos, master_indices=(0, 1, 2, 3), order=3)


@pytest.fixture(scope="session")
def beam5():
    mech = build_beam_model(n_elements=5)
    fos = assemble_first_order(mech)
    return mech, fos, compute_autonomous_ssm(fos, order=5)


@pytest.fixture(scope="session")
def beam5_tip(beam5):
    mech, _, _ = beam5
    return AmplitudeSpec.l2([beam_tip_index(mech)], name="tip")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
