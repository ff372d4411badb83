"""Forced response surfaces, ridges and trenches from SSM-based reduced-order models."""
from .amplitude import AmplitudeSpec
from .continuation import StepControl, ZeroProblem, atlas_2d, continue_1d
from .frs import analytic_frs_m1, export_mesh, frc_slice, numeric_frs
from .mech import (
    FirstOrderSystem, MechanicalSystem, SpectralData, assemble_first_order, beam_tip_index, build_beam_model,
    build_duffing, build_duffing_chain, build_linear_oscillator, eigenpairs,
)
from .oracle import CollocationScheme, collocation_periodic_orbit, frc_full
from .poly import MultiIndexPoly
from .ridge import build_fonc_L2, build_fonc_opt, run_successive_L2, run_successive_opt
from .rom import SlowState, find_fixed_point, lift_to_full
from .ssm import compute_autonomous_ssm

__all__ = [
    "AmplitudeSpec", "CollocationScheme", "FirstOrderSystem", "MechanicalSystem", "MultiIndexPoly", "SlowState",
    "SpectralData", "StepControl", "ZeroProblem", "analytic_frs_m1", "assemble_first_order", "atlas_2d",
    "beam_tip_index", "build_beam_model", "build_duffing", "build_duffing_chain", "build_fonc_L2",
    "build_fonc_opt", "build_linear_oscillator", "collocation_periodic_orbit", "compute_autonomous_ssm",
    "continue_1d", "eigenpairs", "export_mesh", "find_fixed_point", "frc_full", "frc_slice", "lift_to_full",
    "numeric_frs", "run_successive_L2", "run_successive_opt",
]
