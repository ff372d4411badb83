import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ssmfrs.continuation import (ContinuationError, StepControl, ZeroProblem, atlas_2d, continue_1d,
                                 correct_point, detect_and_switch_branch)


def circle():
    return ZeroProblem(lambda u: np.array([u[0] ** 2 + u[1] ** 2 - 1]), lambda u: np.array([[2 * u[0], 2 * u[1]]]),
                       2, monitors={"x": lambda u: u[0], "y": lambda u: u[1]})


def sphere():
    return ZeroProblem(lambda u: np.array([u @ u - 1]), lambda u: 2 * u[None, :], 3,
                       monitors={"z": lambda u: u[2]}, monitor_grads={"z": lambda u: np.array([0, 0, 1.0])})


def pitchfork(cubic=True):
    if cubic:
        return ZeroProblem(lambda u: np.array([u[1] * u[0] - u[0] ** 3]),
                           lambda u: np.array([[u[1] - 3 * u[0] ** 2, u[0]]]), 2, monitors={"mu": lambda u: u[1]})
    return ZeroProblem(lambda u: np.array([u[1] * u[0] - u[0] ** 2]),
                       lambda u: np.array([[u[1] - 2 * u[0], u[0]]]), 2, monitors={"mu": lambda u: u[1]})


def test_circle_closes_with_four_folds():
    br = continue_1d(circle(), [1, 0], direction=[0, 1], fold_monitors=["x", "y"], ctrl=StepControl(h_max=0.2))
    assert br.termination == "closed"
    folds = np.array([e.u for e in br.events_of("FOLD")])
    assert len(folds) == 4
    for target in ([1, 0], [0, 1], [-1, 0], [0, -1]):
        assert np.min(np.linalg.norm(folds - target, axis=1)) < 1e-8
    assert np.abs(np.linalg.norm(br.u, axis=1) - 1).max() < 1e-10


@settings(max_examples=20, deadline=None)
@given(st.floats(-2, 2), st.floats(0.1, 3))
def test_line_reaches_both_bounds(offset, slope):
    zp = ZeroProblem(lambda u: np.array([u[1] - slope * u[0] - offset]), lambda u: np.array([[-slope, 1.0]]), 2,
                     monitors={"x": lambda u: u[0]})
    br = continue_1d(zp, [0, offset], direction=[1, slope], bounds={"x": (-1, 1)})
    assert br.termination == "BOUNDARY:x<="
    assert br.u[-1, 0] == pytest.approx(1.0, abs=1e-10)
    assert np.all(np.abs(br.u[:, 1] - slope * br.u[:, 0] - offset) < 1e-10)


def test_pitchfork_branch_point_and_switch():
    zp = pitchfork()
    br = continue_1d(zp, [0, -1], direction=[0, 1], bounds={"mu": (-1, 1)}, detect_bp=True)
    bps = br.events_of("BP")
    assert len(bps) == 1 and np.linalg.norm(bps[0].u) < 1e-8
    u1, t1 = detect_and_switch_branch(br, bps[0])
    assert abs(t1[0]) > 0.9
    b2 = continue_1d(zp, u1, direction=t1, bounds={"mu": (-1, 1)})
    assert np.abs(b2.u[:, 1] - b2.u[:, 0] ** 2).max() < 1e-9


def test_transcritical_switch_follows_diagonal():
    zp = pitchfork(cubic=False)
    br = continue_1d(zp, [0, -1], direction=[0, 1], bounds={"mu": (-1, 1)}, detect_bp=True)
    u1, t1 = detect_and_switch_branch(br, br.events_of("BP")[0])
    b2 = continue_1d(zp, u1, direction=t1, bounds={"mu": (-1, 1)})
    assert np.abs(b2.u[:, 0] - b2.u[:, 1]).max() < 1e-9


def test_user_test_function_event():
    zp = circle()
    zp.tests = {"x_minus_half": lambda u: u[0] - 0.5}
    br = continue_1d(zp, [1, 0], direction=[0, 1], ctrl=StepControl(h_max=0.2))
    hits = [e.u for e in br.events if e.label == "x_minus_half"]
    assert len(hits) == 2
    assert all(abs(h[0] - 0.5) < 1e-9 for h in hits)


def test_stop_hook_terminates():
    br = continue_1d(circle(), [1, 0], direction=[0, 1],
                     stop_fn=lambda b: "quarter" if b.points[-1][0] < 0 else None)
    assert br.termination == "quarter"


def test_correct_point_projects_onto_manifold():
    u = correct_point(circle(), [1.1, 0.2])
    assert abs(np.linalg.norm(u) - 1) < 1e-12


def test_correct_point_failure():
    zp = ZeroProblem(lambda u: np.array([u[0] ** 2 + 1.0]), lambda u: np.array([[2 * u[0], 0.0]]), 2)
    with pytest.raises(ContinuationError):
        correct_point(zp, [0.3, 0.0])


def test_jacobian_check():
    assert circle().check_jacobian(np.array([0.6, 0.8])) < 1e-7


def test_sphere_atlas_area_and_cover(tmp_path):
    at = atlas_2d(sphere(), [1, 0, 0], R0=0.1)
    assert abs(at.area() / (4 * np.pi) - 1) < 0.01
    assert not at.double_cover()
    assert max(np.abs(np.linalg.norm(c.u) - 1) for c in at.charts) < 1e-9
    at.to_obj(tmp_path / "s.obj", coords=lambda c: c.u)
    assert (tmp_path / "s.obj").read_text().count("\nf ") == len(at.faces)
    at.to_json(tmp_path / "s.json", monitor_names=["z"])
    data = json.loads((tmp_path / "s.json").read_text())
    assert len(data["charts"]) == len(at.charts)


def test_cylinder_atlas_respects_bounds():
    zp = ZeroProblem(lambda u: np.array([u[0] ** 2 + u[1] ** 2 - 1]), lambda u: np.array([[2 * u[0], 2 * u[1], 0]]),
                     3, monitors={"z": lambda u: u[2]}, monitor_grads={"z": lambda u: np.array([0, 0, 1.0])})
    at = atlas_2d(zp, [1, 0, 0], R0=0.1, bounds={"z": (-0.5, 0.5)})
    z = np.array([c.u[2] for c in at.charts])
    assert z.min() >= -0.5 - 1e-9 and z.max() <= 0.5 + 1e-9
    assert abs(at.area() / (2 * np.pi) - 1) < 0.01
    assert any(c.boundary for c in at.charts)
