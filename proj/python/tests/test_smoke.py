import math

import pytest

import ocr


def one_obstacle_env():
    return ocr.Environment.from_dict(
        {"obstacles": [{"cx": 0.0, "cy": 0.0, "r": 1.0}], "d_xy": 0.0, "d_theta": 0.0}
    )


def test_failure_value_and_raycast():
    env = one_obstacle_env()
    assert ocr.failure_value(env, 3.0, 0.0) == pytest.approx(2.0)
    ranges = ocr.raycast(env, ocr.Pose(-3.0, 0.0, 0.0))
    assert len(ranges) == 100
    assert min(ranges) == pytest.approx(2.0, abs=1e-9)


def test_environment_round_trip():
    env = one_obstacle_env()
    again = ocr.Environment.from_dict(env.to_dict())
    assert again.obstacle_count == 1


def test_solver_small_grid():
    vg = ocr.solve(one_obstacle_env(), grid="41x41x16", horizon=0.5)
    value, gradient = vg.sample(ocr.Pose(3.0, 0.0, 0.0))
    assert value > 0.0
    assert len(gradient) == 3
    inside, _ = vg.sample(ocr.Pose(0.0, 0.0, 0.0))
    assert inside < 0.0


def test_compute_k_example():
    assert ocr.compute_k(100, 0.1, 0.05) == 4


def test_qp_passes_feasible_nominal():
    sol = ocr.solve_filter_qp([1.0, 0.0, 0.0], 0.0, ocr.DisturbanceBound(0.0, 0.0), ocr.Twist(1.0, 0.5))
    assert sol.twist == ocr.Twist(1.0, 0.5)
    assert sol.slack == 0.0


def test_network_gradient_matches_differences():
    net = ocr.ValueNet([32, 32], 100, 3)
    scan = [5.0] * 100
    db = ocr.DisturbanceBound(0.2, 0.4)
    g = net.input_gradient(ocr.Pose(0.3, -0.2, 0.1), db, scan)
    h = 1e-5
    fd = (net.forward(ocr.Pose(0.3 + h, -0.2, 0.1), db, scan) - net.forward(ocr.Pose(0.3 - h, -0.2, 0.1), db, scan)) / (2 * h)
    assert g[0] == pytest.approx(fd, rel=1e-4, abs=1e-6)


def test_trial_reaches_goal_in_empty_world():
    summary = ocr.run_trial({"planner": "nve", "filter": "none", "seed": 1})
    assert summary["outcome"] == "success"
    assert summary["r_bar"] == 0.0
    assert math.isclose(summary["v_bar"], summary["path_length"] / summary["duration"])
