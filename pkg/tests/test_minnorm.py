import numpy as np
import pytest

from mtopt.errors import ValidationError
from mtopt.gradcore import GradientSet
from mtopt.minnorm import affine_min_norm, min_norm_point, two_task_min_norm
from mtopt.verify import grid_min_norm, in_hull_set


def test_two_task_symmetric():
    sol = two_task_min_norm([1.0, 0.0], [0.0, 1.0])
    np.testing.assert_allclose(sol.weights.alpha, [0.5, 0.5])
    np.testing.assert_allclose(sol.point, [0.5, 0.5])
    assert sol.norm == pytest.approx(np.sqrt(2.0) / 2.0)


def test_two_task_opposite():
    sol = two_task_min_norm([1.0, 0.0], [-1.0, 0.0])
    np.testing.assert_allclose(sol.point, [0.0, 0.0])
    assert sol.norm == 0.0


def test_two_task_derived_case():
    # alpha2 = clip(((g1-g2).g1) / ||g1-g2||^2, 0, 1) = 4/5 here; the value
    # below was confirmed against a 1e-5-step grid over alpha.
    sol = two_task_min_norm([2.0, 0.0], [0.0, 1.0])
    np.testing.assert_allclose(sol.weights.alpha, [0.2, 0.8])
    np.testing.assert_allclose(sol.point, [0.4, 0.8])
    assert sol.norm == pytest.approx(np.sqrt(20.0) / 5.0)


def test_two_task_equal_gradients_tie():
    sol = two_task_min_norm([1.0, 2.0], [1.0, 2.0])
    np.testing.assert_allclose(sol.weights.alpha, [0.5, 0.5])


def test_min_norm_single_row():
    sol = min_norm_point(GradientSet(np.array([[3.0, 4.0]])))
    assert sol.norm == 5.0
    np.testing.assert_array_equal(sol.weights.alpha, [1.0])


def test_min_norm_zero_in_hull():
    gs = GradientSet(np.array([[1.0, 0.0], [-1.0, 1.0], [-1.0, -1.0]]))
    sol = min_norm_point(gs)
    assert sol.norm <= 1e-12
    np.testing.assert_allclose(sol.weights.alpha, [0.5, 0.25, 0.25], atol=1e-9)


def test_min_norm_two_rows_matches_closed_form():
    gs = GradientSet(np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert min_norm_point(gs).norm == pytest.approx(np.sqrt(2.0) / 2.0)


def test_min_norm_validation():
    gs = GradientSet(np.ones((2, 2)))
    with pytest.raises(ValidationError):
        min_norm_point(gs, max_iter=0)
    with pytest.raises(ValidationError):
        min_norm_point(gs, tol=0.0)


def test_min_norm_matches_grid_oracle():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        m, d = int(rng.integers(1, 4)), int(rng.integers(1, 5))
        gs = GradientSet(rng.uniform(-0.5, 0.5, size=(m, d)))
        worst = max(worst, abs(min_norm_point(gs).norm - grid_min_norm(gs.rows)))
    assert worst <= 1e-3


def test_min_norm_monotone_objective():
    rng = np.random.default_rng(5)
    for _ in range(50):
        gs = GradientSet(rng.standard_normal((int(rng.integers(2, 8)), int(rng.integers(2, 6)))))
        history = []
        min_norm_point(gs, history=history)
        assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))


def test_min_norm_certificate_grade_on_constructed_hulls():
    rng = np.random.default_rng(2)
    for _ in range(50):
        gs = in_hull_set(rng, m=int(rng.integers(2, 8)), d=int(rng.integers(2, 7)))
        assert min_norm_point(gs).norm <= 1e-6


def test_affine_symmetric():
    sol = affine_min_norm(GradientSet(np.array([[1.0, 0.0], [0.0, 1.0]])))
    np.testing.assert_allclose(sol.weights, [0.5, 0.5])
    np.testing.assert_allclose(sol.point, [0.5, 0.5])


def test_affine_zero_in_hull():
    sol = affine_min_norm(GradientSet(np.array([[1.0, 0.0], [-1.0, 0.0]])))
    np.testing.assert_allclose(sol.point, [0.0, 0.0], atol=1e-14)


def test_affine_duplicated_rows_min_weight_norm():
    sol = affine_min_norm(GradientSet(np.array([[1.0, 0.0], [1.0, 0.0]])))
    np.testing.assert_allclose(sol.point, [1.0, 0.0], atol=1e-9)
    np.testing.assert_allclose(sol.weights, [0.5, 0.5], atol=1e-6)


def test_affine_point_orthogonal_to_differences():
    rng = np.random.default_rng(17)
    for _ in range(100):
        gs = GradientSet(rng.standard_normal((int(rng.integers(2, 6)), int(rng.integers(2, 7)))))
        sol = affine_min_norm(gs)
        for i in range(gs.task_count):
            for j in range(gs.task_count):
                assert abs(sol.point @ (gs.rows[i] - gs.rows[j])) <= 1e-8


def test_convex_norm_at_least_affine_norm():
    rng = np.random.default_rng(23)
    for _ in range(100):
        gs = GradientSet(rng.standard_normal((int(rng.integers(1, 6)), int(rng.integers(1, 6)))))
        assert min_norm_point(gs).norm >= affine_min_norm(gs).norm - 1e-10
