import numpy as np
import pytest

from mtopt.errors import DegenerateInputError, DimensionError, ValidationError
from mtopt.gradcore import (
    AggregateUpdate,
    GradientSet,
    GradSpace,
    SimplexWeights,
    as_vector,
    combine,
    cosine,
    dot,
    norm2,
)


def test_dot_examples():
    assert dot([1.0, 0.0], [0.0, 1.0]) == 0.0
    assert dot([1.0, 2.0], [3.0, -1.0]) == 1.0
    assert dot([3.0, 4.0], [3.0, 4.0]) == 25.0


def test_dot_length_mismatch():
    with pytest.raises(DimensionError):
        dot([1.0, 2.0], [1.0, 2.0, 3.0])


def test_norm2_examples():
    assert norm2([3.0, 4.0]) == 5.0
    assert norm2([0.0, 0.0]) == 0.0
    assert norm2([1.0, 1.0, 1.0, 1.0]) == 2.0


def test_cosine_examples():
    assert cosine([1.0, 0.0], [-1.0, 0.0]) == -1.0
    assert cosine([1.0, 0.0], [0.0, 1.0]) == 0.0
    assert cosine([1.0, 0.0], [1.0, 1.0]) == pytest.approx(1.0 / np.sqrt(2.0), abs=1e-15)


def test_cosine_zero_norm_raises():
    with pytest.raises(DegenerateInputError):
        cosine([0.0, 0.0], [1.0, 0.0])


def test_cosine_always_clamped():
    rng = np.random.default_rng(7)
    for _ in range(10_000):
        a = rng.standard_normal(3) * 10.0 ** rng.integers(-8, 8)
        b = rng.standard_normal(3) * 10.0 ** rng.integers(-8, 8)
        assert -1.0 <= cosine(a, b) <= 1.0


def test_combine_examples():
    gs = GradientSet(np.array([[1.0, 0.0], [0.0, 1.0]]))
    np.testing.assert_array_equal(combine(gs, [1.0, 1.0]), [-1.0, -1.0])

    gs = GradientSet(np.array([[1.0, 0.0], [-1.0, 0.0]]))
    np.testing.assert_array_equal(combine(gs, [0.5, 0.5]), [0.0, 0.0])

    gs = GradientSet(np.array([[2.0, 0.0], [0.0, 1.0]]))
    np.testing.assert_allclose(
        combine(gs, [1.0 / 3.0, 2.0 / 3.0]), [-2.0 / 3.0, -2.0 / 3.0], atol=1e-15
    )


def test_combine_linear_in_weights():
    rng = np.random.default_rng(3)
    for _ in range(100):
        m, d = rng.integers(1, 5), rng.integers(1, 6)
        gs = GradientSet(rng.standard_normal((m, d)))
        w1, w2 = rng.standard_normal(m), rng.standard_normal(m)
        a, b = rng.standard_normal(2)
        np.testing.assert_allclose(
            combine(gs, a * w1 + b * w2),
            a * combine(gs, w1) + b * combine(gs, w2),
            atol=1e-12,
        )


def test_as_vector_rejects_nan():
    with pytest.raises(ValidationError):
        as_vector([1.0, np.nan])
    with pytest.raises(DimensionError):
        as_vector([[1.0, 2.0]])


def test_gradient_set_validation():
    with pytest.raises(ValidationError):
        GradientSet(np.array([[1.0, np.inf]]))
    with pytest.raises(DimensionError):
        GradientSet(np.empty((0, 3)))
    gs = GradientSet(np.ones((2, 3)), GradSpace.REPRESENTATION)
    assert gs.task_count == 2 and gs.dim == 3
    assert not gs.rows.flags.writeable  # immutable after construction


def test_simplex_weights_validation():
    SimplexWeights(np.array([0.25, 0.75]))
    with pytest.raises(ValidationError):
        SimplexWeights(np.array([0.5, 0.6]))
    with pytest.raises(ValidationError):
        SimplexWeights(np.array([-0.1, 1.1]))


def test_aggregate_update_rejects_nonfinite():
    with pytest.raises(ValidationError):
        AggregateUpdate(direction=np.array([np.nan]))
