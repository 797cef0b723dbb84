import numpy as np
import pytest

import mtopt.aggregators as agg
from mtopt.errors import DegenerateInputError, DimensionError, ValidationError
from mtopt.gradcore import GradientSet, GradSpace, cosine
from mtopt.minnorm import min_norm_point


def _gs(rows, space=GradSpace.PARAMETER):
    return GradientSet(np.asarray(rows, dtype=np.float64), space)


# --- unitary -----------------------------------------------------------


def test_unitary_examples():
    np.testing.assert_array_equal(
        agg.unitary(_gs([[1.0, 2.0], [3.0, -1.0]])).direction, [-4.0, -1.0]
    )
    np.testing.assert_array_equal(
        agg.unitary(_gs([[1.0, 0.0], [-1.0, 0.0]])).direction, [0.0, 0.0]
    )
    np.testing.assert_array_equal(agg.unitary(_gs([[3.0, 4.0]])).direction, [-3.0, -4.0])


def test_unitary_scale_covariance():
    rng = np.random.default_rng(0)
    gs = _gs(rng.standard_normal((3, 4)))
    for c in (0.5, 2.0, 8.0):  # power-of-two scales keep the identity exact
        np.testing.assert_array_equal(
            agg.unitary(_gs(c * gs.rows)).direction, c * agg.unitary(gs).direction
        )


# --- mgda --------------------------------------------------------------


def test_mgda_rescale_examples():
    np.testing.assert_allclose(
        agg.mgda_rescale(_gs([[3.0, 4.0]]), [2.0]).rows, [[0.3, 0.4]]
    )
    np.testing.assert_allclose(agg.mgda_rescale(_gs([[1.0, 0.0]]), [1.0]).rows, [[1.0, 0.0]])
    # row / (norm * loss) = (0, 2) / (2 * 4)
    np.testing.assert_allclose(agg.mgda_rescale(_gs([[0.0, 2.0]]), [4.0]).rows, [[0.0, 0.25]])


def test_mgda_rescale_degenerate_inputs():
    with pytest.raises(DegenerateInputError):
        agg.mgda_rescale(_gs([[0.0, 0.0]]), [1.0])
    with pytest.raises(DegenerateInputError):
        agg.mgda_rescale(_gs([[1.0, 0.0]]), [0.0])


def test_mgda_examples():
    update = agg.mgda(_gs([[1.0, 0.0], [0.0, 1.0]]))
    np.testing.assert_allclose(update.direction, [-0.5, -0.5])
    np.testing.assert_allclose(update.weights, [0.5, 0.5])

    update = agg.mgda(_gs([[1.0, 0.0], [-1.0, 1.0], [-1.0, -1.0]]))
    assert np.linalg.norm(update.direction) <= 1e-9
    np.testing.assert_allclose(update.weights, [0.5, 0.25, 0.25], atol=1e-9)

    update = agg.mgda(_gs([[1.0, 0.0], [-1.0, 0.0]]))
    np.testing.assert_allclose(update.direction, [0.0, 0.0], atol=1e-15)


def test_mgda_direction_matches_weights():
    rng = np.random.default_rng(4)
    for _ in range(50):
        gs = _gs(rng.standard_normal((int(rng.integers(2, 6)), int(rng.integers(2, 6)))))
        update = agg.mgda(gs)
        np.testing.assert_allclose(
            update.direction, -(update.weights @ gs.rows), atol=1e-10
        )


def test_mgda_weight_invariance_under_uniform_scaling():
    rng = np.random.default_rng(9)
    for _ in range(20):
        m = int(rng.integers(2, 5))
        gs = _gs(rng.standard_normal((m, m + 2)))
        w = agg.mgda(gs).weights
        w_scaled = agg.mgda(_gs(4.0 * gs.rows)).weights
        np.testing.assert_allclose(w, w_scaled, atol=1e-9)


# --- imtl --------------------------------------------------------------


def test_imtl_g_examples():
    update = agg.imtl_g(_gs([[1.0, 0.0], [0.0, 1.0]]))
    np.testing.assert_allclose(update.weights, [0.5, 0.5])
    np.testing.assert_allclose(update.direction, [-0.5, -0.5])

    update = agg.imtl_g(_gs([[2.0, 0.0], [0.0, 1.0]]))
    np.testing.assert_allclose(update.weights, [1.0 / 3.0, 2.0 / 3.0])
    np.testing.assert_allclose(update.direction, [-2.0 / 3.0, -2.0 / 3.0])

    update = agg.imtl_g(_gs([[1.0, 0.0], [-1.0, 0.0]]))
    np.testing.assert_allclose(update.direction, [0.0, 0.0], atol=1e-14)


def test_imtl_g_equal_cosine():
    rng = np.random.default_rng(21)
    for _ in range(100):
        m = int(rng.integers(2, 5))
        gs = _gs(rng.standard_normal((m, m + int(rng.integers(1, 4)))))
        update = agg.imtl_g(gs)
        if np.linalg.norm(update.direction) < 1e-9:
            continue
        assert abs(update.weights.sum() - 1.0) <= 1e-10
        cosines = [cosine(update.direction, gs.rows[i]) for i in range(m)]
        assert max(abs(c - cosines[0]) for c in cosines) <= 1e-8


def test_imtl_g_zero_row_handling():
    with pytest.raises(DegenerateInputError):
        agg.imtl_g(_gs([[0.0, 0.0], [0.0, 0.0]]))
    # one zero row: excluded, weight forced to zero
    update = agg.imtl_g(_gs([[2.0, 0.0], [0.0, 0.0], [0.0, 1.0]]))
    assert update.weights[1] == 0.0
    np.testing.assert_allclose(update.weights[[0, 2]], [1.0 / 3.0, 2.0 / 3.0])


def test_imtl_g_singular_fallback_uniform():
    update = agg.imtl_g(_gs([[1.0, 0.0], [2.0, 0.0]]))  # identical directions
    np.testing.assert_allclose(update.weights, [0.5, 0.5])


def test_imtl_l_step_examples():
    state = agg.LossScaleState(np.array([-np.log(2.0)]), 0.1)
    new_state, scales = agg.imtl_l_step(state, [2.0])
    np.testing.assert_allclose(new_state.s, state.s)  # stationary at exp(s) L = 1

    state = agg.LossScaleState(np.zeros(1), 0.1)
    new_state, scales = agg.imtl_l_step(state, [1.0])
    np.testing.assert_allclose(new_state.s, [0.0])
    np.testing.assert_allclose(scales, [1.0])

    new_state, _ = agg.imtl_l_step(agg.LossScaleState(np.zeros(1), 0.1), [3.0])
    np.testing.assert_allclose(new_state.s, [-0.2])


def test_imtl_l_step_clamps_and_flags():
    state = agg.LossScaleState(np.array([19.9]), 1000.0)
    new_state, scales = agg.imtl_l_step(state, [-1.0])  # pushes s up hard
    assert new_state.clamped
    assert np.all(np.abs(new_state.s) <= 20.0)
    assert np.all(np.isfinite(scales))


# --- pcgrad ------------------------------------------------------------


def test_pcgrad_non_conflicting_is_unitary():
    gs = _gs([[1.0, 0.0], [0.0, 1.0]])
    update = agg.pcgrad(gs, np.random.default_rng(0))
    np.testing.assert_array_equal(update.direction, [-1.0, -1.0])


def test_pcgrad_derived_projection():
    gs = _gs([[1.0, 0.0], [-1.0, 1.0]])
    update = agg.pcgrad(gs, np.random.default_rng(0))
    np.testing.assert_allclose(update.direction, [-0.5, -1.5])
    # -g = 2 * (1, 0) + 1.5 * (-1, 1): d_21 = 1, d_12 = 0.5
    assert update.trace.coeffs[1, 0] == pytest.approx(1.0)
    assert update.trace.coeffs[0, 1] == pytest.approx(0.5)
    np.testing.assert_allclose(update.trace.effective_weights(), [2.0, 1.5])


def test_pcgrad_opposite_rows_give_exact_zero():
    gs = _gs([[1.0, -2.0, 0.5], [-1.0, 2.0, -0.5]])
    update = agg.pcgrad(gs, np.random.default_rng(3))
    assert np.all(update.direction == 0.0)


def test_pcgrad_two_task_rng_independent():
    gs = _gs([[1.0, 0.3], [-0.4, 1.1]])
    out1 = agg.pcgrad(gs, np.random.default_rng(1)).direction
    out2 = agg.pcgrad(gs, np.random.default_rng(99)).direction
    np.testing.assert_array_equal(out1, out2)


def test_pcgrad_rescaling_identity_and_bounds():
    rng = np.random.default_rng(31)
    for _ in range(200):
        m = int(rng.integers(2, 7))
        gs = _gs(rng.standard_normal((m, int(rng.integers(2, 8)))))
        update = agg.pcgrad(gs, rng)
        recon = update.trace.effective_weights() @ gs.rows
        np.testing.assert_allclose(recon, -update.direction, atol=1e-9)
        norms = gs.row_norms()
        for j in range(m):
            for i in range(m):
                if i == j:
                    continue
                assert 0.0 <= update.trace.coeffs[j, i] <= norms[j] / norms[i] + 1e-9


def test_pcgrad_zero_rows_pass_through():
    gs = _gs([[0.0, 0.0], [1.0, -1.0]])
    update = agg.pcgrad(gs, np.random.default_rng(0))
    np.testing.assert_array_equal(update.direction, [-1.0, 1.0])


# --- graddrop ----------------------------------------------------------


def test_graddrop_purity_examples():
    update = agg.graddrop(_gs([[3.0], [-1.0]]), np.random.default_rng(0))
    np.testing.assert_allclose(update.trace.purity, [0.75])

    update = agg.graddrop(_gs([[1.0], [2.0]]), np.random.default_rng(0))
    np.testing.assert_allclose(update.trace.purity, [1.0])
    # consensus coordinate: everything kept, matches the plain sum
    np.testing.assert_array_equal(update.direction, [-3.0])

    update = agg.graddrop(_gs([[0.0], [0.0]]), np.random.default_rng(0))
    np.testing.assert_allclose(update.trace.purity, [0.5])


def test_graddrop_expectation_monte_carlo():
    rng = np.random.default_rng(13)
    gs = _gs(rng.standard_normal((3, 4)))
    purity = agg.graddrop(gs, np.random.default_rng(0)).trace.purity
    keep_p = np.where(gs.rows > 0, purity, np.where(gs.rows < 0, 1.0 - purity, 0.0))
    analytic = (gs.rows * keep_p).sum(axis=0)
    n = 10_000
    acc = np.zeros(gs.dim)
    for _ in range(n):
        acc -= agg.graddrop(gs, rng).direction
    se = np.sqrt((gs.rows**2 * keep_p * (1 - keep_p)).sum(axis=0) / n)
    assert np.all(np.abs(acc / n - analytic) <= 3.0 * se + 1e-12)


def test_graddrop_flip_swaps_keep_rule():
    gs = _gs([[1.0, -1.0]])
    rng_state = np.random.default_rng(5)
    u = agg.graddrop(gs, rng_state).trace.uniforms
    keep = agg.graddrop(gs, np.random.default_rng(5)).trace.masks
    keep_flipped = agg.graddrop(gs, np.random.default_rng(5), flip=True).trace.masks
    # single task: purity is 1 for positive entries, 0 for negative ones
    np.testing.assert_array_equal(keep, [[1.0, 1.0]])
    np.testing.assert_array_equal(keep_flipped, [[0.0, 0.0]])
    assert u.shape == (1, 2)


def test_graddrop_repr_sign_weighting():
    rng = np.random.default_rng(2)
    rows = rng.standard_normal((2, 6))
    z_pos = np.abs(rng.standard_normal(6))
    gs = _gs(rows, GradSpace.REPRESENTATION)
    out_repr = agg.graddrop_repr(gs, z_pos, np.random.default_rng(8))
    out_plain = agg.graddrop(gs, np.random.default_rng(8))
    np.testing.assert_array_equal(out_repr.direction, out_plain.direction)

    # sign(0) counts as +1
    z_zero = np.zeros(6)
    out_zero = agg.graddrop_repr(gs, z_zero, np.random.default_rng(8))
    np.testing.assert_array_equal(out_zero.direction, out_plain.direction)


def test_graddrop_repr_single_task_expectation():
    rng = np.random.default_rng(40)
    rows = rng.standard_normal((1, 5))
    z = rng.standard_normal(5)
    gs = _gs(rows, GradSpace.REPRESENTATION)
    # with one task the transformed entries have purity 0 or 1, so the whole
    # gradient is kept on every draw
    for seed in range(20):
        out = agg.graddrop_repr(gs, z, np.random.default_rng(seed))
        np.testing.assert_array_equal(out.direction, -rows[0])


def test_graddrop_repr_validation():
    gs = _gs(np.ones((1, 3)), GradSpace.PARAMETER)
    with pytest.raises(ValidationError):
        agg.graddrop_repr(gs, np.ones(3), np.random.default_rng(0))
    gs = _gs(np.ones((1, 3)), GradSpace.REPRESENTATION)
    with pytest.raises(DimensionError):
        agg.graddrop_repr(gs, np.ones(4), np.random.default_rng(0))


# --- rlw / rgd / sign-agnostic masking ---------------------------------


def test_rlw_samples_live_on_simplex():
    rng = np.random.default_rng(6)
    gs = _gs(rng.standard_normal((4, 3)))
    for dist in ("dirichlet", "normal"):
        for _ in range(100):
            w = agg.rlw(gs, dist, rng).weights
            assert np.all(w >= 0.0)
            assert w.sum() == pytest.approx(1.0, abs=1e-12)


def test_rlw_dirichlet_mean_weight():
    rng = np.random.default_rng(14)
    m = 4
    gs = _gs(np.eye(m))
    acc = np.zeros(m)
    n = 10_000
    for _ in range(n):
        acc += agg.rlw(gs, "dirichlet", rng).weights
    # flat Dirichlet: mean 1/m, var (1/m)(1 - 1/m)/(m + 1)
    se = np.sqrt((1 / m) * (1 - 1 / m) / (m + 1) / n)
    assert np.all(np.abs(acc / n - 1.0 / m) <= 3.0 * se)


def test_rlw_single_task_degenerate():
    gs = _gs([[3.0, -4.0]])
    update = agg.rlw(gs, "dirichlet", np.random.default_rng(0))
    np.testing.assert_array_equal(update.weights, [1.0])
    np.testing.assert_array_equal(update.direction, [-3.0, 4.0])


def test_rlw_unknown_distribution():
    with pytest.raises(ValidationError):
        agg.rlw(_gs([[1.0]]), "cauchy", np.random.default_rng(0))


def test_rgd_keep_all_equals_unitary():
    rng = np.random.default_rng(3)
    gs = _gs(rng.standard_normal((4, 5)))
    update = agg.rgd(gs, 1.0, rng)
    np.testing.assert_array_equal(update.direction, agg.unitary(gs).direction)


def test_rgd_zero_rows_always_zero():
    gs = _gs(np.zeros((3, 2)))
    rng = np.random.default_rng(1)
    for _ in range(1000):
        assert np.all(agg.rgd(gs, 0.5, rng).direction == 0.0)


def test_rgd_validation():
    with pytest.raises(ValidationError):
        agg.rgd(_gs([[1.0]]), 0.0, np.random.default_rng(0))
    with pytest.raises(ValidationError):
        agg.rgd(_gs([[1.0]]), 1.5, np.random.default_rng(0))


def test_sign_agnostic_masking_expectation():
    rng = np.random.default_rng(12)
    rows = rng.standard_normal((3, 4))
    gs = _gs(rows, GradSpace.REPRESENTATION)
    p = 0.5
    n = 10_000
    acc = np.zeros(4)
    for _ in range(n):
        acc -= agg.sign_agnostic_graddrop(gs, p, rng).direction
    analytic = p * rows.sum(axis=0)
    se = np.sqrt((rows**2 * p * (1 - p)).sum(axis=0) / n)
    assert np.all(np.abs(acc / n - analytic) <= 3.0 * se)


def test_sign_agnostic_keep_all():
    gs = _gs(np.ones((2, 3)), GradSpace.REPRESENTATION)
    update = agg.sign_agnostic_graddrop(gs, 1.0, np.random.default_rng(0))
    np.testing.assert_array_equal(update.direction, agg.unitary(gs).direction)


def test_sign_agnostic_keep_frequency():
    from scipy import stats

    gs = _gs([[2.0]], GradSpace.REPRESENTATION)
    rng = np.random.default_rng(77)
    kept = sum(
        int(agg.sign_agnostic_graddrop(gs, 0.5, rng).trace.masks[0, 0]) for _ in range(2000)
    )
    assert stats.binomtest(kept, 2000, 0.5).pvalue > 0.01


def test_sign_agnostic_validation():
    gs = _gs([[1.0]], GradSpace.PARAMETER)
    with pytest.raises(ValidationError):
        agg.sign_agnostic_graddrop(gs, 0.5, np.random.default_rng(0))
    gs = _gs([[1.0]], GradSpace.REPRESENTATION)
    with pytest.raises(ValidationError):
        agg.sign_agnostic_graddrop(gs, 0.0, np.random.default_rng(0))
