"""Seeded property certificates for the aggregation and min-norm machinery.

Each check draws its instances from an explicit seed, verifies one documented
invariant, and reports a :class:`PropertyResult`; a failing check carries the
offending gradient set so it can be dumped for inspection.  The CLI `verify`
command runs the whole registry and exits nonzero on any failure.

The brute-force oracles here (simplex grid search, constructed sets with a
known min-norm value, Monte-Carlo expectations) are deliberately independent
of the solver paths they validate.
"""

from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import aggregators as agg
from .diagnostics import gradient_triad_report, stationarity_report
from .gradcore import GradientSet, GradSpace, combine, cosine
from .minnorm import affine_min_norm, min_norm_point
from .seeding import child_seed_sequence
from .tasks import make_conflicting_quadratics

__all__ = [
    "PropertyResult",
    "grid_min_norm",
    "random_set",
    "in_hull_set",
    "known_min_norm_set",
    "run_all",
    "PROPERTIES",
]


@dataclass
class PropertyResult:
    name: str
    passed: bool
    detail: str
    counterexample: dict | None = None


def _counterexample(gs: GradientSet, **extra) -> dict:
    out = {"rows": gs.rows.tolist(), "space": gs.space.value}
    out.update(extra)
    return out


# ---------------------------------------------------------------------------
# Oracles and constructed instances
# ---------------------------------------------------------------------------


def grid_min_norm(rows: np.ndarray, step: float = 1e-3) -> float:
    """Brute-force min over the simplex grid of ||sum_i alpha_i rows_i||.

    Enumerates weights on a regular grid of spacing `step` (m <= 3 only) and
    never touches the Frank-Wolfe path.
    """
    rows = np.asarray(rows, dtype=np.float64)
    m = rows.shape[0]
    gram = rows @ rows.T
    if m == 1:
        return float(np.sqrt(gram[0, 0]))
    ticks = np.linspace(0.0, 1.0, int(round(1.0 / step)) + 1)
    if m == 2:
        a = ticks
        vals = (
            (1 - a) ** 2 * gram[0, 0] + 2 * a * (1 - a) * gram[0, 1] + a**2 * gram[1, 1]
        )
        return float(np.sqrt(max(vals.min(), 0.0)))
    if m == 3:
        a1, a2 = np.meshgrid(ticks, ticks, indexing="ij")
        keep = a1 + a2 <= 1.0 + 1e-12
        a1, a2 = a1[keep], a2[keep]
        a3 = 1.0 - a1 - a2
        alphas = np.stack([a1, a2, a3], axis=1)
        vals = np.einsum("ki,ij,kj->k", alphas, gram, alphas)
        return float(np.sqrt(max(vals.min(), 0.0)))
    raise ValueError(f"grid oracle supports m <= 3, got m={m}")


def random_set(rng, m=None, d=None, scale=1.0, space=GradSpace.PARAMETER) -> GradientSet:
    m = int(m if m is not None else rng.integers(1, 4))
    d = int(d if d is not None else rng.integers(1, 5))
    return GradientSet(rng.uniform(-scale, scale, size=(m, d)), space)


def in_hull_set(rng, m: int, d: int) -> GradientSet:
    """Rows with 0 strictly inside their convex hull (built by construction)."""
    beta = rng.uniform(0.2, 1.0, size=m)
    beta /= beta.sum()
    rows = np.empty((m, d))
    rows[: m - 1] = rng.uniform(-1.0, 1.0, size=(m - 1, d))
    rows[m - 1] = -(beta[: m - 1] @ rows[: m - 1]) / beta[m - 1]
    return GradientSet(rows)


def known_min_norm_set(rng, m: int, d: int) -> tuple[GradientSet, float]:
    """Rows = v + w_i with w_i orthogonal to v and 0 in Conv{w_i}.

    Over the simplex, ||v + sum alpha_i w_i||^2 = ||v||^2 + ||sum alpha_i
    w_i||^2, so the true min-norm value is exactly ||v||.
    """
    if d < 2:
        raise ValueError("need d >= 2 for an orthogonal complement")
    basis, _ = np.linalg.qr(rng.standard_normal((d, d)))
    v = basis[:, 0] * rng.uniform(0.3, 1.0)
    w_hull = in_hull_set(rng, m, d - 1).rows  # coordinates in the complement
    rows = v[None, :] + w_hull @ basis[:, 1:].T
    return GradientSet(rows), float(np.linalg.norm(v))


def affine_stationary_set(rng, m: int, d: int) -> GradientSet:
    """Rows whose *normalized* versions have 0 in their affine hull.

    Starts from a 0-in-hull construction (0 stays in the hull of the
    normalized rows under positive row scaling) and then rescales every row
    by an arbitrary positive factor.
    """
    base = in_hull_set(rng, m, d)
    return base.scaled(rng.uniform(0.3, 3.0, size=m))


# ---------------------------------------------------------------------------
# Properties
# ---------------------------------------------------------------------------


def check_combine_linearity(rng, tol=1e-12):
    for _ in range(200):
        gs = random_set(rng)
        w1 = rng.standard_normal(gs.task_count)
        w2 = rng.standard_normal(gs.task_count)
        a, b = rng.standard_normal(2)
        lhs = combine(gs, a * w1 + b * w2)
        rhs = a * combine(gs, w1) + b * combine(gs, w2)
        err = float(np.max(np.abs(lhs - rhs)))
        if err > tol:
            return PropertyResult(
                "combine_linearity", False, f"linearity error {err:.3e} > {tol:g}",
                _counterexample(gs, w1=w1.tolist(), w2=w2.tolist(), a=a, b=b),
            )
    return PropertyResult("combine_linearity", True, f"200 random triples within {tol:g}")


def check_cosine_clamped(rng, tol=0.0):
    worst = 0.0
    for _ in range(10_000):
        d = int(rng.integers(1, 6))
        a = rng.standard_normal(d)
        b = rng.standard_normal(d)
        if np.linalg.norm(a) == 0 or np.linalg.norm(b) == 0:
            continue
        c = cosine(a, b)
        worst = max(worst, abs(c) - 1.0)
        if not -1.0 <= c <= 1.0:
            return PropertyResult(
                "cosine_clamped", False, f"cosine {c!r} outside [-1, 1]",
                {"a": a.tolist(), "b": b.tolist()},
            )
    return PropertyResult("cosine_clamped", True, "10000 random pairs inside [-1, 1]")


def check_minnorm_grid_oracle(rng, tol=1e-3):
    worst = 0.0
    for _ in range(100):
        gs = random_set(rng, m=int(rng.integers(1, 4)), d=int(rng.integers(1, 5)), scale=0.5)
        fw = min_norm_point(gs).norm
        oracle = grid_min_norm(gs.rows, step=1e-3)
        err = abs(fw - oracle)
        worst = max(worst, err)
        if err > tol:
            return PropertyResult(
                "minnorm_grid_oracle", False,
                f"|fw - grid| = {err:.3e} > {tol:g} (fw={fw:.6e}, grid={oracle:.6e})",
                _counterexample(gs),
            )
    return PropertyResult(
        "minnorm_grid_oracle", True, f"100 sets, worst |fw - grid| = {worst:.2e} <= {tol:g}"
    )


def check_minnorm_monotone(rng, tol=1e-12):
    for _ in range(100):
        m = int(rng.integers(2, 7))
        gs = random_set(rng, m=m, d=int(rng.integers(2, 6)))
        history = []
        min_norm_point(gs, history=history)
        diffs = np.diff(history)
        if diffs.size and float(diffs.max()) > tol:
            return PropertyResult(
                "minnorm_monotone", False,
                f"objective increased by {float(diffs.max()):.3e}", _counterexample(gs),
            )
    return PropertyResult("minnorm_monotone", True, "objective non-increasing on 100 sets")


def check_affine_orthogonality(rng, tol=1e-8):
    worst = 0.0
    for _ in range(200):
        gs = random_set(rng, m=int(rng.integers(2, 6)), d=int(rng.integers(2, 7)))
        sol = affine_min_norm(gs)
        for i in range(gs.task_count):
            for j in range(i + 1, gs.task_count):
                err = abs(float(sol.point @ (gs.rows[i] - gs.rows[j])))
                worst = max(worst, err)
                if err > tol:
                    return PropertyResult(
                        "affine_orthogonality", False,
                        f"point . (row_{i} - row_{j}) = {err:.3e} > {tol:g}",
                        _counterexample(gs),
                    )
    return PropertyResult(
        "affine_orthogonality", True, f"200 sets, worst residual {worst:.2e} <= {tol:g}"
    )


def check_convex_geq_affine(rng, tol=1e-10):
    for _ in range(200):
        gs = random_set(rng, m=int(rng.integers(1, 6)), d=int(rng.integers(1, 6)))
        convex = min_norm_point(gs).norm
        affine = affine_min_norm(gs).norm
        if convex < affine - tol:
            return PropertyResult(
                "convex_geq_affine", False,
                f"convex {convex:.6e} < affine {affine:.6e}", _counterexample(gs),
            )
    return PropertyResult("convex_geq_affine", True, "hull nesting held on 200 sets")


def check_mgda_certificate(rng, tol=1e-6):
    # 100 generic + 50 constructed 0-in-hull + 50 with a known positive min norm
    sets = [random_set(rng, m=int(rng.integers(2, 7)), d=int(rng.integers(2, 7))) for _ in range(100)]
    for gs in sets:
        update = agg.mgda(gs)
        gnorm = float(np.linalg.norm(update.direction))
        cert = min_norm_point(gs).norm
        if (gnorm <= tol) != (cert <= tol):
            return PropertyResult(
                "mgda_certificate", False,
                f"zero-direction disagreement: |g|={gnorm:.3e}, cert={cert:.3e}",
                _counterexample(gs),
            )
    for _ in range(50):
        gs = in_hull_set(rng, m=int(rng.integers(2, 7)), d=int(rng.integers(2, 7)))
        gnorm = float(np.linalg.norm(agg.mgda(gs).direction))
        if gnorm > tol:
            return PropertyResult(
                "mgda_certificate", False,
                f"0 in hull but |g| = {gnorm:.3e} > {tol:g}", _counterexample(gs),
            )
    for _ in range(50):
        gs, true_norm = known_min_norm_set(rng, m=int(rng.integers(2, 7)), d=int(rng.integers(2, 7)))
        gnorm = float(np.linalg.norm(agg.mgda(gs).direction))
        if gnorm < true_norm - tol:
            return PropertyResult(
                "mgda_certificate", False,
                f"|g| = {gnorm:.6e} below true min-norm {true_norm:.6e} - {tol:g}",
                _counterexample(gs),
            )
    return PropertyResult(
        "mgda_certificate", True, f"zero iff 0-in-hull at {tol:g} on 200 sets"
    )


def check_imtl_equal_cosine(rng, tol=1e-8):
    checked = 0
    worst = 0.0
    while checked < 200:
        m = int(rng.integers(2, 5))
        d = int(rng.integers(m + 1, m + 5))  # keep the affine hull away from 0
        gs = random_set(rng, m=m, d=d)
        if np.any(gs.row_norms() == 0.0):
            continue
        update = agg.imtl_g(gs)
        if float(np.linalg.norm(update.direction)) <= 1e-9:
            continue
        wsum = float(np.abs(update.weights.sum() - 1.0))
        if wsum > 1e-10:
            return PropertyResult(
                "imtl_equal_cosine", False, f"weights sum off by {wsum:.3e}",
                _counterexample(gs),
            )
        cosines = [cosine(update.direction, gs.rows[i]) for i in range(m)]
        dev = float(np.max(np.abs(np.array(cosines) - cosines[0])))
        worst = max(worst, dev)
        if dev > tol:
            return PropertyResult(
                "imtl_equal_cosine", False, f"cosine deviation {dev:.3e} > {tol:g}",
                _counterexample(gs),
            )
        checked += 1
    return PropertyResult(
        "imtl_equal_cosine", True, f"200 sets, worst deviation {worst:.2e} <= {tol:g}"
    )


def check_imtl_affine_iff(rng, tol=1e-6):
    cases = []
    for _ in range(40):
        m = int(rng.integers(2, 5))
        cases.append(affine_stationary_set(rng, m=m, d=int(rng.integers(m, m + 4))))
    for _ in range(40):
        m = int(rng.integers(2, 5))
        cases.append(random_set(rng, m=m, d=int(rng.integers(m + 1, m + 5))))
    for scale in (0.5, 1.0, 2.0):
        rows = np.zeros((2, 4))
        rows[0, 0] = scale
        rows[1, 0] = -scale
        cases.append(GradientSet(rows))  # opposite unit-direction pair
    mismatches = 0
    for gs in cases:
        if np.any(gs.row_norms() == 0.0):
            continue
        gnorm = float(np.linalg.norm(agg.imtl_g(gs).direction))
        units = gs.rows / gs.row_norms()[:, None]
        cert = affine_min_norm(GradientSet(units)).norm
        if (gnorm <= tol) != (cert <= tol):
            return PropertyResult(
                "imtl_affine_iff", False,
                f"|g| = {gnorm:.3e} vs affine cert {cert:.3e} disagree at {tol:g}",
                _counterexample(gs),
            )
    return PropertyResult(
        "imtl_affine_iff", True, f"zero iff affine certificate at {tol:g} on {len(cases)} sets"
    )


def check_pcgrad_identity(rng, tol=1e-9):
    worst = 0.0
    for _ in range(500):
        m = int(rng.integers(2, 7))
        gs = random_set(rng, m=m, d=int(rng.integers(2, 8)))
        update = agg.pcgrad(gs, rng)
        trace = update.trace
        weights = trace.effective_weights()
        recon = weights @ gs.rows  # = -g by the rescaling identity
        err = float(np.max(np.abs(recon + update.direction)))
        worst = max(worst, err)
        if err > tol:
            return PropertyResult(
                "pcgrad_identity", False, f"identity residual {err:.3e} > {tol:g}",
                _counterexample(gs),
            )
        norms = gs.row_norms()
        for j in range(m):
            for i in range(m):
                if i == j or norms[i] == 0.0:
                    continue
                bound = norms[j] / norms[i] + 1e-9
                if not -1e-15 <= trace.coeffs[j, i] <= bound:
                    return PropertyResult(
                        "pcgrad_identity", False,
                        f"d[{j},{i}] = {trace.coeffs[j, i]:.6e} outside [0, {bound:.6e}]",
                        _counterexample(gs),
                    )
    return PropertyResult(
        "pcgrad_identity", True, f"500 sets, worst identity residual {worst:.2e} <= {tol:g}"
    )


def check_pcgrad_two_task(rng, tol=0.0):
    # Determinism: the m = 2 output must not depend on the generator.
    for _ in range(50):
        gs = random_set(rng, m=2, d=int(rng.integers(1, 6)))
        out1 = agg.pcgrad(gs, np.random.default_rng(1)).direction
        out2 = agg.pcgrad(gs, np.random.default_rng(2)).direction
        if not np.array_equal(out1, out2):
            return PropertyResult(
                "pcgrad_two_task", False, "m=2 output depends on the generator",
                _counterexample(gs),
            )
    # Exactly anti-parallel rows (power-of-two scales) must give bitwise zero.
    for scale in (0.5, 1.0, 2.0, 4.0):
        base = rng.standard_normal(5)
        gs = GradientSet(np.stack([base, -scale * base]))
        direction = agg.pcgrad(gs, rng).direction
        if np.any(direction != 0.0):
            return PropertyResult(
                "pcgrad_two_task", False,
                f"anti-parallel pair gave nonzero direction {direction!r}",
                _counterexample(gs),
            )
    # Without conflicts the result must be bitwise the plain sum.
    for _ in range(50):
        m = int(rng.integers(2, 6))
        d = int(rng.integers(1, 6))
        rows = np.abs(rng.uniform(0.1, 1.0, size=(m, d)))  # positive orthant: no conflicts
        gs = GradientSet(rows)
        if not np.array_equal(agg.pcgrad(gs, rng).direction, agg.unitary(gs).direction):
            return PropertyResult(
                "pcgrad_two_task", False, "no-conflict surgery differs from the plain sum",
                _counterexample(gs),
            )
    return PropertyResult(
        "pcgrad_two_task", True, "deterministic at m=2; exact zero / passthrough cases hold"
    )


def check_graddrop_expectation(rng, tol=3.0, n_samples=10_000):
    for k in range(20):
        rng = np.random.default_rng(rng.integers(2**63))  # fresh stream per set
        m = int(rng.integers(2, 5))
        d = int(rng.integers(1, 5))
        gs = random_set(rng, m=m, d=d)
        rows = gs.rows
        purity = agg.graddrop(gs, np.random.default_rng(0)).trace.purity
        keep_p = np.where(rows > 0, purity, np.where(rows < 0, 1.0 - purity, 0.0))
        analytic = (rows * keep_p).sum(axis=0)
        variance = (rows**2 * keep_p * (1.0 - keep_p)).sum(axis=0)
        se = np.sqrt(variance / n_samples)
        acc = np.zeros(d)
        for _ in range(n_samples):
            acc -= agg.graddrop(gs, rng).direction  # E[-g] is the masked sum
        mc = acc / n_samples
        err = np.abs(mc - analytic)
        if np.any(err > tol * se + 1e-12):
            j = int(np.argmax(err - tol * se))
            return PropertyResult(
                "graddrop_expectation", False,
                f"coord {j}: |mc - analytic| = {err[j]:.4e} > {tol:g} se = {tol * se[j]:.4e}",
                _counterexample(gs),
            )
    return PropertyResult(
        "graddrop_expectation", True,
        f"Monte-Carlo mean within {tol:g} standard errors on 20 sets",
    )


def check_rgd_zero_equivalence(rng, tol=0.01):
    m, d = 4, 3
    zero = GradientSet(np.zeros((m, d)))
    for _ in range(1000):
        if np.any(agg.rgd(zero, 0.5, rng).direction != 0.0):
            return PropertyResult(
                "rgd_zero_equivalence", False, "zero rows produced a nonzero direction",
                _counterexample(zero),
            )
    rows = np.zeros((m, d))
    rows[1] = rng.uniform(0.5, 1.0, size=d)
    gs = GradientSet(rows)
    hits = sum(
        1 for _ in range(1000) if np.any(agg.rgd(gs, 0.5, rng).direction != 0.0)
    )
    if hits == 0:
        return PropertyResult(
            "rgd_zero_equivalence", False, "nonzero row never produced a nonzero direction",
            _counterexample(gs),
        )
    bound = 0.5 * 0.5 ** (m - 1)
    pvalue = stats.binomtest(hits, 1000, bound, alternative="less").pvalue
    if pvalue < tol:
        return PropertyResult(
            "rgd_zero_equivalence", False,
            f"empirical rate {hits}/1000 significantly below bound {bound:.4f} (p={pvalue:.4g})",
            _counterexample(gs),
        )
    return PropertyResult(
        "rgd_zero_equivalence", True,
        f"zero iff all rows zero over 1000 draws; rate {hits}/1000 vs bound {bound:.4f}",
    )


def check_scale_covariance(rng, tol=1e-9):
    for _ in range(100):
        m = int(rng.integers(1, 6))
        # d >= m keeps the min-norm argmin unique, so its weights are
        # comparable across the two scales
        gs = random_set(rng, m=m, d=int(rng.integers(m, m + 5)))
        c = float(rng.uniform(0.1, 10.0))
        scaled = GradientSet(c * gs.rows)
        lhs = agg.unitary(scaled).direction
        rhs = c * agg.unitary(gs).direction
        scale = max(1.0, float(np.max(np.abs(rhs))))
        if float(np.max(np.abs(lhs - rhs))) > 1e-12 * scale:
            return PropertyResult(
                "scale_covariance", False, "plain sum is not positively homogeneous",
                _counterexample(gs, c=c),
            )
        if gs.task_count >= 2:
            w1 = agg.mgda(gs).weights
            w2 = agg.mgda(scaled).weights
            if float(np.max(np.abs(w1 - w2))) > tol:
                return PropertyResult(
                    "scale_covariance", False,
                    f"mgda weights moved by {float(np.max(np.abs(w1 - w2))):.3e} under scaling",
                    _counterexample(gs, c=c),
                )
    return PropertyResult("scale_covariance", True, "100 sets, uniform scaling behaves")


def check_certificate_nesting(rng, tol=1e-9):
    for k in range(500):
        if k % 5 == 0:
            gs = in_hull_set(rng, m=int(rng.integers(2, 6)), d=int(rng.integers(2, 6)))
        elif k % 5 == 1:
            base = rng.standard_normal(4)
            gs = GradientSet(np.stack([base, -base]))
        else:
            gs = random_set(rng, m=int(rng.integers(1, 6)), d=int(rng.integers(1, 6)))
        report = stationarity_report(gs, tau=1.0)
        m = gs.task_count
        # summed-stationarity -> Pareto: the uniform point witnesses it.
        if report.convex_cert > report.unitary_norm / m + tol:
            return PropertyResult(
                "certificate_nesting", False,
                f"convex {report.convex_cert:.3e} > unitary/m {report.unitary_norm / m:.3e}",
                _counterexample(gs),
            )
        # joint minimum -> Pareto: any vertex witnesses it.
        if report.convex_cert > report.joint_cert + tol:
            return PropertyResult(
                "certificate_nesting", False,
                f"convex {report.convex_cert:.3e} > joint {report.joint_cert:.3e}",
                _counterexample(gs),
            )
        # Pareto -> affine on normalized rows, rescaled by the smallest norm.
        norms = gs.row_norms()
        live = norms[norms > 0.0]
        if live.size:
            scaled = report.convex_cert / live.min()
            if report.affine_cert > scaled + tol:
                return PropertyResult(
                    "certificate_nesting", False,
                    f"affine {report.affine_cert:.3e} > convex/min-norm {scaled:.3e}",
                    _counterexample(gs),
                )
    return PropertyResult("certificate_nesting", True, "nesting held on 500 sets")


def check_stationarity_permutation(rng, tol=1e-9):
    for _ in range(100):
        gs = random_set(rng, m=int(rng.integers(2, 6)), d=int(rng.integers(1, 6)))
        perm = rng.permutation(gs.task_count)
        report_a = stationarity_report(gs)
        report_b = stationarity_report(GradientSet(gs.rows[perm], gs.space))
        for name in ("unitary_norm", "convex_cert", "affine_cert", "joint_cert"):
            delta = abs(getattr(report_a, name) - getattr(report_b, name))
            if delta > tol:
                return PropertyResult(
                    "stationarity_permutation", False,
                    f"{name} moved by {delta:.3e} under row permutation",
                    _counterexample(gs, perm=perm.tolist()),
                )
    return PropertyResult("stationarity_permutation", True, "permutation invariant on 100 sets")


def check_triad_curvature(rng, tol=0.05):
    for _ in range(10):
        d = int(rng.integers(1, 4))
        kappa = float(rng.uniform(0.5, 3.0))
        suite = make_conflicting_quadratics(
            d, rng.uniform(-1, 1, size=d), rng.uniform(-1, 1, size=d), kappa
        )
        theta = rng.uniform(-2.0, 2.0, size=d)
        if np.linalg.norm(suite.gradient_rows(theta).sum(axis=0)) < 1e-6:
            continue
        expected = 2.0 * (1.0 + kappa)  # directional Hessian form of the two bowls
        for eps in (1e-6, 1e-5, 1e-4):
            report = gradient_triad_report(suite.gradient_rows, theta, eps)
            rel = abs(report.curvature - expected) / expected
            if rel > tol:
                return PropertyResult(
                    "triad_curvature", False,
                    f"curvature {report.curvature:.6f} vs {expected:.6f} (rel {rel:.3e}) at eps={eps:g}",
                    None,
                )
    return PropertyResult("triad_curvature", True, "quadratic curvature within 5% for eps grid")


PROPERTIES = (
    ("combine_linearity", check_combine_linearity),
    ("cosine_clamped", check_cosine_clamped),
    ("minnorm_grid_oracle", check_minnorm_grid_oracle),
    ("minnorm_monotone", check_minnorm_monotone),
    ("affine_orthogonality", check_affine_orthogonality),
    ("convex_geq_affine", check_convex_geq_affine),
    ("mgda_certificate", check_mgda_certificate),
    ("imtl_equal_cosine", check_imtl_equal_cosine),
    ("imtl_affine_iff", check_imtl_affine_iff),
    ("pcgrad_identity", check_pcgrad_identity),
    ("pcgrad_two_task", check_pcgrad_two_task),
    ("graddrop_expectation", check_graddrop_expectation),
    ("rgd_zero_equivalence", check_rgd_zero_equivalence),
    ("scale_covariance", check_scale_covariance),
    ("certificate_nesting", check_certificate_nesting),
    ("stationarity_permutation", check_stationarity_permutation),
    ("triad_curvature", check_triad_curvature),
)


def run_all(seed: int = 0, tolerances: dict | None = None) -> list:
    """Run every registered property on seeded instances."""
    tolerances = tolerances or {}
    results = []
    for name, fn in PROPERTIES:
        rng = np.random.default_rng(child_seed_sequence(seed, name))
        kwargs = {}
        if name in tolerances:
            kwargs["tol"] = tolerances[name]
        results.append(fn(rng, **kwargs))
    return results
