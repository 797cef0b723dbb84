"""Minimum-norm points of the convex and affine hulls of a gradient set.

The simplex-constrained problem ``min_alpha ||sum_i alpha_i rows_i||`` is
solved with Frank-Wolfe over the simplex using exact pairwise line search:
only the (m x m) Gram matrix of the rows is touched after a single pass over
the data, which is what makes the solver cheap for m << d.  The
sign-unconstrained variant (affine hull) is a linear solve.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .gradcore import GradientSet, SimplexWeights

__all__ = [
    "MinNormSolution",
    "AffineMinNorm",
    "two_task_min_norm",
    "min_norm_point",
    "affine_min_norm",
    "DEFAULT_TOL",
    "DEFAULT_MAX_ITER",
]

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 250


@dataclass(frozen=True)
class MinNormSolution:
    """Optimal simplex weights, the point they select, and its norm."""

    weights: SimplexWeights
    point: np.ndarray
    norm: float
    iterations: int


@dataclass(frozen=True)
class AffineMinNorm:
    """Sum-to-one (sign-unconstrained) weights of the affine-hull projection of 0."""

    weights: np.ndarray
    point: np.ndarray
    norm: float


def two_task_min_norm(g1, g2) -> MinNormSolution:
    """Closed-form min-norm point of the segment [g1, g2].

    alpha2 = clip(((g1 - g2) . g1) / ||g1 - g2||^2, 0, 1); equal vectors get
    the symmetric tie weights (0.5, 0.5).
    """
    g1 = np.asarray(g1, dtype=np.float64)
    g2 = np.asarray(g2, dtype=np.float64)
    diff = g1 - g2
    denom = float(diff @ diff)
    if denom == 0.0:
        alpha2 = 0.5
    else:
        alpha2 = float(np.clip((diff @ g1) / denom, 0.0, 1.0))
    alpha = np.array([1.0 - alpha2, alpha2])
    point = alpha[0] * g1 + alpha[1] * g2
    return MinNormSolution(
        weights=SimplexWeights(alpha),
        point=point,
        norm=float(np.linalg.norm(point)),
        iterations=1,
    )


def min_norm_point(
    gs: GradientSet,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    history: list | None = None,
) -> MinNormSolution:
    """Active-set (Wolfe) solution of ``min ||sum_i alpha_i rows_i||``.

    Classic min-norm-point iteration over the Gram matrix: starting from
    uniform weights, each major cycle adds the vertex that most improves the
    linearised objective, then minor cycles solve the *exact* affine
    minimisation over the active set and clip the line back to the simplex,
    pruning vertices whose weight hits zero.  Terminates at machine-precision
    minima for small m; `max_iter` caps the major cycles and `tol` is the
    optimality threshold relative to the largest squared row norm (so
    stopping is invariant to uniformly rescaling the rows).

    When `history` is given, the objective value after every major cycle is
    appended to it (instrumentation for the monotone-descent certificate).
    """
    if max_iter < 1:
        raise ValidationError(f"max_iter must be >= 1, got {max_iter}")
    if not tol > 0.0:
        raise ValidationError(f"tol must be > 0, got {tol}")

    rows = gs.rows
    m = gs.task_count
    if m == 1:
        alpha = np.ones(1)
        point = alpha @ rows
        return MinNormSolution(SimplexWeights(alpha), point, float(np.linalg.norm(point)), 0)

    gram = rows @ rows.T
    gap_scale = float(np.max(np.diag(gram)))
    iterations = 0

    def _objective(active, weights) -> float:
        sub = gram[np.ix_(active, active)]
        return float(weights @ sub @ weights)

    def _minor_cycles(active, weights):
        # Pull the active set down to a corral: repeatedly jump to the affine
        # minimiser over the active vertices, clipping the line back to the
        # simplex and dropping any vertex whose weight hits zero.
        for _ in range(m + 1):
            beta = _affine_weights(gram[np.ix_(active, active)])
            if float(beta.min()) >= -1e-12:
                weights = np.clip(beta, 0.0, None)
                weights /= weights.sum()
                return active, weights
            neg = beta < 0.0
            theta = float((weights[neg] / (weights[neg] - beta[neg])).min())
            weights = np.clip(weights + theta * (beta - weights), 0.0, None)
            keep = weights > 0.0
            if keep.all():
                weights[int(np.argmin(weights))] = 0.0  # the blocking vertex leaves
                keep = weights > 0.0
            active = [a for a, k in zip(active, keep) if k]
            weights = weights[keep]
            weights /= weights.sum()
        return active, weights

    active, weights = _minor_cycles(list(range(m)), np.full(m, 1.0 / m))
    if history is not None:
        history.append(float(np.full(m, 1.0 / m) @ gram @ np.full(m, 1.0 / m)))
    obj = _objective(active, weights)

    for _ in range(max_iter):
        alpha = np.zeros(m)
        alpha[active] = weights
        dots = gram @ alpha  # dots[t] = P . rows_t
        t = int(np.argmin(dots))
        if float(dots[t]) >= obj - tol * gap_scale:
            break
        if t not in active:
            active = active + [t]
            weights = np.append(weights, 0.0)
        new_active, new_weights = _minor_cycles(active, weights)
        new_obj = _objective(new_active, new_weights)
        if not new_obj < obj:
            break  # no numerical progress left
        active, weights, obj = new_active, new_weights, new_obj
        iterations += 1
        if history is not None:
            history.append(obj)

    alpha = np.zeros(m)
    alpha[active] = weights
    alpha = alpha / alpha.sum()  # undo convex-combination drift before reporting
    point = alpha @ rows
    return MinNormSolution(
        weights=SimplexWeights(alpha),
        point=point,
        norm=float(np.linalg.norm(point)),
        iterations=iterations,
    )


def _affine_weights(gram: np.ndarray) -> np.ndarray:
    """Sum-to-one weights minimising the Gram quadratic form (KKT solve).

    A singular system falls back to a Tikhonov-damped solve (ridge term
    proportional to the Gram scale), which selects the minimal-weight-norm
    minimiser and keeps the fallback invariant to uniformly rescaling the
    rows.
    """
    k = gram.shape[0]
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = gram
    kkt[:k, k] = -1.0  # Lagrange multiplier of the sum constraint
    kkt[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0

    solution = None
    try:
        candidate = np.linalg.solve(kkt, rhs)
        if np.all(np.isfinite(candidate)):
            solution = candidate
    except np.linalg.LinAlgError:
        solution = None
    if solution is None:
        ridge = 1e-12 * float(np.trace(gram) / k) or 1e-300
        damped = kkt.copy()
        damped[:k, :k] += ridge * np.eye(k)
        try:
            solution = np.linalg.solve(damped, rhs)
        except np.linalg.LinAlgError:
            solution = np.linalg.lstsq(kkt, rhs, rcond=None)[0]

    weights = solution[:k]
    total = float(weights.sum())
    if total != 0.0 and abs(total - 1.0) > 1e-9:
        weights = weights / total
    return weights


def affine_min_norm(gs: GradientSet) -> AffineMinNorm:
    """Projection of 0 onto the affine hull of the rows.

    Solves ``min ||sum_i alpha_i rows_i||^2 s.t. sum_i alpha_i = 1`` with
    alpha unconstrained in sign (see :func:`_affine_weights`).
    """
    alpha = _affine_weights(gs.rows @ gs.rows.T)
    point = alpha @ gs.rows
    return AffineMinNorm(weights=alpha, point=point, norm=float(np.linalg.norm(point)))
