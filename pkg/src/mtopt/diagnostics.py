"""Stationarity certificates and conflict diagnostics.

A gradient set at a point can be "stationary" in four nested senses, from
strongest to weakest: joint minimum (every task gradient is zero), summed
stationarity (the plain sum is zero), Pareto stationarity (zero lies in the
convex hull), and zero lying in the affine hull of the *normalized*
gradients.  Different aggregation methods stop at different levels of this
hierarchy, which is what :func:`stationarity_report` makes measurable.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .gradcore import GradientSet
from .minnorm import DEFAULT_MAX_ITER, DEFAULT_TOL, affine_min_norm, min_norm_point
from .net import per_task_param_grads

__all__ = [
    "StationarityReport",
    "TriadReport",
    "stationarity_report",
    "gradient_triad_report",
    "triad_report",
    "undertraining_curve",
]


@dataclass(frozen=True)
class StationarityReport:
    """Four certificate values plus verdicts at tolerance tau.

    * `unitary_norm`: ||sum_i rows_i|| (stationarity of the summed loss)
    * `convex_cert`:  min-norm element of Conv{rows_i} (Pareto stationarity)
    * `affine_cert`:  min-norm element of Aff{rows_i / ||rows_i||}, zero-norm
      rows excluded
    * `joint_cert`:   max_i ||rows_i|| (joint minimum when ~0)
    """

    unitary_norm: float
    convex_cert: float
    affine_cert: float
    joint_cert: float
    tau: float
    zero_rows_excluded: int
    unitary_stationary: bool
    pareto_stationary: bool
    affine_stationary: bool
    joint_minimum: bool


def stationarity_report(
    gs: GradientSet,
    tau: float = 1e-6,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> StationarityReport:
    """Compute all four stationarity certificates for one gradient set."""
    if not tau > 0.0:
        raise ValidationError(f"tau must be > 0, got {tau}")
    rows = gs.rows
    norms = np.linalg.norm(rows, axis=1)
    unitary_norm = float(np.linalg.norm(rows.sum(axis=0)))
    convex = min_norm_point(gs, max_iter=max_iter, tol=tol).norm
    joint = float(norms.max())

    live = np.flatnonzero(norms > 0.0)
    if live.size == 0:
        affine = 0.0
    else:
        unit_rows = rows[live] / norms[live][:, None]
        affine = affine_min_norm(GradientSet(unit_rows, gs.space)).norm

    return StationarityReport(
        unitary_norm=unitary_norm,
        convex_cert=convex,
        affine_cert=affine,
        joint_cert=joint,
        tau=tau,
        zero_rows_excluded=int(gs.task_count - live.size),
        unitary_stationary=unitary_norm <= tau,
        pareto_stationary=convex <= tau,
        affine_stationary=affine <= tau,
        joint_minimum=joint <= tau,
    )


@dataclass(frozen=True)
class TriadReport:
    """Pairwise gradient conflict, magnitude imbalance, and curvature.

    `cosines[i, j]` is the cosine similarity of task gradients i and j (0.0
    where either is zero-norm); `magnitude_ratio` is max/min over nonzero
    gradient norms (inf when zero and nonzero gradients coexist);
    `curvature` is the finite-difference directional second derivative of
    the summed loss along its own gradient, None when that gradient is zero.
    """

    cosines: np.ndarray
    magnitude_ratio: float
    curvature: float | None


def gradient_triad_report(grad_rows_fn, theta, eps: float) -> TriadReport:
    """Triad diagnostics from any map theta -> (m, d) per-task gradient rows."""
    if not eps > 0.0:
        raise ValidationError(f"eps must be > 0, got {eps}")
    theta = np.asarray(theta, dtype=np.float64)
    rows = np.asarray(grad_rows_fn(theta), dtype=np.float64)
    m = rows.shape[0]
    norms = np.linalg.norm(rows, axis=1)

    cosines = np.zeros((m, m))
    live = norms > 0.0
    if live.any():
        units = np.zeros_like(rows)
        units[live] = rows[live] / norms[live][:, None]
        cosines = np.clip(units @ units.T, -1.0, 1.0)
    np.fill_diagonal(cosines, 1.0)

    if not live.any():
        ratio = 1.0
    elif live.all():
        ratio = float(norms.max() / norms.min())
    else:
        ratio = math.inf

    total = rows.sum(axis=0)
    total_norm = float(np.linalg.norm(total))
    if total_norm == 0.0:
        curvature = None
    else:
        direction = total / total_norm
        shifted = np.asarray(grad_rows_fn(theta + eps * direction), dtype=np.float64)
        curvature = float(direction @ (shifted.sum(axis=0) - total)) / eps
    return TriadReport(cosines=cosines, magnitude_ratio=ratio, curvature=curvature)


def triad_report(model, batch, kinds, eps: float = 1e-5) -> TriadReport:
    """Triad diagnostics of a model on one batch (shared-trunk gradients).

    Uses eval-mode gradients (dropout off) so the two extra gradient
    evaluations of the curvature probe are deterministic; trunk parameters
    are restored afterwards.
    """
    theta0 = model.trunk_param_vector()

    def rows_fn(theta):
        model.set_trunk_params(theta)
        gs, _, _, _ = per_task_param_grads(model, batch, kinds, lam=0.0, mode="eval")
        return gs.rows

    try:
        return gradient_triad_report(rows_fn, theta0, eps)
    finally:
        model.set_trunk_params(theta0)


def undertraining_curve(record) -> np.ndarray:
    """Per-epoch averages of ||sum_i grad_i|| from a run record."""
    series = record.update_norm_series()
    if series.size == 0 or not np.isfinite(series).any():
        raise ValidationError("record has no update-norm samples")
    return series
