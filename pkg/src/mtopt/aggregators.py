"""Multi-task gradient aggregators.

Every operator here is a pure map from a :class:`~mtopt.gradcore.GradientSet`
(plus any auxiliary state and an explicit seeded generator) to an
:class:`~mtopt.gradcore.AggregateUpdate`.  Implemented methods:

* ``unitary``   -- plain sum of per-task gradients (single scalarization).
* ``mgda``      -- min-norm convex combination (multiple-gradient descent),
  with the customary per-row rescaling helper ``mgda_rescale``.
* ``imtl_g``    -- equal-cosine combination (impartial gradient balancing),
  plus the learned loss-scale step ``imtl_l_step``.
* ``pcgrad``    -- gradient surgery: project each task gradient onto the
  normal plane of conflicting gradients, in random order.
* ``graddrop``  -- stochastic sign-purity masking of gradient entries, with
  the representation-space variant ``graddrop_repr``.
* ``rlw``       -- random loss weighting (Dirichlet or softmax-Normal draws).
* ``rgd``       -- random task dropping: Bernoulli(p) weight per task.
* ``sign_agnostic_graddrop`` -- elementwise Bernoulli masking that ignores
  gradient signs entirely.

All methods return descent directions under the package convention
``theta <- theta + eta * g`` (see :mod:`mtopt.gradcore`).
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, DimensionError, ValidationError
from .gradcore import AggregateUpdate, GradientSet, GradSpace, SimplexWeights, combine
from .minnorm import DEFAULT_MAX_ITER, DEFAULT_TOL, min_norm_point

__all__ = [
    "PCGradTrace",
    "GradDropSample",
    "BernoulliMaskSample",
    "LossScaleState",
    "unitary",
    "mgda_rescale",
    "mgda",
    "imtl_g",
    "imtl_l_step",
    "pcgrad",
    "graddrop",
    "graddrop_repr",
    "rlw",
    "rgd",
    "sign_agnostic_graddrop",
]

LOG_SCALE_CLAMP = 20.0


@dataclass(frozen=True)
class PCGradTrace:
    """Effective loss-rescaling coefficients of one gradient-surgery call.

    ``coeffs[j, i]`` is d_ji: the (clipped-positive) projection coefficient
    that task j's surgery pass applied to task i's gradient; the diagonal is
    fixed at 1.  The call always satisfies the exact rescaling identity
    ``-g = sum_i (sum_j coeffs[j, i]) * rows_i``, and each off-diagonal
    coefficient lies in [0, ||rows_j|| / ||rows_i||].
    """

    coeffs: np.ndarray
    orders: tuple

    def effective_weights(self) -> np.ndarray:
        """Per-task rescaling factors 1 + sum_{j != i} d_ji."""
        return self.coeffs.sum(axis=0)


@dataclass(frozen=True)
class GradDropSample:
    """Purity scores, uniform draws, and the keep masks of one masking call."""

    purity: np.ndarray     # (d,) in [0, 1]
    uniforms: np.ndarray   # (m, d) in [0, 1)
    masks: np.ndarray      # (m, d) in {0.0, 1.0}


@dataclass(frozen=True)
class BernoulliMaskSample:
    """Sign-agnostic elementwise keep masks."""

    keep_p: float
    uniforms: np.ndarray
    masks: np.ndarray


@dataclass(frozen=True)
class LossScaleState:
    """Learned per-task log-scales s (loss i is multiplied by exp(s_i))."""

    s: np.ndarray
    step_size: float
    clamped: bool = False

    def __post_init__(self):
        s = np.array(self.s, dtype=np.float64, copy=True)
        if not np.all(np.isfinite(s)):
            raise ValidationError("log-scales must be finite")
        if not self.step_size > 0.0:
            raise ValidationError(f"step_size must be > 0, got {self.step_size}")
        s.flags.writeable = False
        object.__setattr__(self, "s", s)

    @classmethod
    def zeros(cls, task_count: int, step_size: float) -> "LossScaleState":
        return cls(np.zeros(task_count), step_size)

    def scales(self) -> np.ndarray:
        return np.exp(self.s)


def unitary(gs: GradientSet) -> AggregateUpdate:
    """Descent direction of the plain summed loss: g = -sum_i rows_i."""
    w = np.ones(gs.task_count)
    return AggregateUpdate(direction=combine(gs, w), weights=w, method="unitary")


def mgda_rescale(gs: GradientSet, losses) -> GradientSet:
    """Divide each row by (its norm x its loss) before the min-norm solve."""
    losses = np.asarray(losses, dtype=np.float64)
    if losses.shape != (gs.task_count,):
        raise DimensionError(f"need {gs.task_count} losses, got shape {losses.shape}")
    norms = gs.row_norms()
    if np.any(norms == 0.0):
        raise DegenerateInputError("mgda_rescale requires nonzero gradient rows")
    if np.any(losses <= 0.0):
        raise DegenerateInputError("mgda_rescale requires positive losses")
    return gs.scaled(1.0 / (norms * losses))


def mgda(
    gs: GradientSet, max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL
) -> AggregateUpdate:
    """Negative min-norm convex combination of the rows.

    The direction is zero (up to the solver tolerance) exactly when 0 lies in
    the convex hull of the rows, i.e. at Pareto-stationary points.
    """
    sol = min_norm_point(gs, max_iter=max_iter, tol=tol)
    alpha = sol.weights.alpha
    return AggregateUpdate(
        direction=combine(gs, alpha), weights=alpha, trace=sol, method="mgda"
    )


def imtl_g(gs: GradientSet) -> AggregateUpdate:
    """Sum-to-one combination whose cosine with every task gradient is equal.

    Solves the m x m linear system
        g . (rows_1/||rows_1|| - rows_i/||rows_i||) = 0   for i = 2..m,
        g = -sum_i alpha_i rows_i,  sum_i alpha_i = 1.
    Zero-norm rows are excluded (their alpha is fixed to 0); a singular
    system falls back to uniform weights over the remaining rows.
    """
    norms = gs.row_norms()
    live = np.flatnonzero(norms > 0.0)
    if live.size == 0:
        raise DegenerateInputError("imtl_g requires at least one nonzero gradient row")

    k = live.size
    rows = gs.rows[live]
    sub_norms = norms[live]
    alpha_live = None
    if k == 1:
        alpha_live = np.ones(1)
    else:
        gram = rows @ rows.T
        system = np.zeros((k, k))
        system[0, :] = 1.0
        rhs = np.zeros(k)
        rhs[0] = 1.0
        # Row i: sum_j alpha_j (rows_j . u_0 - rows_j . u_i) = 0 with u = rows/norms.
        for i in range(1, k):
            system[i, :] = gram[:, 0] / sub_norms[0] - gram[:, i] / sub_norms[i]
        try:
            candidate = np.linalg.solve(system, rhs)
            if np.all(np.isfinite(candidate)):
                alpha_live = candidate
        except np.linalg.LinAlgError:
            alpha_live = None
        if alpha_live is None:
            alpha_live = np.full(k, 1.0 / k)

    alpha = np.zeros(gs.task_count)
    alpha[live] = alpha_live
    return AggregateUpdate(direction=combine(gs, alpha), weights=alpha, method="imtl_g")


def imtl_l_step(state: LossScaleState, losses) -> tuple[LossScaleState, np.ndarray]:
    """One gradient step on the learned loss scales.

    The scales minimise sum_i (exp(s_i) * L_i - s_i), whose gradient in s_i
    is exp(s_i) * L_i - 1; the stationary point puts every scaled loss at 1.
    Log-scales are clamped to [-20, 20] to rule out overflow, with the clamp
    flagged on the returned state.  Returns the new state and the scales
    exp(s_i) to multiply the task losses (and hence all their gradients,
    task-specific heads included).
    """
    losses = np.asarray(losses, dtype=np.float64)
    if losses.shape != (state.s.shape[0],):
        raise DimensionError(f"need {state.s.shape[0]} losses, got shape {losses.shape}")
    if not np.all(np.isfinite(losses)):
        raise ValidationError("losses must be finite")
    grad = np.exp(state.s) * losses - 1.0
    s_new = state.s - state.step_size * grad
    clamped = bool(np.any(np.abs(s_new) > LOG_SCALE_CLAMP))
    if clamped:
        s_new = np.clip(s_new, -LOG_SCALE_CLAMP, LOG_SCALE_CLAMP)
    new_state = LossScaleState(s_new, state.step_size, clamped=clamped)
    return new_state, new_state.scales()


def pcgrad(gs: GradientSet, rng: np.random.Generator) -> AggregateUpdate:
    """Gradient surgery: drop the conflicting component of each task gradient.

    Each task gradient is projected onto the normal plane of every other
    gradient it conflicts with (negative inner product), visiting the others
    in an independent uniformly random order per task; the direction is the
    negative sum of the surgically altered gradients.  Zero rows pass through
    unchanged and are skipped as projectors.
    """
    rows = gs.rows
    m = gs.task_count
    # same dot kernel as the projection products, so exact cancellations
    # (anti-parallel rows) stay exact
    sq_norms = np.array([float(r @ r) for r in rows])
    projected = rows.copy()
    coeffs = np.eye(m)
    orders = []
    for i in range(m):
        others = np.delete(np.arange(m), i)
        order = rng.permutation(others)
        orders.append(order)
        for j in order:
            if sq_norms[j] == 0.0:
                continue
            dp = float(projected[i] @ rows[j])
            if dp < 0.0:
                c = -dp / sq_norms[j]
                projected[i] += c * rows[j]
                coeffs[i, j] += c
    surgically = GradientSet(projected, gs.space)
    direction = combine(surgically, np.ones(m))
    trace = PCGradTrace(coeffs=coeffs, orders=tuple(tuple(int(j) for j in o) for o in orders))
    return AggregateUpdate(direction=direction, weights=None, trace=trace, method="pcgrad")


def _purity(rows: np.ndarray) -> np.ndarray:
    """Positive sign purity p = (1 + sum rows / sum |rows|) / 2, with 0/0 -> 0.5."""
    total = rows.sum(axis=0)
    abs_total = np.abs(rows).sum(axis=0)
    ratio = np.where(abs_total > 0.0, total / np.where(abs_total > 0.0, abs_total, 1.0), 0.0)
    return np.clip(0.5 * (1.0 + ratio), 0.0, 1.0)


def _purity_masks(
    rows: np.ndarray, rng: np.random.Generator, flip: bool
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    purity = _purity(rows)
    uniforms = rng.uniform(size=rows.shape)
    positive = rows > 0.0
    negative = rows < 0.0
    if not flip:
        keep = (positive & (uniforms < purity)) | (negative & (uniforms > purity))
    else:
        keep = (positive & (uniforms > purity)) | (negative & (uniforms < purity))
    return purity, uniforms, keep.astype(np.float64)


def graddrop(
    gs: GradientSet, rng: np.random.Generator, flip: bool = False
) -> AggregateUpdate:
    """Stochastic sign-purity masking of gradient entries.

    At each coordinate the positive sign purity p aggregates the sign
    agreement across tasks; a positive entry is kept with probability p and a
    negative entry with probability 1 - p, so consensus coordinates survive
    and contested ones are thinned.  `flip=True` swaps the keep rule to the
    opposite indicator convention.  Exactly-zero entries carry no sign and
    are masked out (they contribute nothing either way).
    """
    purity, uniforms, masks = _purity_masks(gs.rows, rng, flip)
    masked = GradientSet(gs.rows * masks, gs.space)
    direction = combine(masked, np.ones(gs.task_count))
    trace = GradDropSample(purity=purity, uniforms=uniforms, masks=masks)
    return AggregateUpdate(direction=direction, weights=None, trace=trace, method="graddrop")


def graddrop_repr(
    repr_grads: GradientSet,
    z,
    rng: np.random.Generator,
    flip: bool = False,
) -> AggregateUpdate:
    """Sign-purity masking in representation space.

    Purity is computed on sign(z)-weighted gradients (sign(0) counts as +1),
    masks are decided on those transformed entries, and applied to the raw
    representation gradients; the caller maps the result back to parameter
    space with one trunk backward pass.  With all-positive activations this
    reduces exactly to :func:`graddrop` on the representation gradients.
    """
    if repr_grads.space is not GradSpace.REPRESENTATION:
        raise ValidationError("graddrop_repr expects representation-space gradients")
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (repr_grads.dim,):
        raise DimensionError(
            f"activation length {z.shape} does not match gradient dim {repr_grads.dim}"
        )
    signs = np.where(z >= 0.0, 1.0, -1.0)
    purity, uniforms, masks = _purity_masks(repr_grads.rows * signs, rng, flip)
    masked = GradientSet(repr_grads.rows * masks, repr_grads.space)
    direction = combine(masked, np.ones(repr_grads.task_count))
    trace = GradDropSample(purity=purity, uniforms=uniforms, masks=masks)
    return AggregateUpdate(
        direction=direction, weights=None, trace=trace, method="graddrop_repr"
    )


def rlw(gs: GradientSet, dist: str, rng: np.random.Generator) -> AggregateUpdate:
    """Random loss weighting: one fresh simplex draw per call.

    ``dist="dirichlet"`` samples flat-Dirichlet weights directly on the
    simplex; ``dist="normal"`` samples standard normals and maps them through
    a softmax (the draw itself is not simplex-valued, so some normalisation
    is required; softmax is the customary choice).
    """
    m = gs.task_count
    if dist == "dirichlet":
        w = rng.dirichlet(np.ones(m))
    elif dist == "normal":
        x = rng.standard_normal(m)
        e = np.exp(x - x.max())
        w = e / e.sum()
    else:
        raise ValidationError(f"unknown rlw distribution {dist!r}")
    weights = SimplexWeights(w)
    return AggregateUpdate(
        direction=combine(gs, weights.alpha), weights=weights.alpha, method=f"rlw_{dist}"
    )


def rgd(gs: GradientSet, p: float, rng: np.random.Generator) -> AggregateUpdate:
    """Random task dropping: keep each task with probability p.

    The aggregate is zero for every draw iff all rows are zero; with any
    nonzero row the probability of a nonzero aggregate is at least
    p * (1 - p)^(m - 1).  ``p = 1`` keeps everything and coincides with
    :func:`unitary`.
    """
    if not 0.0 < p <= 1.0:
        raise ValidationError(f"rgd keep probability must be in (0, 1], got {p}")
    u = (rng.uniform(size=gs.task_count) < p).astype(np.float64)
    return AggregateUpdate(direction=combine(gs, u), weights=u, method="rgd")


def sign_agnostic_graddrop(
    repr_grads: GradientSet, p: float, rng: np.random.Generator
) -> AggregateUpdate:
    """Elementwise Bernoulli(p) masking of representation gradients.

    Ignores gradient signs entirely: every entry of every task gradient is
    kept independently with probability p, so the expected direction is p
    times the plain sum.
    """
    if not 0.0 < p <= 1.0:
        raise ValidationError(f"keep probability must be in (0, 1], got {p}")
    if repr_grads.space is not GradSpace.REPRESENTATION:
        raise ValidationError("sign_agnostic_graddrop expects representation-space gradients")
    uniforms = rng.uniform(size=repr_grads.rows.shape)
    masks = (uniforms < p).astype(np.float64)
    masked = GradientSet(repr_grads.rows * masks, repr_grads.space)
    direction = combine(masked, np.ones(repr_grads.task_count))
    trace = BernoulliMaskSample(keep_p=p, uniforms=uniforms, masks=masks)
    return AggregateUpdate(
        direction=direction, weights=None, trace=trace, method="sign_agnostic_graddrop"
    )
