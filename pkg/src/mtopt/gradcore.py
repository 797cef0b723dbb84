"""Dense vector primitives and the per-task gradient-set data model.

Sign convention used throughout the package: every aggregator returns a
descent direction ``g`` such that the parameter update is ``theta <- theta +
eta * g``.  Under this convention the plain summed-loss step is
``g = -sum_i grad_i``, and weighted aggregates are ``g = -sum_i w_i grad_i``
(see :func:`combine`).
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DegenerateInputError, DimensionError, ValidationError

__all__ = [
    "GradSpace",
    "GradientSet",
    "SimplexWeights",
    "AggregateUpdate",
    "as_vector",
    "dot",
    "norm2",
    "cosine",
    "combine",
]

SIMPLEX_SUM_TOL = 1e-12


class GradSpace(Enum):
    """Which space the rows of a GradientSet live in."""

    PARAMETER = "parameter"        # gradients wrt the flattened shared parameters
    REPRESENTATION = "representation"  # gradients wrt the flattened shared activations


def as_vector(values) -> np.ndarray:
    """Copy `values` into a finite, read-only float64 1-D array."""
    v = np.array(values, dtype=np.float64, copy=True)
    if v.ndim != 1:
        raise DimensionError(f"expected a 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValidationError("vector entries must be finite")
    v.flags.writeable = False
    return v


def dot(a, b) -> float:
    """Inner product; lengths must match."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.dot(a, b))


def norm2(a) -> float:
    """Euclidean norm."""
    return float(np.linalg.norm(np.asarray(a, dtype=np.float64)))


def cosine(a, b) -> float:
    """Cosine similarity, clamped to [-1, 1] to protect downstream comparisons."""
    na = norm2(a)
    nb = norm2(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine undefined for zero-norm input")
    return float(np.clip(dot(a, b) / (na * nb), -1.0, 1.0))


@dataclass(frozen=True)
class GradientSet:
    """m per-task gradient vectors sharing one d-dimensional space."""

    rows: np.ndarray
    space: GradSpace = GradSpace.PARAMETER

    def __post_init__(self):
        rows = np.array(self.rows, dtype=np.float64, copy=True)
        if rows.ndim != 2:
            raise DimensionError(f"rows must be a (m, d) matrix, got shape {rows.shape}")
        m, d = rows.shape
        if m < 1 or d < 1:
            raise DimensionError(f"need m >= 1 and d >= 1, got shape {rows.shape}")
        if not np.all(np.isfinite(rows)):
            raise ValidationError("gradient rows must be finite")
        rows.flags.writeable = False
        object.__setattr__(self, "rows", rows)

    @classmethod
    def from_rows(cls, vectors, space: GradSpace = GradSpace.PARAMETER) -> "GradientSet":
        return cls(np.stack([np.asarray(v, dtype=np.float64) for v in vectors]), space)

    @property
    def task_count(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def row(self, i: int) -> np.ndarray:
        return self.rows[i]

    def row_norms(self) -> np.ndarray:
        return np.linalg.norm(self.rows, axis=1)

    def scaled(self, factors) -> "GradientSet":
        """New set with each row multiplied by its factor."""
        f = np.asarray(factors, dtype=np.float64)
        if f.shape != (self.task_count,):
            raise DimensionError(f"need {self.task_count} factors, got shape {f.shape}")
        return GradientSet(self.rows * f[:, None], self.space)


@dataclass(frozen=True)
class SimplexWeights:
    """Nonnegative task coefficients summing to one."""

    alpha: np.ndarray

    def __post_init__(self):
        a = np.array(self.alpha, dtype=np.float64, copy=True)
        if a.ndim != 1 or a.size < 1:
            raise DimensionError(f"alpha must be a nonempty 1-D vector, got shape {a.shape}")
        if np.any(a < 0.0):
            raise ValidationError(f"simplex weights must be nonnegative, got min {a.min()}")
        if abs(float(a.sum()) - 1.0) > SIMPLEX_SUM_TOL:
            raise ValidationError(f"simplex weights must sum to 1, got {a.sum()!r}")
        a.flags.writeable = False
        object.__setattr__(self, "alpha", a)

    def __len__(self) -> int:
        return self.alpha.size


@dataclass(frozen=True)
class AggregateUpdate:
    """A descent direction plus per-method trace.

    `direction` follows the package-wide convention: the step is
    ``theta <- theta + eta * direction``.  `weights` holds the task
    coefficients when the method has them (simplex for MGDA/RLW, all-ones for
    the plain sum, sign-unconstrained for IMTL, Bernoulli draws for RGD).
    """

    direction: np.ndarray
    weights: np.ndarray | None = None
    trace: object | None = None
    method: str = ""

    def __post_init__(self):
        g = np.array(self.direction, dtype=np.float64, copy=True)
        if not np.all(np.isfinite(g)):
            raise ValidationError("aggregate direction must be finite")
        g.flags.writeable = False
        object.__setattr__(self, "direction", g)
        if self.weights is not None:
            w = np.array(self.weights, dtype=np.float64, copy=True)
            w.flags.writeable = False
            object.__setattr__(self, "weights", w)


def combine(gs: GradientSet, weights) -> np.ndarray:
    """Weighted descent combination ``-sum_i w_i rows_i``.

    Linear in the weights; every aggregator funnels its final combination
    through this helper so that equal weights on equal rows produce bitwise
    identical directions across methods.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (gs.task_count,):
        raise DimensionError(f"need {gs.task_count} weights, got shape {w.shape}")
    return -(w @ gs.rows)
