"""
Flat-vector numerics shared by the model, the estimators and the trainer.

Every model parameter lives in one float64 vector of length P, and so does
every gradient; contribution scores are dot products and cosines between
such vectors. The functions here are pure and thread-safe.
"""
import math
from typing import Callable

import numpy as np
import numpy.typing as npt

from bsgal.errors import DimensionError, NumericError, ParameterError

ParameterVector = npt.NDArray[np.float64]
GradientVector = npt.NDArray[np.float64]

EPS_NORM = 1e-12


def as_vector(values, name: str = "vector") -> npt.NDArray[np.float64]:
    """Coerce to a 1-d float64 array and reject NaN/Inf entries."""
    vector = np.asarray(values, dtype=np.float64)
    if vector.ndim != 1:
        raise DimensionError(f"{name} must be 1-d, got shape {vector.shape}")
    if not np.all(np.isfinite(vector)):
        raise NumericError(f"{name} has non-finite entries")
    return vector


def _check_lengths(a: npt.NDArray[np.float64], b: npt.NDArray[np.float64]):
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape} vs {b.shape}")


def dot(a: GradientVector, b: GradientVector) -> float:
    """Inner product of two gradient vectors.

    The products are summed with ``math.fsum``, which returns the correctly
    rounded sum, so the result does not depend on reduction order or on the
    BLAS build numpy links against.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_lengths(a, b)
    return math.fsum((a * b).tolist())


def norm(a: GradientVector) -> float:
    return math.sqrt(dot(a, a))


def cosine(a: GradientVector, b: GradientVector) -> float:
    """Cosine similarity, 0.0 when either vector has norm below EPS_NORM."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_lengths(a, b)
    norm_a = norm(a)
    norm_b = norm(b)
    if norm_a < EPS_NORM or norm_b < EPS_NORM:
        return 0.0
    return min(1.0, max(-1.0, dot(a, b) / (norm_a * norm_b)))


def ema_update(cache: GradientVector, new: GradientVector, beta: float) -> GradientVector:
    """Return beta * cache + (1 - beta) * new."""
    if not 0.0 <= beta <= 1.0:
        raise ParameterError(f"beta must lie in [0, 1], got {beta}")
    cache = np.asarray(cache, dtype=np.float64)
    new = np.asarray(new, dtype=np.float64)
    _check_lengths(cache, new)
    return beta * cache + (1.0 - beta) * new


def finite_difference_gradient(
    loss_fn: Callable[[ParameterVector], float],
    params: ParameterVector,
    h: float = 1e-5,
) -> GradientVector:
    """Central-difference gradient of ``loss_fn`` at ``params``.

    Used as an oracle for the analytic backward pass; costs 2P loss
    evaluations.
    """
    if not h > 0:
        raise ParameterError(f"step h must be positive, got {h}")
    theta = np.array(params, dtype=np.float64)
    grad = np.zeros_like(theta)
    for i in range(theta.shape[0]):
        original = theta[i]
        theta[i] = original + h
        upper = float(loss_fn(theta.copy()))
        theta[i] = original - h
        lower = float(loss_fn(theta.copy()))
        theta[i] = original
        if not (math.isfinite(upper) and math.isfinite(lower)):
            raise NumericError(f"loss is not finite around coordinate {i}")
        grad[i] = (upper - lower) / (2.0 * h)
    return grad
