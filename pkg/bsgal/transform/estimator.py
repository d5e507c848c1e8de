#!/usr/bin/env python3
"""
Contribution estimators for a batch of generated data.

The contribution of a generated batch is the drop in test loss it causes
when added to one SGD step on the real batch. ``contribution_loss_diff``
evaluates that drop directly with two virtual updates. The gradient variants
use the first order approximation

    alpha * (grad loss(real + generated) - grad loss(real)) . grad loss(test)

and may replace the test gradient with a running cache.
"""
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from bsgal.errors import ContractViolationError, ParameterError
from bsgal.model import CLS_ONLY, LossSelector, MLPClassifier, sgd_step
from bsgal.numerics import GradientVector, ParameterVector, cosine, dot, ema_update
from bsgal.utils import Batch, LabeledSample


class EstimatorKind(str, Enum):
    LOSS_DIFF = "loss_diff"
    GRAD_DOT = "grad_dot"
    GRAD_CACHE = "grad_cache"
    GRAD_CACHE_GLOBAL = "grad_cache_global"
    SINGLE_OFFLINE = "single_offline"


class CacheMode(str, Enum):
    MOMENTUM = "momentum"
    GLOBAL_AVERAGE = "global_average"


@dataclass(frozen=True)
class EstimatorConfig:
    kind: EstimatorKind = EstimatorKind.GRAD_CACHE
    beta: float = 0.1
    normalized: bool = True
    # score with the generated-only gradient instead of the augmented minus real gradient
    forward_once: bool = False
    components: tuple[str, ...] = ("cls",)
    # one-step learning rate inside the estimate; None ties it to the trainer's current rate
    alpha: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", EstimatorKind(self.kind))
        if not 0.0 <= self.beta <= 1.0:
            raise ParameterError(f"beta must lie in [0, 1], got {self.beta}")
        if self.alpha is not None and not self.alpha > 0:
            raise ParameterError(f"alpha must be positive, got {self.alpha}")
        if self.kind == EstimatorKind.SINGLE_OFFLINE:
            raise ParameterError("single_offline scores samples, not batches; use the offline runner")
        LossSelector.parse(self.components)

    @property
    def selector(self) -> LossSelector:
        return LossSelector.parse(self.components)

    @property
    def normalized_scores(self) -> bool:
        # loss_diff and grad_dot always report unnormalized scores
        return self.normalized and self.kind in (EstimatorKind.GRAD_CACHE, EstimatorKind.GRAD_CACHE_GLOBAL)


@dataclass(frozen=True, eq=False)
class GradCache:
    """Running estimate of the test-set gradient.

    ``t`` counts updates; the cache is empty until the first one.
    """
    beta: float = 0.1
    mode: CacheMode = CacheMode.MOMENTUM
    vector: GradientVector | None = field(default=None, repr=False)
    t: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", CacheMode(self.mode))
        if not 0.0 <= self.beta <= 1.0:
            raise ParameterError(f"beta must lie in [0, 1], got {self.beta}")

    @property
    def initialized(self) -> bool:
        return self.vector is not None

    def updated(self, test_gradient: GradientVector) -> "GradCache":
        """Fold one test-batch gradient into the cache and return the new cache."""
        test_gradient = np.asarray(test_gradient, dtype=np.float64)
        if self.vector is None:
            return replace(self, vector=test_gradient, t=1)
        t = self.t + 1
        if self.mode == CacheMode.MOMENTUM:
            vector = ema_update(self.vector, test_gradient, self.beta)
        else:
            vector = ((t - 1) / t) * self.vector + (1.0 / t) * test_gradient
        return replace(self, vector=vector, t=t)


@dataclass(frozen=True)
class ContributionScore:
    value: float
    estimator_kind: EstimatorKind
    normalized: bool
    iteration: int = 0


def _check_alpha(alpha: float):
    if not alpha > 0:
        raise ParameterError(f"alpha must be positive, got {alpha}")


def _check_test_batch(test_batch: Batch):
    if len(test_batch) == 0:
        raise ParameterError("the test batch must not be empty")


def _score(delta: GradientVector, reference: GradientVector, alpha: float, normalized: bool) -> float:
    if normalized:
        return cosine(delta, reference)
    return alpha * dot(delta, reference)


def generated_only_gradient(
    model: MLPClassifier,
    params: ParameterVector,
    gen_batch: Batch,
    selector: LossSelector = CLS_ONLY,
) -> GradientVector:
    """Gradient of the generated samples' loss alone.

    With append-mode augmentation and a summed loss this equals
    the augmented-batch gradient minus the real-batch gradient, so the score
    needs no pass over the real batch.
    """
    if np.any(~gen_batch.generated):
        raise ContractViolationError("generated_only_gradient got a batch with real samples")
    if len(gen_batch) == 0:
        return np.zeros(model.num_params)
    return model.backward(params, gen_batch, selector)


def gradient_difference(
    model: MLPClassifier,
    params: ParameterVector,
    real_batch: Batch,
    aug_batch: Batch,
    selector: LossSelector = CLS_ONLY,
) -> GradientVector:
    return model.backward(params, aug_batch, selector) - model.backward(params, real_batch, selector)


def contribution_loss_diff(
    model: MLPClassifier,
    params: ParameterVector,
    real_batch: Batch,
    aug_batch: Batch,
    test_batch: Batch,
    alpha: float,
    selector: LossSelector = CLS_ONLY,
    iteration: int = 0,
) -> ContributionScore:
    """Test loss after a step on the real batch minus test loss after a step on the augmented batch.

    The two updated parameter vectors are temporary; ``params`` is untouched.
    """
    _check_alpha(alpha)
    _check_test_batch(test_batch)
    theta_real = sgd_step(params, model.backward(params, real_batch, selector), alpha)
    theta_aug = sgd_step(params, model.backward(params, aug_batch, selector), alpha)
    value = model.forward_loss(theta_real, test_batch, selector).total - model.forward_loss(theta_aug, test_batch, selector).total
    return ContributionScore(value=value, estimator_kind=EstimatorKind.LOSS_DIFF, normalized=False, iteration=iteration)


def _resolve(
    model: MLPClassifier,
    params: ParameterVector,
    real_batch: Batch,
    aug_batch: Batch,
    test_batch: Batch,
    selector: LossSelector,
    delta: GradientVector | None,
    test_gradient: GradientVector | None,
) -> tuple[GradientVector, GradientVector]:
    if delta is None:
        delta = gradient_difference(model, params, real_batch, aug_batch, selector)
    if test_gradient is None:
        test_gradient = model.backward(params, test_batch, selector)
    return delta, test_gradient


def contribution_grad_dot(
    model: MLPClassifier,
    params: ParameterVector,
    real_batch: Batch,
    aug_batch: Batch,
    test_batch: Batch,
    alpha: float,
    selector: LossSelector = CLS_ONLY,
    iteration: int = 0,
    *,
    delta: GradientVector | None = None,
    test_gradient: GradientVector | None = None,
) -> ContributionScore:
    """First-order estimate alpha * (grad L_aug - grad L_real) . grad L_test.

    ``delta`` and ``test_gradient`` skip the matching backward passes when the
    caller already has them.
    """
    _check_alpha(alpha)
    _check_test_batch(test_batch)
    delta, test_gradient = _resolve(model, params, real_batch, aug_batch, test_batch, selector, delta, test_gradient)
    return ContributionScore(
        value=_score(delta, test_gradient, alpha, normalized=False),
        estimator_kind=EstimatorKind.GRAD_DOT,
        normalized=False,
        iteration=iteration,
    )


def contribution_grad_cache(
    cache: GradCache,
    model: MLPClassifier,
    params: ParameterVector,
    real_batch: Batch,
    aug_batch: Batch,
    test_batch: Batch,
    alpha: float,
    selector: LossSelector = CLS_ONLY,
    normalized: bool = True,
    iteration: int = 0,
    *,
    delta: GradientVector | None = None,
    test_gradient: GradientVector | None = None,
) -> tuple[ContributionScore, GradCache]:
    """Score a generated batch against a cache of recent test gradients; returns the updated cache."""
    _check_alpha(alpha)
    _check_test_batch(test_batch)
    delta, test_gradient = _resolve(model, params, real_batch, aug_batch, test_batch, selector, delta, test_gradient)
    cache = cache.updated(test_gradient)
    kind = EstimatorKind.GRAD_CACHE if cache.mode == CacheMode.MOMENTUM else EstimatorKind.GRAD_CACHE_GLOBAL
    score = ContributionScore(
        value=_score(delta, cache.vector, alpha, normalized),
        estimator_kind=kind,
        normalized=normalized,
        iteration=iteration,
    )
    return score, cache


def contribution_single_offline(
    model: MLPClassifier,
    params: ParameterVector,
    sample: LabeledSample,
    test_gradient: GradientVector,
    alpha: float,
    selector: LossSelector = CLS_ONLY,
) -> ContributionScore:
    """alpha * grad l(sample) . test_gradient, for a test gradient computed once over the reference set."""
    _check_alpha(alpha)
    sample_gradient = model.backward(params, Batch.from_samples([sample]), selector)
    return ContributionScore(
        value=alpha * dot(sample_gradient, test_gradient),
        estimator_kind=EstimatorKind.SINGLE_OFFLINE,
        normalized=False,
    )


class BatchContributionEstimator:
    """Per-worker estimator state for the streaming trainer.

    Wraps the estimator variants so the trainer can hand over the gradients it
    already computed for the update instead of recomputing them. Owns the
    worker's grad cache.
    """

    def __init__(self, model: MLPClassifier, config: EstimatorConfig):
        self.model = model
        self.config = config
        self.selector = config.selector
        mode = CacheMode.GLOBAL_AVERAGE if config.kind == EstimatorKind.GRAD_CACHE_GLOBAL else CacheMode.MOMENTUM
        self.cache = GradCache(beta=config.beta, mode=mode)

    @property
    def normalized(self) -> bool:
        return self.config.normalized_scores

    def _delta(self, params, real_batch, aug_batch, gen_batch, real_grad, aug_grad) -> GradientVector:
        if self.config.forward_once:
            return generated_only_gradient(self.model, params, gen_batch, self.selector)
        if real_grad is None or aug_grad is None:
            return gradient_difference(self.model, params, real_batch, aug_batch, self.selector)
        return aug_grad - real_grad

    def score(
        self,
        params: ParameterVector,
        real_batch: Batch,
        aug_batch: Batch,
        gen_batch: Batch,
        test_batch: Batch,
        alpha: float,
        iteration: int,
        real_grad: GradientVector | None = None,
        aug_grad: GradientVector | None = None,
    ) -> ContributionScore:
        """Score one worker's generated batch.

        ``real_grad``/``aug_grad`` may be passed when they were computed with
        this estimator's loss selector.
        """
        alpha = self.config.alpha or alpha
        kind = self.config.kind
        if kind == EstimatorKind.LOSS_DIFF:
            return contribution_loss_diff(
                self.model, params, real_batch, aug_batch, test_batch, alpha, self.selector, iteration
            )
        _check_alpha(alpha)
        _check_test_batch(test_batch)
        precomputed = {
            "delta": self._delta(params, real_batch, aug_batch, gen_batch, real_grad, aug_grad),
            "test_gradient": self.model.backward(params, test_batch, self.selector),
        }
        if kind == EstimatorKind.GRAD_DOT:
            return contribution_grad_dot(
                self.model, params, real_batch, aug_batch, test_batch, alpha, self.selector, iteration, **precomputed
            )
        score, self.cache = contribution_grad_cache(
            self.cache, self.model, params, real_batch, aug_batch, test_batch, alpha,
            self.selector, self.normalized, iteration, **precomputed,
        )
        return score
