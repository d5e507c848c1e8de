import numpy as np
import pytest

from bsgal.errors import ContractViolationError, ParameterError
from bsgal.ingest.sampling import augment
from bsgal.model import ALL_LOSSES, CLS_ONLY
from bsgal.numerics import dot
from bsgal.transform.estimator import (
    BatchContributionEstimator,
    CacheMode,
    EstimatorConfig,
    EstimatorKind,
    GradCache,
    contribution_grad_cache,
    contribution_grad_dot,
    contribution_loss_diff,
    contribution_single_offline,
    generated_only_gradient,
    gradient_difference,
)
from bsgal.transform.gate import GateConfig, GateKind, GatePolicy
from bsgal.utils import Batch


@pytest.fixture
def instance(model, make_batch):
    """Factory for (params, real, gen, aug, test) instances."""
    def _make(seed: int, k: int = 3):
        rng = np.random.default_rng(seed)
        params = model.init_params() + 0.3 * rng.normal(size=model.num_params)
        real = make_batch(rng, 4)
        gen = make_batch(rng, k, generated=True) if k else Batch.empty(6)
        return params, real, gen, augment(real, gen), make_batch(rng, 6)
    return _make


def test_null_augmentation_scores_zero(model, instance):
    params, real, gen, aug, test = instance(0, k=0)
    assert contribution_loss_diff(model, params, real, aug, test, 0.05).value == 0.0
    assert contribution_grad_dot(model, params, real, aug, test, 0.05).value == 0.0
    for normalized in (True, False):
        score, _ = contribution_grad_cache(GradCache(), model, params, real, aug, test, 0.05, normalized=normalized)
        assert score.value == 0.0


def test_empty_test_batch_is_rejected(model, instance):
    params, real, _, aug, _ = instance(1)
    with pytest.raises(ParameterError):
        contribution_loss_diff(model, params, real, aug, Batch.empty(6), 0.05)
    with pytest.raises(ParameterError):
        contribution_grad_dot(model, params, real, aug, Batch.empty(6), 0.05)
    with pytest.raises(ParameterError):
        contribution_grad_dot(model, params, real, aug, real, 0.0)


def test_loss_diff_leaves_params_untouched(model, instance):
    params, real, _, aug, test = instance(2)
    before = params.copy()
    contribution_loss_diff(model, params, real, aug, test, 0.1)
    assert np.array_equal(params, before)


def test_first_order_gap_is_quadratic_in_alpha(model, instance):
    ratios = []
    for seed in range(50):
        params, real, _, aug, test = instance(seed)
        gaps = [
            abs(contribution_loss_diff(model, params, real, aug, test, alpha).value
                - contribution_grad_dot(model, params, real, aug, test, alpha).value)
            for alpha in (1e-2, 5e-3)
        ]
        if gaps[1] > 0:
            ratios.append(gaps[0] / gaps[1])
    ratios = np.array(ratios)
    assert 3.0 <= np.median(ratios) <= 5.0
    assert np.mean((ratios >= 3.0) & (ratios <= 5.0)) >= 0.8


def test_loss_diff_converges_to_grad_dot(model, instance):
    close = []
    for seed in range(50):
        params, real, _, aug, test = instance(100 + seed)
        exact = contribution_loss_diff(model, params, real, aug, test, 1e-4).value
        approx = contribution_grad_dot(model, params, real, aug, test, 1e-4).value
        if abs(approx) > 1e-10:
            close.append(abs(exact - approx) / abs(approx) < 0.05)
    assert np.mean(close) >= 0.8


def test_self_influence_is_positive(model, instance):
    params, real, gen, aug, _ = instance(3)
    assert contribution_grad_dot(model, params, real, aug, gen, 0.05).value > 0


def test_grad_cache_at_first_update_equals_grad_dot(model, instance):
    params, real, _, aug, test = instance(4)
    score, cache = contribution_grad_cache(GradCache(beta=0.1), model, params, real, aug, test, 0.05, normalized=False)
    assert cache.t == 1
    assert score.value == contribution_grad_dot(model, params, real, aug, test, 0.05).value


def test_memoryless_cache_equals_grad_dot(model, instance):
    cache = GradCache(beta=0.0)
    for seed in range(5):
        params, real, _, aug, test = instance(10 + seed)
        score, cache = contribution_grad_cache(cache, model, params, real, aug, test, 0.05, normalized=False)
        assert score.value == contribution_grad_dot(model, params, real, aug, test, 0.05).value


def test_momentum_trace_by_hand():
    cache = GradCache(beta=0.1, mode=CacheMode.MOMENTUM)
    expected = [[1.0, 0.0], [0.1, 0.9], [0.91, 0.99]]
    delta = np.array([2.0, -1.0])
    for g, c in zip(([1.0, 0.0], [0.0, 1.0], [1.0, 1.0]), expected):
        cache = cache.updated(np.array(g))
        assert np.allclose(cache.vector, c, rtol=0, atol=1e-12)
        assert 0.5 * dot(delta, cache.vector) == pytest.approx(0.5 * (2 * c[0] - c[1]), abs=1e-12)
    assert cache.t == 3


def test_global_average_trace_by_hand():
    cache = GradCache(mode=CacheMode.GLOBAL_AVERAGE)
    for g in ([1.0, 0.0], [0.0, 1.0], [1.0, 1.0]):
        cache = cache.updated(np.array(g))
    assert np.allclose(cache.vector, [2 / 3, 2 / 3], rtol=0, atol=1e-12)


def test_momentum_telescoping():
    rng = np.random.default_rng(0)
    beta, gs = 0.3, rng.normal(size=(10, 5))
    cache = GradCache(beta=beta)
    for g in gs:
        cache = cache.updated(g)
    t = len(gs)
    expected = beta ** (t - 1) * gs[0] + (1 - beta) * sum(beta ** (t - i) * gs[i - 1] for i in range(2, t + 1))
    assert np.max(np.abs(cache.vector - expected)) < 1e-10


def test_global_average_is_the_mean():
    gs = np.random.default_rng(1).normal(size=(25, 4))
    cache = GradCache(mode=CacheMode.GLOBAL_AVERAGE)
    for g in gs:
        cache = cache.updated(g)
    assert np.allclose(cache.vector, gs.mean(axis=0), rtol=0, atol=1e-12)


def test_cache_update_returns_new_cache():
    cache = GradCache()
    updated = cache.updated(np.ones(2))
    assert not cache.initialized and updated.initialized


def test_normalized_scores_are_bounded(model, instance):
    cache = GradCache()
    for seed in range(20):
        params, real, _, aug, test = instance(200 + seed)
        score, cache = contribution_grad_cache(cache, model, params, real, aug, test, 0.05, normalized=True)
        assert -1.0 <= score.value <= 1.0
        assert score.normalized


def test_forward_once_identity(model, instance):
    for seed in range(100):
        params, real, gen, aug, _ = instance(300 + seed)
        for selector in (CLS_ONLY, ALL_LOSSES):
            explicit = gradient_difference(model, params, real, aug, selector)
            assert np.max(np.abs(explicit - generated_only_gradient(model, params, gen, selector))) < 1e-10


def test_generated_only_gradient_contract(model, params, make_batch, rng):
    with pytest.raises(ContractViolationError):
        generated_only_gradient(model, params, make_batch(rng, 2))
    assert np.array_equal(generated_only_gradient(model, params, Batch.empty(6)), np.zeros(model.num_params))
    a, b = make_batch(rng, 2, generated=True), make_batch(rng, 3, generated=True)
    joint = generated_only_gradient(model, params, a.concat(b))
    parts = generated_only_gradient(model, params, a) + generated_only_gradient(model, params, b)
    assert np.max(np.abs(joint - parts)) < 1e-10


def test_single_offline(model, params, make_batch, rng):
    sample = make_batch(rng, 1, generated=True).samples[0]
    assert contribution_single_offline(model, params, sample, np.zeros(model.num_params), 0.05).value == 0.0
    test_gradient = model.backward(params, make_batch(rng, 10))
    score = contribution_single_offline(model, params, sample, test_gradient, 0.05)
    expected = 0.05 * dot(model.backward(params, Batch.from_samples([sample])), test_gradient)
    assert score.value == expected
    assert score.estimator_kind == EstimatorKind.SINGLE_OFFLINE


def test_estimator_config_validation():
    with pytest.raises(ParameterError):
        EstimatorConfig(beta=1.2)
    with pytest.raises(ParameterError):
        EstimatorConfig(kind="single_offline")
    with pytest.raises(ParameterError):
        EstimatorConfig(components=("box",))
    assert EstimatorConfig(kind="grad_dot").kind == EstimatorKind.GRAD_DOT


@pytest.mark.parametrize("kind", ["grad_dot", "grad_cache", "grad_cache_global"])
def test_forward_once_scores_agree(model, instance, kind):
    two_pass = BatchContributionEstimator(model, EstimatorConfig(kind=kind, normalized=False))
    one_pass = BatchContributionEstimator(model, EstimatorConfig(kind=kind, normalized=False, forward_once=True))
    for seed in range(10):
        params, real, gen, aug, test = instance(400 + seed)
        a = two_pass.score(params, real, aug, gen, test, alpha=0.05, iteration=seed)
        b = one_pass.score(params, real, aug, gen, test, alpha=0.05, iteration=seed)
        assert a.value == pytest.approx(b.value, rel=1e-8, abs=1e-10)


@pytest.mark.parametrize("kind", ["loss_diff", "grad_dot", "grad_cache", "grad_cache_global"])
def test_estimator_reuses_given_gradients(model, instance, kind):
    fresh = BatchContributionEstimator(model, EstimatorConfig(kind=kind))
    reused = BatchContributionEstimator(model, EstimatorConfig(kind=kind))
    for seed in range(3):
        params, real, gen, aug, test = instance(500 + seed)
        a = fresh.score(params, real, aug, gen, test, alpha=0.05, iteration=seed)
        b = reused.score(
            params, real, aug, gen, test, alpha=0.05, iteration=seed,
            real_grad=model.backward(params, real), aug_grad=model.backward(params, aug),
        )
        assert a.value == b.value
        assert a.normalized == (kind in ("grad_cache", "grad_cache_global"))


def test_estimator_alpha_override(model, instance):
    params, real, gen, aug, test = instance(600)
    tied = BatchContributionEstimator(model, EstimatorConfig(kind="grad_dot"))
    fixed = BatchContributionEstimator(model, EstimatorConfig(kind="grad_dot", alpha=0.01))
    assert fixed.score(params, real, aug, gen, test, alpha=0.05, iteration=0).value == pytest.approx(
        tied.score(params, real, aug, gen, test, alpha=0.01, iteration=0).value
    )


@pytest.mark.parametrize("normalized", [True, False])
@pytest.mark.parametrize("kind", ["loss_diff", "grad_dot", "grad_cache", "grad_cache_global"])
def test_estimator_matches_the_standalone_functions(model, instance, kind, normalized):
    estimator = BatchContributionEstimator(model, EstimatorConfig(kind=kind, normalized=normalized))
    mode = CacheMode.GLOBAL_AVERAGE if kind == "grad_cache_global" else CacheMode.MOMENTUM
    cache = GradCache(beta=0.1, mode=mode)
    for seed in range(5):
        params, real, gen, aug, test = instance(700 + seed)
        got = estimator.score(params, real, aug, gen, test, alpha=0.05, iteration=seed)
        if kind == "loss_diff":
            expected = contribution_loss_diff(model, params, real, aug, test, 0.05, iteration=seed)
        elif kind == "grad_dot":
            expected = contribution_grad_dot(model, params, real, aug, test, 0.05, iteration=seed)
        else:
            expected, cache = contribution_grad_cache(
                cache, model, params, real, aug, test, 0.05, normalized=normalized, iteration=seed
            )
        assert got == expected
    if kind.startswith("grad_cache"):
        assert np.array_equal(estimator.cache.vector, cache.vector)
        assert estimator.cache.t == 5


def _cached_scores(model, instance, scale: float, normalized: bool) -> list[float]:
    cache, scores = GradCache(beta=0.1), []
    for seed in range(30):
        params, real, _, aug, test = instance(800 + seed)
        score, cache = contribution_grad_cache(
            cache, model, params, real, aug, test, 0.05, normalized=normalized,
            delta=scale * gradient_difference(model, params, real, aug),
            test_gradient=scale * model.backward(params, test),
        )
        scores.append(score.value)
    return scores


@pytest.mark.parametrize("scale", [0.125, 4.0, 1024.0])
def test_scaling_every_gradient_keeps_cosine_decisions(model, instance, scale):
    base = _cached_scores(model, instance, 1.0, normalized=True)
    scaled = _cached_scores(model, instance, scale, normalized=True)
    assert scaled == base
    gate = GateConfig(kind=GateKind.FIXED, tau=-0.05)

    def accepted(scores):
        policy = GatePolicy(gate)
        return [policy.decide(s, i).accepted for i, s in enumerate(scores)]

    assert accepted(scaled) == accepted(base)
    assert _cached_scores(model, instance, 7.3, normalized=True) == pytest.approx(base, abs=1e-12)


def test_unnormalized_scores_scale_quadratically(model, instance):
    base = _cached_scores(model, instance, 1.0, normalized=False)
    scaled = _cached_scores(model, instance, 3.0, normalized=False)
    assert scaled == pytest.approx([9.0 * s for s in base], rel=1e-10, abs=1e-15)
