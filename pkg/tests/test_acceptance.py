"""Desk-scale experiments on the default world. Minutes each; run with ``pytest -m slow``."""
import dataclasses
import functools

import numpy as np
import pytest

from bsgal.config import ExperimentConfig
from bsgal.ingest.sampling import TestSampling, augment, sample_real_batch, sample_test_batch
from bsgal.ingest.world import WorldConfig, make_world, tier_sample
from bsgal.output.report import rank_correlation
from bsgal.transform.estimator import contribution_loss_diff
from bsgal.transform.gate import GateConfig, GateKind, acceptance_rate
from bsgal.transform.trainer import run_baseline, run_bsgal, run_offline_filter, run_random_dropout, score_offline
from bsgal.utils import make_rng

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2, 3, 4)
NOISE_TIERS = (0.0, 0.4, 1.0, 2.0, 4.0)


def default_run(seed: int, **changes):
    return dataclasses.replace(ExperimentConfig().run_config(seed), **changes)


@functools.lru_cache(maxsize=None)
def pretrained(seed: int) -> np.ndarray:
    return run_baseline(default_run(seed, max_paste=0, iterations=3000)).final_params


def tier_scores(seed: int, n: int = 1000) -> dict[float, np.ndarray]:
    config = default_run(seed)
    dataset, stream, _ = make_world(config.world)
    return {
        scale: score_offline(config, pretrained(seed), tier_sample(dataset, stream, scale, n, make_rng(seed, "pool", i)))
        for i, scale in enumerate(NOISE_TIERS)
    }


@pytest.mark.parametrize("seed", SEEDS[:3])
def test_contribution_falls_with_noise(seed):
    scores = tier_scores(seed)
    means = [scores[scale].mean() for scale in NOISE_TIERS]
    assert all(a > b for a, b in zip(means, means[1:])), means
    assert abs(means[0]) < 0.1 * scores[NOISE_TIERS[-1]].std()


@pytest.mark.parametrize("seed", SEEDS[:3])
def test_offline_scores_rank_noise(seed):
    config = default_run(seed)
    _, stream, _ = make_world(config.world)
    mixed = stream.spawn(make_rng(seed, "pool", len(NOISE_TIERS))).draw(1000)
    assert rank_correlation(score_offline(config, pretrained(seed), mixed), mixed.noise_scales) > 0.5


def test_offline_filter_discards_the_noisy_samples():
    report = run_offline_filter(default_run(0, iterations=2000, offline_pool_size=1000), 0.5, pretrained(0))
    assert report.extras["kept_mean_noise"] < report.extras["discarded_mean_noise"]


@functools.lru_cache(maxsize=None)
def offline_margin(iterations: int) -> float:
    margins = []
    for seed in SEEDS:
        config = default_run(seed, iterations=iterations, offline_pool_size=1000)
        filtered = run_offline_filter(config, 0.5, pretrained(seed)).final_accuracy
        unfiltered = run_offline_filter(config, 1.0, pretrained(seed)).final_accuracy
        margins.append(filtered - unfiltered)
    return float(np.mean(margins))


def test_offline_filtering_helps_on_average():
    assert offline_margin(2000) >= 0.0


def test_offline_margin_shrinks_with_longer_training():
    assert offline_margin(10000) <= offline_margin(2000)


def test_corrupted_batches_score_negative():
    config = default_run(0)
    model = config.classifier()
    params = pretrained(0)
    dataset, stream, _ = make_world(config.world)
    rng = np.random.default_rng(0)
    scores = []
    for _ in range(50):
        real = sample_real_batch(dataset, config.batch_accept, rng)
        gen = stream.draw_tier(NOISE_TIERS[-1], config.max_paste)
        test = sample_test_batch(dataset, TestSampling.ALL_CLASSES, set(), config.batch_test, rng)
        scores.append(contribution_loss_diff(model, params, real, augment(real, gen), test, config.lr).value)
    assert np.mean(scores) < 0


@pytest.mark.parametrize("target", [0.3, 0.5, 0.7])
def test_dynamic_gate_holds_its_target_in_training(target):
    config = default_run(0, iterations=5000, gate=GateConfig(kind=GateKind.DYNAMIC, target_rate=target))
    report = run_bsgal(config)
    assert acceptance_rate(report.worker_steps, 0.8) == pytest.approx(target, abs=0.02)


@pytest.fixture(scope="module")
def final_accuracies() -> dict[str, np.ndarray]:
    runs = {"bsgal": [], "baseline": [], "real-only": [], "random-dropout": []}
    for seed in SEEDS:
        config = default_run(seed)
        selected = run_bsgal(config)
        runs["bsgal"].append(selected.final_accuracy)
        runs["baseline"].append(run_baseline(config).final_accuracy)
        runs["real-only"].append(run_baseline(dataclasses.replace(config, max_paste=0)).final_accuracy)
        runs["random-dropout"].append(run_random_dropout(config, selected.acceptance_rate).final_accuracy)
    return {mode: np.array(values) for mode, values in runs.items()}


def test_selection_beats_using_everything(final_accuracies):
    bsgal, baseline = final_accuracies["bsgal"], final_accuracies["baseline"]
    assert bsgal.mean() > baseline.mean()
    assert bsgal.mean() - bsgal.std() > baseline.mean() + baseline.std()


def test_selection_beats_real_only(final_accuracies):
    assert final_accuracies["bsgal"].mean() > final_accuracies["real-only"].mean()


def test_selection_beats_random_dropout_at_the_same_rate(final_accuracies):
    assert final_accuracies["bsgal"].mean() > final_accuracies["random-dropout"].mean()


def test_clean_generated_data_does_not_hurt(final_accuracies):
    clean = dataclasses.replace(WorldConfig(), noise_tiers=(0.0,), corruption_rate=0.0)
    accuracies = [run_baseline(default_run(seed, world=clean)).final_accuracy for seed in SEEDS]
    assert np.mean(accuracies) >= final_accuracies["real-only"].mean()
