import dataclasses

import numpy as np
import pytest
from scipy import stats

from bsgal.errors import ParameterError
from bsgal.ingest.sampling import TestSampling, augment, sample_generated, sample_real_batch, sample_test_batch
from bsgal.ingest.world import FrequencyTier, PoolStream, WorldConfig, make_world, tier_sample
from bsgal.utils import Batch, Origin


def test_real_set_follows_class_counts(world, world_config):
    dataset, _, _ = world
    counts = np.bincount(dataset.data.labels, minlength=world_config.num_classes)
    assert counts.tolist() == list(dataset.class_counts) == world_config.class_counts()
    assert FrequencyTier.RARE in dataset.frequency_tier
    assert min(dataset.class_counts) <= 10
    assert not dataset.data.generated.any()


def test_default_world_is_long_tailed():
    counts = WorldConfig().class_counts()
    assert counts[0] == 300
    assert counts == sorted(counts, reverse=True)
    tiers = {FrequencyTier.from_count(c) for c in counts}
    assert tiers == {FrequencyTier.RARE, FrequencyTier.COMMON, FrequencyTier.FREQUENT}


def test_zero_tail_exponent_gives_uniform_counts():
    assert set(WorldConfig(tail_exponent=0.0, head_count=50).class_counts()) == {50}


def test_eval_set_is_pristine_balanced_and_disjoint(world, world_config):
    dataset, _, eval_set = world
    assert len(eval_set) == world_config.eval_size
    assert not eval_set.generated.any()
    assert np.all(eval_set.noise_scales == 0)
    assert set(np.bincount(eval_set.labels).tolist()) == {world_config.eval_size // world_config.num_classes}
    assert not set(eval_set.ids.tolist()) & set(dataset.data.ids.tolist())


def test_class_means_are_equidistant(world_config):
    from bsgal.ingest.world import ClassGeometry
    from bsgal.utils import make_rng

    geometry = ClassGeometry.build(world_config, make_rng(0, "world"))
    diffs = geometry.means[:, None, :] - geometry.means[None, :, :]
    distances = np.linalg.norm(diffs, axis=-1)[~np.eye(world_config.num_classes, dtype=bool)]
    assert np.allclose(distances, world_config.class_separation)


@pytest.mark.parametrize("changes", [
    {"input_dim": 3},
    {"num_classes": 1},
    {"corruption_rate": 1.5},
    {"noise_tiers": ()},
    {"tier_weights": (1.0, 1.0)},
])
def test_invalid_world_config(changes):
    with pytest.raises(ParameterError):
        dataclasses.replace(WorldConfig(num_classes=4, input_dim=6), **changes)


def test_make_world_is_deterministic(world_config):
    a_real, a_stream, a_eval = make_world(world_config)
    b_real, b_stream, b_eval = make_world(world_config)
    assert np.array_equal(a_real.data.features, b_real.data.features)
    assert np.array_equal(a_eval.features, b_eval.features)
    assert np.array_equal(a_stream.draw(5).features, b_stream.draw(5).features)


def test_clean_oracle_never_flips_labels(world_config):
    config = dataclasses.replace(world_config, noise_tiers=(0.0,), corruption_rate=0.0)
    _, stream, _ = make_world(config, round_robin=True)
    batch = stream.draw(8)
    assert batch.labels.tolist() == [0, 1, 2, 3, 0, 1, 2, 3]
    assert np.all(batch.noise_scales == 0)
    assert batch.generated.all()


def test_round_robin_gives_exact_class_counts(world_config):
    config = dataclasses.replace(world_config, corruption_rate=0.0)
    _, stream, _ = make_world(config, round_robin=True)
    batch = sample_generated(stream, 4 * 25)
    assert np.bincount(batch.labels).tolist() == [25] * 4


def test_generated_classes_are_balanced(world):
    _, stream, _ = world
    n, c = 10_000, 4
    counts = np.bincount(stream.draw(n).labels, minlength=c)
    sigma = np.sqrt(n * (1 / c) * (1 - 1 / c))
    assert np.all(np.abs(counts - n / c) < 3 * sigma)


def test_feature_variance_grows_with_noise_tier(world_config):
    config = dataclasses.replace(world_config, corruption_rate=0.0)
    _, stream, _ = make_world(config)
    variances = [stream.draw_tier(scale, 10_000).features.var(axis=0).mean() for scale in config.noise_tiers]
    assert all(a < b for a, b in zip(variances, variances[1:]))


def test_label_flips_track_noise_scale(world_config):
    config = dataclasses.replace(world_config, corruption_rate=0.5)
    _, stream, _ = make_world(config, round_robin=True)
    clean = stream.draw_tier(0.0, 400)
    assert np.array_equal(clean.labels, np.arange(400) % 4)
    _, stream, _ = make_world(config, round_robin=True)
    noisy = stream.draw_tier(4.0, 4000)
    flipped = np.mean(noisy.labels != np.arange(4000) % 4)
    assert flipped == pytest.approx(0.5, abs=0.04)


def test_label_flips_never_fall_with_noise_scale(world_config):
    config = dataclasses.replace(world_config, corruption_rate=0.5)
    rates = []
    for scale in config.noise_tiers:
        _, stream, _ = make_world(config, round_robin=True)
        batch = stream.draw_tier(scale, 20_000)
        rates.append(np.mean(batch.labels != np.arange(20_000) % 4))
    assert all(a <= b for a, b in zip(rates, rates[1:])), rates
    expected = [0.5 * scale / max(config.noise_tiers) for scale in config.noise_tiers]
    assert rates == pytest.approx(expected, abs=0.02)


def test_stream_sustains_a_million_draws(world):
    _, stream, _ = world
    drawn = 0
    for _ in range(1000):
        batch = stream.draw(1000)
        assert np.all(np.isfinite(batch.features))
        drawn += len(batch)
    assert drawn == 1_000_000
    assert batch.ids[-1] == batch.ids[0] + 999 == stream.id_offset + drawn - 1


def test_generated_ids_are_disjoint_from_real(world):
    dataset, stream, _ = world
    assert not set(stream.draw(50).ids.tolist()) & set(dataset.data.ids.tolist())


def test_sample_real_batch(world):
    dataset, _, _ = world
    everything = sample_real_batch(dataset, len(dataset), np.random.default_rng(0))
    assert sorted(everything.ids.tolist()) == sorted(dataset.data.ids.tolist())
    a = sample_real_batch(dataset, 5, np.random.default_rng(1))
    b = sample_real_batch(dataset, 5, np.random.default_rng(1))
    assert np.array_equal(a.ids, b.ids)
    assert len(set(a.ids.tolist())) == 5
    with pytest.raises(ParameterError):
        sample_real_batch(dataset, len(dataset) + 1, np.random.default_rng(0))


def test_single_sample_draws_are_uniform(world):
    dataset, _, _ = world
    rng = np.random.default_rng(5)
    ids = np.concatenate([sample_real_batch(dataset, 1, rng).ids for _ in range(10_000)])
    counts = np.bincount(ids, minlength=len(dataset))
    assert stats.chisquare(counts).pvalue > 1e-3


def test_sample_generated_zero_is_empty(world):
    _, stream, _ = world
    batch = sample_generated(stream, 0)
    assert len(batch) == 0
    assert batch.input_dim == 6
    with pytest.raises(ParameterError):
        sample_generated(stream, -1)


def test_augment_appends_in_order(world):
    dataset, stream, _ = world
    real = sample_real_batch(dataset, 4, np.random.default_rng(0))
    gen = stream.draw(3)
    aug = augment(real, gen)
    assert len(aug) == 7
    assert aug.origins == [Origin.REAL] * 4 + [Origin.GENERATED] * 3
    assert np.array_equal(aug.ids, np.concatenate([real.ids, gen.ids]))
    assert augment(real, Batch.empty(6)) is real
    with pytest.raises(ParameterError):
        augment(Batch.empty(6), gen)


def test_test_batch_strategies(world):
    dataset, _, _ = world
    rng = np.random.default_rng(3)
    pasted = sample_test_batch(dataset, TestSampling.PASTED_CLASSES, {1, 3}, 64, rng)
    assert set(pasted.labels.tolist()) <= {1, 3}
    assert not pasted.generated.any()
    balanced = sample_test_batch(dataset, TestSampling.ALL_CLASSES, set(), 4000, rng)
    assert np.all(np.abs(np.bincount(balanced.labels) - 1000) < 3 * np.sqrt(4000 * 0.25 * 0.75))
    images = sample_test_batch(dataset, TestSampling.ALL_IMAGES, set(), 4000, rng)
    # all_images follows the long tail instead of balancing classes
    assert np.bincount(images.labels, minlength=4)[0] > np.bincount(images.labels, minlength=4)[3]
    with pytest.raises(ParameterError):
        sample_test_batch(dataset, TestSampling.PASTED_CLASSES, set(), 8, rng)


def test_sampling_names():
    assert TestSampling.from_string("pasted-classes") == TestSampling.PASTED_CLASSES
    with pytest.raises(ParameterError):
        TestSampling.from_string("some_images")


def test_pool_stream_draws_from_pool(world):
    _, stream, _ = world
    pool = stream.draw(10)
    pool_stream = PoolStream(pool, np.random.default_rng(0))
    drawn = pool_stream.draw(50)
    assert set(drawn.ids.tolist()) <= set(pool.ids.tolist())
    assert len(pool_stream.draw(0)) == 0
    with pytest.raises(ParameterError):
        PoolStream(Batch.empty(6), np.random.default_rng(0))


def test_tier_zero_is_the_real_training_data(world):
    dataset, stream, _ = world
    assert tier_sample(dataset, stream, 0.0, len(dataset), np.random.default_rng(0)) is dataset.data
    subset = tier_sample(dataset, stream, 0.0, 20, np.random.default_rng(0))
    assert len(set(subset.ids.tolist())) == 20
    assert set(subset.ids.tolist()) <= set(dataset.data.ids.tolist())
    assert not subset.generated.any()
    noisy = tier_sample(dataset, stream, 2.0, 20, np.random.default_rng(0))
    assert noisy.generated.all() and np.all(noisy.noise_scales == 2.0)
    with pytest.raises(ParameterError):
        tier_sample(dataset, stream, 0.0, 0, np.random.default_rng(0))
