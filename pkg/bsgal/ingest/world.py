#!/usr/bin/env python3
"""
The synthetic data world: a long-tailed "real" dataset, a pristine held-out
evaluation set, and an endless generated stream whose samples carry feature
noise of a random tier and, at higher tiers, corrupted labels.
"""
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import numpy.typing as npt

from bsgal.errors import ParameterError
from bsgal.utils import Batch, logger, make_rng

DEFAULT_NOISE_TIERS = (0.0, 0.4, 1.0, 2.0, 4.0)
GENERATED_ID_OFFSET = 1_000_000_000


class FrequencyTier(str, Enum):
    """Class frequency buckets: rare classes have 1-10 real samples, common 11-100."""
    RARE = "rare"
    COMMON = "common"
    FREQUENT = "frequent"

    @classmethod
    def from_count(cls, count: int) -> "FrequencyTier":
        if count <= 10:
            return cls.RARE
        if count <= 100:
            return cls.COMMON
        return cls.FREQUENT


@dataclass(frozen=True)
class WorldConfig:
    num_classes: int = 10
    input_dim: int = 16
    # distance between any two class means
    class_separation: float = 1.5
    within_std: float = 0.3
    # real samples of the most frequent class; class r gets head_count * (r + 1) ** -tail_exponent
    head_count: int = 300
    tail_exponent: float = 1.5
    noise_tiers: tuple[float, ...] = DEFAULT_NOISE_TIERS
    # mixture weights over noise_tiers, uniform when empty
    tier_weights: tuple[float, ...] = ()
    corruption_rate: float = 0.5
    eval_size: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ParameterError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.input_dim < self.num_classes:
            raise ParameterError(
                f"input_dim ({self.input_dim}) must be >= num_classes ({self.num_classes}) to place equidistant class means"
            )
        if self.class_separation <= 0 or self.within_std <= 0:
            raise ParameterError("class_separation and within_std must be positive")
        if self.head_count < 1 or self.tail_exponent < 0:
            raise ParameterError("head_count must be >= 1 and tail_exponent >= 0")
        if not self.noise_tiers or any(scale < 0 for scale in self.noise_tiers):
            raise ParameterError(f"noise_tiers must be non-empty and non-negative, got {self.noise_tiers}")
        if self.tier_weights:
            if len(self.tier_weights) != len(self.noise_tiers):
                raise ParameterError("tier_weights must have one weight per noise tier")
            if any(w < 0 for w in self.tier_weights) or sum(self.tier_weights) <= 0:
                raise ParameterError(f"tier_weights must be non-negative with a positive sum, got {self.tier_weights}")
        if not 0.0 <= self.corruption_rate <= 1.0:
            raise ParameterError(f"corruption_rate must lie in [0, 1], got {self.corruption_rate}")
        if self.eval_size < 1:
            raise ParameterError(f"eval_size must be >= 1, got {self.eval_size}")

    def class_counts(self) -> list[int]:
        return [
            max(1, int(round(self.head_count * (rank + 1) ** -self.tail_exponent)))
            for rank in range(self.num_classes)
        ]


@dataclass(frozen=True, eq=False)
class ClassGeometry:
    """Isotropic Gaussian classes around fixed means."""
    means: npt.NDArray[np.float64]
    within_std: float

    @property
    def num_classes(self) -> int:
        return self.means.shape[0]

    @property
    def input_dim(self) -> int:
        return self.means.shape[1]

    def draw(self, rng: np.random.Generator, labels: npt.NDArray[np.int64]) -> npt.NDArray[np.float64]:
        noise = rng.standard_normal((len(labels), self.input_dim))
        return self.means[labels] + self.within_std * noise

    @classmethod
    def build(cls, config: WorldConfig, rng: np.random.Generator) -> "ClassGeometry":
        # orthonormal directions scaled so every pair of means is class_separation apart
        q, _ = np.linalg.qr(rng.standard_normal((config.input_dim, config.num_classes)))
        radius = config.class_separation / np.sqrt(2.0)
        return cls(means=radius * q.T, within_std=config.within_std)


@dataclass(frozen=True, eq=False)
class RealDataset:
    data: Batch
    class_counts: tuple[int, ...]
    frequency_tier: tuple[FrequencyTier, ...]
    by_class: tuple[npt.NDArray[np.int64], ...] = field(init=False)

    def __post_init__(self):
        by_class = tuple(np.flatnonzero(self.data.labels == c) for c in range(len(self.class_counts)))
        object.__setattr__(self, "by_class", by_class)

    def __len__(self) -> int:
        return len(self.data)

    @property
    def num_classes(self) -> int:
        return len(self.class_counts)

    @property
    def samples(self):
        return self.data.samples


# The evaluation set is a plain batch of pristine real samples.
EvalSet = Batch


class GeneratedStream:
    """Unbounded source of generated samples.

    Each draw picks a class uniformly, draws a pristine sample of that class,
    adds isotropic Gaussian noise of a tier-sampled scale, and flips the label
    to another class with probability corruption_rate * scale / max_scale.
    The stream owns a mutable generator: one owner at a time.
    """

    def __init__(
        self,
        geometry: ClassGeometry,
        noise_tiers: tuple[float, ...],
        tier_weights: tuple[float, ...],
        corruption_rate: float,
        rng: np.random.Generator,
        round_robin: bool = False,
        id_offset: int = GENERATED_ID_OFFSET,
    ):
        self.geometry = geometry
        self.noise_tiers = np.asarray(noise_tiers, dtype=np.float64)
        weights = np.asarray(tier_weights if len(tier_weights) else np.ones(len(noise_tiers)), dtype=np.float64)
        self.tier_weights = weights / weights.sum()
        self.corruption_rate = corruption_rate
        self.rng = rng
        # debug mode: classes cycle 0, 1, ..., C-1 instead of being drawn
        self.round_robin = round_robin
        self.id_offset = id_offset
        self._drawn = 0

    @property
    def num_classes(self) -> int:
        return self.geometry.num_classes

    @property
    def input_dim(self) -> int:
        return self.geometry.input_dim

    @property
    def max_scale(self) -> float:
        return float(self.noise_tiers.max())

    def spawn(self, rng: np.random.Generator, id_offset: int | None = None) -> "GeneratedStream":
        """Same world, independent generator; used to give each worker its own stream."""
        return GeneratedStream(
            geometry=self.geometry,
            noise_tiers=tuple(self.noise_tiers),
            tier_weights=tuple(self.tier_weights),
            corruption_rate=self.corruption_rate,
            rng=rng,
            round_robin=self.round_robin,
            id_offset=self.id_offset if id_offset is None else id_offset,
        )

    def draw_count(self, max_paste: int) -> int:
        """A paste count k drawn uniformly from [0, max_paste]."""
        if max_paste < 0:
            raise ParameterError(f"max_paste must be >= 0, got {max_paste}")
        return int(self.rng.integers(0, max_paste + 1))

    def _labels(self, k: int) -> npt.NDArray[np.int64]:
        if self.round_robin:
            return (self._drawn + np.arange(k)) % self.num_classes
        return self.rng.integers(0, self.num_classes, size=k)

    def _emit(self, labels: npt.NDArray[np.int64], scales: npt.NDArray[np.float64]) -> Batch:
        k = len(labels)
        features = self.geometry.draw(self.rng, labels)
        features = features + scales[:, None] * self.rng.standard_normal((k, self.input_dim))
        flip_prob = self.corruption_rate * scales / self.max_scale if self.max_scale > 0 else np.zeros(k)
        flips = self.rng.random(k) < flip_prob
        shifts = self.rng.integers(1, self.num_classes, size=k)
        noisy_labels = np.where(flips, (labels + shifts) % self.num_classes, labels)
        ids = self.id_offset + self._drawn + np.arange(k)
        self._drawn += k
        return Batch(
            features=features,
            labels=noisy_labels,
            generated=np.ones(k, dtype=bool),
            noise_scales=scales,
            ids=ids,
        )

    def draw(self, k: int) -> Batch:
        if k < 0:
            raise ParameterError(f"cannot draw {k} samples")
        if k == 0:
            return Batch.empty(self.input_dim)
        labels = self._labels(k)
        tiers = self.rng.choice(len(self.noise_tiers), size=k, p=self.tier_weights)
        return self._emit(labels, self.noise_tiers[tiers])

    def draw_tier(self, scale: float, n: int) -> Batch:
        """n samples that all carry noise of one given scale."""
        if scale < 0 or n < 0:
            raise ParameterError(f"invalid tier draw: scale={scale}, n={n}")
        if n == 0:
            return Batch.empty(self.input_dim)
        return self._emit(self._labels(n), np.full(n, float(scale)))


class PoolStream:
    """A finite pool of generated candidates behind the stream interface.

    Draws are uniform with replacement over the pool, in pool order.
    """

    def __init__(self, pool: Batch, rng: np.random.Generator):
        if len(pool) == 0:
            raise ParameterError("a pool stream needs at least one candidate")
        if not np.all(pool.generated):
            raise ParameterError("a pool stream only holds generated samples")
        self.pool = pool
        self.rng = rng

    @property
    def input_dim(self) -> int:
        return self.pool.input_dim

    def spawn(self, rng: np.random.Generator, id_offset: int | None = None) -> "PoolStream":
        return PoolStream(self.pool, rng)

    def draw_count(self, max_paste: int) -> int:
        if max_paste < 0:
            raise ParameterError(f"max_paste must be >= 0, got {max_paste}")
        return int(self.rng.integers(0, max_paste + 1))

    def draw(self, k: int) -> Batch:
        if k < 0:
            raise ParameterError(f"cannot draw {k} samples")
        if k == 0:
            return Batch.empty(self.input_dim)
        return self.pool.take(self.rng.integers(0, len(self.pool), size=k))


def make_world(config: WorldConfig, round_robin: bool = False) -> tuple[RealDataset, GeneratedStream, EvalSet]:
    """Build the real dataset, the generated stream and the evaluation set."""
    world_rng = make_rng(config.seed, "world")
    geometry = ClassGeometry.build(config, world_rng)

    counts = config.class_counts()
    labels = np.repeat(np.arange(config.num_classes), counts)
    real = Batch(
        features=geometry.draw(world_rng, labels),
        labels=labels,
        generated=np.zeros(len(labels), dtype=bool),
        noise_scales=np.zeros(len(labels)),
        ids=np.arange(len(labels)),
    )
    dataset = RealDataset(
        data=real,
        class_counts=tuple(counts),
        frequency_tier=tuple(FrequencyTier.from_count(c) for c in counts),
    )

    # class-balanced, pristine, ids disjoint from the real set
    eval_rng = make_rng(config.seed, "eval")
    eval_labels = np.arange(config.eval_size) % config.num_classes
    eval_set = Batch(
        features=geometry.draw(eval_rng, eval_labels),
        labels=eval_labels,
        generated=np.zeros(config.eval_size, dtype=bool),
        noise_scales=np.zeros(config.eval_size),
        ids=len(real) + np.arange(config.eval_size),
    )

    stream = GeneratedStream(
        geometry=geometry,
        noise_tiers=config.noise_tiers,
        tier_weights=config.tier_weights,
        corruption_rate=config.corruption_rate,
        rng=make_rng(config.seed, "generated"),
        round_robin=round_robin,
        id_offset=GENERATED_ID_OFFSET,
    )
    tiers = [t.value for t in dataset.frequency_tier]
    logger.info(
        f"World seed={config.seed}: {len(real)} real samples over {config.num_classes} classes "
        f"({tiers.count('rare')} rare, {tiers.count('common')} common, {tiers.count('frequent')} frequent), "
        f"eval set of {config.eval_size}"
    )
    return dataset, stream, eval_set


def tier_sample(dataset: RealDataset, stream: GeneratedStream, scale: float, n: int, rng: np.random.Generator) -> Batch:
    """Samples for one noise tier of the contribution study.

    Tier 0 is the real training data itself: all of it when ``n`` covers the
    dataset, else ``n`` distinct samples. Other tiers are drawn from an
    independent copy of ``stream``.
    """
    if n < 1:
        raise ParameterError(f"a tier needs at least one sample, got {n}")
    if scale == 0.0:
        if n >= len(dataset):
            return dataset.data
        return dataset.data.take(np.sort(rng.choice(len(dataset), size=n, replace=False)))
    return stream.spawn(rng).draw_tier(scale, n)
