"""Batch samplers over the synthetic world and the append-mode augmentation."""
from enum import Enum
from typing import Collection

import numpy as np

from bsgal.errors import ParameterError
from bsgal.ingest.world import GeneratedStream, PoolStream, RealDataset
from bsgal.utils import Batch


class TestSampling(str, Enum):
    """How the per-iteration test batch is drawn from the real data."""
    # keep pytest from collecting this enum as a test class
    __test__ = False

    ALL_CLASSES = "all_classes"
    PASTED_CLASSES = "pasted_classes"
    ALL_IMAGES = "all_images"

    @classmethod
    def from_string(cls, name: str) -> "TestSampling":
        try:
            return cls(name.lower().replace("-", "_"))
        except ValueError:
            raise ParameterError(f"unknown sampling strategy: {name}")


def sample_real_batch(dataset: RealDataset, size: int, rng: np.random.Generator) -> Batch:
    """Uniform sample without replacement from the real dataset."""
    if size < 1:
        raise ParameterError(f"batch size must be >= 1, got {size}")
    if size > len(dataset):
        raise ParameterError(f"batch size {size} exceeds dataset size {len(dataset)}")
    return dataset.data.take(rng.choice(len(dataset), size=size, replace=False))


def sample_generated(stream: GeneratedStream | PoolStream, k: int) -> Batch:
    """k generated samples; k == 0 gives the empty batch."""
    if k < 0:
        raise ParameterError(f"k must be >= 0, got {k}")
    return stream.draw(k)


def augment(real: Batch, gen: Batch) -> Batch:
    """Append-mode augmentation: the generated samples follow the real ones."""
    if len(real) == 0:
        raise ParameterError("augment needs a non-empty real batch")
    if len(gen) == 0:
        return real
    return real.concat(gen)


def sample_test_batch(
    dataset: RealDataset,
    strategy: TestSampling,
    gen_classes: Collection[int],
    size: int,
    rng: np.random.Generator,
) -> Batch:
    """Draw a test batch with replacement according to ``strategy``.

    all_classes picks a class uniformly over all classes and then a sample of
    that class; pasted_classes does the same over ``gen_classes``;
    all_images picks samples uniformly.
    """
    if size < 1:
        raise ParameterError(f"test batch size must be >= 1, got {size}")
    strategy = TestSampling(strategy)
    if strategy == TestSampling.ALL_IMAGES:
        return dataset.data.take(rng.integers(0, len(dataset), size=size))

    if strategy == TestSampling.PASTED_CLASSES:
        if not gen_classes:
            raise ParameterError("pasted_classes sampling needs at least one generated class")
        pool = np.array(sorted(int(c) for c in gen_classes), dtype=np.int64)
    else:
        pool = np.arange(dataset.num_classes)
    classes = pool[rng.integers(0, len(pool), size=size)]
    indices = np.empty(size, dtype=np.int64)
    for i, label in enumerate(classes):
        members = dataset.by_class[label]
        if len(members) == 0:
            raise ParameterError(f"class {label} has no real samples to test against")
        indices[i] = members[rng.integers(0, len(members))]
    return dataset.data.take(indices)
