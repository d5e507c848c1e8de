from .world import EvalSet, FrequencyTier, GeneratedStream, PoolStream, RealDataset, WorldConfig, make_world
from .sampling import TestSampling, augment, sample_generated, sample_real_batch, sample_test_batch

__all__ = [
    "EvalSet", "FrequencyTier", "GeneratedStream", "PoolStream", "RealDataset", "WorldConfig", "make_world",
    "TestSampling", "augment", "sample_generated", "sample_real_batch", "sample_test_batch",
]
