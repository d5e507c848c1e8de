"""
bsgal scores generated training data while a model trains on it.

Each iteration a generated batch is either kept in the update or dropped,
depending on its estimated contribution to the test loss. A synthetic
long-tailed world with noisy generated data stands in for real images so the
whole loop runs on a laptop.
"""
from .model import ClassifierConfig, LossSelector, MLPClassifier, ModelConfig
from .utils import Batch, LabeledSample, Origin

__all__ = ["ClassifierConfig", "LossSelector", "MLPClassifier", "ModelConfig", "Batch", "LabeledSample", "Origin"]
