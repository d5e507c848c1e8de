"""
A one-hidden-layer tanh classifier over flat parameter vectors.

The loss is a SUM over samples (not a mean), so the loss of a concatenated
batch is exactly the sum of the losses of its parts. Two loss components
exist: "cls", the softmax cross-entropy, and "aux", an entropy penalty
weighted by ``aux_weight``.
"""
import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np
import numpy.typing as npt

from bsgal.errors import DimensionError, NumericError, ParameterError, ShapeError
from bsgal.numerics import GradientVector, ParameterVector, as_vector
from bsgal.utils import Batch, Origin, make_rng

COMPONENTS = ("cls", "aux")


@dataclass(frozen=True)
class LossSelector:
    components: frozenset[str]

    def __post_init__(self):
        components = frozenset(self.components)
        if not components:
            raise ParameterError("a loss selector needs at least one component")
        unknown = components - set(COMPONENTS)
        if unknown:
            raise ParameterError(f"unknown loss components: {sorted(unknown)}")
        object.__setattr__(self, "components", components)

    @property
    def name(self) -> str:
        return "+".join(c for c in COMPONENTS if c in self.components)

    @classmethod
    def parse(cls, value: "str | Iterable[str] | LossSelector") -> "LossSelector":
        """Accept "cls", "cls+aux", "all" or an iterable of component names."""
        if isinstance(value, LossSelector):
            return value
        if isinstance(value, str):
            value = COMPONENTS if value == "all" else value.split("+")
        return cls(frozenset(part.strip() for part in value))


CLS_ONLY = LossSelector(frozenset({"cls"}))
ALL_LOSSES = LossSelector(frozenset(COMPONENTS))


@dataclass(frozen=True)
class ClassifierConfig:
    input_dim: int
    hidden_dim: int
    num_classes: int
    seed: int = 0
    aux_weight: float = 0.01

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden_dim < 1:
            raise ParameterError(f"input_dim and hidden_dim must be >= 1, got {self.input_dim}, {self.hidden_dim}")
        if self.num_classes < 2:
            raise ParameterError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.aux_weight < 0:
            raise ParameterError(f"aux_weight must be non-negative, got {self.aux_weight}")

    @property
    def num_params(self) -> int:
        return (self.input_dim * self.hidden_dim + self.hidden_dim) + (self.hidden_dim * self.num_classes + self.num_classes)

    def digest(self) -> bytes:
        """32-byte fingerprint stored in parameter files. The init seed is left out."""
        payload = asdict(self)
        payload.pop("seed")
        text = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).digest()


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    # (row index, origin, selected loss of that row)
    per_sample: list[tuple[int, Origin, float]]
    by_component: dict[str, float]


def sgd_step(params: ParameterVector, grad: GradientVector, lr: float) -> ParameterVector:
    """Return params - lr * grad as a new vector; both must be finite 1-d vectors."""
    if not lr > 0:
        raise ParameterError(f"learning rate must be positive, got {lr}")
    params = as_vector(params, "params")
    grad = as_vector(grad, "gradient")
    if params.shape != grad.shape:
        raise DimensionError(f"length mismatch: params {params.shape} vs grad {grad.shape}")
    return params - lr * grad


class MLPClassifier:
    """Stateless model: holds the config, all parameters are passed in."""

    def __init__(self, config: ClassifierConfig):
        self.config = config

    @property
    def num_params(self) -> int:
        return self.config.num_params

    def init_params(self) -> ParameterVector:
        """Zero-mean normal weights with scale 1/sqrt(fan_in), zero biases."""
        cfg = self.config
        rng = make_rng(cfg.seed, "init")
        w1 = rng.normal(0.0, 1.0 / np.sqrt(cfg.input_dim), size=(cfg.hidden_dim, cfg.input_dim))
        w2 = rng.normal(0.0, 1.0 / np.sqrt(cfg.hidden_dim), size=(cfg.num_classes, cfg.hidden_dim))
        return np.concatenate([w1.ravel(), np.zeros(cfg.hidden_dim), w2.ravel(), np.zeros(cfg.num_classes)])

    def unpack(self, params: ParameterVector):
        """Views (w1, b1, w2, b2) into a flat parameter vector."""
        cfg = self.config
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (cfg.num_params,):
            raise DimensionError(f"expected {cfg.num_params} parameters, got shape {params.shape}")
        h, d, c = cfg.hidden_dim, cfg.input_dim, cfg.num_classes
        offset = 0
        w1 = params[offset:offset + h * d].reshape(h, d)
        offset += h * d
        b1 = params[offset:offset + h]
        offset += h
        w2 = params[offset:offset + c * h].reshape(c, h)
        offset += c * h
        b2 = params[offset:offset + c]
        return w1, b1, w2, b2

    def _check_batch(self, batch: Batch):
        if len(batch) == 0:
            raise ParameterError("batch must not be empty")
        if batch.input_dim != self.config.input_dim:
            raise ShapeError(f"batch has {batch.input_dim} features, model expects {self.config.input_dim}")
        if np.any(batch.labels < 0) or np.any(batch.labels >= self.config.num_classes):
            raise ShapeError(f"labels must lie in [0, {self.config.num_classes})")
        if not np.all(np.isfinite(batch.features)):
            raise NumericError("batch features have non-finite entries")

    def _forward(self, params: ParameterVector, features: npt.NDArray[np.float64]):
        w1, b1, w2, b2 = self.unpack(params)
        hidden = np.tanh(features @ w1.T + b1)
        logits = hidden @ w2.T + b2
        return hidden, logits

    def logits(self, params: ParameterVector, features: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        return self._forward(params, np.asarray(features, dtype=np.float64))[1]

    def _terms(self, params: ParameterVector, batch: Batch):
        hidden, logits = self._forward(params, batch.features)
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        probs = np.exp(log_probs)
        cross_entropy = -log_probs[np.arange(len(batch)), batch.labels]
        entropy = -(probs * log_probs).sum(axis=1)
        return hidden, log_probs, probs, cross_entropy, entropy

    def _breakdown(self, batch: Batch, selector: LossSelector, cross_entropy, entropy) -> LossBreakdown:
        per_row = np.zeros(len(batch))
        by_component: dict[str, float] = {}
        if "cls" in selector.components:
            per_row = per_row + cross_entropy
            by_component["cls"] = float(cross_entropy.sum())
        if "aux" in selector.components:
            aux = self.config.aux_weight * entropy
            per_row = per_row + aux
            by_component["aux"] = float(aux.sum())
        per_sample = [
            (i, Origin.from_flag(bool(batch.generated[i])), float(per_row[i]))
            for i in range(len(batch))
        ]
        return LossBreakdown(total=sum(by_component.values()), per_sample=per_sample, by_component=by_component)

    def forward_loss(self, params: ParameterVector, batch: Batch, selector: LossSelector = CLS_ONLY) -> LossBreakdown:
        self._check_batch(batch)
        _, _, _, cross_entropy, entropy = self._terms(params, batch)
        return self._breakdown(batch, selector, cross_entropy, entropy)

    def loss_and_gradient(
        self,
        params: ParameterVector,
        batch: Batch,
        selector: LossSelector = CLS_ONLY,
    ) -> tuple[LossBreakdown, GradientVector]:
        """One forward and one backward pass over ``batch``."""
        self._check_batch(batch)
        hidden, log_probs, probs, cross_entropy, entropy = self._terms(params, batch)
        breakdown = self._breakdown(batch, selector, cross_entropy, entropy)

        d_logits = np.zeros_like(probs)
        if "cls" in selector.components:
            d_logits += probs
            d_logits[np.arange(len(batch)), batch.labels] -= 1.0
        if "aux" in selector.components:
            # d(-sum p log p)/dz_j = -p_j (log p_j + H)
            d_logits += self.config.aux_weight * (-probs * (log_probs + entropy[:, None]))

        _, _, w2, _ = self.unpack(params)
        grad_w2 = d_logits.T @ hidden
        grad_b2 = d_logits.sum(axis=0)
        d_pre = (d_logits @ w2) * (1.0 - hidden ** 2)
        grad_w1 = d_pre.T @ batch.features
        grad_b1 = d_pre.sum(axis=0)
        grad = np.concatenate([grad_w1.ravel(), grad_b1, grad_w2.ravel(), grad_b2])
        return breakdown, grad

    def backward(self, params: ParameterVector, batch: Batch, selector: LossSelector = CLS_ONLY) -> GradientVector:
        return self.loss_and_gradient(params, batch, selector)[1]

    def predict(self, params: ParameterVector, features: npt.NDArray[np.float64]) -> npt.NDArray[np.int64]:
        # np.argmax returns the first maximum, so ties go to the lowest class index
        return np.argmax(self.logits(params, features), axis=1)

    def accuracy(self, params: ParameterVector, dataset: Batch) -> float:
        if len(dataset) == 0:
            raise ParameterError("cannot score an empty dataset")
        predictions = self.predict(params, dataset.features)
        return float(np.count_nonzero(predictions == dataset.labels)) / len(dataset)

    def accuracy_by_tier(self, params: ParameterVector, dataset: Batch, class_tiers: Sequence[str]) -> dict[str, float]:
        """Accuracy restricted to samples whose class carries each frequency tier."""
        if len(dataset) == 0:
            raise ParameterError("cannot score an empty dataset")
        correct = self.predict(params, dataset.features) == dataset.labels
        names = [getattr(tier, "value", tier) for tier in class_tiers]
        tiers = np.asarray([names[label] for label in dataset.labels])
        result = {}
        for tier in dict.fromkeys(names):
            mask = tiers == tier
            if mask.any():
                result[tier] = float(np.count_nonzero(correct[mask])) / int(mask.sum())
        return result


@dataclass(frozen=True)
class ModelConfig:
    """The [model] settings; input and class counts come from the world."""
    hidden_dim: int = 32
    aux_weight: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.hidden_dim < 1:
            raise ParameterError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.aux_weight < 0:
            raise ParameterError(f"aux_weight must be non-negative, got {self.aux_weight}")

    def classifier_config(self, input_dim: int, num_classes: int) -> ClassifierConfig:
        return ClassifierConfig(
            input_dim=input_dim,
            hidden_dim=self.hidden_dim,
            num_classes=num_classes,
            seed=self.seed,
            aux_weight=self.aux_weight,
        )
