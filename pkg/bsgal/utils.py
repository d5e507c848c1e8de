import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
import numpy.typing as npt

log_level = os.getenv("BSGAL_LOG_LEVEL", "INFO").upper()
logger = logging.getLogger("bsgal")
logger.setLevel(log_level)

# Named RNG streams. Each purpose draws from its own stream so that runners
# which skip a step (e.g. the baseline never samples a test batch) still see
# the same real and generated batches as the streaming trainer.
RNG_STREAMS = {
    "world": 0,
    "init": 1,
    "real": 2,
    "generated": 3,
    "test": 4,
    "dropout": 5,
    "pool": 6,
    "eval": 7,
}


def make_rng(seed: int, stream: str, *keys: int) -> np.random.Generator:
    """Build the generator for a named stream, optionally keyed (e.g. by worker)."""
    if stream not in RNG_STREAMS:
        raise KeyError(f"Unknown rng stream: {stream}")
    return np.random.default_rng(np.random.SeedSequence([int(seed), RNG_STREAMS[stream], *map(int, keys)]))


def canonical_hash(payload: dict) -> str:
    """SHA-256 over the sorted-key JSON form of a plain dict."""
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class Origin(str, Enum):
    REAL = "real"
    GENERATED = "generated"

    @classmethod
    def from_flag(cls, generated: bool) -> "Origin":
        return cls.GENERATED if generated else cls.REAL


@dataclass(frozen=True, eq=False)
class LabeledSample:
    features: npt.NDArray[np.float64]
    label: int
    origin: Origin = Origin.REAL
    # 0 for pristine samples
    noise_scale: float = 0.0
    sample_id: int = -1


@dataclass(frozen=True, eq=False)
class Batch:
    """An ordered batch of samples stored column-wise.

    Row order is meaningful: every reduction over a batch runs in row order,
    which keeps losses and gradients bit-reproducible.
    """
    features: npt.NDArray[np.float64]
    labels: npt.NDArray[np.int64]
    generated: npt.NDArray[np.bool_]
    noise_scales: npt.NDArray[np.float64]
    ids: npt.NDArray[np.int64] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 2:
            raise ValueError(f"Batch features must be 2-d, got shape {features.shape}")
        n = features.shape[0]
        ids = np.full(n, -1, dtype=np.int64) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        columns = {
            "labels": np.asarray(self.labels, dtype=np.int64).reshape(-1),
            "generated": np.asarray(self.generated, dtype=bool).reshape(-1),
            "noise_scales": np.asarray(self.noise_scales, dtype=np.float64).reshape(-1),
            "ids": ids.reshape(-1),
        }
        for name, column in columns.items():
            if column.shape[0] != n:
                raise ValueError(f"Batch column {name} has {column.shape[0]} rows, expected {n}")
        object.__setattr__(self, "features", features)
        for name, column in columns.items():
            object.__setattr__(self, name, column)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    @property
    def origins(self) -> list[Origin]:
        return [Origin.from_flag(flag) for flag in self.generated]

    @property
    def samples(self) -> list[LabeledSample]:
        return [
            LabeledSample(
                features=self.features[i].copy(),
                label=int(self.labels[i]),
                origin=Origin.from_flag(bool(self.generated[i])),
                noise_scale=float(self.noise_scales[i]),
                sample_id=int(self.ids[i]),
            )
            for i in range(len(self))
        ]

    def classes(self) -> set[int]:
        return {int(label) for label in self.labels}

    def take(self, indices: Sequence[int] | npt.NDArray[np.int64]) -> "Batch":
        idx = np.asarray(indices, dtype=np.int64)
        return Batch(
            features=self.features[idx],
            labels=self.labels[idx],
            generated=self.generated[idx],
            noise_scales=self.noise_scales[idx],
            ids=self.ids[idx],
        )

    def concat(self, other: "Batch") -> "Batch":
        if other.input_dim != self.input_dim:
            raise ValueError(f"Cannot concatenate batches with input dims {self.input_dim} and {other.input_dim}")
        return Batch(
            features=np.concatenate([self.features, other.features]),
            labels=np.concatenate([self.labels, other.labels]),
            generated=np.concatenate([self.generated, other.generated]),
            noise_scales=np.concatenate([self.noise_scales, other.noise_scales]),
            ids=np.concatenate([self.ids, other.ids]),
        )

    @classmethod
    def empty(cls, input_dim: int) -> "Batch":
        return cls(
            features=np.zeros((0, input_dim)),
            labels=np.zeros(0, dtype=np.int64),
            generated=np.zeros(0, dtype=bool),
            noise_scales=np.zeros(0),
            ids=np.zeros(0, dtype=np.int64),
        )

    @classmethod
    def from_samples(cls, samples: Iterable[LabeledSample], input_dim: int | None = None) -> "Batch":
        samples = list(samples)
        if not samples:
            if input_dim is None:
                raise ValueError("input_dim is required to build an empty batch")
            return cls.empty(input_dim)
        return cls(
            features=np.stack([np.asarray(s.features, dtype=np.float64) for s in samples]),
            labels=np.array([s.label for s in samples], dtype=np.int64),
            generated=np.array([s.origin == Origin.GENERATED for s in samples], dtype=bool),
            noise_scales=np.array([s.noise_scale for s in samples], dtype=np.float64),
            ids=np.array([s.sample_id for s in samples], dtype=np.int64),
        )
