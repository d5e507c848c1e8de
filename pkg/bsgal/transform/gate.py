"""Accept/reject gating of generated batches by contribution score."""
import collections
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

import numpy as np

from bsgal.errors import ParameterError


class GateKind(str, Enum):
    FIXED = "fixed"
    DYNAMIC = "dynamic"


@dataclass(frozen=True)
class GateConfig:
    # None: dynamic for cosine-normalized scores, fixed at tau otherwise
    kind: GateKind | None = None
    # fixed mode; -inf always accepts, +inf always rejects
    tau: float = -0.05
    # dynamic mode
    target_rate: float = 0.5
    window: int = 512
    warmup: int = 64

    def __post_init__(self):
        if self.kind is not None:
            object.__setattr__(self, "kind", GateKind(self.kind))
        if math.isnan(self.tau):
            raise ParameterError("tau must not be NaN")
        if not 0.0 < self.target_rate < 1.0:
            raise ParameterError(f"target_rate must lie in (0, 1), got {self.target_rate}")
        if self.window < 1:
            raise ParameterError(f"window must be >= 1, got {self.window}")
        if not 0 <= self.warmup <= self.window:
            raise ParameterError(f"warmup must lie in [0, window], got {self.warmup}")

    def resolved(self, normalized_scores: bool) -> "GateConfig":
        """This config with an unset kind filled in for the given score type."""
        if self.kind is not None:
            return self
        return replace(self, kind=GateKind.DYNAMIC if normalized_scores else GateKind.FIXED)


@dataclass(frozen=True)
class GateDecision:
    accepted: bool
    effective_tau: float
    score: float
    iteration: int


class GatePolicy:
    """Threshold policy with a bounded window of recent scores.

    The window records every score, accepted or not. In dynamic mode the
    threshold is the (1 - target_rate) quantile of the window (linear
    interpolation between order statistics); while the window holds fewer
    than ``warmup`` scores everything is accepted.
    """

    def __init__(self, config: GateConfig):
        if config.kind is None:
            raise ParameterError("the gate kind is unset; build the policy from GateConfig.resolved()")
        self.config = config
        self.window: collections.deque[float] = collections.deque(maxlen=config.window)

    @property
    def kind(self) -> GateKind:
        return self.config.kind

    def threshold(self) -> float:
        if self.kind == GateKind.FIXED:
            return float(self.config.tau)
        if len(self.window) < self.config.warmup or not self.window:
            return -math.inf
        return float(np.quantile(np.fromiter(self.window, dtype=np.float64), 1.0 - self.config.target_rate))

    def decide(self, score: float, iteration: int) -> GateDecision:
        if not math.isfinite(score):
            raise ParameterError(f"cannot gate a non-finite score: {score}")
        effective_tau = self.threshold()
        # strict: a score equal to the threshold is rejected
        decision = GateDecision(accepted=score > effective_tau, effective_tau=effective_tau, score=score, iteration=iteration)
        self.window.append(score)
        return decision


def decide(policy: GatePolicy, score: float, iteration: int) -> tuple[GateDecision, GatePolicy]:
    return policy.decide(score, iteration), policy


def acceptance_rate(decisions: Sequence[GateDecision], tail_fraction: float = 1.0) -> float:
    """Accepted fraction over the last ceil(tail_fraction * n) decisions."""
    if not decisions:
        raise ParameterError("no decisions to summarize")
    if not 0.0 < tail_fraction <= 1.0:
        raise ParameterError(f"tail_fraction must lie in (0, 1], got {tail_fraction}")
    tail = list(decisions)[-math.ceil(tail_fraction * len(decisions)):]
    return sum(1 for d in tail if d.accepted) / len(tail)
