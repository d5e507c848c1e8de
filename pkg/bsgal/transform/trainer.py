#!/usr/bin/env python3
"""
Streaming training runners.

Every runner shares one loop: per iteration each logical worker samples its
own real batch and generated batch, decides whether to train on both or
on the real batch alone, and the chosen gradients are summed in ascending
worker-seed order for a single SGD step. The runners differ only in how that
decision is made:

- baseline: always train on real + generated (with max_paste=0 this is real-only)
- bsgal: score the generated batch with a contribution estimator and gate on the score
- random-dropout: accept with a fixed probability
- offline: score a finite candidate pool once, then run the baseline loop
  over the top fraction of the pool
"""
import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from bsgal.errors import ParameterError
from bsgal.ingest.sampling import (
    TestSampling,
    augment,
    sample_generated,
    sample_real_batch,
    sample_test_batch,
)
from bsgal.ingest.world import (
    GENERATED_ID_OFFSET,
    EvalSet,
    GeneratedStream,
    PoolStream,
    RealDataset,
    WorldConfig,
    make_world,
)
from bsgal.model import LossSelector, MLPClassifier, ModelConfig, sgd_step
from bsgal.numerics import GradientVector, ParameterVector
from bsgal.transform.estimator import (
    BatchContributionEstimator,
    ContributionScore,
    EstimatorConfig,
    contribution_single_offline,
)
from bsgal.transform.gate import GateConfig, GatePolicy, acceptance_rate
from bsgal.utils import Batch, logger, make_rng


class RunMode(str, Enum):
    BSGAL = "bsgal"
    BASELINE = "baseline"
    REAL_ONLY = "real-only"
    RANDOM_DROPOUT = "random-dropout"
    OFFLINE = "offline"


@dataclass(frozen=True)
class RunConfig:
    iterations: int = 10000
    batch_accept: int = 16
    batch_test: int = 32
    # must equal batch_accept * num_workers when given
    batch_train: int | None = None
    num_workers: int = 4
    lr: float = 0.05
    # cosine decay from lr down to lr_min
    lr_min: float = 0.005
    # K: generated samples per worker batch are drawn from [0, K]
    max_paste: int = 8
    sampling: TestSampling = TestSampling.PASTED_CLASSES
    train_components: tuple[str, ...] = ("cls", "aux")
    # evaluate every eval_every iterations; None means iterations // 50
    eval_every: int | None = None
    seed: int = 0
    # one seed per worker; empty means 0, 1, ..., num_workers - 1
    worker_seeds: tuple[int, ...] = ()
    parallel: bool = False
    offline_pool_size: int = 2000
    world: WorldConfig = field(default_factory=WorldConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    gate: GateConfig = field(default_factory=GateConfig)

    def __post_init__(self):
        object.__setattr__(self, "sampling", TestSampling.from_string(self.sampling))
        if self.iterations < 1:
            raise ParameterError(f"iterations must be >= 1, got {self.iterations}")
        if self.batch_accept < 1 or self.batch_test < 1 or self.num_workers < 1:
            raise ParameterError("batch_accept, batch_test and num_workers must be >= 1")
        if self.batch_train is not None and self.batch_train != self.batch_accept * self.num_workers:
            raise ParameterError(
                f"batch_train ({self.batch_train}) must equal batch_accept * num_workers "
                f"({self.batch_accept} * {self.num_workers})"
            )
        if not 0 < self.lr_min <= self.lr:
            raise ParameterError(f"need 0 < lr_min <= lr, got lr={self.lr}, lr_min={self.lr_min}")
        if self.max_paste < 0:
            raise ParameterError(f"max_paste must be >= 0, got {self.max_paste}")
        if self.eval_every is not None and self.eval_every < 1:
            raise ParameterError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.worker_seeds and len(self.worker_seeds) != self.num_workers:
            raise ParameterError(f"expected {self.num_workers} worker seeds, got {len(self.worker_seeds)}")
        if self.offline_pool_size < 1:
            raise ParameterError(f"offline_pool_size must be >= 1, got {self.offline_pool_size}")
        LossSelector.parse(self.train_components)

    @property
    def b_train(self) -> int:
        return self.batch_accept * self.num_workers

    @property
    def eval_interval(self) -> int:
        return self.eval_every or max(1, self.iterations // 50)

    @property
    def seeds_per_worker(self) -> tuple[int, ...]:
        return self.worker_seeds or tuple(range(self.num_workers))

    @property
    def train_selector(self) -> LossSelector:
        return LossSelector.parse(self.train_components)

    def learning_rate(self, iteration: int) -> float:
        """Cosine-annealed rate: lr at iteration 1, lr_min at the last iteration."""
        progress = (iteration - 1) / max(1, self.iterations - 1)
        return self.lr_min + 0.5 * (self.lr - self.lr_min) * (1.0 + math.cos(math.pi * progress))

    @property
    def gate_config(self) -> GateConfig:
        """The gate with its kind settled: an unset kind follows the estimator's score type."""
        return self.gate.resolved(self.estimator.normalized_scores)

    def classifier(self) -> MLPClassifier:
        return MLPClassifier(self.model.classifier_config(self.world.input_dim, self.world.num_classes))


@dataclass
class WorkerStep:
    worker: int
    k: int
    accepted: bool
    # estimator fields stay None for runners that do not score
    kind: str | None
    score: float | None
    normalized: bool | None
    effective_tau: float | None
    loss_real: float | None
    loss_aug: float


@dataclass
class IterationRecord:
    iteration: int
    lr: float
    loss: float
    workers: list[WorkerStep]

    @property
    def accepted(self) -> int:
        return sum(1 for w in self.workers if w.accepted)

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "lr": self.lr,
            "loss": self.loss,
            "accepted": self.accepted,
            "workers": [asdict(w) for w in self.workers],
        }


@dataclass
class TrainReport:
    mode: RunMode
    records: list[IterationRecord]
    accuracy_trajectory: list[tuple[int, float]]
    acceptance_trajectory: list[tuple[int, float]]
    final_params: ParameterVector
    final_accuracy: float
    tier_accuracy: dict[str, float]
    wall_time: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def worker_steps(self) -> list[WorkerStep]:
        return [step for record in self.records for step in record.workers]

    @property
    def acceptance_rate(self) -> float:
        return acceptance_rate(self.worker_steps, 1.0)

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean([acc for _, acc in self.accuracy_trajectory]))

    def summary(self) -> dict:
        """Everything except wall time, which would break byte-reproducibility."""
        return {
            "mode": self.mode.value,
            "iterations": len(self.records),
            "final_accuracy": self.final_accuracy,
            "mean_accuracy": self.mean_accuracy,
            "tier_accuracy": self.tier_accuracy,
            "acceptance_rate": self.acceptance_rate,
            "accuracy_trajectory": [list(point) for point in self.accuracy_trajectory],
            "acceptance_trajectory": [list(point) for point in self.acceptance_trajectory],
            "extras": self.extras,
        }

    def trajectory_digest(self) -> str:
        """Fingerprint of the training trajectory: accuracies and final parameters."""
        h = hashlib.sha256()
        h.update(json.dumps(self.accuracy_trajectory).encode("utf-8"))
        h.update(np.ascontiguousarray(self.final_params, dtype="<f8").tobytes())
        return h.hexdigest()


@dataclass
class StepInputs:
    params: ParameterVector
    real: Batch
    gen: Batch
    aug: Batch
    real_grad: GradientVector | None
    aug_grad: GradientVector
    lr: float
    iteration: int


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    score: ContributionScore | None = None
    effective_tau: float | None = None


class AcceptAll:
    """Baseline decision: always train on the augmented batch."""
    needs_real_gradient = False

    def decide(self, step: StepInputs) -> Verdict:
        return Verdict(accepted=True)


class RandomDropout:
    """Accept with a fixed probability, ignoring the data."""
    needs_real_gradient = True

    def __init__(self, rate: float, rng: np.random.Generator):
        self.rate = rate
        self.rng = rng

    def decide(self, step: StepInputs) -> Verdict:
        return Verdict(accepted=bool(self.rng.random() < self.rate))


class ContributionGate:
    """Score the worker's generated batch against a sampled test batch and gate on it."""
    needs_real_gradient = True

    def __init__(
        self,
        estimator: BatchContributionEstimator,
        policy: GatePolicy,
        dataset: RealDataset,
        sampling: TestSampling,
        batch_test: int,
        rng: np.random.Generator,
        reuse_gradients: bool,
    ):
        self.estimator = estimator
        self.policy = policy
        self.dataset = dataset
        self.sampling = sampling
        self.batch_test = batch_test
        self.rng = rng
        self.reuse_gradients = reuse_gradients
        self._warned = False

    def decide(self, step: StepInputs) -> Verdict:
        gen_classes = step.gen.classes()
        strategy = self.sampling
        if strategy == TestSampling.PASTED_CLASSES and not gen_classes:
            # nothing pasted this round; the score is 0 regardless, keep the cache moving
            if not self._warned:
                logger.warning("No generated classes to test against, falling back to all_classes sampling")
                self._warned = True
            strategy = TestSampling.ALL_CLASSES
        test = sample_test_batch(self.dataset, strategy, gen_classes, self.batch_test, self.rng)
        score = self.estimator.score(
            step.params,
            step.real,
            step.aug,
            step.gen,
            test,
            alpha=step.lr,
            iteration=step.iteration,
            real_grad=step.real_grad if self.reuse_gradients else None,
            aug_grad=step.aug_grad if self.reuse_gradients else None,
        )
        decision = self.policy.decide(score.value, step.iteration)
        return Verdict(accepted=decision.accepted, score=score, effective_tau=decision.effective_tau)


class Worker:
    """One logical device: its own samplers, generated stream and decision state."""

    def __init__(
        self,
        index: int,
        worker_seed: int,
        config: RunConfig,
        model: MLPClassifier,
        dataset: RealDataset,
        stream: GeneratedStream | PoolStream,
        decider,
    ):
        self.index = index
        self.worker_seed = worker_seed
        self.config = config
        self.model = model
        self.dataset = dataset
        self.real_rng = make_rng(config.seed, "real", worker_seed)
        self.stream = stream.spawn(
            make_rng(config.seed, "generated", worker_seed),
            id_offset=GENERATED_ID_OFFSET * (worker_seed + 2),
        )
        self.decider = decider
        self.selector = config.train_selector

    def step(self, params: ParameterVector, lr: float, iteration: int) -> tuple[WorkerStep, GradientVector]:
        real = sample_real_batch(self.dataset, self.config.batch_accept, self.real_rng)
        k = self.stream.draw_count(self.config.max_paste)
        gen = sample_generated(self.stream, k)
        aug = augment(real, gen)
        aug_loss, aug_grad = self.model.loss_and_gradient(params, aug, self.selector)
        real_loss, real_grad = None, None
        if self.decider.needs_real_gradient:
            if len(gen) == 0:
                real_loss, real_grad = aug_loss, aug_grad
            else:
                real_loss, real_grad = self.model.loss_and_gradient(params, real, self.selector)
        verdict = self.decider.decide(StepInputs(params, real, gen, aug, real_grad, aug_grad, lr, iteration))
        chosen = aug_grad if verdict.accepted else real_grad
        score = verdict.score
        step = WorkerStep(
            worker=self.index,
            k=k,
            accepted=verdict.accepted,
            kind=None if score is None else score.estimator_kind.value,
            score=None if score is None else score.value,
            normalized=None if score is None else score.normalized,
            effective_tau=verdict.effective_tau,
            loss_real=None if real_loss is None else real_loss.total,
            loss_aug=aug_loss.total,
        )
        return step, chosen


class WorkerGroup:
    """Workers share the parameters; their chosen gradients are summed in ascending worker-seed order.

    The update does not depend on which worker holds which seed.
    """

    def __init__(self, workers: list[Worker], parallel: bool = False):
        self.workers = workers
        self.parallel = parallel and len(workers) > 1
        self._pool = ThreadPoolExecutor(max_workers=len(workers)) if self.parallel else None

    def step(self, params: ParameterVector, lr: float, iteration: int) -> tuple[list[WorkerStep], GradientVector]:
        if self._pool is not None:
            results = list(self._pool.map(lambda w: w.step(params, lr, iteration), self.workers))
        else:
            results = [w.step(params, lr, iteration) for w in self.workers]
        order = sorted(range(len(self.workers)), key=lambda i: self.workers[i].worker_seed)
        total = results[order[0]][1]
        for i in order[1:]:
            total = total + results[i][1]
        return [step for step, _ in results], total

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()


def evaluate(model: MLPClassifier, params: ParameterVector, eval_set: EvalSet) -> float:
    return model.accuracy(params, eval_set)


def _train(
    config: RunConfig,
    mode: RunMode,
    make_decider,
    initial_params: ParameterVector | None = None,
    generated: Batch | None = None,
) -> TrainReport:
    """The shared streaming loop. ``make_decider(index, worker_seed, dataset)`` builds each worker's decider."""
    started = time.perf_counter()
    model = config.classifier()
    dataset, stream, eval_set = make_world(config.world)
    if generated is not None:
        stream = PoolStream(generated, make_rng(config.seed, "pool"))
    params = model.init_params() if initial_params is None else np.array(initial_params, dtype=np.float64)

    workers = [
        Worker(i, seed, config, model, dataset, stream, make_decider(i, seed, dataset))
        for i, seed in enumerate(config.seeds_per_worker)
    ]
    group = WorkerGroup(workers, parallel=config.parallel)
    logger.info(
        f"Starting {mode.value} run: {config.iterations} iterations, {config.num_workers} workers, "
        f"batch_train={config.b_train}, K={config.max_paste}"
    )

    records: list[IterationRecord] = []
    accuracy_trajectory: list[tuple[int, float]] = []
    acceptance_trajectory: list[tuple[int, float]] = []
    accepted_total = 0
    try:
        for t in range(1, config.iterations + 1):
            lr = config.learning_rate(t)
            steps, total_grad = group.step(params, lr, t)
            params = sgd_step(params, total_grad, lr)
            record = IterationRecord(iteration=t, lr=lr, loss=math.fsum(_chosen_loss(s) for s in steps), workers=steps)
            records.append(record)
            accepted_total += record.accepted
            if t % config.eval_interval == 0 or t == config.iterations:
                accuracy = evaluate(model, params, eval_set)
                rate = accepted_total / (t * config.num_workers)
                accuracy_trajectory.append((t, accuracy))
                acceptance_trajectory.append((t, rate))
                logger.info(f"[{mode.value}] iteration {t}: accuracy={accuracy:.4f} acceptance={rate:.3f} lr={lr:.5f}")
    finally:
        group.close()

    report = TrainReport(
        mode=mode,
        records=records,
        accuracy_trajectory=accuracy_trajectory,
        acceptance_trajectory=acceptance_trajectory,
        final_params=params,
        final_accuracy=accuracy_trajectory[-1][1],
        tier_accuracy=model.accuracy_by_tier(params, eval_set, dataset.frequency_tier),
        wall_time=time.perf_counter() - started,
    )
    logger.info(
        f"Finished {mode.value} run in {report.wall_time:.1f}s: final accuracy {report.final_accuracy:.4f}, "
        f"acceptance rate {report.acceptance_rate:.3f}"
    )
    return report


def _chosen_loss(step: WorkerStep) -> float:
    return step.loss_aug if step.accepted else step.loss_real


def run_baseline(
    config: RunConfig,
    initial_params: ParameterVector | None = None,
    generated_pool: Batch | None = None,
) -> TrainReport:
    """Copy-paste baseline: every generated batch is trained on."""
    mode = RunMode.REAL_ONLY if config.max_paste == 0 else RunMode.BASELINE
    return _train(config, mode, lambda i, seed, dataset: AcceptAll(), initial_params, generated_pool)


def run_bsgal(config: RunConfig, initial_params: ParameterVector | None = None) -> TrainReport:
    """Batched streaming selection: gate each worker's generated batch on its estimated contribution."""
    model = config.classifier()
    reuse = config.estimator.selector == config.train_selector
    gate = config.gate_config
    logger.info(f"Gate: {gate.kind.value} (tau={gate.tau}, target_rate={gate.target_rate})")

    def make_decider(index: int, seed: int, dataset: RealDataset) -> ContributionGate:
        return ContributionGate(
            estimator=BatchContributionEstimator(model, config.estimator),
            policy=GatePolicy(gate),
            dataset=dataset,
            sampling=config.sampling,
            batch_test=config.batch_test,
            rng=make_rng(config.seed, "test", seed),
            reuse_gradients=reuse,
        )

    return _train(config, RunMode.BSGAL, make_decider, initial_params)


def run_random_dropout(
    config: RunConfig,
    measured_rate: float,
    initial_params: ParameterVector | None = None,
) -> TrainReport:
    """Control run: accept generated batches by coin flip at a given rate."""
    if not 0.0 <= measured_rate <= 1.0:
        raise ParameterError(f"measured_rate must lie in [0, 1], got {measured_rate}")
    report = _train(
        config,
        RunMode.RANDOM_DROPOUT,
        lambda i, seed, dataset: RandomDropout(measured_rate, make_rng(config.seed, "dropout", seed)),
        initial_params,
    )
    report.extras["dropout_rate"] = measured_rate
    return report


def draw_offline_pool(config: RunConfig) -> Batch:
    """The finite candidate pool offline filtering scores, drawn from the generated stream."""
    _, stream, _ = make_world(config.world)
    return stream.spawn(make_rng(config.seed, "pool")).draw(config.offline_pool_size)


def reference_gradient(
    model: MLPClassifier,
    params: ParameterVector,
    dataset: RealDataset,
    selector: LossSelector,
) -> GradientVector:
    """Gradient of the real-set loss with every class carrying equal total weight.

    Each class's summed gradient is scaled by len(dataset) / (num_classes * class_count);
    the weights add up to len(dataset), matching the class-balanced evaluation set.
    """
    gradient = np.zeros(model.num_params)
    weight = len(dataset) / dataset.num_classes
    for indices in dataset.by_class:
        if len(indices):
            gradient += (weight / len(indices)) * model.backward(params, dataset.data.take(indices), selector)
    return gradient


def score_offline(config: RunConfig, pretrained: ParameterVector, candidates: Batch) -> np.ndarray:
    """Offline contribution of every candidate against the balanced real-set gradient of a frozen model."""
    model = config.classifier()
    dataset, _, _ = make_world(config.world)
    selector = config.estimator.selector
    alpha = config.estimator.alpha or config.lr
    test_gradient = reference_gradient(model, pretrained, dataset, selector)
    return np.array([
        contribution_single_offline(model, pretrained, sample, test_gradient, alpha, selector).value
        for sample in candidates.samples
    ])


def run_offline_filter(
    config: RunConfig,
    keep_fraction: float,
    pretrained: ParameterVector,
    pool: Batch | None = None,
) -> TrainReport:
    """Score a candidate pool once with a frozen model, keep the top fraction, fine-tune on it."""
    if not 0.0 < keep_fraction <= 1.0:
        raise ParameterError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    pool = draw_offline_pool(config) if pool is None else pool
    scores = score_offline(config, pretrained, pool)
    n_keep = max(1, math.ceil(keep_fraction * len(pool)))
    keep = np.sort(np.argsort(-scores, kind="stable")[:n_keep])
    mask = np.zeros(len(pool), dtype=bool)
    mask[keep] = True
    kept = pool.take(keep)
    logger.info(f"Offline filter kept {n_keep} of {len(pool)} candidates")

    report = _train(config, RunMode.OFFLINE, lambda i, seed, dataset: AcceptAll(), pretrained, kept)
    report.extras.update({
        "keep_fraction": keep_fraction,
        "pool_size": len(pool),
        "kept_count": int(n_keep),
        "kept_mean_noise": float(pool.noise_scales[mask].mean()),
        "discarded_mean_noise": float(pool.noise_scales[~mask].mean()) if (~mask).any() else None,
    })
    return report
