#!/usr/bin/env python3
"""
Experiment orchestration behind the CLI: train runs, the noise-tier
contribution study, ablation sweeps, run comparison and world export.

Output layout under the output root:

    <name>/<mode>/seed-<s>/          run.jsonl, summary.json, params.galp, eval.csv
    <name>/distribution/seed-<s>/    histograms.csv, tier_stats.csv, distribution.json
    <name>/ablate-<axis>/            ablation.csv
    <name>/world/                    real.csv, eval.csv, generated.csv
"""
import dataclasses
from pathlib import Path
from typing import Callable, Sequence

from bsgal.config import ExperimentConfig
from bsgal.errors import BsgalError, ConfigError
from bsgal.ingest.world import make_world, tier_sample
from bsgal.numerics import ParameterVector
from bsgal.output import report as tables
from bsgal.output.artifacts import (
    RunArtifacts,
    load_params,
    read_json,
    write_batch_csv,
    write_json,
    write_train_artifacts,
)
from bsgal.transform.estimator import EstimatorKind
from bsgal.transform.gate import GateKind
from bsgal.transform.trainer import (
    RunConfig,
    RunMode,
    TrainReport,
    run_baseline,
    run_bsgal,
    run_offline_filter,
    run_random_dropout,
    score_offline,
)
from bsgal.utils import logger, make_rng

AXES = ("beta", "tau", "sampling", "normalize", "estimator", "selector", "target_rate", "mode", "pool_size")


def run_dir(config: ExperimentConfig, mode: str, seed: int) -> Path:
    return Path(config.output_dir) / config.name / mode / f"seed-{seed}"


def pretrained_params(config: ExperimentConfig, run_config: RunConfig) -> ParameterVector:
    if not config.pretrained:
        raise ConfigError("this command needs `pretrained`, the params.galp of a real-only (K=0) run")
    path = Path(config.pretrained)
    if not path.exists():
        raise ConfigError(f"pretrained parameter file {path} does not exist")
    return load_params(path, run_config.classifier().config)


def rate_from_summary(path: Path) -> float:
    """The acceptance rate recorded by a finished bsgal run."""
    path = Path(path)
    if path.is_dir():
        path = path / "summary.json"
    if not path.exists():
        raise ConfigError(f"no summary at {path}")
    summary = read_json(path)
    if summary.get("mode") != RunMode.BSGAL.value:
        raise ConfigError(f"{path} is a {summary.get('mode')} run; a rate source must be a bsgal run")
    return float(summary["acceptance_rate"])


def execute(
    config: ExperimentConfig,
    mode: RunMode,
    seed: int,
    rate: float | None = None,
) -> TrainReport:
    """Run one seed of one mode."""
    run_config = config.run_config(seed)
    if mode == RunMode.BSGAL:
        return run_bsgal(run_config)
    if mode == RunMode.BASELINE:
        return run_baseline(run_config)
    if mode == RunMode.REAL_ONLY:
        return run_baseline(dataclasses.replace(run_config, max_paste=0))
    if mode == RunMode.RANDOM_DROPOUT:
        if rate is None:
            raise ConfigError("random-dropout needs an acceptance rate (--rate or --rate-from)")
        return run_random_dropout(run_config, rate)
    if mode == RunMode.OFFLINE:
        return run_offline_filter(
            run_config,
            keep_fraction=config.offline.keep_fraction,
            pretrained=pretrained_params(config, run_config),
        )
    raise ConfigError(f"unknown mode {mode}")


def write_run(config: ExperimentConfig, report: TrainReport, seed: int, root: Path | None = None) -> RunArtifacts:
    seeded = config.with_seed(seed)
    run_config = seeded.run_config(seed)
    _, _, eval_set = make_world(run_config.world)
    summary = {
        "name": config.name,
        "seed": seed,
        "config_hash": seeded.config_hash(),
        **report.summary(),
    }
    return write_train_artifacts(
        root or run_dir(config, report.mode.value, seed),
        (record.to_dict() for record in report.records),
        summary,
        report.final_params,
        run_config.classifier().config,
        eval_set,
    )


def train(
    config: ExperimentConfig,
    mode: RunMode | str,
    rate: float | None = None,
    rate_from: Path | None = None,
) -> list[RunArtifacts]:
    """One run per configured seed; returns the artifact locations in seed order."""
    mode = RunMode(mode)
    if mode == RunMode.RANDOM_DROPOUT and rate is None and rate_from is not None:
        rate = rate_from_summary(rate_from)
    written = []
    for seed in config.seeds:
        report = execute(config, mode, seed, rate=rate)
        written.append(write_run(config, report, seed))
    return written


def distribution(config: ExperimentConfig, samples_per_tier: int | None = None) -> list[Path]:
    """Offline contribution per noise tier under a pretrained model; tier 0 is the real training data."""
    samples_per_tier = samples_per_tier or config.distribution.samples_per_tier
    if samples_per_tier < 1:
        raise ConfigError(f"samples_per_tier must be >= 1, got {samples_per_tier}")
    written = []
    for seed in config.seeds:
        run_config = config.run_config(seed)
        params = pretrained_params(config, run_config)
        dataset, stream, _ = make_world(run_config.world)

        scores_by_tier, sources = {}, {}
        for index, scale in enumerate(run_config.world.noise_tiers):
            batch = tier_sample(dataset, stream, scale, samples_per_tier, make_rng(seed, "pool", index))
            scores_by_tier[float(scale)] = score_offline(run_config, params, batch)
            sources[float(scale)] = "generated" if batch.generated.any() else "real"
            logger.info(f"Tier {scale} ({sources[float(scale)]}, n={len(batch)}): mean contribution {scores_by_tier[float(scale)].mean():.6g}")

        mixed = stream.spawn(make_rng(seed, "pool", len(run_config.world.noise_tiers))).draw(samples_per_tier)
        mixed_scores = score_offline(run_config, params, mixed)

        out = Path(config.output_dir) / config.name / "distribution" / f"seed-{seed}"
        out.mkdir(parents=True, exist_ok=True)
        tables.write_histograms(out / "histograms.csv", tables.histogram_rows(scores_by_tier, config.distribution.bins, sources))
        stats = tables.tier_statistics(scores_by_tier, sources)
        tables.write_tier_statistics(out / "tier_stats.csv", stats)
        write_json(out / "distribution.json", {
            "name": config.name,
            "seed": seed,
            "config_hash": config.with_seed(seed).config_hash(),
            "samples_per_tier": samples_per_tier,
            "tier_means": {str(row[0]): row[2] for row in stats},
            "tier_stds": {str(row[0]): row[3] for row in stats},
            "tier_sources": {str(scale): source for scale, source in sources.items()},
            # NaN (constant input) is stored as a string by the JSON writer
            "rank_correlation": tables.rank_correlation(mixed_scores, mixed.noise_scales) if samples_per_tier > 1 else None,
        })
        logger.info(f"Wrote contribution distribution for seed {seed} to {out}")
        written.append(out)
    return written


def _parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


def _parse_float(value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"not a number: {value!r}")


def _parse_int(value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"not an integer: {value!r}")


def _replace(config: ExperimentConfig, table: str, **changes) -> ExperimentConfig:
    try:
        section = dataclasses.replace(getattr(config, table), **changes)
        updated = dataclasses.replace(config, **{table: section})
        updated.run_config()
    except ConfigError:
        raise
    except (BsgalError, ValueError, TypeError) as e:
        raise ConfigError(f"invalid {table} setting {changes}: {e}") from e
    return updated


# axis -> value -> (config, mode)
AXIS_APPLIERS: dict[str, Callable[[ExperimentConfig, str], tuple[ExperimentConfig, RunMode]]] = {
    "beta": lambda c, v: (_replace(c, "estimator", beta=_parse_float(v)), RunMode.BSGAL),
    "tau": lambda c, v: (_replace(c, "gate", kind=GateKind.FIXED, tau=_parse_float(v)), RunMode.BSGAL),
    "sampling": lambda c, v: (_replace(c, "run", sampling=v), RunMode.BSGAL),
    "normalize": lambda c, v: (_replace(c, "estimator", normalized=_parse_bool(v)), RunMode.BSGAL),
    "estimator": lambda c, v: (_replace(c, "estimator", kind=v), RunMode.BSGAL),
    "selector": lambda c, v: (_replace(c, "estimator", components=tuple(v.split("+"))), RunMode.BSGAL),
    "target_rate": lambda c, v: (_replace(c, "gate", kind=GateKind.DYNAMIC, target_rate=_parse_float(v)), RunMode.BSGAL),
    "mode": lambda c, v: (c, _parse_mode(v)),
    "pool_size": lambda c, v: (_replace(c, "offline", pool_size=_parse_int(v)), RunMode.OFFLINE),
}


def _parse_mode(value: str) -> RunMode:
    try:
        mode = RunMode(value)
    except ValueError:
        raise ConfigError(f"unknown mode {value!r}")
    if mode == RunMode.OFFLINE:
        raise ConfigError("the mode axis compares streaming modes; use the pool_size axis for offline filtering")
    return mode


def ablate(config: ExperimentConfig, axis: str, values: Sequence[str]) -> Path:
    """One run per value per seed; writes the comparison table and returns its path."""
    if axis not in AXIS_APPLIERS:
        raise ConfigError(f"unknown ablation axis {axis!r}, expected one of {', '.join(AXES)}")
    values = [v.strip() for v in values if v.strip()]
    if len(values) < 2:
        raise ConfigError("an ablation needs at least two values")
    if axis == "estimator" and EstimatorKind.SINGLE_OFFLINE.value in values:
        raise ConfigError("single_offline scores samples, not batches; use the pool_size axis")
    # validate every value before spending time on runs
    plans = [(value, *AXIS_APPLIERS[axis](config, value)) for value in values]
    if axis == "mode" and RunMode.RANDOM_DROPOUT in [mode for _, _, mode in plans] and RunMode.BSGAL not in [mode for _, _, mode in plans]:
        raise ConfigError("random-dropout in a mode ablation takes its rate from bsgal, so bsgal must be listed too")

    # bsgal rates per seed, for random-dropout rows
    bsgal_rates: dict[int, float] = {}
    ordered = sorted(plans, key=lambda plan: plan[2] == RunMode.RANDOM_DROPOUT)
    results: dict[str, tuple[list[float], list[float | None]]] = {}
    for value, variant, mode in ordered:
        accuracies, rates = [], []
        for seed in config.seeds:
            report = execute(variant, mode, seed, rate=bsgal_rates.get(seed))
            if mode == RunMode.BSGAL and axis == "mode":
                bsgal_rates[seed] = report.acceptance_rate
            accuracies.append(report.final_accuracy)
            rates.append(report.acceptance_rate if mode in (RunMode.BSGAL, RunMode.RANDOM_DROPOUT) else None)
            logger.info(f"ablate {axis}={value} seed={seed}: accuracy={report.final_accuracy:.4f}")
        results[value] = (accuracies, rates)

    rows = [tables.ablation_row(axis, value, *results[value]) for value, _, _ in plans]
    best = max(rows, key=lambda row: row[2])
    logger.info(f"ablate {axis}: best value {best[1]} with mean accuracy {best[2]:.4f}")
    out = Path(config.output_dir) / config.name / f"ablate-{axis}"
    out.mkdir(parents=True, exist_ok=True)
    path = out / "ablation.csv"
    tables.write_ablation(path, rows)
    return path


def report(run_dirs: Sequence[Path], out: Path) -> Path:
    """Collect run summaries under ``run_dirs`` into one comparison table."""
    found: list[Path] = []
    for run_dir_ in run_dirs:
        run_dir_ = Path(run_dir_)
        found.extend([run_dir_] if (run_dir_ / "summary.json").exists() else tables.list_runs(run_dir_))
    if not found:
        raise ConfigError("no run summaries found")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "comparison.csv"
    tables.write_comparison(path, found)
    logger.info(f"Compared {len(found)} runs in {path}")
    return path


def export_world(config: ExperimentConfig, generated: int = 1000) -> Path:
    """Write the real set, the evaluation set and a sample of the generated stream as CSV."""
    if generated < 0:
        raise ConfigError(f"generated must be >= 0, got {generated}")
    dataset, stream, eval_set = make_world(config.world)
    out = Path(config.output_dir) / config.name / "world"
    out.mkdir(parents=True, exist_ok=True)
    write_batch_csv(out / "real.csv", dataset.data)
    write_batch_csv(out / "eval.csv", eval_set)
    write_batch_csv(out / "generated.csv", stream.draw(generated))
    return out
