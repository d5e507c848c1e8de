"""Histogram and comparison tables, plus loaders for reading runs back."""
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from bsgal.errors import ConfigError
from bsgal.output.artifacts import SUMMARY, read_csv, read_json, write_csv

HISTOGRAM_HEADER = ("tier", "bin_left", "bin_right", "count", "source")
TIER_STATS_HEADER = ("tier", "n", "mean", "std", "min", "max", "source")
ABLATION_HEADER = ("axis", "value", "mean_accuracy", "std_accuracy", "acceptance_rate", "seeds")
COMPARISON_HEADER = (
    "name", "mode", "final_accuracy", "rare_accuracy", "common_accuracy", "frequent_accuracy",
    "acceptance_rate", "config_hash",
)


def histogram_rows(
    scores_by_tier: Mapping[float, np.ndarray],
    bins: int,
    sources: Mapping[float, str] | None = None,
) -> list[tuple]:
    """Per-tier counts over one shared set of bin edges, so tiers line up when plotted.

    ``sources`` names where each tier's samples came from ("real" or "generated", the default).
    """
    sources = sources or {}
    everything = np.concatenate([np.asarray(s, dtype=np.float64) for s in scores_by_tier.values()])
    edges = np.histogram_bin_edges(everything, bins=bins)
    rows = []
    for tier, scores in scores_by_tier.items():
        counts, _ = np.histogram(scores, bins=edges)
        source = sources.get(tier, "generated")
        rows.extend(
            (float(tier), float(edges[i]), float(edges[i + 1]), int(counts[i]), source)
            for i in range(len(counts))
        )
    return rows


def tier_statistics(scores_by_tier: Mapping[float, np.ndarray], sources: Mapping[float, str] | None = None) -> list[tuple]:
    sources = sources or {}
    rows = []
    for tier, scores in scores_by_tier.items():
        scores = np.asarray(scores, dtype=np.float64)
        rows.append((
            float(tier), len(scores), float(scores.mean()), float(scores.std()), float(scores.min()), float(scores.max()),
            sources.get(tier, "generated"),
        ))
    return rows


def rank_correlation(scores: np.ndarray, noise_scales: np.ndarray) -> float:
    """Spearman correlation between scores and -noise_scale; higher means noisier samples rank lower."""
    result = stats.spearmanr(scores, -np.asarray(noise_scales, dtype=np.float64))
    return float(result.statistic if hasattr(result, "statistic") else result[0])


def ablation_row(axis: str, value: str, accuracies: Sequence[float], acceptance_rates: Sequence[float | None]) -> tuple:
    rates = [r for r in acceptance_rates if r is not None]
    return (
        axis,
        value,
        float(np.mean(accuracies)),
        float(np.std(accuracies)),
        float(np.mean(rates)) if rates else None,
        len(accuracies),
    )


def write_histograms(path: Path, rows: Iterable[tuple]) -> int:
    return write_csv(path, HISTOGRAM_HEADER, rows)


def write_tier_statistics(path: Path, rows: Iterable[tuple]) -> int:
    return write_csv(path, TIER_STATS_HEADER, rows)


def write_ablation(path: Path, rows: Iterable[tuple]) -> int:
    return write_csv(path, ABLATION_HEADER, rows)


def load_summary(run_dir: Path) -> dict:
    path = Path(run_dir) / SUMMARY
    if not path.exists():
        raise ConfigError(f"no {SUMMARY} in {run_dir}")
    return read_json(path)


def list_runs(root: Path) -> list[Path]:
    """Every directory under ``root`` that holds a run summary, sorted by path."""
    root = Path(root)
    if not root.exists():
        return []
    return sorted(path.parent for path in root.rglob(SUMMARY))


def comparison_row(run_dir: Path) -> tuple:
    summary = load_summary(run_dir)
    tiers = summary.get("tier_accuracy", {})
    return (
        summary.get("name", Path(run_dir).name),
        summary["mode"],
        summary["final_accuracy"],
        tiers.get("rare"),
        tiers.get("common"),
        tiers.get("frequent"),
        summary.get("acceptance_rate"),
        summary.get("config_hash"),
    )


def write_comparison(path: Path, run_dirs: Iterable[Path]) -> int:
    return write_csv(path, COMPARISON_HEADER, (comparison_row(d) for d in run_dirs))


def load_table(path: Path) -> list[dict[str, str]]:
    return read_csv(path)


def accuracy_trajectory(summary: dict) -> list[tuple[int, float]]:
    return [(int(t), float(acc)) for t, acc in summary.get("accuracy_trajectory", [])]
