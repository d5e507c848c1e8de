from .artifacts import (
    RunArtifacts,
    load_params,
    read_batch_csv,
    read_jsonl,
    save_params,
    write_batch_csv,
    write_csv,
    write_jsonl,
    write_train_artifacts,
)
from .report import histogram_rows, list_runs, load_summary, rank_correlation, tier_statistics, write_comparison

__all__ = [
    "RunArtifacts", "load_params", "read_batch_csv", "read_jsonl", "save_params", "write_batch_csv", "write_csv",
    "write_jsonl", "write_train_artifacts",
    "histogram_rows", "list_runs", "load_summary", "rank_correlation", "tier_statistics", "write_comparison",
]
