#!/usr/bin/env python3
"""
Run artifacts on disk.

Everything written here is reproducible byte-for-byte from the config and the
seeds: floats are written with 17 significant digits (JSON uses the shortest
round-trip repr, CSV ``.17g``), key order is fixed, and nothing time-dependent
is stored.

Parameter files ("GALP") are a small binary format, all integers little-endian:

    magic      4 bytes   b"GALP"
    version    u16
    config     32 bytes  ClassifierConfig.digest()
    P          u64
    values     P x f8
    checksum   u64       blake2b-64 over everything before it
"""
import csv
import hashlib
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from bsgal.errors import CorruptionError, IncompatibilityError
from bsgal.model import ClassifierConfig
from bsgal.numerics import ParameterVector, as_vector
from bsgal.utils import Batch, Origin, logger

PARAMS_MAGIC = b"GALP"
PARAMS_VERSION = 1
_HEADER = struct.Struct("<4sH32sQ")
_CHECKSUM = struct.Struct("<Q")

RUN_LOG = "run.jsonl"
SUMMARY = "summary.json"
PARAMS = "params.galp"
EVAL_SET = "eval.csv"


def jsonable(value: Any) -> Any:
    """Non-finite floats become strings ("inf", "-inf", "nan"); numpy scalars become Python ones."""
    if isinstance(value, dict):
        return {str(key): jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(item) for item in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


def format_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_jsonl(path: Path, records: Iterable[dict]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(json.dumps(jsonable(record), allow_nan=False) + "\n")
            count += 1
    return count


def read_jsonl(path: Path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def write_json(path: Path, payload: dict):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(jsonable(payload), indent=2, allow_nan=False) + "\n")


def read_json(path: Path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> int:
    """RFC-4180 CSV with a header row and CRLF line endings."""
    count = 0
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\r\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(cell) for cell in row])
            count += 1
    return count


def read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def save_params(path: Path, params: ParameterVector, config: ClassifierConfig):
    values = np.ascontiguousarray(as_vector(params, "params"), dtype="<f8")
    if len(values) != config.num_params:
        raise IncompatibilityError(f"expected {config.num_params} parameters, got shape {values.shape}")
    body = _HEADER.pack(PARAMS_MAGIC, PARAMS_VERSION, config.digest(), len(values)) + values.tobytes()
    checksum = hashlib.blake2b(body, digest_size=_CHECKSUM.size).digest()
    with open(path, "wb") as f:
        f.write(body + checksum)
    logger.debug(f"Saved {len(values)} parameters to {path}")


def load_params(path: Path, config: ClassifierConfig | None = None) -> ParameterVector:
    """Read a parameter file, checking its checksum and, when given, the model config it was written for."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _HEADER.size + _CHECKSUM.size:
        raise CorruptionError(f"{path} is too short to be a parameter file ({len(data)} bytes)")
    magic, version, digest, count = _HEADER.unpack_from(data)
    if magic != PARAMS_MAGIC:
        raise CorruptionError(f"{path} is not a parameter file (magic {magic!r})")
    expected_size = _HEADER.size + 8 * count + _CHECKSUM.size
    if len(data) != expected_size:
        raise CorruptionError(f"{path} holds {len(data)} bytes, expected {expected_size} for {count} parameters")
    body, checksum = data[:-_CHECKSUM.size], data[-_CHECKSUM.size:]
    if hashlib.blake2b(body, digest_size=_CHECKSUM.size).digest() != checksum:
        raise CorruptionError(f"{path} failed its checksum")
    if version != PARAMS_VERSION:
        raise IncompatibilityError(f"{path} has format version {version}, this build reads {PARAMS_VERSION}")
    if config is not None and (digest != config.digest() or count != config.num_params):
        raise IncompatibilityError(f"{path} was written for a different model config")
    return as_vector(np.frombuffer(body, dtype="<f8", offset=_HEADER.size, count=count).astype(np.float64), "stored parameters")


def batch_rows(batch: Batch) -> Iterable[list[Any]]:
    for i in range(len(batch)):
        origin = Origin.from_flag(bool(batch.generated[i])).value
        yield [int(batch.ids[i]), int(batch.labels[i]), origin, float(batch.noise_scales[i]), *batch.features[i].tolist()]


def write_batch_csv(path: Path, batch: Batch) -> int:
    """One row per sample: id, label, origin, noise_scale, f0 ... f{d-1}."""
    header = ["id", "label", "origin", "noise_scale", *(f"f{j}" for j in range(batch.input_dim))]
    return write_csv(path, header, batch_rows(batch))


def read_batch_csv(path: Path) -> Batch:
    rows = read_csv(path)
    with open(path, "r", encoding="utf-8", newline="") as f:
        header = next(csv.reader(f))
    feature_columns = [name for name in header if name.startswith("f") and name[1:].isdigit()]
    if not rows:
        return Batch.empty(len(feature_columns))
    return Batch(
        features=np.array([[float(row[c]) for c in feature_columns] for row in rows], dtype=np.float64),
        labels=np.array([int(row["label"]) for row in rows], dtype=np.int64),
        generated=np.array([Origin(row["origin"]) == Origin.GENERATED for row in rows], dtype=bool),
        noise_scales=np.array([float(row["noise_scale"]) for row in rows], dtype=np.float64),
        ids=np.array([int(row["id"]) for row in rows], dtype=np.int64),
    )


@dataclass(frozen=True)
class RunArtifacts:
    """Where one train run's files live."""
    root: Path

    @property
    def run_log(self) -> Path:
        return self.root / RUN_LOG

    @property
    def summary(self) -> Path:
        return self.root / SUMMARY

    @property
    def params(self) -> Path:
        return self.root / PARAMS

    @property
    def eval_set(self) -> Path:
        return self.root / EVAL_SET

    def exists(self) -> bool:
        return self.summary.exists()


def write_train_artifacts(
    root: Path,
    records: Iterable[dict],
    summary: dict,
    params: ParameterVector,
    model_config: ClassifierConfig,
    eval_set: Batch,
) -> RunArtifacts:
    root.mkdir(parents=True, exist_ok=True)
    artifacts = RunArtifacts(root)
    lines = write_jsonl(artifacts.run_log, records)
    write_json(artifacts.summary, summary)
    save_params(artifacts.params, params, model_config)
    write_batch_csv(artifacts.eval_set, eval_set)
    logger.info(f"Wrote {lines} log records and the run summary to {root}")
    return artifacts
