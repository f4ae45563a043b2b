"""
Run artifacts: model manifest, metrics and prediction files.
"""

import csv
import json
import math
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from fedlearn.core.phases import TrainingReport
from fedlearn.models.forest import Forest
from fedlearn.models.kernel import KernelModel

MODEL_FILE = "model.json"
METRICS_FILE = "metrics.json"

Model = Union[KernelModel, Forest]


class ExportError(Exception):
    pass


def _write_json(path: Path, data: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=False) + "\n", encoding="utf-8")
    return path


def write_manifest(out_dir, model: Model) -> Path:
    return _write_json(Path(out_dir) / MODEL_FILE, model.to_manifest())


def read_manifest(path) -> Model:
    path = Path(path)
    if path.is_dir():
        path = path / MODEL_FILE
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ExportError(f"cannot read model manifest {path}: {e}") from e
    algorithm = data.get("algorithm")
    if algorithm == "kernel":
        return KernelModel.from_manifest(data)
    if algorithm == "forest":
        return Forest.from_manifest(data)
    raise ExportError(f"{path}: unknown algorithm {algorithm!r}")


def build_metrics(model: Model, report: TrainingReport, train_accuracy: Optional[float]) -> dict:
    metrics = {"algorithm": "kernel" if isinstance(model, KernelModel) else "forest"}
    if isinstance(model, KernelModel):
        metrics["iterations"] = model.iterations
    else:
        metrics["trees"] = len(model.trees)
        metrics["nodes"] = sum(len(tree.nodes) for tree in model.trees)
    metrics["rounds"] = report.loop_rounds
    metrics["capped"] = report.capped
    metrics["wall_ms"] = {str(phase): round(ms, 3) for phase, ms in sorted(report.wall_ms.items())}
    if train_accuracy is None or math.isnan(train_accuracy):
        metrics["train_accuracy"] = None
    else:
        metrics["train_accuracy"] = train_accuracy
    metrics["transcript_hash"] = report.transcript_hash
    return metrics


def write_metrics(out_dir, metrics: dict) -> Path:
    return _write_json(Path(out_dir) / METRICS_FILE, metrics)


def read_metrics(out_dir) -> dict:
    return json.loads((Path(out_dir) / METRICS_FILE).read_text(encoding="utf-8"))


def write_predictions(path, ids: Sequence[int], scores: np.ndarray, labels: np.ndarray) -> Path:
    path = Path(path)
    if not len(ids) == len(scores) == len(labels):
        raise ExportError(f"{len(ids)} ids, {len(scores)} scores and {len(labels)} labels")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["id", "score", "label"])
        for sample_id, score, label in zip(ids, scores, labels):
            writer.writerow([int(sample_id), repr(float(score)), int(label)])
    return path


def read_ids(path) -> np.ndarray:
    """The `id` column of a CSV file, in file order."""
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header or header[0].strip() != "id":
            raise ExportError(f"{path}: first header column must be 'id'")
        return np.array([int(row[0]) for row in reader if row], dtype=np.uint64)
