"""
Party datasets: CSV ingestion, vertical partitioning, id alignment checks and
synthetic blobs for experiments.
"""

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

U64_MAX = 2 ** 64 - 1


class DataError(Exception):
    pass


class NonNumericCell(DataError):
    pass


class DuplicateId(DataError):

    def __init__(self, sample_id: int):
        super().__init__(f"DuplicateId({sample_id})")
        self.sample_id = sample_id


class MissingHeader(DataError):
    pass


class LabelError(DataError):
    pass


class AlignmentError(DataError):
    pass


@dataclass
class PartyTable:
    name: str
    ids: np.ndarray
    features: np.ndarray
    feature_names: List[str] = field(default_factory=list)
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.uint64)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            self.features = self.features.reshape(len(self.ids), -1)
        if self.features.shape[0] != len(self.ids):
            raise DataError(f"{self.features.shape[0]} feature rows for {len(self.ids)} ids")
        if not self.feature_names:
            self.feature_names = [f"x{j}" for j in range(self.features.shape[1])]
        if len(self.feature_names) != self.features.shape[1]:
            raise DataError(f"{len(self.feature_names)} names for {self.features.shape[1]} feature columns")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.float64)
            if self.labels.shape != (len(self.ids),):
                raise DataError(f"{self.labels.shape[0]} labels for {len(self.ids)} rows")

    @property
    def n_rows(self) -> int:
        return len(self.ids)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def row_index(self, sample_ids: Sequence[int]) -> np.ndarray:
        """Row positions of `sample_ids`; raises DataError on an unknown id."""
        wanted = np.asarray([int(i) for i in sample_ids], dtype=np.uint64)
        if len(wanted) == 0:
            return np.zeros(0, dtype=np.int64)
        if len(self.ids) == 0:
            raise DataError(f"unknown sample id {int(wanted[0])}")
        pos = np.searchsorted(self.ids, wanted)
        missing = self.ids[np.minimum(pos, len(self.ids) - 1)] != wanted
        if missing.any():
            raise DataError(f"unknown sample id {int(wanted[np.argmax(missing)])}")
        return pos


def _parse_float(cell: str, row: int, col: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise NonNumericCell(f"non-numeric value {cell!r} at row {row}, column {col!r}") from None


def _parse_id(cell: str, row: int) -> int:
    try:
        value = int(cell)
    except ValueError:
        raise NonNumericCell(f"non-integer id {cell!r} at row {row}") from None
    if not 0 <= value <= U64_MAX:
        raise NonNumericCell(f"id {value} at row {row} is outside the u64 range")
    return value


def _sorted_table(name, ids, rows, names, labels) -> PartyTable:
    seen = set()
    for i in ids:
        if i in seen:
            raise DuplicateId(i)
        seen.add(i)
    order = sorted(range(len(ids)), key=ids.__getitem__)
    features = np.array(rows, dtype=np.float64).reshape(len(ids), len(names))[order] if ids else np.zeros((0, len(names)))
    return PartyTable(
        name=name,
        ids=np.array([ids[k] for k in order], dtype=np.uint64),
        features=features,
        feature_names=list(names),
        labels=np.array([labels[k] for k in order], dtype=np.float64) if labels is not None else None,
    )


def load_csv(path, has_labels: bool = False, name: Optional[str] = None) -> PartyTable:
    path = Path(path)
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header or header[0].strip() != "id":
            raise MissingHeader(f"{path}: first header column must be 'id'")
        columns = [h.strip() for h in header[1:]]
        label_col = None
        if has_labels:
            if "label" not in columns:
                raise MissingHeader(f"{path}: no 'label' column")
            label_col = columns.index("label")
        names = [c for k, c in enumerate(columns) if k != label_col]

        ids, rows = [], []
        labels = [] if has_labels else None
        for lineno, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(record)} cells, header has {len(header)}")
            ids.append(_parse_id(record[0], lineno))
            values = [_parse_float(cell, lineno, columns[k]) for k, cell in enumerate(record[1:])]
            if label_col is not None:
                labels.append(values.pop(label_col))
            rows.append(values)
    table = _sorted_table(name or path.stem, ids, rows, names, labels)
    logger.info("loaded %s: %d rows, %d features", path, table.n_rows, table.n_features)
    return table


def load_labels(path) -> Tuple[np.ndarray, np.ndarray]:
    table = load_csv(path, has_labels=True)
    if table.n_features:
        raise DataError(f"{path}: labels file must have exactly the columns id,label")
    return table.ids, table.labels


def attach_labels(table: PartyTable, path) -> PartyTable:
    ids, labels = load_labels(path)
    report = check_alignment([table, PartyTable("labels", ids, np.zeros((len(ids), 0)))])
    if not report.ok:
        raise AlignmentError(f"labels in {path} do not align with {table.name}: {report.detail}")
    return replace(table, labels=labels)


def _format(value: float) -> str:
    return repr(float(value))


def write_csv(table: PartyTable, path, include_labels: bool = True) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with_labels = include_labels and table.labels is not None
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["id", *table.feature_names] + (["label"] if with_labels else []))
        for k in range(table.n_rows):
            row = [str(int(table.ids[k]))] + [_format(v) for v in table.features[k]]
            if with_labels:
                row.append(_format(table.labels[k]))
            writer.writerow(row)
    return path


def write_labels(table: PartyTable, path) -> Path:
    if table.labels is None:
        raise LabelError(f"{table.name} has no labels")
    return write_csv(PartyTable(table.name, table.ids, np.zeros((table.n_rows, 0)), [], table.labels), path)


def vertical_split(table: PartyTable, parties: int, seed: int) -> List[PartyTable]:
    if parties < 1:
        raise DataError("need at least one party")
    if table.n_features < parties:
        raise DataError(f"cannot split {table.n_features} features over {parties} parties")
    rng = np.random.default_rng(seed)
    groups = np.array_split(rng.permutation(table.n_features), parties)
    tables = []
    for k, group in enumerate(groups, start=1):
        cols = np.sort(group)
        tables.append(PartyTable(
            name=f"party{k}",
            ids=table.ids.copy(),
            features=table.features[:, cols].copy(),
            feature_names=[table.feature_names[c] for c in cols],
            labels=table.labels.copy() if k == 1 and table.labels is not None else None,
        ))
    return tables


def rejoin(tables: Sequence[PartyTable], feature_order: Sequence[str]) -> PartyTable:
    """Column-wise join of aligned party tables, columns ordered by name."""
    columns: Dict[str, np.ndarray] = {}
    labels = None
    for t in tables:
        for j, name in enumerate(t.feature_names):
            columns[name] = t.features[:, j]
        if t.labels is not None:
            labels = t.labels
    features = np.column_stack([columns[c] for c in feature_order]) if feature_order else np.zeros((tables[0].n_rows, 0))
    return PartyTable("joined", tables[0].ids.copy(), features, list(feature_order), labels)


@dataclass
class AlignmentReport:
    ok: bool
    party: Optional[str] = None
    position: Optional[int] = None
    detail: str = ""


def check_id_alignment(named_ids: Sequence[Tuple[str, Sequence[int]]]) -> AlignmentReport:
    if not named_ids:
        return AlignmentReport(ok=True)
    ref_name, ref = named_ids[0]
    ref = [int(i) for i in ref]
    for name, ids in named_ids[1:]:
        ids = [int(i) for i in ids]
        for pos in range(max(len(ref), len(ids))):
            if pos >= len(ref) or pos >= len(ids) or ref[pos] != ids[pos]:
                left = ref[pos] if pos < len(ref) else None
                right = ids[pos] if pos < len(ids) else None
                return AlignmentReport(
                    ok=False, party=name, position=pos,
                    detail=f"{name} has id {right} at position {pos} where {ref_name} has {left}",
                )
    return AlignmentReport(ok=True)


def check_alignment(tables: Sequence[PartyTable]) -> AlignmentReport:
    return check_id_alignment([(t.name, t.ids) for t in tables])


def gen_blobs(n: int, d: int, separation: float, seed: int, label_kind: str = "pm1") -> PartyTable:
    if n < 2 or n % 2:
        raise DataError(f"n must be even and >= 2, got {n}")
    if d < 1:
        raise DataError(f"d must be >= 1, got {d}")
    if label_kind not in ("pm1", "zero_one"):
        raise DataError(f"label_kind must be 'pm1' or 'zero_one', got {label_kind!r}")
    rng = np.random.default_rng(seed)
    half = n // 2
    center = np.full(d, separation / 2.0 / np.sqrt(d))
    cluster = np.repeat([1, 0], half)
    X = rng.standard_normal((n, d)) + np.where(cluster[:, None] == 1, center, -center)
    order = rng.permutation(n)
    X, cluster = X[order], cluster[order]
    labels = np.where(cluster == 1, 1.0, -1.0 if label_kind == "pm1" else 0.0)
    return PartyTable("blobs", np.arange(n, dtype=np.uint64), X, [f"x{j}" for j in range(d)], labels)


def as_pm1(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.float64)
    values = set(np.unique(labels).tolist())
    if values <= {-1.0, 1.0}:
        return labels.copy()
    if values <= {0.0, 1.0}:
        return 2.0 * labels - 1.0
    raise LabelError(f"labels must be in {{-1,+1}} or {{0,1}}, found {sorted(values)}")


def as_zero_one(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.float64)
    values = set(np.unique(labels).tolist())
    if values <= {0.0, 1.0}:
        return labels.copy()
    if values <= {-1.0, 1.0}:
        return (labels + 1.0) / 2.0
    raise LabelError(f"labels must be in {{0,1}} or {{-1,+1}}, found {sorted(values)}")
