"""
Forest structures.

The coordinator holds the skeleton: topology, leaf values and, for each split,
the owning party and its record id. Split thresholds exist only in the owning
party's record store.
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

RECORDS_FILE = "split_records.bin"
RECORD = struct.Struct("<QId")


class ForestError(Exception):
    pass


class UnknownRecord(ForestError):
    pass


@dataclass(frozen=True)
class SplitRecord:
    record_id: int
    feature: int
    threshold: float


@dataclass
class TreeNode:
    node_id: int
    depth: int
    n_samples: int = 0
    value: Optional[float] = None
    party: Optional[int] = None
    record: Optional[int] = None
    feature: Optional[int] = None
    quantile: Optional[int] = None
    left: Optional[int] = None
    right: Optional[int] = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"id": self.node_id, "depth": self.depth, "n": self.n_samples, "value": self.value}
        return {
            "id": self.node_id,
            "depth": self.depth,
            "n": self.n_samples,
            "party": self.party,
            "record": self.record,
            "feature": self.feature,
            "quantile": self.quantile,
            "left": self.left,
            "right": self.right,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TreeNode":
        if "value" in data:
            return cls(int(data["id"]), int(data["depth"]), int(data.get("n", 0)), value=float(data["value"]))
        return cls(
            int(data["id"]), int(data["depth"]), int(data.get("n", 0)),
            party=int(data["party"]), record=int(data["record"]),
            feature=int(data["feature"]), quantile=int(data["quantile"]),
            left=int(data["left"]), right=int(data["right"]),
        )


@dataclass
class Tree:
    nodes: List[TreeNode] = field(default_factory=list)

    @property
    def root(self) -> TreeNode:
        return self.nodes[0]

    def add(self, depth: int, n_samples: int) -> TreeNode:
        node = TreeNode(node_id=len(self.nodes), depth=depth, n_samples=n_samples)
        self.nodes.append(node)
        return node

    def splits(self) -> List[tuple]:
        """(party, feature, quantile) of every internal node in node-id order."""
        return [(n.party, n.feature, n.quantile) for n in self.nodes if not n.is_leaf]

    def leaves(self) -> List[TreeNode]:
        return [n for n in self.nodes if n.is_leaf]

    def check(self) -> None:
        for node in self.nodes:
            if node.is_leaf:
                if node.value is None or not 0.0 <= node.value <= 1.0:
                    raise ForestError(f"leaf {node.node_id} has value {node.value}")
            elif node.right is None:
                raise ForestError(f"internal node {node.node_id} has one child")


@dataclass
class Forest:
    parties: List[str]
    trees: List[Tree] = field(default_factory=list)
    seed: int = 0
    max_depth: int = 0
    threshold: float = 0.5

    def to_manifest(self) -> dict:
        return {
            "algorithm": "forest",
            "parties": list(self.parties),
            "seed": self.seed,
            "max_depth": self.max_depth,
            "n_trees": len(self.trees),
            "threshold": self.threshold,
            "trees": [[node.to_dict() for node in tree.nodes] for tree in self.trees],
        }

    @classmethod
    def from_manifest(cls, data: dict) -> "Forest":
        if data.get("algorithm") != "forest":
            raise ForestError(f"manifest describes a {data.get('algorithm')!r} model, not a forest")
        trees = [Tree([TreeNode.from_dict(n) for n in nodes]) for nodes in data["trees"]]
        for tree in trees:
            tree.check()
        return cls(
            parties=list(data["parties"]),
            trees=trees,
            seed=int(data.get("seed", 0)),
            max_depth=int(data.get("max_depth", 0)),
            threshold=float(data.get("threshold", 0.5)),
        )

    def labels(self, scores: np.ndarray) -> np.ndarray:
        return (np.asarray(scores) >= self.threshold).astype(np.float64)


def save_records(model_dir, records: Dict[int, SplitRecord]) -> Path:
    path = Path(model_dir) / RECORDS_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        for record_id in sorted(records):
            r = records[record_id]
            f.write(RECORD.pack(r.record_id, r.feature, r.threshold))
    return path


def load_records(model_dir) -> Dict[int, SplitRecord]:
    path = Path(model_dir) / RECORDS_FILE
    if not path.exists():
        raise UnknownRecord(f"no split records at {path}")
    data = path.read_bytes()
    if len(data) % RECORD.size:
        raise ForestError(f"{path} is truncated")
    records = {}
    for record_id, feature, threshold in RECORD.iter_unpack(data):
        records[record_id] = SplitRecord(record_id, feature, threshold)
    return records
