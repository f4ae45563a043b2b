"""
Single-process plaintext forest over all parties' feature blocks.

Builds with exactly the seeds, binning, criterion and node order of the
federated protocol, so the two are comparable split by split.
"""

from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from fedlearn.api.schemas import ForestConfig
from fedlearn.models.forest import Forest, Tree
from fedlearn.services.data_service import AlignmentError, PartyTable, check_alignment
from fedlearn.services.quantiles import (
    Leaf,
    candidate_features,
    compute_quantiles,
    draw_subsample,
    find_best_split,
    forced_leaf,
    leaf_value,
    partition,
    plaintext_stats,
)


@dataclass
class ReferenceForest:
    forest: Forest
    thresholds: List[Dict[int, float]] = field(default_factory=list)


def _quantiles_for(tables: Sequence[PartyTable], config: ForestConfig, quantiles: Optional[Sequence[Optional[int]]]):
    if quantiles is None:
        return [config.quantiles] * len(tables)
    return [q or config.quantiles for q in quantiles]


def build_reference_tree(
    tables: Sequence[PartyTable],
    y: np.ndarray,
    config: ForestConfig,
    tree_index: int,
    quantiles: Optional[Sequence[Optional[int]]] = None,
) -> Tuple[Tree, Dict[int, float]]:
    levels = _quantiles_for(tables, config, quantiles)
    ids = tables[0].ids
    y = np.asarray(y, dtype=np.float64)
    root_ids = draw_subsample(ids, config.subsample, config.seed, tree_index)
    tree = Tree()
    tree.add(0, len(root_ids))
    thresholds: Dict[int, float] = {}
    queue = deque([(0, root_ids)])
    while queue:
        node_id, node_ids = queue.popleft()
        node = tree.nodes[node_id]
        rows = tables[0].row_index(node_ids)
        if forced_leaf(node.depth, len(node_ids), len(tree.nodes), config.max_depth, config.min_leaf, config.node_budget):
            node.value = leaf_value(y[rows])
            continue

        stats = {}
        for p, table in enumerate(tables):
            features = candidate_features(table.n_features, config.seed, tree_index, node_id, p, config.max_features)
            stats[p] = [plaintext_stats(int(k), table.features[rows, k], y[rows], levels[p]) for k in features]
        decision = find_best_split(stats, config.epsilon, config.min_leaf)
        if isinstance(decision, Leaf):
            node.value = leaf_value(y[rows])
            continue

        column = tables[decision.party].features[rows, decision.feature]
        threshold = float(compute_quantiles(column, levels[decision.party])[decision.quantile])
        left, right = partition(column, threshold, node_ids)
        node.party, node.feature, node.quantile = decision.party, decision.feature, decision.quantile
        node.record = node_id
        thresholds[node_id] = threshold
        left_node = tree.add(node.depth + 1, len(left))
        right_node = tree.add(node.depth + 1, len(right))
        node.left, node.right = left_node.node_id, right_node.node_id
        queue.append((left_node.node_id, left))
        queue.append((right_node.node_id, right))
    return tree, thresholds


def build_reference_forest(
    tables: Sequence[PartyTable],
    y: np.ndarray,
    config: ForestConfig,
    quantiles: Optional[Sequence[Optional[int]]] = None,
) -> ReferenceForest:
    report = check_alignment(tables)
    if not report.ok:
        raise AlignmentError(report.detail)
    forest = Forest(parties=[t.name for t in tables], seed=config.seed, max_depth=config.max_depth)
    result = ReferenceForest(forest)
    for tree_index in range(config.n_trees):
        tree, thresholds = build_reference_tree(tables, y, config, tree_index, quantiles)
        forest.trees.append(tree)
        result.thresholds.append(thresholds)
    return result


def reference_leaves(reference: ReferenceForest, tables: Sequence[PartyTable], sample_ids) -> np.ndarray:
    """Leaf node id reached by every (tree, sample)."""
    rows = tables[0].row_index(sample_ids)
    leaves = np.zeros((len(reference.forest.trees), len(rows)), dtype=np.int64)
    for t, (tree, thresholds) in enumerate(zip(reference.forest.trees, reference.thresholds)):
        for j, row in enumerate(rows):
            node = tree.root
            while not node.is_leaf:
                x = tables[node.party].features[row, node.feature]
                node = tree.nodes[node.left if x <= thresholds[node.node_id] else node.right]
            leaves[t, j] = node.node_id
    return leaves


def reference_scores(reference: ReferenceForest, tables: Sequence[PartyTable], sample_ids) -> np.ndarray:
    leaves = reference_leaves(reference, tables, sample_ids)
    values = np.array([[tree.nodes[n].value for n in row] for tree, row in zip(reference.forest.trees, leaves)])
    if values.size == 0:
        return np.zeros(leaves.shape[1])
    return values.mean(axis=0)
