"""
Coordinator side of the federated random forest.

The tree-building protocol is written as a generator that yields one round of
requests at a time and receives that round's responses; the Pipeline adapter
feeds it from run_pipeline. Per node: RF_STATS to every party, RF_SELECT to
the active party, RF_SPLIT to the owner of the chosen feature.
"""

import logging
from collections import deque
from typing import Generator, List, Optional, Sequence, Tuple

import numpy as np

from fedlearn.api.schemas import ForestConfig
from fedlearn.core.config import Phase, settings
from fedlearn.core.phases import DONE, Pipeline, Round, TrainingReport, exchange_round, run_pipeline
from fedlearn.core.transport import Transport
from fedlearn.core.wire import BigIntVec, Message
from fedlearn.models.forest import Forest, ForestError, Tree
from fedlearn.services.quantiles import InconsistentSplit, forced_leaf

logger = logging.getLogger(__name__)

Protocol = Generator[List[Message], List[Message], None]


class ForestTrainingPipeline(Pipeline):

    def __init__(
        self,
        config: ForestConfig,
        parties: Sequence[str],
        active: int,
        coordinator: Optional[str] = None,
    ):
        if not 0 <= active < len(parties):
            raise ForestError(f"active party index {active} out of range for {len(parties)} parties")
        self.config = config
        self.parties = list(parties)
        self.active = active
        self.coordinator = coordinator or settings.COORDINATOR_NAME
        self.forest = Forest(parties=list(parties), seed=config.seed, max_depth=config.max_depth)
        self.records = 0
        self.max_rounds = config.n_trees * (3 * config.node_budget + 1)
        self._protocol: Optional[Protocol] = None

    @property
    def passive(self) -> List[int]:
        return [k for k in range(len(self.parties)) if k != self.active]

    def _request(self, index: int, phase_id: int, body: dict) -> Message:
        return Message.request(self.coordinator, self.parties[index], phase_id, body)

    def setup_body(self, index: int) -> dict:
        c = self.config
        return {
            "index": index,
            "seed": c.seed,
            "quantiles": c.quantiles,
            "max_features": c.max_features,
            "min_leaf": c.min_leaf,
            "epsilon": c.epsilon,
            "subsample": c.subsample,
        }

    def active_setup_body(self) -> dict:
        c = self.config
        return {
            **self.setup_body(self.active),
            "key_bits": c.key_bits,
            "allow_insecure": int(c.allow_insecure_keys),
            "crypto_seed": c.crypto_seed if c.crypto_seed is not None else -1,
        }

    def passive_setup_body(self, index: int, keys: dict) -> dict:
        # public material only; key generation settings stay with the active party
        return {
            **self.setup_body(index),
            "n_key": keys["n_key"],
            "enc_y": keys["enc_y"],
            "exponent": keys["exponent"],
        }

    def init(self) -> List[Message]:
        return [self._request(self.active, Phase.RF_SETUP, self.active_setup_body())]

    def after_init(self, responses: List[Message]) -> Round:
        if not self.passive:
            return DONE
        keys = responses[0].body
        return [self._request(k, Phase.RF_SETUP, self.passive_setup_body(k, keys)) for k in self.passive]

    def step(self, responses: List[Message]) -> Round:
        try:
            if self._protocol is None:
                self._protocol = self._train()
                return next(self._protocol)
            return self._protocol.send(responses)
        except StopIteration:
            return DONE

    def finish(self) -> List[Message]:
        return [self._request(k, Phase.RF_FINALIZE, {}) for k in range(len(self.parties))]

    def after_finish(self, responses: List[Message]) -> None:
        stored = sum(int(r.body.get("records", 0)) for r in responses)
        if stored != self.records:
            raise ForestError(f"parties stored {stored} split records, the forest references {self.records}")

    # --- protocol ----------------------------------------------------------

    def _train(self) -> Protocol:
        for tree_index in range(self.config.n_trees):
            (drawn,) = yield [self._request(self.active, Phase.RF_TREE, {"tree": tree_index})]
            ids = np.asarray([int(i) for i in drawn.body["ids"]], dtype=np.uint64)
            tree = yield from self._build_tree(tree_index, ids)
            tree.check()
            self.forest.trees.append(tree)
            logger.info("tree %d done: %d nodes, %d leaves", tree_index, len(tree.nodes), len(tree.leaves()))

    def _build_tree(self, tree_index: int, root_ids: np.ndarray):
        c = self.config
        tree = Tree()
        tree.add(0, len(root_ids))
        queue = deque([(0, root_ids)])
        while queue:
            node_id, ids = queue.popleft()
            node = tree.nodes[node_id]
            where = {"tree": tree_index, "node": node_id}
            if forced_leaf(node.depth, len(ids), len(tree.nodes), c.max_depth, c.min_leaf, c.node_budget):
                (chosen,) = yield [self._request(self.active, Phase.RF_SELECT, {**where, "ids": BigIntVec(ids), "leaf": 1})]
            else:
                stats = yield [self._request(k, Phase.RF_STATS, {**where, "ids": BigIntVec(ids)}) for k in range(len(self.parties))]
                (chosen,) = yield [self._request(self.active, Phase.RF_SELECT, self._select_body(where, ids, stats))]

            if int(chosen.body["leaf"]):
                node.value = float(chosen.body["value"])
                continue

            owner = int(chosen.body["party"])
            feature, quantile = int(chosen.body["feature"]), int(chosen.body["quantile"])
            (split,) = yield [self._request(owner, Phase.RF_SPLIT, {**where, "feature": feature, "quantile": quantile})]
            left, right = self._children(ids, split)
            node.party, node.feature, node.quantile = owner, feature, quantile
            node.record = int(split.body["record"])
            self.records += 1
            left_node = tree.add(node.depth + 1, len(left))
            right_node = tree.add(node.depth + 1, len(right))
            node.left, node.right = left_node.node_id, right_node.node_id
            queue.append((left_node.node_id, left))
            queue.append((right_node.node_id, right))
        return tree

    def _select_body(self, where: dict, ids: np.ndarray, responses: List[Message]) -> dict:
        body = {**where, "ids": BigIntVec(ids), "leaf": 0}
        for k, response in enumerate(responses):
            if k == self.active:
                continue
            for key, value in response.body.items():
                body[f"p{k}.{key}"] = value
        return body

    @staticmethod
    def _children(ids: np.ndarray, split: Message) -> Tuple[np.ndarray, np.ndarray]:
        left = np.asarray([int(i) for i in split.body["left"]], dtype=np.uint64)
        right = np.asarray([int(i) for i in split.body["right"]], dtype=np.uint64)
        if len(left) == 0 or len(right) == 0:
            raise InconsistentSplit(f"{split.sender!r} returned an empty child")
        joined = np.concatenate([left, right])
        if len(joined) != len(ids) or not np.array_equal(np.sort(joined), np.sort(ids)):
            raise InconsistentSplit(f"{split.sender!r} returned children that do not partition the node")
        return left, right


def train_forest(
    config: ForestConfig,
    transport: Transport,
    parties: Sequence[str],
    active: int,
    coordinator: Optional[str] = None,
) -> Tuple[Forest, TrainingReport]:
    pipeline = ForestTrainingPipeline(config, parties, active, coordinator)
    report = run_pipeline(pipeline, transport)
    logger.info("forest training finished: %d trees, %d splits", len(pipeline.forest.trees), pipeline.records)
    return pipeline.forest, report


def forest_leaves(
    forest: Forest,
    transport: Transport,
    sample_ids: Sequence[int],
    coordinator: Optional[str] = None,
) -> np.ndarray:
    """Leaf node id per (tree, sample), walking all trees level by level."""
    coordinator = coordinator or settings.COORDINATOR_NAME
    ids = [int(i) for i in sample_ids]
    position = np.zeros((len(forest.trees), len(ids)), dtype=np.int64)
    while True:
        pending = {}
        for t, tree in enumerate(forest.trees):
            for j in range(len(ids)):
                node = tree.nodes[position[t, j]]
                if not node.is_leaf:
                    pending.setdefault(node.party, []).append((t, j, node.record))
        if not pending:
            return position
        owners = sorted(pending)
        requests = [
            Message.request(coordinator, forest.parties[owner], Phase.RF_STEP, {
                "records": BigIntVec(r for _, _, r in pending[owner]),
                "samples": BigIntVec(ids[j] for _, j, _ in pending[owner]),
            })
            for owner in owners
        ]
        for owner, response in zip(owners, exchange_round(transport, requests)):
            directions = response.body["directions"]
            if len(directions) != len(pending[owner]):
                raise ForestError(f"{response.sender!r} answered {len(directions)} of {len(pending[owner])} steps")
            for (t, j, _), direction in zip(pending[owner], directions):
                node = forest.trees[t].nodes[position[t, j]]
                position[t, j] = node.left if int(direction) == 0 else node.right


def predict_forest(
    forest: Forest,
    transport: Transport,
    sample_ids: Sequence[int],
    coordinator: Optional[str] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Labels in {0,1} (score 0.5 maps to 1) and mean leaf scores."""
    if not forest.trees:
        raise ForestError("forest has no trees")
    leaves = forest_leaves(forest, transport, sample_ids, coordinator)
    if leaves.shape[1] == 0:
        return np.zeros(0), np.zeros(0)
    values = np.array([[tree.nodes[n].value for n in row] for tree, row in zip(forest.trees, leaves)])
    scores = values.mean(axis=0)
    return forest.labels(scores), scores
