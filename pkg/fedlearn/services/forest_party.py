"""
One party's side of the federated random forest.

The active party owns the key pair and the labels. It computes its own bin
statistics in plaintext and picks splits after decrypting the passive parties'
label sums. Passive parties only ever see encrypted labels. Every party keeps
the cut points of the node being built so it can execute a split on one of
its own features; thresholds never leave the party.
"""

import logging
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from fedlearn.core.crypto import (
    Ciphertext,
    KeyPair,
    PublicKey,
    ciphertexts_to_wire,
    decrypt_fixed,
    encrypt_fixed,
    he_sum,
    keygen,
    label_frac_bits,
    read_key_file,
)
from fedlearn.core.seeding import derive_seed
from fedlearn.core.wire import BigIntVec
from fedlearn.models.forest import ForestError, SplitRecord, UnknownRecord, load_records, save_records
from fedlearn.services.data_service import PartyTable, as_zero_one
from fedlearn.services.quantiles import (
    FeatureStats,
    InconsistentSplit,
    Leaf,
    assign_bins,
    bin_counts,
    candidate_features,
    compute_quantiles,
    draw_subsample,
    find_best_split,
    leaf_value,
    partition,
    plaintext_stats,
)

logger = logging.getLogger(__name__)

STAT_KEY = re.compile(r"^p(\d+)\.f(\d+)\.(bins|counts|sums)$")


@dataclass
class ForestSettings:
    index: int
    seed: int
    quantiles: int
    max_features: str
    min_leaf: int
    epsilon: float
    subsample: float

    @classmethod
    def from_body(cls, body: dict, quantiles_override: Optional[int] = None) -> "ForestSettings":
        return cls(
            index=int(body["index"]),
            seed=int(body["seed"]),
            quantiles=int(quantiles_override or body["quantiles"]),
            max_features=str(body["max_features"]),
            min_leaf=int(body["min_leaf"]),
            epsilon=float(body["epsilon"]),
            subsample=float(body["subsample"]),
        )


@dataclass
class NodeCache:
    tree: int
    node: int
    ids: np.ndarray
    rows: np.ndarray
    cuts: Dict[int, np.ndarray] = field(default_factory=dict)
    stats: List[FeatureStats] = field(default_factory=list)


def encrypt_labels(pk: PublicKey, labels: np.ndarray, frac_bits: int, rng=None) -> List[Ciphertext]:
    y = np.asarray(labels, dtype=np.float64)
    if not set(np.unique(y).tolist()) <= {0.0, 1.0}:
        raise ForestError("forest labels must be 0 or 1")
    return [encrypt_fixed(pk, float(v), frac_bits, rng=rng) for v in y]


class ForestParty:

    def __init__(
        self,
        table: PartyTable,
        is_active: bool,
        model_dir: Optional[Path] = None,
        quantiles: Optional[int] = None,
        secret_key_path: Optional[Path] = None,
    ):
        self.table = table
        self.is_active = is_active
        self.model_dir = Path(model_dir) if model_dir is not None else None
        self.quantiles_override = quantiles
        self.secret_key_path = secret_key_path
        self.settings: Optional[ForestSettings] = None
        self.keys: Optional[KeyPair] = None
        self.public: Optional[PublicKey] = None
        self.enc_y: List[Ciphertext] = []
        self.exponent = 0
        self.Y: Optional[np.ndarray] = None
        self.records: Dict[int, SplitRecord] = {}
        self._next_record = 0
        self._node: Optional[NodeCache] = None

    # --- setup -------------------------------------------------------------

    def _acquire_keys(self, key_bits: int, allow_insecure: bool, crypto_seed: Optional[int]) -> KeyPair:
        if self.secret_key_path is not None:
            pair = read_key_file(self.secret_key_path)
            if not isinstance(pair, KeyPair):
                raise ForestError(f"{self.secret_key_path} holds a public key; the active party needs the secret key")
            if pair.public.bits != key_bits:
                raise ForestError(f"{self.secret_key_path} holds a {pair.public.bits}-bit key, config asks for {key_bits}")
            return pair
        if crypto_seed is not None:
            return keygen(key_bits, seed=derive_seed(crypto_seed, "keygen"), allow_insecure=allow_insecure)
        return keygen(key_bits, allow_insecure=allow_insecure)

    def _reset(self, body: dict) -> None:
        self.settings = ForestSettings.from_body(body, self.quantiles_override)
        self.records = {}
        self._next_record = 0
        self._node = None

    def setup_active(self, body: dict) -> dict:
        if self.table.labels is None:
            raise ForestError(f"active party {self.table.name} has no labels")
        self._reset(body)
        crypto_seed = int(body["crypto_seed"]) if int(body["crypto_seed"]) >= 0 else None
        self.keys = self._acquire_keys(
            int(body["key_bits"]), bool(body["allow_insecure"]), crypto_seed,
        )
        self.public = self.keys.public
        self.Y = as_zero_one(self.table.labels)
        frac_bits = label_frac_bits(self.public)
        rng = random.Random(derive_seed(crypto_seed, "labels")) if crypto_seed is not None else None
        self.enc_y = encrypt_labels(self.public, self.Y, frac_bits, rng=rng)
        values, self.exponent = ciphertexts_to_wire(self.enc_y)
        logger.info("forest setup: %d-bit key, %d encrypted labels", self.public.bits, len(values))
        return {
            "n_key": BigIntVec([self.public.n]),
            "key_bits": self.public.bits,
            "enc_y": values,
            "exponent": self.exponent,
        }

    def setup_passive(self, body: dict) -> dict:
        self._reset(body)
        (n,) = body["n_key"]
        self.public = PublicKey(n=int(n), bits=int(n).bit_length())
        self.exponent = int(body["exponent"])
        self.enc_y = [Ciphertext(int(c), self.exponent) for c in body["enc_y"]]
        if len(self.enc_y) != self.table.n_rows:
            raise ForestError(f"received {len(self.enc_y)} encrypted labels for {self.table.n_rows} rows")
        logger.info("forest setup: %d encrypted labels received", len(self.enc_y))
        return {"ready": 1}

    def _require_setup(self) -> ForestSettings:
        if self.settings is None:
            raise ForestError("forest phase received before setup")
        return self.settings

    # --- per tree and per node ---------------------------------------------

    def tree_subsample(self, tree: int) -> np.ndarray:
        s = self._require_setup()
        if not self.is_active:
            raise ForestError("only the active party draws tree subsamples")
        return draw_subsample(self.table.ids, s.subsample, s.seed, tree)

    def stats(self, tree: int, node: int, ids) -> dict:
        s = self._require_setup()
        ids = np.asarray([int(i) for i in ids], dtype=np.uint64)
        if len(ids) == 0:
            raise ForestError(f"node {node} of tree {tree} has no instances")
        rows = self.table.row_index(ids)
        cache = NodeCache(tree, node, ids, rows)
        candidates = candidate_features(self.table.n_features, s.seed, tree, node, s.index, s.max_features)

        body: dict = {} if self.is_active else {"exponent": self.exponent}
        for k in candidates:
            k = int(k)
            column = self.table.features[rows, k]
            cuts = compute_quantiles(column, s.quantiles)
            cache.cuts[k] = cuts
            if self.is_active:
                cache.stats.append(plaintext_stats(k, column, self.Y[rows], s.quantiles))
                continue
            bins = assign_bins(column, cuts)
            counts = bin_counts(bins, len(cuts))
            present = np.flatnonzero(counts)
            sums = [
                he_sum(self.public, (self.enc_y[r] for r in rows[bins == v]), self.exponent).value
                for v in present
            ]
            body[f"f{k}.bins"] = BigIntVec(present)
            body[f"f{k}.counts"] = counts[present].astype(np.float64)
            body[f"f{k}.sums"] = BigIntVec(sums)
        self._node = cache
        if self.is_active:
            return {"features": len(candidates)}
        return body

    def _node_cache(self, tree: int, node: int) -> NodeCache:
        cache = self._node
        if cache is None or (cache.tree, cache.node) != (tree, node):
            raise InconsistentSplit(f"no statistics were computed here for node {node} of tree {tree}")
        return cache

    def _decrypt_stats(self, body: dict, n_node: int) -> Dict[int, List[FeatureStats]]:
        parts: Dict[int, Dict[int, dict]] = {}
        for key, value in body.items():
            match = STAT_KEY.match(key)
            if match:
                party, feature, kind = int(match.group(1)), int(match.group(2)), match.group(3)
                parts.setdefault(party, {}).setdefault(feature, {})[kind] = value

        stats: Dict[int, List[FeatureStats]] = {}
        for party, features in parts.items():
            exponent = int(body[f"p{party}.exponent"])
            decoded = []
            for feature, entry in sorted(features.items()):
                if set(entry) != {"bins", "counts", "sums"}:
                    raise ForestError(f"party {party} feature {feature}: incomplete statistics")
                counts = np.asarray(entry["counts"], dtype=np.float64)
                if counts.sum() != n_node:
                    raise InconsistentSplit(
                        f"party {party} feature {feature}: bin counts sum to {counts.sum():g}, node has {n_node}"
                    )
                sums = [decrypt_fixed(self.keys.secret, Ciphertext(int(c), exponent)) for c in entry["sums"]]
                decoded.append(FeatureStats(feature, list(entry["bins"]), counts, sums))
            stats[party] = decoded
        return stats

    def select(self, tree: int, node: int, body: dict) -> dict:
        s = self._require_setup()
        if not self.is_active:
            raise ForestError("only the active party selects splits")
        ids = np.asarray([int(i) for i in body["ids"]], dtype=np.uint64)
        rows = self.table.row_index(ids)
        if int(body.get("leaf", 0)):
            return {"leaf": 1, "value": leaf_value(self.Y[rows])}

        cache = self._node_cache(tree, node)
        if not np.array_equal(cache.ids, ids):
            raise InconsistentSplit(f"node {node} of tree {tree}: instance list changed since statistics")
        stats = self._decrypt_stats(body, len(ids))
        stats[s.index] = cache.stats
        decision = find_best_split(stats, s.epsilon, s.min_leaf)
        if isinstance(decision, Leaf):
            return {"leaf": 1, "value": leaf_value(self.Y[rows])}
        return {
            "leaf": 0,
            "party": decision.party,
            "feature": decision.feature,
            "quantile": decision.quantile,
            "score": decision.score,
        }

    def split(self, tree: int, node: int, feature: int, quantile: int) -> dict:
        cache = self._node_cache(tree, node)
        cuts = cache.cuts.get(feature)
        if cuts is None:
            raise InconsistentSplit(f"feature {feature} was not a candidate at node {node} of tree {tree}")
        if not 0 <= quantile < len(cuts):
            raise InconsistentSplit(f"quantile {quantile} out of range for feature {feature}")
        threshold = float(cuts[quantile])
        column = self.table.features[cache.rows, feature]
        left, right = partition(column, threshold, cache.ids)
        record_id = self._next_record
        self._next_record += 1
        self.records[record_id] = SplitRecord(record_id, feature, threshold)
        self._node = None
        return {"record": record_id, "left": BigIntVec(left), "right": BigIntVec(right)}

    def finalize(self) -> int:
        if self.model_dir is not None:
            path = save_records(self.model_dir, self.records)
            logger.info("%d split records saved to %s", len(self.records), path)
        return len(self.records)

    # --- inference ---------------------------------------------------------

    def _record_store(self) -> Dict[int, SplitRecord]:
        if not self.records and self.model_dir is not None:
            self.records = load_records(self.model_dir)
        return self.records

    def step(self, records, samples) -> BigIntVec:
        if len(records) != len(samples):
            raise ForestError(f"{len(records)} records for {len(samples)} samples")
        store = self._record_store()
        rows = self.table.row_index(samples)
        directions = []
        for record_id, row in zip(records, rows):
            record = store.get(int(record_id))
            if record is None:
                raise UnknownRecord(f"no split record {int(record_id)} at {self.table.name}")
            directions.append(0 if self.table.features[row, record.feature] <= record.threshold else 1)
        return BigIntVec(directions)
