"""
Quantile binning and split selection shared by the federated and the
centralized tree builders.
"""

import math
from dataclasses import dataclass
from typing import Dict, Sequence, Union

import numpy as np

from fedlearn.core.seeding import derive_seed
from fedlearn.models.forest import ForestError


class EmptyStats(ForestError):
    pass


class InconsistentSplit(ForestError):
    pass


@dataclass
class FeatureStats:
    """Per-bin aggregates of one feature; empty bins are left out."""
    feature: int
    bins: np.ndarray
    counts: np.ndarray
    sums: np.ndarray

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=np.float64)
        self.sums = np.asarray(self.sums, dtype=np.float64)
        if not len(self.bins) == len(self.counts) == len(self.sums):
            raise ForestError(f"feature {self.feature}: bins, counts and sums differ in length")


@dataclass(frozen=True)
class SplitDecision:
    party: int
    feature: int
    quantile: int
    score: float


@dataclass(frozen=True)
class Leaf:
    value: float


def compute_quantiles(column: np.ndarray, l: int) -> np.ndarray:
    """Cut c_v = value at rank ceil(v*N/l), v = 1..l, duplicates merged."""
    x = np.sort(np.asarray(column, dtype=np.float64))
    N = len(x)
    if N == 0:
        raise ForestError("cannot compute quantiles of an empty column")
    if l < 1:
        raise ForestError(f"quantile count must be >= 1, got {l}")
    ranks = np.array([(v * N + l - 1) // l for v in range(1, l + 1)], dtype=np.int64)
    return np.unique(x[ranks - 1])


def assign_bins(column: np.ndarray, cuts: np.ndarray) -> np.ndarray:
    """Bin v holds c_{v-1} < x <= c_v."""
    bins = np.searchsorted(cuts, np.asarray(column, dtype=np.float64), side="left")
    if len(bins) and bins.max() >= len(cuts):
        raise ForestError("value above the last cut point")
    return bins


def bin_counts(bins: np.ndarray, n_cuts: int) -> np.ndarray:
    return np.bincount(bins, minlength=n_cuts)


def plaintext_stats(feature: int, column: np.ndarray, y: np.ndarray, l: int) -> FeatureStats:
    cuts = compute_quantiles(column, l)
    bins = assign_bins(column, cuts)
    counts = bin_counts(bins, len(cuts))
    sums = np.bincount(bins, weights=np.asarray(y, dtype=np.float64), minlength=len(cuts))
    present = np.flatnonzero(counts)
    return FeatureStats(feature, present, counts[present], sums[present])


def candidate_features(d: int, seed: int, tree: int, node: int, party: int, max_features: str = "sqrt") -> np.ndarray:
    if d == 0:
        return np.zeros(0, dtype=np.int64)
    if max_features == "all":
        return np.arange(d, dtype=np.int64)
    if max_features != "sqrt":
        raise ForestError(f"max_features must be 'sqrt' or 'all', got {max_features!r}")
    k = math.ceil(math.sqrt(d))
    rng = np.random.default_rng(derive_seed(seed, "features", tree, node, party))
    return np.sort(rng.choice(d, size=k, replace=False)).astype(np.int64)


def draw_subsample(ids: np.ndarray, fraction: float, seed: int, tree: int) -> np.ndarray:
    """Per-tree instance subsample without replacement, in id order."""
    N = len(ids)
    if N == 0:
        raise ForestError("cannot subsample an empty id list")
    m = min(N, max(1, int(round(fraction * N))))
    rng = np.random.default_rng(derive_seed(seed, "subsample", tree))
    return np.asarray(ids)[np.sort(rng.choice(N, size=m, replace=False))]


def split_score(z_left: float, n_left: float, z_right: float, n_right: float) -> float:
    z, n = z_left + z_right, n_left + n_right
    return z_left * z_left / n_left + z_right * z_right / n_right - z * z / n


def find_best_split(
    stats: Dict[int, Sequence[FeatureStats]],
    epsilon: float,
    min_leaf: int = 1,
) -> Union[SplitDecision, Leaf]:
    """
    Variance-reduction split over prefix bins. Candidates are visited in
    (party, feature, quantile) order and only a strictly better score
    replaces the incumbent, so ties go to the smallest triple.
    """
    features = [(p, fs) for p in sorted(stats) for fs in sorted(stats[p], key=lambda s: s.feature)]
    if not features:
        raise EmptyStats("no bin statistics to choose a split from")

    best = None
    for party, fs in features:
        if len(fs.bins) < 2:
            continue
        n_left = np.cumsum(fs.counts)[:-1]
        z_left = np.cumsum(fs.sums)[:-1]
        n_total, z_total = fs.counts.sum(), fs.sums.sum()
        for k in range(len(n_left)):
            nl, nr = n_left[k], n_total - n_left[k]
            if nl < min_leaf or nr < min_leaf:
                continue
            score = split_score(z_left[k], nl, z_total - z_left[k], nr)
            if best is None or score > best.score:
                best = SplitDecision(party, fs.feature, int(fs.bins[k]), float(score))

    if best is not None and best.score > epsilon:
        return best
    _, first = features[0]
    return Leaf(float(first.sums.sum() / first.counts.sum()))


def partition(column: np.ndarray, threshold: float, ids: np.ndarray):
    """(ids with x <= threshold, the rest); both sides must be non-empty."""
    ids = np.asarray(ids)
    goes_left = np.asarray(column, dtype=np.float64) <= threshold
    left, right = ids[goes_left], ids[~goes_left]
    if len(left) == 0 or len(right) == 0:
        raise InconsistentSplit(f"split at threshold leaves {len(left)} left and {len(right)} right")
    return left, right


def leaf_value(y: np.ndarray) -> float:
    return float(np.mean(np.asarray(y, dtype=np.float64)))


def forced_leaf(depth: int, n_samples: int, n_nodes: int, max_depth: int, min_leaf: int, node_budget: int) -> bool:
    """A node that may not split: too deep, too small for two children, or no room for two more nodes."""
    return depth >= max_depth or n_samples < 2 * min_leaf or n_nodes + 2 > node_budget
