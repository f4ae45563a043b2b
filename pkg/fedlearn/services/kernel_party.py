"""
One party's side of the federated kernel classifier.

A party owns its feature block X_p, its random feature map, its weights w_p
and the cached contribution u_p = phi_p(X_p) w_p (minus Y at the active
party). Only u_p ever leaves the party.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from fedlearn.core.seeding import derive_seed
from fedlearn.models.kernel import load_weights, save_weights
from fedlearn.services.data_service import PartyTable, as_pm1
from fedlearn.services.kernel_solver import KernelError, local_solve
from fedlearn.services.rff import Normalization, RffMap, apply_rff, sample_rff

logger = logging.getLogger(__name__)


def party_map_seed(seed: int, index: int) -> int:
    return derive_seed(seed, "rff", index)


def build_map(d: int, D: int, gamma: float, seed: int, index: int, normalization) -> Optional[RffMap]:
    """Party `index`'s feature map; None for a party without feature columns."""
    if d == 0:
        return None
    return sample_rff(d, D, gamma, party_map_seed(seed, index), Normalization(normalization))


def transform(rff: Optional[RffMap], X: np.ndarray) -> np.ndarray:
    if rff is None:
        return np.zeros((X.shape[0], 0))
    return apply_rff(rff, X)


@dataclass
class KernelPartyState:
    index: int
    rff: Optional[RffMap]
    Phi: np.ndarray
    w: np.ndarray
    u: np.ndarray
    lam: float
    is_active: bool
    Y: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def N(self) -> int:
        return self.Phi.shape[0]

    def contribution(self) -> np.ndarray:
        u = self.Phi @ self.w
        return u - self.Y if self.is_active else u


class KernelParty:

    def __init__(self, table: PartyTable, is_active: bool, model_dir: Optional[Path] = None):
        self.table = table
        self.is_active = is_active
        self.model_dir = Path(model_dir) if model_dir is not None else None
        self.state: Optional[KernelPartyState] = None
        self._predict_cache: Optional[tuple] = None

    def setup(self, index: int, D: int, gamma: float, seed: int, normalization: str, lam: float) -> KernelPartyState:
        Y = None
        if self.is_active:
            if self.table.labels is None:
                raise KernelError(f"active party {self.table.name} has no labels")
            Y = as_pm1(self.table.labels)
        rff = build_map(self.table.n_features, D, gamma, seed, index, normalization)
        Phi = transform(rff, self.table.features)
        w = np.zeros(Phi.shape[1])
        state = KernelPartyState(index=index, rff=rff, Phi=Phi, w=w, u=np.zeros(len(Phi)), lam=lam, is_active=self.is_active, Y=Y)
        state.u = state.contribution()
        self.state = state
        self._predict_cache = None
        logger.info("kernel setup: party %d, N=%d, D=%d", index, state.N, Phi.shape[1])
        return state

    def _require_state(self) -> KernelPartyState:
        if self.state is None:
            raise KernelError("kernel phase received before setup")
        return self.state

    def update(self, v: np.ndarray, selected: bool) -> Optional[np.ndarray]:
        """New contribution when selected, None ("unchanged") otherwise."""
        state = self._require_state()
        if not selected:
            return None
        if len(v) != state.N:
            raise KernelError(f"residual has length {len(v)}, party holds {state.N} rows")
        # residual of every other term, labels included
        s = v - state.Phi @ state.w
        state.w = local_solve(state.Phi, s, state.lam)
        state.u = state.contribution()
        return state.u

    def finalize(self) -> int:
        state = self._require_state()
        if self.model_dir is not None:
            path = save_weights(self.model_dir, state.w)
            logger.info("kernel weights saved to %s", path)
        return len(state.w)

    def predict(self, ids, index: int, D: int, gamma: float, seed: int, normalization: str) -> np.ndarray:
        rows = self.table.row_index(ids)
        key = (index, D, gamma, seed, normalization)
        if self._predict_cache is None or self._predict_cache[0] != key:
            if self.state is not None and self.state.index == index:
                rff, w = self.state.rff, self.state.w
            else:
                if self.model_dir is None:
                    raise KernelError("no trained weights in memory and no model directory")
                rff = build_map(self.table.n_features, D, gamma, seed, index, normalization)
                w = load_weights(self.model_dir)
            self._predict_cache = (key, rff, w)
        _, rff, w = self._predict_cache
        return transform(rff, self.table.features[rows]) @ w
