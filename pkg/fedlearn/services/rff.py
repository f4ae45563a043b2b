"""
Random Fourier features for the RBF kernel k(x, y) = exp(-gamma * ||x - y||^2).
"""

import enum
from dataclasses import dataclass

import numpy as np


class Normalization(str, enum.Enum):
    STANDARD = "standard"
    PAPER_LITERAL = "paper_literal"


class RffError(ValueError):
    pass


@dataclass(frozen=True)
class RffMap:
    Z: np.ndarray
    b: np.ndarray
    gamma: float
    D: int
    seed: int
    normalization: Normalization = Normalization.STANDARD

    @property
    def d(self) -> int:
        return self.Z.shape[1]


def sample_rff(d: int, D: int, gamma: float, seed: int, normalization=Normalization.STANDARD) -> RffMap:
    if d < 1 or D < 1:
        raise RffError(f"need d >= 1 and D >= 1, got d={d}, D={D}")
    if not gamma > 0:
        raise RffError(f"gamma must be positive, got {gamma}")
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((D, d))
    b = rng.uniform(0.0, 2.0 * np.pi, size=D)
    return RffMap(Z=Z, b=b, gamma=float(gamma), D=D, seed=seed, normalization=Normalization(normalization))


def apply_rff(rff: RffMap, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != rff.d:
        raise RffError(f"map expects {rff.d} columns, got {X.shape[1]}")
    if rff.normalization == Normalization.STANDARD:
        scale, prefactor = np.sqrt(2.0 * rff.gamma), np.sqrt(2.0 / rff.D)
    else:
        scale, prefactor = 1.0, np.sqrt(2.0 * rff.gamma)
    return prefactor * np.cos(scale * (X @ rff.Z.T) + rff.b)


def rbf_kernel(x: np.ndarray, y: np.ndarray, gamma: float) -> float:
    diff = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return float(np.exp(-gamma * diff @ diff))
