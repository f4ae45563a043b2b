"""
Numerics of the federated kernel classifier: the per-party ridge sub-solve,
the master's residual aggregation, and a single-process block-coordinate
reference used to check the federated run.
"""

from typing import List, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve


class KernelError(Exception):
    pass


class SingularSystem(KernelError):
    pass


def local_solve(Phi: np.ndarray, s: np.ndarray, lam: float) -> np.ndarray:
    """w = argmin (1/N)||Phi w + s||^2 + (lam/N)||w||^2 = (Phi^T Phi + lam I)^-1 Phi^T (-s)."""
    Phi = np.asarray(Phi, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if Phi.ndim != 2 or Phi.shape[0] != s.shape[0] or Phi.shape[0] < 1:
        raise KernelError(f"design {Phi.shape} does not match residual {s.shape}")
    if lam < 0:
        raise KernelError(f"lambda must be non-negative, got {lam}")
    if not np.all(np.isfinite(Phi)):
        raise KernelError("design matrix has non-finite entries")
    D = Phi.shape[1]
    if D == 0:
        return np.zeros(0)

    A = Phi.T @ Phi + lam * np.eye(D)
    rhs = -(Phi.T @ s)
    try:
        factor = cho_factor(A, lower=False, check_finite=False)
    except LinAlgError as e:
        raise SingularSystem(f"normal equations are not positive definite (lambda={lam})") from e
    diag = np.abs(np.diag(factor[0]))
    if diag.min() <= np.finfo(np.float64).eps * diag.max() * D:
        raise SingularSystem(f"normal equations are numerically singular (lambda={lam})")
    return cho_solve(factor, rhs, check_finite=False)


def master_aggregate(contributions: Sequence[np.ndarray]) -> np.ndarray:
    if not contributions:
        raise KernelError("no contributions to aggregate")
    n = len(contributions[0])
    v = np.zeros(n)
    for k, u in enumerate(contributions):
        if len(u) != n:
            raise KernelError(f"contribution {k} has length {len(u)}, expected {n}")
        v += u
    return v


def round_robin(t: int, parties: int) -> int:
    """1-based party selected at iteration t >= 1."""
    return (t - 1) % parties + 1


def block_coordinate_reference(
    Phis: Sequence[np.ndarray],
    y: np.ndarray,
    lam: float,
    t_max: int,
    active: int = 0,
) -> List[np.ndarray]:
    """Residual history v^(0..t_max) of the same descent run centrally on all blocks."""
    y = np.asarray(y, dtype=np.float64)
    weights = [np.zeros(Phi.shape[1]) for Phi in Phis]
    contributions = [np.zeros(len(y)) for _ in Phis]
    contributions[active] = contributions[active] - y
    v = master_aggregate(contributions)
    history = [v]
    for t in range(1, t_max + 1):
        p = round_robin(t, len(Phis)) - 1
        s = v - Phis[p] @ weights[p]
        weights[p] = local_solve(Phis[p], s, lam)
        u = Phis[p] @ weights[p]
        contributions[p] = u - y if p == active else u
        v = master_aggregate(contributions)
        history.append(v)
    return history


def objective(v: np.ndarray) -> float:
    return float(v @ v) / len(v)
