"""Non-negative sparse factorization Y ~ D A used to seed the Gibbs sampler.

Solves::

    min ||Y - D A||_F^2   s.t.  ||a_i||_1 <= delta,  D >= 0,  A >= 0,  ||d_k||_2 <= 1

by alternating exact sparse coding of every column (positive Lasso path cut
at the l1 budget) with one block-coordinate pass over the atoms.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .coder import code_l1_budget

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PriorFactorization:
    D: np.ndarray
    A: np.ndarray
    delta: float
    objective_trace: tuple[float, ...] = field(default=())

    @property
    def n_atoms(self) -> int:
        return self.D.shape[1]

    def usage(self) -> np.ndarray:
        """Total code weight per atom."""
        return self.A.sum(axis=1)


def objective(Y, D, A) -> float:
    R = Y - D @ A
    return float((R * R).sum())


def _project(v: np.ndarray) -> np.ndarray:
    # projection onto {d >= 0, ||d|| <= 1}: clip, then shrink onto the ball
    v = np.maximum(v, 0.0)
    n = np.sqrt(v @ v)
    return v / n if n > 1.0 else v


def _normalized(v: np.ndarray) -> np.ndarray:
    v = np.maximum(v, 0.0)
    n = np.sqrt(v @ v)
    return v / n if n > 0 else v


def sparse_codes(Y, D, delta) -> np.ndarray:
    A = np.zeros((D.shape[1], Y.shape[1]))
    for i in range(Y.shape[1]):
        code = code_l1_budget(Y[:, i], D, delta)
        A[code.indices, i] = code.values
    return A


def init_dictionary(Y, K, rng) -> np.ndarray:
    L, N = Y.shape
    D = np.zeros((L, K))
    nonzero = np.flatnonzero((Y > 0).any(axis=0))
    pick = rng.permutation(nonzero)[:K]
    for k, i in enumerate(pick):
        D[:, k] = _normalized(Y[:, i])
    # more atoms than distinct non-zero columns: random non-negative atoms
    for k in range(len(pick), K):
        D[:, k] = _normalized(rng.random(L) + 1e-12)
    return D


def update_dictionary(Y, D, A) -> np.ndarray:
    """One pass of exact per-atom minimization under the projection constraint."""
    D = D.copy()
    G = A @ A.T
    B = Y @ A.T
    for k in range(D.shape[1]):
        if G[k, k] <= 0:
            continue
        u = D[:, k] + (B[:, k] - D @ G[:, k]) / G[k, k]
        D[:, k] = _project(u)
    return D


def factorize(Y, K: int, delta: float = 0.01, seed: int = 0, epochs: int = 10) -> PriorFactorization:
    """Alternating non-negative sparse factorization of the columns of ``Y`` (L x N).

    Unused atoms are re-seeded from the worst-reconstructed training column
    after each epoch. The objective is asserted non-increasing across epochs.
    """
    Y = np.asarray(Y, dtype=np.float64)
    if K < 1:
        raise ValueError("need at least one atom")
    if np.any(Y < 0):
        raise ValueError("training spectra must be non-negative")
    L, N = Y.shape
    if K > N:
        logger.warning("over-complete prior dictionary: %d atoms for %d training spectra", K, N)
    rng = np.random.default_rng(seed)
    D = init_dictionary(Y, K, rng)
    A = sparse_codes(Y, D, delta)
    trace = [objective(Y, D, A)]
    for _ in range(epochs):
        D = update_dictionary(Y, D, A)
        unused = np.flatnonzero(A.sum(axis=1) == 0)
        if unused.size and N:
            err = ((Y - D @ A) ** 2).sum(axis=0)
            order = np.argsort(-err, kind="stable")
            for k, i in zip(unused, order):
                if err[i] > 0:
                    D[:, k] = _normalized(Y[:, i])
        A = sparse_codes(Y, D, delta)
        obj = objective(Y, D, A)
        if obj > trace[-1] * (1 + 1e-9) + 1e-12:
            raise AssertionError(f"factorization objective increased: {trace[-1]} -> {obj}")
        trace.append(obj)
    return PriorFactorization(D, A, delta, tuple(trace))
