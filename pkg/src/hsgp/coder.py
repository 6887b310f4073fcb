"""Non-negative sparse coding along the positive Lasso (LARS) path.

Both problem shapes share one homotopy: starting from ``beta = 0`` the
regularization is lowered and atoms enter the active set one at a time
while their coefficients stay non-negative. The path is cut at the first
point where the stopping constraint holds:

* ``code_min_l1``: squared residual ``||y - D beta||^2 <= delta1``
* ``code_l1_budget``: ``||beta||_1 == delta`` (or the path end if the
  budget never binds)

Along the Lasso path ``||beta||_1`` grows and the residual shrinks
monotonically, so the first feasible point is the minimum-l1 code meeting
the residual bound and, dually, the least-residual code within the budget.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve


@dataclass(frozen=True)
class SparseCode:
    indices: np.ndarray
    values: np.ndarray
    size: int
    residual_norm: float
    feasible: bool = True
    steps: int = 0

    def dense(self) -> np.ndarray:
        out = np.zeros(self.size)
        out[self.indices] = self.values
        return out

    @property
    def l1(self) -> float:
        return float(self.values.sum())

    def support(self, rtol: float = 1e-9) -> np.ndarray:
        """Indices whose coefficient exceeds ``rtol`` times the largest one.

        A residual cut such as 1e-21 leaves atoms that are leaving the path
        with coefficients of order sqrt(delta1); those are not counted.
        """
        if self.values.size == 0:
            return self.indices
        return self.indices[self.values > rtol * self.values.max()]


_MARGIN = 1e-4


def _solve_active(G: np.ndarray) -> np.ndarray:
    ones = np.ones(G.shape[0])
    try:
        return cho_solve(cho_factor(G), ones)
    except LinAlgError:
        return np.linalg.lstsq(G, ones, rcond=None)[0]


def _well_posed(D_active: np.ndarray) -> bool:
    if D_active.shape[1] > D_active.shape[0]:
        return False
    s = np.linalg.svd(D_active, compute_uv=False)
    return s.size == 0 or s[-1] > 1e-10 * max(s[0], 1e-300)


def _sq_residual(y, D, beta):
    idx = np.flatnonzero(beta > 0)
    r = y - D[:, idx] @ beta[idx]
    return idx, float(r @ r)


def _finish(y, D, beta, steps, feasible) -> SparseCode:
    idx, rr = _sq_residual(y, D, beta)
    return SparseCode(idx, beta[idx].copy(), D.shape[1], float(np.sqrt(rr)), feasible, steps)


def _inside_bound(y, D, beta, A, d, gamma, t, bound):
    """Step length along the segment whose recomputed residual is within ``bound``.

    The analytic crossing can land a few ulps outside the bound once the
    residual is rebuilt from the coefficients, so the distance ``t`` back from
    the segment end is shrunk, gently at first, until the rebuilt residual
    complies. Returns None if even the segment end fails, in which case the
    path continues.
    """
    shrink = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 0.1] + [0.5] * 60 + [1.0, 1.0]
    for f in shrink:
        trial = beta.copy()
        trial[A] += (gamma - t) * d
        np.maximum(trial, 0.0, out=trial)
        if _sq_residual(y, D, trial)[1] <= bound:
            return gamma - t
        if t == 0.0:
            return None
        t *= 1.0 - f
    return None


def _homotopy(y, D, max_sq_residual=None, l1_budget=None, max_steps=None) -> SparseCode:
    y = np.asarray(y, dtype=np.float64).ravel()
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != y.size:
        raise ValueError(f"dictionary of shape {D.shape} does not match signal of length {y.size}")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(D))):
        raise ValueError("NaN or infinite value in coder input")
    K = D.shape[1]
    if max_steps is None:
        max_steps = 4 * K
    beta = np.zeros(K)
    r = y.copy()

    if max_sq_residual is not None and r @ r <= max_sq_residual:
        return _finish(y, D, beta, 0, True)
    if l1_budget is not None and l1_budget <= 0:
        return _finish(y, D, beta, 0, True)

    c = D.T @ r
    j = int(np.argmax(c)) if K else 0
    if K == 0 or c[j] <= 0:
        return _finish(y, D, beta, 0, max_sq_residual is None)
    lam = float(c[j])
    active = [j]
    excluded = np.zeros(K, dtype=bool)
    history = [float(r @ r)]
    eps = 1e-14 * max(1.0, lam)

    steps = 0
    while steps < max_steps:
        steps += 1
        A = np.array(active)
        DA = D[:, A]
        d = _solve_active(DA.T @ DA)
        u = DA @ d
        a = D.T @ u

        gamma, event, who = lam, "end", -1
        free = np.ones(K, dtype=bool)
        free[A] = False
        free &= ~excluded
        denom = 1.0 - a
        ok = free & (denom > 1e-12)
        if ok.any():
            g = np.full(K, np.inf)
            g[ok] = (lam - c[ok]) / denom[ok]
            g[g < -eps] = np.inf
            g = np.maximum(g, 0.0)
            jj = int(np.argmin(g))
            if g[jj] < gamma - eps:
                gamma, event, who = float(g[jj]), "join", jj
        neg = d < 0
        if neg.any():
            g = np.full(d.size, np.inf)
            g[neg] = -beta[A[neg]] / d[neg]
            jj = int(np.argmin(g))
            if g[jj] <= gamma:
                gamma, event, who = float(max(g[jj], 0.0)), "drop", int(A[jj])

        stop = None
        if max_sq_residual is not None:
            # Solve ||r_end + t u||^2 = delta1 for the distance t back from the
            # segment end. Anchoring at the end, where the residual is tiny,
            # avoids the cancellation that limits a solve from the segment start
            # to residuals far above sqrt(delta1).
            # The target sits a relative 1e-4 inside the bound: the squared
            # residual of a rebuilt code carries rounding of a few 1e-5
            # relative near sqrt(delta1) ~ 3e-11, depending on summation order.
            r_end = r - gamma * u
            c0 = float(r_end @ r_end) - max_sq_residual * (1.0 - _MARGIN)
            uu = float(u @ u)
            if c0 <= 0 and uu > 0:
                b = float(r_end @ u)
                root = np.sqrt(max(b * b - uu * c0, 0.0))
                t = -c0 / (b + root) if b > 0 else (root - b) / uu
                stop = _inside_bound(y, D, beta, A, d, gamma, min(max(t, 0.0), gamma),
                                     max_sq_residual)
        if l1_budget is not None:
            sd = d.sum()
            if sd > 0:
                g0 = (l1_budget - beta.sum()) / sd
                if g0 <= gamma:
                    stop = max(g0, 0.0)

        step = gamma if stop is None else stop
        beta[A] += step * d
        np.maximum(beta, 0.0, out=beta)
        if stop is not None:
            if l1_budget is not None:
                # land exactly on the budget despite rounding in the step
                total = beta.sum()
                if total > 0:
                    beta *= l1_budget / total
            return _finish(y, D, beta, steps, True)

        lam -= gamma
        if event == "drop":
            beta[who] = 0.0
            active.remove(who)
        elif event == "join":
            if _well_posed(D[:, active + [who]]):
                active.append(who)
            else:
                excluded[who] = True
        r = y - D @ beta
        c = D.T @ r
        history.append(float(r @ r))
        if event == "end" or lam <= eps or not active:
            break
        if len(history) >= 4 and history[-1] >= history[-4]:
            break

    feasible = True if max_sq_residual is None else _sq_residual(y, D, beta)[1] <= max_sq_residual
    return _finish(y, D, beta, steps, feasible)


def code_min_l1(y, dictionary, delta1: float = 1e-21, max_steps: int | None = None) -> SparseCode:
    """Smallest non-negative l1 code with ``||y - D beta||^2 <= delta1``.

    If the bound is out of reach the path-end code is returned with
    ``feasible=False``.
    """
    if delta1 < 0:
        raise ValueError("delta1 must be non-negative")
    return _homotopy(y, dictionary, max_sq_residual=delta1, max_steps=max_steps)


def code_l1_budget(y, dictionary, delta: float, max_steps: int | None = None) -> SparseCode:
    """Least-residual non-negative code with ``||beta||_1 <= delta``."""
    if delta < 0:
        raise ValueError("delta must be non-negative")
    return _homotopy(y, dictionary, l1_budget=delta, max_steps=max_steps)
