"""Primal active-set solver for small dense convex QPs with diagonal curvature.

    minimize    0.5 * x' diag(q) x + c' x
    subject to  A_eq x = b_eq,   A_in x <= b_in,   lb <= x <= ub

``q`` may contain zeros, so the method has to cope with a singular reduced
Hessian: when the equality-constrained subproblem has no minimiser it walks
along the projected steepest-descent ray until a constraint blocks.

Among several optimal points the one of minimum Euclidean norm is returned
(second phase, strictly convex).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog, nnls


class QpInfeasible(ValueError):
    """No point satisfies the constraints."""


class QpUnbounded(ValueError):
    pass


@dataclass
class QpResult:
    x: np.ndarray
    objective: float
    eq_multipliers: np.ndarray
    ineq_multipliers: np.ndarray  # for the stacked [A_in; -I; I] rows
    kkt_residual: float
    iterations: int


def _stack(A_in, b_in, lb, ub, n):
    rows, rhs = [A_in], [b_in]
    fin = np.isfinite(lb)
    if fin.any():
        rows.append(-np.eye(n)[fin])
        rhs.append(-lb[fin])
    fin = np.isfinite(ub)
    if fin.any():
        rows.append(np.eye(n)[fin])
        rhs.append(ub[fin])
    return np.vstack(rows), np.concatenate(rhs)


def _feasible_start(A_eq, b_eq, G, h, n):
    # phase 0: any vertex of the feasible polytope
    res = linprog(np.zeros(n), A_ub=G if G.size else None, b_ub=h if G.size else None,
                  A_eq=A_eq if A_eq.size else None, b_eq=b_eq if A_eq.size else None,
                  bounds=[(None, None)] * n, method="highs")
    if res.status == 2:
        raise QpInfeasible(res.message)
    if res.status != 0:
        raise RuntimeError(f"phase-0 LP failed: {res.message}")
    return res.x


def _independent_rows(M, candidates, base_rows, tol=1e-10):
    """Greedy subset of ``candidates`` keeping [base; chosen] full row rank."""
    chosen = []
    cur = base_rows
    rank = np.linalg.matrix_rank(cur, tol) if cur.size else 0
    for i in candidates:
        trial = np.vstack([cur, M[i:i + 1]]) if cur.size else M[i:i + 1]
        r = np.linalg.matrix_rank(trial, tol)
        if r > rank:
            chosen.append(i)
            cur, rank = trial, r
    return chosen


def _active_set(q, c, A_eq, G, h, x, tol, max_iter):
    """Primal active-set iterations from the feasible point ``x``.

    Steps are computed in an orthonormal basis Z of the working-set null
    space: p = -Z (Z'QZ)^+ Z'g when the reduced gradient lies in the range
    of the reduced Hessian, otherwise the descent ray -Z P Z'g along the
    Hessian's null directions. Only constraints independent of the working
    set may block, which keeps the working-set rows linearly independent.
    """
    n = x.size
    n_eq = A_eq.shape[0]
    slack = h - G @ x
    W = _independent_rows(G, [i for i in np.flatnonzero(np.abs(slack) <= tol)], A_eq)
    g_norm = np.linalg.norm(G, axis=1)
    at_min = False  # the last move was a full step onto the subproblem minimiser
    for it in range(1, max_iter + 1):
        Aw = np.vstack([A_eq, G[W]]) if len(W) else A_eq
        g = q * x + c
        Z = _null_space(Aw, n)
        gz = Z.T @ g
        ev, V = np.linalg.eigh(Z.T @ (q[:, None] * Z)) if Z.shape[1] else (np.zeros(0), np.zeros((0, 0)))
        big = ev > 1e-10 * max(1.0, ev.max(initial=0.0))
        flat = V[:, ~big] @ (V[:, ~big].T @ gz)
        bounded = np.linalg.norm(flat) <= 1e-12 * (1.0 + np.linalg.norm(g))
        if bounded:
            p = -Z @ (V[:, big] @ ((V[:, big].T @ gz) / ev[big]))
        else:
            p = -Z @ flat

        if bounded and (at_min or np.linalg.norm(p, np.inf) <= 1e-12 * (1.0 + np.linalg.norm(x, np.inf))):
            lam, *_ = np.linalg.lstsq(Aw.T, -g, rcond=None)
            lam_w = lam[n_eq:]
            if lam_w.size == 0 or lam_w.min() >= -tol:
                return x, W, it
            # drop the most negative multiplier; lowest index breaks ties
            j = int(np.argmin(lam_w))
            W = W[:j] + W[j + 1:]
            at_min = False
            continue

        # ratio test over constraints outside the working set
        Gp = G @ p
        alpha, block = (1.0 if bounded else np.inf), None
        inW = np.zeros(G.shape[0], dtype=bool)
        inW[W] = True
        tiny = 1e-11 * g_norm * np.linalg.norm(p)
        for i in np.flatnonzero((~inW) & (Gp > tiny)):
            a = max((h[i] - G[i] @ x) / Gp[i], 0.0)
            if a < alpha - 1e-15:
                alpha, block = a, i
        if not np.isfinite(alpha):
            raise QpUnbounded("objective unbounded below on the feasible set")
        x = x + alpha * p
        at_min = bounded and block is None
        if block is not None:
            W = W + [int(block)]
    raise RuntimeError("active-set iteration limit reached")


def _null_space(A, n, tol=1e-12):
    if A.size == 0:
        return np.eye(n)
    u, s, vt = np.linalg.svd(A)
    rank = int((s > tol * max(1.0, s[0] if s.size else 0.0)).sum())
    return vt[rank:].T


def kkt_residual(q, c, A_eq, b_eq, G, h, x):
    """Max of stationarity, primal infeasibility and complementarity; also multipliers."""
    g = q * x + c
    slack = h - G @ x
    act = np.flatnonzero(slack <= 1e-7 * (1.0 + np.abs(h)))
    # multipliers: equality ones free, inequality ones >= 0 (NNLS on split variables)
    M = np.hstack([A_eq.T, -A_eq.T, G[act].T])
    if M.shape[1]:
        z, _ = nnls(M, -g, maxiter=50 * M.shape[1])
    else:
        z = np.zeros(0)
    k = A_eq.shape[0]
    mu = z[:k] - z[k:2 * k]
    lam = np.zeros(G.shape[0])
    lam[act] = z[2 * k:]
    stat = np.abs(g + A_eq.T @ mu + G.T @ lam).max(initial=0.0)
    prim = max(np.abs(A_eq @ x - b_eq).max(initial=0.0), (-slack).max(initial=0.0))
    comp = np.abs(lam * slack).max(initial=0.0)
    return max(stat, prim, comp), mu, lam


def solve_qp(q, c, A_eq, b_eq, A_in, b_in, lb, ub, tol=1e-8, max_iter=2000) -> QpResult:
    q = np.asarray(q, float)
    c = np.asarray(c, float)
    n = q.size
    if np.any(q < 0):
        raise ValueError("curvature must be nonnegative (convex problem)")
    A_eq = np.asarray(A_eq, float).reshape(-1, n)
    b_eq = np.asarray(b_eq, float)
    A_in = np.asarray(A_in, float).reshape(-1, n)
    b_in = np.asarray(b_in, float)
    lb = np.full(n, -np.inf) if lb is None else np.asarray(lb, float)
    ub = np.full(n, np.inf) if ub is None else np.asarray(ub, float)
    G, h = _stack(A_in, b_in, lb, ub, n)

    # redundant equalities (e.g. two empty sums) must be consistent, then dropped
    keep = _independent_rows(A_eq, range(A_eq.shape[0]), np.zeros((0, n)))
    x0 = _feasible_start(A_eq, b_eq, G, h, n)
    A_eq_r, b_eq_r = A_eq[keep], b_eq[keep]
    x, W, it1 = _active_set(q, c, A_eq_r, G, h, x0, 1e-10, max_iter)

    # phase 2: minimum-norm point of the optimal face
    pos = q > 0
    face_rows = [np.eye(n)[pos]]
    face_rhs = [x[pos]]
    cz = np.where(pos, 0.0, c)
    if np.any(cz != 0):
        face_rows.append(cz[None, :])
        face_rhs.append(np.array([cz @ x]))
    A2 = np.vstack([A_eq_r] + face_rows)
    b2 = np.concatenate([b_eq_r] + face_rhs)
    keep2 = _independent_rows(A2, range(A2.shape[0]), np.zeros((0, n)))
    x, _, it2 = _active_set(np.ones(n), np.zeros(n), A2[keep2], G, h, x, 1e-10, max_iter)
    # the face equalities were satisfied only up to round-off; restore exact fixed coordinates
    x[pos] = face_rhs[0]
    x = np.clip(x, lb, ub)

    res, mu, lam = kkt_residual(q, c, A_eq, b_eq, G, h, x)
    return QpResult(x=x, objective=float(0.5 * q @ (x * x) + c @ x), eq_multipliers=mu,
                    ineq_multipliers=lam, kkt_residual=float(res), iterations=it1 + it2)
