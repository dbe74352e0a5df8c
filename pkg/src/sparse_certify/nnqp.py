"""Active-set solver for small dense nonnegative quadratic programs.

Solves  min_{c >= 0}  (1/2) c' G c - b' c  for a symmetric PSD Gram matrix G.
This is the workhorse behind both the fully-corrective coefficient fits of
the primal solver and the cut projections of the dual solver; both need the
exact KKT conditions (gradient >= 0 off the support, ~0 on it) down to
~1e-12 so that atom saturations are reproduced to the accuracy the
downstream checks pin.

The iteration is the classic least-squares active-set scheme adapted to the
Gram form.  Singular free-set systems (near-duplicate atoms) fall back to a
minimum-norm least-squares solve, which still reaches a KKT point; callers
merge duplicate atoms if that happens repeatedly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NNQPResult:
    coefficients: np.ndarray
    kkt_residual: float
    iterations: int


def kkt_residual(G: np.ndarray, b: np.ndarray, c: np.ndarray) -> float:
    """Max violation of the first-order conditions at c (0 at an optimum)."""
    grad = G @ c - b
    active = c > 0.0
    viol = 0.0
    if np.any(active):
        viol = float(np.max(np.abs(grad[active])))
    if np.any(~active):
        viol = max(viol, float(np.max(-grad[~active], initial=0.0)))
    return viol


def _solve_free(G: np.ndarray, b: np.ndarray, free: np.ndarray) -> np.ndarray:
    """Unconstrained minimizer on the free set, robust to rank deficiency."""
    Gff = G[np.ix_(free, free)]
    bf = b[free]
    try:
        z = np.linalg.solve(Gff, bf)
        if np.all(np.isfinite(z)) and np.max(np.abs(Gff @ z - bf)) <= 1e-10 * max(
            1.0, float(np.max(np.abs(bf)))
        ):
            return z
    except np.linalg.LinAlgError:
        pass
    z, *_ = np.linalg.lstsq(Gff, bf, rcond=None)
    return z


def solve_nnqp(G: np.ndarray, b: np.ndarray, max_iter: int | None = None) -> NNQPResult:
    """Minimize (1/2) c'Gc - b'c over c >= 0 by an active-set method."""
    G = np.asarray(G, dtype=float)
    b = np.asarray(b, dtype=float)
    n = b.size
    if G.shape != (n, n):
        raise ValueError(f"Gram matrix shape {G.shape} does not match b ({n})")
    if n == 0:
        return NNQPResult(np.zeros(0), 0.0, 0)
    if max_iter is None:
        max_iter = 6 * n + 30

    scale = max(1.0, float(np.max(np.abs(b))))
    enter_tol = 1e-13 * scale
    diag = np.diag(G)
    eligible = diag > 1e-300  # zero columns can never improve the objective

    c = np.zeros(n)
    free = np.zeros(n, dtype=bool)
    outer = 0

    while outer < max_iter:
        outer += 1
        w = b - G @ c
        w_masked = np.where(free | ~eligible, -np.inf, w)
        j = int(np.argmax(w_masked))
        if w_masked[j] <= enter_tol:
            break
        free[j] = True

        for _ in range(max_iter):
            z = _solve_free(G, b, free)
            if np.all(z > 0.0):
                c = np.zeros(n)
                c[free] = z
                break
            # step from c toward z until the first free coordinate hits zero
            idx = np.flatnonzero(free)
            cf = c[idx]
            neg = np.flatnonzero(z <= 0.0)
            denom = cf[neg] - z[neg]
            ratios = np.where(denom > 0.0, cf[neg] / np.where(denom > 0.0, denom, 1.0), 0.0)
            alpha = float(np.min(ratios))
            cf = cf + alpha * (z - cf)
            # zero out (and release) every coordinate that reached the boundary
            hit = neg[ratios <= alpha * (1.0 + 1e-12)]
            cf[hit] = 0.0
            cf = np.maximum(cf, 0.0)
            c = np.zeros(n)
            c[idx] = cf
            free[idx[hit]] = False
            if not np.any(free):
                break

    return NNQPResult(c, kkt_residual(G, b, c), outer)
