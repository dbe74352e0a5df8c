"""Fully-corrective conditional-gradient solver for the regularized problem.

One outer iteration: form the scaled residual p = -(Ku - y)/lambda, ask the
linear minimization oracle (LMO) for the extreme point maximizing the dual
pairing, stop if no pairing exceeds 1 + stop_tol, otherwise insert the atom,
re-fit all coefficients by an exact nonnegative QP, locally slide atom
parameters downhill on the true objective, prune zero atoms and merge
near-duplicates.  The fully-corrective refit keeps atom counts exact and
saturates every kept atom's pairing at 1 to the QP's KKT accuracy.

All scans and tie-breaks resolve by lowest parameter lexicographic order, so
a solve is deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .domain import (
    BV_INDICATOR,
    PAIRED_WASSERSTEIN,
    RADON_TV,
    ExtremePoint,
    PairedDirac,
    SignedDirac,
    SignedIndicator,
    SparseElement,
    atom_distance,
    torus_signed_difference,
    wrap_torus,
)
from .forward import CertificateFunction, ForwardModel, Observation
from .nnqp import solve_nnqp

FIT_KKT_TOL = 1e-10


@dataclass(frozen=True)
class SolveOptions:
    """Knobs of the conditional-gradient solver."""

    max_iters: int = 120
    stop_tol: float = 1e-7
    lmo_grid: int = 256
    newton_steps: int = 12
    sliding: bool = True
    prune_tol: float = 1e-9
    merge_radius: Optional[float] = None
    slide_rounds: int = 3

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.stop_tol <= 0:
            raise ValueError("stop_tol must be positive")
        if self.lmo_grid < 64:
            raise ValueError("lmo_grid must be >= 64")
        if self.newton_steps < 0:
            raise ValueError("newton_steps must be >= 0")
        if self.prune_tol <= 0:
            raise ValueError("prune_tol must be positive")
        if self.merge_radius is not None and self.merge_radius < 0:
            raise ValueError("merge_radius must be >= 0")

    @property
    def merge_distance(self) -> float:
        return self.merge_radius if self.merge_radius is not None else 2.0 / self.lmo_grid


@dataclass(frozen=True)
class SolveResult:
    element: SparseElement
    residual: Observation
    objective: float
    dual_variable: Observation
    certificate_sup: float
    iterations: int
    converged: bool


def atom_key(atom: ExtremePoint) -> Tuple[float, ...]:
    """Lexicographic tie-break key."""
    if isinstance(atom, SignedDirac):
        return (atom.x, float(atom.sign))
    if isinstance(atom, SignedIndicator):
        return (atom.a, atom.b, float(atom.sign))
    return (atom.x, atom.xbar)


# ---------------------------------------------------------------------------
# linear minimization oracle
# ---------------------------------------------------------------------------


def _newton_max_1d(value, d1, d2, x0, fx0, steps, max_step, lo=None, hi=None):
    """Safeguarded Newton ascent of a smooth scalar function.

    In the concave regime a Newton step is accepted whenever it shrinks the
    gradient (this resolves maximizers to machine accuracy where function
    values are too flat to compare); otherwise the step is halved until the
    function value improves.  The result never regresses below the start.
    """

    def proj(t):
        if lo is not None:
            t = min(max(t, lo), hi)
        return t

    x = x0
    for _ in range(steps):
        g = d1(x)
        if g == 0.0:
            break
        h = d2(x)
        step = -g / h if h < 0 else math.copysign(max_step, g)
        step = max(-max_step, min(max_step, step))
        xn = proj(x + step)
        if xn == x:
            break
        if h < 0 and abs(d1(xn)) <= 0.9 * abs(g):
            x = xn
            continue
        fx = value(x)
        improved = False
        for _ in range(12):
            fn = value(xn)
            if fn > fx:
                x = xn
                improved = True
                break
            step *= 0.5
            xn = proj(x + step)
            if xn == x:
                break
        if not improved:
            break
    fx_final = value(x)
    if fx_final >= fx0:
        return x, fx_final
    return x0, fx0


def _cyclic_local_maxima(f: np.ndarray) -> np.ndarray:
    return np.flatnonzero((f >= np.roll(f, 1)) & (f >= np.roll(f, -1)))


def _top_indices(idx: np.ndarray, values: np.ndarray, count: int) -> np.ndarray:
    if idx.size <= count:
        return idx
    order = np.argsort(-values[idx], kind="stable")
    return idx[order[:count]]


def _lmo_radon(model: ForwardModel, eta: CertificateFunction, options: SolveOptions):
    G = options.lmo_grid
    xs = np.arange(G) / G
    vals = eta.value(xs)
    candidates = []
    for sign in (-1, 1):
        f = sign * vals
        peaks = _top_indices(_cyclic_local_maxima(f), f, 5)
        for i in peaks:
            x0, f0 = float(xs[i]), float(f[i])
            x, fx = _newton_max_1d(
                lambda t, s=sign: s * eta.value(t),
                lambda t, s=sign: s * eta.value(t, order=1),
                lambda t, s=sign: s * eta.value(t, order=2),
                x0,
                f0,
                options.newton_steps,
                max_step=1.0 / G,
            )
            candidates.append((SignedDirac(x, sign), fx))
    return candidates


def _lmo_bv(model: ForwardModel, eta: CertificateFunction, options: SolveOptions):
    margin = model.setting.margin
    G = options.lmo_grid
    es = np.linspace(margin, 1.0 - margin, G)
    P = eta.primitive(es)
    candidates = []
    for sign in (-1, 1):
        # best endpoint pair on the grid via prefix extremes of the primitive
        if sign > 0:
            run = np.minimum.accumulate(P)
            run_arg = np.zeros(G, dtype=int)
            best = P[0]
            bi = 0
            for j in range(G):
                if P[j] < best:
                    best, bi = P[j], j
                run_arg[j] = bi
            vals = 0.5 * (P - run)
        else:
            run_arg = np.zeros(G, dtype=int)
            best = P[0]
            bi = 0
            for j in range(G):
                if P[j] > best:
                    best, bi = P[j], j
                run_arg[j] = bi
            vals = 0.5 * (np.maximum.accumulate(P) - P)
        peaks = _top_indices(_cyclic_local_maxima(vals), vals, 5)
        half = 0.5 * sign
        for j in peaks:
            ia = run_arg[j]
            if ia >= j:
                continue
            a0, b0 = float(es[ia]), float(es[j])
            # the two endpoint problems decouple: polish each separately
            a, _ = _newton_max_1d(
                lambda t, h=half: -h * eta.primitive(t),
                lambda t, h=half: -h * eta.value(t),
                lambda t, h=half: -h * eta.value(t, order=1),
                a0,
                -half * eta.primitive(a0),
                options.newton_steps,
                max_step=(1.0 - 2 * margin) / G,
                lo=margin,
                hi=1.0 - margin,
            )
            b, _ = _newton_max_1d(
                lambda t, h=half: h * eta.primitive(t),
                lambda t, h=half: h * eta.value(t),
                lambda t, h=half: h * eta.value(t, order=1),
                b0,
                half * eta.primitive(b0),
                options.newton_steps,
                max_step=(1.0 - 2 * margin) / G,
                lo=margin,
                hi=1.0 - margin,
            )
            if not a < b:
                a, b = a0, b0
            atom = SignedIndicator(a, b, sign)
            candidates.append((atom, eta.pair(atom)))
    return candidates


def _paired_newton_polish(model, p, eta, x0, xbar0, steps, max_step):
    x, xb = x0, xbar0
    atom = PairedDirac(x, xb)
    fx0 = eta.pair(atom)
    for _ in range(steps):
        deriv = model.pairing_derivatives(p, atom)
        if deriv.degenerate:
            break
        g = deriv.gradient
        gnorm = float(np.max(np.abs(g)))
        if gnorm == 0.0:
            break
        H = deriv.hessian
        neg_definite = H[0, 0] < 0 and np.linalg.det(H) > 0
        if neg_definite:
            step = np.linalg.solve(H, -g)
        else:
            step = g * (max_step / gnorm)
        step = np.clip(step, -max_step, max_step)
        cand = PairedDirac(x + step[0], xb + step[1])
        if neg_definite and not (cand.x == x and cand.xbar == xb):
            dn = model.pairing_derivatives(p, cand)
            if not dn.degenerate and float(np.max(np.abs(dn.gradient))) <= 0.9 * gnorm:
                atom = cand
                x, xb = cand.x, cand.xbar
                continue
        fx = eta.pair(atom)
        accepted = False
        for _ in range(12):
            cand = PairedDirac(x + step[0], xb + step[1])
            fn = eta.pair(cand)
            if fn > fx:
                atom = cand
                x, xb = cand.x, cand.xbar
                accepted = True
                break
            step = step * 0.5
        if not accepted:
            break
    fx_final = eta.pair(atom)
    if fx_final >= fx0:
        return atom, fx_final
    return PairedDirac(x0, xbar0), fx0


def _lmo_paired(model: ForwardModel, eta: CertificateFunction, options: SolveOptions):
    G = options.lmo_grid
    xs = np.arange(G) / G
    phi = eta.value(xs, channel=0)
    psi = eta.value(xs, channel=1)
    diff = np.abs(xs[:, None] - xs[None, :])
    dist = np.minimum(diff, 1.0 - diff)
    V = (phi[:, None] + psi[None, :]) / (2.0 + dist)
    local = (
        (V >= np.roll(V, 1, axis=0))
        & (V >= np.roll(V, -1, axis=0))
        & (V >= np.roll(V, 1, axis=1))
        & (V >= np.roll(V, -1, axis=1))
    )
    flat = np.flatnonzero(local.ravel())
    peaks = _top_indices(flat, V.ravel(), 5)
    p = eta.p
    candidates = []
    for f in peaks:
        i, j = divmod(int(f), G)
        atom, val = _paired_newton_polish(
            model, p, eta, float(xs[i]), float(xs[j]), options.newton_steps, 1.0 / G
        )
        candidates.append((atom, val))
    # the diagonal x == xbar is a kink of the separation; polish it as a curve
    fdiag = 0.5 * (phi + psi)
    for i in _top_indices(_cyclic_local_maxima(fdiag), fdiag, 3):
        x, fx = _newton_max_1d(
            lambda t: 0.5 * (eta.value(t, channel=0) + eta.value(t, channel=1)),
            lambda t: 0.5 * (eta.value(t, order=1, channel=0) + eta.value(t, order=1, channel=1)),
            lambda t: 0.5 * (eta.value(t, order=2, channel=0) + eta.value(t, order=2, channel=1)),
            float(xs[i]),
            float(fdiag[i]),
            options.newton_steps,
            max_step=1.0 / G,
        )
        candidates.append((PairedDirac(x, x), fx))
    return candidates


def polish_pairing_max(
    model: ForwardModel,
    p: Observation,
    atom: ExtremePoint,
    steps: int = 12,
    max_step: float = 2e-3,
    eta: Optional[CertificateFunction] = None,
):
    """Newton ascent of Phi(p, .) from a candidate atom; never regresses."""
    if eta is None:
        eta = model.certificate(p)
    if isinstance(atom, SignedDirac):
        sign = atom.sign
        x, fx = _newton_max_1d(
            lambda t: sign * eta.value(t),
            lambda t: sign * eta.value(t, order=1),
            lambda t: sign * eta.value(t, order=2),
            atom.x,
            sign * eta.value(atom.x),
            steps,
            max_step=max_step,
        )
        return SignedDirac(x, sign), fx
    if isinstance(atom, SignedIndicator):
        margin = model.setting.margin
        half = 0.5 * atom.sign
        a, _ = _newton_max_1d(
            lambda t: -half * eta.primitive(t),
            lambda t: -half * eta.value(t),
            lambda t: -half * eta.value(t, order=1),
            atom.a,
            -half * eta.primitive(atom.a),
            steps,
            max_step=max_step,
            lo=margin,
            hi=1.0 - margin,
        )
        b, _ = _newton_max_1d(
            lambda t: half * eta.primitive(t),
            lambda t: half * eta.value(t),
            lambda t: half * eta.value(t, order=1),
            atom.b,
            half * eta.primitive(atom.b),
            steps,
            max_step=max_step,
            lo=margin,
            hi=1.0 - margin,
        )
        if not a < b:
            a, b = atom.a, atom.b
        polished = SignedIndicator(a, b, atom.sign)
        return polished, eta.pair(polished)
    return _paired_newton_polish(
        model, p, eta, atom.x, atom.xbar, steps, max_step=max_step
    )


def lmo(model: ForwardModel, p: Observation, options: Optional[SolveOptions] = None):
    """Extreme point maximizing the dual pairing Phi(p, .), with its value."""
    options = options or SolveOptions()
    eta = model.certificate(p)
    variant = model.setting.variant
    if variant == RADON_TV:
        candidates = _lmo_radon(model, eta, options)
    elif variant == BV_INDICATOR:
        candidates = _lmo_bv(model, eta, options)
    else:
        candidates = _lmo_paired(model, eta, options)
    best_atom, best_val = None, -math.inf
    for atom, val in candidates:
        if val > best_val or (val == best_val and atom_key(atom) < atom_key(best_atom)):
            best_atom, best_val = atom, val
    return best_atom, float(best_val)


# ---------------------------------------------------------------------------
# fully-corrective fit
# ---------------------------------------------------------------------------


def _atom_columns(model: ForwardModel, atoms: Sequence[ExtremePoint]) -> np.ndarray:
    if not atoms:
        return np.zeros((0, model.channels * model.grid.m))
    return np.stack([model.apply_k_atom(a).reshape(-1) for a in atoms])


def fully_corrective_fit(
    model: ForwardModel,
    atoms: Sequence[ExtremePoint],
    y: Observation,
    lam: float,
    columns: Optional[np.ndarray] = None,
):
    """Exact nonnegative refit of all coefficients for the given atoms.

    Minimizes (1/2)||sum_i c_i K(atom_i) - y||^2 + lam * sum_i c_i over
    c >= 0 through the Gram-form active-set QP; returns the coefficient
    vector and the attained KKT residual.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    cols = columns if columns is not None else _atom_columns(model, atoms)
    h = model.grid.h
    G = h * cols @ cols.T
    b = h * cols @ y.values.reshape(-1) - lam
    res = solve_nnqp(G, b)
    return res.coefficients, res.kkt_residual


def _objective(model, cols, coeffs, y, lam) -> float:
    resid = coeffs @ cols - y.values.reshape(-1)
    return 0.5 * model.grid.h * float(resid @ resid) + lam * float(np.sum(coeffs))


def _residual_values(cols, coeffs, y) -> np.ndarray:
    return (coeffs @ cols - y.values.reshape(-1)).reshape(y.values.shape)


# ---------------------------------------------------------------------------
# local parameter sliding
# ---------------------------------------------------------------------------


def _move_atom(model: ForwardModel, atom: ExtremePoint, step: np.ndarray) -> ExtremePoint:
    if isinstance(atom, SignedDirac):
        return SignedDirac(wrap_torus(atom.x + step[0]), atom.sign)
    if isinstance(atom, SignedIndicator):
        margin = model.setting.margin
        a = min(max(atom.a + step[0], margin), 1.0 - margin)
        b = min(max(atom.b + step[1], margin), 1.0 - margin)
        if not a < b:
            mid = 0.5 * (a + b)
            a, b = mid - 5e-10, mid + 5e-10
        return SignedIndicator(a, b, atom.sign)
    return PairedDirac(atom.x + step[0], atom.xbar + step[1])


def _slide_once(model, atoms, cols, coeffs, y, lam, options):
    """One projected Newton step of all atom parameters, objective-guarded.

    With p the scaled residual, the objective gradient in the parameters of
    atom i is -lam * c_i * grad Phi(p, atom_i) and its Hessian is
    c_i^2 * Gram(dK atom_i) - lam * c_i * Hess Phi(p, atom_i); the step uses
    that curvature (the pairing Hessian alone overshoots by a factor of
    order 1/lam) and is backtracked on the full objective.
    """
    if not atoms:
        return atoms, cols, False
    h = model.grid.h
    p = Observation(y.grid, -_residual_values(cols, coeffs, y) / lam)
    cap = 1.0 / options.lmo_grid
    steps = []
    for atom, c in zip(atoms, coeffs):
        if c <= 0:
            steps.append(np.zeros(len(atom.params)))
            continue
        deriv = model.pairing_derivatives(p, atom)
        g = lam * c * deriv.gradient
        grad_cols = model.apply_k_atom_gradient(atom).reshape(len(atom.params), -1)
        H = c**2 * (h * grad_cols @ grad_cols.T) - lam * c * deriv.hessian
        if not deriv.degenerate and np.all(np.linalg.eigvalsh(H) > 0):
            step = np.linalg.solve(H, g)
        else:
            norm = float(np.max(np.abs(g)))
            step = g * (cap / norm) if norm > 0 else np.zeros_like(g)
        steps.append(np.clip(step, -cap, cap))
    base = _objective(model, cols, coeffs, y, lam)
    t = 1.0
    for _ in range(10):
        moved = [
            _move_atom(model, atom, t * s) for atom, s in zip(atoms, steps)
        ]
        new_cols = _atom_columns(model, moved)
        if _objective(model, new_cols, coeffs, y, lam) < base:
            return moved, new_cols, True
        t *= 0.5
    return atoms, cols, False


def _merge_atoms(model: ForwardModel, atoms, coeffs, radius):
    """Coefficient-weighted merge of atom clusters closer than radius."""
    n = len(atoms)
    used = np.zeros(n, dtype=bool)
    merged_atoms = []
    merged = False
    for i in range(n):
        if used[i]:
            continue
        cluster = [i]
        used[i] = True
        for j in range(i + 1, n):
            if not used[j] and atom_distance(atoms[i], atoms[j]) <= radius:
                cluster.append(j)
                used[j] = True
        if len(cluster) == 1:
            merged_atoms.append(atoms[i])
            continue
        merged = True
        w = np.array([max(coeffs[k], 1e-300) for k in cluster])
        w = w / w.sum()
        ref = atoms[cluster[0]]
        if isinstance(ref, SignedDirac):
            x = ref.x + sum(
                wk * torus_signed_difference(atoms[k].x, ref.x)
                for wk, k in zip(w, cluster)
            )
            merged_atoms.append(SignedDirac(wrap_torus(x), ref.sign))
        elif isinstance(ref, SignedIndicator):
            a = sum(wk * atoms[k].a for wk, k in zip(w, cluster))
            b = sum(wk * atoms[k].b for wk, k in zip(w, cluster))
            if not a < b:
                merged_atoms.append(ref)
            else:
                merged_atoms.append(SignedIndicator(a, b, ref.sign))
        else:
            x = ref.x + sum(
                wk * torus_signed_difference(atoms[k].x, ref.x)
                for wk, k in zip(w, cluster)
            )
            xb = ref.xbar + sum(
                wk * torus_signed_difference(atoms[k].xbar, ref.xbar)
                for wk, k in zip(w, cluster)
            )
            merged_atoms.append(PairedDirac(wrap_torus(x), wrap_torus(xb)))
    return merged_atoms, merged


# ---------------------------------------------------------------------------
# outer loop
# ---------------------------------------------------------------------------


def kkt_newton_correct(model, z_values, atoms, mu, rounds=30, tol=1e-11):
    """Newton corrector for the saturated-atom optimality system.

    Solves, in the multipliers mu and the atom parameters jointly,

        (K atom_i, p) = 1   and   grad_theta (K atom_i, p) = 0,
        p = z - sum_j mu_j K atom_j,

    which characterizes both the projection of z onto the dual feasible set
    (active cuts saturate at their own pairing maxima) and, with
    z = y / lambda and mu = c / lambda, the primal optimum.  Returns
    (atoms, mu, p_values) or None when the system cannot be corrected
    (degenerate parameters, Newton failure, or a multiplier driven
    negative).
    """
    atoms = list(atoms)
    mu = np.asarray(mu, dtype=float).copy()
    h = model.grid.h
    z_flat = z_values.reshape(-1)
    shape = z_values.shape
    dims = [len(a.params) for a in atoms]
    offsets = np.concatenate([[0], np.cumsum(dims)]).astype(int)
    n = len(atoms)
    nd = int(offsets[-1])

    def assemble(atoms, mu):
        cols = np.stack([model.apply_k_atom(a).reshape(-1) for a in atoms])
        grads = [
            model.apply_k_atom_gradient(a).reshape(d, -1)
            for a, d in zip(atoms, dims)
        ]
        p_flat = z_flat - mu @ cols
        p_obs = Observation(model.grid, p_flat.reshape(shape))
        derivs = [model.pairing_derivatives(p_obs, a) for a in atoms]
        if any(d.degenerate for d in derivs):
            return None
        r = np.concatenate(
            [h * cols @ p_flat - 1.0] + [d.gradient for d in derivs]
        )
        J = np.zeros((n + nd, n + nd))
        J[:n, :n] = -(h * cols @ cols.T)
        for j in range(n):
            block = slice(n + offsets[j], n + offsets[j + 1])
            J[:n, block] = -mu[j] * (h * cols @ grads[j].T)
            J[j, block] += derivs[j].gradient
            J[block, :n] = -(h * grads[j] @ cols.T)
            for i in range(n):
                rblock = slice(n + offsets[i], n + offsets[i + 1])
                J[rblock, block] = -mu[j] * (h * grads[i] @ grads[j].T)
            J[block, block] += derivs[j].hessian
        return r, J, p_flat

    state = assemble(atoms, mu)
    if state is None:
        return None
    r, J, p_flat = state
    res_norm = float(np.max(np.abs(r)))
    for _ in range(rounds):
        if res_norm <= tol:
            break
        try:
            delta = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            return None
        t = 1.0
        for _ in range(10):
            new_mu = mu + t * delta[:n]
            new_atoms = [
                _move_atom(model, a, t * delta[n + offsets[i]: n + offsets[i + 1]])
                for i, a in enumerate(atoms)
            ]
            state = assemble(new_atoms, new_mu)
            if state is not None and float(np.max(np.abs(state[0]))) < res_norm:
                atoms, mu = new_atoms, new_mu
                r, J, p_flat = state
                res_norm = float(np.max(np.abs(r)))
                break
            t *= 0.5
        else:
            return None
    if res_norm > tol or np.any(mu < 0):
        return None
    return atoms, mu, p_flat.reshape(shape)


def _finish_polish(model, atoms, cols, coeffs, y, lam, options):
    """Pin the converged iterate to the exact optimality system."""
    if not atoms:
        return atoms, cols, coeffs
    refined = kkt_newton_correct(model, y.values / lam, atoms, coeffs / lam)
    if refined is None:
        return atoms, cols, coeffs
    new_atoms, _, _ = refined
    new_cols = _atom_columns(model, new_atoms)
    new_coeffs, kkt = fully_corrective_fit(model, new_atoms, y, lam, columns=new_cols)
    if kkt > FIT_KKT_TOL:
        return atoms, cols, coeffs
    base = _objective(model, cols, coeffs, y, lam)
    if _objective(model, new_cols, new_coeffs, y, lam) > base + 1e-12:
        return atoms, cols, coeffs
    return _prune(new_atoms, new_cols, new_coeffs, options.prune_tol)


def _prune(atoms, cols, coeffs, tol):
    keep = coeffs > tol
    if np.all(keep):
        return atoms, cols, coeffs
    atoms = [a for a, k in zip(atoms, keep) if k]
    cols = cols[keep] if len(atoms) else np.zeros((0, cols.shape[1]))
    return atoms, cols, coeffs[keep]


def solve(
    model: ForwardModel,
    y_obs: Observation,
    lam: float,
    options: Optional[SolveOptions] = None,
) -> SolveResult:
    """Solve the soft-constrained problem at regularization level lam."""
    options = options or SolveOptions()
    if lam <= 0:
        raise ValueError("lam must be positive")
    if y_obs.values.shape != (model.channels, model.grid.m):
        raise ValueError("observation shape does not match the model")

    atoms: List[ExtremePoint] = []
    cols = _atom_columns(model, atoms)
    coeffs = np.zeros(0)
    prev_obj = _objective(model, cols, coeffs, y_obs, lam)
    converged = False
    cert_sup = math.nan
    iterations = 0

    for iterations in range(1, options.max_iters + 1):
        resid_values = _residual_values(cols, coeffs, y_obs)
        p = Observation(y_obs.grid, -resid_values / lam)
        insert_atom, cert_sup = lmo(model, p, options)
        if cert_sup <= 1.0 + options.stop_tol:
            # finishing phase: iterate (atoms -> pairing maxima, exact refit)
            # to its fixed point, pinning positions to machine accuracy
            atoms, cols, coeffs = _finish_polish(
                model, atoms, cols, coeffs, y_obs, lam, options
            )
            resid_values = _residual_values(cols, coeffs, y_obs)
            p = Observation(y_obs.grid, -resid_values / lam)
            _, cert_sup = lmo(model, p, options)
            converged = True
            break

        atoms = atoms + [insert_atom]
        cols = np.concatenate([cols, _atom_columns(model, [insert_atom])], axis=0)
        coeffs, kkt = fully_corrective_fit(model, atoms, y_obs, lam, columns=cols)
        if kkt > FIT_KKT_TOL:
            atoms, _ = _merge_atoms(model, atoms, coeffs, options.merge_distance)
            cols = _atom_columns(model, atoms)
            coeffs, _ = fully_corrective_fit(model, atoms, y_obs, lam, columns=cols)
        atoms, cols, coeffs = _prune(atoms, cols, coeffs, options.prune_tol)

        if options.sliding:
            for _ in range(options.slide_rounds):
                atoms, cols, moved = _slide_once(
                    model, atoms, cols, coeffs, y_obs, lam, options
                )
                if not moved:
                    break
                coeffs, _ = fully_corrective_fit(model, atoms, y_obs, lam, columns=cols)
                atoms, cols, coeffs = _prune(atoms, cols, coeffs, options.prune_tol)

        # merge near-duplicates; revert if the merge costs objective
        snapshot = (list(atoms), cols.copy(), coeffs.copy())
        pre_merge_obj = _objective(model, cols, coeffs, y_obs, lam)
        merged_atoms, did_merge = _merge_atoms(
            model, atoms, coeffs, options.merge_distance
        )
        if did_merge:
            atoms = merged_atoms
            cols = _atom_columns(model, atoms)
            coeffs, _ = fully_corrective_fit(model, atoms, y_obs, lam, columns=cols)
            atoms, cols, coeffs = _prune(atoms, cols, coeffs, options.prune_tol)
            if options.sliding:
                atoms, cols, moved = _slide_once(
                    model, atoms, cols, coeffs, y_obs, lam, options
                )
                if moved:
                    coeffs, _ = fully_corrective_fit(
                        model, atoms, y_obs, lam, columns=cols
                    )
                    atoms, cols, coeffs = _prune(atoms, cols, coeffs, options.prune_tol)
            if _objective(model, cols, coeffs, y_obs, lam) > pre_merge_obj + 1e-12:
                atoms, cols, coeffs = snapshot

        prev_obj = _objective(model, cols, coeffs, y_obs, lam)
    else:
        # iteration cap: report the certificate of the final iterate honestly
        resid_values = _residual_values(cols, coeffs, y_obs)
        p = Observation(y_obs.grid, -resid_values / lam)
        _, cert_sup = lmo(model, p, options)

    resid_values = _residual_values(cols, coeffs, y_obs)
    residual = Observation(y_obs.grid, resid_values)
    dual_variable = Observation(y_obs.grid, -resid_values / lam)
    element = SparseElement(model.setting, tuple(atoms), tuple(coeffs))
    objective = _objective(model, cols, coeffs, y_obs, lam)
    return SolveResult(
        element=element,
        residual=residual,
        objective=objective,
        dual_variable=dual_variable,
        certificate_sup=float(cert_sup),
        iterations=iterations,
        converged=converged,
    )
