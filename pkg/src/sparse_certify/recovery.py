"""Recovery sweeps over the admissible parameter/noise region.

The admissible region couples noise to regularization: a sweep cell at
level lam and noise fraction f draws a pseudo-random direction, rescaled so
its norm is exactly f * alpha * lam, which keeps every executed cell inside
{(lam, w) : lam <= lambda0, ||w|| <= alpha * lam} by construction.
Recovered elements are matched to the ground truth by optimal bipartite
assignment on the atom metric; a cell counts as recovered only when the
matching is a bijection with every distance below the matching radius.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .domain import SampleGrid, SparseElement, atom_distance
from .dual import atom_distance_safe
from .forward import ForwardModel, Observation
from .primal import SolveOptions, SolveResult, solve

#: finite stand-in for forbidden assignments in the Hungarian cost matrix
_FORBIDDEN = 1e18


def make_noise(
    grid: SampleGrid, channels: int, norm_target: float, seed: int
) -> Observation:
    """Seeded Gaussian-direction noise with exactly the requested norm."""
    if norm_target < 0:
        raise ValueError("norm_target must be >= 0")
    if norm_target == 0.0:
        return Observation.zeros(grid, channels)
    rng = np.random.default_rng(seed)
    values = rng.standard_normal((channels, grid.m))
    obs = Observation(grid, values)
    scale = norm_target / obs.norm()
    return obs.scaled(scale)


@dataclass(frozen=True)
class MatchReport:
    matched: bool
    count_recovered: int
    count_truth: int
    pairs: Tuple[Tuple[int, int], ...]
    param_errors: Tuple[float, ...]
    coef_errors: Tuple[float, ...]

    @property
    def max_param_error(self) -> float:
        return max(self.param_errors, default=math.nan)

    @property
    def max_coef_error(self) -> float:
        return max(self.coef_errors, default=math.nan)


def match_atoms(
    recovered: SparseElement, truth: SparseElement, epsilon: float
) -> MatchReport:
    """Optimal bipartite match of recovered atoms to ground-truth atoms."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    nr, nt = len(recovered), len(truth)
    if nr == 0 or nt == 0:
        return MatchReport(nr == nt, nr, nt, (), (), ())
    cost = np.full((nr, nt), _FORBIDDEN)
    for i, ra in enumerate(recovered.atoms):
        for j, ta in enumerate(truth.atoms):
            d = atom_distance_safe(ra, ta)
            if math.isfinite(d):
                cost[i, j] = d
    rows, cols = linear_sum_assignment(cost)
    pairs = []
    param_errors = []
    coef_errors = []
    for i, j in zip(rows, cols):
        if cost[i, j] >= _FORBIDDEN:
            continue
        pairs.append((int(i), int(j)))
        param_errors.append(float(cost[i, j]))
        coef_errors.append(
            abs(recovered.coefficients[i] - truth.coefficients[j])
        )
    bijection = nr == nt and len(pairs) == nt
    matched = bijection and all(e <= epsilon for e in param_errors)
    return MatchReport(
        matched, nr, nt, tuple(pairs), tuple(param_errors), tuple(coef_errors)
    )


@dataclass(frozen=True)
class SweepConfig:
    """Cell layout of a recovery sweep inside the admissible region."""

    alpha: float
    lambda0: float = 1e-2
    lambda_grid: Tuple[float, ...] = (1e-2, 3e-3, 1e-3, 3e-4, 1e-4)
    noise_fractions: Tuple[float, ...] = (0.0, 0.25, 0.5)
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    epsilon_match: float = 0.02
    guaranteed_lambda_min: float = 1e-4
    guaranteed_lambda_max: float = 1e-3
    guaranteed_max_fraction: float = 0.5

    def __post_init__(self):
        if self.alpha <= 0 or self.lambda0 <= 0:
            raise ValueError("alpha and lambda0 must be positive")
        if not self.lambda_grid:
            raise ValueError("lambda_grid must be nonempty")
        if any(l <= 0 or l > self.lambda0 for l in self.lambda_grid):
            raise ValueError("lambda_grid entries must lie in (0, lambda0]")
        if any(l2 >= l1 for l1, l2 in zip(self.lambda_grid, self.lambda_grid[1:])):
            raise ValueError("lambda_grid must be strictly decreasing")
        if any(f < 0 or f > 1 for f in self.noise_fractions):
            raise ValueError("noise fractions must lie in [0, 1]")
        if self.epsilon_match <= 0:
            raise ValueError("epsilon_match must be positive")

    def cells(self):
        for lam in self.lambda_grid:
            for frac in self.noise_fractions:
                for seed in self.seeds:
                    yield lam, frac, seed

    def in_guaranteed_region(self, lam: float, frac: float) -> bool:
        return (
            self.guaranteed_lambda_min <= lam <= self.guaranteed_lambda_max
            and frac <= self.guaranteed_max_fraction
        )


@dataclass(frozen=True)
class SweepRecord:
    lam: float
    noise_norm: float
    noise_fraction: float
    seed: int
    count: int
    matched: bool
    max_param_err: float
    max_coef_err: float
    param_errors: Tuple[float, ...]
    coef_errors: Tuple[float, ...]
    saturations: Tuple[float, ...]
    certificate_sup: float
    duality_gap: float
    converged: bool
    wall_ms: float
    error: Optional[str] = None


@dataclass(frozen=True)
class SweepSummary:
    alpha: float
    lambda0: float
    gram_min_eigenvalue: float
    gram_warning: bool
    guaranteed_all_matched: bool
    any_cell_error: bool


def truth_gram_min_eigenvalue(model: ForwardModel, truth: SparseElement) -> float:
    """Smallest eigenvalue of the Gram of the truth-atom measurements."""
    cols = np.stack([model.apply_k_atom(a).reshape(-1) for a in truth.atoms])
    G = model.grid.h * cols @ cols.T
    return float(np.linalg.eigvalsh(G)[0])


def estimate_alpha(model: ForwardModel, value_margin: float) -> float:
    """Conservative default noise-to-lambda ratio from certificate geometry."""
    if value_margin <= 0:
        raise ValueError("value_margin must be positive to derive alpha")
    return 0.5 * value_margin / model.operator_norm_estimate()


def _run_cell(model, truth, y0, config, options, lam, frac, seed) -> SweepRecord:
    from .dual import dual_objective

    norm_target = frac * config.alpha * lam
    w = make_noise(model.grid, model.channels, norm_target, seed)
    y = y0.plus(w)
    start = time.perf_counter()
    try:
        result = solve(model, y, lam, options)
    except Exception as exc:  # per-cell failures recorded, sweep continues
        return SweepRecord(
            lam=lam,
            noise_norm=norm_target,
            noise_fraction=frac,
            seed=seed,
            count=0,
            matched=False,
            max_param_err=math.nan,
            max_coef_err=math.nan,
            param_errors=(),
            coef_errors=(),
            saturations=(),
            certificate_sup=math.nan,
            duality_gap=math.nan,
            converged=False,
            wall_ms=(time.perf_counter() - start) * 1e3,
            error=f"{type(exc).__name__}: {exc}",
        )
    wall_ms = (time.perf_counter() - start) * 1e3
    match = match_atoms(result.element, truth, config.epsilon_match)
    eta = model.certificate(result.dual_variable)
    saturations = tuple(abs(eta.pair(a) - 1.0) for a in result.element.atoms)
    gap = result.objective - dual_objective(y, result.dual_variable, lam)
    return SweepRecord(
        lam=lam,
        noise_norm=norm_target,
        noise_fraction=frac,
        seed=seed,
        count=len(result.element),
        matched=match.matched,
        max_param_err=match.max_param_error,
        max_coef_err=match.max_coef_error,
        param_errors=match.param_errors,
        coef_errors=match.coef_errors,
        saturations=saturations,
        certificate_sup=result.certificate_sup,
        duality_gap=gap,
        converged=result.converged,
        wall_ms=wall_ms,
    )


def run_sweep(
    model: ForwardModel,
    truth: SparseElement,
    config: SweepConfig,
    options: Optional[SolveOptions] = None,
    threads: int = 1,
) -> Tuple[List[SweepRecord], SweepSummary]:
    """Solve every sweep cell and summarize recovery over the grid.

    Cells are independent; with threads > 1 they run concurrently and the
    records are gathered back into deterministic (lambda, fraction, seed)
    order, so the output stream does not depend on the thread count.
    """
    if len(truth) == 0:
        raise ValueError("ground truth must be nonempty")
    options = options or SolveOptions()
    y0 = model.apply_k(truth)
    cells = list(config.cells())

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(
                pool.map(
                    lambda c: _run_cell(model, truth, y0, config, options, *c),
                    cells,
                )
            )
    else:
        records = [
            _run_cell(model, truth, y0, config, options, *cell) for cell in cells
        ]

    gram_min = truth_gram_min_eigenvalue(model, truth)
    guaranteed = [
        r
        for r in records
        if config.in_guaranteed_region(r.lam, r.noise_fraction)
    ]
    summary = SweepSummary(
        alpha=config.alpha,
        lambda0=config.lambda0,
        gram_min_eigenvalue=gram_min,
        gram_warning=gram_min < 1e-8,
        guaranteed_all_matched=all(r.matched for r in guaranteed),
        any_cell_error=any(r.error is not None for r in records),
    )
    return records, summary
