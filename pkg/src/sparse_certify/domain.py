"""Core data model: settings, extreme-point atoms, sparse elements, sample grids.

Three problem settings are supported, each with its own atom family:

* ``radon_tv`` -- signed Dirac spikes on the torus [0, 1).
* ``bv_indicator`` -- signed interval indicators sigma * (1/2) * 1_[a,b] on
  (0, 1), with both endpoints inside the margin box [eps_bar, 1 - eps_bar].
* ``paired_wasserstein`` -- pairs of rescaled Diracs
  (delta_x, delta_xbar) / (2 + d_T(x, xbar)) on the torus.

Every atom has unit regularizer value, so the regularizer of a conic
combination is exactly the sum of its coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Tuple, Union

import numpy as np

RADON_TV = "radon_tv"
BV_INDICATOR = "bv_indicator"
PAIRED_WASSERSTEIN = "paired_wasserstein"

VARIANTS = (RADON_TV, BV_INDICATOR, PAIRED_WASSERSTEIN)

#: Coefficients at or below this threshold are dropped at element construction.
PRUNE_THRESHOLD = 1e-10


def wrap_torus(x: float) -> float:
    """Map a real coordinate to the canonical torus chart [0, 1)."""
    return float(x - math.floor(x))


def torus_distance(x1: float, x2: float) -> float:
    """Geodesic distance on the unit torus."""
    d = abs(x1 - x2) % 1.0
    return min(d, 1.0 - d)


def torus_signed_difference(x1: float, x2: float) -> float:
    """Signed representative of x1 - x2 in [-1/2, 1/2)."""
    return (x1 - x2 + 0.5) % 1.0 - 0.5


@dataclass(frozen=True)
class Setting:
    """Problem setting: atom family plus its family-level parameters.

    ``margin`` is the boundary margin eps_bar of the indicator setting and is
    required to lie strictly inside (0, 1/2); it is ignored by the other two
    variants.
    """

    variant: str
    margin: float = 0.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown setting variant: {self.variant!r}")
        if self.variant == BV_INDICATOR:
            if not (0.0 < self.margin < 0.5):
                raise ValueError(
                    f"indicator margin must lie in (0, 1/2), got {self.margin}"
                )
        elif self.margin != 0.0:
            raise ValueError(f"margin is only meaningful for {BV_INDICATOR}")

    @property
    def channels(self) -> int:
        return 2 if self.variant == PAIRED_WASSERSTEIN else 1

    @property
    def periodic(self) -> bool:
        return self.variant != BV_INDICATOR


@dataclass(frozen=True)
class SignedDirac:
    """Signed spike sigma * delta_x with x on the torus."""

    x: float
    sign: int

    variant = RADON_TV

    def __post_init__(self):
        if self.sign not in (-1, 1):
            raise ValueError(f"sign must be +1 or -1, got {self.sign}")
        object.__setattr__(self, "x", wrap_torus(self.x))

    @property
    def params(self) -> Tuple[float, ...]:
        return (self.x,)


@dataclass(frozen=True)
class SignedIndicator:
    """Signed rescaled indicator sigma * (1/2) * 1_[a,b], a < b."""

    a: float
    b: float
    sign: int

    variant = BV_INDICATOR

    def __post_init__(self):
        if self.sign not in (-1, 1):
            raise ValueError(f"sign must be +1 or -1, got {self.sign}")
        if not self.a < self.b:
            raise ValueError(f"need a < b, got a={self.a}, b={self.b}")

    def validate_margin(self, margin: float) -> None:
        if self.a < margin - 1e-12 or self.b > 1.0 - margin + 1e-12:
            raise ValueError(
                f"endpoints ({self.a}, {self.b}) outside margin box "
                f"[{margin}, {1.0 - margin}]"
            )

    @property
    def params(self) -> Tuple[float, ...]:
        return (self.a, self.b)


@dataclass(frozen=True)
class PairedDirac:
    """Pair (delta_x, delta_xbar) / (2 + d_T(x, xbar)) of rescaled spikes."""

    x: float
    xbar: float

    variant = PAIRED_WASSERSTEIN

    def __post_init__(self):
        object.__setattr__(self, "x", wrap_torus(self.x))
        object.__setattr__(self, "xbar", wrap_torus(self.xbar))

    @property
    def separation(self) -> float:
        return torus_distance(self.x, self.xbar)

    @property
    def scale(self) -> float:
        """Common rescaling factor 1 / (2 + d_T(x, xbar))."""
        return 1.0 / (2.0 + self.separation)

    @property
    def params(self) -> Tuple[float, ...]:
        return (self.x, self.xbar)


ExtremePoint = Union[SignedDirac, SignedIndicator, PairedDirac]


def atom_sign(atom: ExtremePoint) -> int:
    """Sign of a signed atom; paired atoms are unsigned and report +1."""
    return getattr(atom, "sign", 1)


def atom_distance(e1: ExtremePoint, e2: ExtremePoint) -> float:
    """Coordinate surrogate for the weak* distance between two atoms.

    Same-variant, same-sign atoms are compared by coordinate distance
    (torus distance for spikes, |a1-a2| + |b1-b2| for indicators, sum of
    torus distances for pairs).  Opposite signs are never weak*-close, so
    they are reported as infinitely far apart.  Mixing variants is an error.
    """
    if e1.variant != e2.variant:
        raise ValueError(f"variant mismatch: {e1.variant} vs {e2.variant}")
    if atom_sign(e1) != atom_sign(e2):
        return math.inf
    if e1.variant == RADON_TV:
        return torus_distance(e1.x, e2.x)
    if e1.variant == BV_INDICATOR:
        return abs(e1.a - e2.a) + abs(e1.b - e2.b)
    return torus_distance(e1.x, e2.x) + torus_distance(e1.xbar, e2.xbar)


@dataclass(frozen=True)
class SparseElement:
    """Finite conic combination sum_i c_i * atom_i with all c_i > 0.

    Atoms with coefficients at or below the prune threshold are removed at
    construction, so a stored element always has strictly positive weights.
    """

    setting: Setting
    atoms: Tuple[ExtremePoint, ...] = ()
    coefficients: Tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.atoms) != len(self.coefficients):
            raise ValueError("atoms and coefficients must have equal length")
        kept_atoms = []
        kept_coeffs = []
        for atom, c in zip(self.atoms, self.coefficients):
            if atom.variant != self.setting.variant:
                raise ValueError(
                    f"atom variant {atom.variant} does not match "
                    f"setting {self.setting.variant}"
                )
            if atom.variant == BV_INDICATOR:
                atom.validate_margin(self.setting.margin)
            if c < 0 and c < -PRUNE_THRESHOLD:
                raise ValueError(f"negative coefficient {c}")
            if c > PRUNE_THRESHOLD:
                kept_atoms.append(atom)
                kept_coeffs.append(float(c))
        object.__setattr__(self, "atoms", tuple(kept_atoms))
        object.__setattr__(self, "coefficients", tuple(kept_coeffs))

    def __len__(self) -> int:
        return len(self.atoms)

    @property
    def coefficient_array(self) -> np.ndarray:
        return np.asarray(self.coefficients, dtype=float)


def g_value(element: SparseElement) -> float:
    """Regularizer value of a sparse element.

    Each atom has unit regularizer value and the regularizer is positively
    1-homogeneous, so this is exactly the coefficient sum (0 for the empty
    element).
    """
    return float(sum(element.coefficients))


@dataclass(frozen=True)
class SampleGrid:
    """Uniform sample grid with quadrature weight h = 1/m.

    Torus grids sample at j/m; unit-interval grids sample at midpoints
    (j + 1/2)/m.  The discrete inner product is (y, z) = h * sum_j y_j z_j
    summed over all channels.
    """

    m: int
    periodic: bool = True

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"grid size must be >= 1, got {self.m}")

    @property
    def h(self) -> float:
        return 1.0 / self.m

    @property
    def points(self) -> np.ndarray:
        j = np.arange(self.m, dtype=float)
        if self.periodic:
            return j / self.m
        return (j + 0.5) / self.m

    @staticmethod
    def for_setting(setting: Setting, m: int) -> "SampleGrid":
        return SampleGrid(m=m, periodic=setting.periodic)
