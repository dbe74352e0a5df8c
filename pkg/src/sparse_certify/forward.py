"""Measurement operator, dual pairing, and closed-form certificate functions.

The measurement operator maps a sparse element to a vector of kernel samples
on the grid (one channel per kernel).  Its pre-adjoint turns a dual variable
p into a continuous certificate eta with closed-form value and first two
derivatives.  The dual pairing Phi(p, e) = (Ke, p) and its derivatives in the
atom parameters are what the primal insertion step, the dual feasibility
check and the non-degeneracy margins all consume.

All quantities live in the discretized geometry of the sample grid: the
inner product is h * sum over channels and samples, and every duality
identity below holds exactly (up to rounding) in that geometry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .domain import (
    BV_INDICATOR,
    PAIRED_WASSERSTEIN,
    RADON_TV,
    ExtremePoint,
    PairedDirac,
    SampleGrid,
    Setting,
    SignedDirac,
    SignedIndicator,
    SparseElement,
    torus_signed_difference,
)
from .kernels import Kernel


@dataclass(frozen=True)
class Observation:
    """Element of the discretized data space: one value row per channel."""

    grid: SampleGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        if v.shape[1] != self.grid.m:
            raise ValueError(f"expected {self.grid.m} samples, got {v.shape[1]}")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    def inner(self, other: "Observation") -> float:
        if self.values.shape != other.values.shape:
            raise ValueError("shape mismatch in inner product")
        return float(self.grid.h * np.sum(self.values * other.values))

    def norm(self) -> float:
        return math.sqrt(max(self.inner(self), 0.0))

    def scaled(self, t: float) -> "Observation":
        return Observation(self.grid, t * self.values)

    def plus(self, other: "Observation", scale: float = 1.0) -> "Observation":
        return Observation(self.grid, self.values + scale * other.values)

    @staticmethod
    def zeros(grid: SampleGrid, channels: int) -> "Observation":
        return Observation(grid, np.zeros((channels, grid.m)))


#: Dual variables share the data-space representation.
DualVariable = Observation


@dataclass(frozen=True)
class PairingDerivatives:
    """Gradient and Hessian of Phi(p, .) in the atom parameters.

    ``degenerate`` marks the kink of the paired setting (x == xbar), where
    the separation term is not differentiable.
    """

    gradient: np.ndarray
    hessian: np.ndarray
    degenerate: bool = False


@dataclass(frozen=True)
class ForwardModel:
    """Bundle of setting, sample grid and per-channel kernels."""

    setting: Setting
    grid: SampleGrid
    kernels: Tuple[Kernel, ...]

    def __post_init__(self):
        if len(self.kernels) != self.setting.channels:
            raise ValueError(
                f"{self.setting.variant} needs {self.setting.channels} "
                f"kernel(s), got {len(self.kernels)}"
            )
        if self.grid.periodic != self.setting.periodic:
            raise ValueError("grid periodicity does not match the setting")

    @property
    def channels(self) -> int:
        return self.setting.channels

    def zero_observation(self) -> Observation:
        return Observation.zeros(self.grid, self.channels)

    # -- forward operator ---------------------------------------------------

    def apply_k_atom(self, atom: ExtremePoint) -> np.ndarray:
        """Measurement of a single unit-coefficient atom, shape (channels, m)."""
        self._check_atom(atom)
        s = self.grid.points
        if isinstance(atom, SignedDirac):
            return atom.sign * self.kernels[0](atom.x - s)[None, :]
        if isinstance(atom, SignedIndicator):
            k = self.kernels[0]
            row = 0.5 * atom.sign * (
                k.antiderivative(atom.b - s) - k.antiderivative(atom.a - s)
            )
            return row[None, :]
        scale = atom.scale
        return np.stack(
            [
                scale * self.kernels[0](atom.x - s),
                scale * self.kernels[1](atom.xbar - s),
            ]
        )

    def apply_k(self, element: SparseElement) -> Observation:
        """Measurement K(element) = sum_i c_i K(atom_i)."""
        if element.setting != self.setting:
            raise ValueError("element setting does not match the model")
        values = np.zeros((self.channels, self.grid.m))
        for c, atom in zip(element.coefficients, element.atoms):
            values += c * self.apply_k_atom(atom)
        return Observation(self.grid, values)

    def apply_k_atom_gradient(self, atom: ExtremePoint) -> np.ndarray:
        """Parameter gradient of K(atom), shape (n_params, channels, m)."""
        self._check_atom(atom)
        s = self.grid.points
        if isinstance(atom, SignedDirac):
            return (atom.sign * self.kernels[0](atom.x - s, order=1))[None, None, :]
        if isinstance(atom, SignedIndicator):
            k = self.kernels[0]
            half = 0.5 * atom.sign
            da = -half * k(atom.a - s)
            db = half * k(atom.b - s)
            return np.stack([da[None, :], db[None, :]])
        delta = torus_signed_difference(atom.x, atom.xbar)
        tau = 1.0 if delta >= 0.0 else -1.0
        d = 2.0 + abs(delta)
        k1, k2 = self.kernels
        v1, v2 = k1(atom.x - s), k2(atom.xbar - s)
        d1, d2 = k1(atom.x - s, order=1), k2(atom.xbar - s, order=1)
        grad_x = np.stack([d1 / d - tau * v1 / d**2, -tau * v2 / d**2])
        grad_xbar = np.stack([tau * v1 / d**2, d2 / d + tau * v2 / d**2])
        return np.stack([grad_x, grad_xbar])

    # -- dual pairing -------------------------------------------------------

    def pairing(self, p: Observation, atom: ExtremePoint) -> float:
        """Phi(p, atom) = (K atom, p) computed through the forward operator."""
        return float(
            self.grid.h * np.sum(self.apply_k_atom(atom) * p.values)
        )

    def certificate(self, p: Observation) -> "CertificateFunction":
        return CertificateFunction(self, p)

    def pairing_derivatives(
        self, p: Observation, atom: ExtremePoint
    ) -> PairingDerivatives:
        """Closed-form parameter gradient and Hessian of Phi(p, .) at atom."""
        eta = self.certificate(p)
        if isinstance(atom, SignedDirac):
            g = atom.sign * eta.value(atom.x, order=1)
            h = atom.sign * eta.value(atom.x, order=2)
            return PairingDerivatives(np.array([g]), np.array([[h]]))
        if isinstance(atom, SignedIndicator):
            half = 0.5 * atom.sign
            grad = np.array(
                [-half * eta.value(atom.a), half * eta.value(atom.b)]
            )
            hess = np.diag(
                [-half * eta.value(atom.a, order=1), half * eta.value(atom.b, order=1)]
            )
            return PairingDerivatives(grad, hess)
        return self._paired_derivatives(eta, atom)

    def _paired_derivatives(self, eta, atom: PairedDirac) -> PairingDerivatives:
        delta = torus_signed_difference(atom.x, atom.xbar)
        degenerate = delta == 0.0
        tau = 1.0 if delta >= 0.0 else -1.0
        d = 2.0 + abs(delta)
        phi = eta.value(atom.x, channel=0)
        phi1 = eta.value(atom.x, order=1, channel=0)
        phi2 = eta.value(atom.x, order=2, channel=0)
        psi = eta.value(atom.xbar, channel=1)
        psi1 = eta.value(atom.xbar, order=1, channel=1)
        psi2 = eta.value(atom.xbar, order=2, channel=1)
        s = phi + psi
        grad = np.array(
            [phi1 / d - tau * s / d**2, psi1 / d + tau * s / d**2]
        )
        h_xx = phi2 / d - 2.0 * tau * phi1 / d**2 + 2.0 * s / d**3
        h_bb = psi2 / d + 2.0 * tau * psi1 / d**2 + 2.0 * s / d**3
        h_xb = tau * (phi1 - psi1) / d**2 - 2.0 * s / d**3
        hess = np.array([[h_xx, h_xb], [h_xb, h_bb]])
        return PairingDerivatives(grad, hess, degenerate=degenerate)

    # -- safety bounds ------------------------------------------------------

    def lipschitz_bound(self) -> float:
        """Upper bound L with ||K e1 - K e2|| <= L * atom_distance(e1, e2).

        Derived from sup norms of the kernels and their derivatives (the
        grid norm is dominated by the sup norm); sup norms are estimated on
        a fine grid with 5% headroom.
        """
        t = np.linspace(0.0, 1.0, 4097)
        sup0 = [float(np.max(np.abs(k(t)))) for k in self.kernels]
        sup1 = [float(np.max(np.abs(k(t, order=1)))) for k in self.kernels]
        if self.setting.variant == RADON_TV:
            bound = sup1[0]
        elif self.setting.variant == BV_INDICATOR:
            bound = 0.5 * sup0[0]
        else:
            bound = max(
                0.5 * sup1[0] + 0.25 * (sup0[0] + sup0[1]),
                0.5 * sup1[1] + 0.25 * (sup0[0] + sup0[1]),
            )
        return 1.05 * bound

    def operator_norm_estimate(self) -> float:
        """Estimate of sup over atoms of ||K atom||, used to scale noise caps."""
        t = np.linspace(0.0, 1.0, 2049)
        norms = []
        for k in self.kernels:
            vals = k(t - 0.5)
            norms.append(math.sqrt(float(np.mean(vals**2))))
        if self.setting.variant == RADON_TV:
            return norms[0]
        if self.setting.variant == BV_INDICATOR:
            # worst case: indicator spanning the whole margin box
            k = self.kernels[0]
            width = 1.0 - 2.0 * self.setting.margin
            return 0.5 * width * float(np.max(np.abs(k(t - 0.5))))
        return 0.5 * math.hypot(norms[0], norms[1])

    def _check_atom(self, atom: ExtremePoint) -> None:
        if atom.variant != self.setting.variant:
            raise ValueError(
                f"atom variant {atom.variant} does not match "
                f"setting {self.setting.variant}"
            )


class CertificateFunction:
    """Closed-form certificate eta = K* p with derivatives and primitives.

    For the paired setting the two channels are the pair (phi, psi).  The
    atom pairing computed here agrees with ``ForwardModel.pairing`` (which
    goes through the forward operator) to rounding accuracy; tests pin the
    agreement at 1e-12.
    """

    def __init__(self, model: ForwardModel, p: Observation):
        if p.values.shape != (model.channels, model.grid.m):
            raise ValueError("dual variable shape does not match the model")
        self.model = model
        self.p = p

    def value(self, t, order: int = 0, channel: int = 0):
        """eta_channel(t) or one of its first two derivatives."""
        kernel = self.model.kernels[channel]
        s = self.model.grid.points
        t_arr = np.asarray(t, dtype=float)
        diff = t_arr[..., None] - s
        vals = kernel(diff.ravel(), order=order).reshape(diff.shape)
        out = self.model.grid.h * vals @ self.p.values[channel]
        return out if out.ndim else float(out)

    def primitive(self, t, channel: int = 0):
        """Primitive P(t) = integral of eta_channel from 0 to t."""
        kernel = self.model.kernels[channel]
        s = self.model.grid.points
        t_arr = np.asarray(t, dtype=float)
        diff = t_arr[..., None] - s
        anti = kernel.antiderivative(diff.ravel()).reshape(diff.shape)
        base = kernel.antiderivative(-s)
        out = self.model.grid.h * (anti - base) @ self.p.values[channel]
        return out if out.ndim else float(out)

    def pair(self, atom: ExtremePoint) -> float:
        """<eta, atom> computed from the certificate side."""
        self.model._check_atom(atom)
        if isinstance(atom, SignedDirac):
            return atom.sign * self.value(atom.x)
        if isinstance(atom, SignedIndicator):
            return 0.5 * atom.sign * (
                self.primitive(atom.b) - self.primitive(atom.a)
            )
        scale = atom.scale
        return scale * (
            self.value(atom.x, channel=0) + self.value(atom.xbar, channel=1)
        )
