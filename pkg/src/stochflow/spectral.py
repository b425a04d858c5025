"""Diagonalised state space: eigenbasis vectors, semigroup, splitting.

The linear operator is stored purely spectrally as its eigenvalue list
``mu_1 <= mu_2 <= ... <= mu_N`` (repeats allowed for multiplicity
studies). The semigroup acts mode-wise as ``exp(-mu_n t)``. When the
eigenvalues carry the sign pattern (-..-, +..+) with none equal to zero,
the space splits into the finite block spanned by negative-eigenvalue
modes and its complement, with mode-masking projections.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    BasisMismatchError,
    InvalidGridError,
    NotInMinusSubspaceError,
    ZeroEigenvalueError,
)

_MINUS_TOL = 1e-12

TAG_ABSTRACT = "abstract"
TAG_INTERVAL = "dirichlet-laplacian-interval"
TAG_BOX = "dirichlet-laplacian-box"


@dataclass(frozen=True)
class OperatorSpec:
    """Self-adjoint operator given by its ordered eigenvalues (1/time units).

    ``m`` counts the negative eigenvalues (the dimension of the finite
    block). Splitting operations demand a clean sign pattern and no zero
    eigenvalue; plain semigroup action works for any spectrum.
    """

    eigenvalues: tuple[float, ...]
    domain_tag: str = TAG_ABSTRACT
    basis_id: str = field(default="", compare=False)

    def __post_init__(self):
        ev = self.eigenvalues
        if len(ev) < 1:
            raise InvalidGridError("operator needs at least one eigenvalue")
        if not all(np.isfinite(e) for e in ev):
            raise InvalidGridError("eigenvalues must be finite")
        if any(b < a for a, b in zip(ev, ev[1:])):
            raise InvalidGridError("eigenvalues must be non-decreasing")
        if not self.basis_id:
            digest = hashlib.sha256(
                (self.domain_tag + ":" + ",".join(repr(e) for e in ev)).encode()
            ).hexdigest()[:12]
            object.__setattr__(self, "basis_id", digest)

    @property
    def dim(self) -> int:
        return len(self.eigenvalues)

    @property
    def m(self) -> int:
        """Number of negative eigenvalues (size of the finite block)."""
        return int(sum(1 for e in self.eigenvalues if e < 0))

    @property
    def mu(self) -> np.ndarray:
        return np.asarray(self.eigenvalues, dtype=float)

    @property
    def inverse_trace(self) -> float:
        """Diagnostic sum of 1/|mu_n| over the truncated spectrum."""
        return float(np.sum(1.0 / np.abs(self.mu[self.mu != 0.0])))

    def require_splitting(self) -> int:
        """Validate the hyperbolic sign pattern; returns m."""
        if any(e == 0.0 for e in self.eigenvalues):
            raise ZeroEigenvalueError(
                "splitting undefined: operator has a zero eigenvalue")
        return self.m

    def check_basis(self, other: "OperatorSpec") -> None:
        if self.basis_id != other.basis_id:
            raise BasisMismatchError(
                f"bases differ: {self.basis_id} vs {other.basis_id}")


def dirichlet_interval_operator(n_modes: int, viscosity: float = 0.5) -> OperatorSpec:
    """Eigenvalues ``viscosity * (n pi)^2`` of the Dirichlet Laplacian scaled
    by ``viscosity`` on the unit interval (viscosity 1/2 gives n^2 pi^2 / 2)."""
    if n_modes < 1 or viscosity <= 0:
        raise InvalidGridError("need n_modes >= 1 and viscosity > 0")
    ev = tuple(viscosity * (n * np.pi) ** 2 for n in range(1, n_modes + 1))
    return OperatorSpec(eigenvalues=ev, domain_tag=TAG_INTERVAL)


def dirichlet_box_operator(n_modes: int, dims: int, viscosity: float = 0.5) -> OperatorSpec:
    """First ``n_modes`` eigenvalues ``viscosity pi^2 sum(k_i^2)`` of the
    scaled Dirichlet Laplacian on the unit box in ``dims`` dimensions."""
    if n_modes < 1 or dims < 1 or viscosity <= 0:
        raise InvalidGridError("need n_modes, dims >= 1 and viscosity > 0")
    span = int(np.ceil(n_modes ** (1.0 / dims))) + 2
    grids = np.meshgrid(*([np.arange(1, span + 1)] * dims), indexing="ij")
    sq = sum(g.astype(float) ** 2 for g in grids).ravel()
    sq.sort()
    ev = tuple(viscosity * np.pi ** 2 * s for s in sq[:n_modes])
    return OperatorSpec(eigenvalues=ev, domain_tag=TAG_BOX)


@dataclass(frozen=True)
class ModeVec:
    """State vector in the operator's eigenbasis; Euclidean coordinates."""

    coords: np.ndarray
    basis: OperatorSpec

    def __post_init__(self):
        # always copy: freezing a caller's array in place would be a surprise
        c = np.array(self.coords, dtype=float)
        if c.shape != (self.basis.dim,):
            raise InvalidGridError(
                f"coords shape {c.shape} does not match basis dim {self.basis.dim}")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @property
    def basis_id(self) -> str:
        return self.basis.basis_id

    def norm(self) -> float:
        return float(np.linalg.norm(self.coords))

    def dot(self, other: "ModeVec") -> float:
        self.basis.check_basis(other.basis)
        return float(self.coords @ other.coords)

    def __add__(self, other: "ModeVec") -> "ModeVec":
        self.basis.check_basis(other.basis)
        return ModeVec(self.coords + other.coords, self.basis)

    def __sub__(self, other: "ModeVec") -> "ModeVec":
        self.basis.check_basis(other.basis)
        return ModeVec(self.coords - other.coords, self.basis)

    def __mul__(self, scalar: float) -> "ModeVec":
        return ModeVec(self.coords * float(scalar), self.basis)

    __rmul__ = __mul__

    def __neg__(self) -> "ModeVec":
        return ModeVec(-self.coords, self.basis)


def mode_vec(coords: Sequence[float], op: OperatorSpec) -> ModeVec:
    return ModeVec(np.asarray(coords, dtype=float), op)


def zero_vec(op: OperatorSpec) -> ModeVec:
    return ModeVec(np.zeros(op.dim), op)


def basis_vec(op: OperatorSpec, n: int) -> ModeVec:
    """Unit vector along mode ``n`` (zero-based)."""
    c = np.zeros(op.dim)
    c[n] = 1.0
    return ModeVec(c, op)


def semigroup_factors(op: OperatorSpec, t: float) -> np.ndarray:
    """Per-mode factors ``exp(-mu_n t)`` of the semigroup at time t >= 0."""
    if t < 0:
        raise InvalidGridError("semigroup defined for t >= 0 only")
    return np.exp(-op.mu * t)


def semigroup_apply(op: OperatorSpec, t: float, v: ModeVec) -> ModeVec:
    """Apply ``exp(-A t)`` mode-wise; exact semigroup law up to round-off."""
    op.check_basis(v.basis)
    return ModeVec(semigroup_factors(op, t) * v.coords, v.basis)


def _mask(op: OperatorSpec, sign: str) -> np.ndarray:
    m = op.require_splitting()
    mask = np.zeros(op.dim)
    if sign == "minus":
        mask[:m] = 1.0
    elif sign == "plus":
        mask[m:] = 1.0
    else:
        raise InvalidGridError(f"sign must be 'plus' or 'minus', got {sign!r}")
    return mask


def project(op: OperatorSpec, sign: str, v: ModeVec) -> ModeVec:
    """Projection onto the negative-eigenvalue block ('minus') or its
    complement ('plus'); the two projections sum to the identity exactly."""
    op.check_basis(v.basis)
    return ModeVec(_mask(op, sign) * v.coords, v.basis)


def semigroup_inverse_minus(op: OperatorSpec, t: float, v: ModeVec) -> ModeVec:
    """Inverse of the semigroup restricted to the finite negative block.

    Coordinates outside the block must vanish (tolerance 1e-12 relative);
    inside, the factor is ``exp(mu_n t)`` which decays since mu_n < 0.
    """
    op.check_basis(v.basis)
    if t < 0:
        raise InvalidGridError("defined for t >= 0 only")
    m = op.require_splitting()
    scale = max(1.0, float(np.linalg.norm(v.coords)))
    if np.any(np.abs(v.coords[m:]) > _MINUS_TOL * scale):
        raise NotInMinusSubspaceError(
            "vector has components outside the negative-eigenvalue block")
    out = np.zeros(op.dim)
    out[:m] = np.exp(op.mu[:m] * t) * v.coords[:m]
    return ModeVec(out, v.basis)
