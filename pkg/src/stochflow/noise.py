"""Two-sided multi-mode Wiener paths and the shift dynamics on them.

A path stores i.i.d. Gaussian cell increments on a uniform grid covering
``[-t_back, t_fwd]``. Shifting re-anchors the origin on the grid without
touching the stored increments, so shift composition is exact and every
downstream computation that consumes increments is reproducible bitwise.

Negative-time and positive-time increments come from two independently
seeded streams: extending the forward window never perturbs draws already
made on either side.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import (
    GridMisalignedError,
    InvalidGridError,
    OutOfWindowError,
    TailNotNegligibleError,
)

_PATH_MAGIC = b"SFPATH01"

#: Relative slack accepted when snapping a duration to the grid.
_ALIGN_RTOL = 1e-9

KIND_DIAGONAL = "cylindrical-with-amplitudes"
KIND_MATRIX = "additive-B0"


def _aligned_steps(t: float, h: float, what: str) -> int:
    """Number of grid cells in duration ``t``; rejects misaligned times."""
    k = round(t / h)
    if abs(t - k * h) > _ALIGN_RTOL * max(1.0, abs(t)):
        raise GridMisalignedError(
            f"{what}={t!r} is not a multiple of the grid step h={h!r}")
    return int(k)


@dataclass(frozen=True)
class CovarianceSpec:
    """Truncated noise covariance: per-mode amplitudes or an explicit map.

    ``sigma`` holds the per-mode diffusion amplitudes of the driving
    cylindrical noise. For ``kind == "additive-B0"`` the field ``matrix``
    carries the (state_modes x noise_modes) map applied to increments;
    ``sigma`` then records the column amplitudes for diagnostics.
    ``tail_bound`` records the mass of the amplitudes dropped by the
    truncation, so tests can assert it below a tolerance.
    """

    mode_count: int
    sigma: tuple[float, ...]
    kind: str = KIND_DIAGONAL
    matrix: Optional[np.ndarray] = None
    tail_bound: float = 0.0

    def __post_init__(self):
        if self.mode_count < 1:
            raise InvalidGridError("mode_count must be >= 1")
        if len(self.sigma) != self.mode_count:
            raise InvalidGridError("sigma length must equal mode_count")
        if not all(np.isfinite(s) for s in self.sigma):
            raise InvalidGridError("sigma entries must be finite")
        if self.kind not in (KIND_DIAGONAL, KIND_MATRIX):
            raise InvalidGridError(f"unknown covariance kind {self.kind!r}")
        if self.kind == KIND_MATRIX:
            if self.matrix is None:
                raise InvalidGridError("additive-B0 requires a matrix")
            m = np.asarray(self.matrix, dtype=float)
            if m.ndim != 2 or m.shape[1] != self.mode_count:
                raise InvalidGridError(
                    "matrix must have shape (state_modes, mode_count)")
            object.__setattr__(self, "matrix", m)

    @classmethod
    def diagonal(cls, sigma: Sequence[float], tail_bound: float = 0.0) -> "CovarianceSpec":
        sig = tuple(float(s) for s in sigma)
        return cls(mode_count=len(sig), sigma=sig, tail_bound=tail_bound)

    @classmethod
    def from_matrix(cls, b0: np.ndarray, tail_bound: float = 0.0) -> "CovarianceSpec":
        b0 = np.asarray(b0, dtype=float)
        sig = tuple(float(s) for s in np.linalg.norm(b0, axis=0))
        return cls(mode_count=b0.shape[1], sigma=sig, kind=KIND_MATRIX,
                   matrix=b0, tail_bound=tail_bound)

    def apply(self, dw: np.ndarray) -> np.ndarray:
        """Map raw increments (``..., mode_count``) into state modes."""
        if self.kind == KIND_DIAGONAL:
            return dw * np.asarray(self.sigma)
        return dw @ self.matrix.T


@dataclass(frozen=True)
class WienerPath:
    """Discretised two-sided Brownian path with a movable grid origin.

    ``increments[i]`` is the per-mode increment over the cell
    ``[(i - n_back) h, (i - n_back + 1) h]`` relative to the current
    origin. Values are prefix sums of increments, so ``value(0) == 0``
    after any shift by construction.
    """

    h: float
    increments: np.ndarray  # (n_cells, mode_count), read-only
    n_back: int
    anchor: float = 0.0
    seed: Optional[int] = None

    def __post_init__(self):
        if self.h <= 0:
            raise InvalidGridError("grid step h must be positive")
        if self.increments.ndim != 2 or self.increments.shape[0] < 1:
            raise InvalidGridError("path window is empty")
        if not (0 <= self.n_back <= self.increments.shape[0]):
            raise InvalidGridError("origin outside stored window")
        self.increments.setflags(write=False)

    # -- geometry ------------------------------------------------------

    @property
    def mode_count(self) -> int:
        return self.increments.shape[1]

    @property
    def n_cells(self) -> int:
        return self.increments.shape[0]

    @property
    def n_fwd(self) -> int:
        return self.n_cells - self.n_back

    @property
    def t_min(self) -> float:
        return -self.n_back * self.h

    @property
    def t_max(self) -> float:
        return self.n_fwd * self.h

    def steps(self, t: float, what: str = "t") -> int:
        return _aligned_steps(t, self.h, what)

    def _node(self, t: float, what: str = "t") -> int:
        """Grid-node index (0..n_cells) of an aligned time inside the window."""
        k = self.steps(t, what) + self.n_back
        if not (0 <= k <= self.n_cells):
            raise OutOfWindowError(
                f"{what}={t!r} outside stored window [{self.t_min}, {self.t_max}]")
        return k

    # -- values ----------------------------------------------------------

    def value(self, t: float) -> np.ndarray:
        """Path value W(t) (per mode) at a grid-aligned time."""
        k = self._node(t)
        if k >= self.n_back:
            return self.increments[self.n_back:k].sum(axis=0)
        return -self.increments[k:self.n_back].sum(axis=0)

    def increment(self, a: float, b: float) -> np.ndarray:
        """Per-mode increment W(b) - W(a) over grid-aligned ``[a, b]``."""
        ka, kb = self._node(a, "a"), self._node(b, "b")
        if kb < ka:
            return -self.increments[kb:ka].sum(axis=0)
        return self.increments[ka:kb].sum(axis=0)

    def cells(self, a: float, b: float) -> np.ndarray:
        """Raw increment rows over ``[a, b)``; view, do not mutate."""
        ka, kb = self._node(a, "a"), self._node(b, "b")
        if kb < ka:
            raise InvalidGridError("cells() needs a <= b")
        return self.increments[ka:kb]

    def cell_row(self, j: int) -> int:
        """Storage row of the cell ``[j h, (j+1) h]``; bounds-checked."""
        r = self.n_back + j
        if not (0 <= r < self.n_cells):
            raise OutOfWindowError(f"step {j} outside stored window")
        return r

    # -- dynamics ----------------------------------------------------------

    def shift(self, t: float) -> "WienerPath":
        """Re-anchor at time ``t``: the Wiener shift on stored increments.

        The shifted path satisfies value(s) = old(t+s) - old(t) for every
        grid point in range; composition of shifts is exact.
        """
        k = self.steps(t)
        nb = self.n_back + k
        if not (0 <= nb <= self.n_cells):
            raise OutOfWindowError(
                f"shift by {t!r} leaves stored window [{self.t_min}, {self.t_max}]")
        return WienerPath(h=self.h, increments=self.increments, n_back=nb,
                          anchor=self.anchor + k * self.h, seed=self.seed)

    # -- serialization -----------------------------------------------------

    def to_bytes(self) -> bytes:
        head = struct.pack(
            "<8sIIdqqdq", _PATH_MAGIC, 1, self.mode_count, self.h,
            self.n_back, self.n_fwd, self.anchor,
            -1 if self.seed is None else self.seed)
        body = np.ascontiguousarray(self.increments, dtype="<f8").tobytes()
        return head + body

    @classmethod
    def from_bytes(cls, blob: bytes) -> "WienerPath":
        head_size = struct.calcsize("<8sIIdqqdq")
        magic, version, modes, h, n_back, n_fwd, anchor, seed = struct.unpack(
            "<8sIIdqqdq", blob[:head_size])
        if magic != _PATH_MAGIC or version != 1:
            raise InvalidGridError("not a stochflow path record")
        n = n_back + n_fwd
        inc = np.frombuffer(blob, dtype="<f8", offset=head_size,
                            count=n * modes).reshape(n, modes).copy()
        return cls(h=h, increments=inc, n_back=n_back, anchor=anchor,
                   seed=None if seed < 0 else seed)


def sample_path(cov: CovarianceSpec, t_back: float, t_fwd: float,
                h: float, seed: int) -> WienerPath:
    """Draw a fresh two-sided path with i.i.d. N(0, h) increments per mode.

    Negative and positive time use independent child streams of ``seed``,
    each drawn outward from the origin, so enlarging either side of the
    window reproduces all previously generated increments.
    """
    if h <= 0:
        raise InvalidGridError("grid step h must be positive")
    if t_back < 0 or t_fwd < 0:
        raise InvalidGridError("window durations must be non-negative")
    n_back = _aligned_steps(t_back, h, "t_back")
    n_fwd = _aligned_steps(t_fwd, h, "t_fwd")
    if n_back + n_fwd < 1:
        raise InvalidGridError("window is empty")

    neg_ss, pos_ss = np.random.SeedSequence(seed).spawn(2)
    root_h = np.sqrt(h)
    neg = np.random.Generator(np.random.PCG64(neg_ss)).standard_normal(
        (n_back, cov.mode_count)) * root_h
    pos = np.random.Generator(np.random.PCG64(pos_ss)).standard_normal(
        (n_fwd, cov.mode_count)) * root_h
    # Negative-side row 0 is the cell adjacent to the origin; flip to storage
    # order so extending t_back only appends rows on the left.
    inc = np.concatenate([neg[::-1], pos], axis=0)
    return WienerPath(h=h, increments=inc, n_back=n_back, seed=seed)


def shift(path: WienerPath, t: float) -> WienerPath:
    """Module-level alias for :meth:`WienerPath.shift`."""
    return path.shift(t)


def coarsen(path: WienerPath, factor: int) -> WienerPath:
    """Merge ``factor`` adjacent cells; the coarse path shares the same
    Brownian values at common grid nodes (useful for h-refinement studies
    on a fixed realisation)."""
    if factor < 1:
        raise InvalidGridError("factor must be >= 1")
    if path.n_back % factor or path.n_fwd % factor:
        raise InvalidGridError("window not divisible by coarsening factor")
    n = path.n_cells // factor
    inc = path.increments.reshape(n, factor, path.mode_count).sum(axis=1)
    return WienerPath(h=path.h * factor, increments=inc,
                      n_back=path.n_back // factor, anchor=path.anchor,
                      seed=path.seed)


@dataclass(frozen=True)
class ExpWeight:
    """Exponential weight ``w(s) = exp(rate * s)`` on ``[lower, upper]``.

    Either bound may be infinite provided the weight decays on that side
    (rate > 0 for lower = -inf, rate < 0 for upper = +inf).
    """

    rate: float
    lower: float
    upper: float

    def __post_init__(self):
        if self.lower >= self.upper:
            raise InvalidGridError("weight interval is empty")
        if np.isinf(self.lower) and self.rate <= 0:
            raise TailNotNegligibleError(
                "weight does not decay toward -inf (needs rate > 0)")
        if np.isinf(self.upper) and self.rate >= 0:
            raise TailNotNegligibleError(
                "weight does not decay toward +inf (needs rate < 0)")


class IntegralResult(NamedTuple):
    value: float
    tail_bound: float


def weighted_integral(path: WienerPath, mode: int, weight: ExpWeight,
                      tail_tol: float = 1e-10) -> IntegralResult:
    """Left-point Riemann-Ito sum of ``exp(rate s) dW_mode(s)``.

    Infinite bounds are truncated where the weight falls below
    ``tail_tol``; the reported ``tail_bound`` is the integral of the
    weight over the dropped tail. Raises if the stored window cannot
    reach the truncation point.
    """
    h, rate = path.h, weight.rate
    tail_bound = 0.0

    lo = weight.lower
    if np.isinf(lo):
        cut = np.log(tail_tol) / rate  # negative: where weight == tail_tol
        lo = np.floor(cut / h) * h
        if lo < path.t_min:
            if np.exp(rate * path.t_min) > tail_tol:
                raise TailNotNegligibleError(
                    f"window reaches only {path.t_min}, weight there "
                    f"{np.exp(rate * path.t_min):.3e} > tail_tol {tail_tol:.3e}")
            lo = path.t_min
        tail_bound += np.exp(rate * lo) / abs(rate)

    hi = weight.upper
    if np.isinf(hi):
        cut = np.log(tail_tol) / rate  # positive: where weight == tail_tol
        hi = np.ceil(cut / h) * h
        if hi > path.t_max:
            if np.exp(rate * path.t_max) > tail_tol:
                raise TailNotNegligibleError(
                    f"window reaches only {path.t_max}, weight there "
                    f"{np.exp(rate * path.t_max):.3e} > tail_tol {tail_tol:.3e}")
            hi = path.t_max
        tail_bound += np.exp(rate * hi) / abs(rate)

    ka, kb = path._node(lo, "lower"), path._node(hi, "upper")
    if kb <= ka:
        return IntegralResult(0.0, tail_bound)
    if not (0 <= mode < path.mode_count):
        raise InvalidGridError(f"mode {mode} out of range")
    left_points = (np.arange(ka, kb) - path.n_back) * h
    w = np.exp(rate * left_points)
    value = float(w @ path.increments[ka:kb, mode])
    return IntegralResult(value, tail_bound)
