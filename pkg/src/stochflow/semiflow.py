"""Cocycle integration for the four semilinear model families.

The time stepper is exponential Euler on the mode coordinates: the
linear semigroup is applied exactly, the drift nonlinearity enters
through the exact integrated factor ``(1 - exp(-mu h))/mu``, and the
noise term is, per coupling,

* additive: an increment with the exact per-mode stationary-convolution
  variance, driven by the stored path increments of the cell,
* diagonal multiplicative: ``exp(-mu h) (sigma u dW)`` in the Ito
  convention.

Because each grid cell's stochastic contribution is a deterministic
function of that cell's stored increments, the cocycle identity (state
and Jacobian) holds on the grid to round-off for every seed.

Pointwise nonlinearities (composition, the dissipative reaction term,
and the conservative Burgers advection) are evaluated by sine
collocation on the unit interval with a dealiased collocation grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import BlowUpError, GridMisalignedError, InvalidGridError
from .noise import CovarianceSpec, WienerPath, KIND_DIAGONAL
from .spectral import ModeVec, OperatorSpec, TAG_INTERVAL

COUPLING_NONE = "none"
COUPLING_ADDITIVE = "additive"
COUPLING_DIAGONAL = "diagonal-multiplicative"

KIND_ZERO = "zero"
KIND_BOUNDED = "globally-bounded-lipschitz"
KIND_MODE = "mode-callable"
KIND_POINTWISE = "pointwise-composition"
KIND_DISSIPATIVE = "dissipative-reaction"
KIND_BURGERS = "burgers-advection"

_POINTWISE_KINDS = (KIND_POINTWISE, KIND_DISSIPATIVE, KIND_BURGERS)


@dataclass(frozen=True)
class NonlinearitySpec:
    """Drift nonlinearity F applied to mode coordinates.

    Mode-space kinds carry callables on coordinate arrays; pointwise
    kinds carry scalar functions applied at collocation points. For the
    globally bounded Lipschitz kind the certified constants ``sup_bound``
    and ``lipschitz`` are recorded (and spot-checked by tests); the plain
    mode-callable kind makes no boundedness claim.
    """

    kind: str
    func: Optional[Callable] = None
    dfunc: Optional[Callable] = None
    scalar: Optional[Callable] = None
    scalar_prime: Optional[Callable] = None
    sup_bound: Optional[float] = None
    lipschitz: Optional[float] = None
    alpha: Optional[float] = None
    smoothness: tuple[int, float] = (1, 1.0)
    subcritical: Optional[bool] = None

    @property
    def differentiable(self) -> bool:
        if self.kind in (KIND_BOUNDED, KIND_MODE):
            return self.dfunc is not None
        if self.kind == KIND_POINTWISE:
            return self.scalar_prime is not None
        return True


def zero_drift() -> NonlinearitySpec:
    return NonlinearitySpec(kind=KIND_ZERO, sup_bound=0.0, lipschitz=0.0)


def bounded_lipschitz_drift(func, dfunc, sup_bound: float, lipschitz: float,
                            smoothness=(1, 1.0)) -> NonlinearitySpec:
    if not (np.isfinite(sup_bound) and np.isfinite(lipschitz)):
        raise InvalidGridError("sup_bound and lipschitz must be finite")
    return NonlinearitySpec(kind=KIND_BOUNDED, func=func, dfunc=dfunc,
                            sup_bound=float(sup_bound),
                            lipschitz=float(lipschitz), smoothness=smoothness)


def mode_callable_drift(func, dfunc, smoothness=(1, 1.0)) -> NonlinearitySpec:
    """General smooth drift in mode coordinates, no boundedness certified."""
    return NonlinearitySpec(kind=KIND_MODE, func=func, dfunc=dfunc,
                            smoothness=smoothness)


def pointwise_drift(scalar, scalar_prime, smoothness=(1, 1.0)) -> NonlinearitySpec:
    """Scalar function composed with the field at collocation points."""
    return NonlinearitySpec(kind=KIND_POINTWISE, scalar=scalar,
                            scalar_prime=scalar_prime, smoothness=smoothness)


def dissipative_reaction_drift(alpha: float, dim: int = 1) -> NonlinearitySpec:
    """Reaction term ``u (1 - |u|^alpha)``; records the alpha < 4/dim flag."""
    if alpha <= 0:
        raise InvalidGridError("alpha must be positive")
    return NonlinearitySpec(kind=KIND_DISSIPATIVE, alpha=float(alpha),
                            subcritical=bool(alpha < 4.0 / dim))


def burgers_drift() -> NonlinearitySpec:
    """Advection ``-u du/dxi`` in conservative form ``-(u^2)'/2``."""
    return NonlinearitySpec(kind=KIND_BURGERS, smoothness=(1, 1.0))


@dataclass(frozen=True)
class SemiflowModel:
    """Operator + drift + noise coupling + stepper configuration.

    Jacobians are handled as dense N x N matrices; ``max_dim`` caps the
    truncation at desk scale (raise it explicitly for larger studies).
    """

    operator: OperatorSpec
    drift: NonlinearitySpec
    coupling: str = COUPLING_NONE
    covariance: Optional[CovarianceSpec] = None
    h: float = 1e-2
    collocation: Optional[int] = None
    state_cap: float = 1e6
    max_dim: int = 64

    def __post_init__(self):
        if self.h <= 0:
            raise InvalidGridError("step h must be positive")
        n = self.operator.dim
        if n > self.max_dim:
            raise InvalidGridError(
                f"{n} modes exceed the dense-Jacobian cap max_dim={self.max_dim}")
        if self.coupling not in (COUPLING_NONE, COUPLING_ADDITIVE, COUPLING_DIAGONAL):
            raise InvalidGridError(f"unknown coupling {self.coupling!r}")
        if self.coupling != COUPLING_NONE and self.covariance is None:
            raise InvalidGridError("noise coupling requires a covariance spec")
        if self.coupling == COUPLING_DIAGONAL:
            if (self.covariance.kind != KIND_DIAGONAL
                    or self.covariance.mode_count != n):
                raise InvalidGridError(
                    "diagonal-multiplicative noise needs one amplitude per mode")
        if self.coupling == COUPLING_ADDITIVE:
            if (self.covariance.kind == KIND_DIAGONAL
                    and self.covariance.mode_count != n):
                raise InvalidGridError(
                    "diagonal additive noise needs one amplitude per mode")
            if (self.covariance.kind != KIND_DIAGONAL
                    and self.covariance.matrix.shape[0] != n):
                raise InvalidGridError("B0 row count must match operator dim")
        if self.drift.kind in _POINTWISE_KINDS:
            if self.operator.domain_tag != TAG_INTERVAL:
                raise InvalidGridError(
                    "pointwise nonlinearities need the interval eigenbasis")
            min_m = int(np.ceil(1.5 * n))
            m = self.collocation if self.collocation is not None else max(2 * n, min_m)
            if self.drift.kind == KIND_BURGERS and m < min_m:
                raise InvalidGridError(
                    f"collocation {m} < dealiasing minimum {min_m}")
            object.__setattr__(self, "collocation", m)

    @property
    def dim(self) -> int:
        return self.operator.dim

    def stepper(self) -> "ExponentialEuler":
        st = _STEPPERS.get(id(self))
        if st is None or st.model is not self:
            st = ExponentialEuler(self)
            _STEPPERS[id(self)] = st
        return st


# Cache keyed by model identity; models are frozen so this is safe.
_STEPPERS: dict[int, "ExponentialEuler"] = {}


class ExponentialEuler:
    """Precomputed one-step maps for state and tangent propagation."""

    def __init__(self, model: SemiflowModel):
        self.model = model
        mu = model.operator.mu
        h = model.h
        self.h = h
        self.decay = np.exp(-mu * h)
        # integral of the semigroup over one step, exact mu -> 0 limit
        with np.errstate(divide="ignore", invalid="ignore"):
            phi = -np.expm1(-mu * h) / mu
        self.phi = np.where(mu == 0.0, h, phi)
        # additive-noise scaling giving the exact per-mode convolution variance
        with np.errstate(divide="ignore", invalid="ignore"):
            g2 = -np.expm1(-2.0 * mu * h) / (2.0 * mu * h)
        self.gamma = np.sqrt(np.where(mu == 0.0, 1.0, g2))
        self._sigma = (np.asarray(model.covariance.sigma)
                       if model.coupling == COUPLING_DIAGONAL else None)
        if model.drift.kind in _POINTWISE_KINDS:
            self._init_collocation()

    def _init_collocation(self):
        n = self.model.dim
        m = self.model.collocation
        i = np.arange(1, m + 1)
        k = np.arange(1, n + 1)
        xi = i / (m + 1.0)
        # synthesis to collocation values of the orthonormal sine basis
        self.synth = np.sqrt(2.0) * np.sin(np.pi * np.outer(xi, k))  # (m, n)
        self.analyze = self.synth.T / (m + 1.0)                      # (n, m)
        if self.model.drift.kind == KIND_BURGERS:
            # maps collocation values of w to the mode coefficients of
            # -(1/2) dw/dxi, via the cosine expansion of w (w = 0 at ends)
            cos = np.cos(np.pi * np.outer(k, xi))                    # (n, m)
            self.derivative_half = (k[:, None] * np.pi * cos
                                    / (np.sqrt(2.0) * (m + 1.0)))

    # -- drift ------------------------------------------------------------

    def drift_eval(self, u: np.ndarray) -> np.ndarray:
        d = self.model.drift
        if d.kind == KIND_ZERO:
            return np.zeros_like(u)
        if d.kind in (KIND_BOUNDED, KIND_MODE):
            return np.asarray(d.func(u), dtype=float)
        phys = self.synth @ u
        if d.kind == KIND_POINTWISE:
            return self.analyze @ d.scalar(phys)
        if d.kind == KIND_DISSIPATIVE:
            return self.analyze @ (phys * (1.0 - np.abs(phys) ** d.alpha))
        return self.derivative_half @ (phys * phys)  # burgers

    def drift_jvp(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Apply the drift Jacobian at ``u`` to columns ``v`` (N,) or (N, q)."""
        d = self.model.drift
        if d.kind == KIND_ZERO:
            return np.zeros_like(v)
        if d.kind in (KIND_BOUNDED, KIND_MODE):
            jac = np.asarray(d.dfunc(u), dtype=float)
            return jac @ v
        phys = self.synth @ u
        vphys = self.synth @ v
        if d.kind == KIND_POINTWISE:
            fp = d.scalar_prime(phys)
        elif d.kind == KIND_DISSIPATIVE:
            fp = 1.0 - (d.alpha + 1.0) * np.abs(phys) ** d.alpha
        else:  # burgers: D[-(u^2)'/2] v = -(u v)'
            w = 2.0 * (phys.T * vphys.T).T if v.ndim > 1 else 2.0 * phys * vphys
            return self.derivative_half @ w
        w = (fp[:, None] * vphys) if v.ndim > 1 else fp * vphys
        return self.analyze @ w

    def drift_jvp_transpose(self, u: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Apply the transposed drift Jacobian at ``u`` to columns ``w``."""
        d = self.model.drift
        if d.kind == KIND_ZERO:
            return np.zeros_like(w)
        if d.kind in (KIND_BOUNDED, KIND_MODE):
            jac = np.asarray(d.dfunc(u), dtype=float)
            return jac.T @ w
        phys = self.synth @ u
        if d.kind == KIND_BURGERS:
            mid = self.derivative_half.T @ w
            mid = (2.0 * phys)[:, None] * mid if w.ndim > 1 else 2.0 * phys * mid
            return self.synth.T @ mid
        if d.kind == KIND_POINTWISE:
            fp = d.scalar_prime(phys)
        else:
            fp = 1.0 - (d.alpha + 1.0) * np.abs(phys) ** d.alpha
        mid = self.analyze.T @ w
        mid = fp[:, None] * mid if w.ndim > 1 else fp * mid
        return self.synth.T @ mid

    # -- one-step maps ------------------------------------------------------

    def step(self, u: np.ndarray, dw: Optional[np.ndarray]) -> np.ndarray:
        model = self.model
        out = self.decay * u + self.phi * self.drift_eval(u)
        if model.coupling == COUPLING_ADDITIVE:
            out = out + self.gamma * model.covariance.apply(dw)
        elif model.coupling == COUPLING_DIAGONAL:
            out = out + self.decay * (self._sigma * u * dw)
        amax = np.max(np.abs(out))
        if not (amax <= model.state_cap):
            raise BlowUpError(
                f"state magnitude {amax:.3e} exceeded cap {model.state_cap:.3e}")
        return out

    def step_tangent(self, u: np.ndarray, v: np.ndarray,
                     dw: Optional[np.ndarray]) -> np.ndarray:
        out = (self.decay[:, None] * v
               + self.phi[:, None] * self.drift_jvp(u, v))
        if self.model.coupling == COUPLING_DIAGONAL:
            out = out + (self.decay * self._sigma * dw)[:, None] * v
        return out

    def step_tangent_transpose(self, u: np.ndarray, v: np.ndarray,
                               dw: Optional[np.ndarray]) -> np.ndarray:
        """Transpose of the one-step tangent map (adjoint propagation)."""
        out = (self.decay[:, None] * v
               + self.drift_jvp_transpose(u, self.phi[:, None] * v))
        if self.model.coupling == COUPLING_DIAGONAL:
            out = out + (self.decay * self._sigma * dw)[:, None] * v
        return out


@dataclass(frozen=True)
class PathRef:
    seed: Optional[int]
    anchor: float
    h: float


@dataclass(frozen=True)
class CocycleTrajectory:
    """Grid states (and optionally Jacobians) along one realisation."""

    times: np.ndarray            # (n+1,)
    states: np.ndarray           # (n+1, N) mode coordinates
    basis: OperatorSpec
    path_ref: Optional[PathRef] = None
    tangents: Optional[np.ndarray] = None  # (n+1, N, N) when requested

    def state_at(self, t: float) -> ModeVec:
        h = float(self.times[1] - self.times[0]) if len(self.times) > 1 else 1.0
        k = round((t - self.times[0]) / h)
        if not (0 <= k < len(self.times)) or abs(
                self.times[0] + k * h - t) > 1e-9 * max(1.0, abs(t)):
            raise GridMisalignedError(f"time {t!r} not on the trajectory grid")
        return ModeVec(self.states[k].copy(), self.basis)

    @property
    def final(self) -> ModeVec:
        return ModeVec(self.states[-1].copy(), self.basis)


def _check_path(model: SemiflowModel, path: Optional[WienerPath]) -> None:
    if model.coupling == COUPLING_NONE:
        return
    if path is None:
        raise InvalidGridError("stochastic coupling requires a path")
    if abs(path.h - model.h) > 1e-12 * max(1.0, model.h):
        raise GridMisalignedError(
            f"path step {path.h!r} does not match model step {model.h!r}")
    if path.mode_count != model.covariance.mode_count:
        raise InvalidGridError("path mode count does not match covariance")


def evolve(model: SemiflowModel, x: ModeVec, path: Optional[WienerPath],
           duration: float, *, with_tangent: bool = False) -> CocycleTrajectory:
    """Integrate the mild-solution stepper over ``[0, duration]``.

    Step j consumes the path increments of the cell ``[j h, (j+1) h]``,
    so restarting from any grid state on the shifted path reproduces the
    remaining states exactly.
    """
    model.operator.check_basis(x.basis)
    _check_path(model, path)
    if duration < 0:
        raise InvalidGridError("duration must be >= 0")
    h = model.h
    n = _steps(duration, h)
    if path is not None and model.coupling != COUPLING_NONE and n > 0:
        path.cell_row(0)
        path.cell_row(n - 1)

    stepper = model.stepper()
    dim = model.dim
    states = np.empty((n + 1, dim))
    states[0] = x.coords
    tangents = None
    if with_tangent:
        tangents = np.empty((n + 1, dim, dim))
        tangents[0] = np.eye(dim)
    u = x.coords.copy()
    v = np.eye(dim) if with_tangent else None
    noisy = model.coupling != COUPLING_NONE
    for j in range(n):
        dw = path.increments[path.n_back + j] if noisy else None
        if with_tangent:
            v = stepper.step_tangent(u, v, dw)
        u = stepper.step(u, dw)
        states[j + 1] = u
        if with_tangent:
            tangents[j + 1] = v
    ref = None
    if path is not None:
        ref = PathRef(path.seed, path.anchor, path.h)
    return CocycleTrajectory(times=np.arange(n + 1) * h, states=states,
                             basis=model.operator, path_ref=ref,
                             tangents=tangents)


def _steps(duration: float, h: float) -> int:
    k = round(duration / h)
    if abs(duration - k * h) > 1e-9 * max(1.0, abs(duration)):
        raise GridMisalignedError(
            f"duration {duration!r} not a multiple of h={h!r}")
    return int(k)


def cocycle_eval(model: SemiflowModel, t: float, x: ModeVec,
                 path: Optional[WienerPath]) -> ModeVec:
    """U(t, x, omega): the grid-time cocycle map."""
    return evolve(model, x, path, t).final


def tangent_eval(model: SemiflowModel, t: float, x: ModeVec,
                 path: Optional[WienerPath]) -> tuple[ModeVec, np.ndarray]:
    """State and Jacobian (U(t, x, omega), DU(t, x, omega))."""
    if not model.drift.differentiable:
        raise InvalidGridError("drift has no derivative callable")
    model.operator.check_basis(x.basis)
    _check_path(model, path)
    h = model.h
    n = _steps(t, h)
    stepper = model.stepper()
    u = x.coords.copy()
    v = np.eye(model.dim)
    noisy = model.coupling != COUPLING_NONE
    for j in range(n):
        dw = path.increments[path.n_back + j] if noisy else None
        v = stepper.step_tangent(u, v, dw)
        u = stepper.step(u, dw)
    return ModeVec(u, model.operator), v


def centered_eval(model: SemiflowModel, station, t: float, z: ModeVec,
                  path: Optional[WienerPath]) -> ModeVec:
    """Displacement flow around the stationary trajectory:
    ``U(t, z + Y(omega), omega) - Y(theta_t omega)``.

    Vanishes at z = 0 up to the stationarity residual of ``station``.
    """
    y0 = station.vec_at(0.0)
    yt = station.vec_at(t)
    return cocycle_eval(model, t, z + y0, path) - yt


def backward_centered_eval(model: SemiflowModel, station, t: float,
                           z: ModeVec, path: WienerPath) -> ModeVec:
    """Pullback displacement flow:
    ``U(t, z + Y(theta_{-t} omega), theta_{-t} omega) - Y(omega)``;
    equals the centered flow evaluated on the path shifted by -t.
    """
    y_back = station.vec_at(-t)
    y0 = station.vec_at(0.0)
    return cocycle_eval(model, t, z + y_back, path.shift(-t)) - y0
