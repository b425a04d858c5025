"""Stationary random points of the additive-noise semiflow.

The point is represented by its mode values along a grid of shift times
(a window of the driving path). Construction is by Banach iteration of
the exponentially weighted integral map: the slowest-decaying weight
rates come straight from the splitting eigenvalues, so the iterate
contraction factor is ``L (1/mu_plus - 1/mu_minus)``; the solver refuses
to run when that factor reaches one.

For models outside the bounded-Lipschitz hypotheses a pullback
estimator is provided: run the flow from a deep negative shift and
accept the endpoint only when two distinct starts have synchronised.
That construction is a numerical device, not the integral-equation one,
and is flagged as such in reports.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.signal import lfilter

from .errors import (
    ConditionViolatedError,
    GridMisalignedError,
    InvalidGridError,
    NoConvergenceError,
    OutOfWindowError,
    QuadratureTooCoarseError,
    TailNotNegligibleError,
    WindowExceededError,
)
from .noise import WienerPath
from .semiflow import (
    COUPLING_ADDITIVE,
    COUPLING_NONE,
    KIND_BOUNDED,
    KIND_ZERO,
    SemiflowModel,
    evolve,
)
from .spectral import ModeVec, OperatorSpec

_STAT_MAGIC = b"SFSTAT01"


@dataclass(frozen=True)
class ResidualReport:
    """Diagnostics attached to a constructed stationary point."""

    method: str
    iterate_distances: tuple[float, ...] = ()
    iterate_ratios: tuple[float, ...] = ()
    tail_bound: float = 0.0
    quadrature_error_estimate: float = 0.0
    stationarity_residual: Optional[float] = None
    sync_gap: Optional[float] = None
    gap_times: Optional[np.ndarray] = None
    gap_series: Optional[np.ndarray] = None

    def summary(self) -> dict:
        out = {
            "method": self.method,
            "iterations": len(self.iterate_distances),
            "iterate_distances": [float(d) for d in self.iterate_distances],
            "iterate_ratios": [float(r) for r in self.iterate_ratios],
            "tail_bound": float(self.tail_bound),
            "quadrature_error_estimate": float(self.quadrature_error_estimate),
        }
        if self.stationarity_residual is not None:
            out["stationarity_residual"] = float(self.stationarity_residual)
        if self.sync_gap is not None:
            out["sync_gap"] = float(self.sync_gap)
        return out


@dataclass(frozen=True)
class StationaryPoint:
    """Random fixed point sampled along a window of path shifts."""

    window_times: np.ndarray       # (W,)
    values: np.ndarray             # (W, N) mode coordinates of Y(theta_t)
    basis: OperatorSpec
    h: float
    condition_mu: Optional[float]
    residual_report: ResidualReport
    convolution_part: Optional[np.ndarray] = None  # (W, N)

    def __post_init__(self):
        self.window_times.setflags(write=False)
        self.values.setflags(write=False)

    @property
    def t_min(self) -> float:
        return float(self.window_times[0])

    @property
    def t_max(self) -> float:
        return float(self.window_times[-1])

    def _index(self, t: float) -> int:
        k = round((t - self.t_min) / self.h)
        if abs(self.t_min + k * self.h - t) > 1e-9 * max(1.0, abs(t)):
            raise GridMisalignedError(f"shift {t!r} not on the window grid")
        if not (0 <= k < len(self.window_times)):
            raise WindowExceededError(
                f"shift {t!r} outside window [{self.t_min}, {self.t_max}]")
        return int(k)

    def value_at(self, t: float) -> np.ndarray:
        return self.values[self._index(t)]

    def vec_at(self, t: float) -> ModeVec:
        return ModeVec(self.value_at(t).copy(), self.basis)

    # -- serialization ---------------------------------------------------

    def to_bytes(self) -> bytes:
        w, n = self.values.shape
        mu = np.nan if self.condition_mu is None else self.condition_mu
        head = struct.pack("<8sIIqddd", _STAT_MAGIC, 1, n, w,
                           self.h, float(self.window_times[0]), mu)
        return head + np.ascontiguousarray(self.values, "<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes, basis: OperatorSpec) -> "StationaryPoint":
        fmt = "<8sIIqddd"
        magic, version, n, w, h, t0, mu = struct.unpack(fmt, blob[:struct.calcsize(fmt)])
        if magic != _STAT_MAGIC or version != 1:
            raise InvalidGridError("not a stochflow stationary-point record")
        vals = np.frombuffer(blob, "<f8", offset=struct.calcsize(fmt),
                             count=w * n).reshape(w, n).copy()
        times = t0 + np.arange(w) * h
        return cls(window_times=times, values=vals, basis=basis, h=h,
                   condition_mu=None if np.isnan(mu) else mu,
                   residual_report=ResidualReport(method="loaded"))

    def summary(self) -> dict:
        out = self.residual_report.summary()
        out.update({
            "window": [self.t_min, self.t_max],
            "h": self.h,
            "condition_mu": self.condition_mu,
            "value_at_0": [float(v) for v in self.value_at(0.0)]
            if self.t_min <= 0.0 <= self.t_max else None,
        })
        return out


def _tail_rates(op: OperatorSpec) -> tuple[float, float]:
    """Decay rates of the two weight families (stable side, unstable side)."""
    m = op.require_splitting()
    mu = op.mu
    rate_plus = mu[m] if m < op.dim else np.inf
    rate_minus = -mu[m - 1] if m >= 1 else np.inf
    return float(rate_plus), float(rate_minus)


def _tail_duration(rate: float, tail_tol: float) -> float:
    if not np.isfinite(rate):
        return 0.0
    return float(np.log(1.0 / (tail_tol * min(rate, 1.0))) / rate)


def stochastic_convolution(model: SemiflowModel, path: WienerPath,
                           window: tuple[float, float],
                           tail_tol: float = 1e-9,
                           scheme: str = "stepper"):
    """Noise part of the stationary point on a grid of shift times.

    For each split block the exponentially weighted integral runs over
    the decaying side (into the past for the infinite block, into the
    future for the finite one), truncated where the weight falls below
    ``tail_tol``. Returns ``(times, values, tail_bound)``.

    Two discretisations of the integral are available:

    * ``"stepper"`` (default): each cell enters with the stepper's own
      exact-variance coefficient, making the values an exact orbit of
      the discrete flow (the stationary law of the recursion is the
      exact convolution law, and the stationarity residual stays at
      round-off even on the expanding block);
    * ``"left-point"``: the literal left-point Riemann-Ito sums of the
      defining integral. Consistent with :func:`weighted_integral`, but
      its O(h) offset from the stepper is amplified exponentially on
      the expanding block by the flow.
    """
    if model.coupling != COUPLING_ADDITIVE:
        raise InvalidGridError("stochastic convolution needs additive coupling")
    if scheme not in ("stepper", "left-point"):
        raise InvalidGridError(f"unknown scheme {scheme!r}")
    op = model.operator
    m = op.require_splitting()
    h = path.h
    t_lo, t_hi = window
    k_lo = path.steps(t_lo, "window lower")
    k_hi = path.steps(t_hi, "window upper")
    if k_hi < k_lo:
        raise InvalidGridError("window upper bound below lower bound")
    if k_lo < -path.n_back or k_hi > path.n_fwd:
        raise OutOfWindowError(
            f"shift window [{t_lo}, {t_hi}] outside stored path "
            f"[{path.t_min}, {path.t_max}]")

    rate_plus, rate_minus = _tail_rates(op)
    tail_plus = _tail_duration(rate_plus, tail_tol)
    tail_minus = _tail_duration(rate_minus, tail_tol)
    n_tp = int(np.ceil(tail_plus / h - 1e-9))
    n_tm = int(np.ceil(tail_minus / h - 1e-9))
    if m < op.dim and k_lo - n_tp < -path.n_back:
        raise TailNotNegligibleError(
            f"path must reach back to {t_lo - tail_plus:.3f} for tail_tol {tail_tol:g}")
    if m >= 1 and k_hi + n_tm > path.n_fwd:
        raise TailNotNegligibleError(
            f"path must reach forward to {t_hi + tail_minus:.3f} for tail_tol {tail_tol:g}")

    dv = model.covariance.apply(path.increments)  # (cells, N)
    times = (np.arange(k_lo, k_hi + 1)) * h
    w = len(times)
    values = np.zeros((w, op.dim))
    row0 = path.n_back  # storage row of cell [0, h]
    gamma = model.stepper().gamma
    mu = op.mu

    for n in range(m, op.dim):  # infinite block: integrate the past
        a = float(np.exp(-mu[n] * h))
        coef = float(gamma[n]) if scheme == "stepper" else a
        head = 0.0
        if n_tp:
            x = dv[row0 + k_lo - n_tp: row0 + k_lo, n]
            # cell ending i steps before t_lo carries weight a^i * coef
            wts = coef * a ** np.arange(n_tp - 1, -1, -1)
            head = float(wts @ x)
        values[0, n] = head
        body = dv[row0 + k_lo: row0 + k_hi, n]
        if len(body):
            values[1:, n] = lfilter([coef], [1.0, -a], body,
                                    zi=np.array([a * head]))[0]
    for n in range(m):  # finite block: integrate the future, negated
        c = float(np.exp(mu[n] * h))
        coef = float(c * gamma[n]) if scheme == "stepper" else 1.0
        tail = 0.0
        if n_tm:
            x = dv[row0 + k_hi: row0 + k_hi + n_tm, n]
            wts = -coef * c ** np.arange(n_tm)
            tail = float(wts @ x)
        values[-1, n] = tail
        body = dv[row0 + k_lo: row0 + k_hi, n][::-1]
        if len(body):
            y = lfilter([-coef], [1.0, -c], body,
                        zi=np.array([c * tail]))[0]
            values[:-1, n] = y[::-1]

    sig = np.asarray(model.covariance.sigma)
    amp = (np.abs(sig) if model.covariance.kind == "cylindrical-with-amplitudes"
           else np.linalg.norm(model.covariance.matrix, axis=1))
    bound = 0.0
    if m < op.dim and np.isfinite(rate_plus):
        bound = max(bound, float(np.max(amp[m:]) * np.exp(-rate_plus * tail_plus)
                                 / rate_plus))
    if m >= 1 and np.isfinite(rate_minus):
        bound = max(bound, float(np.max(amp[:m]) * np.exp(-rate_minus * tail_minus)
                                 / rate_minus))
    return times, values, bound


def contraction_constant(op: OperatorSpec, lipschitz: float) -> float:
    """Iteration contraction factor ``L (1/mu_plus - 1/mu_minus)``."""
    m = op.require_splitting()
    mu = op.mu
    term = 0.0
    if m < op.dim:
        term += 1.0 / mu[m]
    if m >= 1:
        term -= 1.0 / mu[m - 1]
    return float(lipschitz * term)


def solve_fixed_point(model: SemiflowModel, path: Optional[WienerPath],
                      window: tuple[float, float], tol: float = 1e-9,
                      max_iter: int = 200, tail_tol: float = 1e-9,
                      z0_init: Optional[np.ndarray] = None,
                      residual_horizon: Optional[float] = None) -> StationaryPoint:
    """Construct the stationary point by iterating the weighted-integral map.

    The drift must be globally bounded Lipschitz with certified constants
    (or zero) and the contraction factor must be below one; otherwise the
    solver refuses. Iteration runs on a window extended by one tail
    length on each side so that edge effects are below ``tail_tol`` on
    the returned window.

    The exponentially weighted integrals are discretised with the
    stepper's own one-step rule (exact mode transfer, integrated-drift
    factor, exact-variance noise), so the fixed point is an orbit of the
    discrete flow up to the iteration tolerance. Any other quadrature
    would be amplified exponentially on the expanding block by the
    stationarity certificate. The reported quadrature estimate is the
    O(h) bias against the continuum integral, not an orbit error.
    """
    drift = model.drift
    if drift.kind not in (KIND_ZERO, KIND_BOUNDED):
        raise ValueError(
            "fixed-point construction needs a globally bounded Lipschitz "
            "drift; use pullback_stationary for other models")
    if model.coupling not in (COUPLING_ADDITIVE, COUPLING_NONE):
        raise ValueError("fixed-point construction needs additive noise or none")
    op = model.operator
    m = op.require_splitting()
    lip = float(drift.lipschitz or 0.0)
    sup_f = float(drift.sup_bound or 0.0)
    cmu = contraction_constant(op, lip)
    if cmu >= 1.0:
        raise ConditionViolatedError(
            f"contraction factor {cmu:.4f} >= 1; no fixed point certified")

    h = model.h
    rate_plus, rate_minus = _tail_rates(op)
    rate_min = min(rate_plus, rate_minus)
    mu_max = float(np.max(np.abs(op.mu)))
    if h * mu_max > 1.0:
        raise QuadratureTooCoarseError(
            f"step h={h} cannot resolve the drift integrals against the "
            f"fastest rate {mu_max} (need h*mu <= 1)")
    quad_bias = 0.5 * h * sup_f * (1.0 + mu_max / rate_min)

    t_lo, t_hi = window
    # extend only the sides a block integrates toward: the infinite block
    # reaches into the past (left), the finite block into the future (right)
    n_left = int(np.ceil(_tail_duration(rate_plus, tail_tol) / h - 1e-9)) \
        if m < op.dim else 0
    n_right = int(np.ceil(_tail_duration(rate_minus, tail_tol) / h - 1e-9)) \
        if m >= 1 else 0
    ext_lo, ext_hi = t_lo - n_left * h, t_hi + n_right * h

    if model.coupling == COUPLING_ADDITIVE:
        times, y1, conv_bound = stochastic_convolution(
            model, path, (ext_lo, ext_hi), tail_tol)
    else:
        k_lo = round(ext_lo / h)
        k_hi = round(ext_hi / h)
        times = np.arange(k_lo, k_hi + 1) * h
        y1 = np.zeros((len(times), op.dim))
        conv_bound = 0.0

    w = len(times)
    z = np.zeros((w, op.dim))
    if z0_init is not None:
        z = z + np.asarray(z0_init, dtype=float)
    stepper = model.stepper()
    mu = op.mu
    phi = stepper.phi
    distances: list[float] = []
    converged = False
    for _ in range(max_iter):
        g = stepper.drift_eval((z + y1).T).T if drift.kind != KIND_ZERO \
            else np.zeros_like(z)
        z_new = np.empty_like(z)
        for n in range(m, op.dim):
            a = float(np.exp(-mu[n] * h))
            acc = np.empty(w)
            acc[0] = phi[n] * g[0, n] / (1.0 - a)
            if w > 1:
                acc[1:] = lfilter([phi[n]], [1.0, -a], g[:-1, n],
                                  zi=np.array([a * acc[0]]))[0]
            z_new[:, n] = acc
        for n in range(m):
            c = float(np.exp(mu[n] * h))
            acc = np.empty(w)
            acc[-1] = -c * phi[n] * g[-1, n] / (1.0 - c)
            if w > 1:
                y = lfilter([-c * phi[n]], [1.0, -c], g[:-1, n][::-1],
                            zi=np.array([c * acc[-1]]))[0]
                acc[:-1] = y[::-1]
            z_new[:, n] = acc
        d = float(np.max(np.linalg.norm(z_new - z, axis=1)))
        distances.append(d)
        z = z_new
        if d < tol:
            converged = True
            break
    if not converged:
        raise NoConvergenceError(
            f"no convergence after {max_iter} iterations; distances "
            f"{[f'{d:.2e}' for d in distances[-4:]]}")

    sl = slice(n_left, w - n_right if n_right else w)
    ratios = tuple(b / a for a, b in zip(distances, distances[1:]) if a > 0)
    # each extension is sized so the edge weight integral is below tail_tol
    edge_bound = sup_f * tail_tol if (n_left or n_right) else 0.0
    report = ResidualReport(
        method="contraction",
        iterate_distances=tuple(distances),
        iterate_ratios=ratios,
        tail_bound=float(conv_bound + edge_bound),
        quadrature_error_estimate=quad_bias,
    )
    point = StationaryPoint(
        window_times=times[sl].copy(), values=(z + y1)[sl].copy(),
        basis=op, h=h, condition_mu=cmu, residual_report=report,
        convolution_part=y1[sl].copy())
    if residual_horizon is not None:
        res = stationarity_residual(model, point, path, residual_horizon)
        object.__setattr__(point, "residual_report",
                           replace(report, stationarity_residual=res))
    return point


def stationarity_residual(model: SemiflowModel, station: StationaryPoint,
                          path: Optional[WienerPath], horizon: float) -> float:
    """Certificate max_t |U(t, Y, omega) - Y(theta_t)| / (1 + |Y(theta_t)|)
    over grid times up to ``horizon``; the flow side is produced by the
    stepper, the shift side by window lookup."""
    if horizon > station.t_max + 1e-12 or station.t_min > 0:
        raise WindowExceededError(
            f"horizon {horizon} outside window [{station.t_min}, {station.t_max}]")
    traj = evolve(model, station.vec_at(0.0), path, horizon)
    k0 = station._index(0.0)
    kh = station._index(traj.times[-1])
    ref = station.values[k0:kh + 1]
    num = np.linalg.norm(traj.states - ref, axis=1)
    den = 1.0 + np.linalg.norm(ref, axis=1)
    return float(np.max(num / den))


def pullback_stationary(model: SemiflowModel, path: WienerPath,
                        t_pullback: float,
                        x0_list: Sequence[ModeVec],
                        window: tuple[float, float] = (0.0, 0.0),
                        sync_tol: float = 1e-8) -> StationaryPoint:
    """Pullback estimate ``U(T, x0, theta_{-T} omega)`` of the stationary
    point, accepted only when all starts agree at shift 0 within
    ``sync_tol`` (synchronisation). Flagged ``method='pullback'``."""
    if len(x0_list) < 2:
        raise InvalidGridError("need at least two distinct starts")
    t_lo, t_hi = window
    start = t_lo - t_pullback
    h = model.h
    trajs = [evolve(model, x0, path.shift(start), t_hi - start)
             for x0 in x0_list]
    base = trajs[0].states
    gaps = np.max([np.linalg.norm(t.states - base, axis=1)
                   for t in trajs[1:]], axis=0)
    times_abs = trajs[0].times + start
    k0 = round((0.0 - start) / h)
    sync_gap = float(gaps[k0])
    if not sync_gap < sync_tol:
        raise NoConvergenceError(
            f"pullback starts disagree at shift 0: gap {sync_gap:.3e} "
            f">= sync_tol {sync_tol:.3e}")
    kw = round((t_lo - start) / h)
    report = ResidualReport(method="pullback", sync_gap=sync_gap,
                            gap_times=times_abs, gap_series=gaps)
    return StationaryPoint(
        window_times=times_abs[kw:].copy(), values=base[kw:].copy(),
        basis=model.operator, h=h, condition_mu=None,
        residual_report=report)


def constant_stationary_point(model: SemiflowModel, coords,
                              window: tuple[float, float]) -> StationaryPoint:
    """Wrap a constant state (e.g. a deterministic equilibrium or the
    origin of a linear model) as a stationary point on a window."""
    t_lo, t_hi = window
    h = model.h
    k_lo, k_hi = round(t_lo / h), round(t_hi / h)
    times = np.arange(k_lo, k_hi + 1) * h
    vals = np.tile(np.asarray(coords, dtype=float), (len(times), 1))
    return StationaryPoint(window_times=times, values=vals,
                           basis=model.operator, h=h, condition_mu=None,
                           residual_report=ResidualReport(method="constant"))
