"""Lyapunov spectrum and stable/unstable splitting of the linearised flow.

Exponents come from the discrete-QR method: propagate an orthonormal
tangent frame along the trajectory with the variational stepper,
re-orthonormalise on a fixed interval, and average the log diagonal of
the R factors. Standard errors come from batching those log increments
into blocks.

The unstable subspace at a shift is estimated by pushing a generic
frame forward from a deep negative shift (its span converges to the
leading singular subspace of the tangent map over that stretch); the
stable subspace is the orthogonal complement of the same construction
applied to the transposed one-step maps in reversed order, i.e. to the
adjoint tangent flow, which avoids inverting the (possibly
non-invertible) forward map.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.linalg import qr as _qr, subspace_angles

from .errors import (
    DegenerateRError,
    GridMisalignedError,
    InvalidGridError,
    NoSubspaceConvergenceError,
)
from .noise import WienerPath
from .semiflow import COUPLING_NONE, SemiflowModel
from .spectral import ModeVec, OperatorSpec
from .stationary import StationaryPoint

_DIAG_FLOOR = 1e-280


def _state0(y: Union[StationaryPoint, ModeVec], shift: float = 0.0) -> np.ndarray:
    if isinstance(y, StationaryPoint):
        return y.value_at(shift).copy()
    if shift != 0.0:
        raise InvalidGridError("plain state has no shift window")
    return y.coords.copy()


def _steps(t: float, h: float, what: str) -> int:
    k = round(t / h)
    if abs(t - k * h) > 1e-9 * max(1.0, abs(t)):
        raise GridMisalignedError(f"{what}={t!r} not a multiple of h={h!r}")
    return int(k)


@dataclass(frozen=True)
class LyapunovReport:
    """Estimated exponents (non-increasing) with block standard errors."""

    exponents: np.ndarray
    std_errors: np.ndarray
    multiplicities: tuple[int, ...]
    horizon: float
    reorth_every: float
    h: float
    q: int
    running: Optional[np.ndarray] = None   # (n_events, q) cumulative estimates

    @property
    def grouped(self) -> tuple[tuple[float, int], ...]:
        """(exponent, multiplicity) per numerically coincident group."""
        out = []
        i = 0
        for m in self.multiplicities:
            out.append((float(np.mean(self.exponents[i:i + m])), m))
            i += m
        return tuple(out)

    def summary(self) -> dict:
        return {
            "exponents": [float(x) for x in self.exponents],
            "std_errors": [float(x) for x in self.std_errors],
            "multiplicities": list(self.multiplicities),
            "horizon": self.horizon,
            "reorth_every": self.reorth_every,
            "h": self.h,
            "q": self.q,
        }


def _group_multiplicities(lams: np.ndarray, ses: np.ndarray,
                          gap_threshold: float = 1e-3) -> tuple[int, ...]:
    mult = []
    count = 0
    for i in range(len(lams)):
        if count == 0:
            count = 1
            continue
        tol = max(3.0 * float(np.hypot(ses[i - 1], ses[i])), gap_threshold)
        if lams[i - 1] - lams[i] <= tol:
            count += 1
        else:
            mult.append(count)
            count = 1
    if count:
        mult.append(count)
    return tuple(mult)


def lyapunov_qr(model: SemiflowModel, y: Union[StationaryPoint, ModeVec],
                path: Optional[WienerPath], horizon: float,
                reorth_every: float, q: Optional[int] = None,
                frame: Optional[np.ndarray] = None,
                n_blocks: int = 10) -> LyapunovReport:
    """Leading ``q`` Lyapunov exponents along the trajectory from ``y``.

    ``horizon`` must be a multiple of ``reorth_every`` which must be a
    multiple of the model step. Raises DegenerateRError when an R
    diagonal entry underflows (``q`` too large or horizon too long for
    double precision between re-orthonormalisations).
    """
    h = model.h
    dim = model.dim
    q = dim if q is None else int(q)
    if not (1 <= q <= dim):
        raise InvalidGridError(f"q={q} must be in 1..{dim}")
    k_reorth = _steps(reorth_every, h, "reorth_every")
    if k_reorth < 1:
        raise InvalidGridError("reorth_every must be at least one step")
    n_steps = _steps(horizon, h, "horizon")
    if n_steps == 0 or n_steps % k_reorth:
        raise InvalidGridError("horizon must be a positive multiple of reorth_every")
    n_events = n_steps // k_reorth

    stepper = model.stepper()
    u = _state0(y)
    if frame is None:
        v = np.eye(dim)[:, :q]
    else:
        v, _ = np.linalg.qr(np.asarray(frame, dtype=float))
        if v.shape != (dim, q):
            raise InvalidGridError(f"frame must have shape ({dim}, {q})")
    logs = np.zeros((n_events, q))
    noisy = model.coupling != COUPLING_NONE
    j = 0
    for e in range(n_events):
        for _ in range(k_reorth):
            dw = path.increments[path.n_back + j] if noisy else None
            v = stepper.step_tangent(u, v, dw)
            u = stepper.step(u, dw)
            j += 1
        v, r = np.linalg.qr(v)
        d = np.diag(r).copy()
        sign = np.where(d < 0, -1.0, 1.0)
        v = v * sign
        d = np.abs(d)
        if not np.all(np.isfinite(d)) or np.any(d < _DIAG_FLOOR):
            raise DegenerateRError(
                f"R diagonal degenerate at event {e}: min {d.min():.3e}")
        logs[e] = np.log(d)

    total_t = n_steps * h
    lams = logs.sum(axis=0) / total_t
    order = np.argsort(-lams, kind="stable")
    lams = lams[order]
    cum_t = (np.arange(n_events) + 1.0) * k_reorth * h
    running = np.cumsum(logs, axis=0)[:, order] / cum_t[:, None]

    nb = min(n_blocks, n_events)
    edges = np.linspace(0, n_events, nb + 1).astype(int)
    rates = np.array([
        logs[a:b].sum(axis=0) / ((b - a) * k_reorth * h)
        for a, b in zip(edges, edges[1:])])
    if nb > 1:
        ses = rates.std(axis=0, ddof=1) / np.sqrt(nb)
    else:
        ses = np.zeros(q)
    ses = ses[order]

    return LyapunovReport(
        exponents=lams, std_errors=ses,
        multiplicities=_group_multiplicities(lams, ses),
        horizon=total_t, reorth_every=k_reorth * h, h=h, q=q,
        running=running)


@dataclass(frozen=True)
class SpectralGap:
    """Location of the gap around zero, with the +-inf edge conventions."""

    hyperbolic: bool
    i0: Optional[int]                 # 1-based index of the largest negative
    lambda_i0: float                  # -inf when every exponent is positive
    lambda_i0_minus_1: float          # +inf when every exponent is negative
    zero_band: float
    dim_unstable: int

    def summary(self) -> dict:
        return {
            "hyperbolic": self.hyperbolic,
            "i0": self.i0,
            "lambda_i0": self.lambda_i0,
            "lambda_i0_minus_1": self.lambda_i0_minus_1,
            "zero_band": self.zero_band,
            "dim_unstable": self.dim_unstable,
        }


def hyperbolicity_gap(report: LyapunovReport,
                      zero_band: float = 1e-3) -> SpectralGap:
    """Locate the spectral gap; 'not hyperbolic' is a value, not an error.

    An exponent within ``zero_band`` of zero (widened by its standard
    error) disqualifies the spectrum.
    """
    lams = report.exponents
    ses = report.std_errors
    if np.any(np.abs(lams) <= zero_band + ses):
        return SpectralGap(False, None, np.nan, np.nan, zero_band, 0)
    n_pos = int(np.sum(lams > 0))
    lam_neg = float(lams[n_pos]) if n_pos < len(lams) else -np.inf
    lam_pos = float(lams[n_pos - 1]) if n_pos >= 1 else np.inf
    return SpectralGap(True, n_pos + 1, lam_neg, lam_pos, zero_band, n_pos)


@dataclass(frozen=True)
class Splitting:
    """Orthonormal bases estimating the stable/unstable subspaces at a shift."""

    unstable_basis: np.ndarray            # (N, k)
    stable_basis: np.ndarray              # (N, N - k)
    at_shift: float
    convergence_unstable: tuple[tuple[float, float], ...]
    convergence_stable: tuple[tuple[float, float], ...]
    min_principal_angle: float
    basis: OperatorSpec

    @property
    def dim_unstable(self) -> int:
        return self.unstable_basis.shape[1]

    def summary(self) -> dict:
        return {
            "dim_unstable": self.dim_unstable,
            "at_shift": self.at_shift,
            "min_principal_angle": self.min_principal_angle,
            "convergence_unstable": [list(p) for p in self.convergence_unstable],
            "convergence_stable": [list(p) for p in self.convergence_stable],
        }


def _horizon_ladder(t: float, h: float) -> list[int]:
    full = max(1, round(t / h))
    ks = sorted({max(1, full // 8), max(1, full // 4), max(1, full // 2), full})
    return ks


def _push_frame(model: SemiflowModel, u0: np.ndarray, path: Optional[WienerPath],
                n_steps: int, k: int, checkpoints: Sequence[int],
                reorth: int = 10) -> list[np.ndarray]:
    """Propagate the first-k identity frame; orthonormal span at checkpoints."""
    stepper = model.stepper()
    dim = model.dim
    u = u0.copy()
    v = np.eye(dim)[:, :k]
    noisy = model.coupling != COUPLING_NONE
    out = []
    cp = set(checkpoints)
    for j in range(n_steps):
        dw = path.increments[path.n_back + j] if noisy else None
        v = stepper.step_tangent(u, v, dw)
        u = stepper.step(u, dw)
        if (j + 1) % reorth == 0 or (j + 1) in cp:
            v, _ = np.linalg.qr(v)
        if (j + 1) in cp:
            out.append(v.copy())
    return out


def _push_adjoint_frame(model: SemiflowModel, u0: np.ndarray,
                        path: Optional[WienerPath], n_steps: int, k: int,
                        checkpoints: Sequence[int],
                        reorth: int = 10) -> list[np.ndarray]:
    """Propagate a frame under the transposed one-step maps in reverse order.

    The result at checkpoint T spans the leading right singular
    directions of the forward tangent map over [0, T].
    """
    stepper = model.stepper()
    dim = model.dim
    noisy = model.coupling != COUPLING_NONE
    states = np.empty((n_steps, dim))
    u = u0.copy()
    for j in range(n_steps):
        states[j] = u
        dw = path.increments[path.n_back + j] if noisy else None
        u = stepper.step(u, dw)
    out = []
    for n in checkpoints:
        v = np.eye(dim)[:, :k]
        for j in range(n - 1, -1, -1):
            dw = path.increments[path.n_back + j] if noisy else None
            v = stepper.step_tangent_transpose(states[j], v, dw)
            if (n - j) % reorth == 0:
                v, _ = np.linalg.qr(v)
        v, _ = np.linalg.qr(v)
        out.append(v)
    return out


def _complement(basis: np.ndarray) -> np.ndarray:
    n, k = basis.shape
    if k == 0:
        return np.eye(n)
    q = _qr(basis, mode="full")[0]
    return q[:, k:]


def _angle(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape[1] == 0 and b.shape[1] == 0:
        return 0.0
    if a.shape[1] != b.shape[1]:
        return float(np.pi / 2)
    return float(np.max(subspace_angles(a, b))) if a.shape[1] else 0.0


def split_subspaces(model: SemiflowModel, y: Union[StationaryPoint, ModeVec],
                    path: Optional[WienerPath], dim_unstable: int,
                    t_back: float, t_fwd: float, angle_tol: float = 1e-6,
                    at_shift: float = 0.0) -> Splitting:
    """Estimate the splitting at ``at_shift`` from pushforward horizons.

    The unstable basis comes from frames pushed forward over increasing
    ``[at_shift - T, at_shift]``; the stable basis is the complement of
    the adjoint-flow frames over increasing ``[at_shift, at_shift + T]``.
    Each ladder must become Cauchy in the subspace angle below
    ``angle_tol``.
    """
    h = model.h
    dim = model.dim
    k = int(dim_unstable)
    if not (0 <= k <= dim):
        raise InvalidGridError(f"dim_unstable={k} out of range")

    conv_u: list[tuple[float, float]] = []
    conv_s: list[tuple[float, float]] = []

    if k == 0:
        u_basis = np.zeros((dim, 0))
    else:
        ks = _horizon_ladder(t_back, h)
        frames = []
        for n in ks:
            start = at_shift - n * h
            u0 = _state0(y, start)
            p = path.shift(start) if path is not None else None
            frames.append(_push_frame(model, u0, p, n, k, [n])[0])
        for nb, fa, fb in zip(ks[1:], frames, frames[1:]):
            conv_u.append((nb * h, _angle(fa, fb)))
        if len(frames) > 1 and conv_u[-1][1] > angle_tol:
            raise NoSubspaceConvergenceError(
                f"unstable-basis angles not Cauchy: {conv_u}")
        u_basis = frames[-1]

    if k == dim:
        s_basis = np.zeros((dim, 0))
    elif k == 0:
        s_basis = np.eye(dim)
    else:
        ks = _horizon_ladder(t_fwd, h)
        u0 = _state0(y, at_shift)
        p = path.shift(at_shift) if path is not None else None
        ad_frames = _push_adjoint_frame(model, u0, p, ks[-1], k, ks)
        comps = [_complement(f) for f in ad_frames]
        for nb, fa, fb in zip(ks[1:], comps, comps[1:]):
            conv_s.append((nb * h, _angle(fa, fb)))
        if len(comps) > 1 and conv_s[-1][1] > angle_tol:
            raise NoSubspaceConvergenceError(
                f"stable-basis angles not Cauchy: {conv_s}")
        s_basis = comps[-1]

    if u_basis.shape[1] and s_basis.shape[1]:
        min_angle = float(np.min(subspace_angles(u_basis, s_basis)))
    else:
        min_angle = float(np.pi / 2)
    return Splitting(unstable_basis=u_basis, stable_basis=s_basis,
                     at_shift=at_shift,
                     convergence_unstable=tuple(conv_u),
                     convergence_stable=tuple(conv_s),
                     min_principal_angle=min_angle,
                     basis=model.operator)


@dataclass(frozen=True)
class DichotomyRecord:
    subspace: str          # "unstable" | "stable"
    sample: int
    tau_star: Optional[float]   # None: inequality never settled by the horizon


@dataclass(frozen=True)
class DichotomyReport:
    records: tuple[DichotomyRecord, ...]
    delta1: float
    delta2: float
    horizon: float

    def max_tau(self, subspace: str) -> Optional[float]:
        taus = [r.tau_star for r in self.records if r.subspace == subspace]
        if not taus or any(t is None for t in taus):
            return None
        return max(taus)

    @property
    def violations(self) -> tuple[DichotomyRecord, ...]:
        return tuple(r for r in self.records if r.tau_star is None)

    def summary(self) -> dict:
        return {
            "delta1": self.delta1,
            "delta2": self.delta2,
            "horizon": self.horizon,
            "n_samples": len(self.records),
            "n_violations": len(self.violations),
            "max_tau_unstable": self.max_tau("unstable"),
            "max_tau_stable": self.max_tau("stable"),
        }


def dichotomy_check(model: SemiflowModel, y: Union[StationaryPoint, ModeVec],
                    path: Optional[WienerPath], split: Splitting,
                    delta1: float, delta2: float, horizon: float,
                    n_samples: int = 4, sample_seed: int = 0) -> DichotomyReport:
    """Empirical first times after which the dichotomy inequalities hold.

    Unit vectors are drawn inside each estimated subspace (basis columns
    plus seeded random combinations); for each, the tangent norm along
    the trajectory is compared with ``exp(delta1 t)`` growth (unstable
    side) or ``exp(-delta2 t)`` decay (stable side) through the horizon.
    Violations are reported as data, not raised.
    """
    if delta1 <= 0 or delta2 <= 0:
        raise InvalidGridError("delta1, delta2 must be positive")
    h = model.h
    n_steps = _steps(horizon, h, "horizon")
    rng = np.random.Generator(np.random.PCG64(sample_seed))

    def _samples(basis: np.ndarray) -> np.ndarray:
        k = basis.shape[1]
        if k == 0:
            return np.zeros((model.dim, 0))
        cols = [basis[:, j] for j in range(k)]
        while len(cols) < n_samples:
            c = basis @ rng.standard_normal(k)
            cols.append(c / np.linalg.norm(c))
        return np.stack(cols[:n_samples], axis=1)

    xu = _samples(split.unstable_basis)
    xs = _samples(split.stable_basis)
    x = np.concatenate([xu, xs], axis=1)
    labels = ["unstable"] * xu.shape[1] + ["stable"] * xs.shape[1]
    if x.shape[1] == 0:
        return DichotomyReport((), delta1, delta2, horizon)

    stepper = model.stepper()
    u = _state0(y)
    v = x.copy()
    log_scale = np.zeros(x.shape[1])
    lognorm = np.zeros((n_steps + 1, x.shape[1]))
    noisy = model.coupling != COUPLING_NONE
    for j in range(n_steps):
        dw = path.increments[path.n_back + j] if noisy else None
        v = stepper.step_tangent(u, v, dw)
        u = stepper.step(u, dw)
        norms = np.linalg.norm(v, axis=0)
        if np.any(norms == 0.0):
            norms = np.where(norms == 0.0, 1e-300, norms)
        if (j + 1) % 50 == 0:
            v = v / norms
            log_scale = log_scale + np.log(norms)
            lognorm[j + 1] = log_scale
        else:
            lognorm[j + 1] = log_scale + np.log(norms)

    t = np.arange(n_steps + 1) * h
    records = []
    for c, lab in enumerate(labels):
        if lab == "unstable":
            ok = lognorm[:, c] >= delta1 * t - 1e-12
        else:
            ok = lognorm[:, c] <= -delta2 * t + 1e-12
        # smallest tau with the inequality holding through the horizon
        suffix_ok = np.logical_and.accumulate(ok[::-1])[::-1]
        idx = np.argmax(suffix_ok)
        tau = float(t[idx]) if suffix_ok[idx] else None
        records.append(DichotomyRecord(lab, c, tau))
    return DichotomyReport(tuple(records), delta1, delta2, horizon)
