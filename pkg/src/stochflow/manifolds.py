"""Local stable/unstable manifold sampling around a hyperbolic point.

Membership in the local stable set is decided directly against its
defining discrete-time envelope: the displacement from the stationary
trajectory must stay below ``beta1 exp((lambda_neg + eps1) n)`` at every
integer time up to the horizon. Finite horizons cannot certify a limsup,
so a first failure late in the horizon yields the honest verdict
``boundary`` rather than ``out``.

The local unstable set is sampled by pushing small offsets along the
unstable subspace forward from a deep negative shift; the recorded grid
orbit is the history process of each retained sample (its one-step
consistency residual is re-evaluated, not assumed), and retention is
decided by the backward envelope ``beta2 exp(-(lambda_pos - eps2) n)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import qr as _qr, subspace_angles

from .errors import (
    AllSeedsRejectedError,
    BlowUpError,
    ChainTooShortError,
    DegeneratePairsError,
    FitIllConditionedError,
    GridMisalignedError,
    InsufficientSamplesError,
    InvalidGridError,
    NoUnstableDirectionsError,
    SeriesTooShortError,
)
from .noise import WienerPath
from .semiflow import COUPLING_NONE, SemiflowModel, evolve
from .spectral import ModeVec
from .spectrum import SpectralGap, Splitting
from .stationary import StationaryPoint

_NOISE_FLOOR = 1e-12

VERDICT_IN = "in"
VERDICT_OUT = "out"
VERDICT_BOUNDARY = "boundary"


def _unit_steps(h: float) -> int:
    k = round(1.0 / h)
    if abs(k * h - 1.0) > 1e-9:
        raise GridMisalignedError(
            f"integer envelope times need h to divide 1.0; h={h!r}")
    return int(k)


@dataclass(frozen=True)
class ManifoldParams:
    """Radii, envelope prefactors and rate margins for the local sets.

    ``lambda_neg`` / ``lambda_pos`` are the gap edges (-inf / +inf
    sentinels allowed). When an edge is infinite the corresponding
    envelope uses the configured fallback rate (any negative rate is
    admissible for the stable set, any positive one for the unstable
    set).
    """

    rho1: float
    rho2: float
    beta1: float
    beta2: float
    eps1: float
    eps2: float
    n_max: int
    t_back: float
    lambda_neg: float
    lambda_pos: float
    fallback_rate_stable: float = -1.0
    fallback_rate_unstable: float = 1.0

    def __post_init__(self):
        if not (self.beta1 > self.rho1 > 0 and self.beta2 > self.rho2 > 0):
            raise InvalidGridError("need beta_i > rho_i > 0")
        if self.beta1 > 1.0 or self.beta2 > 1.0:
            raise InvalidGridError("envelope prefactors live in (0, 1]")
        if np.isfinite(self.lambda_neg):
            if not (0 < self.eps1 < -self.lambda_neg):
                raise InvalidGridError("eps1 must lie in (0, -lambda_neg)")
        elif self.fallback_rate_stable >= 0:
            raise InvalidGridError("fallback stable rate must be negative")
        if np.isfinite(self.lambda_pos):
            if not (0 < self.eps2 < self.lambda_pos):
                raise InvalidGridError("eps2 must lie in (0, lambda_pos)")
        elif self.fallback_rate_unstable <= 0:
            raise InvalidGridError("fallback unstable rate must be positive")
        if self.n_max < 1 or self.t_back < 0:
            raise InvalidGridError("need n_max >= 1 and t_back >= 0")

    @property
    def stable_rate(self) -> float:
        """Envelope rate for the stable set (negative)."""
        if np.isfinite(self.lambda_neg):
            return self.lambda_neg + self.eps1
        return self.fallback_rate_stable

    @property
    def unstable_rate(self) -> float:
        """Backward envelope decay rate for the unstable set (positive)."""
        if np.isfinite(self.lambda_pos):
            return self.lambda_pos - self.eps2
        return self.fallback_rate_unstable

    @classmethod
    def from_gap(cls, gap: SpectralGap, n_max: int = 10,
                 t_back: float = 12.0, rho1: Optional[float] = None,
                 rho2: Optional[float] = None) -> "ManifoldParams":
        """Pragmatic defaults: radii a tenth of the gap scale, prefactors
        twice the radius, margins half the distance to the gap edge."""
        if not gap.hyperbolic:
            raise InvalidGridError("spectrum not hyperbolic; no manifolds")
        scales = [abs(gap.lambda_i0), gap.lambda_i0_minus_1]
        scale = min(s for s in scales if np.isfinite(s))
        r1 = rho1 if rho1 is not None else min(0.1 * scale, 0.45)
        r2 = rho2 if rho2 is not None else r1
        eps1 = -gap.lambda_i0 / 2 if np.isfinite(gap.lambda_i0) else 0.5
        eps2 = gap.lambda_i0_minus_1 / 2 if np.isfinite(gap.lambda_i0_minus_1) else 0.5
        return cls(rho1=r1, rho2=r2, beta1=min(2 * r1, 1.0),
                   beta2=min(2 * r2, 1.0), eps1=eps1, eps2=eps2,
                   n_max=n_max, t_back=t_back,
                   lambda_neg=gap.lambda_i0, lambda_pos=gap.lambda_i0_minus_1)


@dataclass(frozen=True)
class StableEvidence:
    """Per-point classification outcome with its decay evidence."""

    x: np.ndarray
    verdict: str
    anchor_shift: float
    int_times: np.ndarray          # integer envelope times 0..n_max
    int_distances: np.ndarray
    envelope: np.ndarray
    first_violation: Optional[int]
    times: np.ndarray              # dense sampling for rate estimation
    distances: np.ndarray


@dataclass(frozen=True)
class RateEstimate:
    slope: float
    stderr: float
    n_points: int


@dataclass(frozen=True)
class HistoryChain:
    """Exact grid orbit through an unstable sample, read backward.

    ``points[n]`` is y(-n); consistency[n-1] re-evaluates the one-step
    flow from y(-n) and measures the mismatch with y(-(n-1)).
    """

    points: np.ndarray             # (depth + 1, N)
    distances: np.ndarray          # |y(-n) - Y(theta_-n)|
    consistency: np.ndarray        # (depth,)
    depth: int

    @property
    def sample(self) -> np.ndarray:
        return self.points[0]


@dataclass(frozen=True)
class UnstableSample:
    x: np.ndarray
    chain: HistoryChain
    offset: float
    direction: np.ndarray


@dataclass(frozen=True)
class ManifoldAtlas:
    anchor: np.ndarray
    anchor_shift: float
    params: ManifoldParams
    stable_samples: tuple[StableEvidence, ...] = ()
    unstable_samples: tuple[UnstableSample, ...] = ()

    def stable_in(self) -> list[StableEvidence]:
        return [s for s in self.stable_samples if s.verdict == VERDICT_IN]

    def summary(self) -> dict:
        counts = {v: sum(1 for s in self.stable_samples if s.verdict == v)
                  for v in (VERDICT_IN, VERDICT_OUT, VERDICT_BOUNDARY)}
        return {
            "anchor_shift": self.anchor_shift,
            "stable_counts": counts,
            "unstable_count": len(self.unstable_samples),
            "params": {
                "rho1": self.params.rho1, "rho2": self.params.rho2,
                "beta1": self.params.beta1, "beta2": self.params.beta2,
                "eps1": self.params.eps1, "eps2": self.params.eps2,
                "n_max": self.params.n_max, "t_back": self.params.t_back,
                "stable_rate": self.params.stable_rate,
                "unstable_rate": self.params.unstable_rate,
            },
        }


def classify_stable(model: SemiflowModel, station: StationaryPoint,
                    path: Optional[WienerPath], x: ModeVec,
                    params: ManifoldParams, anchor_shift: float = 0.0,
                    sample_dt: float = 0.1) -> StableEvidence:
    """Test the discrete stable-set envelope along the orbit of ``x``.

    A first failure after 0.8 of the horizon is inconclusive at this
    horizon and yields ``boundary``. The dense distance series is kept
    for rate estimation.
    """
    y0 = station.value_at(anchor_shift)
    if np.linalg.norm(x.coords - y0) > params.rho1 * (1 + 1e-12):
        raise ValueError(
            f"|x - Y| = {np.linalg.norm(x.coords - y0):.4g} exceeds rho1 "
            f"= {params.rho1}; classification is local")
    h = model.h
    horizon = float(params.n_max)
    p = path.shift(anchor_shift) if path is not None else None
    station.value_at(anchor_shift + horizon)  # raises if window too short
    traj = evolve(model, ModeVec(x.coords, model.operator), p, horizon)
    k_per_unit = _unit_steps(h)
    ref = np.stack([station.value_at(anchor_shift + k * h)
                    for k in range(len(traj.times))])
    dists = np.linalg.norm(traj.states - ref, axis=1)

    ns = np.arange(params.n_max + 1)
    int_d = dists[::k_per_unit][:params.n_max + 1]
    env = params.beta1 * np.exp(params.stable_rate * ns)
    bad = np.nonzero(int_d[1:] > env[1:])[0]
    first = int(bad[0] + 1) if len(bad) else None
    if first is None:
        verdict = VERDICT_IN
    elif first > 0.8 * params.n_max:
        verdict = VERDICT_BOUNDARY
    else:
        verdict = VERDICT_OUT

    stride = max(1, round(sample_dt / h))
    return StableEvidence(
        x=x.coords.copy(), verdict=verdict, anchor_shift=anchor_shift,
        int_times=ns.astype(float), int_distances=int_d, envelope=env,
        first_violation=first,
        times=traj.times[::stride].copy(), distances=dists[::stride].copy())


def _fit_rate(times: np.ndarray, dists: np.ndarray,
              min_points: int, err: type) -> RateEstimate:
    above = dists > _NOISE_FLOOR
    cut = int(np.argmin(above)) if not above.all() else len(dists)
    t, d = times[:cut], dists[:cut]
    if len(t) < min_points:
        raise err(
            f"only {len(t)} usable points above the noise floor "
            f"(need >= {min_points})")
    logd = np.log(d)
    a = np.vstack([t, np.ones_like(t)]).T
    coef, res, rank, _ = np.linalg.lstsq(a, logd, rcond=None)
    slope = float(coef[0])
    dof = len(t) - 2
    if dof > 0 and len(res):
        s2 = float(res[0]) / dof
        stderr = float(np.sqrt(s2 / np.sum((t - t.mean()) ** 2)))
    else:
        stderr = 0.0
    return RateEstimate(slope=slope, stderr=stderr, n_points=len(t))


def stable_decay_rate(evidence: StableEvidence,
                      min_points: int = 10) -> RateEstimate:
    """Least-squares slope of log distance against time over the largest
    window before the noise floor."""
    return _fit_rate(evidence.times, evidence.distances, min_points,
                     SeriesTooShortError)


def stable_lipschitz_exponent(model: SemiflowModel, station: StationaryPoint,
                              path: Optional[WienerPath],
                              pairs: Sequence[tuple[ModeVec, ModeVec]],
                              horizon: float,
                              sample_dt: float = 0.1) -> RateEstimate:
    """Exponent of the worst pairwise expansion ratio among stable samples."""
    if len(pairs) < 5:
        raise DegeneratePairsError(f"need >= 5 pairs, got {len(pairs)}")
    seps = [np.linalg.norm(a.coords - b.coords) for a, b in pairs]
    if min(seps) < 1e-8:
        raise DegeneratePairsError("pair separation below 1e-8")
    trajs = []
    for a, b in pairs:
        ta = evolve(model, a, path, horizon)
        tb = evolve(model, b, path, horizon)
        trajs.append(np.linalg.norm(ta.states - tb.states, axis=1))
    ratios = np.stack([d / s for d, s in zip(trajs, seps)])
    sup = ratios.max(axis=0)
    times = np.arange(len(sup)) * model.h
    stride = max(1, round(sample_dt / model.h))
    return _fit_rate(times[::stride], sup[::stride], 5, SeriesTooShortError)


@dataclass(frozen=True)
class InvarianceReport:
    t_list: tuple[float, ...]
    fractions: tuple[float, ...]
    boundary_counts: tuple[int, ...]
    tau1: Optional[float]

    def summary(self) -> dict:
        return {"t_list": list(self.t_list), "fractions": list(self.fractions),
                "boundary_counts": list(self.boundary_counts), "tau1": self.tau1}


def stable_invariance_check(model: SemiflowModel, station: StationaryPoint,
                            path: Optional[WienerPath], atlas: ManifoldAtlas,
                            t_list: Sequence[float]) -> InvarianceReport:
    """Push stable samples forward and re-classify at the shifted anchor.

    Reports the in-manifold fraction per mapping time (boundary verdicts
    excluded from the fraction, counted separately) and the first time
    with fraction one.
    """
    samples = atlas.stable_in()
    if not samples:
        raise InsufficientSamplesError("atlas holds no 'in' stable samples")
    params = atlas.params
    fractions, boundaries = [], []
    for t in sorted(t_list):
        n_in = n_out = n_bd = 0
        for s in samples:
            p = path.shift(s.anchor_shift) if path is not None else None
            xt = evolve(model, ModeVec(s.x, model.operator), p, t).final
            y_t = station.value_at(s.anchor_shift + t)
            if np.linalg.norm(xt.coords - y_t) > params.rho1:
                n_out += 1
                continue
            ev = classify_stable(model, station, path, xt, params,
                                 anchor_shift=s.anchor_shift + t)
            if ev.verdict == VERDICT_IN:
                n_in += 1
            elif ev.verdict == VERDICT_BOUNDARY:
                n_bd += 1
            else:
                n_out += 1
        denom = max(n_in + n_out, 1)
        fractions.append(n_in / denom)
        boundaries.append(n_bd)
    ts = tuple(sorted(t_list))
    tau1 = None
    for t, f in zip(ts, fractions):
        if f == 1.0:
            tau1 = t
            break
    return InvarianceReport(ts, tuple(fractions), tuple(boundaries), tau1)


def build_unstable(model: SemiflowModel, station: StationaryPoint,
                   path: Optional[WienerPath], params: ManifoldParams,
                   n_points: int, split: Splitting,
                   direction_seed: int = 0,
                   max_shrink: int = 12) -> tuple[UnstableSample, ...]:
    """Sample the local unstable set by pushforward from a deep shift.

    Seeds sit at ``Y(theta_{-t_back}) + delta d`` with ``d`` in the
    unstable subspace estimated at that shift; offsets are sized from the
    measured tangent growth so the image lands inside the radius-rho2
    ball, then auto-shrunk on failure. Retained samples must satisfy the
    backward envelope at every recorded integer depth.
    """
    k = split.dim_unstable
    if k == 0:
        raise NoUnstableDirectionsError("unstable subspace is trivial")
    if abs(split.at_shift - (-params.t_back)) > 1e-9:
        raise InvalidGridError(
            f"splitting anchored at {split.at_shift}, expected {-params.t_back}")
    h = model.h
    t_back = params.t_back
    depth = int(np.floor(t_back + 1e-9))
    n_steps = round(t_back / h)
    k_per_unit = _unit_steps(h)

    rng = np.random.Generator(np.random.PCG64(direction_seed))
    dirs = [split.unstable_basis[:, j] for j in range(k)]
    dirs += [-d for d in dirs[: max(0, n_points - k)]]
    while len(dirs) < n_points:
        c = split.unstable_basis @ rng.standard_normal(k)
        dirs.append(c / np.linalg.norm(c))
    dirs = dirs[:n_points]

    y_back = station.value_at(-t_back)
    p_back = path.shift(-t_back) if path is not None else None

    # measured linear growth of each direction over the pushforward stretch
    stepper = model.stepper()
    u = y_back.copy()
    v = np.stack(dirs, axis=1)
    log_gain = np.zeros(v.shape[1])
    noisy = model.coupling != COUPLING_NONE
    for j in range(n_steps):
        dw = p_back.increments[p_back.n_back + j] if noisy else None
        v = stepper.step_tangent(u, v, dw)
        u = stepper.step(u, dw)
        if (j + 1) % 50 == 0:
            norms = np.linalg.norm(v, axis=0)
            v = v / norms
            log_gain += np.log(norms)
    log_gain += np.log(np.linalg.norm(v, axis=0))

    env = params.beta2 * np.exp(-params.unstable_rate * np.arange(depth + 1))
    # spread the target image radii so the sample cloud supports local fits
    targets = [params.rho2 * f for f in (0.5, 0.2, 0.125, 0.08)]
    samples = []
    for i, (d, lg) in enumerate(zip(dirs, log_gain)):
        delta = min(params.rho2, targets[i % len(targets)] * np.exp(-lg))
        accepted = None
        for _ in range(max_shrink):
            z = ModeVec(y_back + delta * d, model.operator)
            try:
                traj = evolve(model, z, p_back, t_back)
            except BlowUpError:
                delta *= 0.5
                continue
            dists = np.empty(depth + 1)
            ok = True
            for n in range(depth + 1):
                yn = station.value_at(-float(n))
                dists[n] = np.linalg.norm(traj.states[n_steps - n * k_per_unit] - yn)
                if dists[n] > env[n]:
                    ok = False
                    break
            if ok and dists[0] <= params.rho2:
                accepted = (z, traj, dists, delta)
                break
            delta *= 0.5
        if accepted is None:
            continue
        _, traj, dists, delta = accepted
        points = np.stack([traj.states[n_steps - n * k_per_unit]
                           for n in range(depth + 1)])
        cons = np.empty(depth)
        for n in range(1, depth + 1):
            pn = (p_back.shift(t_back - float(n)) if p_back is not None else None)
            one = evolve(model, ModeVec(points[n], model.operator), pn, 1.0)
            cons[n - 1] = float(np.linalg.norm(one.states[-1] - points[n - 1]))
        chain = HistoryChain(points=points, distances=dists,
                             consistency=cons, depth=depth)
        samples.append(UnstableSample(x=points[0], chain=chain,
                                      offset=delta, direction=d))
    if not samples:
        raise AllSeedsRejectedError(
            "no unstable seed satisfied the backward envelope after shrinking")
    return tuple(samples)


def unstable_backward_rate(chain: HistoryChain,
                           min_depth: int = 10) -> RateEstimate:
    """Regression slope of the log backward distances of one chain."""
    if chain.depth < min_depth:
        raise ChainTooShortError(
            f"chain depth {chain.depth} < required {min_depth}")
    ns = np.arange(chain.depth + 1, dtype=float)
    return _fit_rate(ns, chain.distances, min_depth, ChainTooShortError)


def unstable_pairwise_rate(chain_a: HistoryChain, chain_b: HistoryChain,
                           min_depth: int = 10) -> RateEstimate:
    """Backward separation rate of two history chains (pairwise variant)."""
    depth = min(chain_a.depth, chain_b.depth)
    if depth < min_depth:
        raise ChainTooShortError(f"common depth {depth} < {min_depth}")
    seps = np.linalg.norm(chain_a.points[:depth + 1]
                          - chain_b.points[:depth + 1], axis=1)
    sep0 = seps[0]
    if sep0 < 1e-14:
        raise DegeneratePairsError("chains start at the same point")
    ns = np.arange(depth + 1, dtype=float)
    return _fit_rate(ns, seps / sep0, min_depth, ChainTooShortError)


@dataclass(frozen=True)
class GraphFit:
    linear: np.ndarray             # (dim_out, dim_in)
    quadratic: np.ndarray          # (dim_out, n_quad_terms)
    radius: float
    n_samples: int
    tangent_basis: np.ndarray      # (N, dim_in) fitted tangent space

    @property
    def linear_norm(self) -> float:
        return float(np.max(np.abs(self.linear))) if self.linear.size else 0.0

    @property
    def quad_norm(self) -> float:
        return float(np.max(np.abs(self.quadratic))) if self.quadratic.size else 0.0

    @property
    def tangency_ok(self) -> bool:
        return self.linear_norm <= max(1e-3 * self.quad_norm * self.radius, 1e-9)


@dataclass(frozen=True)
class TangencyReport:
    stable_fit: Optional[GraphFit]
    unstable_fit: Optional[GraphFit]
    min_angle: float
    dims_sum: int
    dim_total: int

    @property
    def transversal(self) -> bool:
        return self.dims_sum == self.dim_total and self.min_angle > 0.0

    def summary(self) -> dict:
        out = {"min_angle": self.min_angle, "dims_sum": self.dims_sum,
               "dim_total": self.dim_total, "transversal": self.transversal}
        for name, fit in (("stable", self.stable_fit),
                          ("unstable", self.unstable_fit)):
            if fit is not None:
                out[name] = {"linear_norm": fit.linear_norm,
                             "quad_norm": fit.quad_norm,
                             "radius": fit.radius,
                             "n_samples": fit.n_samples,
                             "tangency_ok": fit.tangency_ok}
        return out


def _oriented_complement(basis: np.ndarray) -> np.ndarray:
    """Orthonormal complement with each column's dominant entry positive,
    so fitted graph coefficients have a reproducible sign."""
    n, k = basis.shape
    if k >= n:
        return np.zeros((n, 0))
    comp = _qr(basis, mode="full")[0][:, k:]
    for j in range(comp.shape[1]):
        lead = np.argmax(np.abs(comp[:, j]))
        if comp[lead, j] < 0:
            comp[:, j] = -comp[:, j]
    return comp


def _graph_fit(offsets: np.ndarray, basis: np.ndarray,
               min_samples: int) -> GraphFit:
    n, dim_in = basis.shape
    comp = _oriented_complement(basis)
    u = offsets @ basis                  # (S, dim_in)
    w = offsets @ comp                   # (S, n - dim_in)
    s = len(offsets)
    if s < min_samples:
        raise InsufficientSamplesError(
            f"{s} samples within the fit radius, need >= {min_samples}")
    iu, ju = np.triu_indices(dim_in)
    feats = [u, u[:, iu] * u[:, ju]]
    a = np.concatenate(feats, axis=1)
    n_feat = a.shape[1]
    if s < n_feat:
        raise InsufficientSamplesError(
            f"{s} samples cannot determine {n_feat} fit coefficients")
    coef, _, rank, _ = np.linalg.lstsq(a, w, rcond=None)
    if rank < n_feat:
        raise FitIllConditionedError(
            f"graph fit rank {rank} < {n_feat}; samples are degenerate")
    lin = coef[:dim_in].T                # (dim_out, dim_in)
    quad = coef[dim_in:].T
    tangent = basis + comp @ lin if comp.shape[1] else basis
    tangent = np.linalg.qr(tangent)[0]
    return GraphFit(linear=lin, quadratic=quad,
                    radius=float(np.max(np.linalg.norm(u, axis=1))) if s else 0.0,
                    n_samples=s, tangent_basis=tangent)


def find_stable_samples(model: SemiflowModel, station: StationaryPoint,
                        path: Optional[WienerPath], params: ManifoldParams,
                        split: Splitting, n_samples: int,
                        anchor_shift: float = 0.0,
                        direction_seed: int = 0) -> tuple[StableEvidence, ...]:
    """Propose and classify candidate stable-set points near the anchor.

    With no unstable directions every small offset qualifies, so offsets
    along the stable basis are classified directly. With a
    one-dimensional unstable subspace, each stable offset is completed
    by a secant search along the unstable direction for the value whose
    envelope displacement vanishes at the horizon (off-manifold
    candidates diverge with a sign, making the probe monotone). Higher
    unstable dimensions classify the raw offsets, which typically only
    brackets the set.
    """
    y0 = station.value_at(anchor_shift)
    dim_s = split.stable_basis.shape[1]
    if dim_s == 0:
        raise InsufficientSamplesError("stable subspace is trivial")
    rng = np.random.Generator(np.random.PCG64(direction_seed))
    dirs = [split.stable_basis[:, j] for j in range(dim_s)]
    dirs += [-d for d in list(dirs)]
    while len(dirs) < n_samples:
        c = split.stable_basis @ rng.standard_normal(dim_s)
        dirs.append(c / np.linalg.norm(c))
    # radii kept inside rho1/4 so the samples also feed the tangency fit
    radii = [params.rho1 / 5, params.rho1 / 10]
    offsets = [r * d for d, r in zip(dirs[:n_samples],
                                     (radii * n_samples)[:n_samples])]

    k = split.dim_unstable
    out = []
    for off in offsets:
        if k == 1:
            w = split.unstable_basis[:, 0]
            base = y0 + off

            def probe(s: float) -> float:
                z = ModeVec(base + s * w, model.operator)
                p = path.shift(anchor_shift) if path is not None else None
                traj = evolve(model, z, p, float(params.n_max))
                disp = traj.states[-1] - station.value_at(
                    anchor_shift + params.n_max)
                return float(w @ disp)

            s_a, g_a = 0.0, probe(0.0)
            s_b = params.rho1 * 1e-3
            g_b = probe(s_b)
            for _ in range(8):
                if g_b == g_a:
                    break
                s_new = s_b - g_b * (s_b - s_a) / (g_b - g_a)
                s_a, g_a = s_b, g_b
                s_b = float(np.clip(s_new, -params.rho1 / 2, params.rho1 / 2))
                g_b = probe(s_b)
                if abs(s_b - s_a) < 1e-14 * max(1.0, abs(s_b)):
                    break
            cand = base + s_b * w
        else:
            cand = y0 + off
        x = ModeVec(cand, model.operator)
        if np.linalg.norm(cand - y0) > params.rho1:
            continue
        out.append(classify_stable(model, station, path, x, params,
                                   anchor_shift=anchor_shift))
    if not out:
        raise InsufficientSamplesError("no stable candidates classified")
    return tuple(out)


def tangency_and_transversality(atlas: ManifoldAtlas,
                                split: Splitting) -> TangencyReport:
    """Fit both manifolds as graphs over their candidate tangent subspaces.

    The displacement over the subspace must be quadratic at the anchor
    (vanishing linear term up to the documented factor); the fitted
    tangent spaces must be transversal with dimensions summing to N.
    """
    n = len(atlas.anchor)
    params = atlas.params

    stable_fit = None
    dim_s = split.stable_basis.shape[1]
    if dim_s:
        pts = np.stack([s.x for s in atlas.stable_in()]) if atlas.stable_in() \
            else np.zeros((0, n))
        offs = pts - atlas.anchor
        offs = offs[np.linalg.norm(offs, axis=1) <= params.rho1 / 4 + 1e-12]
        stable_fit = _graph_fit(offs, split.stable_basis, 2 * dim_s)

    unstable_fit = None
    dim_u = split.dim_unstable
    if dim_u:
        pts = np.stack([s.x for s in atlas.unstable_samples]) if \
            atlas.unstable_samples else np.zeros((0, n))
        offs = pts - atlas.anchor
        offs = offs[np.linalg.norm(offs, axis=1) <= params.rho2 / 4 + 1e-12]
        unstable_fit = _graph_fit(offs, split.unstable_basis, 2 * dim_u)

    dims_sum = (stable_fit.tangent_basis.shape[1] if stable_fit else 0) + \
               (unstable_fit.tangent_basis.shape[1] if unstable_fit else 0)
    if stable_fit and unstable_fit:
        min_angle = float(np.min(subspace_angles(
            stable_fit.tangent_basis, unstable_fit.tangent_basis)))
    else:
        min_angle = float(np.pi / 2)
    return TangencyReport(stable_fit=stable_fit, unstable_fit=unstable_fit,
                          min_angle=min_angle, dims_sum=dims_sum, dim_total=n)
