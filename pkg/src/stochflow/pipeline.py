"""Experiment pipeline: simulate -> stationary -> spectrum -> manifolds.

Each stage writes JSON reports, CSV series and binary snapshots into its
own subdirectory of the artifact directory; a manifest lists every file
with a content hash. Identical (config, seed) reruns produce identical
manifests. A lock file guards the directory against concurrent runs.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace as _dc_replace
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import binio
from .config import (
    ExperimentConfig,
    build_model,
    serialize_config,
    tanh_pair_drift,
)
from .errors import (
    NotHyperbolicError,
    StageError,
    StochflowError,
)
from .manifolds import (
    ManifoldAtlas,
    ManifoldParams,
    build_unstable,
    find_stable_samples,
    stable_decay_rate,
    stable_invariance_check,
    tangency_and_transversality,
    unstable_backward_rate,
)
from .noise import CovarianceSpec, sample_path
from .semiflow import COUPLING_NONE, SemiflowModel, evolve, tangent_eval, zero_drift
from .spectral import ModeVec, OperatorSpec, zero_vec
from .spectrum import (
    dichotomy_check,
    hyperbolicity_gap,
    lyapunov_qr,
    split_subspaces,
)
from .stationary import (
    constant_stationary_point,
    contraction_constant,
    pullback_stationary,
    solve_fixed_point,
    stationarity_residual,
)


def _json_dump(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class _Lock:
    def __init__(self, directory: Path):
        self.path = directory / ".lock"

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise StageError("lock", f"artifact directory locked by {self.path}")
        os.close(fd)
        return self

    def __exit__(self, *exc):
        try:
            os.unlink(self.path)
        except FileNotFoundError:
            pass
        return False


def _build_path(cfg: ExperimentConfig, model: SemiflowModel, seed: int):
    if model.coupling == COUPLING_NONE:
        return None
    return sample_path(model.covariance,
                       float(cfg.get("run", "path.t_back")),
                       float(cfg.get("run", "path.t_fwd")),
                       model.h, seed)


def _stage_simulate(cfg, model, path, out: Path) -> dict:
    x0 = cfg.get("run", "simulate.x0")
    x = ModeVec(np.asarray(x0, dtype=float), model.operator) if x0 is not None \
        else zero_vec(model.operator)
    duration = float(cfg.get("run", "simulate.duration"))
    traj = evolve(model, x, path, duration)
    binio.write_series_csv(out / "trajectory.csv", traj.times, traj.states)
    binio.save_snapshot(out / "trajectory.bin", traj.states)
    if path is not None:
        (out / "path.bin").write_bytes(path.to_bytes())
    report = {
        "duration": duration,
        "steps": len(traj.times) - 1,
        "final_state": [float(v) for v in traj.states[-1]],
        "final_norm": float(np.linalg.norm(traj.states[-1])),
    }
    _json_dump(out / "report.json", report)
    return {"trajectory": traj}


def _stage_stationary(cfg, model, path, out: Path) -> dict:
    method = cfg.get("run", "stationary.method")
    t_w = float(cfg.get("run", "stationary.window"))
    if method == "contraction":
        station = solve_fixed_point(
            model, path, (-t_w, t_w),
            tol=float(cfg.get("run", "stationary.tol")),
            tail_tol=float(cfg.get("run", "stationary.tail_tol")),
            residual_horizon=float(cfg.get("run", "stationary.residual_horizon")))
    elif method == "pullback":
        op = model.operator
        bump = np.zeros(op.dim)
        bump[0] = 0.5
        station = pullback_stationary(
            model, path, float(cfg.get("run", "stationary.pullback_time")),
            [zero_vec(op), ModeVec(bump, op)], window=(-0.0, t_w),
            sync_tol=float(cfg.get("run", "stationary.sync_tol")))
        rep = station.residual_report
        binio.write_series_csv(out / "sync_gap.csv", rep.gap_times,
                               rep.gap_series, prefix="gap")
    else:  # origin: the zero state is an exact fixed point of these models
        station = constant_stationary_point(model, np.zeros(model.dim),
                                            (-t_w, t_w))
        res = stationarity_residual(model, station, path,
                                    min(t_w, float(cfg.get(
                                        "run", "stationary.residual_horizon"))))
        object.__setattr__(station, "residual_report",
                           _dc_replace(station.residual_report,
                                       stationarity_residual=res))
    (out / "stationary.bin").write_bytes(station.to_bytes())
    binio.write_series_csv(out / "window.csv", station.window_times,
                           station.values)
    _json_dump(out / "report.json", station.summary())
    return {"station": station}


def _stage_spectrum(cfg, model, path, out: Path, station) -> dict:
    q = cfg.get("run", "spectrum.count")
    report = lyapunov_qr(
        model, station, path,
        horizon=float(cfg.get("run", "spectrum.horizon")),
        reorth_every=float(cfg.get("run", "spectrum.reorth_every")),
        q=int(q) if q is not None else None)
    gap = hyperbolicity_gap(report, float(cfg.get("run", "spectrum.zero_band")))
    payload = {"lyapunov": report.summary(), "gap": gap.summary()}
    split = None
    if gap.hyperbolic:
        split = split_subspaces(
            model, station, path, gap.dim_unstable,
            float(cfg.get("run", "spectrum.split_back")),
            float(cfg.get("run", "spectrum.split_fwd")),
            angle_tol=float(cfg.get("run", "spectrum.angle_tol")))
        payload["splitting"] = split.summary()
        binio.save_snapshot(out / "stable_basis.bin", split.stable_basis)
        binio.save_snapshot(out / "unstable_basis.bin", split.unstable_basis)
        d1 = cfg.get("run", "dichotomy.delta1")
        d2 = cfg.get("run", "dichotomy.delta2")
        if d1 is not None and d2 is not None:
            dich = dichotomy_check(
                model, station, path, split, float(d1), float(d2),
                float(cfg.get("run", "dichotomy.horizon", 10.0)),
                n_samples=int(cfg.get("run", "dichotomy.samples")))
            payload["dichotomy"] = dich.summary()
    if report.running is not None:
        times = (np.arange(len(report.running)) + 1) * report.reorth_every
        binio.write_series_csv(out / "running_exponents.csv", times,
                               report.running, prefix="lambda")
    _json_dump(out / "report.json", payload)
    return {"lyapunov": report, "gap": gap, "split": split}


def _stage_manifolds(cfg, model, path, out: Path, station, gap, split) -> dict:
    if not gap.hyperbolic:
        raise NotHyperbolicError(
            "manifold stage requested but the spectrum has an exponent "
            "indistinguishable from zero")
    params = ManifoldParams.from_gap(
        gap,
        n_max=int(cfg.get("run", "manifolds.n_max")),
        t_back=float(cfg.get("run", "manifolds.t_back")),
        rho1=cfg.get("run", "manifolds.rho1"),
        rho2=cfg.get("run", "manifolds.rho2"))
    stable = find_stable_samples(model, station, path, params, split,
                                 int(cfg.get("run", "manifolds.n_stable")))
    unstable = ()
    if gap.dim_unstable >= 1:
        split_back = split_subspaces(
            model, station, path, gap.dim_unstable,
            float(cfg.get("run", "spectrum.split_back")),
            float(cfg.get("run", "spectrum.split_fwd")),
            angle_tol=float(cfg.get("run", "spectrum.angle_tol")),
            at_shift=-params.t_back)
        unstable = build_unstable(model, station, path, params,
                                  int(cfg.get("run", "manifolds.n_unstable")),
                                  split_back)
    atlas = ManifoldAtlas(anchor=station.value_at(0.0).copy(),
                          anchor_shift=0.0, params=params,
                          stable_samples=stable, unstable_samples=unstable)
    report: dict[str, Any] = {"atlas": atlas.summary()}

    rates = []
    for ev in atlas.stable_in():
        try:
            rates.append(stable_decay_rate(ev).slope)
        except StochflowError:
            pass
    if rates:
        report["stable_decay_rates"] = rates
    if unstable:
        back_rates = []
        for s in unstable:
            try:
                back_rates.append(unstable_backward_rate(s.chain).slope)
            except StochflowError:
                pass
        if back_rates:
            report["unstable_backward_rates"] = back_rates
        report["max_chain_consistency"] = float(
            max(np.max(s.chain.consistency) for s in unstable
                if len(s.chain.consistency)))
    fit = tangency_and_transversality(atlas, split)
    report["tangency"] = fit.summary()
    if fit.stable_fit is not None:
        report["tangency"]["stable_linear"] = fit.stable_fit.linear.tolist()
        report["tangency"]["stable_quadratic"] = fit.stable_fit.quadratic.tolist()
    if fit.unstable_fit is not None:
        report["tangency"]["unstable_quadratic"] = \
            fit.unstable_fit.quadratic.tolist()
    t_inv = cfg.get("run", "manifolds.t_invariance")
    if t_inv:
        inv = stable_invariance_check(model, station, path, atlas, list(t_inv))
        report["invariance"] = inv.summary()

    if stable:
        binio.write_csv(out / "stable_points.csv",
                        [f"x{i+1}" for i in range(model.dim)] + ["verdict_in"],
                        [list(s.x) + [1.0 if s.verdict == "in" else 0.0]
                         for s in stable])
    if unstable:
        binio.write_csv(out / "unstable_points.csv",
                        [f"x{i+1}" for i in range(model.dim)],
                        [list(s.x) for s in unstable])
    _json_dump(out / "report.json", report)
    return {"atlas": atlas, "tangency": fit}


def run_pipeline(cfg: ExperimentConfig, out_dir: Optional[str] = None,
                 seed: Optional[int] = None, threads: int = 1) -> Path:
    """Execute the configured stages; returns the artifact directory."""
    if seed is not None:
        cfg = cfg.with_overrides(**{"run:seed": int(seed)})
    out = Path(out_dir if out_dir is not None
               else cfg.get("output", "directory"))
    out.mkdir(parents=True, exist_ok=True)
    with _Lock(out):
        (out / "config.txt").write_text(serialize_config(cfg), encoding="utf-8")
        model = build_model(cfg)
        path = _build_path(cfg, model, cfg.seed)
        state: dict[str, Any] = {}
        for stage in cfg.stages:
            stage_dir = out / stage
            stage_dir.mkdir(exist_ok=True)
            try:
                if stage == "simulate":
                    state.update(_stage_simulate(cfg, model, path, stage_dir))
                elif stage == "stationary":
                    state.update(_stage_stationary(cfg, model, path, stage_dir))
                elif stage == "spectrum":
                    state.update(_stage_spectrum(cfg, model, path, stage_dir,
                                                 state["station"]))
                elif stage == "manifolds":
                    state.update(_stage_manifolds(
                        cfg, model, path, stage_dir, state["station"],
                        state["gap"], state["split"]))
            except NotHyperbolicError:
                raise
            except StochflowError as exc:
                raise StageError(stage, exc) from exc
        manifest = {
            "seed": cfg.seed,
            "config_sha256": hashlib.sha256(
                serialize_config(cfg).encode()).hexdigest(),
            "artifacts": [
                {"path": str(p.relative_to(out)), "sha256": _sha256(p),
                 "bytes": p.stat().st_size}
                for p in sorted(out.rglob("*"))
                if p.is_file() and p.name not in ("manifest.json", ".lock")
            ],
        }
        _json_dump(out / "manifest.json", manifest)
    return out


# -- verification battery ------------------------------------------------------


def _random_grid_times(rng, h, hi=2.0):
    k_hi = max(1, round(hi / h))
    return int(rng.integers(1, k_hi + 1)) * h


def _cocycle_case(model: SemiflowModel, seed: int) -> tuple[float, float]:
    """State and Jacobian residuals of the cocycle identity for one draw."""
    rng = np.random.Generator(np.random.PCG64(seed))
    h = model.h
    t1 = _random_grid_times(rng, h)
    t2 = _random_grid_times(rng, h)
    x = ModeVec(0.3 * rng.standard_normal(model.dim) / np.sqrt(model.dim),
                model.operator)
    path = None
    if model.coupling != COUPLING_NONE:
        path = sample_path(model.covariance, 0.0, t1 + t2 + h, h, seed)
    full, jac_full = tangent_eval(model, t1 + t2, x, path)
    mid, jac_mid = tangent_eval(model, t1, x, path)
    end, jac_end = tangent_eval(
        model, t2, mid, path.shift(t1) if path is not None else None)
    state_res = float(np.linalg.norm(full.coords - end.coords)
                      / (1.0 + np.linalg.norm(full.coords)))
    comp = jac_end @ jac_mid
    jac_res = float(np.linalg.norm(jac_full - comp)
                    / (1.0 + np.linalg.norm(jac_full)))
    return state_res, jac_res


def verify_suite(cfg: ExperimentConfig, threads: int = 1):
    """Invariant battery; returns (all_passed, rows) where each row is
    (name, measured, threshold)."""
    rows: list[tuple[str, float, float]] = []
    model = build_model(cfg)
    h = model.h
    vtol = lambda key: float(cfg.get("verify", key))

    # Wiener shift group law on stored grids is exact by construction.
    cov = CovarianceSpec.diagonal([1.0, 0.5])
    p = sample_path(cov, 2.0, 2.0, 0.01, 99)
    p12 = p.shift(0.5).shift(0.75)
    p3 = p.shift(1.25)
    diff = max(float(np.max(np.abs(p12.value(s) - p3.value(s))))
               for s in np.arange(-50, 50) * 0.01)
    rows.append(("shift-group-law", diff, vtol("shift.tol")))

    cases = int(cfg.get("verify", "cocycle.cases"))
    seeds = list(range(1000, 1000 + cases))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(lambda s: _cocycle_case(model, s), seeds))
    else:
        results = [_cocycle_case(model, s) for s in seeds]
    rows.append(("cocycle-state", max(r[0] for r in results),
                 vtol("cocycle.tol")))
    rows.append(("cocycle-jacobian", max(r[1] for r in results),
                 vtol("jacobian.tol")))

    # Jacobian against centered finite differences.
    rng = np.random.Generator(np.random.PCG64(5))
    x0 = ModeVec(0.2 * rng.standard_normal(model.dim) / np.sqrt(model.dim),
                 model.operator)
    v = rng.standard_normal(model.dim)
    v /= np.linalg.norm(v)
    pfd = None
    if model.coupling != COUPLING_NONE:
        pfd = sample_path(model.covariance, 0.0, 1.0, h, 31415)
    t_fd = round(0.5 / h) * h
    _, jac = tangent_eval(model, t_fd, x0, pfd)
    delta = 1e-4
    from .semiflow import cocycle_eval as _ceval
    up = _ceval(model, t_fd, ModeVec(x0.coords + delta * v, model.operator), pfd)
    dn = _ceval(model, t_fd, ModeVec(x0.coords - delta * v, model.operator), pfd)
    fd = (up.coords - dn.coords) / (2 * delta)
    fd_err = float(np.linalg.norm(jac @ v - fd) / (1.0 + np.linalg.norm(fd)))
    rows.append(("jacobian-vs-fd", fd_err, vtol("jacobian.fd_tol")))

    # Contraction benchmark: eigenvalues (-1, 1), Lipschitz 0.2 coupling.
    bench_op = OperatorSpec(eigenvalues=(-1.0, 1.0))
    bench = SemiflowModel(operator=bench_op, drift=tanh_pair_drift(0.2, 2),
                          coupling="additive",
                          covariance=CovarianceSpec.diagonal([0.2, 0.2]),
                          h=2e-3)
    bp = sample_path(bench.covariance, 33.0, 33.0, bench.h, 17)
    station = solve_fixed_point(bench, bp, (-2.0, 2.0), tol=1e-6,
                                tail_tol=1e-6)
    ratios = station.residual_report.iterate_ratios
    cmu = contraction_constant(bench_op, 0.2)
    measured_ratio = max(ratios[1:-1]) if len(ratios) > 2 else max(ratios)
    rows.append(("contraction-ratio", float(measured_ratio),
                 cmu + vtol("contraction.slack")))

    # QR sum rule on the deterministic diagonal benchmark.
    op3 = OperatorSpec(eigenvalues=(1.0, 4.0, 9.0))
    lin = SemiflowModel(operator=op3, drift=zero_drift(), h=1e-2)
    rep = lyapunov_qr(lin, zero_vec(op3), None, 2.0, 0.1)
    lam_sum = float(np.sum(rep.exponents))
    _, full_jac = tangent_eval(lin, 2.0, zero_vec(op3), None)
    sign, logdet = np.linalg.slogdet(full_jac)
    rate = logdet / 2.0
    sum_err = abs(lam_sum - rate) / abs(rate)
    rows.append(("qr-sum-rule", float(sum_err), vtol("sumrule.tol")))

    ok = all(meas <= thr for _, meas, thr in rows)
    return ok, rows
