"""Experiment configuration: plain line-oriented key/value text.

The format is INI-style sections with dotted keys and no expressions;
every value round-trips exactly (floats are serialised with repr).
``parse_config(serialize_config(c)) == c`` is a contract, relied on by
the artifact manifests.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from .errors import ConfigError
from .noise import CovarianceSpec
from .semiflow import (
    COUPLING_ADDITIVE,
    COUPLING_DIAGONAL,
    COUPLING_NONE,
    NonlinearitySpec,
    SemiflowModel,
    bounded_lipschitz_drift,
    burgers_drift,
    dissipative_reaction_drift,
    mode_callable_drift,
    zero_drift,
)
from .spectral import OperatorSpec, dirichlet_box_operator, dirichlet_interval_operator

_FLOATS = "floats"
_STRINGS = "strings"

SCHEMA: dict[str, dict[str, Any]] = {
    "model": {
        "operator.kind": str,            # explicit | interval-laplacian | box-laplacian
        "operator.eigenvalues": _FLOATS,
        "operator.modes": int,
        "operator.viscosity": float,
        "operator.dims": int,
        "nonlinearity.kind": str,        # zero | tanh-pair | saddle-quadratic |
                                         # dissipative | burgers
        "nonlinearity.amplitude": float,
        "nonlinearity.alpha": float,
        "noise.coupling": str,
        "noise.sigma": _FLOATS,
        "noise.tail_bound": float,
        "stepper.h": float,
        "stepper.collocation": int,
        "stepper.state_cap": float,
    },
    "run": {
        "seed": int,
        "path.h": float,
        "path.t_back": float,
        "path.t_fwd": float,
        "simulate.duration": float,
        "simulate.x0": _FLOATS,
        "stationary.method": str,        # contraction | pullback | origin
        "stationary.window": float,
        "stationary.tol": float,
        "stationary.tail_tol": float,
        "stationary.residual_horizon": float,
        "stationary.pullback_time": float,
        "stationary.sync_tol": float,
        "spectrum.horizon": float,
        "spectrum.reorth_every": float,
        "spectrum.count": int,
        "spectrum.zero_band": float,
        "spectrum.split_back": float,
        "spectrum.split_fwd": float,
        "spectrum.angle_tol": float,
        "dichotomy.delta1": float,
        "dichotomy.delta2": float,
        "dichotomy.horizon": float,
        "dichotomy.samples": int,
        "manifolds.n_max": int,
        "manifolds.rho1": float,
        "manifolds.rho2": float,
        "manifolds.t_back": float,
        "manifolds.n_stable": int,
        "manifolds.n_unstable": int,
        "manifolds.t_invariance": _FLOATS,
    },
    "pipeline": {
        "stages": _STRINGS,
    },
    "output": {
        "directory": str,
        "formats": _STRINGS,
    },
    "verify": {
        "cocycle.cases": int,
        "cocycle.tol": float,
        "jacobian.tol": float,
        "jacobian.fd_tol": float,
        "shift.tol": float,
        "contraction.slack": float,
        "sumrule.tol": float,
    },
}

DEFAULTS: dict[str, dict[str, Any]] = {
    "model": {
        "operator.kind": "explicit",
        "operator.eigenvalues": [1.0, 4.0],
        "nonlinearity.kind": "zero",
        "noise.coupling": "none",
        "stepper.h": 1e-2,
        "stepper.state_cap": 1e6,
    },
    "run": {
        "seed": 2024,
        "path.t_back": 0.0,
        "path.t_fwd": 10.0,
        "simulate.duration": 1.0,
        "stationary.method": "contraction",
        "stationary.window": 4.0,
        "stationary.tol": 1e-6,
        "stationary.tail_tol": 1e-7,
        "stationary.residual_horizon": 2.0,
        "stationary.pullback_time": 2.0,
        "stationary.sync_tol": 1e-6,
        "spectrum.horizon": 20.0,
        "spectrum.reorth_every": 0.1,
        "spectrum.zero_band": 1e-3,
        "spectrum.split_back": 10.0,
        "spectrum.split_fwd": 10.0,
        "spectrum.angle_tol": 1e-5,
        "dichotomy.samples": 4,
        "manifolds.n_max": 6,
        "manifolds.t_back": 12.0,
        "manifolds.n_stable": 8,
        "manifolds.n_unstable": 4,
        "manifolds.t_invariance": [1.0, 2.0],
    },
    "pipeline": {
        "stages": ["simulate", "stationary", "spectrum"],
    },
    "output": {
        "directory": "artifacts",
        "formats": ["json", "csv", "bin"],
    },
    "verify": {
        "cocycle.cases": 12,
        "cocycle.tol": 1e-9,
        "jacobian.tol": 1e-8,
        "jacobian.fd_tol": 1e-4,
        "shift.tol": 0.0,
        "contraction.slack": 0.05,
        "sumrule.tol": 1e-6,
    },
}

_STAGE_ORDER = ("simulate", "stationary", "spectrum", "manifolds")
_STAGE_DEPS = {"spectrum": "stationary", "manifolds": "spectrum"}


@dataclass(frozen=True)
class ExperimentConfig:
    sections: dict[str, dict[str, Any]] = field(default_factory=dict)

    def get(self, section: str, key: str, default: Any = None) -> Any:
        val = self.sections.get(section, {}).get(key)
        if val is not None:
            return val
        dval = DEFAULTS.get(section, {}).get(key)
        return dval if dval is not None else default

    def with_overrides(self, **paths: Any) -> "ExperimentConfig":
        """Override values given as ``{'section:key': value}`` pairs."""
        new = {s: dict(kv) for s, kv in self.sections.items()}
        for path, value in paths.items():
            section, key = path.split(":", 1)
            new.setdefault(section, {})[key] = value
        return ExperimentConfig(new)

    @property
    def stages(self) -> list[str]:
        return list(self.get("pipeline", "stages"))

    @property
    def seed(self) -> int:
        return int(self.get("run", "seed"))


def _to_text(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(_to_text(v) for v in value)
    return str(value)


def _from_text(raw: str, kind: Any, section: str, key: str) -> Any:
    raw = raw.strip()
    try:
        if kind is _FLOATS:
            return [float(p) for p in raw.split(",") if p.strip() != ""]
        if kind is _STRINGS:
            return [p.strip() for p in raw.split(",") if p.strip() != ""]
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"cannot parse {raw!r}: {exc}", section, key)


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}")
    sections: dict[str, dict[str, Any]] = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError("unknown section", section)
        out = {}
        for key, raw in cp.items(section):
            kind = SCHEMA[section].get(key)
            if kind is None:
                raise ConfigError("unknown key", section, key)
            out[key] = _from_text(raw, kind, section, key)
        sections[section] = out
    cfg = ExperimentConfig(sections)
    validate_config(cfg)
    return cfg


def serialize_config(cfg: ExperimentConfig) -> str:
    buf = io.StringIO()
    for section in SCHEMA:
        kv = cfg.sections.get(section)
        if not kv:
            continue
        buf.write(f"[{section}]\n")
        for key in sorted(kv):
            buf.write(f"{key} = {_to_text(kv[key])}\n")
        buf.write("\n")
    return buf.getvalue()


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read configuration: {exc}")


def validate_config(cfg: ExperimentConfig) -> None:
    for section, kv in cfg.sections.items():
        for key, value in kv.items():
            last = key.split(".")[-1]
            if ("tol" in last or last == "zero_band") and \
                    isinstance(value, float) and value <= 0:
                raise ConfigError("tolerance must be positive", section, key)
    h = cfg.get("model", "stepper.h")
    if h is not None and h <= 0:
        raise ConfigError("step must be positive", "model", "stepper.h")
    path_h = cfg.get("run", "path.h")
    if path_h is not None and h is not None and path_h != h:
        raise ConfigError(
            f"path step {path_h} does not match stepper.h {h}; all time "
            f"stepping is grid-aligned", "run", "path.h")
    stages = cfg.stages
    for s in stages:
        if s not in _STAGE_ORDER:
            raise ConfigError(f"unknown stage {s!r}", "pipeline", "stages")
    order = [s for s in _STAGE_ORDER if s in stages]
    if order != stages:
        raise ConfigError("stages out of order", "pipeline", "stages")
    for s in stages:
        dep = _STAGE_DEPS.get(s)
        if dep and dep not in stages:
            raise ConfigError(f"stage {s!r} requires {dep!r}", "pipeline", "stages")
    kind = cfg.get("model", "operator.kind")
    if kind not in ("explicit", "interval-laplacian", "box-laplacian"):
        raise ConfigError(f"unknown operator kind {kind!r}", "model", "operator.kind")
    nk = cfg.get("model", "nonlinearity.kind")
    if nk not in ("zero", "tanh-pair", "saddle-quadratic", "dissipative", "burgers"):
        raise ConfigError(f"unknown nonlinearity {nk!r}", "model",
                          "nonlinearity.kind")
    coupling = cfg.get("model", "noise.coupling")
    if coupling not in (COUPLING_NONE, COUPLING_ADDITIVE, COUPLING_DIAGONAL):
        raise ConfigError(f"unknown coupling {coupling!r}", "model",
                          "noise.coupling")
    method = cfg.get("run", "stationary.method")
    if method not in ("contraction", "pullback", "origin"):
        raise ConfigError(f"unknown stationary method {method!r}", "run",
                          "stationary.method")


# -- model construction -------------------------------------------------------


def build_operator(cfg: ExperimentConfig) -> OperatorSpec:
    kind = cfg.get("model", "operator.kind")
    if kind == "explicit":
        ev = cfg.get("model", "operator.eigenvalues")
        return OperatorSpec(eigenvalues=tuple(ev))
    modes = int(cfg.get("model", "operator.modes", 16))
    visc = float(cfg.get("model", "operator.viscosity", 0.5))
    if kind == "interval-laplacian":
        return dirichlet_interval_operator(modes, visc)
    return dirichlet_box_operator(modes, int(cfg.get("model", "operator.dims", 2)),
                                  visc)


def tanh_pair_drift(amplitude: float, dim: int) -> NonlinearitySpec:
    """Bounded Lipschitz coupling: amplitude * tanh of the reversed modes.

    The reversal makes the coupling genuinely cross-modal; the Jacobian
    is a reversal permutation scaled by amplitude * sech^2, so the
    Lipschitz constant is exactly the amplitude.
    """

    def func(v):
        return amplitude * np.tanh(v[::-1])

    def dfunc(v):
        n = len(v)
        jac = np.zeros((n, n))
        sech2 = 1.0 / np.cosh(v[::-1]) ** 2
        jac[np.arange(n), np.arange(n)[::-1]] = amplitude * sech2
        return jac

    return bounded_lipschitz_drift(func, dfunc,
                                   sup_bound=amplitude * np.sqrt(dim),
                                   lipschitz=amplitude)


def _saddle_quadratic() -> NonlinearitySpec:
    """Two-mode coupling (v2^2, 0): the canonical saddle benchmark."""

    def func(v):
        out = np.zeros_like(v)
        out[0] = v[1] ** 2
        return out

    def dfunc(v):
        return np.array([[0.0, 2.0 * v[1]], [0.0, 0.0]])

    return mode_callable_drift(func, dfunc)


def build_drift(cfg: ExperimentConfig, dim: int) -> NonlinearitySpec:
    kind = cfg.get("model", "nonlinearity.kind")
    if kind == "zero":
        return zero_drift()
    if kind == "tanh-pair":
        amp = float(cfg.get("model", "nonlinearity.amplitude", 0.2))
        return tanh_pair_drift(amp, dim)
    if kind == "saddle-quadratic":
        if dim != 2:
            raise ConfigError("saddle-quadratic needs 2 modes", "model",
                              "nonlinearity.kind")
        return _saddle_quadratic()
    if kind == "dissipative":
        return dissipative_reaction_drift(
            float(cfg.get("model", "nonlinearity.alpha", 2.0)))
    return burgers_drift()


def build_covariance(cfg: ExperimentConfig, dim: int) -> Optional[CovarianceSpec]:
    coupling = cfg.get("model", "noise.coupling")
    if coupling == COUPLING_NONE:
        return None
    sigma = cfg.get("model", "noise.sigma")
    if sigma is None:
        raise ConfigError("noise coupling requires noise.sigma", "model",
                          "noise.sigma")
    if len(sigma) != dim:
        raise ConfigError(f"noise.sigma needs {dim} entries", "model",
                          "noise.sigma")
    return CovarianceSpec.diagonal(sigma,
                                   tail_bound=float(cfg.get("model",
                                                            "noise.tail_bound", 0.0)))


def build_model(cfg: ExperimentConfig) -> SemiflowModel:
    op = build_operator(cfg)
    drift = build_drift(cfg, op.dim)
    cov = build_covariance(cfg, op.dim)
    colloc = cfg.get("model", "stepper.collocation")
    return SemiflowModel(
        operator=op, drift=drift,
        coupling=cfg.get("model", "noise.coupling"),
        covariance=cov, h=float(cfg.get("model", "stepper.h")),
        collocation=int(colloc) if colloc is not None else None,
        state_cap=float(cfg.get("model", "stepper.state_cap")))


# -- presets -------------------------------------------------------------------

PRESETS: dict[str, str] = {
    "ou-linear": """
[model]
operator.kind = explicit
operator.eigenvalues = 1.0, 4.0
nonlinearity.kind = zero
noise.coupling = additive
noise.sigma = 0.3, 0.15
stepper.h = 0.001

[run]
seed = 2024
path.t_back = 42.0
path.t_fwd = 42.0
simulate.duration = 2.0
stationary.method = contraction
stationary.window = 8.0
stationary.tol = 1e-06
stationary.tail_tol = 1e-07
stationary.residual_horizon = 5.0
spectrum.horizon = 20.0
spectrum.reorth_every = 0.1
spectrum.split_back = 8.0
spectrum.split_fwd = 8.0
manifolds.n_max = 6
manifolds.n_stable = 6
manifolds.t_invariance = 1.0

[pipeline]
stages = simulate, stationary, spectrum, manifolds

[output]
directory = artifacts
""",
    "saddle-oracle": """
[model]
operator.kind = explicit
operator.eigenvalues = -1.0, 1.0
nonlinearity.kind = saddle-quadratic
noise.coupling = none
stepper.h = 0.001

[run]
seed = 7
path.t_back = 0.0
path.t_fwd = 1.0
simulate.duration = 1.0
stationary.method = origin
stationary.window = 26.0
spectrum.horizon = 20.0
spectrum.reorth_every = 0.1
spectrum.split_back = 12.0
spectrum.split_fwd = 12.0
manifolds.n_max = 6
manifolds.rho1 = 0.1
manifolds.rho2 = 0.1
manifolds.t_back = 12.0
manifolds.n_stable = 8
manifolds.n_unstable = 4
manifolds.t_invariance = 1.0, 2.0

[pipeline]
stages = simulate, stationary, spectrum, manifolds

[output]
directory = artifacts
""",
    "burgers-highnu": """
[model]
operator.kind = interval-laplacian
operator.modes = 32
operator.viscosity = 1.0
nonlinearity.kind = burgers
noise.coupling = additive
noise.sigma = 0.5, 0.25, 0.16666666666666666, 0.125, 0.1, 0.08333333333333333, 0.07142857142857142, 0.0625, 0.05555555555555555, 0.05, 0.045454545454545456, 0.041666666666666664, 0.038461538461538464, 0.03571428571428571, 0.03333333333333333, 0.03125, 0.029411764705882353, 0.027777777777777776, 0.02631578947368421, 0.025, 0.023809523809523808, 0.022727272727272728, 0.021739130434782608, 0.020833333333333332, 0.02, 0.019230769230769232, 0.018518518518518517, 0.017857142857142856, 0.017241379310344827, 0.016666666666666666, 0.016129032258064516, 0.015625
noise.tail_bound = 0.03
stepper.h = 0.005

[run]
seed = 11
path.t_back = 4.0
path.t_fwd = 42.0
simulate.duration = 2.0
stationary.method = pullback
stationary.pullback_time = 2.5
stationary.sync_tol = 1e-06
stationary.window = 1.0
spectrum.horizon = 40.0
spectrum.reorth_every = 0.1
spectrum.count = 4
spectrum.split_back = 4.0
spectrum.split_fwd = 4.0

[pipeline]
stages = simulate, stationary, spectrum

[output]
directory = artifacts
""",
}


def preset_config(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(
            f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
    return parse_config(PRESETS[name])
