"""Command-line entry point.

Subcommands: ``run`` (execute a pipeline), ``verify`` (invariant
battery), ``presets`` (list/show built-ins), ``inspect`` (pretty-print
an artifact). Exit codes: 0 success, 2 configuration error, 3 stage
failure, 4 non-hyperbolic abort.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import binio
from .config import PRESETS, load_config, preset_config, serialize_config
from .errors import ConfigError, NotHyperbolicError, StageError, StochflowError
from .noise import WienerPath
from .pipeline import run_pipeline, verify_suite

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_NOT_HYPERBOLIC = 4


def _load(args) -> "ExperimentConfig":
    if args.preset and args.config:
        raise ConfigError("give either --config or --preset, not both")
    if args.preset:
        return preset_config(args.preset)
    if args.config:
        return load_config(args.config)
    raise ConfigError("one of --config PATH or --preset NAME is required")


def _cmd_run(args) -> int:
    cfg = _load(args)
    out = run_pipeline(cfg, out_dir=args.out, seed=args.seed,
                       threads=args.threads)
    print(f"pipeline complete; artifacts in {out}")
    manifest = json.loads((out / "manifest.json").read_text())
    print(f"{len(manifest['artifacts'])} artifacts, "
          f"config sha256 {manifest['config_sha256'][:12]}")
    stat = out / "stationary" / "report.json"
    if stat.exists():
        rep = json.loads(stat.read_text())
        parts = [f"method={rep.get('method')}"]
        if rep.get("condition_mu") is not None:
            parts.append(f"condition_mu={rep['condition_mu']:.6g}")
        parts.append(f"iterations={rep.get('iterations')}")
        if rep.get("stationarity_residual") is not None:
            parts.append(f"residual={rep['stationarity_residual']:.3e}")
        if rep.get("sync_gap") is not None:
            parts.append(f"sync_gap={rep['sync_gap']:.3e}")
        print("stationary: " + ", ".join(parts))
    spect = out / "spectrum" / "report.json"
    if spect.exists():
        rep = json.loads(spect.read_text())
        lams = rep["lyapunov"]["exponents"]
        shown = ", ".join(f"{v:.6g}" for v in lams[:6])
        more = f", ... ({len(lams)} total)" if len(lams) > 6 else ""
        print(f"spectrum: exponents [{shown}{more}], "
              f"hyperbolic={rep['gap']['hyperbolic']}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    cfg = _load(args)
    ok, rows = verify_suite(cfg, threads=args.threads)
    width = max(len(r[0]) for r in rows) + 2
    print(f"{'check'.ljust(width)}{'measured':>14}{'threshold':>14}  status")
    for name, measured, threshold in rows:
        status = "pass" if measured <= threshold else "FAIL"
        print(f"{name.ljust(width)}{measured:>14.3e}{threshold:>14.3e}  {status}")
    return EXIT_OK if ok else EXIT_STAGE


def _cmd_presets(args) -> int:
    if args.show:
        cfg = preset_config(args.show)
        sys.stdout.write(serialize_config(cfg))
    else:
        for name in sorted(PRESETS):
            print(name)
    return EXIT_OK


def _inspect_bin(path: Path) -> None:
    blob = path.read_bytes()
    magic = blob[:8]
    if magic == b"SFSNAP01":
        arr = binio.load_array(blob)
        print(f"snapshot {path.name}: shape {arr.shape}")
        print(f"  min {np.min(arr):.6g}  max {np.max(arr):.6g}  "
              f"norm {np.linalg.norm(arr):.6g}")
    elif magic == b"SFPATH01":
        p = WienerPath.from_bytes(blob)
        print(f"path {path.name}: {p.mode_count} modes, h={p.h}, "
              f"window [{p.t_min:.6g}, {p.t_max:.6g}], anchor {p.anchor}, "
              f"seed {p.seed}")
    elif magic == b"SFSTAT01":
        from .spectral import OperatorSpec
        import struct
        fmt = "<8sIIqddd"
        _, _, n, w, h, t0, mu = struct.unpack(fmt, blob[:struct.calcsize(fmt)])
        print(f"stationary point {path.name}: {n} modes, {w} window points, "
              f"h={h}, t0={t0}, condition_mu={mu}")
    else:
        print(f"{path.name}: unrecognised binary ({len(blob)} bytes)")


def _cmd_inspect(args) -> int:
    path = Path(args.artifact)
    if not path.exists():
        raise ConfigError(f"no such artifact: {path}")
    if path.suffix == ".json":
        payload = json.loads(path.read_text())
        print(json.dumps(payload, sort_keys=True, indent=2))
    elif path.suffix == ".csv":
        lines = path.read_text().splitlines()
        for line in lines[: args.rows + 1]:
            print(line)
        if len(lines) > args.rows + 1:
            print(f"... ({len(lines) - 1} rows total)")
    elif path.suffix in (".bin", ".dat"):
        _inspect_bin(path)
    else:
        sys.stdout.write(path.read_text())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="stochflow",
        description="stochastic semiflow toolkit: stationary points, "
                    "Lyapunov spectra, local invariant manifolds")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="configuration file path")
        p.add_argument("--preset", help="built-in preset name")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("--out", help="artifact directory")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for ensemble checks")

    p_run = sub.add_parser("run", help="execute the configured pipeline")
    add_common(p_run)
    p_run.set_defaults(fn=_cmd_run)

    p_ver = sub.add_parser("verify", help="run the invariant battery")
    add_common(p_ver)
    p_ver.set_defaults(fn=_cmd_verify)

    p_pre = sub.add_parser("presets", help="list built-in presets")
    p_pre.add_argument("--show", help="print one preset's configuration")
    p_pre.set_defaults(fn=_cmd_presets)

    p_ins = sub.add_parser("inspect", help="pretty-print an artifact")
    p_ins.add_argument("artifact")
    p_ins.add_argument("--rows", type=int, default=10,
                       help="CSV rows to show")
    p_ins.set_defaults(fn=_cmd_inspect)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NotHyperbolicError as exc:
        print(f"not hyperbolic: {exc}", file=sys.stderr)
        return EXIT_NOT_HYPERBOLIC
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except StochflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
