"""Command-line front end: ``fbmcontrol {sample-fbm,check-kernel,resolvent,steer,verify}``.

Every run writes CSV files (header row, shortest round-trip floats) into the
output directory and finishes with ``manifest.json``: the configuration
echo, package versions, wall-clock time and a SHA-256 checksum per file.

Exit codes: 0 success, 1 acceptance failures (``verify``), 2 invalid
configuration, 3 steering refused by the contraction gate, 4 numerical
failure. Failures also leave ``error.json`` in the output directory.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import platform
import sys
import time
import warnings
from importlib import metadata
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import acceptance
from ._validation import ConfigError, NumericalError
from .control_solver import DEFAULT_SEED, ControllabilityOperator, solve_steering
from .fbm_kernel import covariance, isometry_norm, kernel, kernel_dt, normalization_constant
from .fbm_sampler import FbmSampler, empirical_covariance
from .grid import SampledFunction, TimeGrid
from .resolvent import exponential_bound, lipschitz_constant, verify_resolvent_identity
from .system_model import GateWarning, build_system, heat_memory_example, load_spec

OUT_ENV = "FBMCONTROL_OUT"
DEFAULT_OUT = "fbmcontrol-out"

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_GATE, EXIT_NUMERICAL = 0, 1, 2, 3, 4


class GateRefused(Exception):
    """Steering was not attempted because the contraction gate failed."""


class ExperimentConfig(BaseModel):
    """Validated echo of one invocation."""

    model_config = ConfigDict(extra="forbid", frozen=True, strict=True)

    scenario: Literal["sample-fbm", "check-kernel", "resolvent", "steer", "verify"]
    spec_path: str | None = None
    seed: int = Field(default=DEFAULT_SEED, ge=0)
    out: str
    n_steps: int | None = Field(default=None, ge=2)
    modes: int | None = Field(default=None, ge=1)
    force: bool = False
    hurst: float | None = Field(default=None, gt=0, lt=0.5)
    paths: int | None = Field(default=None, ge=2)
    method: Literal["volterra", "cholesky"] | None = None


def _num(v):
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def csv_bytes(header, rows):
    """CSV text with a header row and shortest round-trip numbers."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_num(v) if isinstance(v, (int, float, np.integer, np.floating)) else v for v in row])
    return buf.getvalue().encode()


def _mode_header(first, modes):
    return [first] + [f"mode_{n}" for n in range(1, modes + 1)]


def _system(cfg):
    spec = load_spec(cfg.spec_path) if cfg.spec_path else heat_memory_example()
    update = {}
    if cfg.n_steps is not None:
        update["n_steps"] = cfg.n_steps
    if cfg.modes is not None:
        update["modes"] = cfg.modes
        for key in ("eigenvalues", "control_gains", "target"):
            if getattr(spec, key) is not None and len(getattr(spec, key)) != cfg.modes:
                raise ConfigError(f"--modes {cfg.modes} conflicts with the {key} list in the system spec")
    spec = spec.model_copy(update=update)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GateWarning)
        return build_system(spec)


def run_sample_fbm(cfg):
    h = 0.25 if cfg.hurst is None else cfg.hurst
    n = 32 if cfg.n_steps is None else cfg.n_steps
    m = 1000 if cfg.paths is None else cfg.paths
    sampler = FbmSampler(h, 1.0, n, cfg.method or "volterra").fit()
    paths = sampler.sample(m, cfg.seed, 0)
    nodes = sampler.grid_.nodes
    cov, se = empirical_covariance(paths)
    t = nodes[1:]
    exact = covariance(h, t[:, None], t[None, :])
    rows = [
        (i + 1, j + 1, t[i], t[j], cov[i, j], se[i, j], exact[i, j])
        for i in range(n) for j in range(i, n)
    ]
    files = {
        "paths.csv": csv_bytes([f"t_{j}" for j in range(n + 1)], [nodes, *paths]),
        "covariance.csv": csv_bytes(["i", "j", "t_i", "t_j", "empirical", "std_error", "exact"], rows),
    }
    z = float(np.max(np.abs(cov - exact) / np.where(se > 0, se, np.inf)))
    return files, f"sampled {m} paths (h={h}, n={n}); max |cov - exact| / SE = {z:.3f}", EXIT_OK


def run_check_kernel(cfg):
    h, t, s = acceptance.random_kernel_triples(cfg.seed)
    rows, bad = [], 0
    for hv, tv, sv in zip(h, t, s):
        c = normalization_constant(hv)
        k, kd = float(kernel(hv, tv, sv)), float(kernel_dt(hv, tv, sv))
        b4 = 2 * c * ((tv - sv) ** (hv - 0.5) + sv ** (hv - 0.5))
        b5 = c * (0.5 - hv) * (tv - sv) ** (hv - 1.5)
        bad += (abs(k) > b4) + (abs(kd) > b5)
        rows.append((hv, tv, sv, k, b4, kd, b5))
    hurst = 0.25 if cfg.hurst is None else cfg.hurst
    n = 512 if cfg.n_steps is None else cfg.n_steps
    grid = TimeGrid(1.0, n)
    iso = []
    for frac in (0.25, 0.5, 0.75, 1.0):
        i = int(round(frac * n))
        vals = np.zeros(n + 1)
        vals[:i] = 1.0
        norm = isometry_norm(hurst, SampledFunction(grid, vals, kind="step"))
        iso.append((grid.nodes[i], norm, grid.nodes[i] ** hurst))
    files = {
        "kernel_bounds.csv": csv_bytes(["h", "t", "s", "kernel", "kernel_bound", "kernel_dt", "kernel_dt_bound"], rows),
        "isometry.csv": csv_bytes(["t", "isometry_norm", "t_pow_h"], iso),
    }
    status = EXIT_OK if bad == 0 else EXIT_NUMERICAL
    return files, f"kernel bound violations: {bad} of {2 * len(rows)}", status


def run_resolvent(cfg):
    system = _system(cfg)
    fam = system.family
    n_mult, beta = exponential_bound(fam)
    x = np.arange(1, fam.modes + 1, dtype=float) ** -3.0
    summary = [
        ("sup_norm", fam.sup_norm),
        ("lipschitz_M", lipschitz_constant(fam)),
        ("exponential_N", n_mult),
        ("exponential_beta", beta),
        ("identity_residual", verify_resolvent_identity(fam, x)),
    ]
    files = {
        "resolvent.csv": csv_bytes(_mode_header("t", fam.modes), np.column_stack([fam.grid.nodes, fam.mode_values])),
        "resolvent_summary.csv": csv_bytes(["quantity", "value"], summary),
    }
    return files, f"resolvent table for {fam.modes} modes on {fam.grid.n_steps} steps", EXIT_OK


def run_steer(cfg):
    system = _system(cfg)
    gate = system.gate
    if not gate.passes and not cfg.force:
        raise GateRefused(
            f"contraction condition {gate.condition_value!r} >= 1/4 (K={gate.K!r}); rerun with --force"
        )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GateWarning)
        res = solve_steering(system, seed=cfg.seed)
    op = ControllabilityOperator.build(system.family, system.gains)
    n = system.modes
    summary = [
        ("condition_value", gate.condition_value),
        ("K", gate.K),
        ("gate_passes", int(gate.passes)),
        ("D", gate.D),
        ("M_L", gate.M_L),
        ("M_W", op.M_W_measured),
        ("iterations", res.iterations),
        ("converged", int(res.converged)),
        ("measured_ratio", res.measured_ratio),
        ("terminal_error", res.terminal_error),
        ("control_l2_norm", res.control.l2_norm),
    ]
    files = {
        "trajectory.csv": csv_bytes(_mode_header("t", n), res.trajectory.to_csv_rows()),
        "control.csv": csv_bytes(_mode_header("t", n), res.control.to_csv_rows()),
        "diagnostics.csv": csv_bytes(["iteration", "error", "ratio"], res.diagnostics_rows()),
        "summary.csv": csv_bytes(["quantity", "value"], summary),
    }
    note = "" if gate.passes else " (gate failed; forced, no convergence guarantee)"
    msg = f"steered in {res.iterations} iterations, terminal error {res.terminal_error:.3g}{note}"
    return files, msg, EXIT_OK


def battery_files(results, refinement):
    rows = [
        (r.number, r.title, r.status, " ".join(f"{k}={acceptance._fmt(v)}" for k, v in r.metrics.items()))
        for r in results
    ]
    errors, discrete = refinement
    ref_rows = [
        (k, n, errors[k, j], discrete[k, j])
        for k in range(errors.shape[0]) for j, n in enumerate(acceptance.STEER_LEVELS)
    ]
    return {
        "acceptance.csv": csv_bytes(["criterion", "title", "status", "metrics"], rows),
        "steering_refinement.csv": csv_bytes(["path", "n_steps", "verified_error", "discrete_error"], ref_rows),
    }


def run_verify(cfg):
    def once():
        acceptance.clear_caches()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", GateWarning)
            results = acceptance.run_battery(cfg.seed)
            refinement = acceptance._refinement(cfg.seed)
        return results, battery_files(results, refinement)

    results, files = once()
    _, again = once()
    results.append(acceptance.reproducibility_result(files, again))
    files = battery_files(results, acceptance._refinement(cfg.seed))
    table = "\n".join(r.line() for r in results)
    ok = all(r.passed for r in results)
    return files, table, EXIT_OK if ok else EXIT_FAILED


SCENARIOS = {
    "sample-fbm": run_sample_fbm,
    "check-kernel": run_check_kernel,
    "resolvent": run_resolvent,
    "steer": run_steer,
    "verify": run_verify,
}


def _versions():
    out = {"python": platform.python_version()}
    for dist in ("artifact", "numpy", "scipy", "scikit-learn", "pydantic"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = None
    return out


def write_outputs(out_dir, files):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "error.json").unlink(missing_ok=True)
    sums = {}
    for name in sorted(files):
        (out_dir / name).write_bytes(files[name])
        sums[name] = hashlib.sha256(files[name]).hexdigest()
    return sums


def write_manifest(out_dir, config, sums, elapsed, status):
    manifest = {
        "config": config,
        "versions": _versions(),
        "wall_clock_seconds": elapsed,
        "exit_code": status,
        "files": sums,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def build_parser():
    parser = argparse.ArgumentParser(prog="fbmcontrol", description=__doc__.splitlines()[0])
    parser.add_argument("scenario", choices=sorted(SCENARIOS))
    parser.add_argument("--config", help="JSON system spec (resolvent, steer)")
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED)
    parser.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT}/<scenario>)")
    parser.add_argument("--n-steps", type=int)
    parser.add_argument("--modes", type=int)
    parser.add_argument("--force", action="store_true", help="steer even if the contraction gate fails")
    parser.add_argument("--hurst", type=float, help="Hurst index (sample-fbm, check-kernel)")
    parser.add_argument("--paths", type=int, help="number of paths (sample-fbm)")
    parser.add_argument("--method", choices=["volterra", "cholesky"], help="sampler (sample-fbm)")
    return parser


def _error(out_dir, config, kind, exc, code, start):
    record = {"error": kind, "message": str(exc), "exit_code": code}
    text = json.dumps(record, sort_keys=True)
    print(text, file=sys.stderr)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        data = (text + "\n").encode()
        (out_dir / "error.json").write_bytes(data)
        sums = {"error.json": hashlib.sha256(data).hexdigest()}
        write_manifest(out_dir, config, sums, time.perf_counter() - start, code)
    except OSError:
        pass
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    out = args.out or os.environ.get(OUT_ENV) or str(Path(DEFAULT_OUT) / args.scenario)
    out_dir = Path(out)
    start = time.perf_counter()
    raw = {k: v for k, v in vars(args).items() if k != "config"} | {"spec_path": args.config, "out": out}
    try:
        cfg = ExperimentConfig(**raw)
        raw = cfg.model_dump(mode="json")
        files, message, status = SCENARIOS[cfg.scenario](cfg)
    except (ConfigError, ValidationError, OSError) as exc:
        return _error(out_dir, raw, "config", exc, EXIT_CONFIG, start)
    except GateRefused as exc:
        return _error(out_dir, raw, "gate", exc, EXIT_GATE, start)
    except (NumericalError, FloatingPointError) as exc:
        return _error(out_dir, raw, "numerical", exc, EXIT_NUMERICAL, start)
    print(message)
    sums = write_outputs(out_dir, files)
    write_manifest(out_dir, raw, sums, time.perf_counter() - start, status)
    return status


if __name__ == "__main__":
    sys.exit(main())
