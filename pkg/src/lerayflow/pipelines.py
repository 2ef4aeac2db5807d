"""Scripted experiment pipelines, run persistence and report generation.

A run writes ``results.json`` (tables and summary), binary field dumps and
``manifest.json`` into its output directory, then renders the report CSVs.
Report CSVs depend only on ``results.json`` and use ``repr`` floats, so an
identical configuration reproduces them byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
import resource
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from .config import ExperimentConfig, validate_config
from .decay_compact import decay_check
from .field_core import (
    VectorField,
    dump_field,
    fft_workers,
    field_bytes,
    holder_modulus,
    load_field,
    make_field,
    make_singular_data,
    norms,
)
from .kernels import autocontrol_constants
from .mild_solver import SchemeParams, force_from_solution, solve_global
from .scaling_control import (
    compare_damping_growth,
    damping_bound,
    data_norm_l2_derivatives,
    navier_params,
    param_rule_euler_limit,
    run_autocontrolled,
)
from .vorticity import bkm_integral, blowup_indicator, curl, velocity_bounds_from_vorticity

# Every table a pipeline can emit, with its column order.  Tables with no
# rows are still rendered with their header.
TABLES = {
    "windows": ("window", "t0", "iterations", "max_ratio", "converged", "data_norm",
                "damping", "growth", "smallness", "verdict"),
    "picard": ("window", "iteration", "increment", "ratio"),
    "autocontrol": ("nu", "window", "t0", "u_norm", "v_norm_end", "envelope_start",
                    "envelope_end"),
    "euler_limit": ("dt", "nu", "rho", "r", "identity", "sup_omega", "vorticity_constant",
                    "forcing_sup"),
    "indicator": ("dt", "t", "sup_omega", "bkm_integral"),
    "singular": ("stage", "window", "t", "sup", "holder", "lipschitz", "decay_c"),
    "damping": ("seed", "sample", "measured", "bound_total", "c_n", "smallness", "holds"),
}

PIPELINE_TABLES = {
    "nse_bounds": ("windows", "picard"),
    "autocontrol": ("autocontrol",),
    "euler_limit": ("euler_limit", "indicator"),
    "singular_reversal": ("singular", "picard"),
    "damping_audit": ("damping",),
}


class ReportError(RuntimeError):
    """A manifest refers to missing or altered artifacts."""


@dataclass
class PipelineResult:
    tables: Dict[str, list] = field(default_factory=dict)
    fields: Dict[str, object] = field(default_factory=dict)
    reports: List[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def _data(cfg: ExperimentConfig, grid) -> VectorField:
    v = make_field(grid, cfg.data.family, **cfg.data.params)
    if not isinstance(v, VectorField):
        raise ValueError(f"family {cfg.data.family!r} is not a velocity family")
    return v


def _scheme(cfg: ExperimentConfig, **kw) -> SchemeParams:
    s = cfg.scheme
    base = dict(nu=s.nu, dt=s.dt, rho=1.0 if s.rho is None else s.rho,
                r=1.0 if s.r is None else s.r, m=s.m, Nt=s.Nt, tol=s.tol,
                max_iter=s.max_iter, burgers_form=s.burgers_form, dealias=s.dealias)
    base.update(kw)
    return SchemeParams(**base)


def _picard_rows(reports) -> list:
    rows = []
    for rep in reports:
        for j, inc in enumerate(rep.increments):
            q = rep.ratios[j - 1] if j >= 1 and j - 1 < len(rep.ratios) else math.nan
            rows.append((rep.window, rep.first_counted + j, inc, q))
    return rows


def _nse_bounds(cfg: ExperimentConfig) -> PipelineResult:
    grid = cfg.make_grid()
    s = cfg.scheme
    if s.mu is not None:
        params = navier_params(s.mu, s.delta, s.nu, s.dt, m=s.m, Nt=s.Nt, tol=s.tol,
                               max_iter=s.max_iter, burgers_form=s.burgers_form,
                               dealias=s.dealias)
    else:
        params = _scheme(cfg)
    data = _data(cfg, grid)
    n = cfg.n_windows()
    traj = solve_global(data, params, n)
    rows = []
    for k, rep in enumerate(traj.reports):
        dn = data_norm_l2_derivatives(traj.state(k), s.m)
        v = compare_damping_growth(dn, params, s.delta)
        rows.append((k, float(traj.times[k]), rep.iterations, rep.max_ratio_from(2),
                     rep.converged, dn, v.damping, v.growth, v.smallness, v.verdict))
    verdicts = [r[-1] for r in rows if r[5] >= 1]
    return PipelineResult(
        tables={"windows": rows, "picard": _picard_rows(traj.reports)},
        fields={"final": traj.final},
        reports=[r.as_dict() for r in traj.reports],
        summary={"params": {"nu": params.nu, "dt": params.dt, "rho": params.rho, "r": params.r},
                 "all_damping_dominates": bool(verdicts)
                 and all(v == "damping_dominates" for v in verdicts)},
    )


def _autocontrol(cfg: ExperimentConfig) -> PipelineResult:
    grid = cfg.make_grid()
    s = cfg.scheme
    data = _data(cfg, grid)
    rho = s.rho
    if rho is None:
        nu_ref = min(v for v in cfg.nu_sweep if v > 0)
        rho = autocontrol_constants(grid.D, cfg.C0, nu_ref, cfg.horizon).rho
    rows, envelopes, ok = [], {}, True
    for nu in cfg.nu_sweep:
        rep = run_autocontrolled(data, cfg.C0, cfg.horizon, nu, rho=rho, dt=s.dt, m=s.m,
                                 Nt=s.Nt, tol=s.tol)
        ok = ok and rep.u_ok()
        envelopes[repr(nu)] = rep.envelope()
        for r in rep.rows:
            rows.append((nu, r.window, r.t0, r.u_norm, r.v_norm_end, r.envelope_start,
                         r.envelope_end))
    env = list(envelopes.values())
    identical = all(np.allclose(np.asarray(e, float), np.asarray(env[0], float), rtol=0,
                                atol=1e-9) for e in env)
    return PipelineResult(
        tables={"autocontrol": rows},
        summary={"rho": rho, "u_ok": ok, "envelope_identical": identical},
    )


def _euler_limit(cfg: ExperimentConfig) -> PipelineResult:
    grid = cfg.make_grid()
    s = cfg.scheme
    if grid.D != 3:
        raise ValueError("the euler_limit pipeline needs D = 3")
    data = _data(cfg, grid)
    rows, ind, fields, reports = [], [], {}, []
    for dt in cfg.dt_sweep:
        ep = param_rule_euler_limit(s.delta, dt, s.mu)
        params = _scheme(cfg, nu=ep.nu, dt=dt, rho=ep.rho, r=ep.r)
        n = max(1, int(round(cfg.horizon / dt)))
        traj = solve_global(data, params, n)
        reports.extend(r.as_dict() for r in traj.reports)
        sups = [float(np.max(np.sqrt(np.sum(curl(traj.state(k)).data ** 2, axis=0))))
                for k in range(len(traj.times))]
        bkm = bkm_integral(traj.times, sups)
        for t, sw, b in zip(traj.times, sups, bkm):
            ind.append((dt, float(t), sw, float(b)))
        omega = curl(traj.final)
        vb = velocity_bounds_from_vorticity(omega, 1)
        F = force_from_solution(traj, ep.nu, ep.r)
        rows.append((dt, ep.nu, ep.rho, ep.r, ep.identity, sups[-1], vb.ratio,
                     float(np.max(np.abs(F.fields)))))
        fields[f"final_dt{len(fields)}"] = traj.final
    summary = {"identity_ok": all(abs(r[4] - 4.0) <= 1e-12 for r in rows)}
    if len(ind) >= 4 and all(r[2] > 0 for r in ind):
        last = [r for r in ind if r[0] == cfg.dt_sweep[-1]]
        if len(last) >= 4:
            fit = blowup_indicator([r[1] for r in last], [r[2] for r in last])
            summary["indicator_label"] = fit.label
            summary["indicator_exponent"] = fit.exponent
    return PipelineResult(tables={"euler_limit": rows, "indicator": ind}, fields=fields,
                          reports=reports, summary=summary)


def _singular_reversal(cfg: ExperimentConfig) -> PipelineResult:
    grid = cfg.make_grid()
    spec = cfg.singular.to_spec()
    data = make_singular_data(grid, spec)
    m = cfg.scheme.m
    order = m * (grid.D + 1) - 1
    n = cfg.n_windows()

    def probe(stage, k, t, v):
        return (stage, k, t, norms(v, 0).sup, holder_modulus(v, 0.9), holder_modulus(v, 1.0),
                decay_check(v, order, 0, math.inf).c_max)

    rows = [probe("data", 0, 0.0, data)]
    back = solve_global(data, _scheme(cfg, direction="reversed"), n)
    rows += [probe("reversed", k, float(back.times[k]), back.state(k)) for k in range(1, n + 1)]
    fwd = solve_global(back.final, _scheme(cfg), n, t0=float(back.times[-1]))
    rows += [probe("forward", k, float(fwd.times[k]), fwd.state(k)) for k in range(1, n + 1)]
    gap = float(np.max(np.abs(fwd.final.data - data.data)))
    return PipelineResult(
        tables={"singular": rows, "picard": _picard_rows(back.reports + fwd.reports)},
        fields={"data": data, "reversed": back.final, "forward": fwd.final},
        reports=[r.as_dict() for r in back.reports + fwd.reports],
        summary={"roundtrip_sup_gap": gap},
    )


def _damping_audit(cfg: ExperimentConfig) -> PipelineResult:
    grid = cfg.make_grid()
    params = _scheme(cfg)
    rows = []
    for seed in cfg.seeds:
        for j in range(cfg.samples):
            kw = dict(cfg.data.params)
            kw["seed"] = int(seed) * 1_000_003 + j
            f = make_field(grid, cfg.data.family, **kw)
            db = damping_bound(f, params)
            rows.append((seed, j, db.measured, db.bound_total, db.c_n, db.smallness, db.holds))
    return PipelineResult(tables={"damping": rows},
                          summary={"violations": sum(1 for r in rows if not r[-1])})


PIPELINES: Dict[str, Callable[[ExperimentConfig], PipelineResult]] = {
    "nse_bounds": _nse_bounds,
    "autocontrol": _autocontrol,
    "euler_limit": _euler_limit,
    "singular_reversal": _singular_reversal,
    "damping_audit": _damping_audit,
}


# --------------------------------------------------------------------------
# persistence

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _jsonable(x):
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def run(config, output: Optional[str] = None) -> dict:
    """Validate, run the configured pipeline, persist artifacts and the report.

    Returns the manifest dictionary, also written to ``manifest.json``.
    """
    cfg = validate_config(config)
    out = Path(output or cfg.output)
    (out / "fields").mkdir(parents=True, exist_ok=True)
    t_start = time.perf_counter()
    result = PIPELINES[cfg.pipeline](cfg)
    wall = time.perf_counter() - t_start

    files = []
    results_path = out / "results.json"
    tables = {name: [list(r) for r in result.tables.get(name, [])]
              for name in PIPELINE_TABLES[cfg.pipeline]}
    results_path.write_text(json.dumps(_jsonable(
        {"pipeline": cfg.pipeline, "tables": tables, "summary": result.summary}),
        indent=1, allow_nan=True))
    files.append(results_path)
    for name, f in result.fields.items():
        p = out / "fields" / f"{name}.bin"
        dump_field(f, p)
        files.append(p)
    (out / "config.json").write_text(cfg.canonical_json())
    files.append(out / "config.json")

    manifest = {
        "schema_version": cfg.schema_version,
        "pipeline": cfg.pipeline,
        "config_hash": cfg.config_hash(),
        "files": [{"path": str(p.relative_to(out)), "sha256": _sha256(p)} for p in files],
        "reports": _jsonable(result.reports),
        "summary": _jsonable(result.summary),
        "telemetry": {
            "wall_clock_s": wall,
            "peak_rss_mb": resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0,
            "fft_workers": fft_workers(),
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }
    mpath = out / "manifest.json"
    mpath.write_text(json.dumps(manifest, indent=1, allow_nan=True))
    report(mpath)
    return manifest


def check_manifest(manifest_path) -> dict:
    """Load a manifest and verify that every listed file exists and round-trips."""
    mpath = Path(manifest_path)
    if mpath.is_dir():
        mpath = mpath / "manifest.json"
    if not mpath.exists():
        raise ReportError(f"manifest not found: {mpath}")
    manifest = json.loads(mpath.read_text())
    root = mpath.parent
    for entry in manifest["files"]:
        p = root / entry["path"]
        if not p.exists():
            raise ReportError(f"missing artifact: {entry['path']}")
        if _sha256(p) != entry["sha256"]:
            raise ReportError(f"artifact changed since the run: {entry['path']}")
        if p.suffix == ".bin":
            try:
                f = load_field(p)
            except ValueError as exc:
                raise ReportError(f"artifact does not load: {exc}") from exc
            if not p.read_bytes().endswith(field_bytes(f)):
                raise ReportError(f"artifact does not round-trip: {entry['path']}")
    manifest["_root"] = str(root)
    return manifest


def report(manifest_path) -> List[Path]:
    """Render ``report/<table>.csv`` and ``report/summary.json`` from a run."""
    manifest = check_manifest(manifest_path)
    root = Path(manifest["_root"])
    results = json.loads((root / "results.json").read_text())
    rdir = root / "report"
    rdir.mkdir(exist_ok=True)
    written = []
    for name in PIPELINE_TABLES[results["pipeline"]]:
        p = rdir / f"{name}.csv"
        write_csv(p, TABLES[name], results["tables"].get(name, []))
        written.append(p)
    p = rdir / "summary.json"
    p.write_text(json.dumps(results["summary"], indent=1, sort_keys=True, allow_nan=True))
    written.append(p)
    return written
