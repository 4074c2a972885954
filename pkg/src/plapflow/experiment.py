"""Experiment configuration, execution and CSV/JSON reporting.

A config is a JSON object::

    {
      "name": "genus2-p2.5",
      "mesh": {"kind": "genus2", "params": {}}          # or {"path": "surface.obj"}
      "p": 2.5,
      "flow": {"kind": "normalized_ricci", "dt": 0.01, "t_end": 5.0,
               "sample_stride": 10},
      "eigen": {"restarts": 8, "rng_seed": 0},
      "quantities": "auto",
      "initial_u": {"type": "random", "amplitude": 0.2, "seed": 1},
      "tol": 1e-6,
      "output": {"dir": "out", "prefix": "genus2-p2.5", "figures": true}
    }

``PLAPFLOW_OUTPUT_DIR`` overrides ``output.dir``.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import BadParams, PFlowError
from .flow import FlowSpec, normalize_map, run
from .geometry import ConformalMetric, check_p
from .meshes import generate_mesh, load_mesh
from .monotone import (
    UNNORMALIZED_QUANTITIES,
    BoundParams,
    QuantitySeries,
    assert_monotone,
    check_curvature_bounds,
    decreasing_quantity,
    increasing_quantity,
    predicted_rate,
    unnormalized_quantity,
)
from .peigen import EigenConfig

__all__ = [
    "ExperimentConfig",
    "ExperimentResult",
    "OUTPUT_DIR_ENV",
    "auto_quantities",
    "config_hash",
    "initial_field",
    "load_config",
    "quantity_direction",
    "run_experiment",
]

OUTPUT_DIR_ENV = "PLAPFLOW_OUTPUT_DIR"
CSV_BASE_COLUMNS = ["t", "lambda", "converged", "r", "R_min", "R_max", "area"]
NORMALIZED_QUANTITIES = {"increasing": "increasing", "decreasing": "decreasing"}
RATE_TOLERANCE = 0.05


@dataclass
class ExperimentConfig:
    mesh: dict
    p: float
    flow: dict
    eigen: dict = field(default_factory=dict)
    quantities: object = "auto"
    initial_u: dict = field(default_factory=lambda: {"type": "zero"})
    tol: float = 1e-6
    output: dict = field(default_factory=dict)
    name: str = "experiment"

    def __post_init__(self):
        self.p = check_p(self.p)
        if not isinstance(self.mesh, dict) or not ("kind" in self.mesh or "path" in self.mesh):
            raise BadParams("mesh needs 'kind' (builtin) or 'path'")
        if not isinstance(self.flow, dict) or "kind" not in self.flow:
            raise BadParams("flow needs a 'kind'")
        if self.quantities != "auto":
            if isinstance(self.quantities, str) or not all(
                q in NORMALIZED_QUANTITIES or q in UNNORMALIZED_QUANTITIES for q in self.quantities
            ):
                raise BadParams(f"unknown quantities {self.quantities!r}")
        if self.tol < 0:
            raise BadParams("tol must be non-negative")

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise BadParams(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self):
        return asdict(self)

    def flow_spec(self):
        spec = dict(self.flow)
        return FlowSpec(**spec)

    def eigen_config(self):
        cfg = dict(self.eigen)
        cfg["p"] = self.p
        if "eps_schedule" in cfg:
            cfg["eps_schedule"] = tuple(cfg["eps_schedule"])
        return EigenConfig(**cfg)


def load_config(path):
    with open(path) as fh:
        return ExperimentConfig.from_dict(json.load(fh))


def config_hash(config):
    blob = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def resolve_mesh(spec):
    if "path" in spec:
        return load_mesh(spec["path"])
    return generate_mesh(spec["kind"], **spec.get("params", {}))


def smooth_random_field(mesh, amplitude, seed=0, smoothing=2.0):
    """White noise passed through implicit heat steps, scaled to ``max|u| = amplitude``.

    ``smoothing`` is the heat-step size in units of the mean vertex area;
    two steps are taken.
    """
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(mesh.vertex_count)
    if smoothing > 0:
        A0 = mesh.vertex_areas
        tau = smoothing * float(A0.mean())
        lu = splu((sparse.diags(A0) + tau * mesh.stiffness).tocsc())
        for _ in range(2):
            u = lu.solve(A0 * u)
    u -= u.mean()
    peak = float(np.max(np.abs(u)))
    return u * (amplitude / peak) if peak > 0 else u


def initial_field(mesh, spec):
    kind = (spec or {"type": "zero"}).get("type", "zero")
    if kind == "zero":
        return np.zeros(mesh.vertex_count)
    if kind == "random":
        return smooth_random_field(mesh, float(spec.get("amplitude", 0.1)), int(spec.get("seed", 0)),
                                   float(spec.get("smoothing", 2.0)))
    if kind == "file":
        u = np.loadtxt(spec["path"], dtype=np.float64).ravel()
        if u.shape != (mesh.vertex_count,):
            raise BadParams(f"initial_u file has {u.size} values, mesh has {mesh.vertex_count} vertices")
        return u
    raise BadParams(f"unknown initial_u type {kind!r}")


def auto_quantities(flow_kind, params):
    """Quantity names applicable to a flow kind and initial data."""
    if flow_kind == "normalized_ricci":
        return ["increasing", "decreasing"]
    if flow_kind == "unnormalized_ricci":
        out = []
        if params.rho0 > 0:
            out.append("ricci_increasing")
        if params.sigma0 > 0:
            out.append("ricci_decreasing")
        return out
    if flow_kind == "yamabe_2d":
        return ["yamabe_increasing", "yamabe_decreasing"] if params.rho0 > 0 else []
    return []


def quantity_direction(name):
    return NORMALIZED_QUANTITIES.get(name) or UNNORMALIZED_QUANTITIES[name]


def evaluate_quantity(name, lam, t, params):
    if name == "increasing":
        return increasing_quantity(lam, t, params)
    if name == "decreasing":
        return decreasing_quantity(lam, t, params)
    return unnormalized_quantity(lam, t, params, name)


def branch_label(params):
    sign = {-1: "chi<0", 0: "chi=0", 1: "chi>0"}[int(np.sign(params.chi))]
    return f"{sign}, {'p>=2' if params.p >= 2 else '1<p<2'}"


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    return format(float(x), ".17g")


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    trajectory: object
    params: BoundParams
    report: dict
    csv_text: str
    paths: dict


def _rate_check(trajectory, kind, p):
    """Predicted instantaneous rate vs centered differences of the sampled eigenvalue."""
    t = trajectory.times
    rows = []
    for i in range(1, len(t) - 1):
        e_prev, e, e_next = trajectory.eigen[i - 1], trajectory.eigen[i], trajectory.eigen[i + 1]
        if not (e.converged and e_prev.converged and e_next.converged):
            continue
        fd = (e_next.lam - e_prev.lam) / (t[i + 1] - t[i - 1])
        pred = predicted_rate(trajectory.samples[i].metric, e, kind, p)
        rel = abs(pred - fd) / max(abs(fd), 1e-300)
        rows.append({"t": float(t[i]), "predicted": pred, "finite_difference": fd, "rel_error": rel})
    # near-stationary samples carry no information on relative error
    scale = max((abs(r["finite_difference"]) for r in rows), default=0.0)
    informative = [r for r in rows if abs(r["finite_difference"]) > 1e-3 * scale]
    worst = max((r["rel_error"] for r in informative), default=0.0)
    return {
        "tolerance": RATE_TOLERANCE,
        "max_rel_error": worst,
        "pass": bool(worst <= RATE_TOLERANCE),
        "samples": rows,
    }


def run_experiment(config, output_dir=None, write=True, figures=None, progress=None):
    """Run a configured flow experiment and write its CSV, JSON report and figures.

    Returns
    -------
    ExperimentResult
    """
    if isinstance(config, dict):
        config = ExperimentConfig.from_dict(config)
    out = config.output or {}
    out_dir = Path(os.environ.get(OUTPUT_DIR_ENV) or output_dir or out.get("dir") or ".")
    prefix = out.get("prefix", config.name)
    figures = out.get("figures", True) if figures is None else figures
    csv_path = out_dir / f"{prefix}.csv"
    report_path = out_dir / f"{prefix}.json"
    paths = {"csv": str(csv_path), "report": str(report_path)}

    mesh = resolve_mesh(config.mesh)
    u0 = initial_field(mesh, config.initial_u)
    metric0 = ConformalMetric(mesh, u0)
    spec = config.flow_spec()
    eig = config.eigen_config()
    params = BoundParams.from_metric(metric0, config.p)
    names = auto_quantities(spec.kind, params) if config.quantities == "auto" else list(config.quantities)

    report = {
        "name": config.name,
        "status": "running",
        "config": config.to_dict(),
        "config_hash": config_hash(config),
        "bound_params": params.to_dict(),
        "branch": branch_label(params),
        "quantities": names,
        "seeds": {"eigen_rng_seed": eig.rng_seed, "initial_u_seed": (config.initial_u or {}).get("seed")},
        "tolerances": {
            "monotone": config.tol,
            "tol_lambda": eig.tol_lambda,
            "tol_residual": eig.tol_residual,
            "rate_rel": RATE_TOLERANCE,
        },
        "mesh": {
            "vertices": mesh.vertex_count,
            "edges": mesh.edge_count,
            "faces": mesh.face_count,
            "euler_characteristic": mesh.euler_characteristic,
        },
    }

    def make_row(state, sol):
        lam = sol.lam if sol is not None else float("nan")
        row = [state.t, lam, bool(sol.converged) if sol else False, state.r, state.R_min,
               state.R_max, state.area]
        for name in names:
            try:
                row.append(evaluate_quantity(name, lam, state.t, params))
            except (PFlowError, ValueError):
                row.append(float("nan"))
        return row

    def csv_text_of(rows):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_BASE_COLUMNS + names)
        writer.writerows([_fmt(x) for x in row] for row in rows)
        return buf.getvalue()

    # forward-pass rows, only used for the partial output of a failed run
    partial = []

    def on_sample(state, sol):
        partial.append(make_row(state, sol))
        if progress:
            progress(state, sol)

    if write:
        out_dir.mkdir(parents=True, exist_ok=True)
    try:
        traj = run(metric0, spec, eig, progress=on_sample)
    except Exception as exc:
        report["status"] = "failed"
        report["error"] = f"{type(exc).__name__}: {exc}"
        if write:
            csv_path.write_text(csv_text_of(partial) + f"# FAILED: {report['error']}\n")
            report_path.write_text(json.dumps(report, indent=2, default=_json_default))
        raise
    # rows are rebuilt because the backward refinement may lower early eigenvalues
    rows = [make_row(state, sol) for state, sol in zip(traj.samples, traj.eigen)]

    report["flow"] = {
        **spec.to_dict(),
        "steps": traj.steps,
        "samples": len(traj),
        "t_stop": traj.t_stop,
        "stopped_early": traj.stopped_early,
        "max_area_drift": traj.max_drift,
    }
    report["eigen"] = {
        "all_converged": all(e.converged for e in traj.eigen),
        "max_el_residual": max(e.el_residual for e in traj.eigen),
        "config": {k: v for k, v in asdict(eig).items()},
    }
    bounds = None
    if spec.kind == "normalized_ricci":
        bounds = check_curvature_bounds(traj, params)
        report["curvature_bounds"] = {
            "pass": bounds["pass"],
            "slack": bounds["slack"],
            "samples": bounds["samples"],
        }
    t = traj.times
    lam = traj.lambdas
    monotone = {}
    for j, name in enumerate(names):
        q = np.array([row[len(CSV_BASE_COLUMNS) + j] for row in rows], dtype=np.float64)
        if not np.all(np.isfinite(q)):
            monotone[name] = {"name": name, "pass": False, "status": "not_evaluable"}
            continue
        rep = assert_monotone(QuantitySeries(name, quantity_direction(name), t, lam, q, config.tol))
        if bounds is not None and not bounds["pass"]:
            rep.status = "bounds_violated"
        monotone[name] = rep.to_dict()
    report["monotone"] = monotone
    report["rate_check"] = _rate_check(traj, spec.kind, config.p)
    if spec.kind in ("unnormalized_ricci", "yamabe_2d"):
        c, t_tilde, lam_tilde = normalize_map(traj, config.p)
        report["normalized_time"] = {"c": c.tolist(), "t_tilde": t_tilde.tolist(),
                                     "lambda_tilde": lam_tilde.tolist()}
    report["status"] = "ok"

    csv_text = csv_text_of(rows)
    if write:
        csv_path.write_text(csv_text)
        report_path.write_text(json.dumps(report, indent=2, default=_json_default))
        if figures:
            from .figures import experiment_figures

            paths.update(experiment_figures(traj, names, rows, params, out_dir, prefix, bounds))
    return ExperimentResult(config, traj, params, report, csv_text, paths)


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, float) and math.isnan(x):
        return None
    raise TypeError(f"not JSON serializable: {type(x).__name__}")
