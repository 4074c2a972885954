"""Command line interface.

Output is delimited text: ``key<TAB>value`` lines for single results, CSV for
series.  Output directories default to the current directory and can be
overridden with ``PLAPFLOW_OUTPUT_DIR``.
"""
from __future__ import annotations

import json
import os
import sys
import warnings
from pathlib import Path

import click
import numpy as np

from .errors import PFlowError
from .experiment import OUTPUT_DIR_ENV, initial_field, load_config, run_experiment
from .flow import FlowSpec, run
from .geometry import ConformalMetric
from .meshes import generate_mesh, load_mesh, save_mesh_json
from .peigen import EigenConfig, solve_first_eigen


def _parse_params(items):
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise click.BadParameter(f"expected key=value, got {item!r}")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def _mesh_from_options(mesh_path, kind, params):
    if mesh_path:
        return load_mesh(mesh_path)
    return generate_mesh(kind, **_parse_params(params))


def _emit(pairs):
    for k, v in pairs:
        click.echo(f"{k}\t{v}")


def _out_dir(option):
    return Path(os.environ.get(OUTPUT_DIR_ENV) or option or ".")


mesh_source = [
    click.option("--mesh", "mesh_path", type=click.Path(exists=True, dir_okay=False),
                 help="OBJ or intrinsic JSON mesh file."),
    click.option("--kind", default="icosphere", show_default=True,
                 type=click.Choice(["icosphere", "flat_torus", "genus2"])),
    click.option("--param", "params", multiple=True, metavar="KEY=VALUE",
                 help="Builtin mesh parameter, e.g. level=3."),
]


def with_mesh_source(fn):
    for opt in reversed(mesh_source):
        fn = opt(fn)
    return fn


@click.group()
@click.version_option(package_name="artifact")
def cli():
    """Conformal curvature flows and the first eigenvalue of the p-Laplacian."""


@cli.group()
def mesh():
    """Generate or inspect meshes."""


@mesh.command("gen")
@click.argument("kind", type=click.Choice(["icosphere", "flat_torus", "genus2"]))
@click.option("--param", "params", multiple=True, metavar="KEY=VALUE")
@click.option("-o", "--output", type=click.Path(dir_okay=False), required=True,
              help="Intrinsic JSON output path.")
def mesh_gen(kind, params, output):
    """Write a builtin mesh as intrinsic JSON."""
    m = generate_mesh(kind, **_parse_params(params))
    path = Path(output)
    if not path.is_absolute() and os.environ.get(OUTPUT_DIR_ENV):
        path = Path(os.environ[OUTPUT_DIR_ENV]) / path
    path.parent.mkdir(parents=True, exist_ok=True)
    save_mesh_json(m, path)
    _emit([("path", path), ("vertices", m.vertex_count), ("euler_characteristic", m.euler_characteristic)])


@mesh.command("info")
@with_mesh_source
def mesh_info(mesh_path, kind, params):
    """Print counts, Euler characteristic and curvature range."""
    m = _mesh_from_options(mesh_path, kind, params)
    g = ConformalMetric(m)
    R = g.scalar_curvature
    _emit([
        ("vertices", m.vertex_count),
        ("edges", m.edge_count),
        ("faces", m.face_count),
        ("euler_characteristic", m.euler_characteristic),
        ("area", format(g.area, ".17g")),
        ("R_min", format(float(R.min()), ".17g")),
        ("R_max", format(float(R.max()), ".17g")),
        ("r", format(g.average_scalar_curvature, ".17g")),
        ("delaunay", m.is_delaunay),
    ])


@cli.command()
@with_mesh_source
@click.option("-p", "p", type=float, default=2.0, show_default=True)
@click.option("--restarts", type=int, default=8, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--u-amplitude", type=float, default=0.0, help="Smooth random conformal factor amplitude.")
@click.option("--u-seed", type=int, default=0)
@click.option("--save-f", type=click.Path(dir_okay=False), help="Write the eigenfunction (one value per line).")
def eigen(mesh_path, kind, params, p, restarts, seed, u_amplitude, u_seed, save_f):
    """Solve for the first p-eigenvalue."""
    m = _mesh_from_options(mesh_path, kind, params)
    u = initial_field(m, {"type": "random", "amplitude": u_amplitude, "seed": u_seed}) \
        if u_amplitude else None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sol = solve_first_eigen(ConformalMetric(m, u), EigenConfig(p=p, restarts=restarts, rng_seed=seed))
    for k, v in sol.to_dict().items():
        _emit([(k, format(v, ".17g") if isinstance(v, float) else v)])
    if save_f:
        np.savetxt(save_f, sol.f, fmt="%.17g")


@cli.command()
@with_mesh_source
@click.option("--flow-kind", default="normalized_ricci", show_default=True,
              type=click.Choice(["normalized_ricci", "unnormalized_ricci", "yamabe_2d"]))
@click.option("--dt", type=float, default=0.01, show_default=True)
@click.option("--t-end", type=float, default=1.0, show_default=True)
@click.option("--stride", type=int, default=10, show_default=True)
@click.option("-p", "p", type=float, default=None, help="Also solve the first p-eigenvalue per sample.")
@click.option("--u-amplitude", type=float, default=0.0)
@click.option("--u-seed", type=int, default=0)
def flow(mesh_path, kind, params, flow_kind, dt, t_end, stride, p, u_amplitude, u_seed):
    """Integrate a flow and print the sampled curvature (and eigenvalue) as CSV."""
    m = _mesh_from_options(mesh_path, kind, params)
    u = initial_field(m, {"type": "random", "amplitude": u_amplitude, "seed": u_seed}) \
        if u_amplitude else None
    spec = FlowSpec(flow_kind, dt=dt, t_end=t_end, sample_stride=stride)
    cfg = EigenConfig(p=p) if p else None
    click.echo("t,lambda,r,R_min,R_max,area")

    def show(state, sol):
        lam = format(sol.lam, ".17g") if sol is not None else ""
        click.echo(",".join([format(state.t, ".17g"), lam] + [
            format(x, ".17g") for x in (state.r, state.R_min, state.R_max, state.area)]))

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        run(ConformalMetric(m, u), spec, cfg, p=p, progress=show)


@cli.group()
def experiment():
    """Configured experiments."""


@experiment.command("run")
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output-dir", type=click.Path(file_okay=False), default=None)
@click.option("--no-figures", is_flag=True)
def experiment_run(config, output_dir, no_figures):
    """Run CONFIG (JSON) and write CSV, JSON report and figures."""
    cfg = load_config(config)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = run_experiment(cfg, output_dir=output_dir, figures=not no_figures)
    rep = res.report
    _emit([("status", rep["status"]), ("branch", rep["branch"])])
    for name, m in rep["monotone"].items():
        _emit([(f"monotone.{name}", m["status"])])
    if "curvature_bounds" in rep:
        _emit([("curvature_bounds", "pass" if rep["curvature_bounds"]["pass"] else "fail")])
    for k, v in res.paths.items():
        _emit([(k, v)])


@cli.command()
@click.option("--level", type=click.Choice(["fast", "full"]), default="fast", show_default=True)
@click.option("--json", "json_path", type=click.Path(dir_okay=False), help="Also write results as JSON.")
def verify(level, json_path):
    """Run the acceptance criteria; exits nonzero on any failure."""
    from .verify import verify_suite

    results = verify_suite(level, echo=click.echo)
    n_ok = sum(r.passed for r in results)
    click.echo(f"summary\t{n_ok}/{len(results)} passed")
    if json_path:
        Path(json_path).write_text(json.dumps([r.to_dict() for r in results], indent=2, default=str))
    sys.exit(0 if n_ok == len(results) else 1)


def main(argv=None):
    try:
        cli.main(args=argv, prog_name="plapflow", standalone_mode=True)
    except PFlowError as exc:
        click.echo(f"error\t{type(exc).__name__}: {exc}", err=True)
        sys.exit(2)


if __name__ == "__main__":
    main()
