"""Command-line pipeline: phantom -> design -> acquire -> reconstruct -> cv -> evaluate.

Each command reads JSON configuration and MRST tensors, writes its
products plus a run manifest into ``--out``, prints a machine-readable
summary to stdout and diagnostics to stderr.  Exit codes: 2 for
configuration problems, 3 for shape/schedule mismatches, 4 for solver
divergence.  Verbosity is controlled by the MRSI_CS_LOG environment
variable (error, info or debug).
"""

from __future__ import annotations

import csv
import functools
import json
import logging
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .configio import (
    load_json,
    parse_design_config,
    parse_geometry,
    parse_phantom_config,
    parse_solver_config,
)
from .errors import (
    ConfigError,
    DivergenceError,
    MrsiCsError,
    ParameterError,
    ScheduleError,
    ShapeError,
)
from .evaluate import (
    max_normalize,
    substance_metrics,
    write_pgm,
    write_profiles_csv,
)
from .manifest import RunManifest, StageTimer
from .model import (
    AcquisitionGeometry,
    BaseSpectraSet,
    SignalSet,
    SubstanceDistribution,
)
from .mrst import read_tensor, write_tensor
from .phantom import acquire as simulate_acquisition
from .phantom import make_base_spectra, make_phantom
from .sampling import build_schedule, read_schedule, write_schedule
from .selection import COARSE_GRID, PAPER_GRID, CvPlan, grid_search
from .solver import solve

logger = logging.getLogger(__name__)

_EXIT_CODES = (
    (DivergenceError, 4),
    (ShapeError, 3),
    (ScheduleError, 3),
    (ConfigError, 2),
    (ParameterError, 2),
    (MrsiCsError, 1),
)


def _handle_errors(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except MrsiCsError as exc:
            for cls, code in _EXIT_CODES:
                if isinstance(exc, cls):
                    logger.error("%s: %s", type(exc).__name__, exc)
                    sys.exit(code)
            raise

    return wrapper


def _emit(summary: dict) -> None:
    click.echo(json.dumps(summary, sort_keys=True))


def _outdir(out: str) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _load_distribution(path: str) -> SubstanceDistribution:
    tensor = read_tensor(path)
    if tensor.ndim < 3:
        raise ShapeError(f"{path}: expected (frames, ...spatial, substances); got {tensor.shape}")
    if np.iscomplexobj(tensor):
        raise ShapeError(f"{path}: distributions must be real")
    m, *spatial, j = tensor.shape
    geometry = AcquisitionGeometry(
        spatial_dims=tuple(spatial),
        spectral_evolution_points=1,
        readout_points=1,
    )
    return SubstanceDistribution(values=tensor.reshape(m, -1, j), geometry=geometry)


def _load_base(path: str, convention: str) -> BaseSpectraSet:
    tensor = read_tensor(path)
    if tensor.ndim != 3:
        raise ShapeError(f"{path}: base spectra must be (substances, evolution, readout)")
    return BaseSpectraSet.from_spectra(tensor, convention=convention)


@click.group()
@click.version_option(version=__version__, prog_name="mrsi-cs")
def main():
    level = os.environ.get("MRSI_CS_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(
        stream=sys.stderr,
        level=levels.get(level, logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
        force=True,
    )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=None, help="Override the configured rng seed.")
@_handle_errors
def phantom(config_path, out, seed):
    """Generate ground truth and base spectra from a phantom configuration."""
    timer = StageTimer()
    doc = load_json(config_path)
    if seed is not None:
        doc["rng_seed"] = seed
    config = parse_phantom_config(doc)
    truth = make_phantom(config)
    base = make_base_spectra(config)
    timer.lap("generate")

    outdir = _outdir(out)
    truth_path = outdir / "truth.mrst"
    base_path = outdir / "base.mrst"
    write_tensor(truth_path, truth.spatial())
    write_tensor(base_path, base.spectra)
    timer.lap("write")

    manifest = RunManifest(
        command="phantom",
        arguments={"config": str(config_path), "out": str(out), "seed": seed},
        config=doc,
        seeds={"rng_seed": config.rng_seed},
        timings_s=timer.timings_s,
    )
    manifest.add_input(config_path)
    manifest.add_output(truth_path)
    manifest.add_output(base_path)
    manifest.write(outdir / "manifest.json")
    _emit(
        {
            "command": "phantom",
            "truth": str(truth_path),
            "base": str(base_path),
            "n_frames": config.n_frames,
            "spatial_dims": list(config.geometry.spatial_dims),
            "substances": list(config.labels),
        }
    )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@_handle_errors
def design(config_path, out):
    """Build the undersampling schedule from a sampler configuration."""
    timer = StageTimer()
    doc = load_json(config_path)
    config, geometry = parse_design_config(doc)
    schedule = build_schedule(config, geometry)
    timer.lap("design")

    outdir = _outdir(out)
    schedule_path = outdir / "schedule.json"
    write_schedule(schedule_path, schedule)
    timer.lap("write")

    manifest = RunManifest(
        command="design",
        arguments={"config": str(config_path), "out": str(out)},
        config=doc,
        seeds={"sobol_skip": config.skip},
        timings_s=timer.timings_s,
    )
    manifest.add_input(config_path)
    manifest.add_output(schedule_path)
    manifest.write(outdir / "manifest.json")
    _emit(
        {
            "command": "design",
            "schedule": str(schedule_path),
            "n_frames": schedule.n_frames,
            "n_acquired": schedule.n_acquired,
            "psi": config.psi,
        }
    )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--schedule", "schedule_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--truth", "truth_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--base", "base_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=None, help="Override the configured rng seed.")
@_handle_errors
def acquire(config_path, schedule_path, truth_path, base_path, out, seed):
    """Simulate the noisy undersampled acquisition of a ground-truth phantom."""
    timer = StageTimer()
    doc = load_json(config_path)
    if seed is not None:
        doc["rng_seed"] = seed
    config = parse_phantom_config(doc)
    geometry = config.geometry
    schedule = read_schedule(schedule_path)
    truth_tensor = read_tensor(truth_path)
    expected = (config.n_frames, *geometry.spatial_dims, len(config.substances))
    if truth_tensor.shape != expected:
        raise ShapeError(f"{truth_path}: shape {truth_tensor.shape}, config implies {expected}")
    truth = SubstanceDistribution(
        values=truth_tensor.reshape(config.n_frames, -1, len(config.substances)),
        geometry=geometry,
    )
    base = _load_base(base_path, geometry.dft_sign_convention)
    timer.lap("load")

    signals = simulate_acquisition(truth, base, schedule, config.noise_sigma, config.rng_seed)
    timer.lap("acquire")

    outdir = _outdir(out)
    signals_path = outdir / "signals.mrst"
    write_tensor(signals_path, signals.concatenated(schedule))
    timer.lap("write")

    manifest = RunManifest(
        command="acquire",
        arguments={
            "config": str(config_path),
            "schedule": str(schedule_path),
            "truth": str(truth_path),
            "base": str(base_path),
            "out": str(out),
            "seed": seed,
        },
        config=doc,
        seeds={"rng_seed": config.rng_seed},
        timings_s=timer.timings_s,
    )
    for p in (config_path, schedule_path, truth_path, base_path):
        manifest.add_input(p)
    manifest.add_output(signals_path)
    manifest.write(outdir / "manifest.json")
    _emit(
        {
            "command": "acquire",
            "signals": str(signals_path),
            "n_acquired": schedule.n_acquired,
            "noise_sigma": config.noise_sigma,
        }
    )


def _load_reconstruction_inputs(config_path, schedule_path, signals_path, base_path):
    doc = load_json(config_path)
    geometry = parse_geometry(doc.get("geometry", doc), "geometry")
    schedule = read_schedule(schedule_path)
    base = _load_base(base_path, geometry.dft_sign_convention)
    vector = read_tensor(signals_path)
    signals = SignalSet.from_concatenated(schedule, vector, base.n_readout)
    return doc, geometry, schedule, base, signals


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--signals", "signals_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--schedule", "schedule_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--base", "base_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--iters", type=int, default=None, help="Outer iteration budget.")
@click.option("--inner-iters", type=int, default=None, help="Inner iteration budget.")
@click.option("--lambda-x", type=float, default=None)
@click.option("--lambda-w1", type=float, default=None)
@click.option("--lambda-w2", type=float, default=None)
@_handle_errors
def reconstruct(
    config_path,
    signals_path,
    schedule_path,
    base_path,
    out,
    iters,
    inner_iters,
    lambda_x,
    lambda_w1,
    lambda_w2,
):
    """Reconstruct the substance distributions from undersampled signals."""
    timer = StageTimer()
    doc, geometry, schedule, base, signals = _load_reconstruction_inputs(
        config_path, schedule_path, signals_path, base_path
    )
    solver_config = parse_solver_config(
        doc.get("solver", {}),
        lambda_x=lambda_x,
        lambda_w1=lambda_w1,
        lambda_w2=lambda_w2,
        outer_iters=iters,
        inner_iters=inner_iters,
    )
    timer.lap("load")

    estimate, residuals = solve(signals, schedule, base, geometry, solver_config)
    timer.lap("solve")

    outdir = _outdir(out)
    recon_path = outdir / "recon.mrst"
    residual_path = outdir / "residuals.csv"
    write_tensor(recon_path, estimate.spatial())
    residuals.write_csv(residual_path)
    timer.lap("write")

    manifest = RunManifest(
        command="reconstruct",
        arguments={
            "config": str(config_path),
            "signals": str(signals_path),
            "schedule": str(schedule_path),
            "base": str(base_path),
            "out": str(out),
        },
        config={
            "geometry": doc.get("geometry", {}),
            "solver": {
                "lambda_x": solver_config.lambda_x,
                "lambda_w1": solver_config.lambda_w1,
                "lambda_w2": solver_config.lambda_w2,
                "rho1": solver_config.rho1,
                "rho2": solver_config.rho2,
                "mu": solver_config.mu,
                "outer_iters": solver_config.outer_iters,
                "inner_iters": solver_config.inner_iters,
            },
        },
        timings_s=timer.timings_s,
    )
    for p in (config_path, signals_path, schedule_path, base_path):
        manifest.add_input(p)
    manifest.add_output(recon_path)
    manifest.add_output(residual_path)
    manifest.write(outdir / "manifest.json")
    _emit(
        {
            "command": "reconstruct",
            "recon": str(recon_path),
            "residuals": str(residual_path),
            "iterations": len(residuals),
            "final_rms_x_minus_z": residuals.rms_x_minus_z[-1] if len(residuals) else None,
        }
    )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--signals", "signals_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--schedule", "schedule_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--base", "base_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--paper-grid", is_flag=True, help="Use the full 12-value grid per axis.")
@click.option("--threads", type=int, default=1, help="Worker processes for the sweep.")
@click.option("--iters", type=int, default=None, help="Outer iterations per CV solve.")
@_handle_errors
def cv(config_path, signals_path, schedule_path, base_path, out, paper_grid, threads, iters):
    """Select regularization weights by 2-fold cross validation."""
    timer = StageTimer()
    doc, geometry, schedule, base, signals = _load_reconstruction_inputs(
        config_path, schedule_path, signals_path, base_path
    )
    solver_doc = dict(doc.get("solver", {}))
    solver_doc.setdefault("outer_iters", 200)  # ranking needs less polish than the final fit
    solver_config = parse_solver_config(solver_doc, outer_iters=iters, record_residuals=False)
    grid = PAPER_GRID if paper_grid else COARSE_GRID
    plan = CvPlan(grid_x=grid, grid_w1=grid, grid_w2=grid, base_config=solver_config)
    timer.lap("load")

    best, table = grid_search(plan, schedule, signals, base, geometry, threads=threads)
    timer.lap("search")

    outdir = _outdir(out)
    table_path = outdir / "cv_table.csv"
    selected_path = outdir / "selected.json"
    with open(table_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda_x", "lambda_w1", "lambda_w2", "rmse"])
        for row in table:
            writer.writerow([repr(row.lambda_x), repr(row.lambda_w1), repr(row.lambda_w2), repr(row.rmse)])
    best_rmse = min(row.rmse for row in table)
    _write_json(
        selected_path,
        {"lambda_x": best[0], "lambda_w1": best[1], "lambda_w2": best[2], "rmse": best_rmse},
    )
    timer.lap("write")

    manifest = RunManifest(
        command="cv",
        arguments={
            "config": str(config_path),
            "signals": str(signals_path),
            "schedule": str(schedule_path),
            "base": str(base_path),
            "out": str(out),
            "paper_grid": paper_grid,
            "threads": threads,
        },
        config={"grid": list(grid), "outer_iters": solver_config.outer_iters},
        timings_s=timer.timings_s,
    )
    for p in (config_path, signals_path, schedule_path, base_path):
        manifest.add_input(p)
    manifest.add_output(table_path)
    manifest.add_output(selected_path)
    manifest.write(outdir / "manifest.json")
    _emit(
        {
            "command": "cv",
            "table": str(table_path),
            "selected": str(selected_path),
            "lambda_x": best[0],
            "lambda_w1": best[1],
            "lambda_w2": best[2],
            "combinations": len(table),
        }
    )


@main.command()
@click.option("--recon", "recon_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--truth", "truth_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Phantom configuration supplying substance labels.")
@click.option("--frames", default=None, help="Comma-separated snapshot frame indices.")
@click.option("--upsample", type=int, default=1, help="Integer nearest-neighbor upscaling.")
@_handle_errors
def evaluate(recon_path, truth_path, out, config_path, frames, upsample):
    """Compare a reconstruction against ground truth and export summaries."""
    timer = StageTimer()
    recon = _load_distribution(recon_path)
    truth = _load_distribution(truth_path)
    if recon.values.shape != truth.values.shape:
        raise ShapeError(
            f"reconstruction {recon.values.shape} and truth {truth.values.shape} differ"
        )
    if config_path is not None:
        labels = list(parse_phantom_config(load_json(config_path)).labels)
        if len(labels) != recon.n_substances:
            raise ShapeError(
                f"{len(labels)} labels in config but {recon.n_substances} substances in tensors"
            )
    else:
        labels = [f"substance_{j}" for j in range(recon.n_substances)]
    m_total = recon.n_frames
    if frames:
        try:
            snapshot_frames = sorted({int(tok) for tok in frames.split(",")})
        except ValueError as exc:
            raise ConfigError(f"--frames must be comma-separated integers: {exc}") from exc
        if any(not 0 <= f < m_total for f in snapshot_frames):
            raise ConfigError(f"--frames indices must lie in [0, {m_total})")
    else:
        snapshot_frames = sorted({0, m_total // 2, m_total - 1})
    timer.lap("load")

    metrics = {"normalization": "per-substance max", "substances": {}}
    recon_profiles = np.zeros((recon.n_substances, m_total))
    truth_profiles = np.zeros_like(recon_profiles)
    for j, label in enumerate(labels):
        stats = substance_metrics(recon.values[:, :, j], truth.values[:, :, j])
        metrics["substances"][label] = stats
        voxel = stats["hottest_voxel"]
        recon_profiles[j] = recon.values[:, voxel, j]
        truth_profiles[j] = truth.values[:, voxel, j]
    timer.lap("metrics")

    outdir = _outdir(out)
    metrics_path = outdir / "metrics.json"
    profiles_path = outdir / "profiles.csv"
    _write_json(metrics_path, metrics)
    write_profiles_csv(profiles_path, labels, recon_profiles, truth_profiles)
    snapshot_dir = outdir / "snapshots"
    snapshot_dir.mkdir(exist_ok=True)
    snapshot_paths = []
    spatial = recon.spatial()
    for j, label in enumerate(labels):
        scaled = max_normalize(spatial[:, ..., j])
        for f in snapshot_frames:
            path = snapshot_dir / f"{label}_frame{f:04d}.pgm"
            write_pgm(path, scaled[f], upsample=upsample)
            snapshot_paths.append(path)
    timer.lap("write")

    manifest = RunManifest(
        command="evaluate",
        arguments={
            "recon": str(recon_path),
            "truth": str(truth_path),
            "out": str(out),
            "config": str(config_path) if config_path else None,
            "frames": snapshot_frames,
            "upsample": upsample,
        },
        timings_s=timer.timings_s,
    )
    manifest.add_input(recon_path)
    manifest.add_input(truth_path)
    manifest.add_output(metrics_path)
    manifest.add_output(profiles_path)
    for p in snapshot_paths:
        manifest.add_output(p)
    manifest.write(outdir / "manifest.json")
    _emit(
        {
            "command": "evaluate",
            "metrics": str(metrics_path),
            "profiles": str(profiles_path),
            "snapshots": [str(p) for p in snapshot_paths],
        }
    )


if __name__ == "__main__":
    main()
