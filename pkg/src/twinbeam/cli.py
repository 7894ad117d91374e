"""Command-line interface.

Subcommands mirror the stages of a run:

    simulate   config -> frame-event file (parallel, deterministic)
    joint      frame file -> joint histogram, marginals, difference map,
               correlation, classicality report (+ figures)
    spatial    frame file -> correlation histograms, cross-sections,
               gaussian fits, correlation-area report (+ figure)
    oracle     parameters -> exact joint pmf, its correlation and
               classicality excess (no sampling error)
    process    raster directory -> frame-event file via double thresholding

Exit codes: 0 success, 1 validation/configuration, 2 I/O or file format,
3 numerical failure (for example fit non-convergence).  Every command drops
a machine-readable summary.json next to its tables.
"""

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import counting, spatial, tables
from .config import RunConfig, paper_joint_profile, read_config
from .counting import analytic_joint
from .errors import ConfigError, FormatError, NumericalError, TwinbeamError
from .frames_io import FrameWriter, frames_header, read_frames_header, stream_frames
from .pipeline import (
    StripLocalizer,
    accumulate_joint,
    accumulate_spatial,
    simulate_to_file,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_NUMERICAL = 3

OUT_DIR_ENV = "TWINBEAM_OUT"


@dataclass
class CommandOutcome:
    """What a subcommand produced: exit status, artifacts, echoed metrics."""

    status: int = EXIT_OK
    artifacts: list[str] = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def _default_out_dir(args) -> Path:
    out = getattr(args, "out_dir", None) or os.environ.get(OUT_DIR_ENV) or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_config(args) -> RunConfig:
    if getattr(args, "config", None):
        return read_config(args.config)
    return paper_joint_profile()


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    import dataclasses

    run = cfg.run
    if getattr(args, "frames", None) is not None:
        run = dataclasses.replace(run, n_frames=args.frames)
    if getattr(args, "seed", None) is not None:
        run = dataclasses.replace(run, master_seed=args.seed)
    if getattr(args, "resamples", None) is not None:
        run = dataclasses.replace(run, bootstrap_resamples=args.resamples)
    return dataclasses.replace(cfg, run=run)


def _write_summary(out_dir: Path, summary: dict) -> str:
    path = out_dir / "summary.json"
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return str(path)


def cmd_simulate(args) -> CommandOutcome:
    cfg = _apply_overrides(_load_config(args), args)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    result = simulate_to_file(cfg, out_path, parallelism=args.parallelism)
    out = CommandOutcome(artifacts=[str(out_path)], summary=result)
    print(
        f"simulate: {result['n_frames']} frames -> {out_path} "
        f"(mean counts S={result['mean_counts']['signal']:.3f}, "
        f"I={result['mean_counts']['idler']:.3f}, "
        f"N={result['mean_counts']['noise']:.3f})"
    )
    return out


def cmd_joint(args) -> CommandOutcome:
    frames_path = Path(args.frames_file)
    if not frames_path.exists():
        raise FileNotFoundError(frames_path)
    out_dir = _default_out_dir(args)
    hist = accumulate_joint(stream_frames(frames_path), cutoff=args.cutoff)
    if hist.n_frames == 0:
        raise ConfigError(f"{frames_path}: no frames to analyze")

    marg_s, marg_i = counting.marginals(hist)
    diff = counting.difference_map(hist)
    corr = counting.correlation_coefficient(
        hist, resamples=args.resamples, seed=args.boot_seed
    )
    report = counting.criterion_test(hist)

    artifacts = []
    hist_path = out_dir / "joint_hist.txt"
    tables.write_joint_hist(hist_path, hist)
    artifacts.append(str(hist_path))
    marg_path = out_dir / "marginals.tsv"
    tables.write_table(
        marg_path,
        {"count": np.arange(hist.cutoff + 1), "f_signal": marg_s, "f_idler": marg_i},
        meta={"n_frames": hist.n_frames},
    )
    artifacts.append(str(marg_path))
    diff_path = out_dir / "difference_map.txt"
    tables.write_pmf(diff_path, diff, {"kind": "difference_map", "n_frames": hist.n_frames})
    artifacts.append(str(diff_path))
    excess_path = out_dir / "criterion_excess.txt"
    tables.write_pmf(
        excess_path, report.excess, {"kind": "criterion_excess", "n_frames": hist.n_frames}
    )
    artifacts.append(str(excess_path))
    report_path = out_dir / "criterion_report.tsv"
    grid = np.indices(report.probability.shape)
    tables.write_table(
        report_path,
        {
            "n_s": grid[0].ravel(),
            "n_i": grid[1].ravel(),
            "f": report.probability.ravel(),
            "bound": report.bound.ravel(),
            "excess": report.excess.ravel(),
            "std_err": report.std_err.ravel(),
            "significance": report.significance.ravel(),
        },
        meta={"n_frames": hist.n_frames, "cutoff": hist.cutoff},
    )
    artifacts.append(str(report_path))

    if not args.no_figures:
        from . import plots

        artifacts.append(plots.save_joint_figure(hist, report, out_dir / "joint_hist.png"))
        artifacts.append(plots.save_difference_figure(diff, out_dir / "difference_map.png"))

    summary = {
        "n_frames": hist.n_frames,
        "overflow": hist.overflow,
        "c_p": corr.c_p,
        "c_p_err": corr.std_err,
        "max_significance": report.max_significance,
        "max_bin": list(report.max_bin),
        "n_violations": len(report.violations),
    }
    artifacts.append(_write_summary(out_dir, summary))
    print(
        f"joint: C_p = {corr.c_p:.4f} +- {corr.std_err:.4f}  "
        f"max significance = {report.max_significance:.2f} sigma at bin {report.max_bin}  "
        f"({len(report.violations)} violating bins)"
    )
    return CommandOutcome(artifacts=artifacts, summary=summary)


def cmd_spatial(args) -> CommandOutcome:
    frames_path = Path(args.frames_file)
    if not frames_path.exists():
        raise FileNotFoundError(frames_path)
    out_dir = _default_out_dir(args)
    header = read_frames_header(frames_path)
    if "regions" not in header:
        raise FormatError(f"{frames_path}: header carries no region geometry")
    localizer = StripLocalizer.from_header(header)
    scale = float(header["mrad_per_macropixel"])
    bin_width = args.bin_width if args.bin_width else scale
    regions = {r["name"]: r for r in header["regions"]}
    phi_half = max(
        (regions[n]["y1"] - regions[n]["y0"]) * 0.5 * scale for n in ("signal", "idler")
    )
    theta_half = max(
        (regions[n]["x1"] - regions[n]["x0"]) * 0.5 * scale for n in ("signal", "idler")
    )
    acc = accumulate_spatial(
        stream_frames(frames_path), localizer, bin_width, phi_half, theta_half
    )
    if acc.pair_frame_count == 0:
        raise ConfigError(f"{frames_path}: no frame has detections in both strips")
    report = spatial.correlation_area_report(acc, fit_sigmas=args.fit_sigmas)

    artifacts = []
    for name, hist2d, result in (
        ("phi", acc.phi, report.phi),
        ("theta", acc.theta, report.theta),
    ):
        grid_path = out_dir / f"corr_{name}.txt"
        tables.write_corr_hist(
            grid_path,
            hist2d,
            name,
            meta={"frames": acc.frame_count, "pair_frames": acc.pair_frame_count},
        )
        artifacts.append(str(grid_path))
        prof_path = out_dir / f"profile_{name}.tsv"
        tables.write_profile(prof_path, result.profile)
        artifacts.append(str(prof_path))

    fit_path = out_dir / "area_report.tsv"
    tables.write_table(
        fit_path,
        {
            "coordinate": ["phi", "theta"],
            "fwhm_mrad": [report.phi.fit.fwhm, report.theta.fit.fwhm],
            "fwhm_err_mrad": [report.phi.fit.fwhm_err, report.theta.fit.fwhm_err],
            "sigma_mrad": [report.phi.fit.sigma, report.theta.fit.sigma],
            "center_mrad": [report.phi.fit.center, report.theta.fit.center],
            "amplitude": [report.phi.fit.amplitude, report.theta.fit.amplitude],
            "offset": [report.phi.fit.offset, report.theta.fit.offset],
            "iterations": [report.phi.fit.iterations, report.theta.fit.iterations],
            "resolution_limited": [
                report.phi.resolution_limited,
                report.theta.resolution_limited,
            ],
        },
        meta={"frames": acc.frame_count, "pair_frames": acc.pair_frame_count},
    )
    artifacts.append(str(fit_path))

    if not args.no_figures:
        from . import plots

        artifacts.append(
            plots.save_spatial_figure(acc, report, out_dir / "correlation_area.png")
        )

    summary = {
        "frames": acc.frame_count,
        "pair_frames": acc.pair_frame_count,
        "fwhm_phi_mrad": report.phi.fit.fwhm,
        "fwhm_phi_err_mrad": report.phi.fit.fwhm_err,
        "fwhm_theta_mrad": report.theta.fit.fwhm,
        "fwhm_theta_err_mrad": report.theta.fit.fwhm_err,
        "resolution_limited": {
            "phi": report.phi.resolution_limited,
            "theta": report.theta.resolution_limited,
        },
    }
    artifacts.append(_write_summary(out_dir, summary))
    print(
        f"spatial: FWHM phi = {report.phi.fit.fwhm:.2f} +- {report.phi.fit.fwhm_err:.2f} mrad, "
        f"FWHM theta = {report.theta.fit.fwhm:.2f} +- {report.theta.fit.fwhm_err:.2f} mrad "
        f"({acc.pair_frame_count} contributing frames)"
    )
    return CommandOutcome(artifacts=artifacts, summary=summary)


def cmd_oracle(args) -> CommandOutcome:
    out_dir = _default_out_dir(args)
    if args.config:
        cfg = read_config(args.config)
        mu = cfg.source.mu_pairs
        eta_s, eta_i = cfg.detector.eta_s, cfg.detector.eta_i
        dark_s, dark_i = cfg.detector.dark_mean_s, cfg.detector.dark_mean_i
        cutoff = cfg.run.cutoff
    else:
        mu, eta_s, eta_i = args.mu, args.eta_s, args.eta_i
        dark_s, dark_i, cutoff = args.dark_s, args.dark_i, args.cutoff
    try:
        oracle = analytic_joint(mu, eta_s, eta_i, dark_s, dark_i, cutoff)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    artifacts = []
    pmf_path = out_dir / "joint_pmf.txt"
    tables.write_pmf(
        pmf_path,
        oracle.pmf,
        {
            "mu": mu,
            "eta_s": eta_s,
            "eta_i": eta_i,
            "dark_s": dark_s,
            "dark_i": dark_i,
            "cutoff": cutoff,
            "tail_mass": oracle.tail_mass,
        },
    )
    artifacts.append(str(pmf_path))
    excess = oracle.criterion_excess()
    excess_path = out_dir / "criterion_excess.txt"
    tables.write_pmf(excess_path, excess, {"kind": "criterion_excess_exact"})
    artifacts.append(str(excess_path))

    try:
        c_p = oracle.correlation()
    except NumericalError:
        c_p = float("nan")
    best = np.unravel_index(np.argmax(excess), excess.shape)
    summary = {
        "mu": mu,
        "eta_s": eta_s,
        "eta_i": eta_i,
        "dark_s": dark_s,
        "dark_i": dark_i,
        "cutoff": cutoff,
        "tail_mass": oracle.tail_mass,
        "c_p": c_p,
        "max_excess": float(excess[best]),
        "max_excess_bin": [int(best[0]), int(best[1])],
        "n_violations": int((excess > 0).sum()),
    }
    artifacts.append(_write_summary(out_dir, summary))
    print(
        f"oracle: C_p = {c_p:.6f}, max excess = {excess[best]:.3e} at bin "
        f"({best[0]}, {best[1]}), tail mass = {oracle.tail_mass:.2e}"
    )
    return CommandOutcome(artifacts=artifacts, summary=summary)


def cmd_process(args) -> CommandOutcome:
    from .detector import process_frame
    from .frames_io import FrameRecord
    from .tables import read_raster

    raster_dir = Path(args.rasters)
    if not raster_dir.is_dir():
        raise FileNotFoundError(f"raster directory not found: {raster_dir}")
    cfg = _load_config(args)
    paths = sorted(raster_dir.glob("*.txt"))
    if not paths:
        raise ConfigError(f"{raster_dir}: no raster files (*.txt)")
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    qualities: dict[str, int] = {}
    with FrameWriter(out_path, frames_header(cfg)) as writer:
        for path in paths:
            raster = read_raster(path)
            events = process_frame(raster, cfg.detector, cfg.rois)
            qualities[events.quality] = qualities.get(events.quality, 0) + 1
            writer.append(
                FrameRecord(
                    frame_index=events.frame_index,
                    signal_xy=events.region_xy("signal"),
                    idler_xy=events.region_xy("idler"),
                    noise_xy=events.region_xy("noise"),
                    quality=events.quality,
                )
            )
    summary = {"n_frames": len(paths), "out": str(out_path), "quality": qualities}
    print(f"process: {len(paths)} rasters -> {out_path} (quality: {qualities})")
    return CommandOutcome(artifacts=[str(out_path)], summary=summary)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twinbeam",
        description="Twin-beam photocount and correlation-area simulator / analyzer",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a frame-event file from a config")
    p.add_argument("--config", help="run configuration (YAML); defaults to the built-in profile")
    p.add_argument("--out", required=True, help="output frame file (.jsonl or .jsonl.gz)")
    p.add_argument("--frames", type=int, help="override run.n_frames")
    p.add_argument("--seed", type=int, help="override run.master_seed")
    p.add_argument("--parallelism", type=int, default=1, help="worker processes")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("joint", help="joint photocount analysis of a frame file")
    p.add_argument("frames_file")
    p.add_argument("--out-dir", help=f"output directory (default ${OUT_DIR_ENV} or .)")
    p.add_argument("--cutoff", type=int, default=20, help="histogram cutoff")
    p.add_argument("--resamples", type=int, default=200, help="bootstrap resamples")
    p.add_argument("--boot-seed", type=int, default=0, help="bootstrap seed")
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    p.set_defaults(func=cmd_joint)

    p = sub.add_parser("spatial", help="correlation-area analysis of a frame file")
    p.add_argument("frames_file")
    p.add_argument("--out-dir", help=f"output directory (default ${OUT_DIR_ENV} or .)")
    p.add_argument("--bin-width", type=float, help="bin width in mrad (default: 1 macropixel)")
    p.add_argument("--fit-sigmas", type=float, default=4.0, help="fit window half-width in sigma")
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    p.set_defaults(func=cmd_spatial)

    p = sub.add_parser("oracle", help="exact joint pmf of the detection model")
    p.add_argument("--config", help="take parameters from a config file")
    p.add_argument("--mu", type=float, default=50.0, help="mean pairs per frame")
    p.add_argument("--eta-s", type=float, default=0.07)
    p.add_argument("--eta-i", type=float, default=0.07)
    p.add_argument("--dark-s", type=float, default=0.0)
    p.add_argument("--dark-i", type=float, default=0.0)
    p.add_argument("--cutoff", type=int, default=20)
    p.add_argument("--out-dir", help=f"output directory (default ${OUT_DIR_ENV} or .)")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("process", help="recover events from raster frames")
    p.add_argument("--rasters", required=True, help="directory of raster .txt files")
    p.add_argument("--config", help="detector/ROI configuration")
    p.add_argument("--out", required=True, help="output frame file")
    p.set_defaults(func=cmd_process)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        outcome = args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except TwinbeamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return outcome.status


if __name__ == "__main__":
    sys.exit(main())
