"""End-to-end run orchestration.

Everything is keyed by (config, master seed): each frame's randomness
depends only on the master seed and its own index, so a run can be sharded
over any number of workers and still produce byte-identical output.  The
parallel writer hands contiguous frame ranges to a process pool and writes
the serialized shards back in order.

Accumulation helpers turn a record stream into the joint photocount
histogram and the spatial correlation accumulator; `run_in_process` does the
same without touching disk, and is guaranteed to match the simulate-to-file
then read-back route frame for frame.
"""

import json
import multiprocessing
import os
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .config import RunConfig
from .counting import JointHistogram
from .detector import detect_xy_arrays, sensor_shape
from .frames_io import FrameRecord, FrameWriter, frames_header
from .seeding import DETECTOR_STREAM, SOURCE_STREAM, FrameStreams
from .source import sample_pair_arrays
from .spatial import CorrelationAccumulator

_SHARD_FRAMES = 8192


def generate_record(cfg: RunConfig, streams: FrameStreams, frame_index: int) -> FrameRecord:
    """Simulate one frame through the event-level detection path."""
    rng_src = streams.get(frame_index, SOURCE_STREAM)
    pair_arrays = sample_pair_arrays(cfg.source, rng_src)
    rng_det = streams.get(frame_index, DETECTOR_STREAM)
    region_xy = detect_xy_arrays(pair_arrays, cfg.detector, cfg.rois, rng_det)
    return FrameRecord(
        frame_index=frame_index,
        signal_xy=region_xy["signal"],
        idler_xy=region_xy["idler"],
        noise_xy=region_xy["noise"],
    )


def generate_records(
    cfg: RunConfig, start: int = 0, stop: int | None = None
) -> Iterator[FrameRecord]:
    """Stream simulated frames [start, stop) in index order."""
    if stop is None:
        stop = cfg.run.n_frames
    streams = FrameStreams(cfg.run.master_seed)
    for i in range(start, stop):
        yield generate_record(cfg, streams, i)


def _render_shard(args) -> tuple[int, str, np.ndarray]:
    cfg, shard_index, start, stop = args
    streams = FrameStreams(cfg.run.master_seed)
    lines = []
    count_sums = np.zeros(3, dtype=np.int64)
    for i in range(start, stop):
        record = generate_record(cfg, streams, i)
        count_sums += record.counts
        lines.append(
            json.dumps(
                {
                    "frame": record.frame_index,
                    "signal": record.signal_xy.tolist(),
                    "idler": record.idler_xy.tolist(),
                    "noise": record.noise_xy.tolist(),
                    "counts": list(record.counts),
                    "quality": record.quality,
                },
                separators=(",", ":"),
            )
        )
    payload = "\n".join(lines) + "\n" if lines else ""
    return shard_index, payload, count_sums


def simulate_to_file(
    cfg: RunConfig, out_path: str | Path, parallelism: int = 1, n_frames: int | None = None
) -> dict:
    """Simulate the configured ensemble into a frame file.

    Output is identical for any parallelism.  Returns a summary with the
    frame count and mean per-region counts.
    """
    if n_frames is None:
        n_frames = cfg.run.n_frames
    parallelism = max(1, parallelism)
    out_path = Path(out_path)
    shards = [
        (k, start, min(start + _SHARD_FRAMES, n_frames))
        for k, start in enumerate(range(0, n_frames, _SHARD_FRAMES))
    ]
    count_sums = np.zeros(3, dtype=np.int64)
    with FrameWriter(out_path, frames_header(cfg)) as writer:
        if parallelism == 1 or len(shards) <= 1:
            for k, start, stop in shards:
                _, payload, sums = _render_shard((cfg, k, start, stop))
                writer.append_serialized(payload)
                writer.n_written += stop - start
                count_sums += sums
        else:
            ctx = multiprocessing.get_context("spawn" if os.name == "nt" else "fork")
            with ctx.Pool(parallelism) as pool:
                jobs = ((cfg, k, start, stop) for k, start, stop in shards)
                for _, payload, sums in pool.imap(_render_shard, jobs, chunksize=1):
                    writer.append_serialized(payload)
                    count_sums += sums
                writer.n_written = n_frames
    mean_counts = count_sums / n_frames if n_frames else count_sums.astype(float)
    return {
        "n_frames": int(n_frames),
        "path": str(out_path),
        "mean_counts": {
            "signal": float(mean_counts[0]),
            "idler": float(mean_counts[1]),
            "noise": float(mean_counts[2]),
        },
    }


def accumulate_joint(records: Iterable[FrameRecord], cutoff: int) -> JointHistogram:
    """Joint photocount histogram of a record stream (bounded memory)."""
    hist = JointHistogram(cutoff=cutoff)
    batch_s: list[int] = []
    batch_i: list[int] = []
    for record in records:
        batch_s.append(record.counts[0])
        batch_i.append(record.counts[1])
        if len(batch_s) >= 65536:
            hist.add_many(np.array(batch_s), np.array(batch_i))
            batch_s.clear()
            batch_i.clear()
    if batch_s:
        hist.add_many(np.array(batch_s), np.array(batch_i))
    return hist


class StripLocalizer:
    """Macropixel coordinates -> strip-local (u_theta, u_phi) offsets in mrad.

    Built from a frame-file header or a config; the mirrored idler strip
    needs no special casing because the mirror is already part of the
    detector-plane coordinates.
    """

    def __init__(self, scale: float, centers: dict[str, tuple[float, float]]):
        self.scale = scale
        self.centers = centers

    @classmethod
    def from_header(cls, header: dict) -> "StripLocalizer":
        centers = {}
        for region in header["regions"]:
            centers[region["name"]] = (
                0.5 * (region["x0"] + region["x1"]),
                0.5 * (region["y0"] + region["y1"]),
            )
        return cls(float(header["mrad_per_macropixel"]), centers)

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "StripLocalizer":
        centers = {r.name: r.center for r in cfg.rois}
        return cls(cfg.detector.mrad_per_macropixel, centers)

    def strip_local(self, name: str, xy: np.ndarray) -> np.ndarray:
        """(k, 2) array of (u_theta, u_phi): x offsets map to the radial
        coordinate, y offsets to the azimuthal one."""
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        cx, cy = self.centers[name]
        out = np.empty_like(xy)
        out[:, 0] = (xy[:, 0] - cx) * self.scale
        out[:, 1] = (xy[:, 1] - cy) * self.scale
        return out


def accumulate_spatial(
    records: Iterable[FrameRecord],
    localizer: StripLocalizer,
    bin_width: float,
    phi_half_range: float,
    theta_half_range: float,
) -> CorrelationAccumulator:
    """Spatial correlation accumulator of a record stream."""
    acc = CorrelationAccumulator(
        bin_width=bin_width,
        phi_half_range=phi_half_range,
        theta_half_range=theta_half_range,
    )
    for record in records:
        acc.add_frame(
            localizer.strip_local("signal", record.signal_xy),
            localizer.strip_local("idler", record.idler_xy),
        )
    return acc


def run_in_process(
    cfg: RunConfig, joint: bool = True, spatial: bool = True, n_frames: int | None = None
) -> tuple[JointHistogram | None, CorrelationAccumulator | None]:
    """Simulate and accumulate without writing a frame file.

    Produces exactly the histogram/accumulator that simulate_to_file followed
    by the corresponding read-back accumulation would.
    """
    if n_frames is None:
        n_frames = cfg.run.n_frames
    hist = JointHistogram(cutoff=cfg.run.cutoff) if joint else None
    acc = None
    localizer = None
    if spatial:
        phi_half, theta_half = cfg.spatial_half_ranges()
        acc = CorrelationAccumulator(
            bin_width=cfg.bin_width_mrad,
            phi_half_range=phi_half,
            theta_half_range=theta_half,
        )
        localizer = StripLocalizer.from_config(cfg)
    streams = FrameStreams(cfg.run.master_seed)
    batch_s: list[int] = []
    batch_i: list[int] = []
    for i in range(n_frames):
        record = generate_record(cfg, streams, i)
        if hist is not None:
            batch_s.append(record.counts[0])
            batch_i.append(record.counts[1])
            if len(batch_s) >= 65536:
                hist.add_many(np.array(batch_s), np.array(batch_i))
                batch_s.clear()
                batch_i.clear()
        if acc is not None:
            acc.add_frame(
                localizer.strip_local("signal", record.signal_xy),
                localizer.strip_local("idler", record.idler_xy),
            )
    if hist is not None and batch_s:
        hist.add_many(np.array(batch_s), np.array(batch_i))
    return hist, acc


def simulate_rasters(
    cfg: RunConfig, out_dir: str | Path, n_frames: int, keep_truth: bool = False
) -> dict:
    """Render simulated frames to raster files (for the processing pipeline).

    Returns the ground-truth per-frame events when `keep_truth` is set, so
    pipeline accuracy can be scored against what was actually rendered.
    """
    from .detector import events_from_xy, rasterize
    from .tables import write_raster

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    streams = FrameStreams(cfg.run.master_seed)
    truth = []
    width = len(str(max(n_frames - 1, 0)))
    for i in range(n_frames):
        rng_src = streams.get(i, SOURCE_STREAM)
        pair_arrays = sample_pair_arrays(cfg.source, rng_src)
        rng_det = streams.get(i, DETECTOR_STREAM)
        region_xy = detect_xy_arrays(pair_arrays, cfg.detector, cfg.rois, rng_det)
        events = events_from_xy(i, region_xy, cfg.detector, cfg.rois)
        raster = rasterize(events, cfg.detector, cfg.rois, cfg.run.master_seed, i, streams)
        write_raster(out_dir / f"raster_{i:0{width}d}.txt", raster)
        if keep_truth:
            truth.append(events)
    return {
        "n_frames": n_frames,
        "dir": str(out_dir),
        "shape": sensor_shape(cfg.rois),
        "truth": truth if keep_truth else None,
    }
