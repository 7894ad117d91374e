"""Frame-event stream format: one JSON object per line, optional gzip.

The first line is a header carrying the schema, the float convention and
the detector geometry (map scale, reference angle, regions), so a frame
file is self-describing for the downstream analyses.  Each following line
is one frame: per-region event positions in continuous macropixel units,
the count triple, and the quality flag.  Floats are serialized with their
shortest round-trip representation, so write -> read reproduces every
position bit-exactly.

Gzip files are recognized by magic bytes regardless of their extension;
writing compresses when the path ends in ".gz".
"""

import gzip
import io
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterator

import numpy as np

from .config import RunConfig
from .errors import FormatError

FRAMES_SCHEMA = "twinbeam/frames/v1"

_GZIP_MAGIC = b"\x1f\x8b"


@dataclass
class FrameRecord:
    """Per-frame detection positions and tallies."""

    frame_index: int
    signal_xy: np.ndarray
    idler_xy: np.ndarray
    noise_xy: np.ndarray
    counts: tuple[int, int, int] = None  # type: ignore[assignment]
    quality: str = "ok"

    def __post_init__(self):
        self.signal_xy = np.asarray(self.signal_xy, dtype=float).reshape(-1, 2)
        self.idler_xy = np.asarray(self.idler_xy, dtype=float).reshape(-1, 2)
        self.noise_xy = np.asarray(self.noise_xy, dtype=float).reshape(-1, 2)
        lengths = (len(self.signal_xy), len(self.idler_xy), len(self.noise_xy))
        if self.counts is None:
            self.counts = lengths
        elif tuple(self.counts) != lengths:
            raise ValueError(f"counts {tuple(self.counts)} do not match event lists {lengths}")


def frames_header(cfg: RunConfig) -> dict:
    return {
        "schema": FRAMES_SCHEMA,
        "float_format": "float64 shortest round-trip",
        "mrad_per_macropixel": cfg.detector.mrad_per_macropixel,
        "theta_center": cfg.detector.theta_center,
        "regions": [
            {
                "name": r.name,
                "x0": r.x0,
                "x1": r.x1,
                "y0": r.y0,
                "y1": r.y1,
                "mirror_x": r.mirror_x,
            }
            for r in cfg.rois
        ],
    }


def _record_to_json(record: FrameRecord) -> str:
    return json.dumps(
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


def _record_from_obj(obj: dict, line: int) -> FrameRecord:
    try:
        return FrameRecord(
            frame_index=int(obj["frame"]),
            signal_xy=obj["signal"],
            idler_xy=obj["idler"],
            noise_xy=obj["noise"],
            counts=tuple(obj["counts"]),
            quality=obj.get("quality", "ok"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad frame record: {exc}", line=line) from exc


def _open_read(path: Path) -> IO[str]:
    raw = open(path, "rb")
    magic = raw.read(2)
    raw.seek(0)
    if magic == _GZIP_MAGIC:
        return io.TextIOWrapper(gzip.GzipFile(fileobj=raw, mode="rb"), encoding="utf-8")
    return io.TextIOWrapper(raw, encoding="utf-8")


def _open_write(path: Path, mode: str) -> IO[str]:
    if str(path).endswith(".gz"):
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


class FrameWriter:
    """Single-writer streaming append of frame records.

    Writes the header on entry; one call per frame afterwards.  Not safe for
    concurrent use; one writer per file.
    """

    def __init__(self, path: str | Path, header: dict):
        self.path = Path(path)
        self.header = dict(header)
        self.header.setdefault("schema", FRAMES_SCHEMA)
        self._fh: IO[str] | None = None
        self.n_written = 0

    def __enter__(self) -> "FrameWriter":
        self._fh = _open_write(self.path, "w")
        self._fh.write(json.dumps(self.header, separators=(",", ":")) + "\n")
        return self

    def append(self, record: FrameRecord):
        self._fh.write(_record_to_json(record) + "\n")
        self.n_written += 1

    def append_serialized(self, lines: str):
        """Raw pre-serialized records (used by the parallel writer)."""
        self._fh.write(lines)

    def __exit__(self, *exc):
        self._fh.close()
        self._fh = None


def append_frame(record: FrameRecord, path: str | Path):
    """Append one record; creates the file with a minimal header if absent."""
    path = Path(path)
    if not path.exists():
        with _open_write(path, "w") as fh:
            fh.write(json.dumps({"schema": FRAMES_SCHEMA}, separators=(",", ":")) + "\n")
    with _open_write(path, "a") as fh:
        fh.write(_record_to_json(record) + "\n")


def read_frames_header(path: str | Path) -> dict:
    """Parse and validate the header line of a frame file."""
    with _open_read(Path(path)) as fh:
        first = fh.readline()
    if not first.strip():
        raise FormatError("empty file, missing header", line=1)
    try:
        header = json.loads(first)
    except json.JSONDecodeError as exc:
        raise FormatError(f"unparseable header: {exc}", line=1) from exc
    if not isinstance(header, dict) or header.get("schema") != FRAMES_SCHEMA:
        raise FormatError(
            f"schema mismatch: expected {FRAMES_SCHEMA!r}, got {header.get('schema')!r}"
            if isinstance(header, dict)
            else "header is not an object",
            line=1,
        )
    return header


def stream_frames(path: str | Path) -> Iterator[FrameRecord]:
    """Stream records one by one with O(1) memory in the frame count.

    Malformed interior lines raise FormatError with their line number; a
    truncated final line (no trailing newline, unparseable) warns and stops.
    """
    read_frames_header(path)  # validates schema before we commit to streaming
    with _open_read(Path(path)) as fh:
        fh.readline()
        line_no = 1
        while True:
            line = fh.readline()
            if not line:
                return
            line_no += 1
            stripped = line.strip()
            if not stripped:
                continue
            truncated = not line.endswith("\n")
            try:
                obj = json.loads(stripped)
            except json.JSONDecodeError as exc:
                if truncated:
                    warnings.warn(
                        f"{path}: discarding truncated final line {line_no}", stacklevel=2
                    )
                    return
                raise FormatError(f"unparseable record: {exc}", line=line_no) from exc
            yield _record_from_obj(obj, line_no)
