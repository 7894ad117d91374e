"""Delimited text formats for histograms, grids, profiles and reports.

Every file starts with a schema line, then `# key=value` metadata lines,
then whitespace-delimited numeric rows.  Integers are exact; floats use
their shortest round-trip representation, so read-back matches in-memory
values bit for bit.
"""

from pathlib import Path

import numpy as np

from .counting import JointHistogram
from .detector import RasterFrame
from .errors import FormatError
from .spatial import AxisHist, CrossSectionProfile

JOINT_SCHEMA = "twinbeam/joint-hist/v1"
PMF_SCHEMA = "twinbeam/joint-pmf/v1"
CORR_SCHEMA = "twinbeam/corr-hist/v1"
PROFILE_SCHEMA = "twinbeam/profile/v1"
TABLE_SCHEMA = "twinbeam/table/v1"
RASTER_SCHEMA = "twinbeam/raster/v1"


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def _meta_line(meta: dict) -> str:
    return "# " + " ".join(f"{k}={_fmt(v)}" for k, v in meta.items())


def _parse_value(text: str):
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _read_headed(path: Path, expected_schema: str) -> tuple[dict, list[str]]:
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("# "):
        raise FormatError(f"{path}: missing schema header", line=1)
    schema = lines[0][2:].strip()
    if schema != expected_schema:
        raise FormatError(
            f"{path}: schema mismatch, expected {expected_schema!r}, got {schema!r}", line=1
        )
    meta: dict = {}
    body_start = 1
    for k, line in enumerate(lines[1:], start=2):
        if not line.startswith("#"):
            body_start = k - 1
            break
        body_start = k
        for item in line[1:].split():
            if "=" in item:
                key, _, value = item.partition("=")
                meta[key] = _parse_value(value)
    body = [ln for ln in lines[body_start:] if ln.strip() and not ln.startswith("#")]
    return meta, body


def _write_matrix(fh, matrix: np.ndarray):
    for row in np.atleast_2d(matrix):
        fh.write(" ".join(_fmt(v) for v in row) + "\n")


# ---------------------------------------------------------------- histograms


def write_joint_hist(path: str | Path, hist: JointHistogram):
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {JOINT_SCHEMA}\n")
        fh.write(
            _meta_line(
                {
                    "n_frames": hist.n_frames,
                    "cutoff": hist.cutoff,
                    "overflow": hist.overflow,
                    "truncated": hist.truncated,
                }
            )
            + "\n"
        )
        fh.write("# rows: c_signal 0..cutoff, columns: c_idler 0..cutoff\n")
        _write_matrix(fh, hist.counts)


def read_joint_hist(path: str | Path) -> JointHistogram:
    meta, body = _read_headed(Path(path), JOINT_SCHEMA)
    counts = np.array([[int(v) for v in line.split()] for line in body], dtype=np.int64)
    hist = JointHistogram(cutoff=int(meta["cutoff"]), counts=counts)
    hist.n_frames = int(meta["n_frames"])
    hist.overflow = int(meta.get("overflow", 0))
    if counts.sum() != hist.n_frames:
        raise FormatError(f"{path}: bin total {counts.sum()} != n_frames {hist.n_frames}")
    return hist


def write_pmf(path: str | Path, pmf: np.ndarray, meta: dict):
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {PMF_SCHEMA}\n")
        fh.write(_meta_line(meta) + "\n")
        fh.write("# rows: c_signal, columns: c_idler\n")
        _write_matrix(fh, np.asarray(pmf, dtype=float))


def read_pmf(path: str | Path) -> tuple[np.ndarray, dict]:
    meta, body = _read_headed(Path(path), PMF_SCHEMA)
    pmf = np.array([[float(v) for v in line.split()] for line in body], dtype=float)
    return pmf, meta


# ------------------------------------------------------- correlation grids


def write_corr_hist(path: str | Path, hist: AxisHist, coordinate: str, meta: dict | None = None):
    """2-D weighted grid with axis headers: first row and column are the
    signal / idler bin centers in mrad, the corner cell is a placeholder."""
    path = Path(path)
    centers = hist.centers
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {CORR_SCHEMA}\n")
        full_meta = {
            "coordinate": coordinate,
            "bin_width": hist.bin_width,
            "half_range": hist.half_range,
        }
        full_meta.update(meta or {})
        fh.write(_meta_line(full_meta) + "\n")
        fh.write("# first row: idler bin centers (mrad); first column: signal bin centers\n")
        fh.write(" ".join(["nan"] + [_fmt(c) for c in centers]) + "\n")
        for c, row in zip(centers, hist.weights):
            fh.write(" ".join([_fmt(c)] + [_fmt(v) for v in row]) + "\n")


def read_corr_hist(path: str | Path) -> tuple[AxisHist, dict]:
    meta, body = _read_headed(Path(path), CORR_SCHEMA)
    grid = np.array([[float(v) for v in line.split()] for line in body], dtype=float)
    weights = grid[1:, 1:]
    hist = AxisHist(
        bin_width=float(meta["bin_width"]), half_range=float(meta["half_range"]), weights=weights
    )
    return hist, meta


def write_profile(path: str | Path, profile: CrossSectionProfile, meta: dict | None = None):
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {PROFILE_SCHEMA}\n")
        full_meta = {
            "coordinate": profile.coordinate,
            "bin_width": profile.bin_width,
            "total_weight": profile.total_weight,
        }
        full_meta.update(meta or {})
        fh.write(_meta_line(full_meta) + "\n")
        fh.write("# columns: s_mrad weight\n")
        for s, w in zip(profile.s_centers, profile.ordinate):
            fh.write(f"{_fmt(float(s))} {_fmt(float(w))}\n")


def read_profile(path: str | Path) -> CrossSectionProfile:
    meta, body = _read_headed(Path(path), PROFILE_SCHEMA)
    data = np.array([[float(v) for v in line.split()] for line in body], dtype=float)
    return CrossSectionProfile(
        coordinate=str(meta["coordinate"]),
        s_centers=data[:, 0],
        ordinate=data[:, 1],
        bin_width=float(meta["bin_width"]),
        total_weight=float(meta["total_weight"]),
    )


# ------------------------------------------------------------ generic table


def write_table(path: str | Path, columns: dict, meta: dict | None = None):
    """Column-oriented delimited table (tab separated, named columns)."""
    path = Path(path)
    names = list(columns)
    rows = zip(*[columns[n] for n in names]) if names else []
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {TABLE_SCHEMA}\n")
        if meta:
            fh.write(_meta_line(meta) + "\n")
        fh.write("# columns: " + "\t".join(names) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(v) for v in row) + "\n")


def read_table(path: str | Path) -> tuple[dict, dict]:
    """-> (columns, meta); numeric cells are parsed, the rest stay strings."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != f"# {TABLE_SCHEMA}":
        raise FormatError(f"{path}: missing table schema header", line=1)
    meta: dict = {}
    names: list[str] = []
    body: list[str] = []
    for line in lines[1:]:
        if line.startswith("# columns:"):
            names = line.split(":", 1)[1].strip().split("\t")
        elif line.startswith("#"):
            for item in line[1:].split():
                if "=" in item:
                    key, _, value = item.partition("=")
                    meta[key] = _parse_value(value)
        elif line.strip():
            body.append(line)
    columns = {n: [] for n in names}
    for line in body:
        for name, cell in zip(names, line.split("\t")):
            columns[name].append(_parse_value(cell))
    return columns, meta


# ----------------------------------------------------------------- rasters


def write_raster(path: str | Path, raster: RasterFrame):
    path = Path(path)
    height, width = raster.data.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {RASTER_SCHEMA}\n")
        fh.write(_meta_line({"frame": raster.frame_index, "height": height, "width": width}) + "\n")
        _write_matrix(fh, raster.data)


def read_raster(path: str | Path) -> RasterFrame:
    meta, body = _read_headed(Path(path), RASTER_SCHEMA)
    data = np.array([[float(v) for v in line.split()] for line in body], dtype=float)
    if data.shape != (int(meta["height"]), int(meta["width"])):
        raise FormatError(
            f"{path}: raster shape {data.shape} does not match header "
            f"({meta['height']}, {meta['width']})"
        )
    return RasterFrame(int(meta["frame"]), data)
