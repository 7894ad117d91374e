"""Intensified-camera model: thinning, geometry, darks, raster pipeline.

Two fidelity levels share one geometry:

* the event-level fast path (`detect_events`) applies per-photon Bernoulli
  survival, an optional Gaussian pointing blur, the linear small-angle map
  onto macropixel coordinates (with the idler strip mirrored in x) and
  per-region Poisson dark counts;

* the raster path (`rasterize` + `process_frame`) additionally renders each
  detection as a gain-weighted point-spread splat onto a macropixel grid
  with additive readout noise, then recovers events by double thresholding:
  pixels at or above the high threshold seed 8-connected components grown
  over pixels at or above the low threshold, and each component becomes one
  event at its intensity-weighted centroid.

Two photons landing inside one component merge into a single event; the
model does not correct for that, it only keeps the per-frame quality flag.

Coordinates: continuous macropixel units, pixel (ix, iy) covering
[ix, ix+1) x [iy, iy+1); raster arrays are indexed [y, x].
"""

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import ndimage
from scipy.special import ndtr

from .errors import ConfigError
from .seeding import DETECTOR_STREAM, RASTER_STREAM, FrameStreams, frame_generator
from .source import PairEvent, SourceParams

REGION_NAMES = ("signal", "idler", "noise")

# 8-connectivity structuring element for component growth.
_CONN8 = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class DetectorParams:
    """Camera and processing settings.

    eta_s, eta_i       total per-arm detection efficiencies in [0, 1]
    dark_mean_*        mean spurious events per region per frame
    mrad_per_pixel     small-angle map scale per raw pixel, mrad
    macropixel         hardware binning factor (raw pixels per macropixel)
    theta_center       radial angle mapped onto each strip's x-center, mrad
    blur_sigma         Gaussian pointing jitter per detected photon, mrad
                       (event-level path)
    psf_sigma          splat width on the macropixel grid (raster path)
    gain_mean, gain_sigma  per-event splat amplitude law (gamma with this
                       mean/std; constant amplitude when gain_sigma is 0)
    read_noise_sigma   additive per-pixel readout noise std
    threshold_low/high double-threshold levels (seed >= high, grow >= low)
    """

    eta_s: float = 0.07
    eta_i: float = 0.07
    dark_mean_s: float = 0.0
    dark_mean_i: float = 0.0
    dark_mean_noise: float = 0.0
    mrad_per_pixel: float = 0.5
    macropixel: int = 4
    theta_center: float = 270.5
    blur_sigma: float = 0.0
    psf_sigma: float = 0.8
    gain_mean: float = 100.0
    gain_sigma: float = 20.0
    read_noise_sigma: float = 2.0
    threshold_low: float = 5.0
    threshold_high: float = 10.0

    def __post_init__(self):
        for name in ("eta_s", "eta_i"):
            value = getattr(self, name)
            if not np.isfinite(value) or not 0.0 <= value <= 1.0:
                raise ConfigError(f"detector.{name}: must be in [0, 1], got {value!r}")
        for name in (
            "dark_mean_s",
            "dark_mean_i",
            "dark_mean_noise",
            "blur_sigma",
            "psf_sigma",
            "gain_sigma",
            "read_noise_sigma",
        ):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ConfigError(f"detector.{name}: must be finite and >= 0, got {value!r}")
        if not np.isfinite(self.mrad_per_pixel) or self.mrad_per_pixel <= 0:
            raise ConfigError(
                f"detector.mrad_per_pixel: must be > 0, got {self.mrad_per_pixel!r}"
            )
        if int(self.macropixel) != self.macropixel or self.macropixel < 1:
            raise ConfigError(f"detector.macropixel: must be an integer >= 1, got {self.macropixel!r}")
        if self.gain_mean <= 0:
            raise ConfigError(f"detector.gain_mean: must be > 0, got {self.gain_mean!r}")
        if self.threshold_low < 0 or self.threshold_high < self.threshold_low:
            raise ConfigError(
                "detector.threshold_high/threshold_low: need high >= low >= 0, "
                f"got high={self.threshold_high!r}, low={self.threshold_low!r}"
            )

    @property
    def mrad_per_macropixel(self) -> float:
        return self.mrad_per_pixel * self.macropixel


@dataclass(frozen=True)
class RegionOfInterest:
    """Rectangular readout region in macropixel coordinates, half-open bounds.

    `mirror_x` marks a strip whose x-axis is horizontally inverted relative
    to the emission angles (the reflected idler strip).
    """

    name: str
    x0: int
    x1: int
    y0: int
    y1: int
    mirror_x: bool = False

    def __post_init__(self):
        if self.name not in REGION_NAMES:
            raise ConfigError(f"roi.name: must be one of {REGION_NAMES}, got {self.name!r}")
        if self.x1 <= self.x0 or self.y1 <= self.y0:
            raise ConfigError(f"roi {self.name!r}: empty bounds {self.x0, self.x1, self.y0, self.y1}")

    @property
    def center(self) -> tuple[float, float]:
        return 0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1)

    def contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return (x >= self.x0) & (x < self.x1) & (y >= self.y0) & (y < self.y1)

    def overlaps(self, other: "RegionOfInterest") -> bool:
        return not (
            self.x1 <= other.x0
            or other.x1 <= self.x0
            or self.y1 <= other.y0
            or other.y1 <= self.y0
        )


def validate_rois(rois: Sequence[RegionOfInterest]) -> dict[str, RegionOfInterest]:
    """Check the three regions exist once each and are pairwise disjoint."""
    by_name = {roi.name: roi for roi in rois}
    if sorted(by_name) != sorted(REGION_NAMES) or len(rois) != 3:
        raise ConfigError(
            f"rois: need exactly one each of {REGION_NAMES}, got {[r.name for r in rois]}"
        )
    for i, a in enumerate(rois):
        for b in rois[i + 1 :]:
            if a.overlaps(b):
                raise ConfigError(f"rois: regions {a.name!r} and {b.name!r} overlap")
    return by_name


def default_rois() -> list[RegionOfInterest]:
    """Three-strip layout: signal and mirrored idler plus a noise monitor.

    Strips are 88 macropixels wide in x (radial direction) and 82 tall in y
    (azimuthal direction): more than four layer widths plus the correlation
    spread on each side of the default source window, so real events are
    essentially never clipped.
    """
    return [
        RegionOfInterest("signal", 0, 88, 0, 82, mirror_x=False),
        RegionOfInterest("idler", 92, 180, 0, 82, mirror_x=True),
        RegionOfInterest("noise", 184, 272, 0, 82, mirror_x=False),
    ]


def sensor_shape(rois: Sequence[RegionOfInterest]) -> tuple[int, int]:
    """(height, width) of the macropixel grid enclosing all regions."""
    return max(r.y1 for r in rois), max(r.x1 for r in rois)


def angles_to_xy(
    theta: np.ndarray, phi: np.ndarray, roi: RegionOfInterest, params: DetectorParams
) -> tuple[np.ndarray, np.ndarray]:
    """Linear small-angle map onto macropixel coordinates of one strip."""
    scale = params.mrad_per_macropixel
    cx, cy = roi.center
    sign = -1.0 if roi.mirror_x else 1.0
    x = cx + sign * (np.asarray(theta, dtype=float) - params.theta_center) / scale
    y = cy + np.asarray(phi, dtype=float) / scale
    return x, y


def xy_to_angles(
    x: np.ndarray, y: np.ndarray, roi: RegionOfInterest, params: DetectorParams
) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of `angles_to_xy`."""
    scale = params.mrad_per_macropixel
    cx, cy = roi.center
    sign = -1.0 if roi.mirror_x else 1.0
    theta = params.theta_center + sign * (np.asarray(x, dtype=float) - cx) * scale
    phi = (np.asarray(y, dtype=float) - cy) * scale
    return theta, phi


class DetectionEvent(NamedTuple):
    """One detection: region, macropixel centroid, equivalent angles (mrad)."""

    region: str
    x: float
    y: float
    theta: float
    phi: float


@dataclass
class FrameEvents:
    """All detections of one frame with per-region tallies.

    `counts` is (c_signal, c_idler, c_noise) and always equals the per-region
    event counts.  `quality` is "ok" unless the frame processing flagged a
    pathological raster ("dense").
    """

    frame_index: int
    events: tuple[DetectionEvent, ...]
    counts: tuple[int, int, int]
    quality: str = "ok"

    def region_events(self, name: str) -> list[DetectionEvent]:
        return [e for e in self.events if e.region == name]

    def region_xy(self, name: str) -> np.ndarray:
        """(k, 2) array of macropixel coordinates for one region."""
        pts = [(e.x, e.y) for e in self.events if e.region == name]
        return np.asarray(pts, dtype=float).reshape(-1, 2)


@dataclass
class RasterFrame:
    """Simulated readout: nonnegative intensity per macropixel, [y, x] indexed."""

    frame_index: int
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2:
            raise ValueError("raster data must be 2-D")
        if not np.all(np.isfinite(self.data)) or np.any(self.data < 0):
            raise ValueError("raster data must be finite and nonnegative")


def _pairs_to_arrays(pairs: Sequence[PairEvent]) -> tuple[np.ndarray, ...]:
    if len(pairs) == 0:
        z = np.empty(0, dtype=float)
        return z, z.copy(), z.copy(), z.copy()
    arr = np.asarray(pairs, dtype=float)
    return arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]


def detect_xy_arrays(
    pair_arrays: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray],
    params: DetectorParams,
    rois: Sequence[RegionOfInterest],
    rng: np.random.Generator,
) -> dict[str, np.ndarray]:
    """Event-level detection returning per-region (k, 2) xy arrays.

    Draw order per frame: signal survival uniforms, idler survival uniforms,
    blur normals (theta then phi, signal then idler; only when blur > 0),
    then per region in (signal, idler, noise) order the dark count and the
    dark x and y positions.
    """
    by_name = {roi.name: roi for roi in rois}
    theta_s, phi_s, theta_i, phi_i = pair_arrays
    n = theta_s.size

    keep_s = rng.random(n) < params.eta_s
    keep_i = rng.random(n) < params.eta_i
    arm_angles = {
        "signal": (theta_s[keep_s].copy(), phi_s[keep_s].copy()),
        "idler": (theta_i[keep_i].copy(), phi_i[keep_i].copy()),
    }
    if params.blur_sigma > 0:
        for name in ("signal", "idler"):
            theta, phi = arm_angles[name]
            theta += rng.normal(0.0, params.blur_sigma, theta.size)
            phi += rng.normal(0.0, params.blur_sigma, phi.size)

    out: dict[str, np.ndarray] = {}
    dark_means = {
        "signal": params.dark_mean_s,
        "idler": params.dark_mean_i,
        "noise": params.dark_mean_noise,
    }
    for name in REGION_NAMES:
        roi = by_name[name]
        if name in arm_angles:
            theta, phi = arm_angles[name]
            x, y = angles_to_xy(theta, phi, roi, params)
            inside = roi.contains(x, y)
            x, y = x[inside], y[inside]
        else:
            x = np.empty(0)
            y = np.empty(0)
        k = rng.poisson(dark_means[name])
        if k:
            dx = rng.uniform(roi.x0, roi.x1, k)
            dy = rng.uniform(roi.y0, roi.y1, k)
            x = np.concatenate([x, dx])
            y = np.concatenate([y, dy])
        out[name] = np.column_stack([x, y]) if x.size else np.empty((0, 2))
    return out


def events_from_xy(
    frame_index: int,
    region_xy: dict[str, np.ndarray],
    params: DetectorParams,
    rois: Sequence[RegionOfInterest],
    quality: str = "ok",
) -> FrameEvents:
    by_name = {roi.name: roi for roi in rois}
    events: list[DetectionEvent] = []
    counts = []
    for name in REGION_NAMES:
        xy = region_xy.get(name, np.empty((0, 2)))
        theta, phi = xy_to_angles(xy[:, 0], xy[:, 1], by_name[name], params)
        events.extend(
            DetectionEvent(name, float(x), float(y), float(t), float(p))
            for (x, y), t, p in zip(xy, theta, phi)
        )
        counts.append(len(xy))
    return FrameEvents(frame_index, tuple(events), (counts[0], counts[1], counts[2]), quality)


def detect_events(
    pairs: Sequence[PairEvent],
    params: DetectorParams,
    rois: Sequence[RegionOfInterest],
    master_seed: int,
    frame_index: int,
    streams: FrameStreams | None = None,
) -> FrameEvents:
    """Detect one frame of pairs: thinning, blur, geometry, darks."""
    validate_rois(list(rois))
    if streams is not None:
        rng = streams.get(frame_index, DETECTOR_STREAM)
    else:
        rng = frame_generator(master_seed, frame_index, DETECTOR_STREAM)
    region_xy = detect_xy_arrays(_pairs_to_arrays(pairs), params, rois, rng)
    return events_from_xy(frame_index, region_xy, params, rois)


def _splat_mass(center: float, lo: int, hi: int, sigma: float) -> np.ndarray:
    """Integrated unit-Gaussian mass per pixel over [lo, hi)."""
    edges = np.arange(lo, hi + 1, dtype=float)
    cdf = ndtr((edges - center) / sigma)
    return np.diff(cdf)


def rasterize(
    events: FrameEvents,
    params: DetectorParams,
    rois: Sequence[RegionOfInterest],
    master_seed: int,
    frame_index: int | None = None,
    streams: FrameStreams | None = None,
) -> RasterFrame:
    """Render detections of one frame onto the macropixel grid.

    Each event deposits a 2-D Gaussian splat of width `psf_sigma` whose total
    amplitude is drawn from the gain law (one gamma draw per event, in event
    order); with `psf_sigma` 0 the full amplitude lands in the containing
    pixel.  Per-pixel Gaussian readout noise is added afterwards and the
    result is clipped at zero so the raster stays nonnegative.
    """
    if frame_index is None:
        frame_index = events.frame_index
    if streams is not None:
        rng = streams.get(frame_index, RASTER_STREAM)
    else:
        rng = frame_generator(master_seed, frame_index, RASTER_STREAM)

    height, width = sensor_shape(rois)
    data = np.zeros((height, width), dtype=float)
    n_events = len(events.events)
    if params.gain_sigma > 0:
        shape = (params.gain_mean / params.gain_sigma) ** 2
        scale = params.gain_sigma**2 / params.gain_mean
        gains = rng.gamma(shape, scale, n_events)
    else:
        gains = np.full(n_events, params.gain_mean)

    sigma = params.psf_sigma
    support = max(1, int(np.ceil(4.0 * sigma))) if sigma > 0 else 0
    for event, gain in zip(events.events, gains):
        if sigma == 0.0:
            ix, iy = int(np.floor(event.x)), int(np.floor(event.y))
            if 0 <= ix < width and 0 <= iy < height:
                data[iy, ix] += gain
            continue
        x0 = max(0, int(np.floor(event.x)) - support)
        x1 = min(width, int(np.floor(event.x)) + support + 1)
        y0 = max(0, int(np.floor(event.y)) - support)
        y1 = min(height, int(np.floor(event.y)) + support + 1)
        if x1 <= x0 or y1 <= y0:
            continue
        mx = _splat_mass(event.x, x0, x1, sigma)
        my = _splat_mass(event.y, y0, y1, sigma)
        data[y0:y1, x0:x1] += gain * np.outer(my, mx)

    if params.read_noise_sigma > 0:
        data += rng.normal(0.0, params.read_noise_sigma, data.shape)
        np.clip(data, 0.0, None, out=data)
    return RasterFrame(frame_index, data)


def process_frame(
    raster: RasterFrame,
    params: DetectorParams,
    rois: Sequence[RegionOfInterest],
) -> FrameEvents:
    """Recover detection events from a raster by double thresholding.

    Components of pixels >= threshold_low (8-connected) that contain at least
    one seed pixel >= threshold_high each yield one event at their
    intensity-weighted centroid.  Events are assigned to the region holding
    the centroid; centroids outside every region are dropped.  Frames where
    more than 30% of pixels clear the low threshold are flagged "dense".
    """
    by_name = validate_rois(list(rois))
    data = raster.data
    mask_low = data >= params.threshold_low
    labels, n_components = ndimage.label(mask_low, structure=_CONN8)
    quality = "dense" if mask_low.mean() > 0.3 else "ok"

    region_pts: dict[str, list[tuple[float, float]]] = {name: [] for name in REGION_NAMES}
    if n_components:
        index = np.arange(1, n_components + 1)
        maxima = ndimage.maximum(data, labels, index)
        seeded = index[maxima >= params.threshold_high]
        if seeded.size:
            total = ndimage.sum_labels(data, labels, seeded)
            # centroid over pixel centers, weighted by intensity
            cy, cx = np.transpose(ndimage.center_of_mass(data, labels, seeded))
            cx = cx + 0.5
            cy = cy + 0.5
            for x, y in zip(cx, cy):
                for name in REGION_NAMES:
                    roi = by_name[name]
                    if roi.x0 <= x < roi.x1 and roi.y0 <= y < roi.y1:
                        region_pts[name].append((x, y))
                        break
            del total

    region_xy = {
        name: np.asarray(pts, dtype=float).reshape(-1, 2) for name, pts in region_pts.items()
    }
    return events_from_xy(raster.frame_index, region_xy, params, rois, quality=quality)
