"""Run configuration: one YAML file drives every stage of a run.

The file carries the source and detector parameters, the three readout
regions and the run controls (frame count, master seed, histogram cutoff,
bootstrap resamples, spatial bin width).  Everything has a default, so a
minimal file only needs the schema line; unknown keys warn, out-of-range
values fail with the offending key named.
"""

import dataclasses
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .detector import DetectorParams, RegionOfInterest, default_rois, validate_rois
from .errors import ConfigError
from .source import SourceParams
from .spatial import FWHM_FACTOR

CONFIG_SCHEMA = "twinbeam/config/v1"


@dataclass(frozen=True)
class RunControls:
    """Ensemble-level knobs of a run."""

    n_frames: int = 240000
    master_seed: int = 1
    cutoff: int = 20
    bootstrap_resamples: int = 200
    bin_width_mrad: float | None = None  # spatial bin; defaults to one macropixel
    fit_window_sigmas: float = 4.0

    def __post_init__(self):
        if self.n_frames < 0:
            raise ConfigError(f"run.n_frames: must be >= 0, got {self.n_frames!r}")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError(f"run.master_seed: must be in [0, 2^64), got {self.master_seed!r}")
        if self.cutoff < 0:
            raise ConfigError(f"run.cutoff: must be >= 0, got {self.cutoff!r}")
        if self.bootstrap_resamples < 2:
            raise ConfigError(
                f"run.bootstrap_resamples: must be >= 2, got {self.bootstrap_resamples!r}"
            )
        if self.bin_width_mrad is not None and self.bin_width_mrad <= 0:
            raise ConfigError(f"run.bin_width_mrad: must be > 0, got {self.bin_width_mrad!r}")
        if self.fit_window_sigmas <= 0:
            raise ConfigError(f"run.fit_window_sigmas: must be > 0, got {self.fit_window_sigmas!r}")


@dataclass(frozen=True)
class RunConfig:
    source: SourceParams = field(default_factory=SourceParams)
    detector: DetectorParams = field(default_factory=DetectorParams)
    rois: tuple[RegionOfInterest, ...] = ()
    run: RunControls = field(default_factory=RunControls)

    def __post_init__(self):
        if not self.rois:
            object.__setattr__(self, "rois", tuple(default_rois()))
        validate_rois(list(self.rois))

    @property
    def bin_width_mrad(self) -> float:
        if self.run.bin_width_mrad is not None:
            return self.run.bin_width_mrad
        return self.detector.mrad_per_macropixel

    def roi(self, name: str) -> RegionOfInterest:
        for roi in self.rois:
            if roi.name == name:
                return roi
        raise KeyError(name)

    def spatial_half_ranges(self) -> tuple[float, float]:
        """(phi, theta) half-extents in mrad covering the signal/idler strips."""
        scale = self.detector.mrad_per_macropixel
        phi = max(
            (self.roi(n).y1 - self.roi(n).y0) * 0.5 * scale for n in ("signal", "idler")
        )
        theta = max(
            (self.roi(n).x1 - self.roi(n).x0) * 0.5 * scale for n in ("signal", "idler")
        )
        return phi, theta


def _build_section(cls, data: dict, section: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected a mapping, got {type(data).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    for key in sorted(unknown):
        warnings.warn(f"config: ignoring unknown key {section}.{key}", stacklevel=3)
    kwargs = {k: v for k, v in data.items() if k in known}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def _rois_from_list(items) -> tuple[RegionOfInterest, ...]:
    if not isinstance(items, list):
        raise ConfigError(f"rois: expected a list, got {type(items).__name__}")
    rois = []
    for k, item in enumerate(items):
        rois.append(_build_section(RegionOfInterest, item, f"rois[{k}]"))
    return tuple(rois)


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    schema = data.get("schema")
    if schema is None:
        raise ConfigError("missing required key: schema")
    if schema != CONFIG_SCHEMA:
        raise ConfigError(f"unrecognized schema {schema!r} (expected {CONFIG_SCHEMA!r})")
    known_top = {"schema", "source", "detector", "rois", "run"}
    for key in sorted(set(data) - known_top):
        warnings.warn(f"config: ignoring unknown key {key}", stacklevel=2)
    source = _build_section(SourceParams, data.get("source", {}), "source")
    detector = _build_section(DetectorParams, data.get("detector", {}), "detector")
    rois = _rois_from_list(data["rois"]) if "rois" in data else ()
    run = _build_section(RunControls, data.get("run", {}), "run")
    return RunConfig(source=source, detector=detector, rois=rois, run=run)


def config_to_dict(cfg: RunConfig) -> dict:
    return {
        "schema": CONFIG_SCHEMA,
        "source": dataclasses.asdict(cfg.source),
        "detector": dataclasses.asdict(cfg.detector),
        "rois": [dataclasses.asdict(roi) for roi in cfg.rois],
        "run": dataclasses.asdict(cfg.run),
    }


def read_config(path: str | Path) -> RunConfig:
    """Load and fully validate a run configuration."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    try:
        return config_from_dict(data)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def write_config(cfg: RunConfig, path: str | Path):
    """Write a configuration; read_config(write_config(cfg)) is the identity."""
    Path(path).write_text(
        yaml.safe_dump(config_to_dict(cfg), sort_keys=False), encoding="utf-8"
    )


def paper_joint_profile(master_seed: int = 1) -> RunConfig:
    """Counting-run profile: 240k frames, 7% arm efficiency, measured-level darks.

    Pair rate and dark rate are set so the count correlation comes out near
    0.051 while the default cutoff of 20 loses no frames to overflow.
    """
    return RunConfig(
        source=SourceParams(
            mu_pairs=50.0,
            corr_sigma_theta=7.3 / FWHM_FACTOR,
            corr_sigma_phi=10.1 / FWHM_FACTOR,
            pump={"pulse_fs": 200, "repetition_khz": 11, "wavelength_nm": 400},
        ),
        detector=DetectorParams(
            eta_s=0.07, eta_i=0.07, dark_mean_s=1.30, dark_mean_i=1.30, dark_mean_noise=1.30
        ),
        run=RunControls(n_frames=240000, master_seed=master_seed, cutoff=20),
    )


def paper_spatial_profile(master_seed: int = 1) -> RunConfig:
    """Correlation-area profile: low pair rate and near-zero darks so the
    correlated ridge dominates the accidental background that the
    all-combinations weighting drags in."""
    return RunConfig(
        source=SourceParams(
            mu_pairs=2.0,
            corr_sigma_theta=7.3 / FWHM_FACTOR,
            corr_sigma_phi=10.1 / FWHM_FACTOR,
            pump={"pulse_fs": 200, "repetition_khz": 11, "wavelength_nm": 400},
        ),
        detector=DetectorParams(
            eta_s=0.07, eta_i=0.07, dark_mean_s=0.05, dark_mean_i=0.05, dark_mean_noise=0.05
        ),
        run=RunControls(
            n_frames=240000, master_seed=master_seed, cutoff=20, bin_width_mrad=1.0
        ),
    )
