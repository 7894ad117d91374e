"""Twin-photon pair generation on the accepted strip of the emission cone.

A frame (one pump pulse) produces a Poisson number of photon pairs.  Each
pair is placed on the cone layer inside the accepted angular window: the
signal photon gets an azimuthal offset `phi_s` uniform over the window and a
radial angle `theta_s` Gaussian around the cone angle `theta0`.  The idler
sits at the diametrically opposite point, which in strip-local coordinates
means `phi_i = -phi_s` and `theta_i = theta_s`, smeared by independent
Gaussian conditional spreads (`corr_sigma_phi`, `corr_sigma_theta`) that
model the finite correlation area.

Angles are in milliradians throughout.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError
from .seeding import SOURCE_STREAM, FrameStreams, frame_generator


class PairEvent(NamedTuple):
    """Emission angles of one signal-idler pair (strip-local, mrad)."""

    theta_s: float
    phi_s: float
    theta_i: float
    phi_i: float


@dataclass(frozen=True)
class SourceParams:
    """Pair-source settings.

    mu_pairs         mean pairs per frame entering the accepted window
    theta0           mean radial emission angle of the cone layer (mrad);
                     bookkeeping for the absolute geometry, the analysis only
                     ever uses offsets from it
    layer_sigma_theta  radial width (std) of the occupied cone layer, mrad
    phi_window       azimuthal extent of the accepted strip, mrad
    corr_sigma_theta conditional radial spread of the idler around the
                     conjugate point, mrad
    corr_sigma_phi   conditional azimuthal spread, mrad
    pump             free-form description of the pump (not used numerically)
    """

    mu_pairs: float = 50.0
    theta0: float = 270.5
    layer_sigma_theta: float = 18.0
    phi_window: float = 120.0
    corr_sigma_theta: float = 3.1
    corr_sigma_phi: float = 4.29
    pump: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("mu_pairs", "layer_sigma_theta", "corr_sigma_theta", "corr_sigma_phi"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ConfigError(f"source.{name}: must be finite and >= 0, got {value!r}")
        if not np.isfinite(self.theta0):
            raise ConfigError(f"source.theta0: must be finite, got {self.theta0!r}")
        if not np.isfinite(self.phi_window) or self.phi_window <= 0:
            raise ConfigError(f"source.phi_window: must be finite and > 0, got {self.phi_window!r}")


def sample_pair_arrays(
    params: SourceParams, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """One frame of pairs as (theta_s, phi_s, theta_i, phi_i) arrays.

    Draw order is part of the reproducibility contract: pair count, signal
    azimuths, signal radial angles, idler azimuthal offsets, idler radial
    offsets.
    """
    n = rng.poisson(params.mu_pairs)
    half = 0.5 * params.phi_window
    phi_s = rng.uniform(-half, half, n)
    theta_s = rng.normal(params.theta0, params.layer_sigma_theta, n)
    phi_i = -phi_s + rng.normal(0.0, params.corr_sigma_phi, n)
    theta_i = theta_s + rng.normal(0.0, params.corr_sigma_theta, n)
    return theta_s, phi_s, theta_i, phi_i


def sample_frame(
    params: SourceParams,
    master_seed: int,
    frame_index: int,
    streams: FrameStreams | None = None,
) -> list[PairEvent]:
    """Pairs emitted in one frame, deterministic in (master_seed, frame_index)."""
    if streams is not None:
        rng = streams.get(frame_index, SOURCE_STREAM)
    else:
        rng = frame_generator(master_seed, frame_index, SOURCE_STREAM)
    theta_s, phi_s, theta_i, phi_i = sample_pair_arrays(params, rng)
    return [
        PairEvent(ts, ps, ti, pi)
        for ts, ps, ti, pi in zip(theta_s, phi_s, theta_i, phi_i)
    ]
