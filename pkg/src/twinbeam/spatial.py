"""Spatial correlation-area measurement from strip-local detection positions.

Per frame, every signal detection is combined with every idler detection:
with n_s and n_i detections the frame contributes n_s * n_i points, each of
weight 1/(n_s n_i), to a 2-D signal-vs-idler histogram in the azimuthal
coordinate and another in the radial coordinate.  Frames with an empty strip
contribute nothing, so each contributing frame adds exactly unit weight.

Strip-local coordinates are offsets from the strip centers in mrad, with the
idler radial axis carrying the strip's horizontal mirror; a perfectly
correlated pair then lands at u_idler = -u_signal in both coordinates, and
the correlated ridge shows up as an anti-diagonal.  Its width is measured by
re-binning the 2-D weights onto the sum coordinate s = u_signal + u_idler
(the cross-section perpendicular to the ridge) and fitting a Gaussian with a
constant background; the quoted correlation-area dimension is the FWHM of
that fit, with no extra geometric rescaling of the sum coordinate.
"""

from dataclasses import dataclass

import numpy as np

from .errors import FitConvergenceError, NoPeakError

FWHM_FACTOR = float(2.0 * np.sqrt(2.0 * np.log(2.0)))

COORD_PHI = "phi"
COORD_THETA = "theta"


@dataclass
class AxisHist:
    """Square 2-D weighted histogram over (u_signal, u_idler)."""

    bin_width: float
    half_range: float
    weights: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.bin_width <= 0 or self.half_range <= 0:
            raise ValueError("bin_width and half_range must be positive")
        self.n_bins = int(round(2.0 * self.half_range / self.bin_width))
        if self.n_bins < 1:
            raise ValueError("histogram range smaller than one bin")
        if self.weights is None:
            self.weights = np.zeros((self.n_bins, self.n_bins), dtype=float)
        else:
            self.weights = np.asarray(self.weights, dtype=float)
            if self.weights.shape != (self.n_bins, self.n_bins):
                raise ValueError("weights shape does not match binning")

    @property
    def centers(self) -> np.ndarray:
        return -self.half_range + (np.arange(self.n_bins) + 0.5) * self.bin_width

    def _index(self, u: np.ndarray) -> np.ndarray:
        return np.floor((u + self.half_range) / self.bin_width).astype(np.int64)

    def add_combinations(self, u_signal: np.ndarray, u_idler: np.ndarray, weight: float):
        """Add every (signal, idler) combination with the given weight."""
        i = self._index(np.asarray(u_signal, dtype=float))
        j = self._index(np.asarray(u_idler, dtype=float))
        ok_i = (i >= 0) & (i < self.n_bins)
        ok_j = (j >= 0) & (j < self.n_bins)
        i = i[ok_i]
        j = j[ok_j]
        if i.size == 0 or j.size == 0:
            return
        flat = (i[:, None] * self.n_bins + j[None, :]).ravel()
        hits = np.bincount(flat, minlength=self.n_bins**2).reshape(self.weights.shape)
        self.weights += weight * hits

    def sum_coordinate(self) -> tuple[np.ndarray, np.ndarray]:
        """Exact re-binning onto s = u_signal + u_idler.

        Bin (i, j) has center c_i + c_j, so anti-diagonals of the 2-D grid
        map one-to-one onto a 1-D grid of the same bin width; total weight is
        preserved exactly.
        """
        n = self.n_bins
        k = (np.arange(n)[:, None] + np.arange(n)[None, :]).ravel()
        ordinate = np.bincount(k, weights=self.weights.ravel(), minlength=2 * n - 1)
        s_centers = -2.0 * self.half_range + (np.arange(2 * n - 1) + 1.0) * self.bin_width
        return s_centers, ordinate


@dataclass
class CorrelationAccumulator:
    """Weighted position-correlation histograms for both coordinates.

    `pair_frame_count` is the number of frames that had at least one
    detection in each strip; because per-frame weights sum to one, it equals
    the total accumulated weight exactly.
    """

    bin_width: float
    phi_half_range: float = 64.0
    theta_half_range: float = 32.0
    phi: AxisHist = None  # type: ignore[assignment]
    theta: AxisHist = None  # type: ignore[assignment]
    frame_count: int = 0
    pair_frame_count: int = 0

    def __post_init__(self):
        if self.phi is None:
            self.phi = AxisHist(self.bin_width, self.phi_half_range)
        if self.theta is None:
            self.theta = AxisHist(self.bin_width, self.theta_half_range)

    @property
    def total_weight(self) -> int:
        return self.pair_frame_count

    def add_frame(self, signal_uv: np.ndarray, idler_uv: np.ndarray):
        """Accumulate one frame of strip-local events.

        `signal_uv` and `idler_uv` are (k, 2) arrays of (u_theta, u_phi)
        offsets in mrad.  All n_s * n_i combinations enter with weight
        1/(n_s n_i); frames with an empty strip only bump the frame counter.
        """
        self.frame_count += 1
        signal_uv = np.asarray(signal_uv, dtype=float).reshape(-1, 2)
        idler_uv = np.asarray(idler_uv, dtype=float).reshape(-1, 2)
        n_s, n_i = len(signal_uv), len(idler_uv)
        if n_s == 0 or n_i == 0:
            return
        self.pair_frame_count += 1
        weight = 1.0 / (n_s * n_i)
        self.theta.add_combinations(signal_uv[:, 0], idler_uv[:, 0], weight)
        self.phi.add_combinations(signal_uv[:, 1], idler_uv[:, 1], weight)


def accumulate_frame(
    acc: CorrelationAccumulator, signal_events, idler_events
) -> CorrelationAccumulator:
    """Add one frame's detections; events are (u_theta, u_phi) pairs."""
    acc.add_frame(
        np.asarray(signal_events, dtype=float).reshape(-1, 2),
        np.asarray(idler_events, dtype=float).reshape(-1, 2),
    )
    return acc


def merge_accumulators(
    a: CorrelationAccumulator, b: CorrelationAccumulator
) -> CorrelationAccumulator:
    """Bin-wise sum of two accumulators with identical binning."""
    for name in ("bin_width", "phi_half_range", "theta_half_range"):
        if getattr(a, name) != getattr(b, name):
            raise ValueError(f"accumulator {name} mismatch")
    out = CorrelationAccumulator(a.bin_width, a.phi_half_range, a.theta_half_range)
    out.phi.weights = a.phi.weights + b.phi.weights
    out.theta.weights = a.theta.weights + b.theta.weights
    out.frame_count = a.frame_count + b.frame_count
    out.pair_frame_count = a.pair_frame_count + b.pair_frame_count
    return out


@dataclass
class CrossSectionProfile:
    """1-D profile of the correlation ridge along s = u_signal + u_idler."""

    coordinate: str
    s_centers: np.ndarray
    ordinate: np.ndarray
    bin_width: float
    total_weight: float


def cross_section(acc: CorrelationAccumulator, coordinate: str) -> CrossSectionProfile:
    """Perpendicular cross-section of one coordinate's correlation ridge."""
    if acc.pair_frame_count == 0:
        raise ValueError("empty accumulator: no frame had both strips occupied")
    if coordinate == COORD_PHI:
        hist = acc.phi
    elif coordinate == COORD_THETA:
        hist = acc.theta
    else:
        raise ValueError(f"coordinate must be {COORD_PHI!r} or {COORD_THETA!r}, got {coordinate!r}")
    s_centers, ordinate = hist.sum_coordinate()
    return CrossSectionProfile(
        coordinate, s_centers, ordinate, hist.bin_width, float(ordinate.sum())
    )


@dataclass(frozen=True)
class GaussianFit:
    """Peak parameters of  a exp(-(s-c)^2 / 2 sigma^2) + b."""

    amplitude: float
    center: float
    sigma: float
    offset: float
    amplitude_err: float
    center_err: float
    sigma_err: float
    offset_err: float
    residual_norm: float
    converged: bool
    iterations: int

    @property
    def fwhm(self) -> float:
        return FWHM_FACTOR * self.sigma

    @property
    def fwhm_err(self) -> float:
        return FWHM_FACTOR * self.sigma_err


def _gauss(s: np.ndarray, a: float, c: float, sigma: float, b: float) -> np.ndarray:
    return a * np.exp(-((s - c) ** 2) / (2.0 * sigma**2)) + b


def _jacobian(s: np.ndarray, a: float, c: float, sigma: float) -> np.ndarray:
    d = s - c
    e = np.exp(-(d**2) / (2.0 * sigma**2))
    j = np.empty((s.size, 4))
    j[:, 0] = e
    j[:, 1] = a * e * d / sigma**2
    j[:, 2] = a * e * d**2 / sigma**3
    j[:, 3] = 1.0
    return j


def initial_guess(s: np.ndarray, y: np.ndarray, bin_width: float) -> tuple[float, float, float, float]:
    """Moment-based starting point around the peak.

    Baseline from the median, amplitude from the maximum, center from the
    weighted mean of the contiguous above-half-maximum run, width from that
    run's half-max crossing distance.  The half-max estimate is robust
    against a broad pedestal under the peak, which a global second moment
    is not.
    """
    b0 = float(np.median(y))
    a0 = float(y.max() - b0)
    if a0 <= 0:
        raise NoPeakError("profile maximum does not exceed the baseline")
    peak = int(np.argmax(y))
    above = y - b0 > 0.5 * a0
    lo = peak
    while lo > 0 and above[lo - 1]:
        lo -= 1
    hi = peak
    while hi < y.size - 1 and above[hi + 1]:
        hi += 1
    w = np.clip(y[lo : hi + 1] - b0, 0.0, None)
    ss = s[lo : hi + 1]
    total = w.sum()
    if total <= 0:
        raise NoPeakError("no weight above the baseline around the maximum")
    c0 = float((ss * w).sum() / total)
    fwhm0 = (hi - lo + 1) * bin_width
    sigma0 = max(fwhm0 / FWHM_FACTOR, 0.5 * bin_width)
    return a0, c0, sigma0, b0


def fit_gaussian(
    profile: CrossSectionProfile,
    fit_half_width: float | None = None,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> GaussianFit:
    """Least-squares Gaussian-plus-background fit of a cross-section.

    Damped Gauss-Newton: each step solves the linearized normal equations
    with a multiplicative damping term that grows whenever the residual would
    increase.  Converges when the relative residual change drops below `tol`.
    Parameter uncertainties come from the linearized covariance at the
    optimum.  `fit_half_width` restricts the fit to |s - c0| below it (around
    the moment-based center), which keeps a slowly varying background from
    biasing the width.
    """
    s_all = np.asarray(profile.s_centers, dtype=float)
    y_all = np.asarray(profile.ordinate, dtype=float)
    if np.count_nonzero(y_all) < 8:
        raise ValueError(
            f"need at least 8 populated bins, got {np.count_nonzero(y_all)}"
        )
    a0, c0, sigma0, b0 = initial_guess(s_all, y_all, profile.bin_width)
    if fit_half_width is not None:
        window = np.abs(s_all - c0) <= fit_half_width
        if window.sum() < 8:
            window = np.abs(s_all - c0) <= 8 * profile.bin_width
        s, y = s_all[window], y_all[window]
    else:
        s, y = s_all, y_all

    params = np.array([a0, c0, sigma0, b0])
    resid = y - _gauss(s, *params)
    ssr = float(resid @ resid)
    noise_floor = 1e-24 * max(float(y @ y), 1e-300)  # exact-model SSR underflows, not stalls
    lam = 1e-3
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        jac = _jacobian(s, params[0], params[1], params[2])
        hess = jac.T @ jac
        grad = jac.T @ resid
        accepted = False
        for _ in range(50):
            damped = hess + lam * np.diag(np.diag(hess)) + 1e-300 * np.eye(4)
            try:
                step = np.linalg.solve(damped, grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(damped, grad, rcond=None)[0]
            trial = params + step
            trial[2] = abs(trial[2])
            if trial[2] < 1e-12:
                trial[2] = 1e-12
            trial_resid = y - _gauss(s, *trial)
            trial_ssr = float(trial_resid @ trial_resid)
            if trial_ssr <= ssr:
                accepted = True
                lam = max(lam / 3.0, 1e-12)
                break
            lam *= 10.0
            if lam > 1e14:
                break
        if not accepted:
            # damping exhausted without a downhill step: stationary point
            converged = True
            break
        change = ssr - trial_ssr
        small_step = np.all(np.abs(step) <= 1e-12 * (np.abs(params) + 1e-300))
        params, resid, ssr = trial, trial_resid, trial_ssr
        if change <= tol * max(ssr, 1e-300) or ssr <= noise_floor or small_step:
            converged = True
            break
    if not converged:
        raise FitConvergenceError(
            "gaussian fit did not converge", iterations, float(np.sqrt(ssr))
        )
    if params[0] <= 0:
        raise NoPeakError(f"fitted amplitude is not positive ({params[0]:.4g})")

    jac = _jacobian(s, params[0], params[1], params[2])
    hess = jac.T @ jac
    dof = max(s.size - 4, 1)
    try:
        cov = np.linalg.inv(hess) * (ssr / dof)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(hess) * (ssr / dof)
    errs = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return GaussianFit(
        amplitude=float(params[0]),
        center=float(params[1]),
        sigma=float(params[2]),
        offset=float(params[3]),
        amplitude_err=float(errs[0]),
        center_err=float(errs[1]),
        sigma_err=float(errs[2]),
        offset_err=float(errs[3]),
        residual_norm=float(np.sqrt(ssr)),
        converged=converged,
        iterations=iterations,
    )


@dataclass(frozen=True)
class CoordinateResult:
    profile: CrossSectionProfile
    fit: GaussianFit
    resolution_limited: bool


@dataclass(frozen=True)
class CorrelationAreaReport:
    """Both correlation-area dimensions with their fits and raw profiles."""

    phi: CoordinateResult
    theta: CoordinateResult
    frame_count: int
    pair_frame_count: int

    def fwhm(self, coordinate: str) -> tuple[float, float]:
        result = self.phi if coordinate == COORD_PHI else self.theta
        return result.fit.fwhm, result.fit.fwhm_err


def correlation_area_report(
    acc: CorrelationAccumulator, fit_sigmas: float = 4.0
) -> CorrelationAreaReport:
    """Cross-sections and Gaussian fits for both coordinates.

    The fit window is +-`fit_sigmas` moment-estimated widths around the peak.
    A fitted FWHM below twice the bin width is flagged resolution-limited:
    the true width is then only bounded from above by the binning.
    """
    results = {}
    for coordinate in (COORD_PHI, COORD_THETA):
        profile = cross_section(acc, coordinate)
        a0, c0, sigma0, b0 = initial_guess(
            profile.s_centers, profile.ordinate, profile.bin_width
        )
        fit = fit_gaussian(profile, fit_half_width=fit_sigmas * sigma0)
        results[coordinate] = CoordinateResult(
            profile, fit, resolution_limited=fit.fwhm < 2.0 * profile.bin_width
        )
    return CorrelationAreaReport(
        phi=results[COORD_PHI],
        theta=results[COORD_THETA],
        frame_count=acc.frame_count,
        pair_frame_count=acc.pair_frame_count,
    )
