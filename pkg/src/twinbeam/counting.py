"""Joint photocount statistics: histogram, correlation, classicality test.

The joint signal-idler photocount distribution of a frame ensemble is held
as an integer histogram over (c_S, c_I) up to a cutoff; counts above the
cutoff clamp into the edge bin and are tallied as overflow.  On top of it:

* marginals and the difference against their direct product,
* the normalized count correlation with a bootstrap standard error,
* the per-bin classicality bound  (n^n / n!) e^{-n}  per arm, which no
  photocount distribution of a classical field can exceed, together with a
  per-bin significance map of the measured excess,
* `analytic_joint`, the exact distribution for a Poisson pair source with
  independent per-arm binomial detection and additive Poisson darks; it is
  the brute-force oracle the Monte Carlo results are checked against.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.linalg import toeplitz
from scipy.special import gammaln

from .errors import UndefinedCorrelationError

DEFAULT_CUTOFF = 20


@dataclass
class JointHistogram:
    """Empirical joint photocount histogram.

    counts[c_s, c_i] frames observed at that count pair; the bin axes run
    0..cutoff inclusive.  `overflow` counts frames in which either arm was
    clamped to the cutoff; the sum of all bins always equals `n_frames`.
    """

    cutoff: int = DEFAULT_CUTOFF
    counts: np.ndarray = None  # type: ignore[assignment]
    n_frames: int = 0
    overflow: int = 0

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((self.cutoff + 1, self.cutoff + 1), dtype=np.int64)
        else:
            self.counts = np.asarray(self.counts, dtype=np.int64)
            if self.counts.shape != (self.cutoff + 1, self.cutoff + 1):
                raise ValueError(
                    f"counts shape {self.counts.shape} does not match cutoff {self.cutoff}"
                )

    @property
    def truncated(self) -> bool:
        return self.overflow > 0

    def add(self, c_s: int, c_i: int) -> "JointHistogram":
        if c_s < 0 or c_i < 0:
            raise ValueError(f"counts must be nonnegative, got ({c_s}, {c_i})")
        if c_s > self.cutoff or c_i > self.cutoff:
            self.overflow += 1
        self.counts[min(c_s, self.cutoff), min(c_i, self.cutoff)] += 1
        self.n_frames += 1
        return self

    def add_many(self, c_s: np.ndarray, c_i: np.ndarray) -> "JointHistogram":
        """Vectorized accumulation of count pairs."""
        c_s = np.asarray(c_s, dtype=np.int64)
        c_i = np.asarray(c_i, dtype=np.int64)
        if c_s.shape != c_i.shape:
            raise ValueError("count arrays must have identical shape")
        if c_s.size == 0:
            return self
        if np.any(c_s < 0) or np.any(c_i < 0):
            raise ValueError("counts must be nonnegative")
        over = (c_s > self.cutoff) | (c_i > self.cutoff)
        self.overflow += int(over.sum())
        cs = np.minimum(c_s, self.cutoff)
        ci = np.minimum(c_i, self.cutoff)
        flat = np.bincount(cs * (self.cutoff + 1) + ci, minlength=(self.cutoff + 1) ** 2)
        self.counts += flat.reshape(self.counts.shape)
        self.n_frames += c_s.size
        return self

    def pmf(self) -> np.ndarray:
        if self.n_frames == 0:
            raise ValueError("empty histogram")
        return self.counts / self.n_frames

    def copy(self) -> "JointHistogram":
        return JointHistogram(self.cutoff, self.counts.copy(), self.n_frames, self.overflow)


def accumulate(hist: JointHistogram, c_s: int, c_i: int) -> JointHistogram:
    """Record one frame's count pair (clamping above the cutoff)."""
    return hist.add(c_s, c_i)


def merge(a: JointHistogram, b: JointHistogram) -> JointHistogram:
    """Bin-wise sum; commutative and associative."""
    if a.cutoff != b.cutoff:
        raise ValueError(f"cutoff mismatch: {a.cutoff} vs {b.cutoff}")
    return JointHistogram(
        a.cutoff, a.counts + b.counts, a.n_frames + b.n_frames, a.overflow + b.overflow
    )


def marginals(hist: JointHistogram) -> tuple[np.ndarray, np.ndarray]:
    """Normalized signal and idler marginal distributions."""
    f = hist.pmf()
    return f.sum(axis=1), f.sum(axis=0)


def difference_map(hist: JointHistogram) -> np.ndarray:
    """f(c_S, c_I) minus the direct product of the marginals; sums to zero."""
    f = hist.pmf()
    f_s, f_i = f.sum(axis=1), f.sum(axis=0)
    return f - np.outer(f_s, f_i)


@dataclass(frozen=True)
class CorrelationResult:
    """Normalized count correlation with a nonparametric bootstrap error."""

    c_p: float
    std_err: float
    n_frames: int
    bootstrap_resamples: int


def _moments(weights: np.ndarray, cutoff: int) -> tuple[np.ndarray, ...]:
    """(mean_s, mean_i, var_s, var_i, cov) for pmf rows of shape (..., K*K)."""
    k = cutoff + 1
    idx_s = np.repeat(np.arange(k), k).astype(float)
    idx_i = np.tile(np.arange(k), k).astype(float)
    m_s = weights @ idx_s
    m_i = weights @ idx_i
    var_s = weights @ idx_s**2 - m_s**2
    var_i = weights @ idx_i**2 - m_i**2
    cov = weights @ (idx_s * idx_i) - m_s * m_i
    return m_s, m_i, var_s, var_i, cov


def correlation_coefficient(
    hist: JointHistogram, resamples: int = 200, seed: int = 0
) -> CorrelationResult:
    """Count correlation  cov / sqrt(var_s var_i)  over the frame ensemble.

    The standard error comes from `resamples` multinomial resamplings of the
    per-frame count pairs (frames are exchangeable, so resampling histogram
    mass is the frame bootstrap).  Raises UndefinedCorrelationError when
    either marginal has zero variance.
    """
    if hist.n_frames < 2:
        raise ValueError(f"need at least 2 frames, got {hist.n_frames}")
    f = hist.pmf().ravel()
    _, _, var_s, var_i, cov = _moments(f[None, :], hist.cutoff)
    if var_s[0] <= 0 or var_i[0] <= 0:
        raise UndefinedCorrelationError(
            f"zero marginal variance (var_s={var_s[0]:.3g}, var_i={var_i[0]:.3g})"
        )
    c_p = float(cov[0] / np.sqrt(var_s[0] * var_i[0]))

    rng = np.random.default_rng(seed)
    draws = rng.multinomial(hist.n_frames, f, size=resamples) / hist.n_frames
    _, _, bvar_s, bvar_i, bcov = _moments(draws, hist.cutoff)
    ok = (bvar_s > 0) & (bvar_i > 0)
    boots = bcov[ok] / np.sqrt(bvar_s[ok] * bvar_i[ok])
    std_err = float(np.std(boots, ddof=1)) if boots.size >= 2 else float("nan")
    return CorrelationResult(c_p, std_err, hist.n_frames, resamples)


def classicality_bound(n_s: int, n_i: int) -> float:
    """Largest joint probability at (n_s, n_i) reachable by a classical field.

    Evaluates (n^n / n!) e^{-n} per arm in the log domain, with 0^0 = 1, so
    the value stays finite for arbitrarily large counts.
    """
    if n_s < 0 or n_i < 0:
        raise ValueError(f"counts must be nonnegative, got ({n_s}, {n_i})")

    def log_term(n: int) -> float:
        if n == 0:
            return 0.0
        return n * np.log(n) - gammaln(n + 1) - n

    return float(np.exp(log_term(n_s) + log_term(n_i)))


def bound_grid(cutoff: int) -> np.ndarray:
    """classicality_bound evaluated on the (cutoff+1)^2 bin grid."""
    n = np.arange(cutoff + 1, dtype=float)
    log_one = np.zeros(cutoff + 1)
    pos = n > 0
    log_one[pos] = n[pos] * np.log(n[pos]) - gammaln(n[pos] + 1) - n[pos]
    return np.exp(log_one[:, None] + log_one[None, :])


@dataclass(frozen=True)
class ViolationBin:
    n_s: int
    n_i: int
    probability: float
    bound: float
    excess: float
    std_err: float
    significance: float


@dataclass
class CriterionReport:
    """Per-bin classicality-bound comparison for one histogram.

    `significance` is (f - bound) / sqrt(f (1-f) / N); bins with f equal to
    0 or 1 carry NaN there (undefined, not infinite).  `violations` lists the
    bins with positive excess, strongest first.
    """

    n_frames: int
    cutoff: int
    probability: np.ndarray
    bound: np.ndarray
    excess: np.ndarray
    std_err: np.ndarray
    significance: np.ndarray
    violations: list[ViolationBin] = field(default_factory=list)
    max_significance: float = float("nan")
    max_bin: tuple[int, int] = (-1, -1)


def criterion_test(hist: JointHistogram) -> CriterionReport:
    """Compare every bin of the measured distribution against the bound."""
    f = hist.pmf()
    bounds = bound_grid(hist.cutoff)
    excess = f - bounds
    se = np.sqrt(f * (1.0 - f) / hist.n_frames)
    defined = (f > 0.0) & (f < 1.0)
    significance = np.full_like(f, np.nan)
    significance[defined] = excess[defined] / se[defined]

    report = CriterionReport(
        n_frames=hist.n_frames,
        cutoff=hist.cutoff,
        probability=f,
        bound=bounds,
        excess=excess,
        std_err=se,
        significance=significance,
    )
    if np.any(defined):
        flat = np.where(np.isnan(significance), -np.inf, significance)
        best = np.unravel_index(np.argmax(flat), flat.shape)
        report.max_significance = float(significance[best])
        report.max_bin = (int(best[0]), int(best[1]))
    viol = np.argwhere(excess > 0.0)
    bins = [
        ViolationBin(
            int(i),
            int(j),
            float(f[i, j]),
            float(bounds[i, j]),
            float(excess[i, j]),
            float(se[i, j]),
            float(significance[i, j]),
        )
        for i, j in viol
    ]
    bins.sort(key=lambda b: (np.isnan(b.significance), -b.significance if not np.isnan(b.significance) else 0.0))
    report.violations = bins
    return report


@dataclass(frozen=True)
class AnalyticJoint:
    """Exact joint photocount pmf of the Poisson-pair detection model.

    The pmf is truncated at the cutoff without renormalization; `tail_mass`
    is the probability lost to the truncation.
    """

    pmf: np.ndarray
    tail_mass: float
    mu: float
    eta_s: float
    eta_i: float
    dark_s: float
    dark_i: float
    cutoff: int

    def marginals(self) -> tuple[np.ndarray, np.ndarray]:
        return self.pmf.sum(axis=1), self.pmf.sum(axis=0)

    def correlation(self) -> float:
        """Exact count correlation by direct summation over the pmf."""
        m_s, m_i, var_s, var_i, cov = _moments(self.pmf.ravel()[None, :], self.cutoff)
        if var_s[0] <= 0 or var_i[0] <= 0:
            raise UndefinedCorrelationError("zero marginal variance in analytic pmf")
        return float(cov[0] / np.sqrt(var_s[0] * var_i[0]))

    def criterion_excess(self) -> np.ndarray:
        """Exact per-bin excess over the classicality bound (no sampling error)."""
        return self.pmf - bound_grid(self.cutoff)


def _dark_convolution(arm: np.ndarray, dark: float, cutoff: int) -> np.ndarray:
    """Convolve each row of Bin(c; n, eta) with a Poisson(dark) pmf."""
    if dark == 0:
        return arm
    kernel = stats.poisson.pmf(np.arange(cutoff + 1), dark)
    first_row = np.zeros(cutoff + 1)
    first_row[0] = kernel[0]
    lower = toeplitz(kernel, first_row)  # lower[c, k] = kernel[c - k]
    return arm @ lower.T


def analytic_joint(
    mu: float,
    eta_s: float,
    eta_i: float,
    dark_s: float = 0.0,
    dark_i: float = 0.0,
    cutoff: int = DEFAULT_CUTOFF,
    max_tail: float = 1e-9,
) -> AnalyticJoint:
    """Exact joint photocount distribution of the pair-detection model.

      f(c_S, c_I) = sum_n Poisson(n; mu)
                    [Bin(.; n, eta_s) * Poisson(.; dark_s)](c_S)
                    [Bin(.; n, eta_i) * Poisson(.; dark_i)](c_I)

    The pair-number sum runs far enough into the Poisson tail to be exact at
    double precision.  Raises ValueError when the chosen cutoff truncates
    more than `max_tail` probability.
    """
    if mu < 0 or not np.isfinite(mu):
        raise ValueError(f"mu must be finite and >= 0, got {mu!r}")
    for name, eta in (("eta_s", eta_s), ("eta_i", eta_i)):
        if not 0.0 <= eta <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {eta!r}")
    for name, dark in (("dark_s", dark_s), ("dark_i", dark_i)):
        if dark < 0 or not np.isfinite(dark):
            raise ValueError(f"{name} must be finite and >= 0, got {dark!r}")
    if cutoff < 0:
        raise ValueError(f"cutoff must be >= 0, got {cutoff}")

    n_max = int(np.ceil(mu + 12.0 * np.sqrt(mu + 1.0) + 30.0))
    ns = np.arange(n_max + 1)
    weights = stats.poisson.pmf(ns, mu)
    counts = np.arange(cutoff + 1)
    arm_s = stats.binom.pmf(counts[None, :], ns[:, None], eta_s)
    arm_i = stats.binom.pmf(counts[None, :], ns[:, None], eta_i)
    arm_s = _dark_convolution(arm_s, dark_s, cutoff)
    arm_i = _dark_convolution(arm_i, dark_i, cutoff)
    pmf = np.einsum("n,ns,ni->si", weights, arm_s, arm_i)
    tail = float(max(0.0, 1.0 - pmf.sum()))
    if tail >= max_tail:
        raise ValueError(
            f"cutoff {cutoff} truncates {tail:.3e} of the distribution "
            f"(limit {max_tail:.1e}); increase the cutoff"
        )
    return AnalyticJoint(pmf, tail, mu, eta_s, eta_i, dark_s, dark_i, cutoff)


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    """Total variation distance between two (possibly truncated) pmfs."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())
