"""Figure rendering for the report paths.

Each CLI analysis writes its delimited tables and, unless figures are
disabled, the matching PNG rendered here: the joint count distribution with
the classicality-violation contour, the difference against the marginal
product, and the two-panel-per-coordinate correlation-area figure.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .counting import CriterionReport, JointHistogram
from .spatial import CorrelationAreaReport, CorrelationAccumulator


def save_joint_figure(hist: JointHistogram, report: CriterionReport, path) -> str:
    """Color-density joint distribution with a contour around violating bins."""
    f = hist.pmf()
    fig, ax = plt.subplots(figsize=(5.2, 4.4))
    with np.errstate(divide="ignore"):
        logf = np.where(f > 0, np.log10(f), np.nan)
    im = ax.imshow(logf.T, origin="lower", cmap="viridis", interpolation="nearest")
    fig.colorbar(im, ax=ax, label=r"$\log_{10} f(c_S, c_I)$")
    if report.violations:
        ax.contour(
            report.excess.T, levels=[0.0], colors="red", linewidths=1.2, origin="lower"
        )
    ax.set_xlabel(r"$c_S$")
    ax.set_ylabel(r"$c_I$")
    ax.set_title(f"joint photocounts, {hist.n_frames} frames")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def save_difference_figure(diff: np.ndarray, path) -> str:
    """Measured joint distribution minus the product of its marginals."""
    fig, ax = plt.subplots(figsize=(5.2, 4.4))
    vmax = np.abs(diff).max() or 1.0
    im = ax.imshow(
        diff.T, origin="lower", cmap="RdBu_r", vmin=-vmax, vmax=vmax, interpolation="nearest"
    )
    fig.colorbar(im, ax=ax, label=r"$f - f_S \otimes f_I$")
    ax.contour(diff.T, levels=[0.0], colors="black", linewidths=0.8, origin="lower")
    ax.set_xlabel(r"$c_S$")
    ax.set_ylabel(r"$c_I$")
    ax.set_title("difference to marginal product")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def save_spatial_figure(
    acc: CorrelationAccumulator, report: CorrelationAreaReport, path
) -> str:
    """Signal-vs-idler position histograms and their ridge cross-sections."""
    fig, axes = plt.subplots(2, 2, figsize=(9.6, 7.6))
    panels = [
        ("phi", acc.phi, report.phi, "azimuthal"),
        ("theta", acc.theta, report.theta, "radial"),
    ]
    for row, (_, hist2d, result, label) in enumerate(panels):
        ax = axes[row, 0]
        extent = [-hist2d.half_range, hist2d.half_range] * 2
        im = ax.imshow(
            hist2d.weights.T,
            origin="lower",
            extent=extent,
            cmap="inferno",
            aspect="equal",
            interpolation="nearest",
        )
        fig.colorbar(im, ax=ax, label="weight")
        ax.set_xlabel(f"signal {label} offset (mrad)")
        ax.set_ylabel(f"idler {label} offset (mrad)")

        ax = axes[row, 1]
        profile, fit = result.profile, result.fit
        ax.step(profile.s_centers, profile.ordinate, where="mid", lw=0.9, label="data")
        dense = np.linspace(profile.s_centers[0], profile.s_centers[-1], 600)
        model = fit.amplitude * np.exp(-((dense - fit.center) ** 2) / (2 * fit.sigma**2)) + fit.offset
        ax.plot(dense, model, "r-", lw=1.2, label="gaussian fit")
        ax.set_xlabel("signal + idler offset (mrad)")
        ax.set_ylabel("weight per bin")
        ax.set_title(f"{label}: FWHM = {fit.fwhm:.2f} $\\pm$ {fit.fwhm_err:.2f} mrad")
        ax.legend(fontsize=8)
        half = min(10 * fit.sigma, profile.s_centers[-1])
        ax.set_xlim(fit.center - half, fit.center + half)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)
