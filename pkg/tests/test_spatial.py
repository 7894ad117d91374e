import numpy as np
import pytest
from scipy import optimize

from twinbeam.errors import NoPeakError
from twinbeam.spatial import (
    FWHM_FACTOR,
    CorrelationAccumulator,
    CrossSectionProfile,
    accumulate_frame,
    correlation_area_report,
    cross_section,
    fit_gaussian,
    merge_accumulators,
)


def make_acc(bin_width=1.0, phi_half=64.0, theta_half=32.0):
    return CorrelationAccumulator(
        bin_width=bin_width, phi_half_range=phi_half, theta_half_range=theta_half
    )


def uv(points):
    return np.asarray(points, dtype=float).reshape(-1, 2)


# ------------------------------------------------------------- accumulation


def test_combination_weights():
    acc = make_acc()
    sig = uv([(0.0, -5.0), (1.0, 5.0)])
    idl = uv([(0.0, 5.0), (-1.0, -5.0), (2.0, 0.0)])
    accumulate_frame(acc, sig, idl)
    # 2 x 3 combinations, each 1/6, so unit total in both coordinate grids
    assert acc.phi.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert acc.theta.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.isclose(acc.phi.weights[acc.phi.weights > 0], 1 / 6).all()
    assert acc.pair_frame_count == 1


def test_empty_strip_contributes_nothing():
    acc = make_acc()
    accumulate_frame(acc, uv([]), uv([(0.0, 0.0)]))
    accumulate_frame(acc, uv([(0.0, 0.0)]), uv([]))
    assert acc.frame_count == 2
    assert acc.pair_frame_count == 0
    assert acc.phi.weights.sum() == 0.0


def test_total_weight_equals_contributing_frames():
    rng = np.random.default_rng(4)
    acc = make_acc()
    contributing = 0
    for _ in range(500):
        n_s, n_i = rng.poisson(1.2, 2)
        sig = uv(rng.normal(0, 3, (n_s, 2)))
        idl = uv(rng.normal(0, 3, (n_i, 2)))
        accumulate_frame(acc, sig, idl)
        contributing += bool(n_s and n_i)
    assert acc.pair_frame_count == contributing
    assert acc.total_weight == contributing
    assert acc.phi.weights.sum() == pytest.approx(contributing, rel=1e-12)


def test_merge_matches_sequential_any_order():
    rng = np.random.default_rng(5)
    frames = []
    for _ in range(120):
        n_s, n_i = rng.poisson(1.5, 2)
        frames.append((rng.normal(0, 4, (n_s, 2)), rng.normal(0, 4, (n_i, 2))))
    sequential = make_acc()
    for sig, idl in frames:
        accumulate_frame(sequential, sig, idl)
    shards = [make_acc() for _ in range(4)]
    for k, (sig, idl) in enumerate(frames):
        accumulate_frame(shards[k % 4], sig, idl)
    for order in ([0, 1, 2, 3], [3, 1, 0, 2]):
        merged = shards[order[0]]
        for k in order[1:]:
            merged = merge_accumulators(merged, shards[k])
        np.testing.assert_allclose(merged.phi.weights, sequential.phi.weights, atol=1e-12)
        np.testing.assert_allclose(merged.theta.weights, sequential.theta.weights, atol=1e-12)
        assert merged.pair_frame_count == sequential.pair_frame_count


# ------------------------------------------------------------ cross-section


def test_exact_anticorrelation_lands_in_central_bin():
    acc = make_acc(bin_width=2.0)
    rng = np.random.default_rng(6)
    for _ in range(300):
        u = rng.uniform(-20, 20)
        v = rng.uniform(-25, 25)
        accumulate_frame(acc, uv([(u, v)]), uv([(-u, -v)]))
    for coord in ("phi", "theta"):
        profile = cross_section(acc, coord)
        center = np.argmin(np.abs(profile.s_centers))
        assert profile.s_centers[center] == pytest.approx(0.0, abs=1e-9)
        assert profile.ordinate[center] == pytest.approx(300.0, rel=1e-12)
        assert profile.ordinate.sum() == pytest.approx(300.0, rel=1e-12)


def test_cross_section_preserves_total_weight():
    rng = np.random.default_rng(7)
    acc = make_acc()
    for _ in range(200):
        n_s, n_i = 1 + rng.poisson(1.0, 2)
        accumulate_frame(acc, rng.normal(0, 5, (n_s, 2)), rng.normal(0, 5, (n_i, 2)))
    for coord in ("phi", "theta"):
        profile = cross_section(acc, coord)
        hist = acc.phi if coord == "phi" else acc.theta
        assert profile.ordinate.sum() == pytest.approx(hist.weights.sum(), rel=1e-12)


def test_uniform_independent_events_give_triangle_profile():
    # closed form: s = u + v with u, v ~ U(-w/2, w/2) has density (w - |s|)/w^2
    w = 40.0
    rng = np.random.default_rng(8)
    acc = make_acc(bin_width=2.0, phi_half=32.0, theta_half=32.0)
    n_frames = 40_000
    for _ in range(n_frames):
        accumulate_frame(
            acc,
            np.column_stack([rng.uniform(-w / 2, w / 2, 1), rng.uniform(-w / 2, w / 2, 1)]),
            np.column_stack([rng.uniform(-w / 2, w / 2, 1), rng.uniform(-w / 2, w / 2, 1)]),
        )
    profile = cross_section(acc, "phi")
    expected = np.clip(w - np.abs(profile.s_centers), 0.0, None) / w**2
    expected = expected * profile.bin_width * n_frames
    err = np.sqrt(np.clip(expected, 1.0, None))
    assert np.all(np.abs(profile.ordinate - expected) < 5 * err)
    # and no peak sticks out anywhere
    mid = np.abs(profile.s_centers) < 3
    assert profile.ordinate[mid].max() < expected[mid].max() * 1.05


def test_cross_section_empty_accumulator_fails():
    with pytest.raises(ValueError):
        cross_section(make_acc(), "phi")
    with pytest.raises(ValueError):
        cross_section(make_acc(), "theta")


def test_cross_section_unknown_coordinate():
    acc = make_acc()
    accumulate_frame(acc, uv([(0, 0)]), uv([(0, 0)]))
    with pytest.raises(ValueError):
        cross_section(acc, "radial")


# -------------------------------------------------------------------- fits


def synthetic_profile(a, c, sigma, b, bin_width=0.5, half=40.0, noise=0.0, seed=0):
    s = np.arange(-half, half + bin_width / 2, bin_width)
    y = a * np.exp(-((s - c) ** 2) / (2 * sigma**2)) + b
    if noise:
        y = y + np.random.default_rng(seed).normal(0, noise, s.size)
    return CrossSectionProfile("phi", s, y, bin_width, float(y.sum()))


def test_noiseless_gaussian_recovered_exactly():
    profile = synthetic_profile(a=1.0, c=0.0, sigma=2.0, b=0.0)
    fit = fit_gaussian(profile)
    assert fit.amplitude == pytest.approx(1.0, abs=1e-6)
    assert fit.center == pytest.approx(0.0, abs=1e-6)
    assert fit.sigma == pytest.approx(2.0, abs=1e-6)
    assert fit.offset == pytest.approx(0.0, abs=1e-6)
    assert fit.converged


def test_fwhm_identity():
    profile = synthetic_profile(a=5.0, c=1.0, sigma=3.0, b=0.5)
    fit = fit_gaussian(profile)
    assert fit.fwhm == pytest.approx(2.0 * np.sqrt(2.0 * np.log(2.0)) * 3.0, rel=1e-6)
    assert fit.fwhm == pytest.approx(7.0644, abs=2e-4)
    assert fit.fwhm == pytest.approx(FWHM_FACTOR * fit.sigma, rel=1e-14)


def test_fit_matches_curve_fit_on_noisy_data():
    profile = synthetic_profile(a=80.0, c=-1.3, sigma=4.2, b=12.0, noise=2.0, seed=42)
    fit = fit_gaussian(profile)

    def model(s, a, c, sigma, b):
        return a * np.exp(-((s - c) ** 2) / (2 * sigma**2)) + b

    popt, pcov = optimize.curve_fit(
        model, profile.s_centers, profile.ordinate, p0=[70, 0, 5, 10]
    )
    perr = np.sqrt(np.diag(pcov))
    assert fit.amplitude == pytest.approx(popt[0], rel=1e-5)
    assert fit.center == pytest.approx(popt[1], abs=1e-5)
    assert abs(fit.sigma) == pytest.approx(abs(popt[2]), rel=1e-5)
    assert fit.offset == pytest.approx(popt[3], rel=1e-4)
    assert fit.sigma_err == pytest.approx(perr[2], rel=1e-3)
    assert fit.amplitude_err == pytest.approx(perr[0], rel=1e-3)


def test_fit_uncertainty_covers_truth():
    hits, trials = 0, 30
    for seed in range(trials):
        profile = synthetic_profile(a=50.0, c=0.0, sigma=3.0, b=5.0, noise=1.5, seed=seed)
        fit = fit_gaussian(profile)
        hits += abs(fit.sigma - 3.0) < 2 * fit.sigma_err
    assert hits >= trials - 4  # ~95% coverage


def test_no_peak_raises():
    s = np.arange(-20.0, 20.5, 0.5)
    flat = CrossSectionProfile("phi", s, np.full(s.size, 3.0), 0.5, float(3.0 * s.size))
    with pytest.raises(NoPeakError):
        fit_gaussian(flat)


def test_too_few_populated_bins_rejected():
    s = np.arange(-5.0, 6.0, 1.0)
    y = np.zeros(s.size)
    y[5] = 4.0
    with pytest.raises(ValueError):
        fit_gaussian(CrossSectionProfile("phi", s, y, 1.0, 4.0))


# ------------------------------------------------------------------ report


def fill_correlated(acc, rng, n_frames, sigma_theta, sigma_phi, background=0.0, width=60.0):
    for _ in range(n_frames):
        u_t = rng.normal(0, 10.0)
        u_p = rng.uniform(-width / 2, width / 2)
        sig = [(u_t, u_p)]
        idl = [(-u_t + rng.normal(0, sigma_theta), -u_p + rng.normal(0, sigma_phi))]
        if background:
            for _ in range(rng.poisson(background)):
                sig.append((rng.normal(0, 10.0), rng.uniform(-width / 2, width / 2)))
            for _ in range(rng.poisson(background)):
                idl.append((rng.normal(0, 10.0), rng.uniform(-width / 2, width / 2)))
        accumulate_frame(acc, uv(sig), uv(idl))


def test_report_recovers_injected_widths():
    rng = np.random.default_rng(9)
    acc = make_acc(bin_width=1.0)
    sigma_theta, sigma_phi = 3.1, 4.29
    fill_correlated(acc, rng, 25_000, sigma_theta, sigma_phi, background=0.3)
    report = correlation_area_report(acc)
    assert report.theta.fit.fwhm == pytest.approx(FWHM_FACTOR * sigma_theta, abs=0.35)
    assert report.phi.fit.fwhm == pytest.approx(FWHM_FACTOR * sigma_phi, abs=0.35)
    assert not report.theta.resolution_limited
    assert report.pair_frame_count == 25_000


def test_zero_width_injection_is_resolution_limited():
    rng = np.random.default_rng(10)
    acc = make_acc(bin_width=2.0)
    fill_correlated(acc, rng, 4_000, 0.0, 0.0, background=0.5)
    report = correlation_area_report(acc)
    for result in (report.phi, report.theta):
        assert result.resolution_limited
        assert result.fit.fwhm < 2 * 2.0  # bounded by the binning, not the data


def test_blur_adds_variance_to_both_arms():
    # independent per-arm jitter of std tau inflates the sum-coordinate
    # variance by 2 tau^2; oracle below is the Monte Carlo second moment
    rng = np.random.default_rng(12)
    tau, sigma_phi = 1.5, 4.29
    acc = make_acc(bin_width=1.0)
    draws = []
    for _ in range(20_000):
        u_p = rng.uniform(-30, 30)
        jitter_s, jitter_i = rng.normal(0, tau, 2)
        spread = rng.normal(0, sigma_phi)
        sig = [(rng.normal(0, 10.0), u_p + jitter_s)]
        idl = [(rng.normal(0, 10.0), -u_p + spread + jitter_i)]
        accumulate_frame(acc, uv(sig), uv(idl))
        draws.append(sig[0][1] + idl[0][1])
    mc_sigma = np.std(draws, ddof=1)
    expected = np.sqrt(sigma_phi**2 + 2 * tau**2)
    assert mc_sigma == pytest.approx(expected, rel=0.02)
    report = correlation_area_report(acc)
    assert report.phi.fit.fwhm == pytest.approx(FWHM_FACTOR * expected, rel=0.04)
