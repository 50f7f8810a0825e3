#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <vector>

#include "omsq/estimate.hpp"
#include "omsq/filters.hpp"
#include "omsq/state_space.hpp"
#include "oracles.hpp"

using Catch::Approx;
using namespace omsq;

namespace {

std::vector<double> record_grid(size_t n, double fs) {
    std::vector<double> f(n / 2 + 1);
    for (size_t k = 0; k < f.size(); ++k) f[k] = fs * static_cast<double>(k) / static_cast<double>(n);
    return f;
}

FilterResponse zero_filter(size_t n, double fs) {
    FilterResponse r;
    r.f_hz = record_grid(n, fs);
    r.Hq.assign(r.f_hz.size(), 0.0);
    r.Hp.assign(r.f_hz.size(), 0.0);
    return r;
}

double wrap_angle(double deg) {
    while (deg <= -90.0) deg += 180.0;
    while (deg > 90.0) deg -= 180.0;
    return deg;
}

// Closed-form 2x2 symmetric eigensystem for [[a, c], [c, b]]: eigenvalues
// mean -/+ hypot and the minor-axis orientation from the small eigenvector
// (c, lambda_min - a).
struct EigenOracle {
    double lo, hi, angle_deg;
    EigenOracle(double a, double b, double c) {
        const double mean = 0.5 * (a + b);
        const double r = std::hypot(0.5 * (b - a), c);
        lo = mean - r;
        hi = mean + r;
        angle_deg = c == 0.0 && a <= b ? 0.0
                                       : wrap_angle(std::atan2(lo - a, c) * 180.0 / constants::pi);
    }
};

Spectrum flat_spectrum(const std::vector<double>& f, double level) {
    Spectrum s;
    s.f = f;
    s.v.assign(f.size(), level);
    s.resolution = f.size() > 1 ? f[1] - f[0] : 0.0;
    return s;
}

} // namespace

TEST_CASE("conditional state from a covariance matrix", "[estimate]") {
    SECTION("integrated entries reported in the reference analysis") {
        Eigen::Matrix2d V;
        V << 570.0, 2160.0, 2160.0, 14000.0;
        const ConditionalState s = state_from_covariance(V);
        const EigenOracle ora(570.0, 14000.0, 2160.0);

        CHECK(s.squeeze_var == Approx(ora.lo).epsilon(1e-12));
        CHECK(s.antisqueeze_var == Approx(ora.hi).epsilon(1e-12));
        CHECK(s.angle_deg == Approx(ora.angle_deg).margin(1e-10));
        CHECK(s.purity == Approx(1.0 / std::sqrt(V.determinant())).epsilon(1e-14));

        // headline values: variance eigenvalues ~231 / 1.43e4, angle ~8.9
        // degrees, purity ~5.5e-4
        CHECK(s.squeeze_var == Approx(231.0).epsilon(1e-3));
        CHECK(s.antisqueeze_var == Approx(1.434e4).epsilon(1e-3));
        CHECK(std::abs(s.angle_deg) == Approx(8.9).margin(0.05));
        CHECK(s.angle_deg < 0.0);
        CHECK(s.purity == Approx(5.5e-4).epsilon(0.02));
        CHECK_FALSE(s.below_vacuum);

        CHECK(s.purity * std::sqrt(s.V.determinant()) == Approx(1.0).epsilon(1e-12));
        CHECK(s.V(0, 1) == s.V(1, 0));
        CHECK(s.squeeze_var <= s.antisqueeze_var);
    }

    SECTION("isotropic covariance takes the angle tie-break") {
        const ConditionalState s = state_from_covariance(Eigen::Matrix2d::Identity());
        CHECK(s.squeeze_var == Approx(1.0));
        CHECK(s.antisqueeze_var == Approx(1.0));
        CHECK(s.angle_deg == 0.0);
        CHECK(s.purity == Approx(1.0).epsilon(1e-14));
        CHECK_FALSE(s.below_vacuum);
    }

    SECTION("squeezing along p") {
        Eigen::Matrix2d V = Eigen::Matrix2d::Zero();
        V(0, 0) = 2.0;
        V(1, 1) = 0.5;
        const ConditionalState s = state_from_covariance(V);
        CHECK(s.squeeze_var == Approx(0.5).epsilon(1e-14));
        CHECK(s.antisqueeze_var == Approx(2.0).epsilon(1e-14));
        CHECK(s.angle_deg == Approx(90.0).margin(1e-10));
        CHECK(s.purity == Approx(1.0).epsilon(1e-14));
        CHECK(s.below_vacuum);
    }

    SECTION("indefinite or degenerate input is rejected") {
        Eigen::Matrix2d bad;
        bad << 1.0, 3.0, 3.0, 1.0; // det < 0
        CHECK_THROWS_AS(state_from_covariance(bad), numeric_error);
        bad << -2.0, 0.0, 0.0, -1.0; // negative definite
        CHECK_THROWS_AS(state_from_covariance(bad), numeric_error);
        CHECK_THROWS_AS(state_from_covariance(Eigen::Matrix2d::Zero()), numeric_error);
    }
}

TEST_CASE("rotation equivariance of the squeeze ellipse", "[estimate]") {
    Eigen::Matrix2d V;
    V << 570.0, 2160.0, 2160.0, 14000.0;
    const ConditionalState base = state_from_covariance(V);

    for (double th_deg : {-80.0, -45.0, -30.0, -10.0, 15.0, 30.0, 60.0, 85.0}) {
        const double th = th_deg * constants::pi / 180.0;
        Eigen::Matrix2d R;
        R << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
        const ConditionalState rot = state_from_covariance(R * V * R.transpose());

        CAPTURE(th_deg);
        CHECK(rot.angle_deg == Approx(wrap_angle(base.angle_deg + th_deg)).margin(1e-10));
        CHECK(rot.purity == Approx(base.purity).epsilon(1e-12));
        CHECK(rot.squeeze_var == Approx(base.squeeze_var).epsilon(1e-12));
        CHECK(rot.antisqueeze_var == Approx(base.antisqueeze_var).epsilon(1e-12));
    }
}

TEST_CASE("covariance from band-integrated spectra", "[estimate][oracle]") {
    // Flat densities over an exactly gridded band make the trapezoid integrals
    // analytic: integral = level * (f_hi - f_lo).
    std::vector<double> f;
    for (double v = 0.0; v <= 2500.0; v += 5.0) f.push_back(v);
    const double f_lo = 105.0, f_hi = 1780.0, span = f_hi - f_lo;
    const Spectrum s_qq = flat_spectrum(f, 570.0 / span);
    const Spectrum s_pp = flat_spectrum(f, 14000.0 / span);
    const Spectrum s_qp = flat_spectrum(f, 2160.0 / span);

    SECTION("recovers the generating matrix exactly") {
        const ConditionalState s = covariance_from_spectra(s_qq, s_pp, s_qp, Band{f_lo, f_hi});
        CHECK(s.V(0, 0) == Approx(570.0).epsilon(1e-12));
        CHECK(s.V(1, 1) == Approx(14000.0).epsilon(1e-12));
        CHECK(s.V(0, 1) == Approx(2160.0).epsilon(1e-12));
        const EigenOracle ora(570.0, 14000.0, 2160.0);
        CHECK(s.squeeze_var == Approx(ora.lo).epsilon(1e-10));
        CHECK(s.angle_deg == Approx(ora.angle_deg).margin(1e-8));
    }

    SECTION("band edges must stay inside the grid") {
        CHECK_THROWS_AS(covariance_from_spectra(s_qq, s_pp, s_qp, Band{105.0, 3000.0}),
                        config_error);
        CHECK_THROWS_AS(covariance_from_spectra(s_qq, s_pp, s_qp, Band{-10.0, 1780.0}),
                        config_error);
        CHECK_THROWS_AS(covariance_from_spectra(s_qq, s_pp, s_qp, Band{1780.0, 105.0}),
                        config_error);
        CHECK_THROWS_AS(covariance_from_spectra(s_qq, s_pp, s_qp, Band{106.0, 107.0}),
                        config_error);
    }

    SECTION("spectra must share one grid") {
        Spectrum shorter = s_qp;
        shorter.f.pop_back();
        shorter.v.pop_back();
        CHECK_THROWS_AS(covariance_from_spectra(s_qq, s_pp, shorter, Band{f_lo, f_hi}),
                        config_error);
        Spectrum shifted = s_qp;
        for (double& v : shifted.f) v *= 1.001;
        CHECK_THROWS_AS(covariance_from_spectra(s_qq, s_pp, shifted, Band{f_lo, f_hi}),
                        config_error);
    }

    SECTION("enlarging the band never shrinks the diagonal") {
        double prev_qq = 0.0, prev_pp = 0.0;
        for (double hi : {400.0, 800.0, 1200.0, 1600.0, 2000.0, 2500.0}) {
            const ConditionalState s =
                covariance_from_spectra(s_qq, s_pp, s_qp, Band{f_lo, hi});
            CHECK(s.V(0, 0) >= prev_qq);
            CHECK(s.V(1, 1) >= prev_pp);
            prev_qq = s.V(0, 0);
            prev_pp = s.V(1, 1);
        }
    }

    SECTION("lower-edge sensitivity diagnostic") {
        // On flat spectra the purity is 1/(span * sqrt(det of the levels)),
        // strictly increasing as the lower edge rises.
        const auto sens =
            lower_edge_sensitivity(s_qq, s_pp, s_qp, f_hi, {50.0, 105.0, 150.0, 200.0});
        REQUIRE(sens.size() == 4);
        const double det_level =
            (570.0 * 14000.0 - 2160.0 * 2160.0) / (span * span);
        for (const auto& [lo, purity] : sens) {
            CHECK(purity ==
                  Approx(1.0 / ((f_hi - lo) * std::sqrt(det_level))).epsilon(1e-10));
        }
        for (size_t i = 1; i < sens.size(); ++i) CHECK(sens[i].second > sens[i - 1].second);
    }
}

TEST_CASE("default integration band", "[estimate]") {
    // quoted closed-loop parameters: omega' = 2 pi 706, gamma' = 2 pi 1080
    const ModifiedSusceptibility quoted{constants::two_pi * 706.0, constants::two_pi * 1080.0};
    const Band b = default_band(quoted);
    CHECK(b.f_lo_hz == 105.0);
    CHECK(b.f_hi_hz == Approx(1786.0).epsilon(1e-12));

    const Params p = reference_params();
    const AnalyticFilter calib = calibrated_filter(p, derive(p));
    const Band bc = default_band(calib, 90.0);
    CHECK(bc.f_lo_hz == 90.0);
    CHECK(bc.f_hi_hz == Approx(1780.36).margin(0.05));
}

TEST_CASE("conditioning pipeline on known records", "[estimate][oracle]") {
    const Params p = reference_params();
    const Derived d = derive(p);
    const size_t n = 8192;
    const double fs = 8192.0;

    // two tones on exact FFT bins, so the spectral derivative is the analytic
    // derivative at machine precision
    const double a1 = 3.0, f1 = 50.0, a2 = 1.5, f2 = 120.0, ph2 = 0.4;
    std::vector<double> x(n);
    for (size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / fs;
        x[i] = a1 * std::sin(constants::two_pi * f1 * t) +
               a2 * std::cos(constants::two_pi * f2 * t + ph2);
    }

    SECTION("zero filter returns the calibrated record and its momentum track") {
        const ResidualSeries r = condition(x, fs, zero_filter(n, fs), d);
        REQUIRE(r.q.size() == n);
        REQUIRE(r.p.size() == n);
        CHECK(r.fs == fs);
        for (size_t i = 0; i < n; i += 97)
            CHECK(r.q[i] == Approx(x[i] / d.c_q).margin(1e-12));
        const double w1 = constants::two_pi * f1, w2 = constants::two_pi * f2;
        for (size_t i = 0; i < n; i += 97) {
            const double t = static_cast<double>(i) / fs;
            const double dx = a1 * w1 * std::cos(w1 * t) - a2 * w2 * std::sin(w2 * t + ph2);
            CHECK(r.p[i] == Approx(dx / (d.omega_m * d.c_q)).margin(1e-9));
        }
    }

    SECTION("odd-length records are handled") {
        std::vector<double> xo(x.begin(), x.begin() + 4097);
        const ResidualSeries r = condition(xo, fs, zero_filter(4097, fs), d);
        CHECK(r.q[301] == Approx(xo[301] / d.c_q).margin(1e-12));
    }

    SECTION("closed-form and tabulated applications agree") {
        const AnalyticFilter calib = calibrated_filter(p, d);
        const ResidualSeries ra = condition(x, fs, calib, d);
        const ResidualSeries rt = condition(x, fs, sample_analytic(calib, record_grid(n, fs)), d);
        for (size_t i = 0; i < n; i += 131) {
            CHECK(ra.q[i] == Approx(rt.q[i]).margin(1e-14));
            CHECK(ra.p[i] == Approx(rt.p[i]).margin(1e-14));
        }
    }

    SECTION("grid mismatches are rejected") {
        FilterResponse bad = zero_filter(n / 2, fs);
        CHECK_THROWS_AS(condition(x, fs, bad, d), config_error);
        FilterResponse shifted = zero_filter(n, fs);
        for (double& v : shifted.f_hz) v *= 1.001;
        CHECK_THROWS_AS(condition(x, fs, shifted, d), config_error);
        FilterResponse wrong_rate = zero_filter(n, 2.0 * fs);
        CHECK_THROWS_AS(condition(x, fs, wrong_rate, d), config_error);
    }
}

TEST_CASE("conditioning matches the causal-estimation oracle", "[estimate][sim][oracle]") {
    const Params p = reference_params();
    const Derived d = derive(p);
    const StateSpaceModel m = build_model(p, d);
    const CausalEstimator est = solve_causal_estimator(m);

    const double fs = 20000.0, duration = 100.0;
    const Trajectory traj = simulate(m, duration, fs, 12345);
    const size_t n = traj.X.size();

    const FilterResponse oracle = numerical_causal_wiener(m, record_grid(n, fs));
    const ResidualSeries r = condition(traj.X, fs, oracle, d);
    const ResidualSeries track = condition(traj.X, fs, zero_filter(n, fs), d);

    SECTION("truth residuals reproduce the stationary filtering covariance") {
        std::vector<double> tq(n), tp(n);
        for (size_t i = 0; i < n; ++i) {
            tq[i] = traj.q[i] - (track.q[i] - r.q[i]);
            tp[i] = traj.p[i] - (track.p[i] - r.p[i]);
        }
        const double vq = oracles::variance(tq);
        const double vp = oracles::variance(tp);
        CHECK(vq / est.P(0, 0) > 0.88);
        CHECK(vq / est.P(0, 0) < 1.02);
        CHECK(vp / est.P(1, 1) > 0.88);
        CHECK(vp / est.P(1, 1) < 1.02);

        // conditioning must beat the unconditional spread when C_q > 0
        REQUIRE(d.C_q > 0.0);
        CHECK(vq < 0.01 * oracles::variance(traj.q));
    }

    SECTION("integrated state at the operating point") {
        const AnalyticFilter calib = calibrated_filter(p, d);
        const ResidualSeries rc = condition(traj.X, fs, calib, d);
        const ConditionalState s = estimate_state(rc, default_band(calib));

        CHECK(s.V(0, 0) > 580.0);
        CHECK(s.V(0, 0) < 660.0);
        CHECK(s.V(1, 1) > 17200.0);
        CHECK(s.V(1, 1) < 19000.0);
        CHECK(s.V(0, 1) > 0.0);
        CHECK(s.purity > 4.1e-4);
        CHECK(s.purity < 4.4e-4);
        CHECK(s.angle_deg > -9.5);
        CHECK(s.angle_deg < -6.0);
        CHECK_FALSE(s.below_vacuum);
        CHECK(s.purity * std::sqrt(s.V.determinant()) == Approx(1.0).epsilon(1e-12));

        // conditional spread far below the unconditional stationary spread
        const Eigen::Matrix2d P_unc = steady_state_covariance(m);
        CHECK(s.V(0, 0) < P_unc(0, 0));
        CHECK(s.V(1, 1) < P_unc(1, 1));
    }
}

TEST_CASE("notch filtering recovers purity on contaminated records", "[estimate][sim]") {
    const Params p = reference_params();
    const Derived d = derive(p);
    const StateSpaceModel m = build_model(p, d);
    const double fs = 20000.0;
    const Trajectory traj = simulate(m, 60.0, fs, 99);
    const AnalyticFilter calib = calibrated_filter(p, d);
    const Band band = default_band(calib);

    const auto purity_of = [&](const std::vector<double>& x) {
        return estimate_state(condition(x, fs, calib, d), band).purity;
    };

    const double clean = purity_of(traj.X);

    // power-line fundamental and harmonics, several of them inside the band
    std::vector<double> dirty = traj.X;
    for (size_t i = 0; i < dirty.size(); ++i) {
        const double t = static_cast<double>(i) / fs;
        for (int k = 1; k <= 7; ++k)
            dirty[i] += 5000.0 / k * std::sin(constants::two_pi * 50.0 * k * t + 0.3 * k);
    }
    const double contaminated = purity_of(dirty);
    const double notched = purity_of(notch_harmonics(dirty, 50.0, 7, 4.0, fs));

    CHECK(contaminated < 0.97 * clean);
    CHECK(notched > 1.05 * contaminated);
}

TEST_CASE("purity sweep peaks at the generating occupancies", "[estimate][sim]") {
    const Params p = reference_params();
    const Derived d = derive(p);
    const double fs = 20000.0;
    const Trajectory traj = simulate(build_model(p, d), 20.0, fs, 777);
    const AnchoredFamily fam = anchor_family(p, d);

    const PuritySurface surf =
        purity_sweep(traj.X, fs, fam, log_grid(p.n_th, 1.0, 3), log_grid(p.N_th, 1.0, 3));

    REQUIRE(surf.points.size() == 9);
    for (const SweepPoint& pt : surf.points) {
        CAPTURE(pt.n_th, pt.N_th, pt.error);
        CHECK(pt.ok);
    }
    CHECK(surf.argmax == 4); // center of the 3x3 grid
    CHECK(surf.best().n_th == Approx(p.n_th).epsilon(1e-12));
    CHECK(surf.best().N_th == Approx(p.N_th).epsilon(1e-12));
    for (size_t i = 0; i < surf.points.size(); ++i) {
        if (i == surf.argmax) continue;
        CHECK(surf.best().purity > 1.5 * surf.points[i].purity);
    }

    SECTION("single-point grid reproduces the baseline estimate") {
        const PuritySurface one = purity_sweep(traj.X, fs, fam, {p.n_th}, {p.N_th});
        const AnalyticFilter calib = calibrated_filter(p, d);
        const ConditionalState s =
            estimate_state(condition(traj.X, fs, calib, d), default_band(calib));
        REQUIRE(one.points.size() == 1);
        CHECK(one.best().purity == Approx(s.purity).epsilon(1e-14));
    }
}

TEST_CASE("purity sweep tracks a shifted generator", "[estimate][sim]") {
    // Record generated (and re-identified) at a readout occupancy one grid
    // step above the nominal value; grids stay centered on the nominal point.
    Params p2 = reference_params();
    p2.N_th = 60.0;
    const Derived d2 = derive(p2);
    const double fs = 20000.0;
    const Trajectory traj = simulate(build_model(p2, d2), 20.0, fs, 4242);
    const AnchoredFamily fam = anchor_family(p2, d2);

    const Params nominal = reference_params();
    const PuritySurface surf = purity_sweep(traj.X, fs, fam, log_grid(nominal.n_th, 1.0, 3),
                                            log_grid(nominal.N_th, 1.0, 9));

    CHECK(surf.best().n_th == Approx(nominal.n_th).epsilon(1e-12));
    // one grid step on the 9-point decade grid is 10^(1/4) = 1.778; the max
    // must land within a step of the true occupancy, not at the grid center
    const double step = std::pow(10.0, 0.25);
    CHECK(surf.best().N_th > p2.N_th / step);
    CHECK(surf.best().N_th < p2.N_th * step);
}

TEST_CASE("sweep bookkeeping and failure handling", "[estimate][sim]") {
    const Params p = reference_params();
    const Derived d = derive(p);
    const double fs = 6000.0;
    const Trajectory traj = simulate(build_model(p, d), 4.0, fs, 11);
    const AnchoredFamily fam = anchor_family(p, d);

    SECTION("invalid points are recorded, not fatal") {
        const PuritySurface surf = purity_sweep(traj.X, fs, fam, {p.n_th}, {p.N_th, -5.0});
        REQUIRE(surf.points.size() == 2);
        CHECK(surf.points[0].ok);
        CHECK_FALSE(surf.points[1].ok);
        CHECK_FALSE(surf.points[1].error.empty());
        CHECK(surf.argmax == 0);
    }

    SECTION("a sweep with no valid point throws") {
        CHECK_THROWS_AS(purity_sweep(traj.X, fs, fam, {p.n_th}, {-5.0}), numeric_error);
    }

    SECTION("worker count does not change the surface") {
        SweepOptions serial;
        serial.threads = 1;
        SweepOptions pooled;
        pooled.threads = 3;
        const auto g_n = log_grid(p.n_th, 1.0, 3);
        const auto g_N = log_grid(p.N_th, 0.5, 3);
        const PuritySurface a = purity_sweep(traj.X, fs, fam, g_n, g_N, serial);
        const PuritySurface b = purity_sweep(traj.X, fs, fam, g_n, g_N, pooled);
        REQUIRE(a.points.size() == b.points.size());
        for (size_t i = 0; i < a.points.size(); ++i) {
            CHECK(a.points[i].ok == b.points[i].ok);
            if (a.points[i].ok)
                CHECK(a.points[i].purity == Approx(b.points[i].purity).epsilon(1e-12));
        }
        CHECK(a.argmax == b.argmax);
    }

    SECTION("empty grids are rejected") {
        CHECK_THROWS_AS(purity_sweep(traj.X, fs, fam, {}, {p.N_th}), config_error);
    }
}

TEST_CASE("log-spaced occupancy grids", "[estimate]") {
    const auto g = log_grid(19.0, 1.0, 9);
    REQUIRE(g.size() == 9);
    CHECK(g.front() == Approx(1.9).epsilon(1e-12));
    CHECK(g.back() == Approx(190.0).epsilon(1e-12));
    CHECK(g[4] == 19.0);
    for (size_t i = 1; i < g.size(); ++i)
        CHECK(g[i] / g[i - 1] == Approx(std::pow(10.0, 0.25)).epsilon(1e-12));

    CHECK(log_grid(19.0, 1.0, 1) == std::vector<double>{19.0});
    CHECK_THROWS_AS(log_grid(-1.0, 1.0, 9), config_error);
    CHECK_THROWS_AS(log_grid(19.0, 0.0, 9), config_error);
    CHECK_THROWS_AS(log_grid(19.0, 1.0, 0), config_error);
}

TEST_CASE("ellipse report", "[estimate]") {
    Eigen::Matrix2d V;
    V << 570.0, 2160.0, 2160.0, 14000.0;
    const ConditionalState s = state_from_covariance(V);
    const EllipseReport rep = ellipse_report(s);

    SECTION("amplitudes are square roots of the variance eigenvalues") {
        CHECK(rep.squeeze_amp == Approx(std::sqrt(s.squeeze_var)).epsilon(1e-14));
        CHECK(rep.antisqueeze_amp == Approx(std::sqrt(s.antisqueeze_var)).epsilon(1e-14));
        CHECK(rep.squeeze_amp == Approx(15.2).epsilon(1e-3));
        CHECK(rep.antisqueeze_amp == Approx(119.7).epsilon(1e-3));
        CHECK(rep.angle_deg == s.angle_deg);
        CHECK(rep.purity == s.purity);
    }

    SECTION("boundary samples lie on the one-sigma contour of V") {
        REQUIRE(rep.boundary.size() == 64);
        const Eigen::Matrix2d Vi = s.V.inverse();
        for (const auto& pt : rep.boundary) {
            const Eigen::Vector2d v(pt[0], pt[1]);
            CHECK(v.dot(Vi * v) == Approx(1.0).epsilon(1e-9));
        }
    }

    SECTION("vacuum state draws the unit circle") {
        const EllipseReport circ =
            ellipse_report(state_from_covariance(Eigen::Matrix2d::Identity()));
        for (const auto& pt : circ.boundary)
            CHECK(std::hypot(pt[0], pt[1]) == Approx(1.0).epsilon(1e-12));
    }

    SECTION("rotating the covariance rotates the report") {
        const double th = 25.0 * constants::pi / 180.0;
        Eigen::Matrix2d R;
        R << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
        const EllipseReport rot = ellipse_report(state_from_covariance(R * V * R.transpose()));
        CHECK(rot.angle_deg == Approx(wrap_angle(rep.angle_deg + 25.0)).margin(1e-10));
        CHECK(rot.purity == Approx(rep.purity).epsilon(1e-12));
    }

    SECTION("degenerate states are rejected") {
        ConditionalState bad = s;
        bad.squeeze_var = 0.0;
        CHECK_THROWS_AS(ellipse_report(bad), config_error);
        CHECK_THROWS_AS(ellipse_report(s, 2), config_error);
    }
}
