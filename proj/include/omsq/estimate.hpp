#pragma once

// Conditional-state estimation from a measured amplitude-quadrature record.
// The causal filters predict the mechanical quadratures sample by sample; the
// residuals against the calibrated record have stationary spectra whose
// integrals over the analysis band form the conditional covariance.  The
// covariance yields the squeeze ellipse (variances, orientation, purity), and
// rebuilding the filter over a grid of occupancy hypotheses yields the purity
// surface whose maximum locates the noise parameters the record supports.
//
// Unit conventions: positions are in x_zpf of the confined mode and momenta in
// the matching p_zpf, so covariances are dimensionless and vacuum is the
// identity.  Spectra are one-sided; integrating a one-sided density over a
// band gives that band's variance contribution directly.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstddef>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "omsq/dsp.hpp"
#include "omsq/errors.hpp"
#include "omsq/fft.hpp"
#include "omsq/params.hpp"
#include "omsq/wiener.hpp"

namespace omsq {

// Conditional second moments of (q, p) with the derived ellipse quantities.
// The angle is the orientation of the minor (squeezed) axis relative to the
// q axis, in (-90, 90] degrees, with 0 as the isotropic tie-break.  purity is
// 1/sqrt(det V); it may exceed 1 only in below-vacuum states, which are
// flagged rather than clipped.
struct ConditionalState {
    Eigen::Matrix2d V = Eigen::Matrix2d::Zero(); // zpf^2
    double squeeze_var = 0.0;
    double antisqueeze_var = 0.0;
    double angle_deg = 0.0;
    double purity = 0.0;
    bool below_vacuum = false;
};

inline ConditionalState state_from_covariance(const Eigen::Matrix2d& V_in) {
    ConditionalState s;
    s.V = 0.5 * (V_in + V_in.transpose());
    const double det = s.V.determinant();
    if (!(det > 0.0) || !(s.V.trace() > 0.0))
        throw numeric_error("covariance is not positive definite");
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(s.V);
    if (es.info() != Eigen::Success) throw numeric_error("covariance eigendecomposition failed");
    s.squeeze_var = es.eigenvalues()(0);
    s.antisqueeze_var = es.eigenvalues()(1);
    if (!(s.squeeze_var > 0.0)) throw numeric_error("covariance is not positive definite");
    if (s.antisqueeze_var - s.squeeze_var <= 1e-12 * s.antisqueeze_var) {
        s.angle_deg = 0.0;
    } else {
        const Eigen::Vector2d minor = es.eigenvectors().col(0);
        double ang = std::atan2(minor.y(), minor.x()) * 180.0 / constants::pi;
        if (ang <= -90.0) ang += 180.0;
        if (ang > 90.0) ang -= 180.0;
        s.angle_deg = ang;
    }
    s.purity = 1.0 / std::sqrt(det);
    s.below_vacuum = s.squeeze_var < 1.0;
    return s;
}

// Integration band in Hz.  The default upper edge is the closed-loop corner
// (omega' + gamma')/2pi of the filter that produced the residuals; the lower
// edge cuts low-frequency drift and is a config choice, 105 Hz by default.
struct Band {
    double f_lo_hz = 0.0;
    double f_hi_hz = 0.0;
};

inline Band default_band(const ModifiedSusceptibility& s, double f_lo_hz = 105.0) {
    return {f_lo_hz, (s.omega_p + s.gamma_p) / constants::two_pi};
}

inline Band default_band(const AnalyticFilter& flt, double f_lo_hz = 105.0) {
    return {f_lo_hz, (flt.omega_p + flt.gamma_p) / constants::two_pi};
}

// Residuals of the calibrated record against the filter predictions, both
// quadratures in zpf units.
struct ResidualSeries {
    std::vector<double> q;
    std::vector<double> p;
    double fs = 0.0;
};

namespace detail {

// Analytic-signal spectrum of a real record: positive-frequency bins doubled,
// DC (and Nyquist for even length) kept, negative bins zeroed.
inline std::vector<std::complex<double>> analytic_spectrum(const std::vector<double>& x) {
    auto spec = fft_real(x);
    const size_t n = spec.size();
    const bool even = (n % 2) == 0;
    const size_t nyq = n / 2;
    for (size_t i = 1; i < (even ? nyq : nyq + 1); ++i) spec[i] *= 2.0;
    for (size_t i = nyq + 1; i < n; ++i) spec[i] = 0.0;
    return spec;
}

// Real part of the inverse transform after scaling the non-negative bins by
// conj(H).  With the negative bins zeroed this reproduces filtering of the
// original real series under the exp(+i omega t) storage convention of
// fft.hpp (the conjugate mirror is restored by taking the real part).
inline std::vector<double> predict(const std::vector<std::complex<double>>& aspec,
                                   const std::vector<std::complex<double>>& h_pos) {
    const size_t n = aspec.size();
    if (h_pos.size() != n / 2 + 1)
        throw config_error("filter grid does not match the record grid");
    auto spec = aspec;
    for (size_t i = 0; i < h_pos.size(); ++i) spec[i] *= std::conj(h_pos[i]);
    for (size_t i = h_pos.size(); i < n; ++i) spec[i] = 0.0;
    return real_part(ifft(spec));
}

// Non-negative-frequency samples of one response of a tabulated filter,
// verified to sit on the FFT grid of an n-sample record at rate fs.
inline std::vector<std::complex<double>> tabulated_bins(const FilterResponse& flt, bool momentum,
                                                        size_t n, double fs) {
    const size_t m = n / 2 + 1;
    const auto& h = momentum ? flt.Hp : flt.Hq;
    if (flt.f_hz.size() != m || h.size() != m)
        throw config_error("filter grid does not match the record grid");
    const double df = fs / static_cast<double>(n);
    for (size_t k = 0; k < m; ++k)
        if (std::abs(flt.f_hz[k] - df * static_cast<double>(k)) > 1e-9 * fs)
            throw config_error("filter grid does not match the record grid");
    return h;
}

inline std::vector<std::complex<double>> momentum_track_bins(double omega_m, size_t n, double fs) {
    return sample_response(
        [omega_m](double w) { return std::complex<double>(0.0, -w / omega_m); }, n, fs);
}

inline void check_conditioning_inputs(const std::vector<double>& x, double fs, const Derived& d) {
    if (x.size() < 4) throw config_error("conditioning needs at least 4 samples");
    if (!(fs > 0.0)) throw config_error("conditioning needs a positive sample rate");
    if (d.c_q == 0.0) throw config_error("record calibration requires a nonzero measurement gain");
    if (!(d.omega_m > 0.0))
        throw config_error("momentum normalization requires a confined mode");
}

struct ConditioningCache {
    std::vector<double> q_meas; // calibrated displacement, zpf units
    std::vector<double> p_meas; // its derivative track over omega_m, zpf units
    std::vector<std::complex<double>> aspec;
    double fs = 0.0;

    ConditioningCache(const std::vector<double>& x, double fs_in, const Derived& d) : fs(fs_in) {
        check_conditioning_inputs(x, fs, d);
        aspec = analytic_spectrum(x);
        const double inv_gain = 1.0 / d.c_q;
        q_meas.resize(x.size());
        for (size_t i = 0; i < x.size(); ++i) q_meas[i] = x[i] * inv_gain;
        p_meas = predict(aspec, momentum_track_bins(d.omega_m, x.size(), fs));
        for (double& v : p_meas) v *= inv_gain;
    }

    ResidualSeries residuals(const std::vector<std::complex<double>>& hq_pos,
                             const std::vector<std::complex<double>>& hp_pos) const {
        ResidualSeries r;
        r.fs = fs;
        r.q = predict(aspec, hq_pos);
        r.p = predict(aspec, hp_pos);
        for (size_t i = 0; i < r.q.size(); ++i) {
            r.q[i] = q_meas[i] - r.q[i];
            r.p[i] = p_meas[i] - r.p[i];
        }
        return r;
    }
};

} // namespace detail

// Residuals of the record against a tabulated filter.  The filter must be
// sampled exactly on the record's FFT grid (k fs/n for k = 0..n/2); anything
// else is a grid mismatch.  Predictions apply the filter to the raw record;
// the calibration gain c_q and the derivative response -i w / omega_m convert
// the record itself into the measured quadrature tracks being predicted.
inline ResidualSeries condition(const std::vector<double>& x, double fs, const FilterResponse& flt,
                                const Derived& d) {
    detail::check_conditioning_inputs(x, fs, d);
    const detail::ConditioningCache cache(x, fs, d);
    return cache.residuals(detail::tabulated_bins(flt, false, x.size(), fs),
                           detail::tabulated_bins(flt, true, x.size(), fs));
}

inline ResidualSeries condition(const std::vector<double>& x, double fs, const FilterResponse& flt,
                                const Params& p) {
    return condition(x, fs, flt, derive(p));
}

// Closed-form filters can be evaluated on any grid, so this overload samples
// the responses on the record grid itself.
inline ResidualSeries condition(const std::vector<double>& x, double fs, const AnalyticFilter& flt,
                                const Derived& d) {
    detail::check_conditioning_inputs(x, fs, d);
    const detail::ConditioningCache cache(x, fs, d);
    const size_t n = x.size();
    return cache.residuals(
        sample_response([&flt](double w) { return flt.Hq(w); }, n, fs),
        sample_response([&flt](double w) { return flt.Hp(w); }, n, fs));
}

namespace detail {

inline void check_common_grid(const Spectrum& a, const Spectrum& b) {
    if (a.f.size() != b.f.size())
        throw config_error("spectra are not on a common grid");
    for (size_t i = 0; i < a.f.size(); ++i)
        if (std::abs(a.f[i] - b.f[i]) > 1e-9 * std::max(1.0, std::abs(a.f[i])))
            throw config_error("spectra are not on a common grid");
}

// Trapezoidal integral of the real part over grid samples inside the band.
inline double integrate_band(const Spectrum& s, const Band& band) {
    const auto& f = s.f;
    auto lo = std::lower_bound(f.begin(), f.end(), band.f_lo_hz);
    auto hi = std::upper_bound(f.begin(), f.end(), band.f_hi_hz);
    const size_t i0 = static_cast<size_t>(lo - f.begin());
    const size_t i1 = static_cast<size_t>(hi - f.begin()); // one past the last sample in band
    if (i1 < i0 + 2)
        throw config_error("integration band covers fewer than two spectrum samples");
    double acc = 0.0;
    for (size_t i = i0 + 1; i < i1; ++i)
        acc += 0.5 * (s.v[i - 1].real() + s.v[i].real()) * (f[i] - f[i - 1]);
    return acc;
}

} // namespace detail

// Conditional covariance by band integration of the residual spectra: the
// diagonal entries are the integrals of S_qq and S_pp, the off-diagonal is the
// integral of the cospectrum Re S_qp.
inline ConditionalState covariance_from_spectra(const Spectrum& s_qq, const Spectrum& s_pp,
                                                const Spectrum& s_qp, const Band& band) {
    detail::check_common_grid(s_qq, s_pp);
    detail::check_common_grid(s_qq, s_qp);
    if (s_qq.f.size() < 2) throw config_error("spectra carry fewer than two grid points");
    if (!(band.f_lo_hz < band.f_hi_hz))
        throw config_error("integration band is empty");
    if (band.f_lo_hz < s_qq.f.front() || band.f_hi_hz > s_qq.f.back())
        throw config_error("integration band lies outside the spectrum grid");
    Eigen::Matrix2d V;
    const double vqq = detail::integrate_band(s_qq, band);
    const double vpp = detail::integrate_band(s_pp, band);
    const double vqp = detail::integrate_band(s_qp, band);
    V << vqq, vqp, vqp, vpp;
    return state_from_covariance(V);
}

// Residual spectra of a conditioned record and their band-integrated state in
// one step.  The Welch resolution sets the segment length (fs / resolution).
inline ConditionalState estimate_state(const ResidualSeries& r, const Band& band,
                                       double welch_resolution_hz = 10.0) {
    return covariance_from_spectra(psd_welch(r.q, r.fs, welch_resolution_hz),
                                   psd_welch(r.p, r.fs, welch_resolution_hz),
                                   cross_spectrum(r.q, r.p, r.fs, welch_resolution_hz), band);
}

inline ConditionalState estimate_state(const std::vector<double>& x, double fs,
                                       const FilterResponse& flt, const Derived& d,
                                       const Band& band, double welch_resolution_hz = 10.0) {
    return estimate_state(condition(x, fs, flt, d), band, welch_resolution_hz);
}

// Purity of the same integrated spectra as a function of the lower band edge
// (the upper edge held fixed): a diagnostic for how sensitive the reported
// state is to the drift cutoff.
inline std::vector<std::pair<double, double>> lower_edge_sensitivity(
    const Spectrum& s_qq, const Spectrum& s_pp, const Spectrum& s_qp, double f_hi_hz,
    const std::vector<double>& f_lo_grid_hz) {
    std::vector<std::pair<double, double>> out;
    out.reserve(f_lo_grid_hz.size());
    for (double f_lo : f_lo_grid_hz) {
        const ConditionalState s =
            covariance_from_spectra(s_qq, s_pp, s_qp, Band{f_lo, f_hi_hz});
        out.emplace_back(f_lo, s.purity);
    }
    return out;
}

// Log-spaced grid spanning `decades` each way around a positive center; the
// center itself is a grid point whenever the point count is odd.
inline std::vector<double> log_grid(double center, double decades = 1.0, size_t points = 9) {
    if (!(center > 0.0)) throw config_error("log grid requires a positive center");
    if (points == 0) throw config_error("log grid needs at least one point");
    if (points == 1) return {center};
    if (!(decades > 0.0)) throw config_error("log grid span must be positive");
    std::vector<double> g(points);
    for (size_t i = 0; i < points; ++i) {
        const double e =
            -decades + 2.0 * decades * static_cast<double>(i) / static_cast<double>(points - 1);
        g[i] = center * std::pow(10.0, e);
    }
    if (points % 2 == 1) g[points / 2] = center;
    return g;
}

struct SweepPoint {
    double n_th = 0.0;
    double N_th = 0.0;
    double purity = 0.0;
    bool ok = false;
    std::string error;
};

struct PuritySurface {
    std::vector<double> n_th_grid;
    std::vector<double> N_th_grid;
    std::vector<SweepPoint> points; // n_th-major: points[i*N + j] is (n_th[i], N_th[j])
    size_t argmax = 0;              // index of the largest successful purity

    const SweepPoint& best() const { return points.at(argmax); }
};

struct SweepOptions {
    double f_lo_hz = 105.0;
    double welch_resolution_hz = 10.0;
    unsigned threads = 0; // 0 = hardware concurrency, capped
};

// Purity surface over occupancy hypotheses: each grid point re-synthesizes the
// filter from the anchored family with one noise parameter perturbed, forms
// the residuals of the same record, and integrates its own default band (the
// closed-loop corner moves with the hypothesis).  Points are independent and
// run in parallel over shared read-only data; per-point failures are recorded
// in the surface rather than aborting the sweep.
inline PuritySurface purity_sweep(const std::vector<double>& x, double fs,
                                  const AnchoredFamily& family, std::vector<double> n_th_grid,
                                  std::vector<double> N_th_grid, const SweepOptions& opt = {}) {
    if (n_th_grid.empty() || N_th_grid.empty())
        throw config_error("purity sweep needs nonempty occupancy grids");
    const detail::ConditioningCache cache(x, fs, family.der);
    const size_t n = x.size();

    PuritySurface out;
    out.n_th_grid = std::move(n_th_grid);
    out.N_th_grid = std::move(N_th_grid);
    const size_t total = out.n_th_grid.size() * out.N_th_grid.size();
    out.points.resize(total);
    for (size_t i = 0; i < out.n_th_grid.size(); ++i)
        for (size_t j = 0; j < out.N_th_grid.size(); ++j) {
            SweepPoint& pt = out.points[i * out.N_th_grid.size() + j];
            pt.n_th = out.n_th_grid[i];
            pt.N_th = out.N_th_grid[j];
        }

    std::atomic<size_t> cursor{0};
    const auto worker = [&]() {
        for (size_t idx = cursor.fetch_add(1); idx < total; idx = cursor.fetch_add(1)) {
            SweepPoint& pt = out.points[idx];
            try {
                const AnalyticFilter flt = family.at(pt.n_th, pt.N_th);
                const ResidualSeries r = cache.residuals(
                    sample_response([&flt](double w) { return flt.Hq(w); }, n, fs),
                    sample_response([&flt](double w) { return flt.Hp(w); }, n, fs));
                const ConditionalState s =
                    estimate_state(r, default_band(flt, opt.f_lo_hz), opt.welch_resolution_hz);
                pt.purity = s.purity;
                pt.ok = true;
            } catch (const std::exception& e) {
                pt.error = e.what();
            }
        }
    };

    unsigned n_threads = opt.threads;
    if (n_threads == 0) {
        const unsigned hw = std::thread::hardware_concurrency();
        n_threads = std::clamp(hw, 1u, 8u);
    }
    n_threads = static_cast<unsigned>(std::min<size_t>(n_threads, total));
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(n_threads - 1);
        for (unsigned t = 0; t + 1 < n_threads; ++t) pool.emplace_back(worker);
        worker();
        for (auto& th : pool) th.join();
    }

    bool any_ok = false;
    for (size_t idx = 0; idx < total; ++idx) {
        if (!out.points[idx].ok) continue;
        if (!any_ok || out.points[idx].purity > out.points[out.argmax].purity) out.argmax = idx;
        any_ok = true;
    }
    if (!any_ok) {
        std::string first;
        for (const auto& pt : out.points)
            if (!pt.error.empty()) {
                first = pt.error;
                break;
            }
        throw numeric_error("every sweep point failed: " + first);
    }
    return out;
}

// Plot-ready summary of a conditional state: amplitude (square-root) scales,
// orientation, purity, and a 64-point sample of the one-sigma contour.
struct EllipseReport {
    double squeeze_amp = 0.0;     // zpf units
    double antisqueeze_amp = 0.0; // zpf units
    double angle_deg = 0.0;
    double purity = 0.0;
    bool below_vacuum = false;
    std::vector<std::array<double, 2>> boundary; // (q, p) samples
};

inline EllipseReport ellipse_report(const ConditionalState& s, size_t n_boundary = 64) {
    if (!(s.squeeze_var > 0.0) || !(s.antisqueeze_var >= s.squeeze_var))
        throw config_error("ellipse report requires positive ordered variances");
    if (n_boundary < 3) throw config_error("ellipse boundary needs at least 3 samples");
    EllipseReport rep;
    rep.squeeze_amp = std::sqrt(s.squeeze_var);
    rep.antisqueeze_amp = std::sqrt(s.antisqueeze_var);
    rep.angle_deg = s.angle_deg;
    rep.purity = s.purity;
    rep.below_vacuum = s.below_vacuum;
    const double th = s.angle_deg * constants::pi / 180.0;
    const double ux = std::cos(th), uy = std::sin(th);   // minor axis
    const double vx = -std::sin(th), vy = std::cos(th);  // major axis
    rep.boundary.resize(n_boundary);
    for (size_t k = 0; k < n_boundary; ++k) {
        const double t = constants::two_pi * static_cast<double>(k) / static_cast<double>(n_boundary);
        const double a = rep.squeeze_amp * std::cos(t);
        const double b = rep.antisqueeze_amp * std::sin(t);
        rep.boundary[k] = {a * ux + b * vx, a * uy + b * vy};
    }
    return rep;
}

} // namespace omsq
