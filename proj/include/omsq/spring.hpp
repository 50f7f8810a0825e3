#pragma once

// Optical-spring identification.  The confined resonance traces the spring
// relation omega_m^2 = 8 hbar G^2 n_c delta / ((1 + 4 delta^2) kappa m); this
// header fits measured resonance points against that curve (weighted damped
// Gauss-Newton with the photon number supplied by a pluggable power-to-photon
// map), references resonances between laser powers, models the time-resolved
// resonance under a displacement drive, and estimates the mean detuning from a
// counted-frequency record by tercile binning.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "omsq/errors.hpp"
#include "omsq/params.hpp"

namespace omsq {

// One resonance-vs-detuning scan at a fixed laser power.
struct SpringMeasurement {
    std::vector<double> delta;    // detuning samples, units of kappa
    std::vector<double> f_hz;     // measured resonance per sample
    std::vector<double> sigma_hz; // one-sigma uncertainty per sample, > 0
    double power_w = 0.0;         // incident power during the scan
};

inline void validate(const SpringMeasurement& m) {
    if (m.delta.empty() || m.delta.size() != m.f_hz.size() || m.delta.size() != m.sigma_hz.size())
        throw config_error("spring measurement needs equal-length delta, f_hz, sigma_hz columns");
    for (double s : m.sigma_hz)
        if (!(s > 0.0)) throw config_error("spring measurement errors must be positive");
}

// Photon number from incident power, detuning, and detection efficiency.
// d_delta and d_eta are optional exact partial derivatives; when absent the
// fit falls back to central differences, whose cancellation noise can keep a
// noisy fit from reaching the 1e-10 gradient criterion.  The default map
// wraps the Lorentzian calibration of params.hpp, carries exact derivatives,
// and ignores eta, which leaves eta invisible to the fit (see fit_spring
// warnings).
struct PhotonMap {
    using Fn = std::function<double(double power_w, double delta, double eta)>;
    Fn value;
    Fn d_delta;
    Fn d_eta;

    PhotonMap() = default;
    template <typename F,
              typename = std::enable_if_t<!std::is_same_v<std::decay_t<F>, PhotonMap> &&
                                          std::is_invocable_r_v<double, F, double, double, double>>>
    PhotonMap(F&& f) : value(std::forward<F>(f)) {}
    explicit operator bool() const { return static_cast<bool>(value); }
};

inline PhotonMap default_photon_map(const Params& p) {
    const PowerPhotonMap map = calibrated_photon_map(p);
    PhotonMap out;
    out.value = [map](double power_w, double delta, double) { return map(power_w, delta); };
    out.d_delta = [map](double power_w, double delta, double) {
        return -8.0 * delta / (1.0 + 4.0 * delta * delta) * map(power_w, delta);
    };
    out.d_eta = [](double, double, double) { return 0.0; };
    return out;
}

// Spring relation at fixed photon number, as configured in params.
inline double spring_resonance_hz(const Params& p, double delta) {
    Params q = p;
    q.delta = delta;
    return derive_confined_frequency(q) / constants::two_pi;
}

inline std::vector<double> spring_curve(const std::vector<double>& delta_grid, const Params& p) {
    std::vector<double> out(delta_grid.size());
    for (size_t i = 0; i < delta_grid.size(); ++i) out[i] = spring_resonance_hz(p, delta_grid[i]);
    return out;
}

// Resonances referenced to another laser power: omega_m scales as sqrt(n_c),
// and n_c scales linearly with power at fixed detuning.
inline std::vector<double> power_compensate(std::vector<double> f_hz, double p_measured_w,
                                            double p_reference_w) {
    if (p_measured_w <= 0.0 || p_reference_w <= 0.0)
        throw config_error("power compensation requires positive powers");
    const double factor = std::sqrt(p_reference_w / p_measured_w);
    for (double& f : f_hz) f *= factor;
    return f_hz;
}

struct SpringFitStart {
    double G = 0.0;         // rad/s per m
    double delta_bar = 0.0; // mean detuning of the scan
    double eta = 1.0;
    bool fit_eta = false; // eta participates only through the photon map
};

struct SpringFitResult {
    double G = 0.0;
    double eta = 0.0;
    double delta_bar = 0.0;
    double residual_norm = 0.0;      // Euclidean norm of the weighted residual
    Eigen::Matrix3d covariance;      // (G, delta_bar, eta) order
    int iterations = 0;
    std::vector<std::string> warnings;
};

namespace detail {

// Spring resonance with the photon number taken from the map at the given
// detuning.  Non-positive detunings carry no spring and evaluate to 0 Hz.
inline double map_resonance_hz(const Params& p, const PhotonMap& map, double power_w, double G,
                               double delta, double eta) {
    if (delta <= 0.0) return 0.0;
    const double n_c = map.value(power_w, delta, eta);
    if (n_c < 0.0) throw numeric_error("photon map returned a negative photon number");
    const double num = 8.0 * constants::hbar * G * G * n_c * delta;
    const double den = (1.0 + 4.0 * delta * delta) * p.kappa * p.mass_kg;
    return std::sqrt(num / den) / constants::two_pi;
}

} // namespace detail

// Weighted nonlinear least squares of the spring relation against a measured
// scan.  Parameters are (G, delta_bar, eta); the sample detunings enter as
// offsets about their mean, so delta_bar is the fitted mean detuning.  The
// model sees eta only through the photon map; with the default Lorentzian map
// the eta column of the Jacobian vanishes and the parameter is frozen with a
// warning, reflecting that G and n_c enter the spring relation only as the
// product G^2 n_c.  Covariance is the pseudo-inverse of the normal matrix, so
// directions the data cannot resolve carry zero rather than infinite variance;
// the warnings name them.
inline SpringFitResult fit_spring(const SpringMeasurement& m, const Params& p,
                                  const SpringFitStart& start, PhotonMap map = {}) {
    validate(m);
    {
        std::vector<double> uniq = m.delta;
        std::sort(uniq.begin(), uniq.end());
        uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
        if (uniq.size() < 3)
            throw config_error("spring fit needs at least 3 distinct detuning samples");
    }
    if (start.G == 0.0) throw config_error("spring fit start requires a nonzero G");
    if (!map) map = default_photon_map(p);

    const size_t n = m.delta.size();
    const double mean_delta =
        std::accumulate(m.delta.begin(), m.delta.end(), 0.0) / static_cast<double>(n);
    std::vector<double> offset(n);
    for (size_t i = 0; i < n; ++i) offset[i] = m.delta[i] - mean_delta;

    // Internally scaled parameters keep the gradient test and the damping
    // diagonal meaningful across wildly different magnitudes.
    const int k_G = 0, k_d = 1, k_e = 2;
    Eigen::Vector3d scale(std::abs(start.G), std::max(std::abs(start.delta_bar), 1e-3),
                          std::max(std::abs(start.eta), 0.1));
    Eigen::Vector3d theta(start.G / scale(k_G), start.delta_bar / scale(k_d),
                          start.eta / scale(k_e));
    std::array<bool, 3> active{true, true, start.fit_eta};

    SpringFitResult out;
    out.covariance.setZero();

    const auto model_at = [&](const Eigen::Vector3d& th, std::vector<double>& f) {
        const double G = th(k_G) * scale(k_G);
        const double db = th(k_d) * scale(k_d);
        const double eta = th(k_e) * scale(k_e);
        for (size_t i = 0; i < n; ++i)
            f[i] = detail::map_resonance_hz(p, map, m.power_w, G, db + offset[i], eta);
    };
    const auto cost_of = [&](const std::vector<double>& f) {
        double c = 0.0;
        for (size_t i = 0; i < n; ++i) {
            const double r = (f[i] - m.f_hz[i]) / m.sigma_hz[i];
            c += 0.5 * r * r;
        }
        return c;
    };
    // Weighted Jacobian in scaled parameters: the G column is analytic
    // (d f / d G = f / G); the detuning column combines the analytic
    // derivative of the spring relation with a central-difference derivative
    // of the photon map; the eta column is a pure map derivative.
    const auto jacobian_at = [&](const Eigen::Vector3d& th, const std::vector<double>& f,
                                 Eigen::MatrixXd& J) {
        const double G = th(k_G) * scale(k_G);
        const double db = th(k_d) * scale(k_d);
        const double eta = th(k_e) * scale(k_e);
        for (size_t i = 0; i < n; ++i) {
            const double d = db + offset[i];
            const double w = 1.0 / m.sigma_hz[i];
            if (f[i] <= 0.0 || d <= 0.0) {
                J.row(static_cast<Eigen::Index>(i)).setZero();
                continue;
            }
            const double n_c = map.value(m.power_w, d, eta);
            double dnc_ddelta;
            if (map.d_delta) {
                dnc_ddelta = map.d_delta(m.power_w, d, eta);
            } else {
                const double hd = std::min(1e-6 * std::max(std::abs(d), 1e-3), 0.49 * d);
                dnc_ddelta =
                    (map.value(m.power_w, d + hd, eta) - map.value(m.power_w, d - hd, eta)) /
                    (2.0 * hd);
            }
            const double dlog_f =
                0.5 * (1.0 / d - 8.0 * d / (1.0 + 4.0 * d * d) + dnc_ddelta / n_c);
            J(static_cast<Eigen::Index>(i), k_G) = w * (f[i] / G) * scale(k_G);
            J(static_cast<Eigen::Index>(i), k_d) = w * f[i] * dlog_f * scale(k_d);
            if (active[k_e]) {
                double dnc_deta;
                if (map.d_eta) {
                    dnc_deta = map.d_eta(m.power_w, d, eta);
                } else {
                    const double he = 1e-6 * std::max(std::abs(eta), 0.1);
                    dnc_deta =
                        (map.value(m.power_w, d, eta + he) - map.value(m.power_w, d, eta - he)) /
                        (2.0 * he);
                }
                J(static_cast<Eigen::Index>(i), k_e) = w * f[i] * dnc_deta / (2.0 * n_c) * scale(k_e);
            } else {
                J(static_cast<Eigen::Index>(i), k_e) = 0.0;
            }
        }
    };

    std::vector<double> f(n), f_trial(n);
    Eigen::MatrixXd J(static_cast<Eigen::Index>(n), 3);
    model_at(theta, f);
    double cost = cost_of(f);
    jacobian_at(theta, f, J);

    for (int k = 0; k < 3; ++k) {
        if (active[k] && J.col(k).norm() == 0.0) {
            active[k] = false;
            if (k == k_e)
                out.warnings.push_back(
                    "photon map does not respond to eta (G and n_c enter only as G^2 n_c); "
                    "eta held at its start value");
            else
                out.warnings.push_back("fit parameter has no effect on the model; held at start");
        }
    }
    std::vector<int> idx;
    for (int k = 0; k < 3; ++k)
        if (active[k]) idx.push_back(k);
    const auto nact = static_cast<Eigen::Index>(idx.size());
    if (nact == 0) throw numeric_error("spring fit has no active parameters");

    const int max_iter = 200;
    const double grad_tol = 1e-10;
    double lambda = 1e-3;
    bool converged = false;
    int iter = 0;
    for (; iter < max_iter; ++iter) {
        Eigen::VectorXd r(static_cast<Eigen::Index>(n));
        for (size_t i = 0; i < n; ++i)
            r(static_cast<Eigen::Index>(i)) = (f[i] - m.f_hz[i]) / m.sigma_hz[i];
        Eigen::MatrixXd Ja(static_cast<Eigen::Index>(n), nact);
        for (Eigen::Index c = 0; c < nact; ++c) Ja.col(c) = J.col(idx[static_cast<size_t>(c)]);
        const Eigen::VectorXd g = Ja.transpose() * r;
        if (g.lpNorm<Eigen::Infinity>() < grad_tol * std::max(1.0, cost)) {
            converged = true;
            break;
        }
        const Eigen::MatrixXd N = Ja.transpose() * Ja;
        bool accepted = false;
        while (lambda < 1e14) {
            Eigen::MatrixXd Nd = N;
            for (Eigen::Index c = 0; c < nact; ++c)
                Nd(c, c) += lambda * std::max(N(c, c), 1e-30);
            const Eigen::VectorXd s = Nd.ldlt().solve(-g);
            Eigen::Vector3d trial = theta;
            for (Eigen::Index c = 0; c < nact; ++c) trial(idx[static_cast<size_t>(c)]) += s(c);
            double cost_trial;
            try {
                model_at(trial, f_trial);
                cost_trial = cost_of(f_trial);
            } catch (const numeric_error&) {
                cost_trial = std::numeric_limits<double>::infinity();
            }
            // near the optimum the true reduction falls below the resolution
            // of the cost; tiny steps that hold the cost exactly still carry
            // the gradient down to the criterion
            const bool refines =
                cost_trial == cost && s.lpNorm<Eigen::Infinity>() < 1e-6;
            if (cost_trial < cost || refines) {
                theta = trial;
                f.swap(f_trial);
                cost = cost_trial;
                lambda = std::max(lambda / 3.0, 1e-12);
                accepted = true;
                if (s.lpNorm<Eigen::Infinity>() < 1e-13) converged = true;
                break;
            }
            lambda *= 10.0;
        }
        if (!accepted) break; // damping exhausted; let the gradient test decide
        jacobian_at(theta, f, J);
        if (converged) break;
    }
    if (!converged) {
        Eigen::VectorXd r(static_cast<Eigen::Index>(n));
        for (size_t i = 0; i < n; ++i)
            r(static_cast<Eigen::Index>(i)) = (f[i] - m.f_hz[i]) / m.sigma_hz[i];
        Eigen::MatrixXd Ja(static_cast<Eigen::Index>(n), nact);
        for (Eigen::Index c = 0; c < nact; ++c) Ja.col(c) = J.col(idx[static_cast<size_t>(c)]);
        const double gnorm = (Ja.transpose() * r).lpNorm<Eigen::Infinity>();
        if (!(gnorm < grad_tol * std::max(1.0, cost)))
            throw numeric_error("spring fit did not converge within 200 iterations");
    }

    out.G = theta(k_G) * scale(k_G);
    out.delta_bar = theta(k_d) * scale(k_d);
    out.eta = theta(k_e) * scale(k_e);
    out.residual_norm = std::sqrt(2.0 * cost);
    out.iterations = iter;

    jacobian_at(theta, f, J);
    Eigen::MatrixXd Ja(static_cast<Eigen::Index>(n), nact);
    for (Eigen::Index c = 0; c < nact; ++c) Ja.col(c) = J.col(idx[static_cast<size_t>(c)]);
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(Ja, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd sv = svd.singularValues();
    if (sv(0) > 0.0 && sv(nact - 1) < 1e-8 * sv(0))
        out.warnings.push_back(
            "fit parameters are jointly degenerate (G and n_c enter only as G^2 n_c); "
            "covariance is a pseudo-inverse over the resolvable directions");
    Eigen::MatrixXd cov_act = Eigen::MatrixXd::Zero(nact, nact);
    for (Eigen::Index c = 0; c < nact; ++c) {
        if (sv(c) < 1e-12 * sv(0)) continue;
        const double inv = 1.0 / (sv(c) * sv(c));
        cov_act += inv * svd.matrixV().col(c) * svd.matrixV().col(c).transpose();
    }
    for (Eigen::Index a = 0; a < nact; ++a)
        for (Eigen::Index b = 0; b < nact; ++b) {
            const int ka = idx[static_cast<size_t>(a)], kb = idx[static_cast<size_t>(b)];
            out.covariance(ka, kb) = cov_act(a, b) * scale(ka) * scale(kb);
        }
    return out;
}

// Time-resolved resonance under a displacement drive: delta(t) = mean_delta +
// G x(t) / kappa substituted pointwise into the spring relation at the
// configured photon number.  Detunings below zero clamp to zero (no spring)
// and are reported as a fraction of the record.
struct ResonanceTrack {
    std::vector<double> f_hz;
    double clamp_fraction = 0.0;
};

inline ResonanceTrack resonance_timeseries_model(const std::vector<double>& x_m, const Params& p,
                                                 double mean_delta) {
    if (mean_delta < 0.0) throw config_error("spring timeseries model requires mean_delta >= 0");
    ResonanceTrack out;
    out.f_hz.resize(x_m.size());
    size_t clamped = 0;
    for (size_t i = 0; i < x_m.size(); ++i) {
        double d = mean_delta + p.G * x_m[i] / p.kappa;
        if (d < 0.0) {
            d = 0.0;
            ++clamped;
        }
        out.f_hz[i] = spring_resonance_hz(p, d);
    }
    if (!x_m.empty())
        out.clamp_fraction = static_cast<double>(clamped) / static_cast<double>(x_m.size());
    return out;
}

// Mean detuning from a counted-frequency record.  Samples are split into
// three equal-population bins ordered by instantaneous detuning G x / kappa,
// each bin is averaged, and the averaged points are fitted against the
// resonance-vs-detuning shape of the driven system.  In a modulated run the
// intracavity photon number follows the instantaneous detuning through the
// Lorentzian power map, so the shape is sqrt(delta) / (1 + 4 delta^2); it
// peaks at delta = 1/sqrt(12), and the same mean resonance is reachable from
// a small- and a large-detuning branch (280 Hz pairs roughly 0.03 with 1.2).
// Both branches are fitted and returned; the smaller residual selects.  The
// amplitude in front of the shape is a free fit parameter, which keeps the
// estimate scale-consistent: only the offsets G x / kappa enter, so rescaling
// x by c and G by 1/c changes nothing.  A record with no frequency contrast
// carries no shape information; it falls back to inverting the absolute
// curve at the configured photon-number calibration, the one path that keeps
// amplitude dependence.
struct BranchCandidate {
    double delta_bar = 0.0;
    double amplitude_hz = 0.0; // fitted scale in front of the curve shape
    double residual_hz = 0.0;  // RMS misfit over the three bins
    bool converged = false;    // false when the search stalled on a bound
};

struct DetuningEstimate {
    double delta_bar = 0.0;
    double amplitude_hz = 0.0;
    double residual_hz = 0.0;
    std::array<double, 3> bin_delta_offset{}; // mean G x / kappa per bin, centered
    std::array<double, 3> bin_f_hz{};         // mean counted frequency per bin
    std::vector<BranchCandidate> candidates;  // small branch first
};

namespace detail {

// Resonance shape when the photon number follows the detuning through the
// Lorentzian map: f proportional to sqrt(delta) / (1 + 4 delta^2).
inline double curve_shape(double delta) {
    return delta > 0.0 ? std::sqrt(delta) / (1.0 + 4.0 * delta * delta) : 0.0;
}

inline constexpr double curve_shape_peak_delta = 0.28867513459481287; // 1/sqrt(12)

// Absolute map-shaped curve anchored to the configured calibration point:
// n_c(delta) = n_c (1 + 4 delta_cal^2) / (1 + 4 delta^2).
inline double map_curve_hz(const Params& p, double delta) {
    if (delta <= 0.0) return 0.0;
    const double scale = p.n_c * (1.0 + 4.0 * p.delta * p.delta);
    const double num = 8.0 * constants::hbar * p.G * p.G * scale * delta;
    const double den = (1.0 + 4.0 * delta * delta) * (1.0 + 4.0 * delta * delta) * p.kappa *
                       p.mass_kg;
    return std::sqrt(num / den) / constants::two_pi;
}

// Least-squares cost over the bins at a trial mean detuning, with the
// amplitude profiled out analytically.
inline double shape_cost(double delta_bar, const std::array<double, 3>& off,
                         const std::array<double, 3>& fb, double* amplitude) {
    double sgg = 0.0, sgf = 0.0;
    std::array<double, 3> g{};
    for (int b = 0; b < 3; ++b) {
        g[b] = curve_shape(delta_bar + off[b]);
        sgg += g[b] * g[b];
        sgf += g[b] * fb[b];
    }
    const double a = sgg > 0.0 ? sgf / sgg : 0.0;
    if (amplitude) *amplitude = a;
    double c = 0.0;
    for (int b = 0; b < 3; ++b) {
        const double r = fb[b] - a * g[b];
        c += r * r;
    }
    return c;
}

// Coarse scan plus golden-section refinement; cost is smooth in delta_bar.
inline BranchCandidate fit_shape_branch(double lo, double hi, const std::array<double, 3>& off,
                                        const std::array<double, 3>& fb) {
    const int n_scan = 256;
    double best = lo, best_cost = shape_cost(lo, off, fb, nullptr);
    for (int i = 1; i <= n_scan; ++i) {
        const double d = lo + (hi - lo) * static_cast<double>(i) / n_scan;
        const double c = shape_cost(d, off, fb, nullptr);
        if (c < best_cost) {
            best_cost = c;
            best = d;
        }
    }
    double a = std::max(lo, best - (hi - lo) / n_scan);
    double b = std::min(hi, best + (hi - lo) / n_scan);
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
    double c1 = shape_cost(x1, off, fb, nullptr), c2 = shape_cost(x2, off, fb, nullptr);
    for (int i = 0; i < 200 && (b - a) > 1e-14 * std::max(1.0, std::abs(b)); ++i) {
        if (c1 < c2) {
            b = x2;
            x2 = x1;
            c2 = c1;
            x1 = b - gr * (b - a);
            c1 = shape_cost(x1, off, fb, nullptr);
        } else {
            a = x1;
            x1 = x2;
            c1 = c2;
            x2 = a + gr * (b - a);
            c2 = shape_cost(x2, off, fb, nullptr);
        }
    }
    BranchCandidate cand;
    cand.delta_bar = 0.5 * (a + b);
    const double cost = shape_cost(cand.delta_bar, off, fb, &cand.amplitude_hz);
    cand.residual_hz = std::sqrt(cost / 3.0);
    cand.converged = cand.delta_bar > lo + 1e-9 && cand.delta_bar < hi - 1e-9;
    return cand;
}

// Monotone inversion of the absolute map-shaped curve on one side of the peak.
inline bool invert_curve_branch(const Params& p, double f_hz, double lo, double hi,
                                double* delta) {
    double flo = map_curve_hz(p, lo);
    const double fhi = map_curve_hz(p, hi);
    if ((f_hz - flo) * (f_hz - fhi) > 0.0) return false;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        const double fm = map_curve_hz(p, mid);
        if ((fm - f_hz) * (flo - f_hz) <= 0.0) {
            hi = mid;
        } else {
            lo = mid;
            flo = fm;
        }
    }
    *delta = 0.5 * (lo + hi);
    return true;
}

} // namespace detail

inline DetuningEstimate detuning_from_counts(const std::vector<double>& f_counted_hz,
                                             const std::vector<double>& x_m, const Params& p) {
    if (f_counted_hz.size() != x_m.size() || f_counted_hz.size() < 3)
        throw config_error("detuning estimate needs time-aligned series of at least 3 samples");
    const size_t n = x_m.size();

    std::vector<double> key(n);
    double key_mean = 0.0;
    for (size_t i = 0; i < n; ++i) {
        key[i] = p.G * x_m[i] / p.kappa;
        key_mean += key[i];
    }
    key_mean /= static_cast<double>(n);
    const auto [kmin, kmax] = std::minmax_element(key.begin(), key.end());
    if (*kmax - *kmin <= 0.0)
        throw numeric_error("detuning range of the record is zero; bins are degenerate");

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return key[a] < key[b]; });

    DetuningEstimate est;
    size_t pos = 0;
    for (int b = 0; b < 3; ++b) {
        const size_t len = n / 3 + (static_cast<size_t>(b) < n % 3 ? 1 : 0);
        double sk = 0.0, sf = 0.0;
        for (size_t i = 0; i < len; ++i) {
            sk += key[order[pos + i]];
            sf += f_counted_hz[order[pos + i]];
        }
        est.bin_delta_offset[static_cast<size_t>(b)] = sk / static_cast<double>(len) - key_mean;
        est.bin_f_hz[static_cast<size_t>(b)] = sf / static_cast<double>(len);
        pos += len;
    }

    const auto [fmin, fmax] = std::minmax_element(est.bin_f_hz.begin(), est.bin_f_hz.end());
    const double f_span = *fmax - *fmin;
    const double f_mag = std::max(std::abs(*fmax), std::abs(*fmin));
    if (f_span <= 1e-9 * std::max(f_mag, 1e-30)) {
        // No contrast between bins: invert the absolute curve at the mean.
        const double f_mean = (est.bin_f_hz[0] + est.bin_f_hz[1] + est.bin_f_hz[2]) / 3.0;
        const double peak = detail::curve_shape_peak_delta;
        const double f_peak = detail::map_curve_hz(p, peak);
        if (f_mean > f_peak)
            throw numeric_error(
                "counted frequency exceeds the spring-curve maximum for these parameters");
        const double shape_scale = f_peak / detail::curve_shape(peak);
        for (const auto& [lo, hi] : {std::pair{1e-12, peak}, std::pair{peak, 1e6}}) {
            double d = 0.0;
            if (!detail::invert_curve_branch(p, f_mean, lo, hi, &d)) continue;
            BranchCandidate cand;
            cand.delta_bar = d;
            cand.amplitude_hz = shape_scale;
            cand.residual_hz = std::abs(detail::map_curve_hz(p, d) - f_mean);
            cand.converged = true;
            est.candidates.push_back(cand);
        }
        if (est.candidates.empty())
            throw numeric_error("spring-curve inversion found no detuning branch");
    } else {
        const double peak = detail::curve_shape_peak_delta;
        est.candidates.push_back(
            detail::fit_shape_branch(1e-6, peak, est.bin_delta_offset, est.bin_f_hz));
        est.candidates.push_back(
            detail::fit_shape_branch(peak, 10.0, est.bin_delta_offset, est.bin_f_hz));
    }

    const auto pick = std::min_element(est.candidates.begin(), est.candidates.end(),
                                       [](const BranchCandidate& a, const BranchCandidate& b) {
                                           return a.residual_hz < b.residual_hz;
                                       });
    est.delta_bar = pick->delta_bar;
    est.amplitude_hz = pick->amplitude_hz;
    est.residual_hz = pick->residual_hz;
    return est;
}

} // namespace omsq
