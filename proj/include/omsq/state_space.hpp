#pragma once

#include <complex>
#include <cstdint>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "omsq/errors.hpp"
#include "omsq/params.hpp"
#include "omsq/rng.hpp"

namespace omsq {

// Linear model for the confined mode read out through the detuned cavity, in zpf
// units (vacuum variance 1).  State x = (q, p); inputs u = (p_in, x_in, y_in)
// with double-sided flat spectra S = diag(2 n_th + 1, 2 N_th + 1, 2 N_th + 1):
//   dx = F x dt + L dB,   X = c_q q + D dB/dt
struct StateSpaceModel {
    Eigen::Matrix2d F = Eigen::Matrix2d::Zero();
    Eigen::Matrix<double, 2, 3> L = Eigen::Matrix<double, 2, 3>::Zero();
    Eigen::RowVector3d D = Eigen::RowVector3d::Zero();
    Eigen::Vector3d S = Eigen::Vector3d::Zero();
    double c_q = 0.0;
    double omega_m = 0.0;
    double gamma_m = 0.0;

    Eigen::RowVector2d H() const { return {c_q, 0.0}; }
    Eigen::Matrix2d W() const { return L * S.asDiagonal() * L.transpose(); }
    double V() const { return D * S.asDiagonal() * D.transpose(); }
    Eigen::Vector2d Sc() const { return L * S.asDiagonal() * D.transpose(); }
};

inline StateSpaceModel build_model(const Params& p, const Derived& d) {
    StateSpaceModel m;
    m.omega_m = d.omega_m;
    m.gamma_m = d.gamma_m;
    m.F << 0.0, d.omega_m, -d.omega_m, -d.gamma_m;
    const double rk = std::sqrt(p.kappa);
    m.L.row(1) << std::sqrt(2.0 * d.gamma_m), -4.0 * d.g_m / rk, 8.0 * d.g_m * p.delta / rk;
    const double re = std::sqrt(p.eta);
    m.D << 0.0, -re, 4.0 * p.delta * re;
    m.S << 2.0 * p.n_th + 1.0, 2.0 * p.N_th + 1.0, 2.0 * p.N_th + 1.0;
    m.c_q = d.c_q;
    return m;
}

inline StateSpaceModel build_model(const Params& p) { return build_model(p, derive(p)); }

// One-step discrete equivalent over dt:
//   x_{k+1} = Ad x_k + w_k,   X_k = c_q q_k + v_k
// with cov(w) = Qd, var(v) = Rv, cov(w, v) = Mc (same-interval noise overlap).
struct DiscreteModel {
    Eigen::Matrix2d Ad = Eigen::Matrix2d::Zero();
    Eigen::Matrix2d Qd = Eigen::Matrix2d::Zero();
    Eigen::Vector2d Mc = Eigen::Vector2d::Zero();
    double Rv = 0.0;
    double dt = 0.0;
};

namespace detail {

// exp(F t) for F = [[0, w], [-w, -g]] via F = -(g/2) I + J, J^2 = -(w^2 - g^2/4) I.
// Complex mu keeps one code path for under-, over-, and critically damped cases.
inline Eigen::Matrix2d damped_rotation_exp(double w, double g, double t) {
    using cd = std::complex<double>;
    const cd mu = std::sqrt(cd(w * w - 0.25 * g * g, 0.0));
    const cd mut = mu * t;
    cd c = std::cos(mut);
    cd s; // sin(mu t)/mu, series near mu = 0
    if (std::abs(mut) < 1e-6) {
        s = t * (1.0 - mut * mut / 6.0);
        c = 1.0 - mut * mut * 0.5;
    } else {
        s = std::sin(mut) / mu;
    }
    Eigen::Matrix2d J;
    J << 0.5 * g, w, -w, -0.5 * g;
    const double damp = std::exp(-0.5 * g * t);
    Eigen::Matrix2d E = damp * (c.real() * Eigen::Matrix2d::Identity() + s.real() * J);
    return E;
}

// Integral of exp(-g u) {1, cos(2 mu u), sin(2 mu u)} over [0, t], complex mu.
struct ExpTrigIntegrals {
    double i0;
    std::complex<double> ic, is;
};

inline ExpTrigIntegrals exp_trig_integrals(double g, std::complex<double> mu, double t) {
    ExpTrigIntegrals r{};
    if (std::abs(g * t) < 1e-9)
        r.i0 = t * (1.0 - 0.5 * g * t);
    else
        r.i0 = (1.0 - std::exp(-g * t)) / g;
    const std::complex<double> a(-g, 0.0), b = 2.0 * mu;
    const std::complex<double> den = a * a + b * b;
    const std::complex<double> e = std::exp(a * t);
    if (std::abs(den) < 1e-12 * (std::norm(a) + std::norm(b) + 1.0)) {
        // g ~ 2|mu| ~ 0: fall back to short-time series
        r.ic = t;
        r.is = b * t * t * 0.5;
    } else {
        r.ic = (e * (a * std::cos(b * t) + b * std::sin(b * t)) - a) / den;
        r.is = (e * (a * std::sin(b * t) - b * std::cos(b * t)) + b) / den;
    }
    return r;
}

} // namespace detail

// Exact closed-form discretization.  Qd from
//   exp(F u) W exp(F^T u) = exp(-g u) [A0 + A1 cos(2 mu u) + A2 sin(2 mu u)]
// integrated term by term.
inline DiscreteModel discretize(const StateSpaceModel& m, double dt) {
    using cd = std::complex<double>;
    const double w = m.omega_m, g = m.gamma_m;
    if (dt <= 0.0) throw numeric_error("discretization step must be positive");
    if (dt * w >= 2.0)
        throw numeric_error("discretization step too coarse: dt * omega_m = " +
                            std::to_string(dt * w) + " >= 2");
    DiscreteModel d;
    d.dt = dt;
    d.Ad = detail::damped_rotation_exp(w, g, dt);

    const Eigen::Matrix2d W = m.W();
    Eigen::Matrix2d J;
    J << 0.5 * g, w, -w, -0.5 * g;
    const cd mu2 = cd(w * w - 0.25 * g * g, 0.0);
    cd mu = std::sqrt(mu2);
    if (std::abs(mu) < 1e-9 * (std::abs(w) + std::abs(g)))
        mu = cd(1e-9 * (std::abs(w) + std::abs(g) + 1.0), 0.0); // critically damped: nudge off the double root
    const Eigen::Matrix2d JWJt = J * W * J.transpose();
    const Eigen::Matrix2d JWsym = J * W + W * J.transpose();
    const auto I = detail::exp_trig_integrals(g, mu, dt);
    const cd inv2mu2 = 0.5 / (mu * mu);
    // complex scalar coefficients multiply real matrices; imaginary parts cancel in the sum
    Eigen::Matrix2cd Qc = (0.5 * I.i0 + 0.5 * I.ic).real() * W.cast<cd>()
        + (inv2mu2 * (I.i0 - I.ic)) * JWJt.cast<cd>()
        + (I.is / (2.0 * mu)) * JWsym.cast<cd>();
    d.Qd = Qc.real();
    d.Qd = 0.5 * (d.Qd + d.Qd.transpose().eval());

    // Phi1 = F^{-1} (Ad - I) = integral of exp(F u); needs det F = w^2 > 0
    if (w <= 0.0) throw numeric_error("discretization requires omega_m > 0");
    Eigen::Matrix2d Phi1 = m.F.inverse() * (d.Ad - Eigen::Matrix2d::Identity());
    d.Mc = Phi1 * m.Sc() / dt;
    d.Rv = m.V() / dt;
    return d;
}

// Stationary covariance: F P + P F^T + W = 0, solved on the symmetric basis.
inline Eigen::Matrix2d steady_state_covariance(const StateSpaceModel& m) {
    const Eigen::Matrix2d F = m.F, W = m.W();
    Eigen::Matrix3d A;
    Eigen::Vector3d b;
    A << 2.0 * F(0, 0), 2.0 * F(0, 1), 0.0,
         F(1, 0), F(0, 0) + F(1, 1), F(0, 1),
         0.0, 2.0 * F(1, 0), 2.0 * F(1, 1);
    b << -W(0, 0), -W(0, 1), -W(1, 1);
    Eigen::FullPivLU<Eigen::Matrix3d> lu(A);
    if (!lu.isInvertible())
        throw numeric_error("no stationary covariance: drift is not dissipative (gamma_m = 0?)");
    const Eigen::Vector3d p = lu.solve(b);
    Eigen::Matrix2d P;
    P << p(0), p(1), p(1), p(2);
    return P;
}

struct Trajectory {
    double fs = 0.0;
    uint64_t seed = 0;
    std::vector<double> q, p, X;

    size_t size() const { return X.size(); }
    double duration() const { return fs > 0.0 ? static_cast<double>(X.size()) / fs : 0.0; }
};

namespace detail {

// Joint sampler for (w_k, v_k): Cholesky of [[Qd, Mc], [Mc^T, Rv]].
struct JointNoise {
    Eigen::Matrix3d chol = Eigen::Matrix3d::Zero();

    explicit JointNoise(const DiscreteModel& d) {
        Eigen::Matrix3d Jm;
        Jm << d.Qd(0, 0), d.Qd(0, 1), d.Mc(0),
              d.Qd(1, 0), d.Qd(1, 1), d.Mc(1),
              d.Mc(0), d.Mc(1), d.Rv;
        Eigen::LLT<Eigen::Matrix3d> llt(Jm);
        if (llt.info() != Eigen::Success) {
            // PSD edge (e.g. noiseless axes): shift by a tiny diagonal
            const double jitter = 1e-12 * Jm.diagonal().maxCoeff() + 1e-300;
            llt.compute(Jm + jitter * Eigen::Matrix3d::Identity());
            if (llt.info() != Eigen::Success)
                throw numeric_error("joint noise covariance is not positive semidefinite");
        }
        chol = llt.matrixL();
    }
};

} // namespace detail

// Stationary run: initial state drawn from the stationary covariance unless x0
// is supplied.  Measurement at sample k shares its interval with the state
// increment applied after it.
inline Trajectory simulate(const StateSpaceModel& m, double duration, double fs, uint64_t seed,
                           const std::optional<Eigen::Vector2d>& x0 = std::nullopt) {
    if (duration <= 0.0 || fs <= 0.0)
        throw config_error("simulation needs positive duration and sample rate");
    const size_t n = static_cast<size_t>(duration * fs + 0.5);
    const DiscreteModel d = discretize(m, 1.0 / fs);
    const detail::JointNoise jn(d);

    NormalRng rng(seed);
    Eigen::Vector2d x;
    if (x0) {
        x = *x0;
    } else {
        const Eigen::Matrix2d P = steady_state_covariance(m);
        Eigen::LLT<Eigen::Matrix2d> llt(P);
        if (llt.info() != Eigen::Success)
            throw numeric_error("stationary covariance is not positive definite");
        x = llt.matrixL() * Eigen::Vector2d(rng.normal(), rng.normal());
    }

    Trajectory tr;
    tr.fs = fs;
    tr.seed = seed;
    tr.q.resize(n);
    tr.p.resize(n);
    tr.X.resize(n);
    for (size_t k = 0; k < n; ++k) {
        const Eigen::Vector3d z = jn.chol * Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
        tr.q[k] = x(0);
        tr.p[k] = x(1);
        tr.X[k] = m.c_q * x(0) + z(2);
        x = d.Ad * x + z.head<2>();
    }
    return tr;
}

struct ModulatedTrajectory {
    Trajectory traj;
    std::vector<double> x_mod;     // applied displacement offset, m
    std::vector<double> delta;     // instantaneous detuning / kappa
    std::vector<double> f_track;   // instantaneous confined frequency, Hz
    double clamp_fraction = 0.0;   // samples where delta hit the positivity floor
};

// Run with a slow additive displacement offset modulating the detuning:
//   delta_k = delta_bar + G x_mod[k] / kappa
// The model (spring frequency, couplings, noise maps) is rebuilt each sample
// through the photon map; the confined frequency follows the spring relation.
inline ModulatedTrajectory simulate_modulated(const Params& base, const std::vector<double>& x_mod,
                                              double fs, uint64_t seed) {
    if (x_mod.empty() || fs <= 0.0)
        throw config_error("modulated simulation needs samples and a positive rate");
    const PowerPhotonMap map = calibrated_photon_map(base);
    const size_t n = x_mod.size();
    const double dt = 1.0 / fs;
    const double delta_floor = 1e-4;

    ModulatedTrajectory out;
    out.x_mod = x_mod;
    out.delta.resize(n);
    out.f_track.resize(n);
    out.traj.fs = fs;
    out.traj.seed = seed;
    out.traj.q.resize(n);
    out.traj.p.resize(n);
    out.traj.X.resize(n);

    NormalRng rng(seed);
    size_t clamped = 0;

    // initial state from the mean-detuning stationary distribution
    Params p0 = at_detuning(base, map, base.delta);
    const StateSpaceModel m0 = build_model(p0);
    const Eigen::Matrix2d P0 = steady_state_covariance(m0);
    Eigen::LLT<Eigen::Matrix2d> llt(P0);
    if (llt.info() != Eigen::Success)
        throw numeric_error("stationary covariance is not positive definite");
    Eigen::Vector2d x = llt.matrixL() * Eigen::Vector2d(rng.normal(), rng.normal());

    for (size_t k = 0; k < n; ++k) {
        double dk = base.delta + base.G * x_mod[k] / base.kappa;
        if (dk < delta_floor) {
            dk = delta_floor;
            ++clamped;
        }
        const Params pk = at_detuning(base, map, dk);
        const StateSpaceModel mk = build_model(pk);
        const DiscreteModel dm = discretize(mk, dt);
        const detail::JointNoise jn(dm);
        const Eigen::Vector3d z = jn.chol * Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
        out.delta[k] = dk;
        out.f_track[k] = mk.omega_m / constants::two_pi;
        out.traj.q[k] = x(0);
        out.traj.p[k] = x(1);
        out.traj.X[k] = mk.c_q * x(0) + z(2);
        x = dm.Ad * x + z.head<2>();
    }
    out.clamp_fraction = static_cast<double>(clamped) / static_cast<double>(n);
    return out;
}

} // namespace omsq
