#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "omsq/errors.hpp"

namespace omsq {

namespace constants {
inline constexpr double hbar = 1.054571817e-34; // J s
inline constexpr double k_B = 1.380649e-23;     // J/K
inline constexpr double pi = 3.141592653589793238462643383279502884;
inline constexpr double two_pi = 2.0 * pi;
} // namespace constants

// System parameters in internal units: angular frequencies in rad/s, SI elsewhere.
// Config files carry ordinary frequencies in Hz and mass in mg; conversion happens
// at parse time (params_io.hpp).
struct Params {
    double mass_kg = 0.0;
    double kappa = 0.0;       // cavity linewidth, rad/s
    double delta = 0.0;       // detuning in units of kappa, dimensionless
    double n_c = 0.0;         // intracavity photon number
    double G = 0.0;           // cavity frequency pull per displacement, rad/s/m
    double eta = 1.0;         // detection efficiency
    double N_th = 0.0;        // optical bath occupancy
    double n_th = 0.0;        // mechanical mode occupancy
    double Q = 0.0;           // quality factor of the confined mode
    double Gamma_m = 0.0;     // intrinsic (unconfined) damping, rad/s
    double T_kelvin = 0.0;    // effective bath temperature
    double power_w = 0.0;     // injected optical power
    std::optional<double> omega_m_meas; // measured confined frequency, rad/s
};

// Quantities derived from Params.  omega_m is the measured value when supplied,
// otherwise the confinement prediction.
struct Derived {
    double omega_m = 0.0;  // rad/s
    double gamma_m = 0.0;  // rad/s, omega_m / Q
    double x_zpf = 0.0;    // m
    double g0 = 0.0;       // vacuum coupling G * x_zpf, rad/s
    double g_m = 0.0;      // field-enhanced coupling g0 * sqrt(n_c), rad/s
    double c_q = 0.0;      // detected-quadrature gain per zpf displacement
    double C = 0.0;        // cooperativity 4 g_m^2 / (gamma_m kappa)
    double C_q = 0.0;      // quantum cooperativity C / n_th
};

// Confinement frequency of the detuning-induced spring:
//   omega_m^2 = 8 hbar G^2 n_c delta / ((1 + 4 delta^2) kappa m)
// Returns 0 at delta = 0 (no spring).  Negative delta has no confined mode.
inline double derive_confined_frequency(const Params& p) {
    if (p.delta < 0.0)
        throw config_error("confined frequency requires delta >= 0, got " + std::to_string(p.delta));
    if (p.mass_kg <= 0.0 || p.kappa <= 0.0)
        throw config_error("confined frequency requires positive mass and kappa");
    const double num = 8.0 * constants::hbar * p.G * p.G * p.n_c * p.delta;
    const double den = (1.0 + 4.0 * p.delta * p.delta) * p.kappa * p.mass_kg;
    return std::sqrt(num / den);
}

inline double effective_omega_m(const Params& p) {
    return p.omega_m_meas ? *p.omega_m_meas : derive_confined_frequency(p);
}

// Coupling chain evaluated at a given confined frequency.
inline Derived derive_at(const Params& p, double omega_m) {
    if (omega_m <= 0.0)
        throw config_error("coupling derivation requires omega_m > 0");
    if (p.Q <= 0.0)
        throw config_error("coupling derivation requires Q > 0");
    Derived d;
    d.omega_m = omega_m;
    d.gamma_m = omega_m / p.Q;
    d.x_zpf = std::sqrt(constants::hbar / (2.0 * p.mass_kg * omega_m));
    d.g0 = p.G * d.x_zpf;
    d.g_m = d.g0 * std::sqrt(p.n_c);
    d.c_q = -8.0 * d.g_m * p.delta * std::sqrt(p.eta) / std::sqrt(p.kappa);
    d.C = 4.0 * d.g_m * d.g_m / (d.gamma_m * p.kappa);
    d.C_q = p.n_th > 0.0 ? d.C / p.n_th : 0.0;
    return d;
}

inline Derived derive(const Params& p) { return derive_at(p, effective_omega_m(p)); }

// Bose occupancy at temperature T for a mode at omega (rad/s).
inline double occupancy_from_temperature(double T_kelvin, double omega) {
    if (T_kelvin <= 0.0 || omega <= 0.0) return 0.0;
    const double x = constants::hbar * omega / (constants::k_B * T_kelvin);
    return 1.0 / std::expm1(x);
}

// Occupancy from a symmetrized variance in zpf units (vacuum variance = 1).
inline double occupancy_from_variance(double var) {
    if (var < 1.0)
        throw config_error("variance below the vacuum level has no thermal occupancy");
    return 0.5 * (var - 1.0);
}

// Hard invariants throw config_error; soft regime checks are returned as warnings.
inline std::vector<std::string> validate(const Params& p) {
    if (p.mass_kg <= 0.0) throw config_error("mass must be positive");
    if (p.kappa <= 0.0) throw config_error("kappa must be positive");
    if (p.delta < 0.0) throw config_error("delta must be non-negative");
    if (p.n_c < 0.0) throw config_error("photon number must be non-negative");
    if (p.eta < 0.0 || p.eta > 1.0)
        throw config_error("eta must lie in [0, 1], got " + std::to_string(p.eta));
    if (p.N_th < 0.0) throw config_error("N_th must be non-negative");
    if (p.n_th <= 0.0) throw config_error("n_th must be positive");
    if (p.Q <= 0.0) throw config_error("Q must be positive");
    const double omega_m = effective_omega_m(p);
    if (omega_m <= 0.0)
        throw config_error("confined frequency is zero; supply omega_m_hz or a positive delta");

    std::vector<std::string> warnings;
    if (p.kappa < 100.0 * omega_m)
        warnings.push_back("kappa is less than 100 omega_m; the adiabatic cavity model degrades");
    if (p.delta > 0.1)
        warnings.push_back("delta exceeds 0.1; small-detuning closed forms lose accuracy");
    return warnings;
}

// Laboratory reference point used throughout the tests and the report stage.
inline Params reference_params() {
    Params p;
    p.mass_kg = 7.71e-6;
    p.kappa = constants::two_pi * 1.64e6;
    p.delta = 0.0292;
    p.n_c = 1.17e10;
    p.G = -constants::two_pi * 4.72e15;
    p.eta = 0.92;
    p.N_th = 19.0;
    p.n_th = 8.0e5;
    p.Q = 250.0;
    p.Gamma_m = constants::two_pi * 4.74e-5;
    p.T_kelvin = 0.011;
    p.power_w = 0.030;
    p.omega_m_meas = constants::two_pi * 280.0;
    return p;
}

// Photon number vs injected power and detuning: n_c = scale * P / (1 + 4 delta^2).
// Calibrated maps reproduce a known operating point exactly.
struct PowerPhotonMap {
    double scale = 0.0; // photons per watt at zero detuning

    double operator()(double power_w, double delta) const {
        return scale * power_w / (1.0 + 4.0 * delta * delta);
    }
};

inline PowerPhotonMap calibrated_photon_map(const Params& p) {
    if (p.power_w <= 0.0)
        throw config_error("photon map calibration requires positive power");
    PowerPhotonMap m;
    m.scale = p.n_c * (1.0 + 4.0 * p.delta * p.delta) / p.power_w;
    return m;
}

// Parameters re-evaluated at a different detuning through the photon map, with the
// confined frequency re-derived from the spring relation (no measured override).
inline Params at_detuning(const Params& p, const PowerPhotonMap& map, double delta) {
    Params q = p;
    q.delta = delta;
    q.n_c = map(p.power_w, delta);
    q.omega_m_meas.reset();
    return q;
}

} // namespace omsq
