#pragma once

#include <complex>
#include <vector>

#include "omsq/errors.hpp"
#include "omsq/params.hpp"

namespace omsq {

// Second-order section, direct form II transposed.
struct Biquad {
    double b0 = 1.0, b1 = 0.0, b2 = 0.0;
    double a1 = 0.0, a2 = 0.0;
};

using Sos = std::vector<Biquad>;

inline std::complex<double> biquad_response(const Biquad& s, double theta) {
    const std::complex<double> z1 = std::polar(1.0, -theta);
    const std::complex<double> z2 = z1 * z1;
    return (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
}

inline std::complex<double> sos_response(const Sos& sos, double f, double fs) {
    const double theta = constants::two_pi * f / fs;
    std::complex<double> h = 1.0;
    for (const auto& s : sos) h *= biquad_response(s, theta);
    return h;
}

namespace detail {

// Left-half-plane Butterworth prototype poles, unit cutoff.
inline std::vector<std::complex<double>> butter_poles(int order) {
    std::vector<std::complex<double>> p(order);
    for (int k = 0; k < order; ++k) {
        const double a = constants::pi * (2.0 * k + order + 1.0) / (2.0 * order);
        p[k] = std::polar(1.0, a);
    }
    return p;
}

inline std::complex<double> bilinear_pole(std::complex<double> s, double fs) {
    return (1.0 + s / (2.0 * fs)) / (1.0 - s / (2.0 * fs));
}

// Section from a digital pole pair (zp, conj zp) and real zero pair, scaled to
// unit gain at theta_ref.
inline Biquad section_from(const std::complex<double>& zp, double zero1, double zero2,
                           double theta_ref) {
    Biquad s;
    s.a1 = -2.0 * zp.real();
    s.a2 = std::norm(zp);
    s.b0 = 1.0;
    s.b1 = -(zero1 + zero2);
    s.b2 = zero1 * zero2;
    const double g = std::abs(biquad_response(s, theta_ref));
    if (g <= 0.0) throw numeric_error("degenerate filter section");
    s.b0 /= g;
    s.b1 /= g;
    s.b2 /= g;
    return s;
}

inline void check_band(double f, double fs, const char* what) {
    if (fs <= 0.0) throw config_error("filter design needs a positive sample rate");
    if (f <= 0.0 || f >= 0.5 * fs)
        throw config_error(std::string(what) + " frequency " + std::to_string(f) +
                           " Hz must lie inside (0, fs/2)");
}

} // namespace detail

// Maximally flat lowpass: -3 dB at fc by construction of the prototype.
inline Sos butter_lowpass_design(int order, double fc, double fs) {
    if (order < 1 || order % 2 != 0)
        throw config_error("lowpass design expects a positive even order");
    detail::check_band(fc, fs, "lowpass cutoff");
    const double wc = 2.0 * fs * std::tan(constants::pi * fc / fs); // prewarped
    Sos sos;
    for (const auto& p : detail::butter_poles(order)) {
        if (p.imag() <= 0.0) continue; // one section per conjugate pair
        const auto zp = detail::bilinear_pole(wc * p, fs);
        sos.push_back(detail::section_from(zp, -1.0, -1.0, 0.0));
    }
    return sos;
}

// Bandpass through the analog transform s -> (s^2 + w0^2) / (bw s) of the
// order-n prototype (2n digital poles); unit gain at the geometric centre.
inline Sos butter_bandpass_design(int order, double f_lo, double f_hi, double fs) {
    if (order < 1 || order % 2 != 0)
        throw config_error("bandpass design expects a positive even order");
    detail::check_band(f_lo, fs, "bandpass lower edge");
    detail::check_band(f_hi, fs, "bandpass upper edge");
    if (f_lo >= f_hi) throw config_error("bandpass edges are inverted");
    const double w1 = 2.0 * fs * std::tan(constants::pi * f_lo / fs);
    const double w2 = 2.0 * fs * std::tan(constants::pi * f_hi / fs);
    const double w0 = std::sqrt(w1 * w2), bw = w2 - w1;
    const double theta0 = 2.0 * std::atan(w0 / (2.0 * fs));
    Sos sos;
    for (const auto& p : detail::butter_poles(order)) {
        if (p.imag() <= 0.0) continue;
        // each prototype pole splits into two band poles; conjugates come from
        // the conjugate prototype pole, so both branches yield one section each
        const std::complex<double> disc = std::sqrt(bw * bw * p * p - 4.0 * w0 * w0);
        for (int sign : {-1, 1}) {
            const std::complex<double> s = 0.5 * (bw * p + double(sign) * disc);
            const auto zp = detail::bilinear_pole(s, fs);
            sos.push_back(detail::section_from(zp, 1.0, -1.0, theta0));
        }
    }
    return sos;
}

// Notches at k f0 for k = 1..harmonics, each with the same absolute width (Hz).
inline Sos notch_design(double f0, int harmonics, double width, double fs) {
    if (harmonics < 1) throw config_error("notch design needs at least one harmonic");
    if (width <= 0.0) throw config_error("notch width must be positive");
    Sos sos;
    for (int k = 1; k <= harmonics; ++k) {
        const double fk = k * f0;
        detail::check_band(fk, fs, "notch");
        const double theta = constants::two_pi * fk / fs;
        const double q = fk / width;
        const double alpha = std::sin(theta) / (2.0 * q);
        Biquad s;
        const double a0 = 1.0 + alpha;
        s.b0 = 1.0 / a0;
        s.b1 = -2.0 * std::cos(theta) / a0;
        s.b2 = 1.0 / a0;
        s.a1 = -2.0 * std::cos(theta) / a0;
        s.a2 = (1.0 - alpha) / a0;
        sos.push_back(s);
    }
    return sos;
}

namespace detail {

inline double biquad_dc_gain(const Biquad& s) {
    return (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
}

// steady-state DF2T state for a unit-step input (then scaled by the first sample)
struct SectionState {
    double s1 = 0.0, s2 = 0.0;
};

inline SectionState step_state(const Biquad& s) {
    const double g = biquad_dc_gain(s);
    return {g - s.b0, s.b2 - s.a2 * g};
}

inline void run_sos(const Sos& sos, std::vector<double>& x, const std::vector<SectionState>& zi,
                    double scale) {
    std::vector<SectionState> st(sos.size());
    double gain_in = scale;
    for (size_t j = 0; j < sos.size(); ++j) {
        st[j].s1 = zi[j].s1 * gain_in;
        st[j].s2 = zi[j].s2 * gain_in;
        gain_in *= biquad_dc_gain(sos[j]);
    }
    for (auto& v : x) {
        double u = v;
        for (size_t j = 0; j < sos.size(); ++j) {
            const Biquad& c = sos[j];
            const double y = c.b0 * u + st[j].s1;
            st[j].s1 = c.b1 * u - c.a1 * y + st[j].s2;
            st[j].s2 = c.b2 * u - c.a2 * y;
            u = y;
        }
        v = u;
    }
}

} // namespace detail

// Causal cascade from rest.
inline std::vector<double> sosfilt(const Sos& sos, const std::vector<double>& x) {
    std::vector<double> y = x;
    detail::run_sos(sos, y, std::vector<detail::SectionState>(sos.size()), 0.0);
    return y;
}

// Zero-phase forward-backward pass with odd-reflection padding and steady-state
// section initialisation, so short paddings suffice even for narrow filters.
inline std::vector<double> filtfilt(const Sos& sos, const std::vector<double>& x) {
    if (x.size() < 4) throw numeric_error("zero-phase filtering needs at least 4 samples");
    const size_t pad = std::min(x.size() - 1, 3 * (2 * sos.size() + 1));
    const size_t n = x.size();
    std::vector<double> ext;
    ext.reserve(n + 2 * pad);
    for (size_t i = 0; i < pad; ++i) ext.push_back(2.0 * x[0] - x[pad - i]);
    ext.insert(ext.end(), x.begin(), x.end());
    for (size_t i = 0; i < pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 2 - i]);

    std::vector<detail::SectionState> zi(sos.size());
    for (size_t j = 0; j < sos.size(); ++j) zi[j] = detail::step_state(sos[j]);

    detail::run_sos(sos, ext, zi, ext.front());
    std::reverse(ext.begin(), ext.end());
    detail::run_sos(sos, ext, zi, ext.front());
    std::reverse(ext.begin(), ext.end());
    return std::vector<double>(ext.begin() + static_cast<long>(pad),
                               ext.begin() + static_cast<long>(pad + n));
}

// Pipeline conveniences (zero-phase).
inline std::vector<double> bandpass(const std::vector<double>& x, double f_lo, double f_hi, double fs) {
    return filtfilt(butter_bandpass_design(4, f_lo, f_hi, fs), x);
}

inline std::vector<double> lowpass(const std::vector<double>& x, double fc, double fs) {
    return filtfilt(butter_lowpass_design(4, fc, fs), x);
}

inline std::vector<double> notch_harmonics(const std::vector<double>& x, double f0, int harmonics,
                                           double width, double fs) {
    return filtfilt(notch_design(f0, harmonics, width, fs), x);
}

} // namespace omsq
