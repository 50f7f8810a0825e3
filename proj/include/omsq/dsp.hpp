#pragma once

#include <algorithm>
#include <complex>
#include <vector>

#include "omsq/errors.hpp"
#include "omsq/fft.hpp"

namespace omsq {

// One-sided spectral density on a uniform grid from DC to Nyquist.
struct Spectrum {
    std::vector<double> f;                 // Hz
    std::vector<std::complex<double>> v;   // density; real for auto-spectra
    double resolution = 0.0;               // bin spacing, Hz

    std::vector<double> real() const { return real_part(v); }
};

namespace detail {

inline std::vector<double> hann_periodic(size_t n) {
    std::vector<double> w(n);
    for (size_t i = 0; i < n; ++i)
        w[i] = 0.5 - 0.5 * std::cos(constants::two_pi * static_cast<double>(i) / static_cast<double>(n));
    return w;
}

// Averaged segment cross-spectrum conj(A) . B with Hann window, 50% overlap,
// per-segment mean removal, density normalization 2 / (fs sum w^2).
inline Spectrum welch_pair(const std::vector<double>& a, const std::vector<double>& b, double fs,
                           double resolution) {
    if (a.size() != b.size()) throw numeric_error("cross-spectrum inputs differ in length");
    if (fs <= 0.0 || resolution <= 0.0)
        throw config_error("spectral estimate needs positive rate and resolution");
    const size_t nper = static_cast<size_t>(std::lround(fs / resolution));
    if (nper < 8) throw config_error("spectral resolution too coarse for the sample rate");
    if (nper > a.size())
        throw config_error("series shorter than one segment at the requested resolution");
    const size_t hop = nper / 2;
    const auto w = hann_periodic(nper);
    double sumw2 = 0.0;
    for (double x : w) sumw2 += x * x;
    const double norm = 2.0 / (fs * sumw2);

    const size_t nbins = nper / 2 + 1;
    std::vector<std::complex<double>> acc(nbins, 0.0);
    std::vector<std::complex<double>> seg_a(nper), seg_b(nper);
    size_t count = 0;
    for (size_t start = 0; start + nper <= a.size(); start += hop) {
        double ma = 0.0, mb = 0.0;
        for (size_t i = 0; i < nper; ++i) {
            ma += a[start + i];
            mb += b[start + i];
        }
        ma /= static_cast<double>(nper);
        mb /= static_cast<double>(nper);
        for (size_t i = 0; i < nper; ++i) {
            seg_a[i] = (a[start + i] - ma) * w[i];
            seg_b[i] = (b[start + i] - mb) * w[i];
        }
        const auto fa = fft(seg_a);
        const auto fb = fft(seg_b);
        for (size_t k = 0; k < nbins; ++k) acc[k] += std::conj(fa[k]) * fb[k];
        ++count;
    }
    Spectrum s;
    s.resolution = fs / static_cast<double>(nper);
    s.f.resize(nbins);
    s.v.resize(nbins);
    for (size_t k = 0; k < nbins; ++k) {
        s.f[k] = s.resolution * static_cast<double>(k);
        double scale = norm / static_cast<double>(count);
        if (k == 0 || (nper % 2 == 0 && k == nbins - 1)) scale *= 0.5; // one-sided ends
        s.v[k] = acc[k] * scale;
    }
    return s;
}

} // namespace detail

inline Spectrum psd_welch(const std::vector<double>& x, double fs, double resolution) {
    Spectrum s = detail::welch_pair(x, x, fs, resolution);
    for (auto& v : s.v) v = v.real(); // clear rounding residue in the imaginary part
    return s;
}

inline Spectrum cross_spectrum(const std::vector<double>& a, const std::vector<double>& b, double fs,
                               double resolution) {
    return detail::welch_pair(a, b, fs, resolution);
}

// Magnitude-squared coherence |S_ab|^2 / (S_aa S_bb).
inline std::vector<double> coherence(const std::vector<double>& a, const std::vector<double>& b,
                                     double fs, double resolution) {
    const Spectrum saa = psd_welch(a, fs, resolution);
    const Spectrum sbb = psd_welch(b, fs, resolution);
    const Spectrum sab = cross_spectrum(a, b, fs, resolution);
    std::vector<double> c(sab.v.size());
    for (size_t k = 0; k < c.size(); ++k) {
        const double den = saa.v[k].real() * sbb.v[k].real();
        c[k] = den > 0.0 ? std::norm(sab.v[k]) / den : 0.0;
    }
    return c;
}

// Instantaneous frequency from zero crossings (both directions): each pair of
// consecutive crossings tc spaced dt apart contributes f = 1 / (2 dt) at their
// midpoint; the result is linearly interpolated back onto the sample grid with
// end values held.
inline std::vector<double> count_zero_crossings(const std::vector<double>& x, double fs) {
    if (x.size() < 3) throw numeric_error("crossing counter needs at least 3 samples");
    const double dt = 1.0 / fs;
    std::vector<double> tc;
    for (size_t i = 0; i + 1 < x.size(); ++i) {
        const bool sa = std::signbit(x[i]), sb = std::signbit(x[i + 1]);
        if (sa == sb) continue;
        tc.push_back(dt * (static_cast<double>(i) - x[i] / (x[i + 1] - x[i])));
    }
    if (tc.size() < 2)
        throw numeric_error("no oscillation: fewer than two zero crossings");
    std::vector<double> tm(tc.size() - 1), fi(tc.size() - 1);
    for (size_t i = 0; i + 1 < tc.size(); ++i) {
        tm[i] = 0.5 * (tc[i] + tc[i + 1]);
        fi[i] = 1.0 / (2.0 * (tc[i + 1] - tc[i]));
    }
    std::vector<double> out(x.size());
    size_t j = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double t = dt * static_cast<double>(i);
        if (t <= tm.front()) {
            out[i] = fi.front();
        } else if (t >= tm.back()) {
            out[i] = fi.back();
        } else {
            while (tm[j + 1] < t) ++j;
            const double u = (t - tm[j]) / (tm[j + 1] - tm[j]);
            out[i] = fi[j] + u * (fi[j + 1] - fi[j]);
        }
    }
    return out;
}

// Contiguous equal-width block means; the division remainder goes to the final
// bin so every sample is used exactly once.
inline std::vector<double> bin_average(const std::vector<double>& x, size_t n_bins) {
    if (n_bins == 0) throw config_error("bin average needs at least one bin");
    if (x.size() < n_bins) throw config_error("bin average: more bins than samples");
    const size_t base = x.size() / n_bins;
    std::vector<double> out(n_bins);
    size_t pos = 0;
    for (size_t b = 0; b < n_bins; ++b) {
        const size_t len = (b + 1 == n_bins) ? x.size() - pos : base;
        double s = 0.0;
        for (size_t i = 0; i < len; ++i) s += x[pos + i];
        out[b] = s / static_cast<double>(len);
        pos += len;
    }
    return out;
}

} // namespace omsq
