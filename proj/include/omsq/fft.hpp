#pragma once

#include <complex>
#include <map>
#include <mutex>
#include <vector>

#include <fftw3.h>

#include "omsq/errors.hpp"
#include "omsq/params.hpp"

namespace omsq {

// Per-thread FFTW engine with cached plans.  Buffers are fftw-allocated so a
// plan made for size n stays valid; callers pass ordinary vectors that are
// copied in and out (copy cost is negligible next to the transform).  FFTW
// execution is thread-safe only on distinct plans and buffers, so each thread
// owns its own engine; plan creation and destruction touch FFTW's global
// planner state and are serialized by a process-wide mutex.
class FftEngine {
  public:
    static FftEngine& instance() {
        thread_local FftEngine e;
        return e;
    }

    static std::mutex& planner_mutex() {
        static std::mutex m;
        return m;
    }

    std::vector<std::complex<double>> transform(const std::vector<std::complex<double>>& x, int sign) {
        const size_t n = x.size();
        if (n == 0) throw numeric_error("FFT of empty series");
        Plan& pl = plan_for(n, sign);
        auto* buf = reinterpret_cast<std::complex<double>*>(pl.buf);
        std::copy(x.begin(), x.end(), buf);
        fftw_execute(pl.plan);
        return std::vector<std::complex<double>>(buf, buf + n);
    }

    ~FftEngine() {
        const std::lock_guard<std::mutex> lock(planner_mutex());
        for (auto& [key, pl] : plans_) {
            fftw_destroy_plan(pl.plan);
            fftw_free(pl.buf);
        }
    }

  private:
    struct Plan {
        fftw_complex* buf = nullptr;
        fftw_plan plan = nullptr;
    };

    Plan& plan_for(size_t n, int sign) {
        auto key = std::make_pair(n, sign);
        auto it = plans_.find(key);
        if (it != plans_.end()) return it->second;
        Plan pl;
        {
            const std::lock_guard<std::mutex> lock(planner_mutex());
            pl.buf = fftw_alloc_complex(n);
            if (!pl.buf) throw numeric_error("FFT buffer allocation failed");
            pl.plan = fftw_plan_dft_1d(static_cast<int>(n), pl.buf, pl.buf, sign, FFTW_ESTIMATE);
            if (!pl.plan) {
                fftw_free(pl.buf);
                throw numeric_error("FFT planning failed");
            }
        }
        return plans_.emplace(key, pl).first->second;
    }

    std::map<std::pair<size_t, int>, Plan> plans_;
};

inline std::vector<std::complex<double>> fft(const std::vector<std::complex<double>>& x) {
    return FftEngine::instance().transform(x, FFTW_FORWARD);
}

inline std::vector<std::complex<double>> ifft(const std::vector<std::complex<double>>& x) {
    auto y = FftEngine::instance().transform(x, FFTW_BACKWARD);
    const double s = 1.0 / static_cast<double>(x.size());
    for (auto& v : y) v *= s;
    return y;
}

inline std::vector<std::complex<double>> fft_real(const std::vector<double>& x) {
    std::vector<std::complex<double>> c(x.size());
    for (size_t i = 0; i < x.size(); ++i) c[i] = x[i];
    return fft(c);
}

inline std::vector<double> real_part(const std::vector<std::complex<double>>& x) {
    std::vector<double> r(x.size());
    for (size_t i = 0; i < x.size(); ++i) r[i] = x[i].real();
    return r;
}

// Bin frequencies in Hz, FFT layout: 0, fs/n, ..., then negative frequencies.
inline std::vector<double> fft_frequencies(size_t n, double fs) {
    std::vector<double> f(n);
    const double df = fs / static_cast<double>(n);
    const size_t half = (n + 1) / 2; // bins 0 .. half-1 are non-negative
    for (size_t i = 0; i < half; ++i) f[i] = df * static_cast<double>(i);
    for (size_t i = half; i < n; ++i)
        f[i] = df * (static_cast<double>(i) - static_cast<double>(n));
    return f;
}

// Analytic signal: spectrum kept at DC (and Nyquist for even n), doubled for
// positive frequencies, zeroed for negative ones.
inline std::vector<std::complex<double>> analytic_signal(const std::vector<double>& x) {
    const size_t n = x.size();
    if (n < 2) throw numeric_error("analytic signal needs at least 2 samples");
    auto spec = fft_real(x);
    const bool even = (n % 2) == 0;
    const size_t nyq = n / 2;
    for (size_t i = 1; i < (even ? nyq : nyq + 1); ++i) spec[i] *= 2.0;
    for (size_t i = (even ? nyq + 1 : nyq + 1); i < n; ++i) spec[i] = 0.0;
    return ifft(spec);
}

// Frequency response sampled at omega = 2 pi f for f = k fs/n, k = 0..n/2
// (non-negative bins, inclusive of Nyquist for even n).
template <typename Fn>
std::vector<std::complex<double>> sample_response(Fn&& response_of_omega, size_t n, double fs) {
    std::vector<std::complex<double>> h(n / 2 + 1);
    const double dw = constants::two_pi * fs / static_cast<double>(n);
    for (size_t k = 0; k < h.size(); ++k)
        h[k] = response_of_omega(dw * static_cast<double>(k));
    return h;
}

// In-place application of a causal response to an FFT spectrum.  The library's
// transfer functions follow the exp(+i omega t) sign convention, so standard-FFT
// bins at f >= 0 are scaled by conj(H(omega)) and bins at f < 0 by H(|omega|).
inline void apply_response_spectrum(std::vector<std::complex<double>>& spec, const std::vector<std::complex<double>>& h_pos) {
    const size_t n = spec.size();
    if (h_pos.size() != n / 2 + 1)
        throw numeric_error("response sampling does not match spectrum length");
    const size_t half = (n + 1) / 2;
    for (size_t i = 0; i < half; ++i) spec[i] *= std::conj(h_pos[i]);
    for (size_t i = half; i < n; ++i) spec[i] *= h_pos[n - i];
}

// Real series through a causal response sampled on the non-negative FFT bins.
inline std::vector<double> filter_real_series(const std::vector<double>& x, const std::vector<std::complex<double>>& h_pos) {
    auto spec = fft_real(x);
    apply_response_spectrum(spec, h_pos);
    return real_part(ifft(spec));
}

} // namespace omsq
