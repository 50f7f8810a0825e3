#include <catch2/catch_amalgamated.hpp>

#include "omsq/filters.hpp"
#include "omsq/rng.hpp"

using namespace omsq;
using Catch::Approx;

namespace {

double db(double mag) { return 20.0 * std::log10(std::max(mag, 1e-300)); }

} // namespace

TEST_CASE("lowpass design properties", "[filters]") {
    const double fs = 2000.0, fc = 100.0;
    const Sos sos = butter_lowpass_design(4, fc, fs);
    REQUIRE(sos.size() == 2);

    CHECK(std::abs(sos_response(sos, 0.0, fs)) == Approx(1.0).epsilon(1e-12));
    // half-power point lands on the design cutoff
    CHECK(std::abs(sos_response(sos, fc, fs)) == Approx(1.0 / std::sqrt(2.0)).epsilon(0.01));
    // and nowhere outside fc +/- 5%
    CHECK(std::abs(sos_response(sos, 0.95 * fc, fs)) > 1.0 / std::sqrt(2.0));
    CHECK(std::abs(sos_response(sos, 1.05 * fc, fs)) < 1.0 / std::sqrt(2.0));
    CHECK(db(std::abs(sos_response(sos, 4.0 * fc, fs))) < -40.0);
    // monotone (maximally flat) magnitude
    double prev = 1.0;
    for (double f = 10.0; f < 900.0; f += 10.0) {
        const double m = std::abs(sos_response(sos, f, fs));
        CHECK(m <= prev + 1e-9);
        prev = m;
    }
    CHECK_THROWS_AS(butter_lowpass_design(3, fc, fs), config_error);
    CHECK_THROWS_AS(butter_lowpass_design(4, 1200.0, fs), config_error);
}

TEST_CASE("bandpass design properties", "[filters]") {
    const double fs = 20000.0;
    const Sos sos = butter_bandpass_design(4, 170.0, 360.0, fs);
    REQUIRE(sos.size() == 4);

    // amplitude preserved through the band of interest
    CHECK(std::abs(db(std::abs(sos_response(sos, 280.0, fs)))) < 1.0);
    for (double f = 200.0; f <= 320.0; f += 10.0)
        CHECK(std::abs(db(std::abs(sos_response(sos, f, fs)))) < 1.0);
    // an octave outside either edge
    CHECK(db(std::abs(sos_response(sos, 85.0, fs))) < -40.0);
    CHECK(db(std::abs(sos_response(sos, 720.0, fs))) < -40.0);
    // mains frequency and DC rejected
    CHECK(db(std::abs(sos_response(sos, 50.0, fs))) < -40.0);
    CHECK(std::abs(sos_response(sos, 0.0, fs)) < 1e-10);

    CHECK_THROWS_AS(butter_bandpass_design(4, 360.0, 170.0, fs), config_error);
    CHECK_THROWS_AS(butter_bandpass_design(4, 170.0, 10001.0, fs), config_error);
}

TEST_CASE("harmonic notch properties", "[filters]") {
    const double fs = 20000.0, f0 = 50.0, width = 4.0;
    const Sos sos = notch_design(f0, 3, width, fs);
    REQUIRE(sos.size() == 3);

    for (int k = 1; k <= 3; ++k) {
        CHECK(db(std::abs(sos_response(sos, k * f0, fs))) < -30.0);
        // quick recovery away from the notch
        CHECK(std::abs(db(std::abs(sos_response(sos, k * f0 + 3.0 * width, fs)))) < 0.5);
        CHECK(std::abs(db(std::abs(sos_response(sos, k * f0 - 3.0 * width, fs)))) < 0.5);
    }
    // signal band untouched
    CHECK(std::abs(db(std::abs(sos_response(sos, 280.0, fs)))) < 0.1);

    CHECK_THROWS_AS(notch_design(6000.0, 1, width, 10000.0), config_error);
    CHECK_THROWS_AS(notch_design(3000.0, 2, width, 10000.0), config_error); // 2nd harmonic over Nyquist
    CHECK_THROWS_AS(notch_design(f0, 0, width, fs), config_error);
    CHECK_THROWS_AS(notch_design(f0, 1, -1.0, fs), config_error);
}

TEST_CASE("notch removes a mains mixture and keeps the carrier", "[filters]") {
    const double fs = 20000.0;
    const size_t n = 1 << 16;
    std::vector<double> clean(n), x(n);
    for (size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / fs;
        clean[i] = std::sin(constants::two_pi * 280.0 * t);
        x[i] = clean[i] + 2.0 * std::sin(constants::two_pi * 50.0 * t) +
               1.0 * std::sin(constants::two_pi * 150.0 * t);
    }
    const auto y = notch_harmonics(x, 50.0, 3, 4.0, fs);
    double err = 0.0;
    for (size_t i = n / 8; i < 7 * n / 8; ++i) err += (y[i] - clean[i]) * (y[i] - clean[i]);
    err = std::sqrt(err / (0.75 * n));
    CHECK(err < 0.05); // residual mains below a few percent of the carrier
}

TEST_CASE("zero-phase application", "[filters]") {
    const double fs = 20000.0;
    const Sos sos = butter_bandpass_design(4, 170.0, 360.0, fs);

    SECTION("constant survives a lowpass exactly") {
        const Sos lp = butter_lowpass_design(4, 8.2, fs);
        std::vector<double> c(4000, 3.7);
        const auto y = filtfilt(lp, c);
        for (size_t i = 0; i < c.size(); i += 97) CHECK(y[i] == Approx(3.7).epsilon(1e-9));
    }
    SECTION("slow ramp passes a lowpass cleanly away from the ends") {
        // the step-matched initial state leaves a slope transient that decays
        // over a few filter time constants (~fs/fc samples)
        const Sos lp = butter_lowpass_design(4, 8.2, fs);
        std::vector<double> r(40000);
        for (size_t i = 0; i < r.size(); ++i) r[i] = 0.5 + 2.0e-4 * static_cast<double>(i);
        const auto y = filtfilt(lp, r);
        for (size_t i = 6000; i + 6000 < r.size(); i += 997)
            CHECK(y[i] == Approx(r[i]).margin(1e-4 * r.back()));
        // even at the ends the error stays bounded by a few percent
        CHECK(y.front() == Approx(r.front()).margin(0.05 * r.back()));
    }
    SECTION("no phase shift on an in-band tone") {
        const size_t n = 1 << 15;
        std::vector<double> x(n);
        for (size_t i = 0; i < n; ++i) x[i] = std::sin(constants::two_pi * 280.0 * i / fs);
        const auto y = filtfilt(sos, x);
        double re = 0.0, im = 0.0;
        for (size_t i = n / 8; i < 7 * n / 8; ++i) {
            const double ph = constants::two_pi * 280.0 * i / fs;
            re += y[i] * std::sin(ph);
            im += y[i] * std::cos(ph);
        }
        CHECK(std::abs(std::atan2(im, re)) < 5e-3); // phase in radians
        const double gain = std::norm(sos_response(sos, 280.0, fs));
        CHECK(2.0 * re / (0.75 * n) == Approx(gain).epsilon(0.02)); // magnitude squared once per pass
    }
    SECTION("linearity") {
        NormalRng rng(11);
        std::vector<double> a(5000), b(5000), mix(5000);
        for (size_t i = 0; i < a.size(); ++i) {
            a[i] = rng.normal();
            b[i] = rng.normal();
            mix[i] = 1.7 * a[i] - 0.3 * b[i];
        }
        const auto ya = filtfilt(sos, a), yb = filtfilt(sos, b), ym = filtfilt(sos, mix);
        double err = 0.0;
        for (size_t i = 0; i < a.size(); ++i)
            err = std::max(err, std::abs(ym[i] - (1.7 * ya[i] - 0.3 * yb[i])));
        CHECK(err < 1e-10);
    }
}

TEST_CASE("causal application", "[filters]") {
    const double fs = 2000.0;
    const Sos lp = butter_lowpass_design(4, 100.0, fs);
    std::vector<double> step(3000, 1.0);
    const auto y = sosfilt(lp, step);
    CHECK(y.front() == Approx(lp[0].b0 * lp[1].b0).epsilon(1e-12)); // starts from rest
    CHECK(y.back() == Approx(1.0).epsilon(1e-6));                   // settles to DC gain
}
