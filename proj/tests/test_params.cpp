#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "omsq/params.hpp"
#include "omsq/params_io.hpp"

using namespace omsq;
using Catch::Approx;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
    const std::string path = std::string(OMSQ_SOURCE_DIR) + "/build/" + name;
    std::ofstream out(path);
    out << content;
    return path;
}

} // namespace

TEST_CASE("reference point derivations", "[params]") {
    const Params p = reference_params();
    const Derived d = derive(p);

    // confinement prediction from the spring relation, independent of the measured value
    CHECK(derive_confined_frequency(p) / constants::two_pi == Approx(283.8).margin(1.0));
    // measured value drives the rest of the chain
    CHECK(d.omega_m / constants::two_pi == Approx(280.0).margin(1e-9));
    CHECK(d.gamma_m == Approx(d.omega_m / 250.0));
    CHECK(d.x_zpf == Approx(6.235e-17).epsilon(0.01));
    CHECK(d.g_m / constants::two_pi == Approx(-3.2e4).epsilon(0.03));
    CHECK(d.c_q == Approx(13.9605).margin(0.01));
    CHECK(d.C == Approx(2.2e3).epsilon(0.05));
    CHECK(d.C_q == Approx(0.0027).epsilon(0.05));
}

TEST_CASE("confinement frequency properties", "[params]") {
    Params p = reference_params();
    p.omega_m_meas.reset();

    SECTION("no spring at zero detuning") {
        p.delta = 0.0;
        CHECK(derive_confined_frequency(p) == 0.0);
    }
    SECTION("negative detuning rejected") {
        p.delta = -0.1;
        CHECK_THROWS_AS(derive_confined_frequency(p), config_error);
    }
    SECTION("stiffest confinement at delta = 1/2") {
        p.delta = 0.5;
        const double peak = derive_confined_frequency(p);
        for (double d : {0.35, 0.45, 0.55, 0.7}) {
            p.delta = d;
            CHECK(derive_confined_frequency(p) < peak);
        }
    }
    SECTION("coupling sign conventions") {
        const Derived d0 = derive(reference_params());
        Params flipped = reference_params();
        flipped.G = -flipped.G;
        const Derived d1 = derive(flipped);
        CHECK(d1.omega_m == Approx(d0.omega_m));
        CHECK(d1.g_m == Approx(-d0.g_m));
        CHECK(d1.c_q == Approx(-d0.c_q));
        CHECK(d0.c_q * (d0.g_m * reference_params().delta) < 0.0);
    }
    SECTION("zero-point identity over parameter draws") {
        for (double scale : {0.1, 0.5, 2.0, 10.0}) {
            Params q = reference_params();
            q.mass_kg *= scale;
            q.omega_m_meas = constants::two_pi * 280.0 * scale;
            const Derived d = derive(q);
            CHECK(2.0 * q.mass_kg * d.omega_m * d.x_zpf * d.x_zpf ==
                  Approx(constants::hbar).epsilon(1e-12));
        }
    }
}

TEST_CASE("occupancy helpers", "[params]") {
    const Params p = reference_params();
    const Derived d = derive(p);
    // quoted occupancy should be consistent with the quoted temperature
    CHECK(occupancy_from_temperature(p.T_kelvin, d.omega_m) == Approx(p.n_th).epsilon(0.05));
    CHECK(occupancy_from_variance(2.0 * 8.0e5 + 1.0) == Approx(8.0e5));
    CHECK(occupancy_from_variance(1.0) == 0.0);
    CHECK_THROWS_AS(occupancy_from_variance(0.5), config_error);
    CHECK(occupancy_from_temperature(0.0, d.omega_m) == 0.0);
}

TEST_CASE("validation invariants and regime warnings", "[params]") {
    CHECK(validate(reference_params()).empty());

    Params p = reference_params();
    p.eta = 1.5;
    CHECK_THROWS_AS(validate(p), config_error);

    p = reference_params();
    p.mass_kg = -1.0;
    CHECK_THROWS_AS(validate(p), config_error);

    p = reference_params();
    p.n_th = 0.0;
    CHECK_THROWS_AS(validate(p), config_error);

    p = reference_params();
    p.delta = 0.2;
    CHECK(validate(p).size() == 1);

    p = reference_params();
    p.kappa = constants::two_pi * 20e3; // closes the gap to the mechanical frequency
    const auto w = validate(p);
    REQUIRE(w.size() == 1);
    CHECK(w[0].find("100") != std::string::npos);

    p = reference_params();
    p.delta = 0.0;
    p.omega_m_meas.reset();
    CHECK_THROWS_AS(validate(p), config_error);
}

TEST_CASE("photon map calibration", "[params]") {
    const Params p = reference_params();
    const PowerPhotonMap map = calibrated_photon_map(p);
    CHECK(map(p.power_w, p.delta) == Approx(p.n_c).epsilon(1e-12));
    CHECK(map(2.0 * p.power_w, p.delta) == Approx(2.0 * p.n_c).epsilon(1e-12));
    // moving off the operating point re-derives the confinement (no measured override)
    const Params q = at_detuning(p, map, p.delta);
    CHECK_FALSE(q.omega_m_meas.has_value());
    CHECK(effective_omega_m(q) / constants::two_pi == Approx(283.8).margin(1.0));
    const Params r = at_detuning(p, map, 0.04);
    CHECK(r.n_c < q.n_c); // larger detuning drains the photon number
    CHECK(effective_omega_m(r) > effective_omega_m(q));
}

TEST_CASE("parameter file round trip", "[params][io]") {
    const Params ref = reference_params();
    const std::string path = write_temp("params_roundtrip.params",
                                        "# reference configuration\n"
                                        "mass_mg = 7.71\n"
                                        "kappa_hz = 1.64e6\n"
                                        "delta_over_kappa = 0.0292\n"
                                        "n_c = 1.17e10\n"
                                        "G_hz_per_m = -4.72e15\n"
                                        "eta = 0.92\n"
                                        "N_th = 19\n"
                                        "n_th = 8.0e5\n"
                                        "Q = 250\n"
                                        "omega_m_hz = 280\n"
                                        "Gamma_hz = 4.74e-5\n"
                                        "T_kelvin = 0.011\n"
                                        "power_w = 0.030\n");
    const Params p = load_params(path);
    CHECK(p.mass_kg == Approx(ref.mass_kg));
    CHECK(p.kappa == Approx(ref.kappa));
    CHECK(p.delta == Approx(ref.delta));
    CHECK(p.n_c == Approx(ref.n_c));
    CHECK(p.G == Approx(ref.G));
    CHECK(p.eta == Approx(ref.eta));
    CHECK(p.N_th == Approx(ref.N_th));
    CHECK(p.n_th == Approx(ref.n_th));
    CHECK(p.Q == Approx(ref.Q));
    CHECK(p.Gamma_m == Approx(ref.Gamma_m));
    CHECK(p.T_kelvin == Approx(ref.T_kelvin));
    CHECK(p.power_w == Approx(ref.power_w));
    REQUIRE(p.omega_m_meas.has_value());
    CHECK(*p.omega_m_meas == Approx(*ref.omega_m_meas));
}

TEST_CASE("parameter file error handling", "[params][io]") {
    CHECK_THROWS_AS(load_params("/nonexistent/path.params"), io_error);

    const std::string bad_key = write_temp("params_bad_key.params", "mass_mg = 7.71\nbogus = 1\n");
    CHECK_THROWS_AS(load_params(bad_key), config_error);

    const std::string bad_num = write_temp("params_bad_num.params", "mass_mg = heavy\n");
    CHECK_THROWS_AS(load_params(bad_num), config_error);

    const std::string missing = write_temp("params_missing.params", "mass_mg = 7.71\n");
    CHECK_THROWS_AS(load_params(missing), config_error);

    const std::string dup = write_temp("params_dup.params", "mass_mg = 7.71\nmass_mg = 8\n");
    CHECK_THROWS_AS(load_params(dup), config_error);

    const std::string noeq = write_temp("params_noeq.params", "mass_mg 7.71\n");
    CHECK_THROWS_AS(load_params(noeq), config_error);
}

TEST_CASE("sectioned parameter files flatten", "[params][io]") {
    const std::string path = write_temp("params_sections.params",
                                        "[mechanics]\n"
                                        "mass_mg = 7.71\n"
                                        "Q = 250\n"
                                        "n_th = 8.0e5\n"
                                        "Gamma_hz = 4.74e-5\n"
                                        "T_kelvin = 0.011\n"
                                        "omega_m_hz = 280\n"
                                        "[optics]\n"
                                        "kappa_hz = 1.64e6\n"
                                        "delta_over_kappa = 0.0292\n"
                                        "n_c = 1.17e10\n"
                                        "G_hz_per_m = -4.72e15\n"
                                        "eta = 0.92\n"
                                        "N_th = 19\n"
                                        "power_w = 0.030\n");
    const Params p = load_params(path);
    CHECK(p.Q == 250.0);
    CHECK(p.N_th == 19.0);
}

TEST_CASE("parameter report content", "[params][io]") {
    const auto j = params_report(reference_params());
    CHECK(j["config"]["mass_mg"].get<double>() == Approx(7.71));
    CHECK(j["derived"]["omega_m_hz"].get<double>() == Approx(280.0));
    CHECK(j["derived"]["confined_frequency_hz"].get<double>() == Approx(283.8).margin(1.0));
    CHECK(j["derived"]["c_q"].get<double>() == Approx(13.9605).margin(0.01));
    CHECK(j["warnings"].is_array());
}
