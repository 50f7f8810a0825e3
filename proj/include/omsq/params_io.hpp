#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <json.hpp>

#include "omsq/errors.hpp"
#include "omsq/params.hpp"

namespace omsq {

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline double parse_number(const std::string& key, const std::string& text) {
    try {
        size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size())
            throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw config_error("key '" + key + "' has non-numeric value '" + text + "'");
    }
}

} // namespace detail

// Flat key=value map from structured text: '#' comments, blank lines, optional
// [section] headers (keys inside a section are read as section.key).
inline std::map<std::string, std::string> read_key_values(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw io_error("cannot open parameter file '" + path + "'");
    std::map<std::string, std::string> kv;
    std::string line, section;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[' && line.back() == ']') {
            section = detail::trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error("parameter file '" + path + "' line " + std::to_string(lineno) +
                               ": expected key = value");
        std::string key = detail::trim(line.substr(0, eq));
        std::string val = detail::trim(line.substr(eq + 1));
        if (key.empty() || val.empty())
            throw config_error("parameter file '" + path + "' line " + std::to_string(lineno) +
                               ": empty key or value");
        if (!section.empty()) key = section + "." + key;
        if (kv.count(key))
            throw config_error("duplicate key '" + key + "' in '" + path + "'");
        kv[key] = val;
    }
    return kv;
}

// Accepted keys.  Frequencies are in Hz in the file and stored as rad/s.
// Section prefixes are organisational only: [optics] kappa_hz and a bare
// kappa_hz are the same key.
inline Params params_from_key_values(const std::map<std::string, std::string>& kv_raw) {
    std::map<std::string, std::string> kv;
    for (const auto& [key, val] : kv_raw) {
        const auto dot = key.rfind('.');
        const std::string leaf = dot == std::string::npos ? key : key.substr(dot + 1);
        if (!kv.emplace(leaf, val).second)
            throw config_error("duplicate key '" + leaf + "' across sections");
    }
    Params p;
    auto take = [&](const char* key, bool required) -> std::optional<double> {
        auto it = kv.find(key);
        if (it == kv.end()) {
            if (required) throw config_error(std::string("missing required key '") + key + "'");
            return std::nullopt;
        }
        const double v = detail::parse_number(key, it->second);
        kv.erase(it);
        return v;
    };
    p.mass_kg = *take("mass_mg", true) * 1e-6;
    p.kappa = *take("kappa_hz", true) * constants::two_pi;
    p.delta = *take("delta_over_kappa", true);
    p.n_c = *take("n_c", true);
    p.G = *take("G_hz_per_m", true) * constants::two_pi;
    p.eta = *take("eta", true);
    p.N_th = *take("N_th", true);
    p.n_th = *take("n_th", true);
    p.Q = *take("Q", true);
    p.Gamma_m = *take("Gamma_hz", true) * constants::two_pi;
    p.T_kelvin = *take("T_kelvin", true);
    p.power_w = *take("power_w", true);
    if (auto f = take("omega_m_hz", false))
        p.omega_m_meas = *f * constants::two_pi;
    if (!kv.empty())
        throw config_error("unknown key '" + kv.begin()->first + "' in parameter file");
    return p;
}

inline Params load_params(const std::string& path) {
    return params_from_key_values(read_key_values(path));
}

// Full parameter view: configured values (file units), derived quantities, warnings.
inline nlohmann::json params_report(const Params& p) {
    const Derived d = derive(p);
    const auto warnings = validate(p);
    nlohmann::json j;
    j["config"] = {
        {"mass_mg", p.mass_kg * 1e6},
        {"kappa_hz", p.kappa / constants::two_pi},
        {"delta_over_kappa", p.delta},
        {"n_c", p.n_c},
        {"G_hz_per_m", p.G / constants::two_pi},
        {"eta", p.eta},
        {"N_th", p.N_th},
        {"n_th", p.n_th},
        {"Q", p.Q},
        {"Gamma_hz", p.Gamma_m / constants::two_pi},
        {"T_kelvin", p.T_kelvin},
        {"power_w", p.power_w},
    };
    if (p.omega_m_meas)
        j["config"]["omega_m_hz"] = *p.omega_m_meas / constants::two_pi;
    j["derived"] = {
        {"confined_frequency_hz", derive_confined_frequency(p) / constants::two_pi},
        {"omega_m_hz", d.omega_m / constants::two_pi},
        {"gamma_m_hz", d.gamma_m / constants::two_pi},
        {"x_zpf_m", d.x_zpf},
        {"g0_hz", d.g0 / constants::two_pi},
        {"g_m_hz", d.g_m / constants::two_pi},
        {"c_q", d.c_q},
        {"cooperativity", d.C},
        {"quantum_cooperativity", d.C_q},
        {"n_th_from_temperature", occupancy_from_temperature(p.T_kelvin, d.omega_m)},
    };
    j["warnings"] = warnings;
    return j;
}

} // namespace omsq
