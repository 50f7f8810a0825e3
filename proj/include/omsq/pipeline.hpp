#pragma once

// Run orchestration.  A run configuration names a parameter file, a data
// source (a recorded trajectory or a fresh simulation), and an ordered list
// of stages; run() executes the stages into an output directory and keeps a
// manifest of every artifact: per stage, the input hashes, the governing
// parameters, and the output hashes.  Reruns with unchanged inputs are
// no-ops, reruns with the same configuration and seed are bit-identical, and
// the report stage assembles the plot-ready artifacts and a JSON summary of
// the headline numbers beside their reference values.  Stages execute
// sequentially; the manifest has a single writer.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "omsq/dsp.hpp"
#include "omsq/errors.hpp"
#include "omsq/estimate.hpp"
#include "omsq/filters.hpp"
#include "omsq/io.hpp"
#include "omsq/params.hpp"
#include "omsq/params_io.hpp"
#include "omsq/rng.hpp"
#include "omsq/spring.hpp"
#include "omsq/state_space.hpp"
#include "omsq/wiener.hpp"

namespace omsq {

// Reference values for the benchmark operating point; the report prints the
// measured results beside these with their relative deviations.
namespace reference {
inline constexpr double omega_m_hz = 280.0;
inline constexpr double g_m_hz = -3.2e4;
inline constexpr double quantum_cooperativity = 0.0027;
inline constexpr double omega_prime_hz = 706.0;
inline constexpr double gamma_prime_hz = 1080.0;
inline constexpr double filter_a_mag = 1.2e6;
inline constexpr double filter_b_s = 4.1e-4;
inline constexpr double v_qq = 570.0;
inline constexpr double v_qp = 2160.0;
inline constexpr double v_pp = 14000.0;
inline constexpr double squeeze_var = 231.0;
inline constexpr double antisqueeze_var = 1.434e4;
inline constexpr double angle_deg = -8.9;
inline constexpr double purity = 5.5e-4;
inline constexpr double delta_bar = 0.0292;
} // namespace reference

// ---- stages -----------------------------------------------------------------

enum class StageKind { simulate, ingest, ident, synth, estimate, sweep, report };

inline const char* stage_name(StageKind s) {
    switch (s) {
        case StageKind::simulate: return "simulate";
        case StageKind::ingest: return "ingest";
        case StageKind::ident: return "ident";
        case StageKind::synth: return "synth";
        case StageKind::estimate: return "estimate";
        case StageKind::sweep: return "sweep";
        case StageKind::report: return "report";
    }
    return "?";
}

inline StageKind stage_from_name(const std::string& name) {
    for (StageKind s : {StageKind::simulate, StageKind::ingest, StageKind::ident, StageKind::synth,
                        StageKind::estimate, StageKind::sweep, StageKind::report})
        if (name == stage_name(s)) return s;
    throw config_error("unknown stage '" + name + "'");
}

// Position in the dependency chain simulate/ingest -> ident -> synth ->
// estimate -> sweep -> report.  A stage list is a valid topological order
// exactly when its ranks are strictly increasing (this also rules out
// duplicates and a simulate/ingest pair).
inline int stage_rank(StageKind s) {
    switch (s) {
        case StageKind::simulate:
        case StageKind::ingest: return 0;
        case StageKind::ident: return 1;
        case StageKind::synth: return 2;
        case StageKind::estimate: return 3;
        case StageKind::sweep: return 4;
        case StageKind::report: return 5;
    }
    return -1;
}

// ---- run configuration --------------------------------------------------------

struct GridSpec {
    double f0 = 0.0;
    double f1 = 4000.0;
    double df = 1.0;
};

struct SweepSpec {
    double decades = 1.0;
    int points = 9;
};

struct CountSpec {
    double f_lo_hz = 170.0;
    double f_hi_hz = 360.0;
    double lowpass_hz = 8.2;
    int bins = 25;
};

struct RunConfig {
    std::string params_path;
    std::string data_path; // nonempty selects the file source for ingest
    std::vector<StageKind> stages;
    std::string out_dir = ".";
    uint64_t seed = 1;
    std::string format = "csv"; // record container: csv | bin
    double duration_s = 100.0;  // simulated source
    double fs_hz = 20000.0;
    double band_lo_hz = 105.0;
    std::optional<double> band_hi_hz; // unset = closed-loop corner of the filter
    double welch_resolution_hz = 10.0;
    GridSpec synth_grid;
    SweepSpec sweep;
    CountSpec count;
};

// Colon-separated frequency grid "f0:f1:df".
inline GridSpec parse_grid_spec(const std::string& text) {
    GridSpec g;
    const auto a = text.find(':');
    const auto b = text.find(':', a == std::string::npos ? a : a + 1);
    if (a == std::string::npos || b == std::string::npos)
        throw config_error("grid '" + text + "' is not of the form f0:f1:df");
    g.f0 = detail::parse_number("grid", text.substr(0, a));
    g.f1 = detail::parse_number("grid", text.substr(a + 1, b - a - 1));
    g.df = detail::parse_number("grid", text.substr(b + 1));
    return g;
}

// Integration band "lo:hi" where hi may be "auto" (filter closed-loop corner).
inline void parse_band_spec(const std::string& text, RunConfig& cfg) {
    const auto c = text.find(':');
    if (c == std::string::npos)
        throw config_error("band '" + text + "' is not of the form lo:hi or lo:auto");
    cfg.band_lo_hz = detail::parse_number("band", detail::trim(text.substr(0, c)));
    const std::string hi = detail::trim(text.substr(c + 1));
    if (hi == "auto")
        cfg.band_hi_hz.reset();
    else
        cfg.band_hi_hz = detail::parse_number("band", hi);
}

inline void validate(const RunConfig& cfg) {
    if (cfg.params_path.empty()) throw config_error("run configuration names no parameter file");
    if (cfg.stages.empty()) throw config_error("run configuration lists no stages");
    int prev = -1;
    for (StageKind s : cfg.stages) {
        const int r = stage_rank(s);
        if (r <= prev)
            throw config_error(std::string("stage list is not a topological order at '") +
                               stage_name(s) + "'");
        prev = r;
        if (s == StageKind::ingest && cfg.data_path.empty())
            throw config_error("ingest stage requires a data file");
    }
    if (cfg.format != "csv" && cfg.format != "bin")
        throw config_error("format must be csv or bin, not '" + cfg.format + "'");
    if (cfg.duration_s <= 0.0 || cfg.fs_hz <= 0.0)
        throw config_error("simulated source needs positive duration and rate");
    if (cfg.band_lo_hz < 0.0) throw config_error("band lower edge must be non-negative");
    if (cfg.band_hi_hz && *cfg.band_hi_hz <= cfg.band_lo_hz)
        throw config_error("band upper edge must exceed the lower edge");
    if (cfg.welch_resolution_hz <= 0.0) throw config_error("spectral resolution must be positive");
    if (!(cfg.synth_grid.df > 0.0) || !(cfg.synth_grid.f1 > cfg.synth_grid.f0))
        throw config_error("filter grid must have f1 > f0 and df > 0");
    if (cfg.sweep.decades <= 0.0 || cfg.sweep.points < 1)
        throw config_error("sweep needs positive decades and at least one point");
    if (!(cfg.count.f_lo_hz > 0.0) || !(cfg.count.f_hi_hz > cfg.count.f_lo_hz))
        throw config_error("counting band must satisfy 0 < f_lo < f_hi");
    if (cfg.count.lowpass_hz <= 0.0 || cfg.count.bins < 1)
        throw config_error("counting needs a positive lowpass corner and at least one bin");
}

// Run configuration from structured text; same key=value format as the
// parameter files.  Unknown keys are rejected.
inline RunConfig run_config_from_key_values(const std::map<std::string, std::string>& kv_raw) {
    std::map<std::string, std::string> kv;
    for (const auto& [key, val] : kv_raw) {
        const auto dot = key.rfind('.');
        const std::string leaf = dot == std::string::npos ? key : key.substr(dot + 1);
        if (!kv.emplace(leaf, val).second)
            throw config_error("duplicate key '" + leaf + "' across sections");
    }
    RunConfig cfg;
    auto take = [&](const char* key) -> std::optional<std::string> {
        auto it = kv.find(key);
        if (it == kv.end()) return std::nullopt;
        std::string v = it->second;
        kv.erase(it);
        return v;
    };
    auto take_number = [&](const char* key, double& slot) {
        if (auto v = take(key)) slot = detail::parse_number(key, *v);
    };
    if (auto v = take("params"))
        cfg.params_path = *v;
    else
        throw config_error("missing required key 'params'");
    if (auto v = take("data")) cfg.data_path = *v;
    if (auto v = take("stages")) {
        std::string word;
        for (char c : *v + " ") {
            if (c == ' ' || c == '\t' || c == ',') {
                if (!word.empty()) cfg.stages.push_back(stage_from_name(word));
                word.clear();
            } else {
                word.push_back(c);
            }
        }
    } else {
        throw config_error("missing required key 'stages'");
    }
    if (auto v = take("out_dir")) cfg.out_dir = *v;
    if (auto v = take("seed")) {
        const double s = detail::parse_number("seed", *v);
        if (s < 0.0 || s != std::floor(s)) throw config_error("seed must be a non-negative integer");
        cfg.seed = static_cast<uint64_t>(s);
    }
    if (auto v = take("format")) cfg.format = *v;
    take_number("duration_s", cfg.duration_s);
    take_number("fs_hz", cfg.fs_hz);
    if (auto v = take("band")) parse_band_spec(*v, cfg);
    take_number("band_lo_hz", cfg.band_lo_hz);
    if (auto v = take("band_hi_hz")) {
        if (*v == "auto")
            cfg.band_hi_hz.reset();
        else
            cfg.band_hi_hz = detail::parse_number("band_hi_hz", *v);
    }
    take_number("welch_resolution_hz", cfg.welch_resolution_hz);
    if (auto v = take("grid")) cfg.synth_grid = parse_grid_spec(*v);
    take_number("sweep_decades", cfg.sweep.decades);
    if (auto v = take("sweep_points")) {
        const double n = detail::parse_number("sweep_points", *v);
        if (n < 1.0 || n != std::floor(n)) throw config_error("sweep_points must be a positive integer");
        cfg.sweep.points = static_cast<int>(n);
    }
    take_number("count_f_lo_hz", cfg.count.f_lo_hz);
    take_number("count_f_hi_hz", cfg.count.f_hi_hz);
    take_number("count_lowpass_hz", cfg.count.lowpass_hz);
    if (auto v = take("count_bins")) {
        const double n = detail::parse_number("count_bins", *v);
        if (n < 1.0 || n != std::floor(n)) throw config_error("count_bins must be a positive integer");
        cfg.count.bins = static_cast<int>(n);
    }
    if (!kv.empty())
        throw config_error("unknown key '" + kv.begin()->first + "' in run configuration");
    validate(cfg);
    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    return run_config_from_key_values(read_key_values(path));
}

// ---- content hashing ----------------------------------------------------------

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hash_hex(uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, h >>= 4) s[static_cast<size_t>(i)] = digits[h & 0xf];
    return s;
}

inline std::string hash_bytes(const std::string& bytes) {
    return hash_hex(fnv1a64(bytes.data(), bytes.size()));
}

inline std::string hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open '" + path + "' for hashing");
    uint64_t h = 0xcbf29ce484222325ull;
    std::vector<char> buf(1 << 20);
    while (in.read(buf.data(), static_cast<std::streamsize>(buf.size())) || in.gcount() > 0)
        h = fnv1a64(buf.data(), static_cast<size_t>(in.gcount()), h);
    return hash_hex(h);
}

// ---- manifest -------------------------------------------------------------------

struct StageEntry {
    std::map<std::string, std::string> inputs;  // label -> content hash
    nlohmann::json parameters;                  // knobs the stage ran under
    std::map<std::string, std::string> outputs; // out_dir-relative file -> hash
};

struct RunManifest {
    uint64_t seed = 0;
    std::string params_path;
    std::map<std::string, StageEntry> stages;

    bool has(StageKind s) const { return stages.count(stage_name(s)) != 0; }

    // Present stages in dependency order.
    std::vector<std::string> order() const {
        std::vector<std::string> names;
        for (StageKind s : {StageKind::simulate, StageKind::ingest, StageKind::ident,
                            StageKind::synth, StageKind::estimate, StageKind::sweep,
                            StageKind::report})
            if (has(s)) names.emplace_back(stage_name(s));
        return names;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["seed"] = seed;
        j["params"] = params_path;
        j["order"] = order();
        nlohmann::json st = nlohmann::json::object();
        for (const auto& [name, e] : stages) {
            st[name] = {{"inputs", e.inputs}, {"parameters", e.parameters}, {"outputs", e.outputs}};
        }
        j["stages"] = st;
        return j;
    }

    static RunManifest from_json(const nlohmann::json& j) {
        RunManifest m;
        m.seed = j.at("seed").get<uint64_t>();
        m.params_path = j.at("params").get<std::string>();
        for (const auto& [name, e] : j.at("stages").items()) {
            StageEntry entry;
            entry.inputs = e.at("inputs").get<std::map<std::string, std::string>>();
            entry.parameters = e.at("parameters");
            entry.outputs = e.at("outputs").get<std::map<std::string, std::string>>();
            m.stages.emplace(name, std::move(entry));
        }
        return m;
    }
};

inline std::string manifest_path(const std::string& out_dir) {
    return (std::filesystem::path(out_dir) / "manifest.json").string();
}

inline void save_manifest(const RunManifest& m, const std::string& out_dir) {
    const std::string path = manifest_path(out_dir);
    std::ofstream out(path);
    if (!out) throw io_error("cannot write '" + path + "'");
    out << m.to_json().dump(2) << '\n';
    if (!out) throw io_error("write failed for '" + path + "'");
}

inline RunManifest load_manifest(const std::string& out_dir) {
    const std::string path = manifest_path(out_dir);
    std::ifstream in(path);
    if (!in) throw io_error("cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
        return RunManifest::from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw io_error("manifest '" + path + "' is malformed: " + e.what());
    }
}

// ---- stage execution ------------------------------------------------------------

namespace detail {

inline std::string join_path(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
    if (!out) throw io_error("write failed for '" + path + "'");
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open '" + path + "'");
    try {
        nlohmann::json j;
        in >> j;
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw io_error("'" + path + "' is malformed JSON: " + e.what());
    }
}

// Name of the record artifact produced by the simulate or ingest stage.
inline std::string record_artifact(const RunManifest& m) {
    for (const char* stage : {"simulate", "ingest"}) {
        auto it = m.stages.find(stage);
        if (it == m.stages.end()) continue;
        if (it->second.outputs.size() != 1)
            throw config_error(std::string("stage '") + stage +
                               "' does not record exactly one artifact");
        return it->second.outputs.begin()->first;
    }
    throw config_error("no record in the manifest; run simulate or ingest first");
}

// Measured value beside its reference, with the relative deviation.
inline nlohmann::json versus(double value, double ref) {
    return {{"value", value},
            {"reference", ref},
            {"relative_deviation", (value - ref) / std::abs(ref)}};
}

inline nlohmann::json series_stats(const std::vector<double>& x) {
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x.size());
    return {{"mean", mean}, {"variance", var}};
}

} // namespace detail

// Plot-ready report assembled from a manifest: trajectory statistics, the
// derived parameters beside their reference values, the conditional state,
// the purity-surface argmax, the counted-frequency summary, and a map from
// each figure panel to its emitted CSV.  Consumed artifacts must carry
// matching hashes in the manifest.
inline nlohmann::json build_report(const RunConfig& cfg, const RunManifest& man) {
    nlohmann::json rep;
    nlohmann::json artifacts = nlohmann::json::object();
    auto consume = [&](const StageEntry& e, const std::string& name) -> std::string {
        auto it = e.outputs.find(name);
        if (it == e.outputs.end())
            throw config_error("'" + name + "' is not hash-recorded in the manifest");
        const std::string path = detail::join_path(cfg.out_dir, name);
        if (hash_file(path) != it->second)
            throw config_error("'" + name + "' does not match its manifest hash");
        artifacts[name] = it->second;
        return path;
    };

    const std::string record_name = detail::record_artifact(man);
    const StageEntry& record_entry =
        man.stages.count("simulate") ? man.stages.at("simulate") : man.stages.at("ingest");
    const Trajectory traj = read_trajectory(consume(record_entry, record_name));

    rep["trajectory"] = {{"samples", traj.size()},
                         {"fs_hz", traj.fs},
                         {"duration_s", traj.duration()},
                         {"q", detail::series_stats(traj.q)},
                         {"p", detail::series_stats(traj.p)},
                         {"X", detail::series_stats(traj.X)}};

    const Params p = load_params(cfg.params_path);
    const Derived d = derive(p);
    const AnalyticFilter flt = analytic_filter(p, d);
    rep["parameters"] = {
        {"omega_m_hz", detail::versus(derive_confined_frequency(p) / constants::two_pi,
                                      reference::omega_m_hz)},
        {"g_m_hz", detail::versus(d.g_m / constants::two_pi, reference::g_m_hz)},
        {"quantum_cooperativity", detail::versus(d.C_q, reference::quantum_cooperativity)},
        {"omega_prime_hz", detail::versus(flt.omega_p / constants::two_pi,
                                          reference::omega_prime_hz)},
        {"gamma_prime_hz", detail::versus(flt.gamma_p / constants::two_pi,
                                          reference::gamma_prime_hz)},
        {"filter_A_mag", detail::versus(std::abs(flt.A), reference::filter_a_mag)},
        {"filter_B_s", detail::versus(flt.B, reference::filter_b_s)},
        {"delta", detail::versus(p.delta, reference::delta_bar)},
    };

    nlohmann::json panels = nlohmann::json::object();

    if (man.has(StageKind::estimate)) {
        const StageEntry& e = man.stages.at("estimate");
        const nlohmann::json state = detail::read_json_file(consume(e, "state.json"));
        for (const char* f : {"spec_meas.csv", "spec_qq.csv", "spec_pp.csv", "cospec.csv",
                              "ellipse.csv"})
            consume(e, f);
        const auto& V = state.at("V");
        rep["state"] = {
            {"band", state.at("band")},
            {"V", V},
            {"V_qq", detail::versus(V.at(0).at(0).get<double>(), reference::v_qq)},
            {"V_qp", detail::versus(V.at(0).at(1).get<double>(), reference::v_qp)},
            {"V_pp", detail::versus(V.at(1).at(1).get<double>(), reference::v_pp)},
            {"squeeze_var", detail::versus(state.at("squeeze_var").get<double>(),
                                           reference::squeeze_var)},
            {"antisqueeze_var", detail::versus(state.at("antisqueeze_var").get<double>(),
                                               reference::antisqueeze_var)},
            {"angle_deg", detail::versus(state.at("angle_deg").get<double>(),
                                         reference::angle_deg)},
            {"purity", detail::versus(state.at("purity").get<double>(), reference::purity)},
            {"below_vacuum", state.at("below_vacuum")},
        };
        panels["spectra"] = {"spec_meas.csv", "spec_qq.csv", "spec_pp.csv"};
        panels["cospectrum"] = "cospec.csv";
        panels["ellipse"] = "ellipse.csv";
    }

    if (man.has(StageKind::sweep)) {
        const StageEntry& e = man.stages.at("sweep");
        const nlohmann::json sw = detail::read_json_file(consume(e, "sweep.json"));
        consume(e, "sweep.csv");
        rep["sweep"] = sw;
        panels["purity_surface"] = "sweep.csv";
    }

    if (man.has(StageKind::ident)) {
        const StageEntry& e = man.stages.at("ident");
        const nlohmann::json id = detail::read_json_file(consume(e, "ident.json"));
        consume(e, "counts.csv");
        rep["counts"] = {{"mean_f_hz", id.at("mean_f_hz")},
                         {"delta_bar", detail::versus(id.at("delta_bar").get<double>(),
                                                      reference::delta_bar)},
                         {"candidates", id.at("candidates")}};
        panels["counted_frequency"] = "counts.csv";
    }

    if (man.has(StageKind::synth)) {
        consume(man.stages.at("synth"), "filter.csv");
    }

    rep["panels"] = panels;
    rep["artifacts"] = artifacts;
    return rep;
}

namespace detail {

struct StageContext {
    const RunConfig& cfg;
    RunManifest& man;
    std::string params_hash;
};

// One executable stage: precomputed input hashes and parameters decide
// whether the recorded entry is still current; exec writes the outputs.
// exec runs after planning, so it captures nothing from the planning scope
// by reference — only the configuration and manifest owned by the caller.
struct StagePlan {
    std::map<std::string, std::string> inputs;
    nlohmann::json parameters;
    std::vector<std::string> outputs;
    std::function<void()> exec;
};

inline StagePlan plan_stage(StageKind kind, StageContext& ctx) {
    const RunConfig& cfg = ctx.cfg;
    const std::string record_name =
        std::string("record.") + (cfg.format == "bin" ? "bin" : "csv");

    StagePlan plan;
    plan.inputs["params"] = ctx.params_hash;

    // Resolved at plan time: the record must already be in the manifest.
    auto record_input = [&]() -> std::string {
        const std::string path = join_path(cfg.out_dir, record_artifact(ctx.man));
        plan.inputs["record"] = hash_file(path);
        return path;
    };

    switch (kind) {
        case StageKind::simulate: {
            const uint64_t stage_seed = split_seed(cfg.seed, 0);
            plan.parameters = {{"duration_s", cfg.duration_s},
                               {"fs_hz", cfg.fs_hz},
                               {"seed", stage_seed},
                               {"format", cfg.format}};
            plan.outputs = {record_name};
            plan.exec = [&cfg = ctx.cfg, stage_seed,
                         path = join_path(cfg.out_dir, record_name)]() {
                const Params p = load_params(cfg.params_path);
                const Trajectory traj =
                    simulate(build_model(p), cfg.duration_s, cfg.fs_hz, stage_seed);
                if (cfg.format == "bin")
                    write_trajectory_binary(path, traj);
                else
                    write_trajectory_csv(path, traj);
            };
            break;
        }
        case StageKind::ingest: {
            plan.inputs["data"] = hash_file(cfg.data_path);
            plan.parameters = {{"format", cfg.format}};
            plan.outputs = {record_name};
            plan.exec = [&cfg = ctx.cfg, path = join_path(cfg.out_dir, record_name)]() {
                const Trajectory traj = read_trajectory(cfg.data_path);
                if (cfg.format == "bin")
                    write_trajectory_binary(path, traj);
                else
                    write_trajectory_csv(path, traj);
            };
            break;
        }
        case StageKind::ident: {
            const std::string record_path = record_input();
            plan.parameters = {{"count_f_lo_hz", cfg.count.f_lo_hz},
                               {"count_f_hi_hz", cfg.count.f_hi_hz},
                               {"count_lowpass_hz", cfg.count.lowpass_hz},
                               {"count_bins", cfg.count.bins}};
            plan.outputs = {"counts.csv", "ident.json"};
            plan.exec = [&cfg = ctx.cfg, record_path]() {
                const Params p = load_params(cfg.params_path);
                const Derived d = derive(p);
                const Trajectory traj = read_trajectory(record_path);
                const std::vector<double> banded =
                    bandpass(traj.X, cfg.count.f_lo_hz, cfg.count.f_hi_hz, traj.fs);
                const std::vector<double> counted = count_zero_crossings(banded, traj.fs);
                const std::vector<double> track =
                    lowpass(counted, cfg.count.lowpass_hz, traj.fs);
                const size_t bins = static_cast<size_t>(cfg.count.bins);
                const std::vector<double> binned = bin_average(track, bins);
                std::vector<double> t_bin(binned.size());
                const double bin_dt =
                    static_cast<double>(traj.size()) / static_cast<double>(bins) / traj.fs;
                for (size_t i = 0; i < t_bin.size(); ++i)
                    t_bin[i] = (static_cast<double>(i) + 0.5) * bin_dt;
                write_csv(join_path(cfg.out_dir, "counts.csv"), {"t", "f_hz"},
                          {&t_bin, &binned});

                // A record carries no time-aligned displacement drive, so the
                // tercile shape fit has nothing to bin on; the detuning comes
                // from inverting the absolute spring curve at the counted mean.
                double mean_f = 0.0;
                for (double f : track) mean_f += f;
                mean_f /= static_cast<double>(track.size());
                const double peak = detail::curve_shape_peak_delta;
                if (mean_f > detail::map_curve_hz(p, peak))
                    throw numeric_error(
                        "counted frequency exceeds the spring-curve maximum for these parameters");
                nlohmann::json cands = nlohmann::json::array();
                double delta_bar = 0.0, residual = std::numeric_limits<double>::infinity();
                for (const auto& [lo, hi] : {std::pair{1e-12, peak}, std::pair{peak, 1e6}}) {
                    double dd = 0.0;
                    if (!detail::invert_curve_branch(p, mean_f, lo, hi, &dd)) continue;
                    const double r = std::abs(detail::map_curve_hz(p, dd) - mean_f);
                    cands.push_back({{"delta_bar", dd}, {"residual_hz", r}});
                    if (r < residual) {
                        residual = r;
                        delta_bar = dd;
                    }
                }
                if (cands.empty())
                    throw numeric_error("spring-curve inversion found no detuning branch");
                write_json_file(join_path(cfg.out_dir, "ident.json"),
                                {{"mean_f_hz", mean_f},
                                 {"delta_bar", delta_bar},
                                 {"residual_hz", residual},
                                 {"candidates", cands}});
            };
            break;
        }
        case StageKind::synth: {
            plan.parameters = {{"f0_hz", cfg.synth_grid.f0},
                               {"f1_hz", cfg.synth_grid.f1},
                               {"df_hz", cfg.synth_grid.df}};
            plan.outputs = {"filter.csv"};
            plan.exec = [&cfg = ctx.cfg]() {
                const Params p = load_params(cfg.params_path);
                const Derived d = derive(p);
                const AnalyticFilter flt = calibrated_filter(p, d);
                const FilterResponse r = sample_analytic(
                    flt, frequency_grid(cfg.synth_grid.f0, cfg.synth_grid.f1, cfg.synth_grid.df));
                write_filter_csv(join_path(cfg.out_dir, "filter.csv"), r);
            };
            break;
        }
        case StageKind::estimate: {
            const std::string record_path = record_input();
            plan.parameters = {{"band_lo_hz", cfg.band_lo_hz},
                               {"band_hi_hz",
                                cfg.band_hi_hz ? nlohmann::json(*cfg.band_hi_hz)
                                               : nlohmann::json("auto")},
                               {"welch_resolution_hz", cfg.welch_resolution_hz}};
            plan.outputs = {"state.json", "spec_meas.csv", "spec_qq.csv", "spec_pp.csv",
                            "cospec.csv", "ellipse.csv"};
            plan.exec = [&cfg = ctx.cfg, record_path]() {
                const Params p = load_params(cfg.params_path);
                const Derived d = derive(p);
                const Trajectory traj = read_trajectory(record_path);
                const AnalyticFilter flt = calibrated_filter(p, d);
                const ResidualSeries resid = condition(traj.X, traj.fs, flt, d);
                const Band band{cfg.band_lo_hz,
                                cfg.band_hi_hz ? *cfg.band_hi_hz
                                               : default_band(flt, cfg.band_lo_hz).f_hi_hz};

                std::vector<double> q_meas(traj.size());
                for (size_t i = 0; i < q_meas.size(); ++i) q_meas[i] = traj.X[i] / d.c_q;
                const Spectrum s_meas = psd_welch(q_meas, traj.fs, cfg.welch_resolution_hz);
                const Spectrum s_qq = psd_welch(resid.q, traj.fs, cfg.welch_resolution_hz);
                const Spectrum s_pp = psd_welch(resid.p, traj.fs, cfg.welch_resolution_hz);
                const Spectrum s_qp =
                    cross_spectrum(resid.q, resid.p, traj.fs, cfg.welch_resolution_hz);
                write_spectrum_csv(join_path(cfg.out_dir, "spec_meas.csv"), s_meas.f, s_meas.v);
                write_spectrum_csv(join_path(cfg.out_dir, "spec_qq.csv"), s_qq.f, s_qq.v);
                write_spectrum_csv(join_path(cfg.out_dir, "spec_pp.csv"), s_pp.f, s_pp.v);
                write_spectrum_csv(join_path(cfg.out_dir, "cospec.csv"), s_qp.f, s_qp.v);

                const ConditionalState state = covariance_from_spectra(s_qq, s_pp, s_qp, band);
                const EllipseReport ell = ellipse_report(state);
                std::vector<double> bq(ell.boundary.size()), bp(ell.boundary.size());
                for (size_t i = 0; i < ell.boundary.size(); ++i) {
                    bq[i] = ell.boundary[i][0];
                    bp[i] = ell.boundary[i][1];
                }
                write_csv(join_path(cfg.out_dir, "ellipse.csv"), {"q", "p"}, {&bq, &bp});

                write_json_file(
                    join_path(cfg.out_dir, "state.json"),
                    {{"band", {{"f_lo_hz", band.f_lo_hz}, {"f_hi_hz", band.f_hi_hz}}},
                     {"V",
                      {{state.V(0, 0), state.V(0, 1)}, {state.V(1, 0), state.V(1, 1)}}},
                     {"squeeze_var", state.squeeze_var},
                     {"antisqueeze_var", state.antisqueeze_var},
                     {"squeeze_amp", ell.squeeze_amp},
                     {"antisqueeze_amp", ell.antisqueeze_amp},
                     {"angle_deg", state.angle_deg},
                     {"purity", state.purity},
                     {"below_vacuum", state.below_vacuum},
                     {"filter",
                      {{"omega_p_hz", flt.omega_p / constants::two_pi},
                       {"gamma_p_hz", flt.gamma_p / constants::two_pi},
                       {"A", flt.A},
                       {"B_s", flt.B}}}});
            };
            break;
        }
        case StageKind::sweep: {
            const std::string record_path = record_input();
            plan.parameters = {{"decades", cfg.sweep.decades},
                               {"points", cfg.sweep.points},
                               {"band_lo_hz", cfg.band_lo_hz},
                               {"welch_resolution_hz", cfg.welch_resolution_hz}};
            plan.outputs = {"sweep.csv", "sweep.json"};
            plan.exec = [&cfg = ctx.cfg, record_path]() {
                const Params p = load_params(cfg.params_path);
                const Derived d = derive(p);
                const Trajectory traj = read_trajectory(record_path);
                const AnchoredFamily family = anchor_family(p, d);
                const size_t points = static_cast<size_t>(cfg.sweep.points);
                SweepOptions opt;
                opt.f_lo_hz = cfg.band_lo_hz;
                opt.welch_resolution_hz = cfg.welch_resolution_hz;
                const PuritySurface surf =
                    purity_sweep(traj.X, traj.fs, family,
                                 log_grid(p.n_th, cfg.sweep.decades, points),
                                 log_grid(p.N_th, cfg.sweep.decades, points), opt);

                std::vector<double> cn(surf.points.size()), cN(surf.points.size()),
                    cp(surf.points.size());
                size_t ok = 0;
                for (size_t i = 0; i < surf.points.size(); ++i) {
                    cn[i] = surf.points[i].n_th;
                    cN[i] = surf.points[i].N_th;
                    cp[i] = surf.points[i].ok ? surf.points[i].purity
                                              : std::numeric_limits<double>::quiet_NaN();
                    ok += surf.points[i].ok ? 1u : 0u;
                }
                write_csv(join_path(cfg.out_dir, "sweep.csv"), {"n_th", "N_th", "purity"},
                          {&cn, &cN, &cp});
                const SweepPoint& best = surf.best();
                write_json_file(join_path(cfg.out_dir, "sweep.json"),
                                {{"argmax",
                                  {{"n_th", best.n_th},
                                   {"N_th", best.N_th},
                                   {"purity", best.purity}}},
                                 {"n_th_grid", surf.n_th_grid},
                                 {"N_th_grid", surf.N_th_grid},
                                 {"points_ok", ok},
                                 {"points_total", surf.points.size()}});
            };
            break;
        }
        case StageKind::report: {
            // Current hashes of the consumed artifacts, so a tampered file
            // forces re-execution and the mismatch check inside build_report.
            for (const auto& [name, entry] : ctx.man.stages) {
                if (name == "report") continue;
                for (const auto& [file, hash] : entry.outputs)
                    plan.inputs[file] = hash_file(join_path(cfg.out_dir, file));
            }
            plan.parameters = nlohmann::json::object();
            plan.outputs = {"report.json"};
            plan.exec = [&cfg = ctx.cfg, &man = ctx.man]() {
                write_json_file(join_path(cfg.out_dir, "report.json"), build_report(cfg, man));
            };
            break;
        }
    }
    return plan;
}

} // namespace detail

// Execute the configured stages in order.  Each stage's entry records the
// input hashes, the parameters, and the output hashes; a stage whose entry
// is current (same inputs, same parameters, outputs on disk with matching
// hashes) is skipped.  Failures abort the run with the stage name after the
// manifest of the completed stages is saved.
inline RunManifest run(const RunConfig& cfg) {
    validate(cfg);
    std::error_code ec;
    std::filesystem::create_directories(cfg.out_dir, ec);
    if (ec) throw io_error("cannot create output directory '" + cfg.out_dir + "'");

    RunManifest man;
    if (std::filesystem::exists(manifest_path(cfg.out_dir))) man = load_manifest(cfg.out_dir);
    man.seed = cfg.seed;
    man.params_path = cfg.params_path;

    detail::StageContext ctx{cfg, man, hash_file(cfg.params_path)};
    load_params(cfg.params_path); // surface parameter-file problems before any stage

    for (StageKind kind : cfg.stages) {
        const std::string name = stage_name(kind);
        auto fail = [&](const std::string& what) {
            man.stages.erase(name);
            save_manifest(man, cfg.out_dir);
            return "stage '" + name + "': " + what;
        };
        try {
            detail::StagePlan plan = detail::plan_stage(kind, ctx);

            auto it = man.stages.find(name);
            bool current = it != man.stages.end() && it->second.inputs == plan.inputs &&
                           it->second.parameters == plan.parameters;
            if (current) {
                for (const auto& [file, hash] : it->second.outputs) {
                    const std::string path = detail::join_path(cfg.out_dir, file);
                    if (!std::filesystem::exists(path) || hash_file(path) != hash) {
                        current = false;
                        break;
                    }
                }
            }
            if (current) continue;

            plan.exec();

            StageEntry entry;
            entry.inputs = std::move(plan.inputs);
            entry.parameters = std::move(plan.parameters);
            for (const std::string& file : plan.outputs)
                entry.outputs[file] = hash_file(detail::join_path(cfg.out_dir, file));
            if (kind == StageKind::simulate) man.stages.erase("ingest");
            if (kind == StageKind::ingest) man.stages.erase("simulate");
            man.stages[name] = std::move(entry);
            save_manifest(man, cfg.out_dir);
        } catch (const config_error& e) {
            throw config_error(fail(e.what()));
        } catch (const numeric_error& e) {
            throw numeric_error(fail(e.what()));
        } catch (const io_error& e) {
            throw io_error(fail(e.what()));
        } catch (const std::exception& e) {
            throw numeric_error(fail(e.what()));
        }
    }
    save_manifest(man, cfg.out_dir);
    return man;
}

} // namespace omsq
