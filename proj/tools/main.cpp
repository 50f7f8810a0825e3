// Command-line interface.  Subcommands expose the library operations with
// file-in/file-out semantics; a bare invocation with --config executes the
// configured stage list through the manifest-keeping pipeline.  Exit codes:
// 0 success, 2 configuration error, 3 numerical failure, 4 I/O failure.

#include <complex>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "omsq/pipeline.hpp"

namespace {

using namespace omsq;

struct GlobalOpts {
    std::string config;
    std::string out_dir;
    std::string format;
    std::optional<uint64_t> seed;
};

// Configuration for pipeline-backed subcommands: the --config file when
// given, defaults otherwise, with command-line overrides applied on top.
RunConfig base_config(const GlobalOpts& g) {
    RunConfig cfg;
    if (!g.config.empty()) cfg = load_run_config(g.config);
    if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;
    if (g.seed) cfg.seed = *g.seed;
    if (!g.format.empty()) cfg.format = g.format;
    return cfg;
}

Params resolve_params(const GlobalOpts& g, const std::string& params_flag, const char* who) {
    if (!params_flag.empty()) return load_params(params_flag);
    if (!g.config.empty()) return load_params(load_run_config(g.config).params_path);
    throw config_error(std::string(who) + " requires --params or --config");
}

const std::vector<double>& trajectory_column(const Trajectory& tr, const std::string& name) {
    if (name == "q") return tr.q;
    if (name == "p") return tr.p;
    if (name == "X") return tr.X;
    throw config_error("unknown trajectory column '" + name + "' (expected q, p, or X)");
}

// Input to a signal kernel: a column of a trajectory container, or any CSV
// with a uniform t column (e.g. the output of another kernel).
struct SeriesInput {
    std::vector<double> v;
    double fs = 0.0;
};

SeriesInput load_series(const std::string& path, const std::string& column) {
    {
        std::ifstream probe(path, std::ios::binary);
        if (!probe) throw io_error("cannot open '" + path + "'");
        char magic[8] = {};
        probe.read(magic, 8);
        if (probe && std::memcmp(magic, "OMSQTRJ", 8) == 0) {
            const Trajectory tr = read_trajectory_binary(path);
            return {trajectory_column(tr, column), tr.fs};
        }
    }
    const CsvTable t = read_csv(path);
    if (!t.has_column(column))
        throw config_error("'" + path + "' has no column '" + column + "'");
    const auto& time = t.column("t");
    if (time.size() < 2) throw io_error("'" + path + "' needs at least 2 samples");
    const double dt = time[1] - time[0];
    if (dt <= 0.0) throw io_error("'" + path + "': time column is not increasing");
    return {t.column(column), 1.0 / dt};
}

void write_series_csv(const std::string& path, const std::vector<double>& v, double fs) {
    std::vector<double> t(v.size());
    for (size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i) / fs;
    write_csv(path, {"t", "value"}, {&t, &v});
}

void print_run_summary(const RunManifest& man, const std::string& out_dir) {
    std::printf("run complete in %s:", out_dir.c_str());
    for (const auto& name : man.order()) std::printf(" %s", name.c_str());
    std::printf("\n");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Conditional mechanical squeezing toolkit: simulation, filter synthesis,\n"
                 "conditional-state estimation, and reporting for a detuned optical cavity."};
    app.fallthrough();
    app.require_subcommand(0, 1);

    GlobalOpts g;
    app.add_option("--config", g.config, "run configuration file");
    app.add_option("--out-dir", g.out_dir, "output directory (overrides the configuration)");
    app.add_option("--seed", g.seed, "root seed (overrides the configuration)");
    app.add_option("--format", g.format, "record container: csv or bin")
        ->check(CLI::IsMember({"csv", "bin"}));

    // ---- params show --------------------------------------------------------
    auto* params_cmd = app.add_subcommand("params", "parameter handling");
    params_cmd->require_subcommand(1);
    auto* params_show = params_cmd->add_subcommand("show", "print configured and derived values");
    std::string ps_params;
    params_show->add_option("--params", ps_params, "parameter file");
    params_show->callback([&] {
        const Params p = resolve_params(g, ps_params, "params show");
        std::printf("%s\n", params_report(p).dump(2).c_str());
    });

    // ---- simulate -----------------------------------------------------------
    auto* sim_cmd = app.add_subcommand("simulate", "generate a synthetic record");
    std::string sim_params;
    std::optional<double> sim_duration, sim_fs;
    sim_cmd->add_option("--params", sim_params, "parameter file");
    sim_cmd->add_option("--duration", sim_duration, "record length, seconds");
    sim_cmd->add_option("--fs", sim_fs, "sampling rate, Hz");
    sim_cmd->callback([&] {
        RunConfig cfg = base_config(g);
        if (!sim_params.empty()) cfg.params_path = sim_params;
        if (sim_duration) cfg.duration_s = *sim_duration;
        if (sim_fs) cfg.fs_hz = *sim_fs;
        cfg.stages = {StageKind::simulate};
        print_run_summary(run(cfg), cfg.out_dir);
    });

    // ---- dsp kernels ----------------------------------------------------------
    auto* dsp_cmd = app.add_subcommand("dsp", "file-in/file-out signal kernels");
    dsp_cmd->require_subcommand(1);
    struct DspOpts {
        std::string data, data2, out;
        std::string column = "X", column2 = "X";
        double resolution = 10.0;
        double f_lo = 170.0, f_hi = 360.0, fc = 8.2;
        double f0 = 50.0, width = 4.0;
        int harmonics = 7, bins = 25;
    } d;
    auto add_data_out = [&](CLI::App* k, bool needs_second = false) {
        k->add_option("--data", d.data, "trajectory container or series CSV")->required();
        k->add_option("--column", d.column, "input column (q, p, X, or a CSV header)");
        k->add_option("--out", d.out, "output CSV")->required();
        if (needs_second) {
            k->add_option("--data2", d.data2, "second input file (defaults to --data)");
            k->add_option("--column2", d.column2, "column of the second series");
        }
        return k;
    };
    auto load_pair = [&]() {
        SeriesInput a = load_series(d.data, d.column);
        SeriesInput b = load_series(d.data2.empty() ? d.data : d.data2, d.column2);
        if (b.fs != a.fs || b.v.size() != a.v.size())
            throw config_error("the two inputs differ in rate or length");
        return std::pair{std::move(a), std::move(b)};
    };

    auto* k_psd = add_data_out(dsp_cmd->add_subcommand("psd", "Welch power spectral density"));
    k_psd->add_option("--resolution", d.resolution, "spectral resolution, Hz");
    k_psd->callback([&] {
        const SeriesInput in = load_series(d.data, d.column);
        const Spectrum s = psd_welch(in.v, in.fs, d.resolution);
        write_spectrum_csv(d.out, s.f, s.v);
        std::printf("%s  %zu bins at %g Hz\n", d.out.c_str(), s.f.size(), s.resolution);
    });

    auto* k_cross = add_data_out(dsp_cmd->add_subcommand("cross", "cross-spectral density"), true);
    k_cross->add_option("--resolution", d.resolution, "spectral resolution, Hz");
    k_cross->callback([&] {
        const auto [a, b] = load_pair();
        const Spectrum s = cross_spectrum(a.v, b.v, a.fs, d.resolution);
        write_spectrum_csv(d.out, s.f, s.v);
        std::printf("%s  %zu bins at %g Hz\n", d.out.c_str(), s.f.size(), s.resolution);
    });

    auto* k_coh = add_data_out(dsp_cmd->add_subcommand("coherence", "magnitude-squared coherence"),
                               true);
    k_coh->add_option("--resolution", d.resolution, "spectral resolution, Hz");
    k_coh->callback([&] {
        const auto [a, b] = load_pair();
        const std::vector<double> c = coherence(a.v, b.v, a.fs, d.resolution);
        const Spectrum grid = psd_welch(a.v, a.fs, d.resolution);
        std::vector<std::complex<double>> v(c.begin(), c.end());
        write_spectrum_csv(d.out, grid.f, v);
        std::printf("%s  %zu bins\n", d.out.c_str(), c.size());
    });

    auto* k_band = add_data_out(dsp_cmd->add_subcommand("bandpass", "zero-phase band-pass"));
    k_band->add_option("--f-lo", d.f_lo, "lower corner, Hz");
    k_band->add_option("--f-hi", d.f_hi, "upper corner, Hz");
    k_band->callback([&] {
        const SeriesInput in = load_series(d.data, d.column);
        write_series_csv(d.out, bandpass(in.v, d.f_lo, d.f_hi, in.fs), in.fs);
        std::printf("%s  %zu samples\n", d.out.c_str(), in.v.size());
    });

    auto* k_low = add_data_out(dsp_cmd->add_subcommand("lowpass", "zero-phase low-pass"));
    k_low->add_option("--fc", d.fc, "corner, Hz");
    k_low->callback([&] {
        const SeriesInput in = load_series(d.data, d.column);
        write_series_csv(d.out, lowpass(in.v, d.fc, in.fs), in.fs);
        std::printf("%s  %zu samples\n", d.out.c_str(), in.v.size());
    });

    auto* k_notch = add_data_out(dsp_cmd->add_subcommand("notch", "mains-harmonic notch comb"));
    k_notch->add_option("--f0", d.f0, "fundamental, Hz");
    k_notch->add_option("--harmonics", d.harmonics, "number of harmonics");
    k_notch->add_option("--width", d.width, "notch width, Hz");
    k_notch->callback([&] {
        const SeriesInput in = load_series(d.data, d.column);
        write_series_csv(d.out, notch_harmonics(in.v, d.f0, d.harmonics, d.width, in.fs), in.fs);
        std::printf("%s  %zu samples\n", d.out.c_str(), in.v.size());
    });

    auto* k_hil = add_data_out(dsp_cmd->add_subcommand("hilbert", "analytic signal"));
    k_hil->callback([&] {
        const SeriesInput in = load_series(d.data, d.column);
        const std::vector<std::complex<double>> a = analytic_signal(in.v);
        std::vector<double> t(a.size()), re(a.size()), im(a.size());
        for (size_t i = 0; i < a.size(); ++i) {
            t[i] = static_cast<double>(i) / in.fs;
            re[i] = a[i].real();
            im[i] = a[i].imag();
        }
        write_csv(d.out, {"t", "value_re", "value_im"}, {&t, &re, &im});
        std::printf("%s  %zu samples\n", d.out.c_str(), a.size());
    });

    auto* k_count = add_data_out(dsp_cmd->add_subcommand("count", "zero-crossing frequency"));
    k_count->callback([&] {
        const SeriesInput in = load_series(d.data, d.column);
        write_series_csv(d.out, count_zero_crossings(in.v, in.fs), in.fs);
        std::printf("%s  %zu samples\n", d.out.c_str(), in.v.size());
    });

    auto* k_bin = add_data_out(dsp_cmd->add_subcommand("bin", "equal-width bin averages"));
    k_bin->add_option("--bins", d.bins, "number of bins");
    k_bin->callback([&] {
        const SeriesInput in = load_series(d.data, d.column);
        if (d.bins < 1) throw config_error("--bins must be at least 1");
        const std::vector<double> b = bin_average(in.v, static_cast<size_t>(d.bins));
        std::vector<double> t(b.size());
        const double bin_dt =
            static_cast<double>(in.v.size()) / in.fs / static_cast<double>(b.size());
        for (size_t i = 0; i < t.size(); ++i) t[i] = (static_cast<double>(i) + 0.5) * bin_dt;
        write_csv(d.out, {"t", "value"}, {&t, &b});
        std::printf("%s  %zu bins\n", d.out.c_str(), b.size());
    });

    // ---- ident fit -------------------------------------------------------------
    auto* ident_cmd = app.add_subcommand("ident", "optical-spring identification");
    ident_cmd->require_subcommand(1);
    auto* ident_fit = ident_cmd->add_subcommand("fit", "fit the spring relation to a scan");
    std::string if_data, if_params, if_out;
    ident_fit->add_option("--data", if_data, "scan CSV with columns delta,f_hz,sigma_hz")
        ->required();
    ident_fit->add_option("--params", if_params, "parameter file");
    ident_fit->add_option("--out", if_out, "output JSON")->required();
    ident_fit->callback([&] {
        const Params p = resolve_params(g, if_params, "ident fit");
        const CsvTable t = read_csv(if_data);
        SpringMeasurement m;
        m.delta = t.column("delta");
        m.f_hz = t.column("f_hz");
        m.sigma_hz = t.column("sigma_hz");
        m.power_w = p.power_w;
        SpringFitStart start;
        start.G = p.G;
        start.delta_bar = p.delta;
        start.eta = p.eta;
        const SpringFitResult fit = fit_spring(m, p, start);

        double mean_delta = 0.0;
        for (double v : m.delta) mean_delta += v;
        mean_delta /= static_cast<double>(m.delta.size());
        const PhotonMap map = default_photon_map(p);
        std::vector<double> residuals(m.delta.size());
        for (size_t i = 0; i < m.delta.size(); ++i) {
            const double model = detail::map_resonance_hz(
                p, map, m.power_w, fit.G, fit.delta_bar + (m.delta[i] - mean_delta), fit.eta);
            residuals[i] = (m.f_hz[i] - model) / m.sigma_hz[i];
        }
        nlohmann::json cov = nlohmann::json::array();
        for (int r = 0; r < 3; ++r)
            cov.push_back({fit.covariance(r, 0), fit.covariance(r, 1), fit.covariance(r, 2)});
        detail::write_json_file(if_out,
                                {{"G_hz_per_m", fit.G / constants::two_pi},
                                 {"delta_bar", fit.delta_bar},
                                 {"eta", fit.eta},
                                 {"residual_norm", fit.residual_norm},
                                 {"iterations", fit.iterations},
                                 {"covariance", cov},
                                 {"covariance_order", {"G_rad_per_s_m", "delta_bar", "eta"}},
                                 {"residuals", residuals},
                                 {"warnings", fit.warnings}});
        std::printf("%s  G=%.6g Hz/m  delta_bar=%.6g  |r|=%.4g\n", if_out.c_str(),
                    fit.G / constants::two_pi, fit.delta_bar, fit.residual_norm);
    });

    // ---- wiener synth -------------------------------------------------------------
    auto* wiener_cmd = app.add_subcommand("wiener", "causal filter synthesis");
    wiener_cmd->require_subcommand(1);
    auto* wiener_synth = wiener_cmd->add_subcommand("synth", "tabulate the estimation filters");
    std::string ws_params, ws_grid = "0:4000:1", ws_out;
    bool ws_oracle = false;
    wiener_synth->add_option("--params", ws_params, "parameter file");
    wiener_synth->add_option("--grid", ws_grid, "frequency grid f0:f1:df, Hz");
    wiener_synth->add_option("--out", ws_out, "output CSV")->required();
    wiener_synth->add_flag("--oracle", ws_oracle,
                           "tabulate the numerical causal estimator instead of the closed form");
    wiener_synth->callback([&] {
        const Params p = resolve_params(g, ws_params, "wiener synth");
        const Derived der = derive(p);
        const GridSpec spec = parse_grid_spec(ws_grid);
        const std::vector<double> f = frequency_grid(spec.f0, spec.f1, spec.df);
        const FilterResponse r = ws_oracle
                                     ? numerical_causal_wiener(build_model(p, der), f)
                                     : sample_analytic(calibrated_filter(p, der), f);
        write_filter_csv(ws_out, r);
        std::printf("%s  %zu rows  (%s)\n", ws_out.c_str(), r.f_hz.size(),
                    ws_oracle ? "oracle" : "analytic");
    });

    // ---- estimate run / sweep --------------------------------------------------------
    auto* est_cmd = app.add_subcommand("estimate", "conditional-state estimation");
    est_cmd->require_subcommand(1);

    auto* est_run = est_cmd->add_subcommand("run", "condition a record and integrate the state");
    std::string er_data, er_filter, er_params, er_band = "105:auto", er_out;
    double er_resolution = 10.0;
    est_run->add_option("--data", er_data, "record file (csv or bin)")->required();
    est_run->add_option("--filter", er_filter,
                        "tabulated filter CSV on the record's spectral grid "
                        "(default: closed-form synthesis from the parameters)");
    est_run->add_option("--params", er_params, "parameter file");
    est_run->add_option("--band", er_band, "integration band lo:hi, hi may be auto");
    est_run->add_option("--resolution", er_resolution, "spectral resolution, Hz");
    est_run->add_option("--out", er_out, "output JSON")->required();
    est_run->callback([&] {
        const Params p = resolve_params(g, er_params, "estimate run");
        const Derived der = derive(p);
        const Trajectory tr = read_trajectory(er_data);
        const AnalyticFilter closed = calibrated_filter(p, der);
        const ResidualSeries resid =
            er_filter.empty() ? condition(tr.X, tr.fs, closed, der)
                              : condition(tr.X, tr.fs, read_filter_csv(er_filter), der);
        RunConfig band_holder;
        parse_band_spec(er_band, band_holder);
        const Band band{band_holder.band_lo_hz,
                        band_holder.band_hi_hz ? *band_holder.band_hi_hz
                                               : default_band(closed, band_holder.band_lo_hz)
                                                     .f_hi_hz};
        const ConditionalState state = estimate_state(resid, band, er_resolution);
        const EllipseReport ell = ellipse_report(state);
        detail::write_json_file(
            er_out, {{"band", {{"f_lo_hz", band.f_lo_hz}, {"f_hi_hz", band.f_hi_hz}}},
                     {"V", {{state.V(0, 0), state.V(0, 1)}, {state.V(1, 0), state.V(1, 1)}}},
                     {"squeeze_var", state.squeeze_var},
                     {"antisqueeze_var", state.antisqueeze_var},
                     {"squeeze_amp", ell.squeeze_amp},
                     {"antisqueeze_amp", ell.antisqueeze_amp},
                     {"angle_deg", state.angle_deg},
                     {"purity", state.purity},
                     {"below_vacuum", state.below_vacuum}});
        std::printf("%s  purity=%.6g  angle=%.4g deg  squeeze=%.6g\n", er_out.c_str(),
                    state.purity, state.angle_deg, state.squeeze_var);
    });

    auto* est_sweep = est_cmd->add_subcommand("sweep", "purity over occupancy hypotheses");
    std::string sw_data, sw_params, sw_out;
    double sw_decades = 1.0, sw_band_lo = 105.0, sw_resolution = 10.0;
    int sw_points = 9;
    est_sweep->add_option("--data", sw_data, "record file (csv or bin)")->required();
    est_sweep->add_option("--params", sw_params, "parameter file");
    est_sweep->add_option("--grid-decades", sw_decades, "sweep span, decades each way");
    est_sweep->add_option("--points", sw_points, "grid points per axis");
    est_sweep->add_option("--band-lo", sw_band_lo, "integration band lower edge, Hz");
    est_sweep->add_option("--resolution", sw_resolution, "spectral resolution, Hz");
    est_sweep->add_option("--out", sw_out, "output CSV")->required();
    est_sweep->callback([&] {
        const Params p = resolve_params(g, sw_params, "estimate sweep");
        if (sw_points < 1) throw config_error("--points must be at least 1");
        if (sw_decades <= 0.0) throw config_error("--grid-decades must be positive");
        const Trajectory tr = read_trajectory(sw_data);
        SweepOptions opt;
        opt.f_lo_hz = sw_band_lo;
        opt.welch_resolution_hz = sw_resolution;
        const PuritySurface surf = purity_sweep(
            tr.X, tr.fs, anchor_family(p), log_grid(p.n_th, sw_decades, (size_t)sw_points),
            log_grid(p.N_th, sw_decades, (size_t)sw_points), opt);
        std::vector<double> cn(surf.points.size()), cN(surf.points.size()),
            cp(surf.points.size());
        for (size_t i = 0; i < surf.points.size(); ++i) {
            cn[i] = surf.points[i].n_th;
            cN[i] = surf.points[i].N_th;
            cp[i] = surf.points[i].ok ? surf.points[i].purity
                                      : std::numeric_limits<double>::quiet_NaN();
        }
        write_csv(sw_out, {"n_th", "N_th", "purity"}, {&cn, &cN, &cp});
        const SweepPoint& best = surf.best();
        std::printf("%s  argmax n_th=%.6g N_th=%.6g purity=%.6g\n", sw_out.c_str(), best.n_th,
                    best.N_th, best.purity);
    });

    // ---- report -----------------------------------------------------------------
    auto* report_cmd = app.add_subcommand("report", "assemble the summary for a finished run");
    std::string rp_params;
    report_cmd->add_option("--params", rp_params, "parameter file");
    report_cmd->callback([&] {
        RunConfig cfg = base_config(g);
        if (!rp_params.empty()) cfg.params_path = rp_params;
        cfg.stages = {StageKind::report};
        run(cfg);
        std::printf("%s\n",
                    detail::read_json_file(detail::join_path(cfg.out_dir, "report.json"))
                        .dump(2)
                        .c_str());
    });

    try {
        app.parse(argc, argv);
        if (app.get_subcommands().empty()) {
            if (g.config.empty()) {
                std::fputs(app.help().c_str(), stderr);
                return 2;
            }
            const RunConfig cfg = base_config(g);
            print_run_summary(run(cfg), cfg.out_dir);
        }
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_code_for(e);
    }
    return 0;
}
