#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "omsq/errors.hpp"
#include "omsq/state_space.hpp"

namespace omsq {

// ---- generic CSV ----------------------------------------------------------

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> columns;

    size_t rows() const { return columns.empty() ? 0 : columns[0].size(); }

    const std::vector<double>& column(const std::string& name) const {
        for (size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return columns[i];
        throw io_error("CSV is missing column '" + name + "'");
    }

    bool has_column(const std::string& name) const {
        for (const auto& h : header)
            if (h == name) return true;
        return false;
    }
};

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open '" + path + "'");
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw io_error("'" + path + "' is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::stringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) t.header.push_back(cell);
    if (t.header.empty()) throw io_error("'" + path + "' has no header");
    t.columns.resize(t.header.size());
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ls(line);
        size_t col = 0;
        while (std::getline(ls, cell, ',')) {
            if (col >= t.header.size())
                throw io_error("'" + path + "' line " + std::to_string(lineno) + ": too many fields");
            try {
                size_t used = 0;
                t.columns[col].push_back(std::stod(cell, &used));
                if (used != cell.size()) throw std::invalid_argument("");
            } catch (const std::exception&) {
                throw io_error("'" + path + "' line " + std::to_string(lineno) +
                               ": bad number '" + cell + "'");
            }
            ++col;
        }
        if (col != t.header.size())
            throw io_error("'" + path + "' line " + std::to_string(lineno) + ": too few fields");
    }
    return t;
}

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<const std::vector<double>*>& columns) {
    if (header.size() != columns.size())
        throw io_error("CSV writer: header/column count mismatch");
    std::ofstream out(path);
    if (!out) throw io_error("cannot write '" + path + "'");
    out << std::setprecision(17);
    for (size_t i = 0; i < header.size(); ++i)
        out << header[i] << (i + 1 < header.size() ? ',' : '\n');
    const size_t rows = columns.empty() ? 0 : columns[0]->size();
    for (const auto* c : columns)
        if (c->size() != rows) throw io_error("CSV writer: ragged columns");
    for (size_t r = 0; r < rows; ++r)
        for (size_t i = 0; i < columns.size(); ++i)
            out << (*columns[i])[r] << (i + 1 < columns.size() ? ',' : '\n');
    if (!out) throw io_error("write failed for '" + path + "'");
}

// ---- trajectories ---------------------------------------------------------

inline void write_trajectory_csv(const std::string& path, const Trajectory& tr) {
    std::vector<double> t(tr.size());
    for (size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i) / tr.fs;
    write_csv(path, {"t", "q", "p", "X"}, {&t, &tr.q, &tr.p, &tr.X});
}

inline Trajectory read_trajectory_csv(const std::string& path) {
    const CsvTable t = read_csv(path);
    Trajectory tr;
    const auto& time = t.column("t");
    if (time.size() < 2) throw io_error("'" + path + "': trajectory needs at least 2 samples");
    const double dt = time[1] - time[0];
    if (dt <= 0.0) throw io_error("'" + path + "': time column is not increasing");
    for (size_t i = 2; i < time.size(); i += std::max<size_t>(1, time.size() / 64))
        if (std::abs((time[i] - time[i - 1]) / dt - 1.0) > 1e-6)
            throw io_error("'" + path + "': time column is not uniformly sampled");
    tr.fs = 1.0 / dt;
    tr.q = t.column("q");
    tr.p = t.column("p");
    tr.X = t.column("X");
    return tr;
}

// Binary container: 16-byte header (8-byte magic, u32 version, u32 reserved),
// then u64 count, f64 rate, u64 seed, then q, p, X arrays of f64, native order.
namespace detail {
inline constexpr char trajectory_magic[8] = {'O', 'M', 'S', 'Q', 'T', 'R', 'J', '\0'};
inline constexpr uint32_t trajectory_version = 1;
} // namespace detail

inline void write_trajectory_binary(const std::string& path, const Trajectory& tr) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write '" + path + "'");
    out.write(detail::trajectory_magic, 8);
    const uint32_t version = detail::trajectory_version, reserved = 0;
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&reserved), 4);
    const uint64_t n = tr.size();
    out.write(reinterpret_cast<const char*>(&n), 8);
    out.write(reinterpret_cast<const char*>(&tr.fs), 8);
    const uint64_t seed = tr.seed;
    out.write(reinterpret_cast<const char*>(&seed), 8);
    auto dump = [&](const std::vector<double>& v) {
        out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(8 * v.size()));
    };
    dump(tr.q);
    dump(tr.p);
    dump(tr.X);
    if (!out) throw io_error("write failed for '" + path + "'");
}

inline Trajectory read_trajectory_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open '" + path + "'");
    char magic[8];
    uint32_t version = 0, reserved = 0;
    in.read(magic, 8);
    in.read(reinterpret_cast<char*>(&version), 4);
    in.read(reinterpret_cast<char*>(&reserved), 4);
    if (!in || std::memcmp(magic, detail::trajectory_magic, 8) != 0)
        throw io_error("'" + path + "' is not a trajectory container");
    if (version != detail::trajectory_version)
        throw io_error("'" + path + "': unsupported container version " + std::to_string(version));
    uint64_t n = 0, seed = 0;
    Trajectory tr;
    in.read(reinterpret_cast<char*>(&n), 8);
    in.read(reinterpret_cast<char*>(&tr.fs), 8);
    in.read(reinterpret_cast<char*>(&seed), 8);
    tr.seed = seed;
    auto slurp = [&](std::vector<double>& v) {
        v.resize(n);
        in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(8 * n));
    };
    slurp(tr.q);
    slurp(tr.p);
    slurp(tr.X);
    if (!in) throw io_error("'" + path + "' is truncated");
    return tr;
}

inline Trajectory read_trajectory(const std::string& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw io_error("cannot open '" + path + "'");
    char magic[8] = {};
    probe.read(magic, 8);
    if (probe && std::memcmp(magic, detail::trajectory_magic, 8) == 0)
        return read_trajectory_binary(path);
    return read_trajectory_csv(path);
}

// ---- spectra and filter responses ------------------------------------------

inline void write_spectrum_csv(const std::string& path, const std::vector<double>& f,
                               const std::vector<std::complex<double>>& v) {
    std::vector<double> re(v.size()), im(v.size());
    for (size_t i = 0; i < v.size(); ++i) {
        re[i] = v[i].real();
        im[i] = v[i].imag();
    }
    write_csv(path, {"f_hz", "value_re", "value_im"}, {&f, &re, &im});
}

struct SpectrumData {
    std::vector<double> f;
    std::vector<std::complex<double>> v;
};

inline SpectrumData read_spectrum_csv(const std::string& path) {
    const CsvTable t = read_csv(path);
    SpectrumData s;
    s.f = t.column("f_hz");
    const auto& re = t.column("value_re");
    const auto& im = t.column("value_im");
    s.v.resize(re.size());
    for (size_t i = 0; i < re.size(); ++i) s.v[i] = {re[i], im[i]};
    return s;
}

} // namespace omsq
