#include "sphdiff/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "sphdiff/errors.hpp"

namespace sphdiff::io {

namespace fs = std::filesystem;

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    return out;
}

void finish(std::ofstream& out, const std::string& path) {
    out.flush();
    if (!out) throw IoError("failed writing " + path);
}

// Reads a CSV with the given exact header; returns rows of numeric fields.
std::vector<std::vector<double>> read_numeric_csv(const std::string& path, const std::string& header) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("empty file", path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != header) throw ConfigError("expected header '" + header + "', got '" + line + "'", path);
    const auto ncols = static_cast<std::size_t>(std::count(header.begin(), header.end(), ',') + 1);
    std::vector<std::vector<double>> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                row.push_back(std::stod(cell, &used));
                if (used != cell.size()) throw std::invalid_argument(cell);
            } catch (const std::exception&) {
                throw ConfigError("line " + std::to_string(lineno) + ": bad number '" + cell + "'", path);
            }
        }
        if (row.size() != ncols)
            throw ConfigError("line " + std::to_string(lineno) + ": expected " + std::to_string(ncols) + " fields",
                              path);
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

void write_coeff_csv(const std::string& path, const CoeffField& c) {
    auto out = open_out(path);
    out << "ell,m,value\n";
    for (std::size_t k = 0; k < c.size(); ++k) {
        const auto idx = HarmonicIndex::from_flat(static_cast<int>(k));
        out << idx.ell << ',' << idx.m << ',' << format_double(c[k]) << '\n';
    }
    finish(out, path);
}

CoeffField read_coeff_csv(const std::string& path) {
    const auto rows = read_numeric_csv(path, "ell,m,value");
    const int L = static_cast<int>(std::lround(std::sqrt(static_cast<double>(rows.size())))) - 1;
    if (L < 0 || static_cast<std::size_t>(num_coeffs(L)) != rows.size())
        throw ConfigError("row count " + std::to_string(rows.size()) + " is not a square (L+1)^2", path);
    CoeffField c(L);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const HarmonicIndex expect = HarmonicIndex::from_flat(static_cast<int>(k));
        if (rows[k][0] != expect.ell || rows[k][1] != expect.m)
            throw ConfigError("rows must be in ascending flat index order (row " + std::to_string(k + 2) + ")", path);
        c[k] = rows[k][2];
    }
    return c;
}

void write_grid_csv(const std::string& path, const GridField& f) {
    auto out = open_out(path);
    out << "theta,phi,value\n";
    const SphereGrid& g = f.grid();
    for (int i = 0; i < g.n_theta(); ++i)
        for (int k = 0; k < g.n_phi(); ++k)
            out << format_double(g.theta(i)) << ',' << format_double(g.phi(k)) << ',' << format_double(f(i, k))
                << '\n';
    finish(out, path);
}

GridField read_grid_csv(const std::string& path) {
    const auto rows = read_numeric_csv(path, "theta,phi,value");
    if (rows.empty()) throw ConfigError("no grid rows", path);
    int n_phi = 0;
    while (n_phi < static_cast<int>(rows.size()) && rows[n_phi][0] == rows[0][0]) ++n_phi;
    if (rows.size() % n_phi != 0) throw ConfigError("grid rows do not form a rectangle", path);
    const int n_theta = static_cast<int>(rows.size()) / n_phi;
    SphereGrid grid(n_theta, n_phi);
    std::vector<double> values(rows.size());
    for (int i = 0; i < n_theta; ++i)
        for (int k = 0; k < n_phi; ++k) {
            const auto& r = rows[static_cast<std::size_t>(i) * n_phi + k];
            if (std::abs(r[0] - grid.theta(i)) > 1e-10 || std::abs(r[1] - grid.phi(k)) > 1e-10)
                throw ConfigError("grid nodes are not a Gauss-Legendre x equispaced grid", path);
            values[static_cast<std::size_t>(i) * n_phi + k] = r[2];
        }
    return GridField(std::move(grid), std::move(values));
}

void write_spectrum_csv(const std::string& path, const Spectrum& s) {
    auto out = open_out(path);
    out << "ell,C\n";
    for (int ell = 0; ell <= s.band_limit(); ++ell) out << ell << ',' << format_double(s[ell]) << '\n';
    finish(out, path);
}

Spectrum read_spectrum_csv(const std::string& path) {
    const auto rows = read_numeric_csv(path, "ell,C");
    std::vector<double> c;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i][0] != static_cast<double>(i)) throw ConfigError("ell must run 0, 1, 2, ...", path);
        c.push_back(rows[i][1]);
    }
    try {
        return Spectrum(std::move(c));
    } catch (const DomainError& e) {
        throw ConfigError(e.what(), path);
    }
}

void write_spectrum_report(const std::string& path, const std::vector<SpectrumEstimate>& est, const Spectrum& truth) {
    auto out = open_out(path);
    out << "ell,C_true,C_hat,ci_lo,ci_hi\n";
    for (const auto& e : est)
        out << e.ell << ',' << format_double(e.ell <= truth.band_limit() ? truth[e.ell] : std::nan("")) << ','
            << format_double(e.c_hat) << ',' << format_double(e.ci_lo) << ',' << format_double(e.ci_hi) << '\n';
    finish(out, path);
}

void write_loss_history(const std::string& path, const std::vector<double>& loss) {
    auto out = open_out(path);
    out << "epoch,loss\n";
    for (std::size_t i = 0; i < loss.size(); ++i) out << i << ',' << format_double(loss[i]) << '\n';
    finish(out, path);
}

PathCsvWriter::PathCsvWriter(const std::string& path) : out_(open_out(path)), path_(path) {
    out_ << "sample_id,t,ell,m,value\n";
}

void PathCsvWriter::write(long long sample_id, double t, const CoeffField& c) {
    for (std::size_t k = 0; k < c.size(); ++k) {
        const auto idx = HarmonicIndex::from_flat(static_cast<int>(k));
        out_ << sample_id << ',' << format_double(t) << ',' << idx.ell << ',' << idx.m << ','
             << format_double(c[k]) << '\n';
    }
    if (!out_) throw IoError("failed writing " + path_);
}

std::vector<std::string> list_coeff_files(const std::string& dir) {
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) throw IoError("not a directory: " + dir);
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        if (entry.path().extension() != ".csv") continue;
        std::ifstream probe(entry.path());
        std::string header;
        std::getline(probe, header);
        if (!header.empty() && header.back() == '\r') header.pop_back();
        if (header != "ell,m,value") continue;
        files.push_back(entry.path().string());
    }
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace sphdiff::io
