#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "sphdiff/diagnostics.hpp"
#include "sphdiff/matern.hpp"
#include "sphdiff/spectral.hpp"

namespace sphdiff::io {

// All writers use %.17g so values round-trip exactly.
std::string format_double(double v);

// `ell,m,value` in ascending flat index.
void write_coeff_csv(const std::string& path, const CoeffField& c);
CoeffField read_coeff_csv(const std::string& path);

// `theta,phi,value`, row-major over (theta_i, phi_k).
void write_grid_csv(const std::string& path, const GridField& f);
GridField read_grid_csv(const std::string& path);

// `ell,C`
void write_spectrum_csv(const std::string& path, const Spectrum& s);
Spectrum read_spectrum_csv(const std::string& path);

// `ell,C_true,C_hat,ci_lo,ci_hi`
void write_spectrum_report(const std::string& path, const std::vector<SpectrumEstimate>& est, const Spectrum& truth);

// `epoch,loss`
void write_loss_history(const std::string& path, const std::vector<double>& loss);

// Streaming writer for `sample_id,t,ell,m,value` path dumps.
class PathCsvWriter {
public:
    explicit PathCsvWriter(const std::string& path);
    void write(long long sample_id, double t, const CoeffField& c);

private:
    std::ofstream out_;
    std::string path_;
};

// Sorted list of coefficient CSVs (header `ell,m,value`) directly inside `dir`.
std::vector<std::string> list_coeff_files(const std::string& dir);

}  // namespace sphdiff::io
