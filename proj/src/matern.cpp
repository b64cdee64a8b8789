#include "sphdiff/matern.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sphdiff/errors.hpp"

namespace sphdiff {

void MaternParams::validate() const {
    if (!(kappa > 0.0)) throw DomainError("MaternParams: kappa must be > 0");
    if (!(beta > 0.5)) throw DomainError("MaternParams: beta must be > 1/2");
}

Spectrum::Spectrum(std::vector<double> c) : c_(std::move(c)) {
    if (c_.empty()) throw DomainError("Spectrum: need at least C_0");
    for (std::size_t ell = 0; ell < c_.size(); ++ell)
        if (!(c_[ell] > 0.0) || !std::isfinite(c_[ell]))
            throw DomainError("Spectrum: C_" + std::to_string(ell) + " must be positive and finite");
}

double Spectrum::max() const { return *std::max_element(c_.begin(), c_.end()); }

std::vector<double> Spectrum::per_coeff() const {
    std::vector<double> out;
    out.reserve(num_coeffs(band_limit()));
    for (int ell = 0; ell <= band_limit(); ++ell) out.insert(out.end(), 2 * ell + 1, c_[ell]);
    return out;
}

Spectrum matern_spectrum(const MaternParams& p, int band_limit) {
    p.validate();
    if (band_limit < 0) throw DomainError("matern_spectrum: negative band limit");
    std::vector<double> c(band_limit + 1);
    for (int ell = 0; ell <= band_limit; ++ell)
        c[ell] = std::pow(p.kappa * p.kappa + static_cast<double>(ell) * (ell + 1), -2.0 * p.beta);
    return Spectrum(std::move(c));
}

CoeffField sample_prior(const Spectrum& spec, RngStream& rng) {
    CoeffField out(spec.band_limit());
    for (int ell = 0; ell <= spec.band_limit(); ++ell) {
        const double sd = std::sqrt(spec[ell]);
        for (int m = -ell; m <= ell; ++m) out[HarmonicIndex{ell, m}.flat()] = sd * rng.normal();
    }
    return out;
}

double cm_norm_sq(const CoeffField& x, const Spectrum& spec) {
    if (x.band_limit() > spec.band_limit())
        throw DomainError("cm_norm_sq: field band limit exceeds spectrum band limit");
    double acc = 0.0;
    for (int ell = 0; ell <= x.band_limit(); ++ell) {
        double block = 0.0;
        for (int m = -ell; m <= ell; ++m) {
            const double a = x[HarmonicIndex{ell, m}.flat()];
            block += a * a;
        }
        acc += block / spec[ell];
    }
    return acc;
}

double trace(const Spectrum& spec) {
    double acc = 0.0;
    for (int ell = 0; ell <= spec.band_limit(); ++ell) acc += (2.0 * ell + 1.0) * spec[ell];
    return acc;
}

double trace_reference(const MaternParams& p) {
    p.validate();
    return std::pow(p.kappa, 2.0 * (1.0 - 2.0 * p.beta)) / (2.0 * p.beta - 1.0);
}

}  // namespace sphdiff
