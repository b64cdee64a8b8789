#pragma once

#include <vector>

#include "sphdiff/rng.hpp"
#include "sphdiff/spectral.hpp"

namespace sphdiff {

struct MaternParams {
    double kappa = 1.0;  // correlation parameter, > 0
    double beta = 1.0;   // smoothness, > 1/2

    void validate() const;
};

// Angular power spectrum C_0..C_L of an isotropic Gaussian field.
class Spectrum {
public:
    explicit Spectrum(std::vector<double> c);

    int band_limit() const { return static_cast<int>(c_.size()) - 1; }
    double operator[](int ell) const { return c_[ell]; }
    const std::vector<double>& values() const { return c_; }
    double max() const;

    // C_ell repeated 2*ell+1 times, aligned with CoeffField flat indices.
    std::vector<double> per_coeff() const;

private:
    std::vector<double> c_;
};

// C_ell = (kappa^2 + ell(ell+1))^(-2 beta).
Spectrum matern_spectrum(const MaternParams& p, int band_limit);

// Independent a_{ell,m} ~ N(0, C_ell).
CoeffField sample_prior(const Spectrum& spec, RngStream& rng);

// Cameron-Martin norm: sum a_{ell,m}^2 / C_ell.
double cm_norm_sq(const CoeffField& x, const Spectrum& spec);

// sum_{ell <= L} (2 ell + 1) C_ell
double trace(const Spectrum& spec);

// kappa^(2(1 - 2 beta)) / (2 beta - 1). Reported next to trace() for comparison;
// note it is exceeded by trace() already at L = 1 for kappa = beta = 1.
double trace_reference(const MaternParams& p);

}  // namespace sphdiff
