#pragma once

#include <cstdint>
#include <functional>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "sphdiff/data_model.hpp"
#include "sphdiff/forward.hpp"
#include "sphdiff/sampler.hpp"

namespace sphdiff {

// sum_k 1/2 (varA/varB - 1 - ln(varA/varB) + (meanA - meanB)^2 / varB)
double kl_diag_gaussian(std::span<const double> mean_a, std::span<const double> var_a,
                        std::span<const double> mean_b, std::span<const double> var_b);

// KL(N(mean_a, diag var_a) | N(b.mean, b.cov)) for a dense covariance on the right.
double kl_gaussian(std::span<const double> mean_a, std::span<const double> var_a, const GaussianLaw& b);

struct ContractionCheck {
    double lhs = 0.0;  // KL(P_t | m)
    double rhs = 0.0;  // e^{-t/2} KL(mu_data | m)
    bool pass = false;
};

ContractionCheck kl_contraction_check(const GaussianShift& model, const Spectrum& spec, double t);

struct BoundTerms {
    double term1 = 0.0;  // e^{-T/2} KL0
    double term2 = 0.0;  // T eps^2
    double term3 = 0.0;  // 2 h max(4, h) I
    double bound = 0.0;  // term1 + term2 + term3
};

BoundTerms kl_error_bound(double horizon, double eps_sq, double h, double kl0, double fisher);

struct BoundReport {
    double horizon = 0.0;
    double h = 0.0;
    Estimate eps_sq;
    double kl0 = 0.0;
    double fisher = 0.0;
    BoundTerms terms;
    double measured_kl = 0.0;
    std::string measured_kind;  // "exact" (affine recursion) or "fitted" (diagonal Gaussian fit)
    bool pass = false;

    nlohmann::json to_json() const;
    std::string to_text() const;
};

struct BoundOptions {
    const Denoiser* learned = nullptr;  // null: exact score, eps^2 = 0
    int n_mc = 2000;                    // H1 Monte Carlo size
    int n_fit_samples = 10000;          // generated samples for a fitted law
    std::uint64_t seed = 0;
};

// Throws DomainError when KL(mu_data | m) is undefined.
BoundReport verify_kl_bound(const GaussianShift& model, const Spectrum& spec, const TimeGrid& grid,
                            const BoundOptions& opts = {});

// Max |score_from_denoiser - C d log rho_t| over fields whose coefficients all equal x.
double score_identity_check(const GaussianShift& model, const Spectrum& spec, double t,
                            std::span<const double> x_values);

struct McCheck {
    double estimate = 0.0;
    double std_error = 0.0;
    double reference = 0.0;
    double reference_se = 0.0;  // nonzero when the reference is itself Monte Carlo
    double tolerance_se = 4.0;
    bool pass = false;
};

// Probabilists' Hermite polynomial He_n.
double hermite(int n, double u);

// Monte Carlo E[He_n(X_t / sqrt C) | X_0 = x] against e^{-nt/2} He_n(x / sqrt C).
McCheck mehler_check(double c_ell, double t, int n, double x, int n_mc, std::uint64_t seed);

// Central finite difference of a -> E[u(X_t) | X_0 = a] (common random numbers)
// against e^{-t/2} E[u'(X_t) | X_0 = a] on an independent stream.
McCheck commutation_check(const std::function<double(double)>& u, const std::function<double(double)>& du,
                     double c_ell, double t, double a, int n_mc, double fd_step, std::uint64_t seed);

struct SpectrumEstimate {
    int ell = 0;
    double c_hat = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    long long dof = 0;
};

// Chat_ell = mean over samples of (2 ell + 1)^{-1} sum_m a_{ell,m}^2 with a chi-square
// interval on n (2 ell + 1) degrees of freedom.
std::vector<SpectrumEstimate> estimate_power_spectrum(std::span<const CoeffField> samples, double level = 0.99);
bool spectrum_within_ci(std::span<const SpectrumEstimate> est, const Spectrum& spec);

DiagonalGaussian fit_diagonal_gaussian(std::span<const CoeffField> samples);

struct HarmonicCheck {
    double gram_max_dev = 0.0;      // max |G - I| of the quadrature Gram matrix
    double roundtrip_max_err = 0.0; // max |analyze(synthesize(a)) - a| over random fields
};

// Quadrature orthonormality of Y_{l,m}, l <= L, on `grid`, and the transform
// roundtrip on `n_fields` random coefficient fields.
HarmonicCheck harmonic_check(int band_limit, const SphereGrid& grid, int n_fields, std::uint64_t seed);

struct StationarityCheck {
    std::vector<double> variance;     // per flat index
    std::vector<double> std_error;
    std::vector<double> z_score;      // (variance - C) / std_error
    double max_abs_z = 0.0;
};

// Runs n_paths prior-started forward trajectories over `grid` and compares the
// per-coefficient variance at T with C_ell.
StationarityCheck stationarity_check(const Spectrum& spec, const TimeGrid& grid, int n_paths, std::uint64_t seed);

struct TraceRow {
    int band_limit = 0;
    double trace = 0.0;
    double rel_change = 0.0;  // vs. the previous row (0 for the first)
};

struct TraceReport {
    std::vector<TraceRow> rows;
    double reference = 0.0;     // kappa^(2(1-2beta)) / (2beta - 1)
    double ell0_term = 0.0;     // C_0 alone
    bool converged = false;     // last rel_change < tol
};

// trace(L) for L = start, 2 start, ..., <= max_band_limit.
TraceReport trace_convergence(const MaternParams& p, int start, int max_band_limit, double tol);

}  // namespace sphdiff
