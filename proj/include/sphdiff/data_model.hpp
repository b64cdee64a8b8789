#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <optional>
#include <variant>
#include <vector>

#include "sphdiff/forward.hpp"
#include "sphdiff/matern.hpp"
#include "sphdiff/rng.hpp"
#include "sphdiff/spectral.hpp"

namespace sphdiff {

// mu_data = N(mean, diag(s_ell)), with s_ell given per degree.
struct GaussianShift {
    CoeffField mean;
    std::vector<double> var_scale;
};

// sum_i w_i N(mean_i, diag(s_ell)); var_scale may contain zeros (point masses).
struct GaussianMixture {
    std::vector<double> weights;
    std::vector<CoeffField> means;
    std::vector<double> var_scale;
};

// Uniform measure on a finite atom set.
struct Empirical {
    std::vector<CoeffField> atoms;
};

using DataModel = std::variant<GaussianShift, GaussianMixture, Empirical>;

int band_limit(const DataModel& model);
// Throws ConfigError when the model is malformed or does not match `spec`.
void validate(const DataModel& model, const Spectrum& spec);
// True when mu_data << m, i.e. every variance scale is strictly positive.
bool kl_defined(const DataModel& model);
const char* model_name(const DataModel& model);

// Mixture view of any model; Empirical becomes equal weights with zero variance.
GaussianMixture as_mixture(const DataModel& model);

CoeffField sample_data(const DataModel& model, RngStream& rng);

// Mean and per-coefficient variance of mu_data.
DiagonalGaussian data_moments(const DataModel& model);

// Affine map x -> gain x + offset. `gain` is square; when `diagonal` is set only
// its diagonal is populated and consumers may take the fast path.
struct AffineForm {
    Eigen::MatrixXd gain;
    Eigen::VectorXd offset;
    bool diagonal = false;
};

// Approximation of E[X_0 | X_t = x] indexed by forward time t.
class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual int band_limit() const = 0;
    virtual CoeffField operator()(double t, const CoeffField& x) const = 0;
    // Exact affine representation at time t, when the map is affine.
    virtual std::optional<AffineForm> affine_form(double /*t*/) const { return std::nullopt; }
};

class GaussianDenoiser final : public Denoiser {
public:
    GaussianDenoiser(GaussianShift model, Spectrum spec);
    int band_limit() const override { return model_.mean.band_limit(); }
    CoeffField operator()(double t, const CoeffField& x) const override;
    std::optional<AffineForm> affine_form(double t) const override;

private:
    GaussianShift model_;
    Spectrum spec_;
};

// Bayes denoiser of a Gaussian mixture (Empirical atoms included).
class MixtureDenoiser final : public Denoiser {
public:
    MixtureDenoiser(GaussianMixture model, Spectrum spec);
    int band_limit() const override { return model_.means.front().band_limit(); }
    CoeffField operator()(double t, const CoeffField& x) const override;
    std::optional<AffineForm> affine_form(double t) const override;

private:
    GaussianMixture model_;
    Spectrum spec_;
};

// base(t, x) + offset for every t, x.
class ShiftedDenoiser final : public Denoiser {
public:
    ShiftedDenoiser(std::shared_ptr<const Denoiser> base, CoeffField offset);
    int band_limit() const override { return base_->band_limit(); }
    CoeffField operator()(double t, const CoeffField& x) const override;
    std::optional<AffineForm> affine_form(double t) const override;

private:
    std::shared_ptr<const Denoiser> base_;
    CoeffField offset_;
};

// Wraps an arbitrary callable; mostly for tests and ad-hoc models.
class FunctionDenoiser final : public Denoiser {
public:
    using Fn = std::function<CoeffField(double, const CoeffField&)>;
    FunctionDenoiser(int band_limit, Fn fn) : band_limit_(band_limit), fn_(std::move(fn)) {}
    int band_limit() const override { return band_limit_; }
    CoeffField operator()(double t, const CoeffField& x) const override { return fn_(t, x); }

private:
    int band_limit_;
    Fn fn_;
};

std::shared_ptr<const Denoiser> make_exact_denoiser(const DataModel& model, const Spectrum& spec);

// Exact Gaussian posterior mean, per coefficient:
// (e^{-t/2} s x + C (1 - e^{-t}) mu0) / (e^{-t} s + C (1 - e^{-t})).
CoeffField gaussian_denoiser(const GaussianShift& model, const Spectrum& spec, double t, const CoeffField& x);
CoeffField mixture_denoiser(const GaussianMixture& model, const Spectrum& spec, double t, const CoeffField& x);
CoeffField mixture_denoiser(const Empirical& model, const Spectrum& spec, double t, const CoeffField& x);

// sigma_t = e^{t/2} - e^{-t/2}
double sigma(double s);

// V = (d(t, x) - e^{-t/2} x) / sigma_t, the score in coefficient coordinates.
CoeffField score_from_denoiser(const Denoiser& d, double t, const CoeffField& x);

// C_ell * d/dx log(dP_t/dm)(x) from the explicit Gaussian forward marginal.
CoeffField gaussian_relative_score(const GaussianShift& model, const Spectrum& spec, double t,
                                   const CoeffField& x);

// E_{P_t} ||V_t||^2_CM for Gaussian data; equals 4 I(P_t | m).
double expected_score_cm_norm(const GaussianShift& model, const Spectrum& spec, double t);

// KL(mu_data | m); +infinity when some s_ell = 0.
double kl_to_prior(const GaussianShift& model, const Spectrum& spec);

// I(mu_data | m) = sum_k C_k E_{mu_data}[(d_k log rho_0 / 2)^2]; +infinity when some s_ell = 0.
double fisher_info(const GaussianShift& model, const Spectrum& spec);

struct Estimate {
    double value = 0.0;
    double std_error = 0.0;
};

// Monte Carlo Fisher information of a mixture with strictly positive variances.
Estimate fisher_info_mixture(const GaussianMixture& model, const Spectrum& spec, int n_mc, RngStream& rng);

}  // namespace sphdiff
