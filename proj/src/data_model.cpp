#include "sphdiff/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "sphdiff/errors.hpp"

namespace sphdiff {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void require_positive_time(double t, const char* who) {
    if (!(t > 0.0)) throw DomainError(std::string(who) + ": forward time must be > 0");
}

void check_var_scale(const std::vector<double>& s, int L, const std::string& path) {
    if (s.size() != static_cast<std::size_t>(L + 1))
        throw ConfigError("expected " + std::to_string(L + 1) + " per-degree variances, got " +
                              std::to_string(s.size()),
                          path);
    for (std::size_t ell = 0; ell < s.size(); ++ell)
        if (!(s[ell] >= 0.0) || !std::isfinite(s[ell]))
            throw ConfigError("variance must be finite and >= 0", path + "[" + std::to_string(ell) + "]");
}

}  // namespace

int band_limit(const DataModel& model) {
    return std::visit(Overloaded{
                          [](const GaussianShift& g) { return g.mean.band_limit(); },
                          [](const GaussianMixture& g) {
                              if (g.means.empty()) throw ConfigError("mixture has no components");
                              return g.means.front().band_limit();
                          },
                          [](const Empirical& e) {
                              if (e.atoms.empty()) throw ConfigError("empirical model has no atoms");
                              return e.atoms.front().band_limit();
                          },
                      },
                      model);
}

void validate(const DataModel& model, const Spectrum& spec) {
    const int L = spec.band_limit();
    auto check_field = [L](const CoeffField& f, const std::string& path) {
        if (f.band_limit() != L)
            throw ConfigError("band limit " + std::to_string(f.band_limit()) + " does not match " +
                                  std::to_string(L),
                              path);
        for (double v : f.values())
            if (!std::isfinite(v)) throw ConfigError("non-finite coefficient", path);
    };
    std::visit(Overloaded{
                   [&](const GaussianShift& g) {
                       check_field(g.mean, "data.mean");
                       check_var_scale(g.var_scale, L, "data.var_scale");
                   },
                   [&](const GaussianMixture& g) {
                       if (g.means.empty()) throw ConfigError("mixture has no components", "data.components");
                       if (g.weights.size() != g.means.size())
                           throw ConfigError("one weight per component required", "data.components");
                       double total = 0.0;
                       for (std::size_t i = 0; i < g.means.size(); ++i) {
                           const std::string p = "data.components[" + std::to_string(i) + "]";
                           if (!(g.weights[i] > 0.0)) throw ConfigError("weight must be > 0", p + ".weight");
                           total += g.weights[i];
                           check_field(g.means[i], p + ".mean");
                       }
                       if (std::abs(total - 1.0) > 1e-12)
                           throw ConfigError("weights must sum to 1 (got " + std::to_string(total) + ")",
                                             "data.components");
                       check_var_scale(g.var_scale, L, "data.var_scale");
                   },
                   [&](const Empirical& e) {
                       if (e.atoms.empty()) throw ConfigError("empirical model has no atoms", "data.atoms");
                       for (std::size_t i = 0; i < e.atoms.size(); ++i)
                           check_field(e.atoms[i], "data.atoms[" + std::to_string(i) + "]");
                   },
               },
               model);
}

bool kl_defined(const DataModel& model) {
    auto all_positive = [](const std::vector<double>& s) {
        return std::all_of(s.begin(), s.end(), [](double v) { return v > 0.0; });
    };
    return std::visit(Overloaded{
                          [&](const GaussianShift& g) { return all_positive(g.var_scale); },
                          [&](const GaussianMixture& g) { return all_positive(g.var_scale); },
                          [](const Empirical&) { return false; },
                      },
                      model);
}

const char* model_name(const DataModel& model) {
    return std::visit(Overloaded{
                          [](const GaussianShift&) { return "gaussian_shift"; },
                          [](const GaussianMixture&) { return "gaussian_mixture"; },
                          [](const Empirical&) { return "empirical"; },
                      },
                      model);
}

GaussianMixture as_mixture(const DataModel& model) {
    return std::visit(Overloaded{
                          [](const GaussianShift& g) { return GaussianMixture{{1.0}, {g.mean}, g.var_scale}; },
                          [](const GaussianMixture& g) { return g; },
                          [](const Empirical& e) {
                              const int L = e.atoms.front().band_limit();
                              const double w = 1.0 / static_cast<double>(e.atoms.size());
                              return GaussianMixture{std::vector<double>(e.atoms.size(), w), e.atoms,
                                                     std::vector<double>(L + 1, 0.0)};
                          },
                      },
                      model);
}

CoeffField sample_data(const DataModel& model, RngStream& rng) {
    auto gaussian_draw = [&rng](const CoeffField& mean, const std::vector<double>& s) {
        CoeffField out = mean;
        for (int ell = 0; ell <= mean.band_limit(); ++ell) {
            const double sd = std::sqrt(s[ell]);
            for (int m = -ell; m <= ell; ++m) out[HarmonicIndex{ell, m}.flat()] += sd * rng.normal();
        }
        return out;
    };
    return std::visit(Overloaded{
                          [&](const GaussianShift& g) { return gaussian_draw(g.mean, g.var_scale); },
                          [&](const GaussianMixture& g) {
                              double u = rng.uniform();
                              std::size_t i = 0;
                              for (; i + 1 < g.weights.size(); ++i) {
                                  if (u < g.weights[i]) break;
                                  u -= g.weights[i];
                              }
                              return gaussian_draw(g.means[i], g.var_scale);
                          },
                          [&](const Empirical& e) { return e.atoms[rng.below(e.atoms.size())]; },
                      },
                      model);
}

DiagonalGaussian data_moments(const DataModel& model) {
    const GaussianMixture mix = as_mixture(model);
    const std::size_t n = mix.means.front().size();
    const auto deg = degree_table(mix.means.front().band_limit());
    DiagonalGaussian out{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
    for (std::size_t i = 0; i < mix.means.size(); ++i)
        for (std::size_t k = 0; k < n; ++k) out.mean[k] += mix.weights[i] * mix.means[i][k];
    for (std::size_t k = 0; k < n; ++k) {
        double second = 0.0;
        for (std::size_t i = 0; i < mix.means.size(); ++i) {
            const double d = mix.means[i][k] - out.mean[k];
            second += mix.weights[i] * d * d;
        }
        out.var[k] = mix.var_scale[deg[k]] + second;
    }
    return out;
}

double sigma(double s) {
    if (s < 0.0) throw DomainError("sigma: s must be >= 0");
    return 2.0 * std::sinh(0.5 * s);
}

// ---------------------------------------------------------------------------
// Gaussian data

CoeffField gaussian_denoiser(const GaussianShift& model, const Spectrum& spec, double t, const CoeffField& x) {
    require_positive_time(t, "gaussian_denoiser");
    const int L = x.band_limit();
    if (L != model.mean.band_limit()) throw DomainError("gaussian_denoiser: band limit mismatch");
    const double decay = std::exp(-0.5 * t);
    const double frac = -std::expm1(-t);
    CoeffField out(L);
    for (int ell = 0; ell <= L; ++ell) {
        const double s = model.var_scale[ell];
        const double noise = spec[ell] * frac;
        const double denom = decay * decay * s + noise;
        for (int m = -ell; m <= ell; ++m) {
            const int k = HarmonicIndex{ell, m}.flat();
            out[k] = (decay * s * x[k] + noise * model.mean[k]) / denom;
        }
    }
    return out;
}

GaussianDenoiser::GaussianDenoiser(GaussianShift model, Spectrum spec)
    : model_(std::move(model)), spec_(std::move(spec)) {
    validate(DataModel{model_}, spec_);
}

CoeffField GaussianDenoiser::operator()(double t, const CoeffField& x) const {
    return gaussian_denoiser(model_, spec_, t, x);
}

std::optional<AffineForm> GaussianDenoiser::affine_form(double t) const {
    require_positive_time(t, "GaussianDenoiser::affine_form");
    const int L = band_limit();
    const int n = num_coeffs(L);
    AffineForm f{Eigen::MatrixXd::Zero(n, n), Eigen::VectorXd::Zero(n), true};
    const double decay = std::exp(-0.5 * t);
    const double frac = -std::expm1(-t);
    for (int ell = 0; ell <= L; ++ell) {
        const double s = model_.var_scale[ell];
        const double noise = spec_[ell] * frac;
        const double denom = decay * decay * s + noise;
        for (int m = -ell; m <= ell; ++m) {
            const int k = HarmonicIndex{ell, m}.flat();
            f.gain(k, k) = decay * s / denom;
            f.offset(k) = noise * model_.mean[k] / denom;
        }
    }
    return f;
}

CoeffField gaussian_relative_score(const GaussianShift& model, const Spectrum& spec, double t,
                                   const CoeffField& x) {
    require_positive_time(t, "gaussian_relative_score");
    const auto law = marginal_law_gaussian(model.mean, model.var_scale, spec, t);
    const auto deg = degree_table(x.band_limit());
    CoeffField out(x.band_limit());
    // d/dx [log N(x; m_t, v_t) - log N(x; 0, C)] = -(x - m_t)/v_t + x/C
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double c = spec[deg[k]];
        out[k] = x[k] - c * (x[k] - law.mean[k]) / law.var[k];
    }
    return out;
}

double expected_score_cm_norm(const GaussianShift& model, const Spectrum& spec, double t) {
    require_positive_time(t, "expected_score_cm_norm");
    const auto law = marginal_law_gaussian(model.mean, model.var_scale, spec, t);
    const auto deg = degree_table(model.mean.band_limit());
    double acc = 0.0;
    for (std::size_t k = 0; k < law.mean.size(); ++k) {
        // V = alpha x + beta with x ~ N(m_t, v_t)
        const double c = spec[deg[k]];
        const double alpha = 1.0 - c / law.var[k];
        const double beta = c * law.mean[k] / law.var[k];
        const double mv = alpha * law.mean[k] + beta;
        acc += (mv * mv + alpha * alpha * law.var[k]) / c;
    }
    return acc;
}

double kl_to_prior(const GaussianShift& model, const Spectrum& spec) {
    const auto deg = degree_table(model.mean.band_limit());
    double acc = 0.0;
    for (std::size_t k = 0; k < model.mean.size(); ++k) {
        const double s = model.var_scale[deg[k]];
        const double c = spec[deg[k]];
        if (!(s > 0.0)) return std::numeric_limits<double>::infinity();
        const double r = s / c;
        acc += 0.5 * (r - 1.0 - std::log(r) + model.mean[k] * model.mean[k] / c);
    }
    return acc;
}

double fisher_info(const GaussianShift& model, const Spectrum& spec) {
    const auto deg = degree_table(model.mean.band_limit());
    double acc = 0.0;
    for (std::size_t k = 0; k < model.mean.size(); ++k) {
        const double s = model.var_scale[deg[k]];
        const double c = spec[deg[k]];
        if (!(s > 0.0)) return std::numeric_limits<double>::infinity();
        // g(a) = a (1/(2C) - 1/(2s)) + mu/(2s), a ~ N(mu, s)
        const double slope = 0.5 / c - 0.5 / s;
        const double mean_g = model.mean[k] * slope + 0.5 * model.mean[k] / s;
        acc += c * (mean_g * mean_g + slope * slope * s);
    }
    return acc;
}

// ---------------------------------------------------------------------------
// Mixtures

CoeffField mixture_denoiser(const GaussianMixture& model, const Spectrum& spec, double t, const CoeffField& x) {
    require_positive_time(t, "mixture_denoiser");
    const int L = x.band_limit();
    const std::size_t n = x.size();
    const std::size_t ncomp = model.means.size();
    if (ncomp == 0) throw DomainError("mixture_denoiser: no components");
    const auto deg = degree_table(L);
    const double decay = std::exp(-0.5 * t);
    const double frac = -std::expm1(-t);

    std::vector<double> var(n), gain(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double s = model.var_scale[deg[k]];
        var[k] = decay * decay * s + spec[deg[k]] * frac;
        gain[k] = decay * s / var[k];
    }
    // Responsibilities in log space; the Gaussian normalizers cancel (shared variance).
    std::vector<double> logw(ncomp);
    for (std::size_t i = 0; i < ncomp; ++i) {
        double q = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            const double r = x[k] - decay * model.means[i][k];
            q += r * r / var[k];
        }
        logw[i] = std::log(model.weights[i]) - 0.5 * q;
    }
    const double lmax = *std::max_element(logw.begin(), logw.end());
    double z = 0.0;
    for (double& lw : logw) z += (lw = std::exp(lw - lmax));

    CoeffField out(L);
    for (std::size_t i = 0; i < ncomp; ++i) {
        const double r = logw[i] / z;
        if (r == 0.0) continue;
        for (std::size_t k = 0; k < n; ++k) {
            const double mu = model.means[i][k];
            out[k] += r * (mu + gain[k] * (x[k] - decay * mu));
        }
    }
    return out;
}

CoeffField mixture_denoiser(const Empirical& model, const Spectrum& spec, double t, const CoeffField& x) {
    return mixture_denoiser(as_mixture(DataModel{model}), spec, t, x);
}

MixtureDenoiser::MixtureDenoiser(GaussianMixture model, Spectrum spec)
    : model_(std::move(model)), spec_(std::move(spec)) {
    validate(DataModel{model_}, spec_);
}

CoeffField MixtureDenoiser::operator()(double t, const CoeffField& x) const {
    return mixture_denoiser(model_, spec_, t, x);
}

std::optional<AffineForm> MixtureDenoiser::affine_form(double t) const {
    if (model_.means.size() != 1) return std::nullopt;
    return GaussianDenoiser(GaussianShift{model_.means.front(), model_.var_scale}, spec_).affine_form(t);
}

Estimate fisher_info_mixture(const GaussianMixture& model, const Spectrum& spec, int n_mc, RngStream& rng) {
    if (n_mc < 2) throw DomainError("fisher_info_mixture: need at least two samples");
    if (!kl_defined(DataModel{model})) return {std::numeric_limits<double>::infinity(), 0.0};
    const int L = model.means.front().band_limit();
    const auto deg = degree_table(L);
    const std::size_t n = model.means.front().size();
    const std::size_t ncomp = model.means.size();
    double sum = 0.0, sum_sq = 0.0;
    std::vector<double> logw(ncomp);
    for (int draw = 0; draw < n_mc; ++draw) {
        const CoeffField a = sample_data(DataModel{model}, rng);
        for (std::size_t i = 0; i < ncomp; ++i) {
            double q = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                const double r = a[k] - model.means[i][k];
                q += r * r / model.var_scale[deg[k]];
            }
            logw[i] = std::log(model.weights[i]) - 0.5 * q;
        }
        const double lmax = *std::max_element(logw.begin(), logw.end());
        double z = 0.0;
        for (double& lw : logw) z += (lw = std::exp(lw - lmax));
        double value = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            const double s = model.var_scale[deg[k]];
            const double c = spec[deg[k]];
            double grad = a[k] / c;
            for (std::size_t i = 0; i < ncomp; ++i) grad -= (logw[i] / z) * (a[k] - model.means[i][k]) / s;
            value += 0.25 * c * grad * grad;
        }
        sum += value;
        sum_sq += value * value;
    }
    const double mean = sum / n_mc;
    const double var = std::max(0.0, (sum_sq / n_mc - mean * mean) * n_mc / (n_mc - 1.0));
    return {mean, std::sqrt(var / n_mc)};
}

// ---------------------------------------------------------------------------

ShiftedDenoiser::ShiftedDenoiser(std::shared_ptr<const Denoiser> base, CoeffField offset)
    : base_(std::move(base)), offset_(std::move(offset)) {
    if (!base_) throw DomainError("ShiftedDenoiser: null base");
    if (offset_.band_limit() != base_->band_limit()) throw DomainError("ShiftedDenoiser: band limit mismatch");
}

CoeffField ShiftedDenoiser::operator()(double t, const CoeffField& x) const { return (*base_)(t, x) + offset_; }

std::optional<AffineForm> ShiftedDenoiser::affine_form(double t) const {
    auto f = base_->affine_form(t);
    if (f)
        for (std::size_t k = 0; k < offset_.size(); ++k) f->offset(static_cast<Eigen::Index>(k)) += offset_[k];
    return f;
}

std::shared_ptr<const Denoiser> make_exact_denoiser(const DataModel& model, const Spectrum& spec) {
    return std::visit(Overloaded{
                          [&](const GaussianShift& g) -> std::shared_ptr<const Denoiser> {
                              return std::make_shared<GaussianDenoiser>(g, spec);
                          },
                          [&](const auto&) -> std::shared_ptr<const Denoiser> {
                              return std::make_shared<MixtureDenoiser>(as_mixture(model), spec);
                          },
                      },
                      model);
}

CoeffField score_from_denoiser(const Denoiser& d, double t, const CoeffField& x) {
    require_positive_time(t, "score_from_denoiser");
    CoeffField v = d(t, x);
    const double decay = std::exp(-0.5 * t);
    const double inv_sigma = 1.0 / sigma(t);
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = (v[k] - decay * x[k]) * inv_sigma;
    return v;
}

}  // namespace sphdiff
