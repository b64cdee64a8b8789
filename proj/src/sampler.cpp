#include "sphdiff/sampler.hpp"

#include <cmath>

#include "sphdiff/errors.hpp"

namespace sphdiff {

CoeffField em_step(const CoeffField& y, int j, const TimeGrid& grid, const Denoiser& d, const CoeffField& noise) {
    if (j < 1 || j > grid.steps()) throw DomainError("em_step: step index out of range");
    const double h = grid.step();
    const double s = grid.horizon() - grid.time(j - 1);
    const double decay = std::exp(-0.5 * s);
    const double drift_scale = h / sigma(s);
    const CoeffField pred = d(s, y);
    const double sqrt_h = std::sqrt(h);
    CoeffField out(y.band_limit());
    for (std::size_t k = 0; k < y.size(); ++k)
        out[k] = y[k] - 0.5 * h * y[k] + drift_scale * (pred[k] - decay * y[k]) + sqrt_h * noise[k];
    return out;
}

CoeffField em_step(const CoeffField& y, int j, const TimeGrid& grid, const Spectrum& spec, const Denoiser& d,
                   RngStream& rng) {
    return em_step(y, j, grid, d, sample_prior(spec, rng));
}

CoeffField sample_backward(const Spectrum& spec, const TimeGrid& grid, const Denoiser& d, RngStream& rng,
                           const PathObserver& observer) {
    if (d.band_limit() != spec.band_limit()) throw DomainError("sample_backward: denoiser band limit mismatch");
    CoeffField y = sample_prior(spec, rng);
    if (observer) observer(0, 0.0, y);
    for (int j = 1; j <= grid.steps(); ++j) {
        y = em_step(y, j, grid, spec, d, rng);
        if (observer) observer(j, grid.time(j), y);
    }
    return y;
}

std::vector<double> GaussianLaw::variances() const {
    std::vector<double> v(static_cast<std::size_t>(cov.rows()));
    for (Eigen::Index k = 0; k < cov.rows(); ++k) v[k] = cov(k, k);
    return v;
}

namespace {

// Propagates (mean, cov) through the affine EM map, handing each law to `sink`.
GaussianLaw propagate_em_law(const Spectrum& spec, const TimeGrid& grid, const Denoiser& d,
                             const std::function<void(const GaussianLaw&)>& sink) {
    const auto c = spec.per_coeff();
    const auto n = static_cast<Eigen::Index>(c.size());
    const Eigen::Map<const Eigen::VectorXd> prior_var(c.data(), n);
    const double h = grid.step();

    GaussianLaw law{Eigen::VectorXd::Zero(n), Eigen::MatrixXd(prior_var.asDiagonal())};
    if (sink) sink(law);
    bool all_diagonal = true;
    for (int j = 1; j <= grid.steps(); ++j) {
        const double s = grid.horizon() - grid.time(j - 1);
        const auto form = d.affine_form(s);
        if (!form) throw DomainError("exact_em_law: denoiser is not affine at forward time " + std::to_string(s));
        if (form->gain.rows() != n) throw DomainError("exact_em_law: denoiser dimension mismatch");
        const double drift_scale = h / sigma(s);
        const double self = 1.0 - 0.5 * h - drift_scale * std::exp(-0.5 * s);
        all_diagonal = all_diagonal && form->diagonal;
        if (all_diagonal) {
            for (Eigen::Index k = 0; k < n; ++k) {
                const double a = self + drift_scale * form->gain(k, k);
                law.mean(k) = a * law.mean(k) + drift_scale * form->offset(k);
                law.cov(k, k) = a * a * law.cov(k, k) + h * prior_var(k);
            }
        } else {
            Eigen::MatrixXd A = drift_scale * form->gain;
            A.diagonal().array() += self;
            law.mean = A * law.mean + drift_scale * form->offset;
            law.cov = A * law.cov * A.transpose();
            law.cov.diagonal() += h * prior_var;
        }
        if (sink) sink(law);
    }
    return law;
}

}  // namespace

std::vector<GaussianLaw> exact_em_laws(const Spectrum& spec, const TimeGrid& grid, const Denoiser& d) {
    std::vector<GaussianLaw> laws;
    laws.reserve(grid.steps() + 1);
    propagate_em_law(spec, grid, d, [&laws](const GaussianLaw& law) { laws.push_back(law); });
    return laws;
}

GaussianLaw exact_em_law(const Spectrum& spec, const TimeGrid& grid, const Denoiser& d) {
    return propagate_em_law(spec, grid, d, {});
}

GaussianLaw exact_em_law(const Spectrum& spec, const TimeGrid& grid, const GaussianShift& model) {
    return exact_em_law(spec, grid, GaussianDenoiser(model, spec));
}

}  // namespace sphdiff
