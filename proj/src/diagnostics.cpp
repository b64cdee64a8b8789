#include "sphdiff/diagnostics.hpp"

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <sstream>

#include "sphdiff/errors.hpp"
#include "sphdiff/learning.hpp"

namespace sphdiff {

double kl_diag_gaussian(std::span<const double> mean_a, std::span<const double> var_a,
                        std::span<const double> mean_b, std::span<const double> var_b) {
    const std::size_t n = mean_a.size();
    if (var_a.size() != n || mean_b.size() != n || var_b.size() != n)
        throw DomainError("kl_diag_gaussian: dimension mismatch");
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        if (!(var_a[k] > 0.0)) throw DomainError("kl_diag_gaussian: varA must be > 0");
        if (!(var_b[k] > 0.0)) throw DomainError("kl_diag_gaussian: varB must be > 0");
        const double r = var_a[k] / var_b[k];
        const double d = mean_a[k] - mean_b[k];
        acc += 0.5 * (r - 1.0 - std::log(r) + d * d / var_b[k]);
    }
    return acc;
}

double kl_gaussian(std::span<const double> mean_a, std::span<const double> var_a, const GaussianLaw& b) {
    const auto n = b.mean.size();
    if (static_cast<Eigen::Index>(mean_a.size()) != n || static_cast<Eigen::Index>(var_a.size()) != n)
        throw DomainError("kl_gaussian: dimension mismatch");
    const bool diagonal = b.cov.isDiagonal(0.0);
    if (diagonal) {
        const auto vb = b.variances();
        return kl_diag_gaussian(mean_a, var_a, b.mean_vector(), vb);
    }
    const Eigen::LLT<Eigen::MatrixXd> llt(b.cov);
    if (llt.info() != Eigen::Success) throw DomainError("kl_gaussian: covariance not positive definite");
    const Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(n, n));
    double logdet_b = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) logdet_b += 2.0 * std::log(llt.matrixL()(k, k));
    double tr = 0.0, logdet_a = 0.0;
    Eigen::VectorXd diff(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        if (!(var_a[k] > 0.0)) throw DomainError("kl_gaussian: varA must be > 0");
        tr += inv(k, k) * var_a[k];
        logdet_a += std::log(var_a[k]);
        diff(k) = b.mean(k) - mean_a[k];
    }
    return 0.5 * (tr - static_cast<double>(n) + diff.dot(inv * diff) + logdet_b - logdet_a);
}

ContractionCheck kl_contraction_check(const GaussianShift& model, const Spectrum& spec, double t) {
    if (!kl_defined(DataModel{model})) throw DomainError("kl_contraction_check: KL(mu_data | m) undefined");
    const auto law = marginal_law_gaussian(model.mean, model.var_scale, spec, t);
    const auto prior_var = spec.per_coeff();
    const std::vector<double> zeros(prior_var.size(), 0.0);
    ContractionCheck out;
    out.lhs = kl_diag_gaussian(law.mean, law.var, zeros, prior_var);
    out.rhs = std::exp(-0.5 * t) * kl_to_prior(model, spec);
    out.pass = out.lhs <= out.rhs + 1e-12;
    return out;
}

BoundTerms kl_error_bound(double horizon, double eps_sq, double h, double kl0, double fisher) {
    if (horizon < 0.0 || eps_sq < 0.0 || h < 0.0 || kl0 < 0.0 || fisher < 0.0)
        throw DomainError("kl_error_bound: inputs must be >= 0");
    BoundTerms t;
    t.term1 = std::exp(-0.5 * horizon) * kl0;
    t.term2 = horizon * eps_sq;
    t.term3 = 2.0 * h * std::max(4.0, h) * fisher;
    t.bound = t.term1 + t.term2 + t.term3;
    return t;
}

nlohmann::json BoundReport::to_json() const {
    return {
        {"T", horizon},
        {"h", h},
        {"eps_sq", eps_sq.value},
        {"eps_sq_se", eps_sq.std_error},
        {"kl0", kl0},
        {"fisher", fisher},
        {"term1", terms.term1},
        {"term2", terms.term2},
        {"term3", terms.term3},
        {"bound", terms.bound},
        {"measured_kl", measured_kl},
        {"measured_kind", measured_kind},
        {"pass", pass},
    };
}

std::string BoundReport::to_text() const {
    std::ostringstream os;
    os.precision(8);
    os << "KL bound report (T=" << horizon << ", h=" << h << ")\n"
       << "  KL(mu_data|m)        " << kl0 << '\n'
       << "  Fisher information   " << fisher << '\n'
       << "  eps^2                " << eps_sq.value << " +- " << eps_sq.std_error << '\n'
       << "  e^{-T/2} KL0         " << terms.term1 << '\n'
       << "  T eps^2              " << terms.term2 << '\n'
       << "  2h max(4,h) I        " << terms.term3 << '\n'
       << "  bound                " << terms.bound << '\n'
       << "  measured KL (" << measured_kind << ") " << measured_kl << '\n'
       << "  " << (pass ? "PASS" : "FAIL") << '\n';
    return os.str();
}

BoundReport verify_kl_bound(const GaussianShift& model, const Spectrum& spec, const TimeGrid& grid,
                            const BoundOptions& opts) {
    if (!kl_defined(DataModel{model}))
        throw DomainError("verify_kl_bound: KL(mu_data | m) is undefined for this model");
    BoundReport r;
    r.horizon = grid.horizon();
    r.h = grid.step();
    r.kl0 = kl_to_prior(model, spec);
    r.fisher = fisher_info(model, spec);

    const GaussianDenoiser exact(model, spec);
    const Denoiser& used = opts.learned ? *opts.learned : static_cast<const Denoiser&>(exact);
    if (opts.learned) r.eps_sq = h1_error(*opts.learned, exact, spec, grid, DataModel{model}, opts.n_mc, opts.seed);

    const auto data_mean = model.mean.vector();
    std::vector<double> data_var;
    for (int ell = 0; ell <= spec.band_limit(); ++ell) data_var.insert(data_var.end(), 2 * ell + 1, model.var_scale[ell]);

    bool affine = true;
    for (int j = 1; j <= grid.steps() && affine; ++j)
        affine = used.affine_form(grid.horizon() - grid.time(j - 1)).has_value();
    if (affine) {
        r.measured_kl = kl_gaussian(data_mean, data_var, exact_em_law(spec, grid, used));
        r.measured_kind = "exact";
    } else {
        std::vector<CoeffField> samples;
        samples.reserve(opts.n_fit_samples);
        for (int i = 0; i < opts.n_fit_samples; ++i) {
            RngStream rng(opts.seed, Purpose::Backward, static_cast<std::uint64_t>(i));
            samples.push_back(sample_backward(spec, grid, used, rng));
        }
        const auto fit = fit_diagonal_gaussian(samples);
        r.measured_kl = kl_diag_gaussian(data_mean, data_var, fit.mean, fit.var);
        r.measured_kind = "fitted";
    }
    r.terms = kl_error_bound(r.horizon, r.eps_sq.value, r.h, r.kl0, r.fisher);
    r.pass = r.measured_kl <= r.terms.bound;
    return r;
}

double score_identity_check(const GaussianShift& model, const Spectrum& spec, double t,
                            std::span<const double> x_values) {
    const GaussianDenoiser d(model, spec);
    double worst = 0.0;
    for (double x : x_values) {
        CoeffField field(model.mean.band_limit(), std::vector<double>(model.mean.size(), x));
        const CoeffField a = score_from_denoiser(d, t, field);
        const CoeffField b = gaussian_relative_score(model, spec, t, field);
        for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, std::abs(a[k] - b[k]));
    }
    return worst;
}

double hermite(int n, double u) {
    if (n < 0) throw DomainError("hermite: negative order");
    if (n == 0) return 1.0;
    double prev = 1.0, cur = u;
    for (int k = 1; k < n; ++k) {
        const double next = u * cur - k * prev;
        prev = cur;
        cur = next;
    }
    return cur;
}

namespace {

struct Moments {
    double sum = 0.0, sum_sq = 0.0;
    long long n = 0;
    void add(double v) {
        sum += v;
        sum_sq += v * v;
        ++n;
    }
    double mean() const { return sum / static_cast<double>(n); }
    double se() const {
        const double m = mean();
        const double var = std::max(0.0, (sum_sq / n - m * m) * n / (n - 1.0));
        return std::sqrt(var / n);
    }
};

}  // namespace

McCheck mehler_check(double c_ell, double t, int n, double x, int n_mc, std::uint64_t seed) {
    if (n < 1 || n > 3) throw DomainError("mehler_check: order must be 1, 2 or 3");
    if (n_mc < 2) throw DomainError("mehler_check: need at least two samples");
    RngStream rng(seed, Purpose::Diagnostics, static_cast<std::uint64_t>(n));
    const double sd = std::sqrt(c_ell);
    Moments acc;
    for (int i = 0; i < n_mc; ++i) acc.add(hermite(n, ou_transition(x, c_ell, t, rng) / sd));
    McCheck out;
    out.estimate = acc.mean();
    out.std_error = acc.se();
    out.reference = std::exp(-0.5 * n * t) * hermite(n, x / sd);
    out.pass = std::abs(out.estimate - out.reference) <= out.tolerance_se * out.std_error;
    return out;
}

McCheck commutation_check(const std::function<double(double)>& u, const std::function<double(double)>& du,
                     double c_ell, double t, double a, int n_mc, double fd_step, std::uint64_t seed) {
    if (n_mc < 2) throw DomainError("commutation_check: need at least two samples");
    const double decay = std::exp(-0.5 * t);
    const double sd = std::sqrt(c_ell * -std::expm1(-t));
    RngStream fd_rng(seed, Purpose::Diagnostics, 100);
    RngStream grad_rng(seed, Purpose::Diagnostics, 101);
    Moments fd, grad;
    for (int i = 0; i < n_mc; ++i) {
        const double z = sd * fd_rng.normal();
        fd.add((u(decay * (a + fd_step) + z) - u(decay * (a - fd_step) + z)) / (2.0 * fd_step));
        grad.add(decay * du(decay * a + sd * grad_rng.normal()));
    }
    McCheck out;
    out.estimate = fd.mean();
    out.std_error = fd.se();
    out.reference = grad.mean();
    out.reference_se = grad.se();
    out.pass = std::abs(out.estimate - out.reference) <=
               out.tolerance_se * std::hypot(out.std_error, out.reference_se);
    return out;
}

std::vector<SpectrumEstimate> estimate_power_spectrum(std::span<const CoeffField> samples, double level) {
    if (samples.empty()) throw DomainError("estimate_power_spectrum: no samples");
    if (!(level > 0.0 && level < 1.0)) throw DomainError("estimate_power_spectrum: level must be in (0, 1)");
    const int L = samples.front().band_limit();
    std::vector<SpectrumEstimate> out;
    for (int ell = 0; ell <= L; ++ell) {
        double acc = 0.0;
        for (const auto& s : samples) {
            if (s.band_limit() != L) throw DomainError("estimate_power_spectrum: mixed band limits");
            for (int m = -ell; m <= ell; ++m) {
                const double a = s[HarmonicIndex{ell, m}.flat()];
                acc += a * a;
            }
        }
        SpectrumEstimate e;
        e.ell = ell;
        e.dof = static_cast<long long>(samples.size()) * (2 * ell + 1);
        e.c_hat = acc / static_cast<double>(e.dof);
        const boost::math::chi_squared dist(static_cast<double>(e.dof));
        const double alpha = 1.0 - level;
        // dof * Chat / C ~ chi^2(dof)
        e.ci_lo = acc / boost::math::quantile(dist, 1.0 - 0.5 * alpha);
        e.ci_hi = acc / boost::math::quantile(dist, 0.5 * alpha);
        out.push_back(e);
    }
    return out;
}

bool spectrum_within_ci(std::span<const SpectrumEstimate> est, const Spectrum& spec) {
    return std::all_of(est.begin(), est.end(), [&spec](const SpectrumEstimate& e) {
        return e.ell <= spec.band_limit() && spec[e.ell] >= e.ci_lo && spec[e.ell] <= e.ci_hi;
    });
}

DiagonalGaussian fit_diagonal_gaussian(std::span<const CoeffField> samples) {
    if (samples.size() < 2) throw DomainError("fit_diagonal_gaussian: need at least two samples");
    const std::size_t n = samples.front().size();
    DiagonalGaussian out{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
    for (const auto& s : samples)
        for (std::size_t k = 0; k < n; ++k) out.mean[k] += s[k];
    for (double& m : out.mean) m /= static_cast<double>(samples.size());
    for (const auto& s : samples)
        for (std::size_t k = 0; k < n; ++k) out.var[k] += (s[k] - out.mean[k]) * (s[k] - out.mean[k]);
    for (double& v : out.var) v /= static_cast<double>(samples.size() - 1);
    return out;
}

HarmonicCheck harmonic_check(int band_limit, const SphereGrid& grid, int n_fields, std::uint64_t seed) {
    if (grid.max_band_limit() < band_limit) throw DomainError("harmonic_check: grid too coarse");
    const int K = num_coeffs(band_limit);
    const int n_points = grid.n_theta() * grid.n_phi();
    Eigen::MatrixXd Y(n_points, K);
    Eigen::VectorXd w(n_points);
    for (int i = 0; i < grid.n_theta(); ++i) {
        const auto p = normalized_legendre(band_limit, grid.cos_theta(i));
        for (int k = 0; k < grid.n_phi(); ++k) {
            const int row = i * grid.n_phi() + k;
            const double phi = grid.phi(k);
            w(row) = grid.theta_weight(i) * grid.phi_weight();
            for (int ell = 0; ell <= band_limit; ++ell) {
                Y(row, HarmonicIndex{ell, 0}.flat()) = p[legendre_index(ell, 0)];
                for (int m = 1; m <= ell; ++m) {
                    const double v = std::sqrt(2.0) * p[legendre_index(ell, m)];
                    Y(row, HarmonicIndex{ell, m}.flat()) = v * std::cos(m * phi);
                    Y(row, HarmonicIndex{ell, -m}.flat()) = v * std::sin(m * phi);
                }
            }
        }
    }
    const Eigen::MatrixXd gram = Y.transpose() * w.asDiagonal() * Y;
    HarmonicCheck out;
    out.gram_max_dev = (gram - Eigen::MatrixXd::Identity(K, K)).cwiseAbs().maxCoeff();
    for (int f = 0; f < n_fields; ++f) {
        RngStream rng(seed, Purpose::Diagnostics, static_cast<std::uint64_t>(f));
        CoeffField a(band_limit);
        for (std::size_t k = 0; k < a.size(); ++k) a[k] = rng.normal();
        const CoeffField back = analyze(synthesize(a, grid), band_limit);
        for (std::size_t k = 0; k < a.size(); ++k)
            out.roundtrip_max_err = std::max(out.roundtrip_max_err, std::abs(back[k] - a[k]));
    }
    return out;
}

StationarityCheck stationarity_check(const Spectrum& spec, const TimeGrid& grid, int n_paths, std::uint64_t seed) {
    if (n_paths < 2) throw DomainError("stationarity_check: need at least two paths");
    const auto c = spec.per_coeff();
    std::vector<Moments> acc(c.size());
    for (int i = 0; i < n_paths; ++i) {
        RngStream prior_rng(seed, Purpose::PriorSample, static_cast<std::uint64_t>(i));
        RngStream fwd_rng(seed, Purpose::Forward, static_cast<std::uint64_t>(i));
        CoeffField x = sample_prior(spec, prior_rng);
        for (int j = 1; j <= grid.steps(); ++j) x = ou_transition(x, spec, grid.time(j) - grid.time(j - 1), fwd_rng);
        for (std::size_t k = 0; k < c.size(); ++k) acc[k].add(x[k] * x[k]);
    }
    StationarityCheck out;
    for (std::size_t k = 0; k < c.size(); ++k) {
        // Mean is known to be zero, so the second moment is the variance estimator.
        out.variance.push_back(acc[k].mean());
        out.std_error.push_back(acc[k].se());
        out.z_score.push_back((acc[k].mean() - c[k]) / acc[k].se());
        out.max_abs_z = std::max(out.max_abs_z, std::abs(out.z_score.back()));
    }
    return out;
}

TraceReport trace_convergence(const MaternParams& p, int start, int max_band_limit, double tol) {
    if (start < 1) throw DomainError("trace_convergence: start must be >= 1");
    TraceReport r;
    r.reference = trace_reference(p);
    r.ell0_term = matern_spectrum(p, 0)[0];
    for (int L = start; L <= max_band_limit; L *= 2) {
        TraceRow row{L, trace(matern_spectrum(p, L)), 0.0};
        if (!r.rows.empty()) row.rel_change = std::abs(row.trace - r.rows.back().trace) / std::abs(row.trace);
        r.rows.push_back(row);
    }
    r.converged = r.rows.size() >= 2 && r.rows.back().rel_change < tol;
    return r;
}

}  // namespace sphdiff
