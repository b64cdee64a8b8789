#include <doctest.h>

#include "helpers.hpp"
#include "sphdiff/diagnostics.hpp"
#include "sphdiff/errors.hpp"

using namespace sphdiff;

namespace {

CoeffField scalar(double v) {
    CoeffField f(0);
    f[0] = v;
    return f;
}

GaussianShift random_model(const Spectrum& spec, RngStream& rng) {
    const int L = spec.band_limit();
    CoeffField mean(L);
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] = 0.5 * rng.normal() * std::sqrt(spec.per_coeff()[k]);
    std::vector<double> s(L + 1);
    for (int ell = 0; ell <= L; ++ell) s[ell] = spec[ell] * (0.2 + 2.0 * rng.uniform());
    return {mean, s};
}

}  // namespace

TEST_CASE("diagonal Gaussian KL") {
    const std::vector<double> zero{0.0}, one{1.0}, two{2.0}, mu{1.0};
    CHECK(kl_diag_gaussian(mu, one, zero, one) == doctest::Approx(0.5));
    CHECK(kl_diag_gaussian(zero, two, zero, one) == doctest::Approx(0.5 * (1.0 - std::log(2.0))).epsilon(1e-12));
    CHECK(kl_diag_gaussian(zero, two, zero, one) == doctest::Approx(0.15343).epsilon(1e-4));
    CHECK(kl_diag_gaussian(mu, two, mu, two) == 0.0);

    GaussianLaw b{Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1)};
    CHECK(kl_gaussian(mu, one, b) == doctest::Approx(0.5));

    // Dense right-hand side against a diagonal one with equal entries.
    GaussianLaw d{Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Zero(2, 2)};
    d.cov.diagonal() << 1.5, 0.5;
    const std::vector<double> ma{0.3, -0.2}, va{1.0, 0.7}, mb{0.0, 0.0}, vb{1.5, 0.5};
    CHECK(kl_gaussian(ma, va, d) == doctest::Approx(kl_diag_gaussian(ma, va, mb, vb)).epsilon(1e-12));
}

TEST_CASE("KL contraction") {
    const Spectrum one({1.0});
    const auto c = kl_contraction_check(GaussianShift{scalar(1.0), {1.0}}, one, 2.0);
    CHECK(c.lhs == doctest::Approx(0.5 * std::exp(-2.0)).epsilon(1e-12));
    CHECK(c.lhs == doctest::Approx(0.06767).epsilon(1e-4));
    CHECK(c.rhs == doctest::Approx(0.18394).epsilon(1e-4));
    CHECK(c.pass);

    const Spectrum spec = matern_spectrum({1.0, 1.0}, 3);
    RngStream rng(11, Purpose::Test, 0);
    for (int i = 0; i < 20; ++i) {
        const GaussianShift model = random_model(spec, rng);
        for (double t : {0.01, 0.1, 0.5, 1.0, 2.0, 4.0, 8.0}) {
            const auto r = kl_contraction_check(model, spec, t);
            CHECK(r.pass);
            CHECK(r.lhs <= r.rhs + 1e-15);
        }
    }
}

TEST_CASE("bound arithmetic") {
    auto b = kl_error_bound(8.0, 0.0, 0.05, 0.5, 0.25);
    CHECK(b.bound == doctest::Approx(0.1091578).epsilon(1e-6));
    CHECK(b.term1 == doctest::Approx(std::exp(-4.0) * 0.5));
    CHECK(b.term3 == doctest::Approx(0.1));
    CHECK(b.term2 == 0.0);

    b = kl_error_bound(10.0, 0.0, 5.0, 0.0, 1.0);
    CHECK(b.term3 == doctest::Approx(50.0));
    b = kl_error_bound(8.0, 0.02, 0.05, 0.0, 0.0);
    CHECK(b.term2 == doctest::Approx(0.16));
    CHECK(kl_error_bound(8.0, 0.0, 0.05, 0.0, 0.0).bound == 0.0);
}

TEST_CASE("bound verification on the reference configuration") {
    const Spectrum one({1.0});
    const GaussianShift model{scalar(1.0), {1.0}};
    const BoundReport r = verify_kl_bound(model, one, TimeGrid(8.0, 160));
    CHECK(r.kl0 == doctest::Approx(0.5));
    CHECK(r.fisher == doctest::Approx(0.25));
    CHECK(r.eps_sq.value == 0.0);
    CHECK(r.terms.bound == doctest::Approx(0.1091578).epsilon(1e-6));
    CHECK(r.measured_kind == "exact");
    CHECK(r.measured_kl < r.terms.bound);
    CHECK(r.pass);

    const auto j = r.to_json();
    CHECK(j.at("pass").get<bool>());
    CHECK(r.to_text().find("bound") != std::string::npos);

    // The bound should hold across step sizes on the default L = 8 configuration.
    const Spectrum spec = matern_spectrum({1.0, 1.0}, 8);
    CoeffField mean(8);
    mean[0] = 1.0;
    const GaussianShift big{mean, spec.values()};
    for (int m : {8, 16, 40, 80, 160, 320, 640}) {
        const BoundReport s = verify_kl_bound(big, spec, TimeGrid(8.0, m));
        CHECK(s.pass);
        CHECK(s.measured_kl <= s.terms.bound);
    }

    CHECK_THROWS_AS(verify_kl_bound(GaussianShift{scalar(1.0), {0.0}}, one, TimeGrid(8.0, 160)), DomainError);
}

TEST_CASE("bound with a shifted score") {
    const Spectrum one({1.0});
    const GaussianShift model{scalar(1.0), {1.0}};
    const ShiftedDenoiser shifted(make_exact_denoiser(DataModel{model}, one), scalar(0.1));
    BoundOptions opts;
    opts.learned = &shifted;
    opts.n_mc = 200;
    const BoundReport r = verify_kl_bound(model, one, TimeGrid(8.0, 160), opts);
    CHECK(r.eps_sq.value == doctest::Approx(0.01).epsilon(1e-9));
    CHECK(r.terms.term2 == doctest::Approx(0.08).epsilon(1e-9));
    CHECK(r.pass);
}

TEST_CASE("score identity") {
    const Spectrum spec = matern_spectrum({1.0, 1.0}, 2);
    CoeffField mean(2);
    mean[0] = 1.0;
    mean[5] = -0.05;
    const GaussianShift model{mean, {0.5, 0.2, 0.01}};
    std::vector<double> xs;
    for (double x = -5.0; x <= 5.0; x += 0.25) xs.push_back(x);
    for (double t : {0.05, 0.5, 1.0, 2.0, 4.0, 8.0}) CHECK(score_identity_check(model, spec, t, xs) < 1e-10);
}

TEST_CASE("hermite polynomials") {
    CHECK(hermite(0, 0.7) == 1.0);
    CHECK(hermite(1, 0.7) == doctest::Approx(0.7));
    CHECK(hermite(2, 0.7) == doctest::Approx(0.49 - 1.0));
    CHECK(hermite(3, 0.7) == doctest::Approx(0.343 - 2.1));
    CHECK(hermite(4, 2.0) == doctest::Approx(16.0 - 24.0 + 3.0));
}

TEST_CASE("mehler and commutation checks") {
    for (int n = 1; n <= 3; ++n) {
        const McCheck m = mehler_check(1.0, 1.0, n, 1.3, 20000, 7);
        CHECK(m.reference == doctest::Approx(std::exp(-0.5 * n) * hermite(n, 1.3)));
        CHECK(m.pass);
    }
    const McCheck l = commutation_check([](double x) { return std::sin(x); }, [](double x) { return std::cos(x); }, 1.0,
                                   1.0, 0.4, 20000, 1e-3, 8);
    CHECK(l.pass);
}

TEST_CASE("power spectrum estimates") {
    // Two fields with a_{1,m} = +-1 give Chat_1 = 1 exactly.
    CoeffField a(1), b(1);
    for (int m = -1; m <= 1; ++m) {
        a.at(1, m) = 1.0;
        b.at(1, m) = -1.0;
    }
    const std::vector<CoeffField> two{a, b};
    const auto est = estimate_power_spectrum(two);
    REQUIRE(est.size() == 2);
    CHECK(est[1].c_hat == doctest::Approx(1.0));
    CHECK(est[1].dof == 6);
    CHECK(est[0].c_hat == 0.0);
    CHECK(est[1].ci_lo < 1.0);
    CHECK(est[1].ci_hi > 1.0);

    const Spectrum spec = matern_spectrum({1.0, 1.0}, 6);
    std::vector<CoeffField> samples;
    for (int i = 0; i < 2000; ++i) {
        RngStream rng(12, Purpose::PriorSample, i);
        samples.push_back(sample_prior(spec, rng));
    }
    const auto e = estimate_power_spectrum(samples);
    CHECK(spectrum_within_ci(e, spec));
    // A doubled spectrum must fall outside.
    std::vector<double> doubled = spec.values();
    for (double& v : doubled) v *= 2.0;
    CHECK_FALSE(spectrum_within_ci(e, Spectrum(doubled)));

    const auto fit = fit_diagonal_gaussian(samples);
    CHECK(fit.var[0] == doctest::Approx(spec[0]).epsilon(0.1));
}

TEST_CASE("harmonic, stationarity and trace diagnostics") {
    const HarmonicCheck h = harmonic_check(8, SphereGrid::for_band_limit(8), 4, 1);
    CHECK(h.gram_max_dev < 1e-10);
    CHECK(h.roundtrip_max_err < 1e-10);

    const Spectrum spec = matern_spectrum({1.0, 1.0}, 2);
    const StationarityCheck s = stationarity_check(spec, TimeGrid(1.0, 10), 20000, 3);
    CHECK(s.variance.size() == 9);
    CHECK(s.max_abs_z < 4.5);

    const TraceReport t = trace_convergence({1.0, 1.0}, 8, 256, 1e-4);
    CHECK(t.rows.size() == 6);
    CHECK(t.rows.front().band_limit == 8);
    CHECK(t.rows.back().band_limit == 256);
    CHECK(t.reference == doctest::Approx(1.0));
    CHECK(t.ell0_term == doctest::Approx(1.0));
    for (std::size_t i = 1; i < t.rows.size(); ++i) CHECK(t.rows[i].trace >= t.rows[i - 1].trace);
    CHECK(t.converged);
}
