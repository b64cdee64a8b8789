#include <doctest.h>

#include "helpers.hpp"
#include "sphdiff/diagnostics.hpp"
#include "sphdiff/errors.hpp"
#include "sphdiff/forward.hpp"
#include "sphdiff/learning.hpp"
#include "sphdiff/sampler.hpp"

using namespace sphdiff;

namespace {

CoeffField scalar(double v) {
    CoeffField f(0);
    f[0] = v;
    return f;
}

}  // namespace

TEST_CASE("single EM steps") {
    const Spectrum one({1.0});
    const TimeGrid grid(1.0, 10);  // h = 0.1
    const GaussianDenoiser stationary(GaussianShift{scalar(0.0), {1.0}}, one);
    for (int j = 1; j <= 10; ++j)
        CHECK(em_step(scalar(1.0), j, grid, stationary, scalar(0.0))[0] == doctest::Approx(0.95).epsilon(1e-14));

    const FunctionDenoiser zero(0, [](double, const CoeffField&) { return scalar(0.0); });
    CHECK(em_step(scalar(0.0), 3, grid, zero, scalar(0.0))[0] == 0.0);

    const double mu = 0.8;
    const GaussianDenoiser shifted(GaussianShift{scalar(mu), {1.0}}, one);
    for (int j = 1; j <= 10; ++j) {
        const double s = grid.horizon() - grid.time(j - 1);
        CHECK(em_step(scalar(0.0), j, grid, shifted, scalar(0.0))[0] ==
              doctest::Approx(0.1 * std::exp(-0.5 * s) * mu).epsilon(1e-12));
    }
    CHECK_THROWS_AS(em_step(scalar(0.0), 0, grid, zero, scalar(0.0)), DomainError);
    CHECK_THROWS_AS(em_step(scalar(0.0), 11, grid, zero, scalar(0.0)), DomainError);
}

TEST_CASE("backward sampling is deterministic per stream") {
    const Spectrum spec = matern_spectrum({1.0, 1.0}, 3);
    const TimeGrid grid(4.0, 40);
    const GaussianDenoiser d(GaussianShift{CoeffField(3), spec.values()}, spec);
    RngStream a(1, Purpose::Backward, 5), b(1, Purpose::Backward, 5), c(1, Purpose::Backward, 6);
    const CoeffField ya = sample_backward(spec, grid, d, a);
    CHECK(ya == sample_backward(spec, grid, d, b));
    CHECK_FALSE(ya == sample_backward(spec, grid, d, c));

    int calls = 0;
    double last_t = -1.0;
    RngStream e(1, Purpose::Backward, 5);
    const CoeffField ye = sample_backward(spec, grid, d, e, [&](int j, double t, const CoeffField&) {
        CHECK(j == calls);
        last_t = t;
        ++calls;
    });
    CHECK(calls == 41);
    CHECK(last_t == 4.0);
    CHECK(ye == ya);
}

TEST_CASE("exact EM law arithmetic") {
    const Spectrum one({1.0});
    const GaussianShift stationary{scalar(0.0), {1.0}};
    const GaussianLaw law = exact_em_law(one, TimeGrid(0.1, 1), stationary);
    CHECK(law.mean(0) == 0.0);
    CHECK(law.cov(0, 0) == doctest::Approx(1.0025).epsilon(1e-14));

    // Stationary fixed point of var' = (1 - h/2)^2 var + h C is C / (1 - h/4).
    const GaussianLaw longrun = exact_em_law(one, TimeGrid(80.0, 1600), stationary);
    CHECK(longrun.cov(0, 0) == doctest::Approx(1.0 / (1.0 - 0.05 / 4.0)).epsilon(1e-12));

    // Reference configuration, values frozen from an independent recursion.
    const GaussianLaw ref = exact_em_law(one, TimeGrid(8.0, 160), GaussianShift{scalar(1.0), {1.0}});
    CHECK(ref.mean(0) == doctest::Approx(0.99342).epsilon(1e-5));
    CHECK(ref.cov(0, 0) == doctest::Approx(1.01265).epsilon(1e-5));

    const auto laws = exact_em_laws(one, TimeGrid(1.0, 4), GaussianDenoiser(stationary, one));
    CHECK(laws.size() == 5);
    CHECK(laws.front().cov(0, 0) == 1.0);

    const FunctionDenoiser opaque(0, [](double, const CoeffField& x) { return x; });
    CHECK_THROWS_AS(exact_em_law(one, TimeGrid(1.0, 4), opaque), DomainError);
}

TEST_CASE("backward laws track the forward marginals") {
    // State j of the backward recursion should approximate the forward law at time T - t_j.
    const Spectrum spec = matern_spectrum({1.0, 1.0}, 1);
    CoeffField mu(1);
    mu[0] = 1.0;
    mu[1] = 0.4;
    const GaussianShift g{mu, {0.3, 0.05}};
    const GaussianDenoiser d(g, spec);
    // Long horizon so the e^{-T/2} initialization error stays below the step error.
    const double horizon = 16.0;
    std::vector<double> worst;
    for (int m : {32, 64, 128, 256}) {
        const TimeGrid grid(horizon, m);
        const auto laws = exact_em_laws(spec, grid, d);
        double err = 0.0;
        for (int j = 1; j <= m; ++j) {
            const auto fwd = marginal_law_gaussian(g.mean, g.var_scale, spec, horizon - grid.time(j));
            for (int k = 0; k < 4; ++k) {
                err = std::max(err, std::abs(laws[j].mean(k) - fwd.mean[k]));
                err = std::max(err, std::abs(laws[j].cov(k, k) - fwd.var[k]));
            }
        }
        worst.push_back(err);
    }
    MESSAGE("max moment error for M = 32..256: " << worst[0] << " " << worst[1] << " " << worst[2] << " " << worst[3]);
    for (std::size_t i = 1; i < worst.size(); ++i) CHECK(worst[i] < worst[i - 1]);
    // Roughly first order in h once the initialization error is small against it.
    CHECK(worst[3] < 0.7 * worst[2]);
}

TEST_CASE("dense and diagonal recursions agree") {
    const Spectrum spec = matern_spectrum({1.0, 1.0}, 1);
    const TimeGrid grid(2.0, 8);
    PerTimeAffine diag(spec, grid, false), dense(spec, grid, true);
    RngStream rng(2, Purpose::Test, 0);
    // Same diagonal gains and offsets in both parameterizations.
    for (int j = 0; j <= 8; ++j)
        for (int k = 0; k < 4; ++k) {
            const double g = 0.5 + 0.1 * rng.normal(), b = 0.2 * rng.normal();
            diag.params()[j * 8 + k] = g;
            diag.params()[j * 8 + 4 + k] = b;
            for (int l = 0; l < 4; ++l) dense.params()[j * 20 + k * 4 + l] = k == l ? g : 0.0;
            dense.params()[j * 20 + 16 + k] = b;
        }
    const GaussianLaw a = exact_em_law(spec, grid, diag), b = exact_em_law(spec, grid, dense);
    CHECK((a.mean - b.mean).cwiseAbs().maxCoeff() < 1e-13);
    CHECK((a.cov - b.cov).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("exact EM law matches simulated backward samples") {
    const Spectrum spec = matern_spectrum({1.0, 1.0}, 1);
    const TimeGrid grid(3.0, 30);
    CoeffField mu(1);
    mu[0] = 0.7;
    mu[3] = -0.2;
    const GaussianShift g{mu, {0.4, 0.05}};
    const GaussianDenoiser d(g, spec);
    const GaussianLaw law = exact_em_law(spec, grid, d);
    std::vector<testing::Stats> s(4);
    for (int i = 0; i < 40000; ++i) {
        RngStream rng(3, Purpose::Backward, i);
        const CoeffField y = sample_backward(spec, grid, d, rng);
        for (int k = 0; k < 4; ++k) s[k].add(y[k]);
    }
    for (int k = 0; k < 4; ++k) {
        CHECK(std::abs(s[k].mean() - law.mean(k)) < 5 * s[k].se());
        CHECK(std::abs(s[k].var() - law.cov(k, k)) < 5 * s[k].var_se());
    }
}

TEST_CASE("stationary sampler variance at h = 0.05") {
    const Spectrum one({1.0});
    const TimeGrid grid(8.0, 160);
    const GaussianDenoiser d(GaussianShift{scalar(0.0), {1.0}}, one);
    testing::Stats s;
    for (int i = 0; i < 100000; ++i) {
        RngStream rng(4, Purpose::Backward, i);
        s.add(sample_backward(one, grid, d, rng)[0]);
    }
    MESSAGE("sample variance " << s.var() << " (exact EM law " << exact_em_law(one, grid, d).cov(0, 0) << ")");
    CHECK(std::abs(s.var() - 1.0) < 0.02);
}

TEST_CASE("single-atom denoiser contracts toward the atom") {
    const Spectrum spec = matern_spectrum({1.0, 1.0}, 1);
    const TimeGrid grid(12.0, 240);
    CoeffField atom(1);
    atom[0] = 1.5;
    atom[1] = -0.3;
    const auto d = make_exact_denoiser(DataModel{Empirical{{atom}}}, spec);
    std::vector<testing::Stats> s(4);
    for (int i = 0; i < 10000; ++i) {
        RngStream rng(5, Purpose::Backward, i);
        const CoeffField y = sample_backward(spec, grid, *d, rng);
        for (int k = 0; k < 4; ++k) s[k].add(y[k]);
    }
    for (int k = 0; k < 4; ++k) CHECK(std::abs(s[k].mean() - atom[k]) < 5 * s[k].se());
}
