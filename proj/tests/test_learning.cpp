#include <doctest.h>

#include <filesystem>

#include "helpers.hpp"
#include "sphdiff/errors.hpp"
#include "sphdiff/learning.hpp"

using namespace sphdiff;

namespace {

GaussianShift shifted_model(const Spectrum& spec) {
    GaussianShift g{CoeffField(spec.band_limit()), spec.values()};
    g.mean[0] = 1.0;
    for (double& s : g.var_scale) s *= 0.5;
    return g;
}

// Central differences of loss_and_gradient in a handful of coordinates.
void check_gradient(LearnedDenoiser& model, std::span<const TrainingPair> pairs, LossNorm norm) {
    auto p = model.params();
    std::vector<double> grad(p.size()), scratch(p.size());
    model.loss_and_gradient(pairs, norm, grad);
    RngStream pick(99, Purpose::Test, 0);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t i = pick.below(p.size());
        const double keep = p[i], h = 1e-6;
        p[i] = keep + h;
        const double up = model.loss_and_gradient(pairs, norm, scratch);
        p[i] = keep - h;
        const double down = model.loss_and_gradient(pairs, norm, scratch);
        p[i] = keep;
        CHECK(grad[i] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-5).scale(1e-3));
    }
}

}  // namespace

TEST_CASE("training pairs") {
    const Spectrum spec = matern_spectrum({1.0, 1.0}, 1);
    const TimeGrid grid(1.0, 4);
    const DataModel data = shifted_model(spec);
    const auto a = make_training_pairs(data, spec, grid, 3, PairSampling::Jump, 5, 0);
    const auto b = make_training_pairs(data, spec, grid, 3, PairSampling::Jump, 5, 0);
    REQUIRE(a.size() == 12);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].xt == b[i].xt);
        CHECK(a[i].time_index == static_cast<int>(i % 4) + 1);
        CHECK(a[i].t == grid.time(a[i].time_index));
    }
    const auto c = make_training_pairs(data, spec, grid, 3, PairSampling::Jump, 5, 1);
    CHECK_FALSE(a[0].x0 == c[0].x0);
    const auto tr = make_training_pairs(data, spec, grid, 3, PairSampling::Trajectory, 5, 0);
    CHECK(tr.size() == 12);
    CHECK(tr[0].x0 == a[0].x0);
}

TEST_CASE("empirical loss") {
    const Spectrum spec = matern_spectrum({1.0, 1.0}, 2);
    const TimeGrid grid(2.0, 4);

    SUBCASE("single atom with its exact denoiser has zero loss") {
        CoeffField atom(2);
        atom[1] = 0.4;
        const DataModel data = Empirical{{atom}};
        const auto pairs = make_training_pairs(data, spec, grid, 50, PairSampling::Jump, 1, 0);
        CHECK(empirical_loss(*make_exact_denoiser(data, spec), pairs, spec, LossNorm::CM) == 0.0);
    }
    SUBCASE("zero model on gaussian data measures the second moment") {
        const GaussianShift g = shifted_model(spec);
        const auto pairs = make_training_pairs(DataModel{g}, spec, grid, 20000, PairSampling::Jump, 2, 0);
        const FunctionDenoiser zero(2, [](double, const CoeffField& x) { return CoeffField(x.band_limit()); });
        testing::Stats s;
        for (double v : pair_losses(zero, pairs, spec, LossNorm::H)) s.add(v);
        double expect = 0.0;
        for (int ell = 0; ell <= 2; ++ell) expect += (2 * ell + 1) * g.var_scale[ell];
        expect += 1.0;
        CHECK(std::abs(s.mean() - expect) < 5 * s.se());
        CHECK(empirical_loss(zero, pairs, spec, LossNorm::H) == doctest::Approx(s.mean()));
    }
    SUBCASE("duplicating the pair set leaves the loss unchanged") {
        const auto pairs = make_training_pairs(DataModel{shifted_model(spec)}, spec, grid, 30, PairSampling::Jump, 3, 0);
        auto twice = pairs;
        twice.insert(twice.end(), pairs.begin(), pairs.end());
        const auto exact = make_exact_denoiser(DataModel{shifted_model(spec)}, spec);
        CHECK(empirical_loss(*exact, twice, spec, LossNorm::CM) ==
              doctest::Approx(empirical_loss(*exact, pairs, spec, LossNorm::CM)).epsilon(1e-14));
    }
    CHECK_THROWS_AS(empirical_loss(*make_exact_denoiser(DataModel{shifted_model(spec)}, spec), {}, spec, LossNorm::CM),
                    DomainError);
}

TEST_CASE("analytic gradients match finite differences") {
    const Spectrum spec = matern_spectrum({1.0, 1.0}, 1);
    const TimeGrid grid(2.0, 5);
    const auto pairs = make_training_pairs(DataModel{shifted_model(spec)}, spec, grid, 6, PairSampling::Jump, 4, 0);
    for (LossNorm norm : {LossNorm::CM, LossNorm::H}) {
        PerTimeAffine diag(spec, grid, false), dense(spec, grid, true);
        TimeMlp mlp(spec, grid, {6, 5}, 7);
        // Move away from the initial point so every parameter matters.
        RngStream rng(8, Purpose::Test, 0);
        for (LearnedDenoiser* m : {static_cast<LearnedDenoiser*>(&diag), static_cast<LearnedDenoiser*>(&dense),
                                   static_cast<LearnedDenoiser*>(&mlp)})
            for (double& v : m->params()) v += 0.3 * rng.normal();
        check_gradient(diag, pairs, norm);
        check_gradient(dense, pairs, norm);
        check_gradient(mlp, pairs, norm);
    }
}

TEST_CASE("learned models start from the stationary denoiser") {
    const Spectrum spec = matern_spectrum({1.0, 1.0}, 2);
    const TimeGrid grid(4.0, 8);
    RngStream rng(9, Purpose::Test, 0);
    const CoeffField x = sample_prior(spec, rng);
    for (auto arch : {Architecture::AffineDiagonal, Architecture::AffineDense, Architecture::TimeMlp}) {
        const auto m = make_learned_denoiser(arch, spec, grid, {8}, 1);
        for (int j = 0; j <= 8; ++j) {
            const CoeffField d = (*m)(grid.time(j), x);
            for (std::size_t k = 0; k < x.size(); ++k)
                CHECK(d[k] == doctest::Approx(std::exp(-0.5 * grid.time(j)) * x[k]).epsilon(1e-12));
        }
    }
    CHECK_THROWS_AS(TimeMlp(spec, grid, {}, 1), ConfigError);
}

TEST_CASE("affine form of the per-time model") {
    const Spectrum spec = matern_spectrum({1.0, 1.0}, 1);
    const TimeGrid grid(1.0, 2);
    PerTimeAffine dense(spec, grid, true);
    RngStream rng(10, Purpose::Test, 0);
    for (double& v : dense.params()) v = rng.normal();
    const CoeffField x = sample_prior(spec, rng);
    const auto f = dense.affine_form(0.5);
    REQUIRE(f);
    CHECK_FALSE(f->diagonal);
    const Eigen::VectorXd y = f->gain * Eigen::Map<const Eigen::VectorXd>(x.vector().data(), 4) + f->offset;
    const CoeffField d = dense(0.5, x);
    for (int k = 0; k < 4; ++k) CHECK(y(k) == doctest::Approx(d[k]));
    CHECK_FALSE(TimeMlp(spec, grid, {3}, 1).affine_form(0.5).has_value());
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate(160));
    cfg.minibatch = 256 * 160 + 1;
    CHECK_THROWS_AS(cfg.validate(160), ConfigError);
    cfg.minibatch = -1;
    CHECK_THROWS_AS(cfg.validate(160), ConfigError);
    cfg = TrainConfig{};
    cfg.step_size = 0.0;
    try {
        cfg.validate(10);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.path() == "train.step_size");
    }
    CHECK(architecture_from_string("time_mlp") == Architecture::TimeMlp);
    CHECK(to_string(Architecture::AffineDense) == "affine_dense");
    CHECK_THROWS_AS(architecture_from_string("resnet"), ConfigError);
    CHECK(loss_norm_from_string("H") == LossNorm::H);
}

namespace {

struct AffineFit {
    double worst_gain = 0.0;    // max relative gain error over grid times and coefficients
    double worst_offset = 0.0;  // max offset error in prior standard deviations
};

AffineFit fit_gaussian_posterior(const Spectrum& spec, const TimeGrid& grid, const GaussianShift& g,
                                 PerTimeAffine& model) {
    const GaussianDenoiser exact(g, spec);
    const auto c = spec.per_coeff();
    AffineFit f;
    for (int j = 1; j <= grid.steps(); ++j) {
        const double t = grid.time(j);
        const auto a = model.affine_form(t), b = exact.affine_form(t);
        for (std::size_t k = 0; k < c.size(); ++k) {
            f.worst_gain = std::max(f.worst_gain, std::abs(a->gain(k, k) / b->gain(k, k) - 1.0));
            f.worst_offset = std::max(f.worst_offset, std::abs(a->offset(k) - b->offset(k)) / std::sqrt(c[k]));
        }
    }
    return f;
}

}  // namespace

TEST_CASE("affine model approaches the gaussian posterior mean") {
    const Spectrum spec = matern_spectrum({1.0, 1.0}, 2);
    const TimeGrid grid(8.0, 160);
    const GaussianShift g = shifted_model(spec);
    PerTimeAffine model(spec, grid, false);
    TrainConfig cfg;
    const TrainResult r = train(model, DataModel{g}, cfg);
    REQUIRE(r.loss_history.size() == static_cast<std::size_t>(cfg.epochs));
    CHECK(r.best_history.back() <= r.loss_history.front());

    const AffineFit f = fit_gaussian_posterior(spec, grid, g, model);
    MESSAGE("max relative gain error " << f.worst_gain << ", max offset error " << f.worst_offset);
    CHECK(f.worst_offset < 0.05);

    // Bayes dominance on common pairs, up to Monte Carlo error of the paired difference.
    // The M pairs of one data draw are correlated, so the error is taken across draws.
    const GaussianDenoiser exact(g, spec);
    const auto pairs = make_training_pairs(DataModel{g}, spec, grid, 64, PairSampling::Jump, 77, 0);
    const auto lm = pair_losses(model, pairs, spec, LossNorm::CM);
    const auto le = pair_losses(exact, pairs, spec, LossNorm::CM);
    testing::Stats diff;
    const std::size_t m = grid.steps();
    for (std::size_t i = 0; i < lm.size(); i += m) {
        double d = 0.0;
        for (std::size_t j = i; j < i + m; ++j) d += lm[j] - le[j];
        diff.add(d / m);
    }
    CHECK(diff.mean() >= -4.0 * diff.se());
}

// Gain accuracy of 2% at every grid time after the default budget. At late times the
// exact gain is ~1e-2 while the SGD noise floor on a gain is ~1e-2 in absolute terms,
// so this is not reached; kept as a visible, separately registered failure.
TEST_CASE("affine gains within 2% of the posterior gains after the default budget" * doctest::test_suite("known_gaps")) {
    const Spectrum spec = matern_spectrum({1.0, 1.0}, 2);
    const TimeGrid grid(8.0, 160);
    const GaussianShift g = shifted_model(spec);
    PerTimeAffine model(spec, grid, false);
    train(model, DataModel{g}, TrainConfig{});
    const AffineFit f = fit_gaussian_posterior(spec, grid, g, model);
    MESSAGE("max relative gain error " << f.worst_gain << ", max offset error " << f.worst_offset);
    CHECK(f.worst_gain < 0.02);
    CHECK(f.worst_offset < 0.02);
}

TEST_CASE("affine fit error shrinks as the sample count grows") {
    const Spectrum spec = matern_spectrum({1.0, 1.0}, 2);
    const TimeGrid grid(8.0, 40);
    const GaussianShift g = shifted_model(spec);
    const GaussianDenoiser exact(g, spec);
    std::vector<double> errors;
    for (int n : {100, 1000, 10000}) {
        PerTimeAffine model(spec, grid, false);
        TrainConfig cfg;
        cfg.n_samples = n;
        cfg.epochs = 40;
        cfg.step_size = 0.25;
        cfg.fixed_dataset = true;
        train(model, DataModel{g}, cfg);
        errors.push_back(h1_error(model, exact, spec, grid, DataModel{g}, 500, 12).value);
    }
    MESSAGE("eps^2 at N = 1e2, 1e3, 1e4: " << errors[0] << ", " << errors[1] << ", " << errors[2]);
    CHECK(errors[1] < errors[0]);
    CHECK(errors[2] < errors[1]);
}

TEST_CASE("single atom: trained output equals the atom") {
    const Spectrum spec = matern_spectrum({1.0, 1.0}, 1);
    const TimeGrid grid(8.0, 160);
    CoeffField atom(1);
    atom[0] = 0.6;
    atom[2] = -0.1;
    PerTimeAffine model(spec, grid, false);
    TrainConfig cfg;
    train(model, DataModel{Empirical{{atom}}}, cfg);
    RngStream rng(11, Purpose::Test, 0);
    double worst = 0.0;
    for (int j = 1; j <= grid.steps(); ++j) {
        const double t = grid.time(j);
        const CoeffField x = ou_transition(atom, spec, t, rng);
        const CoeffField d = model(t, x);
        for (int k = 0; k < 4; ++k) worst = std::max(worst, std::abs(d[k] - atom[k]));
    }
    MESSAGE("max deviation from the atom " << worst);
    CHECK(worst < 1e-3);
}

TEST_CASE("fixed dataset training is reproducible") {
    const Spectrum spec = matern_spectrum({1.0, 1.0}, 1);
    const TimeGrid grid(2.0, 10);
    TrainConfig cfg;
    cfg.n_samples = 16;
    cfg.minibatch = 40;
    cfg.epochs = 5;
    cfg.fixed_dataset = true;
    cfg.seed = 3;
    TimeMlp a(spec, grid, {8}, 3), b(spec, grid, {8}, 3);
    const auto ra = train(a, DataModel{shifted_model(spec)}, cfg);
    const auto rb = train(b, DataModel{shifted_model(spec)}, cfg);
    CHECK(ra.loss_history == rb.loss_history);
}

TEST_CASE("divergence is reported") {
    const Spectrum spec = matern_spectrum({1.0, 1.0}, 1);
    const TimeGrid grid(2.0, 10);
    TrainConfig cfg;
    cfg.n_samples = 16;
    cfg.minibatch = 160;
    cfg.epochs = 50;
    cfg.step_size = 1e6;
    cfg.clip_norm = 0.0;
    TimeMlp m(spec, grid, {8}, 1);
    CHECK_THROWS_AS(train(m, DataModel{shifted_model(spec)}, cfg), TrainingError);
}

TEST_CASE("checkpoints round-trip") {
    const Spectrum spec = matern_spectrum({1.0, 1.0}, 2);
    const TimeGrid grid(3.0, 6);
    const std::string dir = testing::tmp_dir("checkpoint");
    RngStream rng(12, Purpose::Test, 0);
    const CoeffField x = sample_prior(spec, rng);
    for (auto arch : {Architecture::AffineDiagonal, Architecture::AffineDense, Architecture::TimeMlp}) {
        auto m = make_learned_denoiser(arch, spec, grid, {5, 4}, 9);
        for (double& v : m->params()) v += 0.1 * rng.normal();
        const std::string path = dir + "/" + to_string(arch) + ".json";
        save_checkpoint(*m, path);
        const auto back = load_checkpoint(path);
        CHECK(back->architecture() == arch);
        CHECK(back->grid().steps() == 6);
        CHECK(std::equal(m->params().begin(), m->params().end(), back->params().begin()));
        CHECK((*back)(1.1, x) == (*m)(1.1, x));
    }
    auto j = PerTimeAffine(spec, grid, false).to_json();
    j["params"] = std::vector<double>{1.0, 2.0};
    CHECK_THROWS_AS(learned_denoiser_from_json(j), ConfigError);
    j.erase("grid");
    CHECK_THROWS_AS(learned_denoiser_from_json(j), ConfigError);
    CHECK_THROWS_AS(load_checkpoint(dir + "/missing.json"), IoError);
}

TEST_CASE("score error estimate") {
    const Spectrum spec = matern_spectrum({1.0, 1.0}, 2);
    const TimeGrid grid(4.0, 20);
    const GaussianShift g = shifted_model(spec);
    const DataModel data{g};
    auto exact = make_exact_denoiser(data, spec);

    const Estimate zero = h1_error(*exact, *exact, spec, grid, data, 200, 1);
    CHECK(zero.value == 0.0);

    const double c = 0.3;
    CoeffField off(2);
    off[0] = c;
    const ShiftedDenoiser shifted(exact, off);
    const Estimate e = h1_error(shifted, *exact, spec, grid, data, 200, 1);
    CHECK(std::abs(e.value - c * c / spec[0]) <= 4 * e.std_error + 1e-12);

    PerTimeAffine untrained(spec, grid, false);
    const Estimate a = h1_error(untrained, *exact, spec, grid, data, 4000, 1);
    const Estimate b = h1_error(untrained, *exact, spec, grid, data, 4000, 2);
    CHECK(a.value > 0.0);
    CHECK(std::abs(a.value - b.value) < 4 * std::hypot(a.std_error, b.std_error));
}
