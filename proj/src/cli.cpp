#include "sphdiff/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "sphdiff/config.hpp"
#include "sphdiff/diagnostics.hpp"
#include "sphdiff/errors.hpp"
#include "sphdiff/io.hpp"
#include "sphdiff/learning.hpp"
#include "sphdiff/sampler.hpp"

namespace sphdiff {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<int> samples;
    bool exact_score = false;
    bool grid = false;
    std::string checkpoint;
    std::string input;
    std::string debug_path;
    std::optional<double> score_offset;
};

RunConfig resolve_config(const Options& o, bool train_samples) {
    RunConfig cfg = o.config.empty() ? default_config() : load_config(o.config);
    if (o.seed) cfg.seed = cfg.train.seed = *o.seed;
    if (o.out) cfg.output_dir = *o.out;
    if (o.samples) {
        if (*o.samples < 0) throw ConfigError("must be >= 0", "--samples");
        if (train_samples) {
            if (*o.samples < 1) throw ConfigError("training needs at least one sample", "--samples");
            cfg.train.n_samples = *o.samples;
            cfg.train.minibatch =
                static_cast<int>(std::min<long long>(cfg.train.minibatch, static_cast<long long>(*o.samples) * cfg.steps));
        } else {
            cfg.n_samples = *o.samples;
        }
    }
    if (o.score_offset) cfg.verify.score_offset = *o.score_offset;
    return cfg;
}

std::string ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir);
    return dir;
}

std::string numbered(const std::string& dir, const char* stem, int i, const char* suffix = "") {
    char name[64];
    std::snprintf(name, sizeof name, "%s_%05d%s.csv", stem, i, suffix);
    return (fs::path(dir) / name).string();
}

std::string join(const std::string& dir, const char* name) { return (fs::path(dir) / name).string(); }

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f << text;
    f.flush();
    if (!f) throw IoError("failed writing " + path);
}

int cmd_sample_prior(const Options& o, std::ostream& out) {
    const RunConfig cfg = resolve_config(o, false);
    const std::string dir = ensure_dir(cfg.output_dir);
    const Spectrum spec = cfg.spectrum();
    const SphereGrid sgrid = SphereGrid::for_band_limit(cfg.band_limit);
    io::write_spectrum_csv(join(dir, "spectrum.csv"), spec);
    for (int i = 0; i < cfg.n_samples; ++i) {
        RngStream rng(cfg.seed, Purpose::PriorSample, static_cast<std::uint64_t>(i));
        const CoeffField a = sample_prior(spec, rng);
        io::write_coeff_csv(numbered(dir, "prior", i), a);
        if (o.grid) io::write_grid_csv(numbered(dir, "prior", i, "_grid"), synthesize(a, sgrid));
    }
    out << "wrote " << cfg.n_samples << " prior samples (L=" << cfg.band_limit << ") to " << dir << '\n';
    return kExitOk;
}

int cmd_forward(const Options& o, std::ostream& out) {
    const RunConfig cfg = resolve_config(o, false);
    const std::string dir = ensure_dir(cfg.output_dir);
    const Spectrum spec = cfg.spectrum();
    const TimeGrid grid = cfg.grid();
    io::PathCsvWriter writer(join(dir, "forward_trajectories.csv"));
    for (int i = 0; i < cfg.n_samples; ++i) {
        RngStream data_rng(cfg.seed, Purpose::DataSample, static_cast<std::uint64_t>(i));
        RngStream fwd_rng(cfg.seed, Purpose::Forward, static_cast<std::uint64_t>(i));
        const auto traj = simulate_forward(sample_data(cfg.data, data_rng), spec, grid, fwd_rng);
        for (int j = 0; j <= grid.steps(); ++j) writer.write(i, grid.time(j), traj.states[j]);
    }
    out << "wrote " << cfg.n_samples << " forward trajectories (" << model_name(cfg.data) << " data, M="
        << grid.steps() << ") to " << dir << '\n';
    return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out) {
    const RunConfig cfg = resolve_config(o, true);
    const std::string dir = ensure_dir(cfg.output_dir);
    const Spectrum spec = cfg.spectrum();
    const TimeGrid grid = cfg.grid();
    auto model = make_learned_denoiser(cfg.architecture, spec, grid, cfg.hidden, cfg.train.seed);
    const TrainResult result = train(*model, cfg.data, cfg.train);
    save_checkpoint(*model, join(dir, "checkpoint.json"));
    io::write_loss_history(join(dir, "loss_history.csv"), result.loss_history);

    // Held-out comparison with the Bayes denoiser on fresh pairs.
    const auto exact = make_exact_denoiser(cfg.data, spec);
    const auto pairs = make_training_pairs(cfg.data, spec, grid, cfg.train.n_samples, cfg.train.sampling,
                                           cfg.train.seed, static_cast<std::uint64_t>(cfg.train.epochs) + 1);
    const double learned_loss = empirical_loss(*model, pairs, spec, cfg.train.loss_norm);
    const double bayes_loss = empirical_loss(*exact, pairs, spec, cfg.train.loss_norm);
    out.precision(8);
    out << "trained " << to_string(cfg.architecture) << " for " << cfg.train.epochs << " epochs; final loss "
        << result.loss_history.back() << '\n'
        << "held-out loss " << learned_loss << " vs Bayes " << bayes_loss << " (ratio "
        << learned_loss / bayes_loss << ")\n";
    return kExitOk;
}

std::shared_ptr<const Denoiser> generation_denoiser(const Options& o, const RunConfig& cfg, const Spectrum& spec) {
    if (o.exact_score && !o.checkpoint.empty())
        throw ConfigError("use either --exact-score or --checkpoint, not both", "--checkpoint");
    if (o.exact_score) return make_exact_denoiser(cfg.data, spec);
    if (o.checkpoint.empty()) throw ConfigError("need --checkpoint PATH or --exact-score", "--checkpoint");
    std::shared_ptr<LearnedDenoiser> model = load_checkpoint(o.checkpoint);
    if (model->band_limit() != cfg.band_limit)
        throw ConfigError("checkpoint band limit " + std::to_string(model->band_limit()) +
                              " does not match config band limit " + std::to_string(cfg.band_limit),
                          "band_limit");
    if (model->spectrum().values() != spec.values())
        throw ConfigError("checkpoint was trained for a different Matern spectrum", "matern");
    if (model->grid().steps() != cfg.steps || model->grid().horizon() != cfg.horizon)
        throw ConfigError("checkpoint time grid does not match config", "time");
    return model;
}

int cmd_generate(const Options& o, std::ostream& out) {
    const RunConfig cfg = resolve_config(o, false);
    const Spectrum spec = cfg.spectrum();
    const auto denoiser = generation_denoiser(o, cfg, spec);
    const std::string dir = ensure_dir(cfg.output_dir);
    const TimeGrid grid = cfg.grid();
    const SphereGrid sgrid = SphereGrid::for_band_limit(cfg.band_limit);
    std::optional<io::PathCsvWriter> paths;
    if (!o.debug_path.empty()) paths.emplace(o.debug_path);
    for (int i = 0; i < cfg.n_samples; ++i) {
        RngStream rng(cfg.seed, Purpose::Backward, static_cast<std::uint64_t>(i));
        PathObserver observer;
        if (paths) observer = [&, i](int, double t, const CoeffField& y) { paths->write(i, t, y); };
        const CoeffField y = sample_backward(spec, grid, *denoiser, rng, observer);
        io::write_coeff_csv(numbered(dir, "gen", i), y);
        if (o.grid) io::write_grid_csv(numbered(dir, "gen", i, "_grid"), synthesize(y, sgrid));
    }
    out << "generated " << cfg.n_samples << " samples (" << (o.exact_score ? "exact score" : "checkpoint")
        << ", h=" << grid.step() << ") in " << dir << '\n';
    return kExitOk;
}

struct Check {
    std::string name;
    bool pass;
    json detail;
};

json mc_json(const McCheck& c) {
    return {{"estimate", c.estimate},   {"std_error", c.std_error},       {"reference", c.reference},
            {"reference_se", c.reference_se}, {"tolerance_se", c.tolerance_se}, {"pass", c.pass}};
}

std::vector<CoeffField> read_coeff_dir(const std::string& dir) {
    std::vector<CoeffField> samples;
    for (const auto& f : io::list_coeff_files(dir)) samples.push_back(io::read_coeff_csv(f));
    if (samples.empty()) throw ConfigError("no coefficient files (ell,m,value) found", dir);
    return samples;
}

json spectrum_json(const std::vector<SpectrumEstimate>& est, const Spectrum& spec) {
    json rows = json::array();
    for (const auto& e : est)
        rows.push_back({{"ell", e.ell},
                        {"C_true", spec[e.ell]},
                        {"C_hat", e.c_hat},
                        {"ci_lo", e.ci_lo},
                        {"ci_hi", e.ci_hi},
                        {"inside", spec[e.ell] >= e.ci_lo && spec[e.ell] <= e.ci_hi}});
    return rows;
}

int cmd_verify(const Options& o, std::ostream& out, std::ostream& err) {
    const RunConfig cfg = resolve_config(o, false);
    const Spectrum spec = cfg.spectrum();
    const TimeGrid grid = cfg.grid();
    const VerifyConfig& v = cfg.verify;
    const int L = cfg.band_limit;
    std::vector<Check> checks;
    json report;
    report["config"] = config_to_json(cfg);
    report["data_model"] = model_name(cfg.data);

    std::shared_ptr<LearnedDenoiser> learned;
    if (!o.checkpoint.empty()) {
        learned = load_checkpoint(o.checkpoint);
        if (learned->band_limit() != L) throw ConfigError("checkpoint band limit does not match config", "band_limit");
    }
    std::vector<CoeffField> input;
    if (!o.input.empty()) {
        input = read_coeff_dir(o.input);
        for (const auto& s : input)
            if (s.band_limit() != L) throw ConfigError("input sample band limit does not match config", o.input);
    }
    const std::string dir = ensure_dir(cfg.output_dir);

    {
        const auto h = harmonic_check(L, SphereGrid::for_band_limit(L), 4, cfg.seed);
        checks.push_back({"harmonic_orthonormality",
                          h.gram_max_dev <= 1e-10 && h.roundtrip_max_err <= 1e-10,
                          {{"gram_max_dev", h.gram_max_dev}, {"roundtrip_max_err", h.roundtrip_max_err}}});
    }
    const double c0 = spec[0];
    for (int n = 1; n <= 3; ++n) {
        const McCheck m = mehler_check(c0, 1.0, n, 1.3 * std::sqrt(c0), v.n_mc, cfg.seed);
        checks.push_back({"mehler_n" + std::to_string(n), m.pass, mc_json(m)});
    }
    {
        struct Fn {
            const char* name;
            double (*u)(double);
            double (*du)(double);
        };
        const Fn fns[] = {
            {"square", [](double x) { return x * x; }, [](double x) { return 2.0 * x; }},
            {"cube", [](double x) { return x * x * x; }, [](double x) { return 3.0 * x * x; }},
            {"cos", [](double x) { return std::cos(x); }, [](double x) { return -std::sin(x); }},
        };
        for (const auto& f : fns) {
            const McCheck m = commutation_check(f.u, f.du, c0, 1.0, 0.4, v.n_mc, 1e-3, cfg.seed);
            checks.push_back({std::string("commutation_") + f.name, m.pass, mc_json(m)});
        }
    }
    {
        const TraceReport tr = trace_convergence(cfg.matern, 8, 256, 1e-4);
        json rows = json::array();
        for (const auto& r : tr.rows)
            rows.push_back({{"band_limit", r.band_limit}, {"trace", r.trace}, {"rel_change", r.rel_change}});
        report["trace"] = {{"rows", rows},
                           {"reference_bound", tr.reference},
                           {"ell0_term", tr.ell0_term},
                           {"trace_exceeds_reference", tr.rows.back().trace > tr.reference},
                           {"reference_asserted", false}};
        checks.push_back({"trace_convergence", tr.converged, {{"tolerance", 1e-4}}});
    }

    const auto* shift = std::get_if<GaussianShift>(&cfg.data);
    if (shift) {
        std::vector<double> xs;
        for (int i = 0; i <= 40; ++i) xs.push_back(-5.0 + 0.25 * i);
        double worst = 0.0;
        for (double t : {0.05, 0.5, 1.0, 2.0, 4.0, 8.0})
            worst = std::max(worst, score_identity_check(*shift, spec, t, xs));
        checks.push_back({"score_identity", worst <= 1e-10, {{"max_abs_dev", worst}}});
    }
    if (shift && kl_defined(cfg.data)) {
        bool all = true;
        json rows = json::array();
        for (double t : {0.5, 1.0, 2.0, 4.0, 8.0}) {
            const auto c = kl_contraction_check(*shift, spec, t);
            all = all && c.pass;
            rows.push_back({{"t", t}, {"kl_t", c.lhs}, {"bound", c.rhs}, {"pass", c.pass}});
        }
        checks.push_back({"kl_contraction", all, rows});

        bool monotone = true;
        double prev = expected_score_cm_norm(*shift, spec, grid.time(grid.steps()));
        for (int j = grid.steps() - 1; j >= 1; --j) {
            const double cur = expected_score_cm_norm(*shift, spec, grid.time(j));
            monotone = monotone && cur >= prev - 1e-12 * std::max(1.0, prev);
            prev = cur;
        }
        checks.push_back({"score_norm_monotone", monotone, json::object()});

        BoundOptions opts;
        opts.n_mc = v.h1_n_mc;
        opts.n_fit_samples = v.n_fit_samples;
        opts.seed = cfg.seed;
        std::shared_ptr<const Denoiser> corrupted;
        if (learned) {
            opts.learned = learned.get();
        } else if (v.score_offset != 0.0) {
            CoeffField offset(L);
            offset[0] = v.score_offset;
            corrupted = std::make_shared<ShiftedDenoiser>(make_exact_denoiser(cfg.data, spec), offset);
            opts.learned = corrupted.get();
        }
        const BoundReport br = verify_kl_bound(*shift, spec, grid, opts);
        report["bound_report"] = br.to_json();
        if (v.score_offset != 0.0 && !learned) report["bound_report"]["expected_eps_sq"] = v.score_offset * v.score_offset / c0;
        write_text(join(dir, "bound_report.txt"), br.to_text());
        checks.push_back({"kl_bound", br.pass, br.to_json()});
    } else {
        report["kl"] = "undefined";
        const auto exact = make_exact_denoiser(cfg.data, spec);
        const int draws = std::max(2, v.n_mc / grid.steps());
        const auto pairs = make_training_pairs(cfg.data, spec, grid, draws, PairSampling::Jump, cfg.seed, 0);
        const FunctionDenoiser stationary(L, [](double t, const CoeffField& x) { return std::exp(-0.5 * t) * x; });
        CoeffField offset(L);
        offset[0] = 0.5 * std::sqrt(c0);
        const ShiftedDenoiser shifted(exact, offset);
        const double bayes = empirical_loss(*exact, pairs, spec, LossNorm::CM);
        const double base = empirical_loss(stationary, pairs, spec, LossNorm::CM);
        const double off = empirical_loss(shifted, pairs, spec, LossNorm::CM);
        json detail{{"bayes_loss", bayes}, {"stationary_loss", base}, {"shifted_loss", off}, {"pairs", pairs.size()}};
        if (learned) {
            const double l = empirical_loss(*learned, pairs, spec, LossNorm::CM);
            detail["learned_loss"] = l;
            detail["learned_over_bayes"] = l / bayes;
        }
        checks.push_back({"denoiser_optimality", bayes <= base && bayes <= off, detail});
    }

    if (!input.empty()) {
        const auto est = estimate_power_spectrum(input, v.level);
        const bool inside = spectrum_within_ci(est, spec);
        io::write_spectrum_report(join(dir, "spectrum_report.csv"), est, spec);
        checks.push_back({"spectrum", inside, {{"n_samples", input.size()}, {"rows", spectrum_json(est, spec)}}});
    }

    json jchecks = json::array();
    std::vector<std::string> failures;
    std::ostringstream text;
    for (const auto& c : checks) {
        jchecks.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
        text << (c.pass ? "PASS " : "FAIL ") << c.name << '\n';
        if (!c.pass) failures.push_back(c.name);
    }
    if (report.contains("kl")) text << "INFO kl undefined for " << model_name(cfg.data) << " data; KL checks skipped\n";
    if (report.contains("bound_report")) {
        const auto& b = report["bound_report"];
        text << "INFO bound " << b["bound"].get<double>() << ", measured KL " << b["measured_kl"].get<double>()
             << " (" << b["measured_kind"].get<std::string>() << ")\n";
    }
    const auto& tr = report["trace"];
    text << "INFO trace(L=" << tr["rows"].back()["band_limit"].get<int>() << ") = " << tr["rows"].back()["trace"].get<double>()
         << ", printed bound " << tr["reference_bound"].get<double>() << " (not asserted)\n";
    report["checks"] = jchecks;
    report["failures"] = failures;
    report["pass"] = failures.empty();

    std::ofstream jf(join(dir, "verify_report.json"));
    if (!jf) throw IoError("cannot write verify_report.json in " + dir);
    jf << report.dump(2) << '\n';
    jf.flush();
    if (!jf) throw IoError("failed writing verify_report.json");
    write_text(join(dir, "verify_report.txt"), text.str());

    out << text.str();
    if (!failures.empty()) {
        err << "verify: " << failures.size() << " check(s) failed:";
        for (const auto& f : failures) err << ' ' << f;
        err << '\n';
        return kExitCheckFailed;
    }
    return kExitOk;
}

int cmd_spectrum(const Options& o, std::ostream& out, std::ostream& err) {
    const RunConfig cfg = resolve_config(o, false);
    const Spectrum spec = cfg.spectrum();
    const std::string in_dir = o.input.empty() ? cfg.output_dir : o.input;
    const auto samples = read_coeff_dir(in_dir);
    for (const auto& s : samples)
        if (s.band_limit() != cfg.band_limit) throw ConfigError("sample band limit does not match config", in_dir);
    const auto est = estimate_power_spectrum(samples, cfg.verify.level);
    const std::string dir = ensure_dir(cfg.output_dir);
    io::write_spectrum_report(join(dir, "spectrum_report.csv"), est, spec);
    int outside = 0;
    for (const auto& e : est) {
        const bool ok = spec[e.ell] >= e.ci_lo && spec[e.ell] <= e.ci_hi;
        if (!ok) {
            ++outside;
            err << "ell=" << e.ell << ": C=" << spec[e.ell] << " outside [" << e.ci_lo << ", " << e.ci_hi << "]\n";
        }
    }
    out << "spectrum of " << samples.size() << " samples: " << (est.size() - outside) << '/' << est.size()
        << " degrees inside the " << cfg.verify.level * 100 << "% interval\n";
    return outside == 0 ? kExitOk : kExitCheckFailed;
}

void add_common(CLI::App* cmd, Options& o) {
    cmd->add_option("--config", o.config, "JSON configuration file");
    cmd->add_option("--seed", o.seed, "Master seed (overrides config)");
    cmd->add_option("--out", o.out, "Output directory (overrides config)");
    cmd->add_option("--samples", o.samples, "Number of samples (overrides config)");
    cmd->add_flag("--exact-score", o.exact_score, "Use the exact denoiser of the data model");
    cmd->add_flag("--grid", o.grid, "Also write synthesized grid fields");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Score-based diffusion for band-limited spherical random fields", "sphdiff"};
    app.require_subcommand(1);
    Options o;
    auto* prior = app.add_subcommand("sample-prior", "Draw Matern prior fields");
    auto* forward = app.add_subcommand("forward", "Simulate forward OU trajectories from the data model");
    auto* trainc = app.add_subcommand("train", "Fit a denoiser on simulated forward pairs");
    auto* generate = app.add_subcommand("generate", "Run the backward Euler-Maruyama sampler");
    auto* verify = app.add_subcommand("verify", "Run the diagnostics suite");
    auto* spectrum = app.add_subcommand("spectrum", "Estimate the angular power spectrum of sample files");
    for (auto* c : {prior, forward, trainc, generate, verify, spectrum}) add_common(c, o);
    generate->add_option("--checkpoint", o.checkpoint, "Trained checkpoint JSON");
    generate->add_option("--debug-path", o.debug_path, "Write every backward state to this CSV");
    verify->add_option("--checkpoint", o.checkpoint, "Evaluate a trained checkpoint");
    verify->add_option("--input", o.input, "Directory of coefficient CSVs to test against the prior spectrum");
    verify->add_option("--score-offset", o.score_offset, "Add a constant to the exact denoiser's l=0 output");
    spectrum->add_option("--input", o.input, "Directory of coefficient CSVs (default: --out)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfigError;
    }

    try {
        if (*prior) return cmd_sample_prior(o, out);
        if (*forward) return cmd_forward(o, out);
        if (*trainc) return cmd_train(o, out);
        if (*generate) return cmd_generate(o, out);
        if (*verify) return cmd_verify(o, out, err);
        if (*spectrum) return cmd_spectrum(o, out, err);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfigError;
    } catch (const DomainError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfigError;
    } catch (const IoError& e) {
        err << "I/O error: " << e.what() << '\n';
        return kExitIoError;
    } catch (const TrainingError& e) {
        err << "training failed: " << e.what() << '\n';
        return kExitCheckFailed;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitCheckFailed;
    }
    return kExitConfigError;
}

int run_cli(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run_cli(args, std::cout, std::cerr);
}

}  // namespace sphdiff
