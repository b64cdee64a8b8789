#include "sphdiff/learning.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "sphdiff/errors.hpp"

namespace sphdiff {

using nlohmann::json;

std::string to_string(LossNorm n) { return n == LossNorm::H ? "H" : "CM"; }

std::string to_string(Architecture a) {
    switch (a) {
        case Architecture::AffineDiagonal: return "affine_diagonal";
        case Architecture::AffineDense: return "affine_dense";
        case Architecture::TimeMlp: return "time_mlp";
    }
    return "unknown";
}

LossNorm loss_norm_from_string(const std::string& s) {
    if (s == "H") return LossNorm::H;
    if (s == "CM") return LossNorm::CM;
    throw ConfigError("unknown loss norm '" + s + "' (expected H or CM)");
}

Architecture architecture_from_string(const std::string& s) {
    if (s == "affine_diagonal") return Architecture::AffineDiagonal;
    if (s == "affine_dense") return Architecture::AffineDense;
    if (s == "time_mlp") return Architecture::TimeMlp;
    throw ConfigError("unknown architecture '" + s + "'");
}

void TrainConfig::validate(int steps) const {
    if (n_samples < 1) throw ConfigError("n_samples must be >= 1", "train.n_samples");
    if (!(step_size > 0.0)) throw ConfigError("step size must be > 0", "train.step_size");
    if (epochs < 1) throw ConfigError("epochs must be >= 1", "train.epochs");
    if (minibatch < 0 || static_cast<long long>(minibatch) > static_cast<long long>(n_samples) * steps)
        throw ConfigError("minibatch must be in [1, n_samples * M] (or 0 for the model default)", "train.minibatch");
}

std::vector<TrainingPair> make_training_pairs(const DataModel& data, const Spectrum& spec, const TimeGrid& grid,
                                              int n_samples, PairSampling sampling, std::uint64_t seed,
                                              std::uint64_t epoch) {
    std::vector<TrainingPair> pairs;
    pairs.reserve(static_cast<std::size_t>(n_samples) * grid.steps());
    for (int i = 0; i < n_samples; ++i) {
        const std::uint64_t id = epoch * static_cast<std::uint64_t>(n_samples) + i;
        RngStream data_rng(seed, Purpose::DataSample, id);
        RngStream fwd_rng(seed, Purpose::Forward, id);
        const CoeffField x0 = sample_data(data, data_rng);
        if (sampling == PairSampling::Jump) {
            for (int j = 1; j <= grid.steps(); ++j)
                pairs.push_back({j, grid.time(j), x0, ou_transition(x0, spec, grid.time(j), fwd_rng)});
        } else {
            const auto traj = simulate_forward(x0, spec, grid, fwd_rng);
            for (int j = 1; j <= grid.steps(); ++j) pairs.push_back({j, grid.time(j), x0, traj.states[j]});
        }
    }
    return pairs;
}

double pair_loss(const Denoiser& model, const TrainingPair& pair, const Spectrum& spec, LossNorm norm) {
    const CoeffField pred = model(pair.t, pair.xt);
    const auto deg = degree_table(pair.x0.band_limit());
    double acc = 0.0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
        const double r = pair.x0[k] - pred[k];
        acc += norm == LossNorm::CM ? r * r / spec[deg[k]] : r * r;
    }
    return acc;
}

std::vector<double> pair_losses(const Denoiser& model, std::span<const TrainingPair> pairs, const Spectrum& spec,
                                LossNorm norm) {
    std::vector<double> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) out.push_back(pair_loss(model, p, spec, norm));
    return out;
}

double empirical_loss(const Denoiser& model, std::span<const TrainingPair> pairs, const Spectrum& spec,
                      LossNorm norm) {
    if (pairs.empty()) throw DomainError("empirical_loss: no pairs");
    double acc = 0.0;
    for (const auto& p : pairs) acc += pair_loss(model, p, spec, norm);
    return acc / static_cast<double>(pairs.size());
}

// ---------------------------------------------------------------------------

LearnedDenoiser::LearnedDenoiser(Spectrum spec, TimeGrid grid) : spec_(std::move(spec)), grid_(grid) {
    for (double c : spec_.per_coeff()) scale_.push_back(std::sqrt(c));
}

std::vector<double> LearnedDenoiser::whitened_weights(LossNorm norm) const {
    // CM: (x0 - d)^2 / C = (z0 - zhat)^2.  H: (x0 - d)^2 = C (z0 - zhat)^2.
    std::vector<double> w(scale_.size(), 1.0);
    if (norm == LossNorm::H)
        for (std::size_t k = 0; k < w.size(); ++k) w[k] = scale_[k] * scale_[k];
    return w;
}

json LearnedDenoiser::to_json() const {
    json j;
    j["format"] = "sphdiff-checkpoint";
    j["version"] = 1;
    j["architecture"] = to_string(architecture());
    j["band_limit"] = band_limit();
    j["spectrum"] = spec_.values();
    j["grid"] = {{"T", grid_.horizon()}, {"M", grid_.steps()}};
    const auto p = params();
    j["params"] = std::vector<double>(p.begin(), p.end());
    extra_json(j);
    return j;
}

// ---------------------------------------------------------------------------

PerTimeAffine::PerTimeAffine(Spectrum spec, TimeGrid grid, bool dense)
    : LearnedDenoiser(std::move(spec), grid), dense_(dense) {
    const std::size_t K = scale_.size();
    params_.assign(block_size() * (grid_.steps() + 1), 0.0);
    for (int j = 0; j <= grid_.steps(); ++j) {
        const double decay = std::exp(-0.5 * grid_.time(j));
        double* g = params_.data() + block_offset(j);
        for (std::size_t k = 0; k < K; ++k) g[dense_ ? k * K + k : k] = decay;
    }
}

std::size_t PerTimeAffine::block_size() const {
    const std::size_t K = scale_.size();
    return dense_ ? K * K + K : 2 * K;
}

CoeffField PerTimeAffine::operator()(double t, const CoeffField& x) const {
    if (x.band_limit() != band_limit()) throw DomainError("PerTimeAffine: band limit mismatch");
    const std::size_t K = scale_.size();
    const double* g = params_.data() + block_offset(grid_.index_at_or_before(t));
    const double* b = g + (dense_ ? K * K : K);
    CoeffField out(band_limit());
    for (std::size_t k = 0; k < K; ++k) {
        double zhat = b[k];
        if (dense_)
            for (std::size_t l = 0; l < K; ++l) zhat += g[k * K + l] * x[l] / scale_[l];
        else
            zhat += g[k] * x[k] / scale_[k];
        out[k] = scale_[k] * zhat;
    }
    return out;
}

std::optional<AffineForm> PerTimeAffine::affine_form(double t) const {
    const std::size_t K = scale_.size();
    const double* g = params_.data() + block_offset(grid_.index_at_or_before(t));
    const double* b = g + (dense_ ? K * K : K);
    const auto n = static_cast<Eigen::Index>(K);
    AffineForm f{Eigen::MatrixXd::Zero(n, n), Eigen::VectorXd::Zero(n), !dense_};
    for (std::size_t k = 0; k < K; ++k) {
        f.offset(k) = scale_[k] * b[k];
        if (dense_)
            for (std::size_t l = 0; l < K; ++l) f.gain(k, l) = scale_[k] * g[k * K + l] / scale_[l];
        else
            f.gain(k, k) = g[k];
    }
    return f;
}

double PerTimeAffine::loss_and_gradient(std::span<const TrainingPair> pairs, LossNorm norm,
                                        std::span<double> grad) const {
    if (grad.size() != params_.size()) throw DomainError("PerTimeAffine: gradient size mismatch");
    std::fill(grad.begin(), grad.end(), 0.0);
    if (pairs.empty()) return 0.0;
    const std::size_t K = scale_.size();
    const auto w = whitened_weights(norm);
    const double inv_n = 1.0 / static_cast<double>(pairs.size());
    std::vector<double> z(K), resid(K);
    double loss = 0.0;
    for (const auto& p : pairs) {
        const std::size_t off = block_offset(grid_.index_at_or_before(p.t));
        const double* g = params_.data() + off;
        const double* b = g + (dense_ ? K * K : K);
        double* dg = grad.data() + off;
        double* db = dg + (dense_ ? K * K : K);
        for (std::size_t k = 0; k < K; ++k) z[k] = p.xt[k] / scale_[k];
        for (std::size_t k = 0; k < K; ++k) {
            double zhat = b[k];
            if (dense_)
                for (std::size_t l = 0; l < K; ++l) zhat += g[k * K + l] * z[l];
            else
                zhat += g[k] * z[k];
            resid[k] = p.x0[k] / scale_[k] - zhat;
            loss += w[k] * resid[k] * resid[k];
        }
        for (std::size_t k = 0; k < K; ++k) {
            const double dz = -2.0 * w[k] * resid[k] * inv_n;
            db[k] += dz;
            if (dense_)
                for (std::size_t l = 0; l < K; ++l) dg[k * K + l] += dz * z[l];
            else
                dg[k] += dz * z[k];
        }
    }
    return loss * inv_n;
}

void PerTimeAffine::precondition(std::span<const TrainingPair> batch, LossNorm norm, std::span<double> grad) const {
    const std::size_t K = scale_.size();
    const int blocks = grid_.steps() + 1;
    const auto w = whitened_weights(norm);
    const double n = static_cast<double>(batch.size());
    // Per block: sums of [z; 1][z; 1]^T (dense) or of (z_k^2, z_k, 1) per coefficient (diagonal).
    std::vector<int> count(blocks, 0);
    std::vector<Eigen::MatrixXd> gram(dense_ ? blocks : 0);
    std::vector<std::vector<double>> szz(dense_ ? 0 : blocks), sz(dense_ ? 0 : blocks);
    Eigen::VectorXd a(K + 1);
    for (const auto& p : batch) {
        const int j = grid_.index_at_or_before(p.t);
        ++count[j];
        if (dense_) {
            if (gram[j].size() == 0) gram[j] = Eigen::MatrixXd::Zero(K + 1, K + 1);
            for (std::size_t k = 0; k < K; ++k) a(k) = p.xt[k] / scale_[k];
            a(K) = 1.0;
            gram[j].selfadjointView<Eigen::Lower>().rankUpdate(a);
        } else {
            if (szz[j].empty()) szz[j].assign(K, 0.0), sz[j].assign(K, 0.0);
            for (std::size_t k = 0; k < K; ++k) {
                const double z = p.xt[k] / scale_[k];
                szz[j][k] += z * z;
                sz[j][k] += z;
            }
        }
    }
    for (int j = 0; j < blocks; ++j) {
        if (count[j] == 0) continue;
        const double c = count[j];
        const double damp = 1e-8 * c;
        double* dg = grad.data() + block_offset(j);
        double* db = dg + (dense_ ? K * K : K);
        if (dense_) {
            Eigen::MatrixXd s = gram[j].selfadjointView<Eigen::Lower>();
            s.diagonal().array() += damp;
            const Eigen::LLT<Eigen::MatrixXd> llt(s);
            for (std::size_t k = 0; k < K; ++k) {
                for (std::size_t l = 0; l < K; ++l) a(l) = dg[k * K + l];
                a(K) = db[k];
                const Eigen::VectorXd step = llt.solve(a) * (n / (2.0 * w[k]));
                for (std::size_t l = 0; l < K; ++l) dg[k * K + l] = step(l);
                db[k] = step(K);
            }
        } else {
            for (std::size_t k = 0; k < K; ++k) {
                // [szz sz; sz c]^{-1} applied to (dg, db)
                const double h11 = szz[j][k] + damp, h12 = sz[j][k], h22 = c + damp;
                const double det = h11 * h22 - h12 * h12;
                const double f = n / (2.0 * w[k] * det);
                const double g0 = dg[k], b0 = db[k];
                dg[k] = f * (h22 * g0 - h12 * b0);
                db[k] = f * (h11 * b0 - h12 * g0);
            }
        }
    }
}

// ---------------------------------------------------------------------------

TimeMlp::TimeMlp(Spectrum spec, TimeGrid grid, std::vector<int> hidden, std::uint64_t init_seed)
    : LearnedDenoiser(std::move(spec), grid), hidden_(std::move(hidden)) {
    if (hidden_.empty()) throw ConfigError("TimeMlp needs at least one hidden layer", "train.hidden");
    const int K = static_cast<int>(scale_.size());
    int in = K + 2;
    std::size_t offset = 0;
    for (int width : hidden_) {
        if (width < 1) throw ConfigError("hidden widths must be positive", "train.hidden");
        layers_.push_back({in, width, offset});
        offset += static_cast<std::size_t>(width) * in + width;
        in = width;
    }
    layers_.push_back({in, K, offset});
    offset += static_cast<std::size_t>(K) * in + K;
    params_.assign(offset, 0.0);

    RngStream rng(init_seed, Purpose::Training, kMaxSampleId);
    for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
        const Layer& L = layers_[l];
        const double sd = 1.0 / std::sqrt(static_cast<double>(L.in));
        for (int i = 0; i < L.out * L.in; ++i) params_[L.offset + i] = sd * rng.normal();
    }
}

CoeffField TimeMlp::operator()(double t, const CoeffField& x) const {
    if (x.band_limit() != band_limit()) throw DomainError("TimeMlp: band limit mismatch");
    const int K = static_cast<int>(scale_.size());
    const double decay = std::exp(-0.5 * t);
    Eigen::VectorXd a(K + 2);
    a(0) = t / grid_.horizon();
    a(1) = decay;
    for (int k = 0; k < K; ++k) a(k + 2) = x[k] / scale_[k];
    const Eigen::VectorXd z = a.tail(K);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const Layer& L = layers_[l];
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> W(
            params_.data() + L.offset, L.out, L.in);
        Eigen::Map<const Eigen::VectorXd> b(params_.data() + L.offset + static_cast<std::size_t>(L.out) * L.in,
                                            L.out);
        Eigen::VectorXd pre = W * a + b;
        a = l + 1 < layers_.size() ? Eigen::VectorXd(pre.array().tanh()) : pre;
    }
    CoeffField out(band_limit());
    for (int k = 0; k < K; ++k) out[k] = scale_[k] * (decay * z(k) + a(k));
    return out;
}

double TimeMlp::loss_and_gradient(std::span<const TrainingPair> pairs, LossNorm norm,
                                  std::span<double> grad) const {
    if (grad.size() != params_.size()) throw DomainError("TimeMlp: gradient size mismatch");
    std::fill(grad.begin(), grad.end(), 0.0);
    if (pairs.empty()) return 0.0;
    const int K = static_cast<int>(scale_.size());
    const auto wv = whitened_weights(norm);
    const Eigen::Map<const Eigen::VectorXd> w(wv.data(), K);
    const double inv_n = 1.0 / static_cast<double>(pairs.size());
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    std::vector<Eigen::VectorXd> acts(layers_.size() + 1);
    double loss = 0.0;
    for (const auto& p : pairs) {
        const double decay = std::exp(-0.5 * p.t);
        Eigen::VectorXd& a0 = acts[0];
        a0.resize(K + 2);
        a0(0) = p.t / grid_.horizon();
        a0(1) = decay;
        Eigen::VectorXd z0(K);
        for (int k = 0; k < K; ++k) {
            a0(k + 2) = p.xt[k] / scale_[k];
            z0(k) = p.x0[k] / scale_[k];
        }
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const Layer& L = layers_[l];
            Eigen::Map<const RowMat> W(params_.data() + L.offset, L.out, L.in);
            Eigen::Map<const Eigen::VectorXd> b(params_.data() + L.offset + static_cast<std::size_t>(L.out) * L.in,
                                                L.out);
            Eigen::VectorXd pre = W * acts[l] + b;
            acts[l + 1] = l + 1 < layers_.size() ? Eigen::VectorXd(pre.array().tanh()) : pre;
        }
        const Eigen::VectorXd resid = z0 - (decay * acts[0].tail(K) + acts.back());
        loss += (w.array() * resid.array().square()).sum();

        Eigen::VectorXd delta = -2.0 * inv_n * (w.array() * resid.array()).matrix();
        for (std::size_t l = layers_.size(); l-- > 0;) {
            const Layer& L = layers_[l];
            Eigen::Map<RowMat> dW(grad.data() + L.offset, L.out, L.in);
            Eigen::Map<Eigen::VectorXd> db(grad.data() + L.offset + static_cast<std::size_t>(L.out) * L.in, L.out);
            dW.noalias() += delta * acts[l].transpose();
            db += delta;
            if (l == 0) break;
            Eigen::Map<const RowMat> W(params_.data() + L.offset, L.out, L.in);
            delta = ((W.transpose() * delta).array() * (1.0 - acts[l].array().square())).matrix();
        }
    }
    return loss * inv_n;
}

void TimeMlp::extra_json(json& j) const { j["hidden"] = hidden_; }

// ---------------------------------------------------------------------------

std::unique_ptr<LearnedDenoiser> make_learned_denoiser(Architecture arch, const Spectrum& spec, const TimeGrid& grid,
                                                       const std::vector<int>& hidden, std::uint64_t init_seed) {
    switch (arch) {
        case Architecture::AffineDiagonal: return std::make_unique<PerTimeAffine>(spec, grid, false);
        case Architecture::AffineDense: return std::make_unique<PerTimeAffine>(spec, grid, true);
        case Architecture::TimeMlp: return std::make_unique<TimeMlp>(spec, grid, hidden, init_seed);
    }
    throw ConfigError("unknown architecture");
}

std::unique_ptr<LearnedDenoiser> learned_denoiser_from_json(const json& j) {
    try {
        if (j.at("format").get<std::string>() != "sphdiff-checkpoint")
            throw ConfigError("not a sphdiff checkpoint", "format");
        const Spectrum spec(j.at("spectrum").get<std::vector<double>>());
        if (spec.band_limit() != j.at("band_limit").get<int>())
            throw ConfigError("spectrum length does not match band limit", "band_limit");
        const TimeGrid grid(j.at("grid").at("T").get<double>(), j.at("grid").at("M").get<int>());
        const Architecture arch = architecture_from_string(j.at("architecture").get<std::string>());
        const std::vector<int> hidden = j.value("hidden", std::vector<int>{});
        auto model = make_learned_denoiser(arch, spec, grid, hidden, 0);
        const auto params = j.at("params").get<std::vector<double>>();
        auto dst = model->params();
        if (params.size() != dst.size())
            throw ConfigError("expected " + std::to_string(dst.size()) + " parameters, got " +
                                  std::to_string(params.size()),
                              "params");
        std::copy(params.begin(), params.end(), dst.begin());
        return model;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed checkpoint: ") + e.what());
    }
}

void save_checkpoint(const LearnedDenoiser& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write checkpoint " + path);
    out << model.to_json().dump(1) << '\n';
    if (!out) throw IoError("failed writing checkpoint " + path);
}

std::unique_ptr<LearnedDenoiser> load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read checkpoint " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("checkpoint is not valid JSON: ") + e.what(), path);
    }
    return learned_denoiser_from_json(j);
}

// ---------------------------------------------------------------------------

TrainResult train(LearnedDenoiser& model, const DataModel& data, const TrainConfig& cfg) {
    const Spectrum& spec = model.spectrum();
    const TimeGrid& grid = model.grid();
    cfg.validate(grid.steps());
    validate(data, spec);

    TrainResult result;
    std::vector<double> grad(model.params().size());
    std::vector<TrainingPair> pairs;
    double best = std::numeric_limits<double>::infinity();
    double last_finite = std::numeric_limits<double>::quiet_NaN();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (!cfg.fixed_dataset || epoch == 0)
            pairs = make_training_pairs(data, spec, grid, cfg.n_samples, cfg.sampling, cfg.seed,
                                        static_cast<std::uint64_t>(epoch));
        RngStream shuffle_rng(cfg.seed, Purpose::Shuffle, static_cast<std::uint64_t>(epoch));
        for (std::size_t i = pairs.size(); i > 1; --i) std::swap(pairs[i - 1], pairs[shuffle_rng.below(i)]);

        const std::size_t batch_size =
            cfg.minibatch > 0 ? static_cast<std::size_t>(cfg.minibatch) : model.default_minibatch(pairs.size());
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < pairs.size(); start += batch_size) {
            const std::size_t len = std::min<std::size_t>(batch_size, pairs.size() - start);
            const std::span<const TrainingPair> batch(pairs.data() + start, len);
            const double loss = model.loss_and_gradient(batch, cfg.loss_norm, grad);
            if (!std::isfinite(loss))
                throw TrainingError("training diverged at epoch " + std::to_string(epoch) +
                                        " (last finite loss " + std::to_string(last_finite) + ")",
                                    epoch, last_finite);
            // Clip the loss gradient itself, then rescale per block.
            if (cfg.clip_norm > 0.0) {
                double norm = 0.0;
                for (double g : grad) norm += g * g;
                norm = std::sqrt(norm);
                if (norm > cfg.clip_norm)
                    for (double& g : grad) g *= cfg.clip_norm / norm;
            }
            model.precondition(batch, cfg.loss_norm, grad);
            auto params = model.params();
            for (std::size_t i = 0; i < params.size(); ++i) params[i] -= cfg.step_size * grad[i];
            epoch_loss += loss * static_cast<double>(len);
        }
        epoch_loss /= static_cast<double>(pairs.size());
        last_finite = epoch_loss;
        best = std::min(best, epoch_loss);
        result.loss_history.push_back(epoch_loss);
        result.best_history.push_back(best);
    }
    return result;
}

Estimate h1_error(const Denoiser& model, const Denoiser& exact, const Spectrum& spec, const TimeGrid& grid,
                  const DataModel& data, int n_mc, std::uint64_t seed) {
    if (n_mc < 2) throw DomainError("h1_error: need at least two Monte Carlo samples");
    const auto deg = degree_table(spec.band_limit());
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n_mc; ++i) {
        RngStream data_rng(seed, Purpose::Diagnostics, 2 * static_cast<std::uint64_t>(i));
        RngStream fwd_rng(seed, Purpose::Diagnostics, 2 * static_cast<std::uint64_t>(i) + 1);
        const CoeffField x0 = sample_data(data, data_rng);
        double value = 0.0;
        for (int j = 1; j <= grid.steps(); ++j) {
            const double t = grid.time(j);
            const CoeffField xt = ou_transition(x0, spec, t, fwd_rng);
            const CoeffField a = exact(t, xt);
            const CoeffField b = model(t, xt);
            for (std::size_t k = 0; k < a.size(); ++k) {
                const double r = a[k] - b[k];
                value += r * r / spec[deg[k]];
            }
        }
        value /= grid.steps();
        sum += value;
        sum_sq += value * value;
    }
    const double mean = sum / n_mc;
    const double var = std::max(0.0, (sum_sq / n_mc - mean * mean) * n_mc / (n_mc - 1.0));
    return {mean, std::sqrt(var / n_mc)};
}

}  // namespace sphdiff
