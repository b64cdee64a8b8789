#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "sphdiff/data_model.hpp"
#include "sphdiff/forward.hpp"

namespace sphdiff {

enum class LossNorm { H, CM };
enum class PairSampling { Jump, Trajectory };
enum class Architecture { AffineDiagonal, AffineDense, TimeMlp };

std::string to_string(LossNorm n);
std::string to_string(Architecture a);
LossNorm loss_norm_from_string(const std::string& s);
Architecture architecture_from_string(const std::string& s);

struct TrainConfig {
    int n_samples = 256;        // data draws per epoch
    double step_size = 0.05;    // SGD learning rate
    int epochs = 200;
    int minibatch = 0;          // pairs per SGD step; 0 lets the model choose
    double clip_norm = 10.0;    // gradient clipping threshold (<= 0 disables)
    std::uint64_t seed = 1;
    LossNorm loss_norm = LossNorm::CM;
    PairSampling sampling = PairSampling::Jump;
    bool fixed_dataset = false;  // reuse the epoch-0 pairs every epoch

    void validate(int steps) const;
};

// One (t_j, X_0, X_{t_j}) training example.
struct TrainingPair {
    int time_index = 0;
    double t = 0.0;
    CoeffField x0;
    CoeffField xt;
};

// N data draws, each paired with its forward state at every grid time t_1..t_M.
// Draw i of epoch e uses the streams (seed, DataSample|Forward, e * N + i).
std::vector<TrainingPair> make_training_pairs(const DataModel& data, const Spectrum& spec, const TimeGrid& grid,
                                              int n_samples, PairSampling sampling, std::uint64_t seed,
                                              std::uint64_t epoch);

// Squared error of one pair under the chosen norm.
double pair_loss(const Denoiser& model, const TrainingPair& pair, const Spectrum& spec, LossNorm norm);
std::vector<double> pair_losses(const Denoiser& model, std::span<const TrainingPair> pairs, const Spectrum& spec,
                                LossNorm norm);
// Mean over pairs of ||X_0 - model(t, X_t)||^2.
double empirical_loss(const Denoiser& model, std::span<const TrainingPair> pairs, const Spectrum& spec,
                      LossNorm norm);

// A trainable denoiser. Models act in whitened coordinates z = x / sqrt(C_ell)
// and return sqrt(C_ell) * zhat, so the Cameron-Martin loss is isotropic in z.
class LearnedDenoiser : public Denoiser {
public:
    LearnedDenoiser(Spectrum spec, TimeGrid grid);

    int band_limit() const override { return spec_.band_limit(); }
    const Spectrum& spectrum() const { return spec_; }
    const TimeGrid& grid() const { return grid_; }

    virtual Architecture architecture() const = 0;
    virtual std::span<double> params() = 0;
    virtual std::span<const double> params() const = 0;

    // Mean pair loss and its exact gradient with respect to params().
    virtual double loss_and_gradient(std::span<const TrainingPair> pairs, LossNorm norm,
                                     std::span<double> grad) const = 0;
    // Minibatch used when TrainConfig::minibatch is 0.
    virtual std::size_t default_minibatch(std::size_t n_pairs) const { return std::min<std::size_t>(2048, n_pairs); }
    // Rescales a minibatch gradient before the SGD update. Default: identity.
    virtual void precondition(std::span<const TrainingPair> /*batch*/, LossNorm /*norm*/,
                              std::span<double> /*grad*/) const {}

    nlohmann::json to_json() const;

protected:
    virtual void extra_json(nlohmann::json& /*j*/) const {}
    // Per-coefficient weight of (z0 - zhat)^2 in the loss.
    std::vector<double> whitened_weights(LossNorm norm) const;

    Spectrum spec_;
    TimeGrid grid_;
    std::vector<double> scale_;  // sqrt(C) per flat index
};

// Independent affine map per grid time, zhat = G_j z + b_j with G_j diagonal or dense.
// Off-grid times use the nearest grid time at or before t.
class PerTimeAffine final : public LearnedDenoiser {
public:
    PerTimeAffine(Spectrum spec, TimeGrid grid, bool dense);

    Architecture architecture() const override {
        return dense_ ? Architecture::AffineDense : Architecture::AffineDiagonal;
    }
    CoeffField operator()(double t, const CoeffField& x) const override;
    std::optional<AffineForm> affine_form(double t) const override;
    std::span<double> params() override { return params_; }
    std::span<const double> params() const override { return params_; }
    double loss_and_gradient(std::span<const TrainingPair> pairs, LossNorm norm,
                             std::span<double> grad) const override;
    // Gauss-Newton scaling per time block: the loss is quadratic in each block, so the
    // gradient is multiplied by the inverse of the block's minibatch Hessian and a
    // step of size s moves the block a fraction s of the way to the minibatch
    // least-squares fit. Keeps ill-conditioned early times from stalling.
    void precondition(std::span<const TrainingPair> batch, LossNorm norm, std::span<double> grad) const override;
    // Full epochs: with small batches each time block sees only a handful of pairs
    // per step and the per-block normalization turns that into parameter noise.
    std::size_t default_minibatch(std::size_t n_pairs) const override { return n_pairs; }

    bool dense() const { return dense_; }

private:
    std::size_t block_size() const;
    std::size_t block_offset(int j) const { return static_cast<std::size_t>(j) * block_size(); }

    bool dense_;
    std::vector<double> params_;
};

// Feed-forward network on features (t/T, e^{-t/2}, z) with tanh hidden layers:
// zhat = e^{-t/2} z + W_out h + b_out. The skip term is the stationary-data
// denoiser, so a zero output layer is a sensible starting point.
class TimeMlp final : public LearnedDenoiser {
public:
    TimeMlp(Spectrum spec, TimeGrid grid, std::vector<int> hidden, std::uint64_t init_seed);

    Architecture architecture() const override { return Architecture::TimeMlp; }
    CoeffField operator()(double t, const CoeffField& x) const override;
    std::span<double> params() override { return params_; }
    std::span<const double> params() const override { return params_; }
    double loss_and_gradient(std::span<const TrainingPair> pairs, LossNorm norm,
                             std::span<double> grad) const override;

    const std::vector<int>& hidden() const { return hidden_; }

protected:
    void extra_json(nlohmann::json& j) const override;

private:
    struct Layer {
        int in, out;
        std::size_t offset;  // W (out x in, row-major) then b (out)
    };
    std::vector<int> hidden_;
    std::vector<Layer> layers_;
    std::vector<double> params_;
};

std::unique_ptr<LearnedDenoiser> make_learned_denoiser(Architecture arch, const Spectrum& spec, const TimeGrid& grid,
                                                       const std::vector<int>& hidden, std::uint64_t init_seed);

std::unique_ptr<LearnedDenoiser> learned_denoiser_from_json(const nlohmann::json& j);
void save_checkpoint(const LearnedDenoiser& model, const std::string& path);
std::unique_ptr<LearnedDenoiser> load_checkpoint(const std::string& path);

struct TrainResult {
    std::vector<double> loss_history;  // mean training loss per epoch
    std::vector<double> best_history;  // running minimum of loss_history
};

// Minibatch SGD on the empirical loss over simulated forward pairs.
// Throws TrainingError if the loss becomes non-finite.
TrainResult train(LearnedDenoiser& model, const DataModel& data, const TrainConfig& cfg);

// Monte Carlo estimate of (1/M) sum_j E || exact(t_j, X_{t_j}) - model(t_j, X_{t_j}) ||^2_CM
// over the forward times t_j = j h, j = 1..M, that the backward sampler queries.
Estimate h1_error(const Denoiser& model, const Denoiser& exact, const Spectrum& spec, const TimeGrid& grid,
                  const DataModel& data, int n_mc, std::uint64_t seed);

}  // namespace sphdiff
