#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "sphdiff/data_model.hpp"
#include "sphdiff/forward.hpp"
#include "sphdiff/learning.hpp"
#include "sphdiff/matern.hpp"

namespace sphdiff {

struct VerifyConfig {
    int n_mc = 20000;          // Mehler / commutation checks
    int h1_n_mc = 2000;        // learned-model score error
    int n_fit_samples = 4000;  // generated samples when the final law must be fitted
    double score_offset = 0.0; // constant added to the exact denoiser's l=0 output
    double level = 0.99;       // spectrum CI level
};

struct RunConfig {
    MaternParams matern;
    int band_limit = 8;
    double horizon = 8.0;
    int steps = 160;
    DataModel data;  // default: prior covariance, mean 1 at l=0
    Architecture architecture = Architecture::AffineDiagonal;
    std::vector<int> hidden{32, 32};
    TrainConfig train;
    int n_samples = 16;  // sample-prior / forward / generate
    VerifyConfig verify;
    std::uint64_t seed = 0;
    std::string output_dir = "out";

    Spectrum spectrum() const { return matern_spectrum(matern, band_limit); }
    TimeGrid grid() const { return TimeGrid(horizon, steps); }
};

// The default configuration: kappa = beta = 1, L = 8, T = 8, M = 160.
RunConfig default_config();

// Parses and validates; ConfigError paths name the offending field. Relative
// file references (data.atom_files) resolve against `base_dir`.
RunConfig parse_config(const nlohmann::json& j, const std::string& base_dir = ".");
RunConfig load_config(const std::string& path);

// Round-trippable JSON form of the configuration.
nlohmann::json config_to_json(const RunConfig& cfg);

}  // namespace sphdiff
