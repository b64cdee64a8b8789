#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "sphdiff/data_model.hpp"
#include "sphdiff/forward.hpp"

namespace sphdiff {

// One Euler-Maruyama step of the approximate backward SDE, from backward time
// t_{j-1} to t_j (1 <= j <= M). With s = T - t_{j-1} the forward time at the left
// endpoint:
//
//   y' = y - (h/2) y + (h / sigma_s) (d(s, y) - e^{-s/2} y) + sqrt(h) xi,   xi ~ N(0, C).
//
// `noise` is xi itself (already scaled by sqrt(C)); pass zeros for the drift alone.
CoeffField em_step(const CoeffField& y, int j, const TimeGrid& grid, const Denoiser& d, const CoeffField& noise);
CoeffField em_step(const CoeffField& y, int j, const TimeGrid& grid, const Spectrum& spec, const Denoiser& d,
                   RngStream& rng);

using PathObserver = std::function<void(int j, double t, const CoeffField& y)>;

// Y_0 ~ m, then em_step for j = 1..M; returns Y_T. The observer, if set, sees every
// state including Y_0.
CoeffField sample_backward(const Spectrum& spec, const TimeGrid& grid, const Denoiser& d, RngStream& rng,
                           const PathObserver& observer = {});

// Gaussian law with dense covariance.
struct GaussianLaw {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;

    std::vector<double> mean_vector() const { return {mean.data(), mean.data() + mean.size()}; }
    std::vector<double> variances() const;
};

// Exact law of the Euler-Maruyama iterates when d is affine at every queried time.
// Returns M + 1 laws, entry j being the law of Y_{t_j}. Throws DomainError if d is not affine.
std::vector<GaussianLaw> exact_em_laws(const Spectrum& spec, const TimeGrid& grid, const Denoiser& d);
GaussianLaw exact_em_law(const Spectrum& spec, const TimeGrid& grid, const Denoiser& d);
GaussianLaw exact_em_law(const Spectrum& spec, const TimeGrid& grid, const GaussianShift& model);

}  // namespace sphdiff
