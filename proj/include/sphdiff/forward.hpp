#pragma once

#include <vector>

#include "sphdiff/matern.hpp"
#include "sphdiff/rng.hpp"
#include "sphdiff/spectral.hpp"

namespace sphdiff {

// Uniform grid 0 = t_0 < ... < t_M = T.
class TimeGrid {
public:
    TimeGrid(double horizon, int steps);

    double horizon() const { return horizon_; }
    int steps() const { return steps_; }
    double step() const { return horizon_ / steps_; }
    // t_j = j * h; t_M is exactly T.
    double time(int j) const { return j == steps_ ? horizon_ : j * step(); }
    // Largest j with t_j <= t, clamped to [0, M].
    int index_at_or_before(double t) const;

private:
    double horizon_;
    int steps_;
};

struct ForwardTrajectory {
    TimeGrid grid;
    std::vector<CoeffField> states;  // M + 1 states, states[0] is the initial field
};

// Exact OU transition for dX = -X/2 dt + sqrt(C) dB:
// a draw from N(exp(-dt/2) a, C (1 - exp(-dt))).
double ou_transition(double a, double c_ell, double dt, RngStream& rng);

// Coefficientwise exact transition of a whole field over dt.
CoeffField ou_transition(const CoeffField& x, const Spectrum& spec, double dt, RngStream& rng);

ForwardTrajectory simulate_forward(const CoeffField& x0, const Spectrum& spec, const TimeGrid& grid,
                                   RngStream& rng);

struct DiagonalGaussian {
    std::vector<double> mean;
    std::vector<double> var;
};

// Forward marginal at time t when X_0 ~ N(mean0, var0) coefficientwise:
// mean_t = e^{-t/2} mean0, var_t = e^{-t} var0 + C (1 - e^{-t}).
// var0 may be given per degree (length L+1) or per coefficient ((L+1)^2).
DiagonalGaussian marginal_law_gaussian(const CoeffField& mean0, const std::vector<double>& var0,
                                       const Spectrum& spec, double t);

}  // namespace sphdiff
