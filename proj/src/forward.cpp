#include "sphdiff/forward.hpp"

#include <algorithm>
#include <cmath>

#include "sphdiff/errors.hpp"

namespace sphdiff {

TimeGrid::TimeGrid(double horizon, int steps) : horizon_(horizon), steps_(steps) {
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ConfigError("TimeGrid: horizon must be > 0");
    if (steps < 1) throw ConfigError("TimeGrid: need at least one step");
}

int TimeGrid::index_at_or_before(double t) const {
    if (t <= 0.0) return 0;
    if (t >= horizon_) return steps_;
    // Tolerate round-off so that time(j) maps back to j.
    const int j = static_cast<int>(std::floor(t / step() + 1e-9));
    return std::clamp(j, 0, steps_);
}

double ou_transition(double a, double c_ell, double dt, RngStream& rng) {
    if (!(c_ell > 0.0)) throw DomainError("ou_transition: C_ell must be > 0");
    if (dt < 0.0) throw DomainError("ou_transition: dt must be >= 0");
    if (dt == 0.0) return a;
    const double sd = std::sqrt(c_ell * -std::expm1(-dt));
    return std::exp(-0.5 * dt) * a + sd * rng.normal();
}

CoeffField ou_transition(const CoeffField& x, const Spectrum& spec, double dt, RngStream& rng) {
    if (x.band_limit() > spec.band_limit()) throw DomainError("ou_transition: band limit exceeds spectrum");
    if (dt < 0.0) throw DomainError("ou_transition: dt must be >= 0");
    CoeffField out(x.band_limit());
    const double decay = std::exp(-0.5 * dt);
    const double frac = -std::expm1(-dt);
    for (int ell = 0; ell <= x.band_limit(); ++ell) {
        const double sd = std::sqrt(spec[ell] * frac);
        for (int m = -ell; m <= ell; ++m) {
            const int k = HarmonicIndex{ell, m}.flat();
            out[k] = decay * x[k] + sd * rng.normal();
        }
    }
    return out;
}

ForwardTrajectory simulate_forward(const CoeffField& x0, const Spectrum& spec, const TimeGrid& grid,
                                   RngStream& rng) {
    ForwardTrajectory traj{grid, {}};
    traj.states.reserve(grid.steps() + 1);
    traj.states.push_back(x0);
    for (int j = 0; j < grid.steps(); ++j)
        traj.states.push_back(ou_transition(traj.states.back(), spec, grid.time(j + 1) - grid.time(j), rng));
    return traj;
}

DiagonalGaussian marginal_law_gaussian(const CoeffField& mean0, const std::vector<double>& var0,
                                       const Spectrum& spec, double t) {
    const int L = mean0.band_limit();
    if (L > spec.band_limit()) throw DomainError("marginal_law_gaussian: band limit exceeds spectrum");
    const bool per_degree = var0.size() == static_cast<std::size_t>(L + 1);
    if (!per_degree && var0.size() != mean0.size())
        throw DomainError("marginal_law_gaussian: var0 must be per degree or per coefficient");
    if (t < 0.0) throw DomainError("marginal_law_gaussian: t must be >= 0");
    DiagonalGaussian out{std::vector<double>(mean0.size()), std::vector<double>(mean0.size())};
    const double decay = std::exp(-0.5 * t);
    const double frac = -std::expm1(-t);
    const auto deg = degree_table(L);
    for (std::size_t k = 0; k < mean0.size(); ++k) {
        const double v0 = per_degree ? var0[deg[k]] : var0[k];
        if (v0 < 0.0) throw DomainError("marginal_law_gaussian: negative variance");
        out.mean[k] = decay * mean0[k];
        out.var[k] = decay * decay * v0 + spec[deg[k]] * frac;
    }
    return out;
}

}  // namespace sphdiff
