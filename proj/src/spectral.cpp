#include "sphdiff/spectral.hpp"

#include <algorithm>
#include <numbers>
#include <string>

#include "sphdiff/errors.hpp"

namespace sphdiff {

namespace {
constexpr double kPi = std::numbers::pi;
}

HarmonicIndex HarmonicIndex::from_flat(int flat) {
    if (flat < 0) throw DomainError("HarmonicIndex: negative flat index");
    int ell = static_cast<int>(std::sqrt(static_cast<double>(flat)));
    while (ell * ell > flat) --ell;
    while ((ell + 1) * (ell + 1) <= flat) ++ell;
    return {ell, flat - ell * ell - ell};
}

CoeffField::CoeffField(int band_limit) : CoeffField(band_limit, {}) {}

CoeffField::CoeffField(int band_limit, std::vector<double> coeffs) : band_limit_(band_limit) {
    if (band_limit < 0) throw DomainError("CoeffField: negative band limit");
    if (coeffs.empty()) coeffs.assign(num_coeffs(band_limit), 0.0);
    if (coeffs.size() != static_cast<std::size_t>(num_coeffs(band_limit)))
        throw DomainError("CoeffField: expected " + std::to_string(num_coeffs(band_limit)) +
                          " coefficients for band limit " + std::to_string(band_limit) +
                          ", got " + std::to_string(coeffs.size()));
    coeffs_ = std::move(coeffs);
}

double& CoeffField::at(int ell, int m) {
    const HarmonicIndex idx{ell, m};
    if (!idx.valid() || ell > band_limit_) throw DomainError("CoeffField::at: index out of range");
    return coeffs_[idx.flat()];
}

double CoeffField::at(int ell, int m) const { return const_cast<CoeffField&>(*this).at(ell, m); }

CoeffField& CoeffField::operator+=(const CoeffField& o) {
    if (o.band_limit_ != band_limit_) throw DomainError("CoeffField: band limit mismatch");
    for (std::size_t i = 0; i < coeffs_.size(); ++i) coeffs_[i] += o.coeffs_[i];
    return *this;
}

CoeffField& CoeffField::operator-=(const CoeffField& o) {
    if (o.band_limit_ != band_limit_) throw DomainError("CoeffField: band limit mismatch");
    for (std::size_t i = 0; i < coeffs_.size(); ++i) coeffs_[i] -= o.coeffs_[i];
    return *this;
}

CoeffField& CoeffField::operator*=(double s) {
    for (double& c : coeffs_) c *= s;
    return *this;
}

std::vector<int> degree_table(int band_limit) {
    std::vector<int> deg(num_coeffs(band_limit));
    for (int ell = 0; ell <= band_limit; ++ell)
        std::fill_n(deg.begin() + ell * ell, 2 * ell + 1, ell);
    return deg;
}

// Returns P_n(x) and stores P_n'(x) in `deriv`.
static double legendre_with_derivative(int n, double x, double& deriv) {
    double p0 = 1.0, p1 = x;
    for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    deriv = n * (x * p1 - p0) / (x * x - 1.0);
    return p1;
}

void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights) {
    if (n < 1) throw DomainError("gauss_legendre: need at least one node");
    nodes.assign(n, 0.0);
    weights.assign(n, 0.0);
    if (n == 1) {
        weights[0] = 2.0;
        return;
    }
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double x = std::cos(kPi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            const double dx = legendre_with_derivative(n, x, dp) / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        legendre_with_derivative(n, x, dp);
        nodes[i] = x;
        nodes[n - 1 - i] = -x;
        weights[i] = weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    if (n % 2 == 1) nodes[n / 2] = 0.0;
}

SphereGrid::SphereGrid(int n_theta, int n_phi) : n_phi_(n_phi) {
    if (n_theta < 1 || n_phi < 1) throw ConfigError("SphereGrid: grid dimensions must be positive");
    gauss_legendre(n_theta, cos_theta_, weights_);
}

SphereGrid SphereGrid::for_band_limit(int band_limit) { return {band_limit + 2, 2 * band_limit + 2}; }

SphereGrid SphereGrid::minimal(int band_limit) { return {band_limit + 1, 2 * band_limit + 1}; }

int SphereGrid::max_band_limit() const { return std::min(n_theta() - 1, (n_phi_ - 1) / 2); }

double SphereGrid::phi(int k) const { return 2.0 * kPi * k / n_phi_; }

double SphereGrid::phi_weight() const { return 2.0 * kPi / n_phi_; }

GridField::GridField(SphereGrid grid)
    : grid_(std::move(grid)),
      values_(static_cast<std::size_t>(grid_.n_theta()) * grid_.n_phi(), 0.0) {}

GridField::GridField(SphereGrid grid, std::vector<double> values)
    : grid_(std::move(grid)), values_(std::move(values)) {
    if (values_.size() != static_cast<std::size_t>(grid_.n_theta()) * grid_.n_phi())
        throw DomainError("GridField: value count does not match grid dimensions");
}

std::vector<double> normalized_legendre(int band_limit, double x) {
    std::vector<double> p(legendre_index(band_limit, band_limit) + 1, 0.0);
    const double s = std::sqrt(std::max(0.0, (1.0 - x) * (1.0 + x)));
    double pmm = 1.0 / std::sqrt(4.0 * kPi);
    for (int m = 0; m <= band_limit; ++m) {
        if (m > 0) pmm *= -std::sqrt((2.0 * m + 1.0) / (2.0 * m)) * s;
        p[legendre_index(m, m)] = pmm;
        if (m == band_limit) break;
        double prev2 = pmm;
        double prev1 = std::sqrt(2.0 * m + 3.0) * x * pmm;
        p[legendre_index(m + 1, m)] = prev1;
        for (int ell = m + 2; ell <= band_limit; ++ell) {
            const double l2 = static_cast<double>(ell) * ell;
            const double m2 = static_cast<double>(m) * m;
            const double a = std::sqrt((4.0 * l2 - 1.0) / (l2 - m2));
            const double b = std::sqrt(((ell - 1.0) * (ell - 1.0) - m2) / (4.0 * (ell - 1.0) * (ell - 1.0) - 1.0));
            const double cur = a * (x * prev1 - b * prev2);
            p[legendre_index(ell, m)] = cur;
            prev2 = prev1;
            prev1 = cur;
        }
    }
    return p;
}

double eval_harmonic(HarmonicIndex idx, double theta, double phi) {
    if (!idx.valid())
        throw DomainError("eval_harmonic: invalid index (ell=" + std::to_string(idx.ell) +
                          ", m=" + std::to_string(idx.m) + ")");
    const auto p = normalized_legendre(idx.ell, std::cos(theta));
    const int am = std::abs(idx.m);
    const double base = p[legendre_index(idx.ell, am)];
    if (idx.m == 0) return base;
    return std::numbers::sqrt2 * base * (idx.m > 0 ? std::cos(am * phi) : std::sin(am * phi));
}

GridField synthesize(const CoeffField& coeffs, const SphereGrid& grid) {
    const int L = coeffs.band_limit();
    GridField out(grid);
    // cos(m phi_k), sin(m phi_k) tables shared by all rows
    const int nphi = grid.n_phi();
    std::vector<double> cosm(static_cast<std::size_t>(L + 1) * nphi), sinm(cosm.size());
    for (int m = 0; m <= L; ++m)
        for (int k = 0; k < nphi; ++k) {
            cosm[m * nphi + k] = std::cos(m * grid.phi(k));
            sinm[m * nphi + k] = std::sin(m * grid.phi(k));
        }
    std::vector<double> fc(L + 1), fs(L + 1);
    for (int i = 0; i < grid.n_theta(); ++i) {
        const auto p = normalized_legendre(L, grid.cos_theta(i));
        std::fill(fc.begin(), fc.end(), 0.0);
        std::fill(fs.begin(), fs.end(), 0.0);
        for (int ell = 0; ell <= L; ++ell) {
            fc[0] += coeffs[HarmonicIndex{ell, 0}.flat()] * p[legendre_index(ell, 0)];
            for (int m = 1; m <= ell; ++m) {
                const double pl = std::numbers::sqrt2 * p[legendre_index(ell, m)];
                fc[m] += coeffs[HarmonicIndex{ell, m}.flat()] * pl;
                fs[m] += coeffs[HarmonicIndex{ell, -m}.flat()] * pl;
            }
        }
        for (int k = 0; k < nphi; ++k) {
            double v = fc[0];
            for (int m = 1; m <= L; ++m) v += fc[m] * cosm[m * nphi + k] + fs[m] * sinm[m * nphi + k];
            out(i, k) = v;
        }
    }
    return out;
}

CoeffField analyze(const GridField& field, int band_limit) {
    const SphereGrid& grid = field.grid();
    if (band_limit < 0) throw DomainError("analyze: negative band limit");
    if (band_limit > grid.max_band_limit())
        throw ConfigError("analyze: grid " + std::to_string(grid.n_theta()) + "x" +
                          std::to_string(grid.n_phi()) + " cannot resolve band limit " +
                          std::to_string(band_limit));
    const int L = band_limit;
    const int nphi = grid.n_phi();
    CoeffField out(L);
    std::vector<double> fc(L + 1), fs(L + 1);
    for (int i = 0; i < grid.n_theta(); ++i) {
        for (int m = 0; m <= L; ++m) {
            double c = 0.0, s = 0.0;
            for (int k = 0; k < nphi; ++k) {
                c += field(i, k) * std::cos(m * grid.phi(k));
                s += field(i, k) * std::sin(m * grid.phi(k));
            }
            fc[m] = c * grid.phi_weight() * grid.theta_weight(i);
            fs[m] = s * grid.phi_weight() * grid.theta_weight(i);
        }
        const auto p = normalized_legendre(L, grid.cos_theta(i));
        for (int ell = 0; ell <= L; ++ell) {
            out[HarmonicIndex{ell, 0}.flat()] += fc[0] * p[legendre_index(ell, 0)];
            for (int m = 1; m <= ell; ++m) {
                const double pl = std::numbers::sqrt2 * p[legendre_index(ell, m)];
                out[HarmonicIndex{ell, m}.flat()] += fc[m] * pl;
                out[HarmonicIndex{ell, -m}.flat()] += fs[m] * pl;
            }
        }
    }
    return out;
}

CoeffField analyze(const GridField& field) { return analyze(field, field.grid().max_band_limit()); }

double h_norm_sq(const CoeffField& coeffs) {
    double acc = 0.0;
    for (double c : coeffs.values()) acc += c * c;
    return acc;
}

double quadrature_norm_sq(const GridField& field) {
    const SphereGrid& g = field.grid();
    double acc = 0.0;
    for (int i = 0; i < g.n_theta(); ++i) {
        double row = 0.0;
        for (int k = 0; k < g.n_phi(); ++k) row += field(i, k) * field(i, k);
        acc += row * g.theta_weight(i);
    }
    return acc * g.phi_weight();
}

}  // namespace sphdiff
