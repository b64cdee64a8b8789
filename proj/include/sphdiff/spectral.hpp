#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace sphdiff {

// (ell, m) label of a real spherical harmonic. Flat index is ell^2 + (m + ell),
// so each degree occupies a contiguous block of 2*ell+1 entries.
struct HarmonicIndex {
    int ell = 0;
    int m = 0;

    bool valid() const { return ell >= 0 && m >= -ell && m <= ell; }
    int flat() const { return ell * ell + m + ell; }
    static HarmonicIndex from_flat(int flat);

    friend bool operator==(const HarmonicIndex&, const HarmonicIndex&) = default;
};

constexpr int num_coeffs(int band_limit) { return (band_limit + 1) * (band_limit + 1); }

// Karhunen-Loeve coefficients a_{ell,m} for ell <= band_limit, in flat-index order.
class CoeffField {
public:
    CoeffField() = default;
    explicit CoeffField(int band_limit);
    CoeffField(int band_limit, std::vector<double> coeffs);

    int band_limit() const { return band_limit_; }
    std::size_t size() const { return coeffs_.size(); }

    double& operator[](std::size_t flat) { return coeffs_[flat]; }
    double operator[](std::size_t flat) const { return coeffs_[flat]; }
    double& at(int ell, int m);
    double at(int ell, int m) const;

    std::span<double> values() { return coeffs_; }
    std::span<const double> values() const { return coeffs_; }
    const std::vector<double>& vector() const { return coeffs_; }

    CoeffField& operator+=(const CoeffField& o);
    CoeffField& operator-=(const CoeffField& o);
    CoeffField& operator*=(double s);

    friend CoeffField operator+(CoeffField a, const CoeffField& b) { return a += b; }
    friend CoeffField operator-(CoeffField a, const CoeffField& b) { return a -= b; }
    friend CoeffField operator*(double s, CoeffField a) { return a *= s; }
    friend bool operator==(const CoeffField&, const CoeffField&) = default;

private:
    int band_limit_ = 0;
    std::vector<double> coeffs_ = std::vector<double>(1, 0.0);
};

// Degree of each flat index, length (L+1)^2.
std::vector<int> degree_table(int band_limit);

// Gauss-Legendre colatitudes x in cos(theta) times equispaced longitudes.
class SphereGrid {
public:
    SphereGrid(int n_theta, int n_phi);
    // Default resolution for band limit L: (L+2) x (2L+2).
    static SphereGrid for_band_limit(int band_limit);
    // Minimal exact resolution for band limit L: (L+1) x (2L+1).
    static SphereGrid minimal(int band_limit);

    int n_theta() const { return static_cast<int>(cos_theta_.size()); }
    int n_phi() const { return n_phi_; }
    // Largest band limit this grid integrates exactly.
    int max_band_limit() const;

    double cos_theta(int i) const { return cos_theta_[i]; }
    double theta(int i) const { return std::acos(cos_theta_[i]); }
    double theta_weight(int i) const { return weights_[i]; }
    double phi(int k) const;
    double phi_weight() const;

private:
    std::vector<double> cos_theta_;  // descending, so theta ascends
    std::vector<double> weights_;
    int n_phi_;
};

// Field values sampled on a SphereGrid, row-major n_theta x n_phi.
class GridField {
public:
    explicit GridField(SphereGrid grid);
    GridField(SphereGrid grid, std::vector<double> values);

    const SphereGrid& grid() const { return grid_; }
    double& operator()(int i, int k) { return values_[static_cast<std::size_t>(i) * grid_.n_phi() + k]; }
    double operator()(int i, int k) const { return values_[static_cast<std::size_t>(i) * grid_.n_phi() + k]; }
    std::span<const double> values() const { return values_; }

private:
    SphereGrid grid_;
    std::vector<double> values_;
};

// Gauss-Legendre nodes and weights on [-1, 1], nodes in descending order.
void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights);

// Fully normalized associated Legendre values Pbar_ell^m(x) for 0 <= m <= ell <= L,
// stored at ell*(ell+1)/2 + m. Pbar includes sqrt((2l+1)/(4pi) (l-m)!/(l+m)!) and the
// Condon-Shortley phase, so Y_{l,0} = Pbar_l^0 and Y_{l,+-m} = sqrt(2) Pbar_l^m {cos,sin}(m phi).
std::vector<double> normalized_legendre(int band_limit, double x);
inline std::size_t legendre_index(int ell, int m) {
    return static_cast<std::size_t>(ell) * (ell + 1) / 2 + m;
}

double eval_harmonic(HarmonicIndex idx, double theta, double phi);

GridField synthesize(const CoeffField& coeffs, const SphereGrid& grid);
CoeffField analyze(const GridField& field, int band_limit);
CoeffField analyze(const GridField& field);

// Sum of squared coefficients, i.e. the L2(S^2) norm of the synthesized field.
double h_norm_sq(const CoeffField& coeffs);

// Quadrature integral of f^2 over the sphere.
double quadrature_norm_sq(const GridField& field);

}  // namespace sphdiff
