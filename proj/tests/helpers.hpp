#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

namespace testing {

struct Stats {
    double sum = 0.0, sum_sq = 0.0;
    long long n = 0;
    void add(double v) {
        sum += v;
        sum_sq += v * v;
        ++n;
    }
    double mean() const { return sum / n; }
    double var() const { return (sum_sq - sum * sum / n) / (n - 1); }
    double se() const { return std::sqrt(var() / n); }
    // Standard error of the sample variance for normal data.
    double var_se() const { return var() * std::sqrt(2.0 / (n - 1)); }
};

// Two-sample Kolmogorov-Smirnov statistic.
inline double ks_statistic(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
    }
    return d;
}

// Critical value at level alpha = 0.001 (c(alpha) = 1.949).
inline double ks_critical(std::size_t n, std::size_t m) {
    return 1.949 * std::sqrt(static_cast<double>(n + m) / (static_cast<double>(n) * m));
}

inline std::string tmp_dir(const std::string& name) {
    const auto p = std::filesystem::path(SPHDIFF_TEST_TMP) / name;
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p.string();
}

// Composite Simpson rule on [a, b] with n (even) panels.
template <class F>
double simpson(F f, double a, double b, int n) {
    const double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
    return s * h / 3.0;
}

}  // namespace testing
