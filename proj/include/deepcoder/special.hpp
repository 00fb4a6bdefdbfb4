#pragma once

#include <cmath>
#include <numbers>

namespace deepcoder {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// Standard normal density.
inline double gauss_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

/// Standard normal CDF through the complementary error function, so both tails
/// keep full relative precision: Phi(x) = erfc(-x / sqrt 2) / 2.
inline double gauss_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Phi(b) - Phi(a) for a <= b, evaluated on the side of zero where the
/// subtraction does not cancel. Either bound may be infinite.
inline double gauss_interval(double a, double b) {
    if (a > 0.0) return gauss_cdf(-a) - gauss_cdf(-b);
    return gauss_cdf(b) - gauss_cdf(a);
}

inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace deepcoder
