#pragma once

// Helpers shared by the module tests.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <unistd.h>
#include <vector>

#include "deepcoder/params.hpp"
#include "deepcoder/rng.hpp"
#include "deepcoder/tensor.hpp"

namespace deepcoder::test {

inline Tensor random_normal(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.raw()) v = scale * rng.normal();
    return t;
}

inline Tensor random_uniform(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.raw()) v = lo + (hi - lo) * rng.uniform();
    return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

/// Quadruple-loop cross-correlation with zero padding.
inline Tensor conv_oracle(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t pad) {
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t f = w.dim(0), k = w.dim(2);
    const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
    Tensor out({n, f, oh, ow});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < f; ++o)
            for (std::size_t r = 0; r < oh; ++r)
                for (std::size_t s = 0; s < ow; ++s) {
                    double acc = b[o];
                    for (std::size_t ch = 0; ch < c; ++ch)
                        for (std::size_t ki = 0; ki < k; ++ki)
                            for (std::size_t kj = 0; kj < k; ++kj) {
                                const long y = static_cast<long>(r * stride + ki) - static_cast<long>(pad);
                                const long xx = static_cast<long>(s * stride + kj) - static_cast<long>(pad);
                                if (y < 0 || xx < 0 || y >= static_cast<long>(h) || xx >= static_cast<long>(wd)) continue;
                                acc += x.at(i, ch, static_cast<std::size_t>(y), static_cast<std::size_t>(xx)) *
                                       w.at(o, ch, ki, kj);
                            }
                    out.at(i, o, r, s) = acc;
                }
    return out;
}

inline Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
    Tensor out({a.dim(0), b.dim(1)});
    for (std::size_t i = 0; i < a.dim(0); ++i)
        for (std::size_t j = 0; j < b.dim(1); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.dim(1); ++k) acc += a.at(i, k) * b.at(k, j);
            out.at(i, j) = acc;
        }
    return out;
}

/// |a - b| / max(1, |b|), the error measure of every gradient check.
inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

struct FdReport {
    double worst = 0.0;
    std::string where;
    std::size_t kink_retries = 0;
};

/// Worst relative error between `analytic` and the central difference of
/// `f` over every entry of every tensor in `params` named by `analytic`.
/// With `kink_aware`, an entry whose one-sided slopes disagree (a ReLU or
/// max-pool switch inside the stencil) is re-differenced with a step 10x
/// smaller, at most twice.
inline FdReport fd_check(const ParamSet& params, const ParamSet& analytic,
                         const std::function<double(const ParamSet&)>& f, double h = 1e-6, bool kink_aware = false) {
    FdReport r;
    ParamSet p = params;
    const double f0 = kink_aware ? f(p) : 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const std::size_t pi = p.index_of(analytic.name(i));
        for (std::size_t k = 0; k < p.at(pi).size(); ++k) {
            const double orig = p.at(pi)[k];
            double e = 0.0;
            for (int attempt = 0; attempt < 3; ++attempt) {
                const double step = h * std::pow(0.1, attempt);
                p.at(pi)[k] = orig + step;
                const double fp = f(p);
                p.at(pi)[k] = orig - step;
                const double fm = f(p);
                p.at(pi)[k] = orig;
                e = rel_err(analytic.at(i)[k], (fp - fm) / (2.0 * step));
                if (!kink_aware || e < 1e-6) break;
                const double right = (fp - f0) / step, left = (f0 - fm) / step;
                if (rel_err(right, left) < 1e-4) break;
                ++r.kink_retries;
            }
            if (e > r.worst) {
                r.worst = e;
                r.where = analytic.name(i) + "[" + std::to_string(k) + "]";
            }
        }
    }
    return r;
}

/// ICC(3,1) from the full two-way ANOVA table (total, rows, columns, error
/// sums of squares) with k = 2 raters.
inline double icc31_anova_oracle(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = a.size();
    double grand = 0.0;
    for (std::size_t i = 0; i < n; ++i) grand += a[i] + b[i];
    grand /= 2.0 * n;
    double col_a = 0.0, col_b = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        col_a += a[i];
        col_b += b[i];
    }
    col_a /= n;
    col_b /= n;
    double sst = 0.0, ssr = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sst += (a[i] - grand) * (a[i] - grand) + (b[i] - grand) * (b[i] - grand);
        const double row = (a[i] + b[i]) / 2.0;
        ssr += 2.0 * (row - grand) * (row - grand);
    }
    const double ssc = n * ((col_a - grand) * (col_a - grand) + (col_b - grand) * (col_b - grand));
    const double sse = sst - ssr - ssc;
    const double bms = ssr / (n - 1.0), ems = sse / (n - 1.0);
    return (bms - ems) / (bms + ems);
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("deepcoder_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace deepcoder::test
