#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>
#include <vector>

#include "deepcoder/kernels.hpp"

namespace deepcoder::kernels {

namespace {

int initial_threads() {
    if (const char* env = std::getenv("DEEPCODER_THREADS")) {
        try {
            const int n = std::stoi(env);
            if (n >= 1) return n;
        } catch (...) {
        }
    }
    return omp_get_max_threads();
}

int g_threads = initial_threads();

// Below this many multiply-adds the fork/join costs more than it saves.
constexpr std::size_t kParallelThreshold = 1 << 14;

}  // namespace

int thread_count() { return g_threads; }
void set_thread_count(int n) { g_threads = n < 1 ? 1 : n; }

// Output positions o in [lo, hi) for which o * stride + k - pad lands inside [0, in).
struct Range {
    std::size_t lo, hi;
};

Range valid_range(std::size_t k, std::size_t pad, std::size_t stride, std::size_t in, std::size_t out) {
    const long first = static_cast<long>(pad) - static_cast<long>(k);  // need o * stride >= first
    const long last = static_cast<long>(in) - 1 + first;               // and o * stride <= last
    const long s = static_cast<long>(stride);
    if (last < 0) return {0, 0};
    const long lo = first <= 0 ? 0 : (first + s - 1) / s;
    const long hi = std::min(static_cast<long>(out), last / s + 1);
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(std::max(lo, hi))};
}

Tensor conv2d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias, const ConvGeometry& g) {
    Tensor out({g.batch, g.filters, g.out_h, g.out_w});
    const long planes = static_cast<long>(g.batch * g.filters);
    const std::size_t plane_in = g.in_h * g.in_w, plane_out = g.out_h * g.out_w;
    const std::size_t work = g.batch * g.filters * plane_out * g.in_channels * g.kernel * g.kernel;
    const std::size_t st = g.stride;
    const double* x = input.data();
    const double* w = weights.data();
    double* y = out.data();

#pragma omp parallel for schedule(static) num_threads(thread_count()) if (work > kParallelThreshold)
    for (long p = 0; p < planes; ++p) {
        const std::size_t n = static_cast<std::size_t>(p) / g.filters;
        const std::size_t f = static_cast<std::size_t>(p) % g.filters;
        double* yp = y + static_cast<std::size_t>(p) * plane_out;
        for (std::size_t c = 0; c < g.in_channels; ++c) {
            const double* xp = x + (n * g.in_channels + c) * plane_in;
            for (std::size_t ki = 0; ki < g.kernel; ++ki) {
                const Range rh = valid_range(ki, g.padding, st, g.in_h, g.out_h);
                for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                    const Range rw = valid_range(kj, g.padding, st, g.in_w, g.out_w);
                    const std::size_t shift = kj - g.padding;  // wraps; ow * st + shift is the true column
                    const double wv = w[((f * g.in_channels + c) * g.kernel + ki) * g.kernel + kj];
                    for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
                        const double* xrow = xp + (oh * st + ki - g.padding) * g.in_w;
                        double* yrow = yp + oh * g.out_w;
                        if (st == 1)
                            for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) yrow[ow] += wv * xrow[ow + shift];
                        else
                            for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) yrow[ow] += wv * xrow[ow * st + shift];
                    }
                }
            }
        }
        for (std::size_t i = 0; i < plane_out; ++i) yp[i] = yp[i] + bias[f];
    }
    return out;
}

Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& weights, const ConvGeometry& g) {
    Tensor gin({g.batch, g.in_channels, g.in_h, g.in_w});
    const long planes = static_cast<long>(g.batch * g.in_channels);
    const std::size_t plane_in = g.in_h * g.in_w, plane_out = g.out_h * g.out_w;
    const std::size_t work = g.batch * g.filters * plane_out * g.in_channels * g.kernel * g.kernel;
    const std::size_t st = g.stride;
    const double* go = grad_out.data();
    const double* w = weights.data();
    double* gi = gin.data();

#pragma omp parallel for schedule(static) num_threads(thread_count()) if (work > kParallelThreshold)
    for (long p = 0; p < planes; ++p) {
        const std::size_t n = static_cast<std::size_t>(p) / g.in_channels;
        const std::size_t c = static_cast<std::size_t>(p) % g.in_channels;
        double* gp = gi + static_cast<std::size_t>(p) * plane_in;
        for (std::size_t f = 0; f < g.filters; ++f) {
            const double* gop = go + (n * g.filters + f) * plane_out;
            for (std::size_t ki = 0; ki < g.kernel; ++ki) {
                const Range rh = valid_range(ki, g.padding, st, g.in_h, g.out_h);
                for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                    const Range rw = valid_range(kj, g.padding, st, g.in_w, g.out_w);
                    const std::size_t shift = kj - g.padding;  // wraps; ow * st + shift is the true column
                    const double wv = w[((f * g.in_channels + c) * g.kernel + ki) * g.kernel + kj];
                    for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
                        double* grow = gp + (oh * st + ki - g.padding) * g.in_w;
                        const double* orow = gop + oh * g.out_w;
                        if (st == 1)
                            for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) grow[ow + shift] += orow[ow] * wv;
                        else
                            for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) grow[ow * st + shift] += orow[ow] * wv;
                    }
                }
            }
        }
    }
    return gin;
}

Tensor conv2d_grad_weights(const Tensor& grad_out, const Tensor& input, const ConvGeometry& g, Tensor& grad_bias) {
    Tensor gw({g.filters, g.in_channels, g.kernel, g.kernel});
    grad_bias = Tensor({g.filters});
    const std::size_t plane_in = g.in_h * g.in_w, plane_out = g.out_h * g.out_w;
    const std::size_t work = g.batch * g.filters * plane_out * g.in_channels * g.kernel * g.kernel;
    const std::size_t st = g.stride;
    const double* go = grad_out.data();
    const double* x = input.data();
    double* gwp = gw.data();
    double* gbp = grad_bias.data();

#pragma omp parallel for schedule(static) num_threads(thread_count()) if (work > kParallelThreshold)
    for (long fl = 0; fl < static_cast<long>(g.filters); ++fl) {
        const auto f = static_cast<std::size_t>(fl);
        std::vector<double> lane(g.out_w);  // per-column partial sums, as in the reference
        for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t ki = 0; ki < g.kernel; ++ki) {
                const Range rh = valid_range(ki, g.padding, st, g.in_h, g.out_h);
                for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                    const Range rw = valid_range(kj, g.padding, st, g.in_w, g.out_w);
                    const std::size_t shift = kj - g.padding;  // wraps; ow * st + shift is the true column
                    std::fill(lane.begin(), lane.end(), 0.0);
                    double* lp = lane.data();
                    for (std::size_t n = 0; n < g.batch; ++n) {
                        const double* gop = go + (n * g.filters + f) * plane_out;
                        const double* xp = x + (n * g.in_channels + c) * plane_in;
                        for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
                            const double* xrow = xp + (oh * st + ki - g.padding) * g.in_w;
                            const double* orow = gop + oh * g.out_w;
                            if (st == 1)
                                for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) lp[ow] += orow[ow] * xrow[ow + shift];
                            else
                                for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) lp[ow] += orow[ow] * xrow[ow * st + shift];
                        }
                    }
                    double acc = 0.0;
                    for (double v : lane) acc += v;
                    gwp[((f * g.in_channels + c) * g.kernel + ki) * g.kernel + kj] = acc;
                }
            }
        double b = 0.0;
        for (std::size_t n = 0; n < g.batch; ++n) {
            const double* gop = go + (n * g.filters + f) * plane_out;
            for (std::size_t i = 0; i < plane_out; ++i) b += gop[i];
        }
        gbp[f] = b;
    }
    return gw;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    const std::size_t n = a.dim(0), d = a.dim(1), e = b.dim(1);
    Tensor c({n, e});
    const double* ap = a.data();
    const double* bp = b.data();
    double* cp = c.data();
#pragma omp parallel for schedule(static) num_threads(thread_count()) if (n * d * e > kParallelThreshold)
    for (long il = 0; il < static_cast<long>(n); ++il) {
        const auto i = static_cast<std::size_t>(il);
        double* crow = cp + i * e;
        for (std::size_t k = 0; k < d; ++k) {
            const double av = ap[i * d + k];
            const double* brow = bp + k * e;
            for (std::size_t j = 0; j < e; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

Tensor matmul_at(const Tensor& a, const Tensor& b) {
    const std::size_t d = a.dim(0), n = a.dim(1), e = b.dim(1);
    Tensor c({n, e});
    const double* ap = a.data();
    const double* bp = b.data();
    double* cp = c.data();
#pragma omp parallel for schedule(static) num_threads(thread_count()) if (n * d * e > kParallelThreshold)
    for (long il = 0; il < static_cast<long>(n); ++il) {
        const auto i = static_cast<std::size_t>(il);
        double* crow = cp + i * e;
        for (std::size_t k = 0; k < d; ++k) {
            const double av = ap[k * n + i];
            const double* brow = bp + k * e;
            for (std::size_t j = 0; j < e; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

Tensor matmul_bt(const Tensor& a, const Tensor& b) {
    const std::size_t n = a.dim(0), d = a.dim(1), e = b.dim(0);
    Tensor c({n, e});
    const double* ap = a.data();
    const double* bp = b.data();
    double* cp = c.data();
#pragma omp parallel for schedule(static) num_threads(thread_count()) if (n * d * e > kParallelThreshold)
    for (long il = 0; il < static_cast<long>(n); ++il) {
        const auto i = static_cast<std::size_t>(il);
        const double* arow = ap + i * d;
        for (std::size_t j = 0; j < e; ++j) {
            const double* brow = bp + j * d;
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) acc += arow[k] * brow[k];
            cp[i * e + j] = acc;
        }
    }
    return c;
}

Tensor rbf_matrix(const Tensor& a, const Tensor& b, double sf2, const std::vector<double>& inv_ell2) {
    const std::size_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
    Tensor k({n, m});
    const double* ap = a.data();
    const double* bp = b.data();
    double* kp = k.data();
#pragma omp parallel for schedule(static) num_threads(thread_count()) if (n * m * d > kParallelThreshold)
    for (long il = 0; il < static_cast<long>(n); ++il) {
        const auto i = static_cast<std::size_t>(il);
        for (std::size_t j = 0; j < m; ++j) {
            double r2 = 0.0;
            for (std::size_t t = 0; t < d; ++t) {
                const double diff = ap[i * d + t] - bp[j * d + t];
                r2 += diff * diff * inv_ell2[t];
            }
            kp[i * m + j] = sf2 * std::exp(-0.5 * r2);
        }
    }
    return k;
}

}  // namespace deepcoder::kernels
