// Naive loop references for the parallel kernels. Kept for testing and for
// the benchmark; not used on the training path.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "deepcoder/kernels.hpp"

namespace deepcoder::kernels {

ConvGeometry ConvGeometry::make(const Shape& input, const Shape& weights, std::size_t stride, std::size_t padding) {
    if (input.size() != 4 || weights.size() != 4)
        throw std::invalid_argument("conv2d: expected 4-D input and weights, got " + shape_str(input) + " and " +
                                    shape_str(weights));
    if (input[1] != weights[1])
        throw std::invalid_argument("conv2d: input has " + std::to_string(input[1]) + " channels but kernels expect " +
                                    std::to_string(weights[1]));
    if (weights[2] != weights[3]) throw std::invalid_argument("conv2d: kernels must be square");
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    ConvGeometry g{};
    g.batch = input[0];
    g.in_channels = input[1];
    g.in_h = input[2];
    g.in_w = input[3];
    g.filters = weights[0];
    g.kernel = weights[2];
    g.stride = stride;
    g.padding = padding;
    if (g.kernel > g.in_h + 2 * padding || g.kernel > g.in_w + 2 * padding)
        throw std::invalid_argument("conv2d: kernel larger than padded input");
    g.out_h = (g.in_h + 2 * padding - g.kernel) / stride + 1;
    g.out_w = (g.in_w + 2 * padding - g.kernel) / stride + 1;
    return g;
}

namespace serial {

Tensor conv2d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias, const ConvGeometry& g) {
    Tensor out({g.batch, g.filters, g.out_h, g.out_w});
    const auto pad = static_cast<long>(g.padding);
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t f = 0; f < g.filters; ++f)
            for (std::size_t oh = 0; oh < g.out_h; ++oh)
                for (std::size_t ow = 0; ow < g.out_w; ++ow) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < g.in_channels; ++c)
                        for (std::size_t ki = 0; ki < g.kernel; ++ki)
                            for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                                const long ih = static_cast<long>(oh * g.stride + ki) - pad;
                                const long iw = static_cast<long>(ow * g.stride + kj) - pad;
                                if (ih < 0 || iw < 0 || ih >= static_cast<long>(g.in_h) ||
                                    iw >= static_cast<long>(g.in_w))
                                    continue;
                                acc += weights.at(f, c, ki, kj) * input.at(n, c, ih, iw);
                            }
                    out.at(n, f, oh, ow) = acc + bias[f];
                }
    return out;
}

Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& weights, const ConvGeometry& g) {
    Tensor gin({g.batch, g.in_channels, g.in_h, g.in_w});
    const auto pad = static_cast<long>(g.padding);
    const auto s = static_cast<long>(g.stride);
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t ih = 0; ih < g.in_h; ++ih)
                for (std::size_t iw = 0; iw < g.in_w; ++iw) {
                    double acc = 0.0;
                    for (std::size_t f = 0; f < g.filters; ++f)
                        for (std::size_t ki = 0; ki < g.kernel; ++ki)
                            for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                                const long th = static_cast<long>(ih) + pad - static_cast<long>(ki);
                                const long tw = static_cast<long>(iw) + pad - static_cast<long>(kj);
                                if (th < 0 || tw < 0 || th % s || tw % s) continue;
                                const long oh = th / s, ow = tw / s;
                                if (oh >= static_cast<long>(g.out_h) || ow >= static_cast<long>(g.out_w)) continue;
                                acc += grad_out.at(n, f, oh, ow) * weights.at(f, c, ki, kj);
                            }
                    gin.at(n, c, ih, iw) = acc;
                }
    return gin;
}

Tensor conv2d_grad_weights(const Tensor& grad_out, const Tensor& input, const ConvGeometry& g, Tensor& grad_bias) {
    Tensor gw({g.filters, g.in_channels, g.kernel, g.kernel});
    grad_bias = Tensor({g.filters});
    const auto pad = static_cast<long>(g.padding);
    for (std::size_t f = 0; f < g.filters; ++f) {
        for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t ki = 0; ki < g.kernel; ++ki)
                for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                    // One partial sum per output column, then the columns in order.
                    std::vector<double> lane(g.out_w, 0.0);
                    for (std::size_t n = 0; n < g.batch; ++n)
                        for (std::size_t oh = 0; oh < g.out_h; ++oh)
                            for (std::size_t ow = 0; ow < g.out_w; ++ow) {
                                const long ih = static_cast<long>(oh * g.stride + ki) - pad;
                                const long iw = static_cast<long>(ow * g.stride + kj) - pad;
                                if (ih < 0 || iw < 0 || ih >= static_cast<long>(g.in_h) ||
                                    iw >= static_cast<long>(g.in_w))
                                    continue;
                                lane[ow] += grad_out.at(n, f, oh, ow) * input.at(n, c, ih, iw);
                            }
                    double acc = 0.0;
                    for (double v : lane) acc += v;
                    gw.at(f, c, ki, kj) = acc;
                }
        double b = 0.0;
        for (std::size_t n = 0; n < g.batch; ++n)
            for (std::size_t oh = 0; oh < g.out_h; ++oh)
                for (std::size_t ow = 0; ow < g.out_w; ++ow) b += grad_out.at(n, f, oh, ow);
        grad_bias[f] = b;
    }
    return gw;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    const std::size_t n = a.dim(0), d = a.dim(1), e = b.dim(1);
    Tensor c({n, e});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < e; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) acc += a.at(i, k) * b.at(k, j);
            c.at(i, j) = acc;
        }
    return c;
}

Tensor matmul_at(const Tensor& a, const Tensor& b) {
    const std::size_t d = a.dim(0), n = a.dim(1), e = b.dim(1);
    Tensor c({n, e});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < e; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) acc += a.at(k, i) * b.at(k, j);
            c.at(i, j) = acc;
        }
    return c;
}

Tensor matmul_bt(const Tensor& a, const Tensor& b) {
    const std::size_t n = a.dim(0), d = a.dim(1), e = b.dim(0);
    Tensor c({n, e});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < e; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) acc += a.at(i, k) * b.at(j, k);
            c.at(i, j) = acc;
        }
    return c;
}

Tensor rbf_matrix(const Tensor& a, const Tensor& b, double sf2, const std::vector<double>& inv_ell2) {
    const std::size_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
    Tensor k({n, m});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            double r2 = 0.0;
            for (std::size_t t = 0; t < d; ++t) {
                const double diff = a.at(i, t) - b.at(j, t);
                r2 += diff * diff * inv_ell2[t];
            }
            k.at(i, j) = sf2 * std::exp(-0.5 * r2);
        }
    return k;
}

}  // namespace serial
}  // namespace deepcoder::kernels
