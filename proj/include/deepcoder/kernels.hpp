#pragma once

// Dense numeric kernels. Each kernel has an OpenMP implementation in
// `deepcoder::kernels` and a naive loop reference in
// `deepcoder::kernels::serial`. Every parallel kernel partitions its output
// into disjoint pieces and accumulates each element in the same order as the
// reference, so the two agree bit for bit regardless of thread count.

#include "deepcoder/tensor.hpp"

namespace deepcoder::kernels {

struct ConvGeometry {
    std::size_t batch, in_channels, in_h, in_w;
    std::size_t filters, kernel, stride, padding;
    std::size_t out_h, out_w;

    /// Validates shapes of input [N,C,H,W] and weights [F,C,k,k].
    static ConvGeometry make(const Shape& input, const Shape& weights, std::size_t stride, std::size_t padding);
};

Tensor conv2d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias, const ConvGeometry& g);
Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& weights, const ConvGeometry& g);
/// Returns the weight gradient; writes the bias gradient into `grad_bias` ([F]).
Tensor conv2d_grad_weights(const Tensor& grad_out, const Tensor& input, const ConvGeometry& g, Tensor& grad_bias);

Tensor matmul(const Tensor& a, const Tensor& b);     // [n,d] x [d,e]
Tensor matmul_at(const Tensor& a, const Tensor& b);  // a^T b, a [d,n], b [d,e]
Tensor matmul_bt(const Tensor& a, const Tensor& b);  // a b^T, a [n,d], b [e,d]

/// K_ij = sf2 * exp(-0.5 * sum_d (a_id - b_jd)^2 * inv_ell2_d).
Tensor rbf_matrix(const Tensor& a, const Tensor& b, double sf2, const std::vector<double>& inv_ell2);

namespace serial {
Tensor conv2d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias, const ConvGeometry& g);
Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& weights, const ConvGeometry& g);
Tensor conv2d_grad_weights(const Tensor& grad_out, const Tensor& input, const ConvGeometry& g, Tensor& grad_bias);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_at(const Tensor& a, const Tensor& b);
Tensor matmul_bt(const Tensor& a, const Tensor& b);
Tensor rbf_matrix(const Tensor& a, const Tensor& b, double sf2, const std::vector<double>& inv_ell2);
}  // namespace serial

/// Worker count used by the parallel kernels. Honors DEEPCODER_THREADS.
int thread_count();
void set_thread_count(int n);

}  // namespace deepcoder::kernels
