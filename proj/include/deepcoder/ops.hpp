#pragma once

// Differentiable primitives recorded on a Tape. Every function validates its
// shapes, computes the forward value eagerly, and registers the matching
// vector-Jacobian product.

#include <span>

#include "deepcoder/labels.hpp"
#include "deepcoder/tape.hpp"

namespace deepcoder::ops {

// Image layers, NCHW.
Slot conv2d(Tape& t, Slot input, Slot kernels, Slot bias, std::size_t stride, std::size_t padding);
/// Non-overlapping max pooling. Ties go to the first cell in row-major order.
Slot max_pool2d(Tape& t, Slot input, std::size_t window);
/// Nearest-neighbour 2x replication.
Slot upsample2x(Tape& t, Slot input);

// Matrix layers.
Slot dense(Tape& t, Slot input, Slot weight, Slot bias);
Slot matmul(Tape& t, Slot a, Slot b);

// Elementwise.
Slot relu(Tape& t, Slot x);
Slot exp(Tape& t, Slot x);
Slot log(Tape& t, Slot x);
Slot square(Tape& t, Slot x);
Slot gauss_cdf(Tape& t, Slot x);
Slot add(Tape& t, Slot a, Slot b);
Slot sub(Tape& t, Slot a, Slot b);
Slot mul(Tape& t, Slot a, Slot b);
Slot scale(Tape& t, Slot a, double s);
/// a[n,d] + v[n] broadcast along columns.
Slot add_col(Tape& t, Slot a, Slot v);

// Structure.
Slot reshape(Tape& t, Slot x, Shape shape);
Slot sum(Tape& t, Slot x);
/// sum_i weights[i] * terms[i] over scalar slots; zero-weight terms are skipped.
Slot weighted_sum(Tape& t, std::span<const Slot> terms, std::span<const double> weights);

/// mu + exp(0.5 log_var) * eps. eps is a constant drawn by the caller.
Slot reparam_sample(Tape& t, Slot mu, Slot log_var, const Tensor& eps);

// Log-density terms (all return scalars).

/// sum 0.5 [log(v_p / s2) + (s2 + (mu - m_p)^2) / v_p - 1] with s2 = exp(log_var).
Slot kl_diag_gauss(Tape& t, Slot mu, Slot log_var, const Tensor& prior_mean, const Tensor& prior_var);
/// sum log N(x | x_hat, sigma^2).
Slot gaussian_loglik(Tape& t, Slot x, Slot x_hat, double sigma);
/// Logits [n, sum_q L_q], one softmax block per output; sum of log p(true level).
Slot categorical_loglik(Tape& t, Slot logits, const LabelMatrix& labels, const std::vector<int>& levels);

}  // namespace deepcoder::ops
