#pragma once

#include <Eigen/Dense>
#include <vector>

#include "deepcoder/tape.hpp"
#include "deepcoder/tensor.hpp"

namespace deepcoder::gp {

/// RBF kernel with one lengthscale per input dimension. Positive quantities
/// are stored as logs so they can be optimized unconstrained.
struct RbfArdKernel {
    double log_sf2 = 0.0;
    std::vector<double> log_ell;

    static RbfArdKernel make(std::size_t dim, double sf2 = 1.0, double ell = 1.0);

    std::size_t dim() const { return log_ell.size(); }
    double sf2() const;
    std::vector<double> inv_ell2() const;
    /// 1 / lengthscale per dimension; large values mark relevant dimensions.
    std::vector<double> relevance() const;
};

/// Encoder-direction (sigma_r^2) and decoder-direction (sigma_v^2) noise, as logs.
struct NoiseModel {
    double log_noise_r = 0.0;
    double log_noise_v = 0.0;

    static NoiseModel make(double noise_r = 0.1, double noise_v = 0.1);
    double noise_r() const;
    double noise_v() const;
};

/// K_ij = sf2 * exp(-0.5 * sum_d (A_id - B_jd)^2 / ell_d^2).
Tensor kernel_matrix(const Tensor& a, const Tensor& b, const RbfArdKernel& kernel);

/// Lower Cholesky factor of K + noise*I + jitter*I. The jitter climbs
/// 1e-10 -> 1e-6 -> 1e-4 until the factorization succeeds.
class CholFactor {
public:
    static CholFactor factorize(const Tensor& k, double noise = 0.0);

    std::size_t size() const { return static_cast<std::size_t>(l_.rows()); }
    double jitter() const { return jitter_; }
    double log_det() const;
    const Eigen::MatrixXd& lower() const { return l_; }

    Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const;
    Eigen::MatrixXd inverse() const;

private:
    Eigen::MatrixXd l_;
    double jitter_ = 0.0;
};

/// Solves (K + noise I) x = rhs for rhs of shape [n] or [n, m].
Tensor chol_solve(const CholFactor& factor, const Tensor& rhs);

struct Prediction {
    Tensor mean;  // [m, q]
    Tensor var;   // [m], shared by every output column
};

/// Standard GP regression posterior with observation noise included in the variance.
Prediction gp_predict(const Tensor& train_in, const Tensor& train_out, const Tensor& test_in,
                      const RbfArdKernel& kernel, double noise);

struct LooResult {
    Tensor mean;  // [n, q]
    Tensor var;   // [n]
};

/// Leave-one-out GP quantities from the inverse of the factorized matrix:
/// mean_i = m_i - [K^-1 M]_i / [K^-1]_ii and var_i = 1 / [K^-1]_ii.
LooResult loo_posterior(const CholFactor& factor, const Tensor& m);

// Eigen views over row-major tensors.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
Eigen::Map<const RowMatrix> as_matrix(const Tensor& t);
Tensor to_tensor(const Eigen::MatrixXd& m);

// Differentiable GP operations.

/// Kernel matrix over slots A [n,d] and B [m,d] (may be the same slot) with
/// hyperparameter slots log_sf2 [1] and log_ell [d].
Slot rbf_kernel(Tape& t, Slot a, Slot b, Slot log_sf2, Slot log_ell);
/// K + exp(log_noise) I.
Slot add_noise(Tape& t, Slot k, Slot log_noise);
/// sum_d log N(Y[:, d] | 0, K).
Slot mvn_logdensity(Tape& t, Slot k, Slot y);
/// LOO means [n, q] of M under K.
Slot loo_mean(Tape& t, Slot k, Slot m);
/// LOO variances [n] under K.
Slot loo_var(Tape& t, Slot k);
/// Both of the above from a single factorization of K.
struct LooSlots {
    Slot mean, var;
};
LooSlots loo(Tape& t, Slot k, Slot m);

}  // namespace deepcoder::gp
