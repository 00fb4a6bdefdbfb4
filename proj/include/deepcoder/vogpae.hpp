#pragma once

// Variational ordinal GP autoencoder: the non-parametric bottom coder over
// the N_L subset. Maps Z_0 to Z_1 through a leave-one-out variational
// posterior, decodes Z_1 back to Z_0 under a GP prior, and ties Z_1 to the
// ordinal labels through a probit likelihood with monotone cut-points.

#include <vector>

#include "deepcoder/gp.hpp"
#include "deepcoder/labels.hpp"
#include "deepcoder/params.hpp"
#include "deepcoder/rng.hpp"

namespace deepcoder::vogpae {

/// Trainable parameters, all positive quantities as logs:
///   enc.log_sf2 [1], enc.log_ell [D_0], enc.log_noise [1]   kernel Z_0 -> Z_1, sigma_r^2
///   dec.log_sf2 [1], dec.log_ell [D_1], dec.log_noise [1]   kernel Z_1 -> Z_0, sigma_v^2
///   M [n, D_1], log_S [n, D_1]                              variational latent
///   w_o [D_1, Q], log_sigma_o [1]                           ordinal projection and noise
///   gamma_raw [sum_q (L_q - 1)]                             cut-points: first value, then
///                                                           softplus-transformed increments
struct State {
    ParamSet params;
    Tensor z0;                // cached N_L inputs [n, D_0]
    std::vector<int> levels;  // L_q per output

    std::size_t n() const { return z0.dim(0); }
    std::size_t input_dim() const { return z0.dim(1); }
    std::size_t latent_dim() const { return params["M"].dim(1); }
    std::size_t outputs() const { return levels.size(); }

    gp::RbfArdKernel encoder_kernel() const;
    gp::RbfArdKernel decoder_kernel() const;
    double noise_r() const;
    double noise_v() const;
    double sigma_o() const;
    /// Interior cut-points gamma_{q,1..L_q-1}, strictly increasing.
    std::vector<double> thresholds(std::size_t q) const;
};

struct InitOptions {
    std::size_t latent_dim = 50;
    double sf2 = 1.0;
    /// Initial lengthscale for every dimension; 0 uses sqrt(D) for a D-dimensional
    /// kernel input, which keeps K(Z) away from the identity when Z has unit spread.
    double ell = 0.0;
    double noise_r = 0.1, noise_v = 0.1;
    double m_scale = 0.1;  // M ~ N(0, m_scale^2)
    double s_init = 1.0;

    friend bool operator==(const InitOptions&, const InitOptions&) = default;
};

State init_state(const Tensor& z0, const std::vector<int>& levels, const InitOptions& opt, Rng& rng);

/// Cut-point vector for L levels at the standard-normal quantiles s / L.
std::vector<double> quantile_thresholds(int levels);
/// Raw parameters reproducing the given strictly increasing cut-points.
std::vector<double> thresholds_to_raw(const std::vector<double>& gamma);
std::vector<double> raw_to_thresholds(const double* raw, std::size_t count);

/// Variational posterior q(Z_1 | Z_0): mean = LOO mean of M, var = S + LOO variance.
struct Posterior {
    Tensor mean;  // [n, D_1]
    Tensor var;   // [n, D_1]
};
Posterior variational_posterior(const State& s);

/// P(y = s | f) = Phi((gamma_s - f) / sigma) - Phi((gamma_{s-1} - f) / sigma), s = 1..L.
/// `gamma` holds the L-1 interior cut-points.
std::vector<double> ordinal_level_probs(double f, const std::vector<double>& gamma, double sigma_o);

/// Log-probabilities are clamped below at this value.
inline constexpr double kMinLogProb = -27.631021115928547;  // log(1e-12)

/// Monte-Carlo mean over samples of sum_{i,q} log P(y_iq | w_q^T z_1i).
double ordinal_loglik(const std::vector<Tensor>& z1_samples, const LabelMatrix& y, const State& s);
/// Monte-Carlo mean over samples of sum_d log N(z_0^d | 0, K(Z_1) + sigma_v^2 I).
double gp_recon_loglik(const Tensor& z0, const std::vector<Tensor>& z1_samples, const gp::RbfArdKernel& kernel,
                       double noise_v);
/// KL(N(means, vars) || N(0, I)), summed.
double kl_to_unit_prior(const Tensor& means, const Tensor& vars);

/// Ordinal log-likelihood recorded on a tape: F [n, Q], gamma_raw, log_sigma_o.
Slot ordinal_loglik_op(Tape& t, Slot f, Slot gamma_raw, Slot log_sigma_o, const LabelMatrix& y,
                       const std::vector<int>& levels);

struct Terms {
    double kl = 0.0;     // L_kl,Z0 = -KL (<= 0)
    double recon = 0.0;  // L_r,Z0
    double ord = 0.0;    // L_o,Z0
    double total = 0.0;  // beta * kl + recon + ord
};

struct ObjectiveResult {
    Terms terms;
    ParamSet grads;
};

/// beta * L_kl + L_r + L_o with one Z_1 sample per entry of `eps` ([n, D_1] each).
ObjectiveResult objective(const State& s, const LabelMatrix& y, double beta, const std::vector<Tensor>& eps,
                          bool with_grads = true);

/// Marginal likelihood sum_d log N(M[:, d] | 0, K_enc(Z_0) + sigma_r^2 I) of the
/// encoder GP prior. Only the enc.* gradients are populated.
ObjectiveResult encoder_fit_objective(const State& s, bool with_grads = true);

/// GP-regression mean of Z_1 at new Z_0 points from the cached (Z_0 -> M) pairs.
Tensor encode_new(const State& s, const Tensor& z0_star);
/// Per-level argmax of the ordinal probabilities; ties go to the lower level.
std::vector<int> predict_labels(const State& s, const Tensor& z1_star_row);
LabelMatrix predict_labels_batch(const State& s, const Tensor& z1_star);
/// GP predictive of Z_0 from (M -> Z_0) pairs under the decoder kernel.
gp::Prediction decode_new(const State& s, const Tensor& z1_star);

}  // namespace deepcoder::vogpae
