#pragma once

// Variational convolutional autoencoder: the parametric top coder mapping
// images X to the latent space Z_0 and back, plus the logistic-regression
// head used while warming up.

#include <optional>
#include <string>
#include <vector>

#include "deepcoder/labels.hpp"
#include "deepcoder/params.hpp"
#include "deepcoder/rng.hpp"
#include "deepcoder/tape.hpp"

namespace deepcoder::vcae {

struct ConvStage {
    std::size_t filters = 8;
    std::size_t kernel = 3;
    bool pool = true;
    friend bool operator==(const ConvStage&, const ConvStage&) = default;
};

struct Architecture {
    std::size_t channels = 1, height = 32, width = 32;
    std::vector<ConvStage> stages{{16, 3, true}, {8, 3, true}};
    /// Hidden fully connected widths between the conv stack and the (mu, log_var) heads.
    std::vector<std::size_t> hidden;
    std::size_t latent_dim = 32;
    /// Compressed shape (C, H, W) claimed by a preset's source, if any; checked by validate().
    std::optional<std::vector<std::size_t>> stated_compressed;

    /// 32x32x1 input, conv [16, 8] with 3x3 kernels and 2x2 pooling, D_0 = 32.
    static Architecture desk_default();
    /// 240x160 crop, five 5x5 stages of 128/64/32/16/8 filters with pooling,
    /// two 2000-wide heads. Fails validate(): 240 is not divisible by 2^5 and
    /// the stated 15x20x16 compressed shape is unreachable.
    static Architecture paper_profile();

    /// Throws std::invalid_argument describing the first violated constraint.
    void validate() const;
    /// (filters, h, w) after the conv stack.
    std::vector<std::size_t> compressed_shape() const;
    std::size_t compressed_size() const;

    friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// Diagonal Gaussian prior over Z_0, one (mean, variance) row per point.
struct GaussianPrior {
    Tensor mean;  // [n, D_0]
    Tensor var;   // [n, D_0], strictly positive

    static GaussianPrior flat(std::size_t n, std::size_t dim);
    GaussianPrior rows(const std::vector<std::size_t>& idx) const;
    void validate() const;
};

/// Encoder, decoder and classifier weights with fan-based uniform init and zero biases.
ParamSet init_params(const Architecture& arch, const std::vector<int>& levels, Rng& rng);

struct EncoderOut {
    Slot mu;
    Slot log_var;
};

EncoderOut encode(Tape& t, Slot x, const BoundParams& p, const Architecture& arch);
Slot decode(Tape& t, Slot z0, const BoundParams& p, const Architecture& arch);
/// Logits [n, sum_q L_q].
Slot classify_head(Tape& t, Slot z0, const BoundParams& p);

// Tape-free conveniences for inference.
std::pair<Tensor, Tensor> encode(const Tensor& x, const ParamSet& params, const Architecture& arch);
Tensor decode(const Tensor& z0, const ParamSet& params, const Architecture& arch);
/// Per-output log-probabilities over levels, [n, sum_q L_q].
Tensor classify_head(const Tensor& z0, const ParamSet& params, const std::vector<int>& levels);

/// KL(N(mu, exp(log_var)) || prior) summed over points and dims.
double kl_diag_gauss(const Tensor& mu, const Tensor& log_var, const GaussianPrior& prior);
/// sum log N(x | x_hat, sigma_x^2).
double recon_loglik(const Tensor& x, const Tensor& x_hat, double sigma_x);
/// sum of log-probabilities of the true levels.
double class_loglik(const Tensor& log_probs, const LabelMatrix& y, const std::vector<int>& levels);

struct ObjectiveOptions {
    double alpha = 1.0;
    double sigma_x = 0.1;
};

struct Terms {
    double kl = 0.0;     // L_kl,X = -KL (<= 0)
    double recon = 0.0;  // L_r,X
    double cls = 0.0;    // L_p,X
    double total = 0.0;  // alpha * kl + recon + (1 - alpha) * cls
};

struct ObjectiveResult {
    Terms terms;
    ParamSet grads;  // d total / d params
};

/// Warm-up objective alpha * L_kl + L_r + (1 - alpha) * L_p with one
/// reparameterized sample per point drawn from `eps` ([n, D_0]).
ObjectiveResult objective(const Tensor& x, const LabelMatrix& y, const std::vector<int>& levels,
                          const ParamSet& params, const Architecture& arch, const GaussianPrior& prior,
                          const Tensor& eps, const ObjectiveOptions& opt, bool with_grads = true);

/// Same objective recorded on a caller-owned tape; returns the total slot and fills `terms`.
Slot objective_on_tape(Tape& t, const BoundParams& p, const Tensor& x, const LabelMatrix& y,
                       const std::vector<int>& levels, const Architecture& arch, const GaussianPrior& prior,
                       const Tensor& eps, const ObjectiveOptions& opt, Terms& terms);

}  // namespace deepcoder::vcae
