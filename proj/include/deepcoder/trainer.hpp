#pragma once

// Joint two-step optimization of the stacked coders: the image autoencoder
// trains on X_R under a prior propagated from the GP coder, which in turn
// trains on the projected Z_0 of the held-aside subset X_L.

#include <cstdint>
#include <functional>
#include <vector>

#include "deepcoder/dataset.hpp"
#include "deepcoder/vcae.hpp"
#include "deepcoder/vogpae.hpp"

namespace deepcoder::trainer {

// ---------------------------------------------------------------------------
// Splitting and batching

struct SplitSpec {
    std::size_t n_l = 400;
    std::uint64_t seed = 0;
};

struct Split {
    std::vector<std::size_t> rest;    // X_R, ascending
    std::vector<std::size_t> subset;  // X_L, ascending
    friend bool operator==(const Split&, const Split&) = default;
};

/// Subject-balanced draw of n_l indices for X_L; the remainder forms X_R.
/// Per-subject counts in X_L differ by at most 1 among subjects that still
/// have unused samples; a subject with fewer samples contributes all of them.
Split split_leave_subset_out(const std::vector<int>& subjects, const SplitSpec& spec);

/// ceil(n / batch_size) batches of exactly batch_size indices into `labels`.
/// Strata are (subject, max level over outputs). Each batch takes whole
/// passes over a freshly shuffled stratum order, then a prefix of one more,
/// so stratum counts within a batch differ by at most 1. Inside a stratum,
/// samples come from a shuffled queue, then uniformly with replacement once
/// the queue is exhausted.
std::vector<std::vector<std::size_t>> balanced_batches(const LabelMatrix& labels, const std::vector<int>& subjects,
                                                       std::size_t batch_size, Rng& rng);
std::vector<std::vector<std::size_t>> balanced_batches(const LabelMatrix& labels, const std::vector<int>& subjects,
                                                       std::size_t batch_size, std::uint64_t seed);

/// min(epoch / n_t, 1). n_t must be at least 1.
double warmup_weight(std::size_t epoch, std::size_t n_t);

// ---------------------------------------------------------------------------
// Optimizer

struct OptimizerState {
    double lr = 0.01;
    double momentum = 0.9;
    /// Global gradient-norm cap applied before the velocity update; 0 disables.
    double clip_norm = 0.0;
    ParamSet velocity;  // mirrors the parameter shapes once initialized

    friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// v <- m v + g; p <- p - lr v. `grads` holds descent directions for the
/// parameters it names (a subset of, and in the same order as, `params`).
/// Throws TrainingError naming the first non-finite gradient entry.
void sgd_momentum_step(ParamSet& params, const ParamSet& grads, OptimizerState& opt);

// ---------------------------------------------------------------------------
// Prior propagation

/// GP-encode Z_0,R to Z_1, GP-decode back to Z_0: the per-point predictive
/// mean and variance (noise included, shared across dims) form the prior.
vcae::GaussianPrior propagate_prior(const vogpae::State& state, const Tensor& z0_r);

// ---------------------------------------------------------------------------
// Joint training

struct TrainConfig {
    vcae::Architecture arch = vcae::Architecture::desk_default();
    vogpae::InitOptions gp_init;

    std::size_t n_l = 400;
    std::size_t warm_start_epochs = 5;
    std::size_t max_epochs = 100;
    /// Warm-up lengths for alpha and beta; 0 holds the weight at 1 from epoch 0.
    std::size_t n_t_alpha = 10;
    std::size_t n_t_beta = 10;
    std::size_t patience = 5;
    double tolerance = 1e-4;

    std::size_t batch_size = 32;
    double sigma_x = 0.1;
    double lr = 0.01;
    double momentum = 0.9;
    double clip_norm = 1.0;

    std::size_t gp_steps = 10;  // full-batch steps per epoch
    std::size_t mc_samples = 1;
    double gp_lr = 0.01;
    double gp_momentum = 0.9;
    double gp_clip_norm = 0.0;

    std::uint64_t seed = 0;

    /// Throws ConfigError naming the offending key.
    void validate() const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// One row of the per-epoch log. Loss terms are per data point of the
/// respective subset, evaluated after the epoch under a fixed noise draw.
struct EpochRecord {
    std::size_t epoch = 0;
    bool warm_start = false;
    vcae::Terms x;
    vogpae::Terms z;
    double alpha = 1.0;
    double beta = 0.0;
    double l_dc = 0.0;
    double wall_seconds = 0.0;
};

/// Everything except wall_seconds.
bool same_losses(const EpochRecord& a, const EpochRecord& b);

struct TrainState {
    TrainConfig config;
    std::vector<int> levels;
    Split split;
    ParamSet vcae;
    vogpae::State gp;
    vcae::GaussianPrior prior;  // over X_R, in split.rest order
    OptimizerState opt_vcae;
    OptimizerState opt_gp;
    Rng rng;
    std::vector<EpochRecord> history;
    std::size_t joint_epochs = 0;
    bool converged = false;

    bool finished() const;
};

/// Split, initialize parameters and the flat prior. No training.
TrainState init_training(const Dataset& data, const TrainConfig& config);

using EpochCallback = std::function<void(const TrainState&)>;

/// Runs the remaining warm-start and joint epochs until convergence or
/// config.max_epochs joint epochs. Resumable: a state restored from a
/// checkpoint continues exactly where it stopped.
void run_training(TrainState& state, const Dataset& data, const EpochCallback& on_epoch = {});

/// init_training followed by run_training.
TrainState train_joint(const Dataset& data, const TrainConfig& config, const EpochCallback& on_epoch = {});

/// True once the best L_DC seen over full-weight joint epochs has risen by
/// less than `tolerance` (relative) across the last `patience` epochs.
bool has_converged(const std::vector<EpochRecord>& history, const TrainConfig& config);

// ---------------------------------------------------------------------------
// Inference

struct Inference {
    LabelMatrix levels;  // [N, Q]
    Tensor z0;           // [N, D_0] encoder means
    Tensor z1;           // [N, D_1] GP-encoded
    Tensor z0_rec;       // GP-decoded Z_0 means
    Tensor z0_rec_var;   // [N]
    Tensor reconstruction;  // [N, C, H, W]
};

Inference infer(const TrainState& state, const Tensor& x_star);

}  // namespace deepcoder::trainer
