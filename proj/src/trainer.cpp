#include "deepcoder/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>

#include "deepcoder/errors.hpp"

namespace deepcoder::trainer {

namespace {

// Evaluation noise is drawn from generators derived from the config seed, so
// the logged objective does not depend on the training RNG stream.
constexpr std::uint64_t kEvalSeedX = 0x5eed0001;
constexpr std::uint64_t kEvalSeedZ = 0x5eed0002;
constexpr std::size_t kEvalChunk = 128;

Tensor normal_tensor(Shape shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.raw()) v = rng.normal();
    return t;
}

// Encoder means in chunks; keeps tapes small.
Tensor encode_means(const Tensor& x, const ParamSet& params, const vcae::Architecture& arch) {
    const std::size_t n = x.dim(0);
    Tensor out({n, arch.latent_dim});
    for (std::size_t lo = 0; lo < n; lo += kEvalChunk) {
        const std::size_t hi = std::min(n, lo + kEvalChunk);
        std::vector<std::size_t> idx(hi - lo);
        std::iota(idx.begin(), idx.end(), lo);
        const Tensor mu = vcae::encode(select_rows(x, idx), params, arch).first;
        std::copy(mu.raw().begin(), mu.raw().end(), out.data() + lo * arch.latent_dim);
    }
    return out;
}

std::string term_name_x(const vcae::Terms& t) {
    if (!std::isfinite(t.kl)) return "L_kl_X";
    if (!std::isfinite(t.recon)) return "L_r_X";
    if (!std::isfinite(t.cls)) return "L_p_X";
    return "L_VC-AE";
}

std::string term_name_z(const vogpae::Terms& t) {
    if (!std::isfinite(t.kl)) return "L_kl_Z0";
    if (!std::isfinite(t.recon)) return "L_r_Z0";
    if (!std::isfinite(t.ord)) return "L_o_Z0";
    return "L_VO-GPAE";
}

struct Subsets {
    Dataset rest, subset;
};

Subsets subsets(const Dataset& data, const Split& split) {
    return {data.select(split.rest), data.select(split.subset)};
}

double weight(std::size_t epoch, std::size_t n_t) { return n_t == 0 ? 1.0 : warmup_weight(epoch, n_t); }

void scale_into(ParamSet& acc, const ParamSet& g, double s) {
    for (std::size_t i = 0; i < acc.size(); ++i) {
        Tensor& a = acc.at(i);
        const Tensor& b = g.at(i);
        for (std::size_t k = 0; k < a.size(); ++k) a[k] += s * b[k];
    }
}

// M and S hold one row per point: their gradient is already a per-point
// quantity, so only the shared parameters are averaged over the subset.
bool per_point(const std::string& name) { return name == "M" || name == "log_S"; }

void vcae_epoch(TrainState& s, const Dataset& rest, double alpha, const std::string& where) {
    if (rest.size() == 0) return;
    const auto& cfg = s.config;
    const auto batches = balanced_batches(rest.labels, rest.subjects, cfg.batch_size, s.rng);
    const vcae::ObjectiveOptions opt{alpha, cfg.sigma_x};
    for (std::size_t b = 0; b < batches.size(); ++b) {
        const auto& idx = batches[b];
        const Tensor eps = normal_tensor({idx.size(), cfg.arch.latent_dim}, s.rng);
        const auto r = vcae::objective(select_rows(rest.images, idx), rest.labels.select(idx), s.levels, s.vcae,
                                       cfg.arch, s.prior.rows(idx), eps, opt);
        const std::string at = where + ", VC-AE step " + std::to_string(b);
        if (!std::isfinite(r.terms.total)) throw TrainingError(at + ": non-finite " + term_name_x(r.terms));
        ParamSet g = r.grads.zeros_like();
        scale_into(g, r.grads, -1.0 / static_cast<double>(idx.size()));
        try {
            sgd_momentum_step(s.vcae, g, s.opt_vcae);
        } catch (const TrainingError& e) {
            throw TrainingError(at + ": " + e.what());
        }
    }
}

void gp_epoch(TrainState& s, const LabelMatrix& y_l, double beta, const std::string& where) {
    const auto& cfg = s.config;
    const double inv_n = 1.0 / static_cast<double>(s.gp.n());
    for (std::size_t step = 0; step < cfg.gp_steps; ++step) {
        const std::string at = where + ", VO-GPAE step " + std::to_string(step);
        std::vector<Tensor> eps;
        for (std::size_t k = 0; k < cfg.mc_samples; ++k) eps.push_back(normal_tensor(s.gp.params["M"].shape(), s.rng));
        vogpae::ObjectiveResult main, fit;
        try {
            main = vogpae::objective(s.gp, y_l, beta, eps);
            fit = vogpae::encoder_fit_objective(s.gp);
        } catch (const NumericalError& e) {
            throw TrainingError(at + ": " + e.what());
        }
        if (!std::isfinite(main.terms.total)) throw TrainingError(at + ": non-finite " + term_name_z(main.terms));
        if (!std::isfinite(fit.terms.total)) throw TrainingError(at + ": non-finite encoder GP marginal likelihood");
        ParamSet g = main.grads.zeros_like();
        scale_into(g, main.grads, -inv_n);
        scale_into(g, fit.grads, -inv_n);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (per_point(g.name(i))) g.at(i) *= static_cast<double>(s.gp.n());
        try {
            sgd_momentum_step(s.gp.params, g, s.opt_gp);
        } catch (const TrainingError& e) {
            throw TrainingError(at + ": " + e.what());
        }
    }
}

vcae::Terms evaluate_x(const TrainState& s, const Dataset& rest, double alpha) {
    vcae::Terms sum;
    if (rest.size() == 0) return sum;
    const std::size_t n = rest.size();
    Rng rng(s.config.seed ^ kEvalSeedX);
    const Tensor eps_all = normal_tensor({n, s.config.arch.latent_dim}, rng);
    const vcae::ObjectiveOptions opt{alpha, s.config.sigma_x};
    for (std::size_t lo = 0; lo < n; lo += kEvalChunk) {
        std::vector<std::size_t> idx(std::min(n, lo + kEvalChunk) - lo);
        std::iota(idx.begin(), idx.end(), lo);
        const auto r = vcae::objective(select_rows(rest.images, idx), rest.labels.select(idx), s.levels, s.vcae,
                                       s.config.arch, s.prior.rows(idx), select_rows(eps_all, idx), opt, false);
        sum.kl += r.terms.kl;
        sum.recon += r.terms.recon;
        sum.cls += r.terms.cls;
        sum.total += r.terms.total;
    }
    const double inv = 1.0 / static_cast<double>(n);
    return {sum.kl * inv, sum.recon * inv, sum.cls * inv, sum.total * inv};
}

vogpae::Terms evaluate_z(const TrainState& s, const LabelMatrix& y_l, double beta) {
    Rng rng(s.config.seed ^ kEvalSeedZ);
    std::vector<Tensor> eps;
    for (std::size_t k = 0; k < s.config.mc_samples; ++k) eps.push_back(normal_tensor(s.gp.params["M"].shape(), rng));
    const auto r = vogpae::objective(s.gp, y_l, beta, eps, false);
    const double inv = 1.0 / static_cast<double>(s.gp.n());
    return {r.terms.kl * inv, r.terms.recon * inv, r.terms.ord * inv, r.terms.total * inv};
}

void refresh_prior(TrainState& s, const Dataset& rest) {
    if (rest.size() == 0) return;
    s.prior = propagate_prior(s.gp, encode_means(rest.images, s.vcae, s.config.arch));
}

}  // namespace

// ---------------------------------------------------------------------------

Split split_leave_subset_out(const std::vector<int>& subjects, const SplitSpec& spec) {
    const std::size_t n = subjects.size();
    if (spec.n_l > n)
        throw std::invalid_argument("split: N_L = " + std::to_string(spec.n_l) + " exceeds N_D = " + std::to_string(n));
    std::map<int, std::vector<std::size_t>> by_subject;
    for (std::size_t i = 0; i < n; ++i) by_subject[subjects[i]].push_back(i);

    Rng rng(spec.seed);
    std::vector<std::vector<std::size_t>*> groups;
    for (auto& [id, members] : by_subject) {
        rng.shuffle(members.begin(), members.end());
        groups.push_back(&members);
    }
    rng.shuffle(groups.begin(), groups.end());

    // Water-fill: one sample per non-exhausted subject per round, in shuffled order.
    std::vector<std::size_t> taken(groups.size(), 0);
    std::vector<std::size_t> subset;
    while (subset.size() < spec.n_l) {
        for (std::size_t g = 0; g < groups.size() && subset.size() < spec.n_l; ++g)
            if (taken[g] < groups[g]->size()) subset.push_back((*groups[g])[taken[g]++]);
    }
    std::sort(subset.begin(), subset.end());
    Split out;
    out.subset = subset;
    std::vector<char> in_l(n, 0);
    for (std::size_t i : subset) in_l[i] = 1;
    for (std::size_t i = 0; i < n; ++i)
        if (!in_l[i]) out.rest.push_back(i);
    return out;
}

std::vector<std::vector<std::size_t>> balanced_batches(const LabelMatrix& labels, const std::vector<int>& subjects,
                                                       std::size_t batch_size, Rng& rng) {
    const std::size_t n = labels.rows;
    if (n == 0) throw std::invalid_argument("balanced_batches: empty dataset");
    if (subjects.size() != n) throw std::invalid_argument("balanced_batches: subject count does not match labels");
    if (batch_size == 0) throw std::invalid_argument("balanced_batches: batch_size must be positive");

    std::map<std::pair<int, int>, std::vector<std::size_t>> strata_map;
    for (std::size_t i = 0; i < n; ++i) {
        int mx = 0;
        for (std::size_t q = 0; q < labels.cols; ++q) mx = std::max(mx, labels.at(i, q));
        strata_map[{subjects[i], mx}].push_back(i);
    }
    struct Stratum {
        std::vector<std::size_t> members;
        std::size_t cursor = 0;
    };
    std::vector<Stratum> strata;
    for (auto& [key, members] : strata_map) {
        strata.push_back({std::move(members), 0});
        rng.shuffle(strata.back().members.begin(), strata.back().members.end());
    }

    const auto draw = [&](Stratum& s) {
        if (s.cursor < s.members.size()) return s.members[s.cursor++];
        return s.members[rng.uniform_index(s.members.size())];
    };

    const std::size_t n_batches = (n + batch_size - 1) / batch_size;
    std::vector<std::size_t> order(strata.size());
    std::vector<std::vector<std::size_t>> batches(n_batches);
    for (auto& batch : batches) {
        batch.reserve(batch_size);
        while (batch.size() < batch_size) {
            std::iota(order.begin(), order.end(), 0);
            rng.shuffle(order.begin(), order.end());
            for (std::size_t k = 0; k < order.size() && batch.size() < batch_size; ++k)
                batch.push_back(draw(strata[order[k]]));
        }
    }
    return batches;
}

std::vector<std::vector<std::size_t>> balanced_batches(const LabelMatrix& labels, const std::vector<int>& subjects,
                                                       std::size_t batch_size, std::uint64_t seed) {
    Rng rng(seed);
    return balanced_batches(labels, subjects, batch_size, rng);
}

double warmup_weight(std::size_t epoch, std::size_t n_t) {
    if (n_t == 0) throw std::invalid_argument("warmup_weight: N_t must be at least 1");
    return std::min(static_cast<double>(epoch) / static_cast<double>(n_t), 1.0);
}

void sgd_momentum_step(ParamSet& params, const ParamSet& grads, OptimizerState& opt) {
    for (std::size_t i = 0; i < grads.size(); ++i) {
        const Tensor& g = grads.at(i);
        const Tensor& p = params[grads.name(i)];
        if (g.shape() != p.shape())
            throw std::invalid_argument("sgd: gradient for " + grads.name(i) + " has shape " + shape_str(g.shape()) +
                                        ", parameter has " + shape_str(p.shape()));
        for (std::size_t k = 0; k < g.size(); ++k)
            if (!std::isfinite(g[k]))
                throw TrainingError("non-finite gradient in " + grads.name(i) + "[" + std::to_string(k) + "]");
    }
    double scale = 1.0;
    if (opt.clip_norm > 0.0) {
        double sq = 0.0;
        for (std::size_t i = 0; i < grads.size(); ++i)
            for (double v : grads.at(i).values()) sq += v * v;
        const double norm = std::sqrt(sq);
        if (norm > opt.clip_norm) scale = opt.clip_norm / norm;
    }
    if (opt.velocity.size() == 0) opt.velocity = grads.zeros_like();
    for (std::size_t i = 0; i < grads.size(); ++i) {
        const Tensor& g = grads.at(i);
        Tensor& v = opt.velocity[grads.name(i)];
        Tensor& p = params[grads.name(i)];
        for (std::size_t k = 0; k < g.size(); ++k) {
            v[k] = opt.momentum * v[k] + scale * g[k];
            p[k] -= opt.lr * v[k];
        }
    }
}

vcae::GaussianPrior propagate_prior(const vogpae::State& state, const Tensor& z0_r) {
    const Tensor z1 = vogpae::encode_new(state, z0_r);
    const gp::Prediction pred = vogpae::decode_new(state, z1);
    vcae::GaussianPrior prior{pred.mean, Tensor(pred.mean.shape())};
    for (std::size_t i = 0; i < prior.var.dim(0); ++i)
        for (std::size_t j = 0; j < prior.var.dim(1); ++j) prior.var.at(i, j) = pred.var[i];
    prior.validate();
    return prior;
}

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    try {
        arch.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError("model", e.what());
    }
    const auto positive = [](bool ok, const char* key, const char* what) {
        if (!ok) throw ConfigError(key, what);
    };
    positive(gp_init.latent_dim > 0, "gp.latent_dim", "must be positive");
    positive(gp_init.sf2 > 0, "gp.sf2", "must be positive");
    positive(gp_init.ell >= 0, "gp.ell", "must be positive, or 0 for sqrt(input dimension)");
    positive(gp_init.noise_r > 0, "gp.noise_r", "must be positive");
    positive(gp_init.noise_v > 0, "gp.noise_v", "must be positive");
    positive(gp_init.m_scale >= 0, "gp.m_scale", "must be non-negative");
    positive(gp_init.s_init > 0, "gp.s_init", "must be positive");
    positive(gp_steps >= 1, "gp.steps_per_epoch", "must be at least 1");
    positive(n_l >= 2, "split.n_l", "must be at least 2");
    positive(patience >= 1, "train.patience", "must be at least 1");
    positive(tolerance > 0, "train.tolerance", "must be positive");
    positive(batch_size >= 1, "train.batch_size", "must be at least 1");
    positive(sigma_x > 0, "train.sigma_x", "must be positive");
    positive(lr > 0, "train.lr", "must be positive");
    positive(momentum >= 0 && momentum < 1, "train.momentum", "must lie in [0, 1)");
    positive(clip_norm >= 0, "train.clip_norm", "must be non-negative");
    positive(mc_samples >= 1, "gp.mc_samples", "must be at least 1");
    positive(gp_lr > 0, "gp.lr", "must be positive");
    positive(gp_momentum >= 0 && gp_momentum < 1, "gp.momentum", "must lie in [0, 1)");
    positive(gp_clip_norm >= 0, "gp.clip_norm", "must be non-negative");
}

bool same_losses(const EpochRecord& a, const EpochRecord& b) {
    const auto tx = [](const vcae::Terms& t) { return std::tie(t.kl, t.recon, t.cls, t.total); };
    const auto tz = [](const vogpae::Terms& t) { return std::tie(t.kl, t.recon, t.ord, t.total); };
    return a.epoch == b.epoch && a.warm_start == b.warm_start && tx(a.x) == tx(b.x) && tz(a.z) == tz(b.z) &&
           a.alpha == b.alpha && a.beta == b.beta && a.l_dc == b.l_dc;
}

bool TrainState::finished() const {
    return history.size() >= config.warm_start_epochs && (converged || joint_epochs >= config.max_epochs);
}

bool has_converged(const std::vector<EpochRecord>& history, const TrainConfig& config) {
    // Plateau of the running best L_DC over full-weight joint epochs: the best
    // value may not rise by more than `tolerance` (relative) within `patience`
    // epochs. For a monotone trace this is the plain relative change.
    const std::size_t p = config.patience;
    if (history.size() < p + 1) return false;
    const std::size_t last = history.size() - 1;
    const auto full = [](const EpochRecord& r) { return !r.warm_start && r.alpha >= 1.0 && r.beta >= 1.0; };
    for (std::size_t k = last - p; k <= last; ++k)
        if (!full(history[k])) return false;
    double best_prev = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k <= last - p; ++k)
        if (full(history[k])) best_prev = std::max(best_prev, history[k].l_dc);
    double best_cur = best_prev;
    for (std::size_t k = last - p + 1; k <= last; ++k) best_cur = std::max(best_cur, history[k].l_dc);
    return best_cur - best_prev < config.tolerance * std::abs(best_prev);
}

TrainState init_training(const Dataset& data, const TrainConfig& config) {
    config.validate();
    data.validate();
    if (data.images.dim(1) != config.arch.channels || data.images.dim(2) != config.arch.height ||
        data.images.dim(3) != config.arch.width)
        throw std::invalid_argument("train: images " + shape_str(data.images.shape()) +
                                    " do not match the architecture input");
    TrainState s;
    s.config = config;
    s.levels = data.levels;
    s.split = split_leave_subset_out(data.subjects, {config.n_l, config.seed});
    s.rng = Rng(config.seed);
    s.vcae = vcae::init_params(config.arch, data.levels, s.rng);
    const auto [rest, subset] = subsets(data, s.split);
    const Tensor z0_l = encode_means(subset.images, s.vcae, config.arch);
    s.gp = vogpae::init_state(z0_l, data.levels, config.gp_init, s.rng);
    if (rest.size() > 0) s.prior = vcae::GaussianPrior::flat(rest.size(), config.arch.latent_dim);
    s.opt_vcae = {config.lr, config.momentum, config.clip_norm, {}};
    s.opt_gp = {config.gp_lr, config.gp_momentum, config.gp_clip_norm, {}};
    return s;
}

void run_training(TrainState& s, const Dataset& data, const EpochCallback& on_epoch) {
    const auto [rest, subset] = subsets(data, s.split);
    using clock = std::chrono::steady_clock;
    while (!s.finished()) {
        const auto t0 = clock::now();
        EpochRecord rec;
        rec.epoch = s.history.size();
        if (s.history.size() < s.config.warm_start_epochs) {
            const std::string where = "warm-start epoch " + std::to_string(rec.epoch);
            vcae_epoch(s, rest, 1.0, where);
            rec.warm_start = true;
            rec.alpha = 1.0;
            rec.beta = 0.0;
            rec.x = evaluate_x(s, rest, 1.0);
        } else {
            const std::size_t e = s.joint_epochs;
            const std::string where = "epoch " + std::to_string(rec.epoch);
            rec.alpha = weight(e, s.config.n_t_alpha);
            rec.beta = weight(e, s.config.n_t_beta);
            // Step 1: image coder under the current prior, then project X_L.
            vcae_epoch(s, rest, rec.alpha, where);
            s.gp.z0 = encode_means(subset.images, s.vcae, s.config.arch);
            // Step 2: GP coder on (Z_0,L, Y_L), then refresh the prior over X_R.
            gp_epoch(s, subset.labels, rec.beta, where);
            try {
                refresh_prior(s, rest);
                rec.x = evaluate_x(s, rest, rec.alpha);
                rec.z = evaluate_z(s, subset.labels, rec.beta);
            } catch (const NumericalError& err) {
                throw TrainingError(where + ": " + err.what());
            }
            if (!std::isfinite(rec.z.total)) throw TrainingError(where + ": non-finite " + term_name_z(rec.z));
            ++s.joint_epochs;
        }
        if (!std::isfinite(rec.x.total))
            throw TrainingError("epoch " + std::to_string(rec.epoch) + ": non-finite " + term_name_x(rec.x));
        rec.l_dc = rec.x.total + rec.z.total;
        rec.wall_seconds = std::chrono::duration<double>(clock::now() - t0).count();
        s.history.push_back(rec);
        if (!rec.warm_start) s.converged = has_converged(s.history, s.config);
        if (on_epoch) on_epoch(s);
    }
}

TrainState train_joint(const Dataset& data, const TrainConfig& config, const EpochCallback& on_epoch) {
    TrainState s = init_training(data, config);
    run_training(s, data, on_epoch);
    return s;
}

Inference infer(const TrainState& state, const Tensor& x_star) {
    const auto& arch = state.config.arch;
    if (x_star.rank() != 4 || x_star.dim(1) != arch.channels || x_star.dim(2) != arch.height ||
        x_star.dim(3) != arch.width)
        throw std::invalid_argument("infer: input " + shape_str(x_star.shape()) + " does not match the architecture");
    Inference out;
    out.z0 = encode_means(x_star, state.vcae, arch);
    out.z1 = vogpae::encode_new(state.gp, out.z0);
    out.levels = vogpae::predict_labels_batch(state.gp, out.z1);
    const gp::Prediction rec = vogpae::decode_new(state.gp, out.z1);
    out.z0_rec = rec.mean;
    out.z0_rec_var = rec.var;
    const std::size_t n = x_star.dim(0);
    out.reconstruction = Tensor(x_star.shape());
    const std::size_t stride = x_star.size() / n;
    for (std::size_t lo = 0; lo < n; lo += kEvalChunk) {
        std::vector<std::size_t> idx(std::min(n, lo + kEvalChunk) - lo);
        std::iota(idx.begin(), idx.end(), lo);
        const Tensor xr = vcae::decode(select_rows(out.z0_rec, idx), state.vcae, arch);
        std::copy(xr.raw().begin(), xr.raw().end(), out.reconstruction.data() + lo * stride);
    }
    return out;
}

}  // namespace deepcoder::trainer
