// Acceptance report: one PASS/FAIL line per criterion.
// Exit status is the number of failed criteria.

#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "deepcoder/dataio.hpp"
#include "deepcoder/gp.hpp"
#include "deepcoder/kernels.hpp"
#include "deepcoder/metrics.hpp"
#include "deepcoder/tape.hpp"
#include "deepcoder/trainer.hpp"
#include "deepcoder/vcae.hpp"
#include "deepcoder/vogpae.hpp"
#include "small_setup.hpp"
#include "support.hpp"

using namespace deepcoder;
using namespace deepcoder::test;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

LabelMatrix random_labels(std::size_t n, const std::vector<int>& levels, Rng& rng) {
    LabelMatrix y(n, levels.size());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t q = 0; q < levels.size(); ++q)
            y.at(i, q) = 1 + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(levels[q])));
    return y;
}

// ---------------------------------------------------------------------------
// 1. Gradient suite

FdReport fd_vcae(std::uint64_t seed) {
    Rng rng(seed);
    vcae::Architecture arch;
    arch.height = arch.width = 8;
    arch.stages = {{3, 3, true}, {2, 3, true}};
    arch.hidden = {4};
    arch.latent_dim = 3;
    const std::vector<int> levels{3, 4};
    ParamSet p = vcae::init_params(arch, levels, rng);
    for (std::size_t i = 0; i < p.size(); ++i)
        for (double& v : p.at(i).raw()) v += 0.1 * rng.normal();
    const std::size_t n = 1 + rng.uniform_index(8);
    const Tensor x = random_uniform({n, 1, 8, 8}, rng);
    const LabelMatrix y = random_labels(n, levels, rng);
    const Tensor eps = random_normal({n, 3}, rng);
    const vcae::GaussianPrior prior{random_normal({n, 3}, rng), random_uniform({n, 3}, rng, 0.5, 2.0)};
    // alpha = 1 is the plain autoencoder bound; other values mix in the classifier.
    const vcae::ObjectiveOptions opt{seed % 2 ? 1.0 : rng.uniform(), 0.2 + 0.3 * rng.uniform()};
    const auto r = vcae::objective(x, y, levels, p, arch, prior, eps, opt);
    return fd_check(p, r.grads, [&](const ParamSet& ps) {
               return vcae::objective(x, y, levels, ps, arch, prior, eps, opt, false).terms.total;
           }, 1e-6, true);
}

vogpae::State random_gp_state(std::size_t n, std::size_t d0, std::size_t d1, const std::vector<int>& levels, Rng& rng) {
    vogpae::InitOptions io;
    io.latent_dim = d1;
    io.m_scale = 0.7;
    io.s_init = 0.3;
    auto s = vogpae::init_state(random_normal({n, d0}, rng), levels, io, rng);
    for (std::size_t i = 0; i < s.params.size(); ++i)
        if (s.params.name(i) != "gamma_raw")
            for (double& v : s.params.at(i).raw()) v += 0.2 * rng.normal();
    return s;
}

FdReport fd_vogpae(std::uint64_t seed) {
    Rng rng(seed);
    const std::vector<int> levels{3, 2 + static_cast<int>(rng.uniform_index(3))};
    const std::size_t n = 2 + rng.uniform_index(7), d1 = 1 + rng.uniform_index(3);
    const auto s = random_gp_state(n, 3, d1, levels, rng);
    const LabelMatrix y = random_labels(n, levels, rng);
    std::vector<Tensor> eps;
    for (std::size_t k = 0; k < 1 + rng.uniform_index(2); ++k) eps.push_back(random_normal({n, d1}, rng));
    const double beta = seed % 2 ? 1.0 : rng.uniform();
    const auto r = vogpae::objective(s, y, beta, eps);
    return fd_check(s.params, r.grads, [&](const ParamSet& p) {
               auto sp = s;
               sp.params = p;
               return vogpae::objective(sp, y, beta, eps, false).terms.total;
           }, 1e-6, true);
}

FdReport fd_ordinal(std::uint64_t seed) {
    Rng rng(seed);
    const std::vector<int> levels{2 + static_cast<int>(rng.uniform_index(4)), 3};
    const std::size_t n = 1 + rng.uniform_index(8);
    std::vector<double> raw;
    for (int l : levels)
        for (int k = 0; k < l - 1; ++k) raw.push_back(k == 0 ? rng.normal() : 0.5 * rng.normal());
    ParamSet p;
    p.add("f", random_normal({n, 2}, rng));
    p.add("gamma_raw", Tensor({raw.size()}, raw));
    p.add("log_sigma_o", Tensor::scalar(0.3 * rng.normal()));
    const LabelMatrix y = random_labels(n, levels, rng);
    const auto eval = [&](const ParamSet& ps, ParamSet* grads) {
        Tape t;
        const BoundParams b(t, ps, grads != nullptr);
        const Slot out = vogpae::ordinal_loglik_op(t, b["f"], b["gamma_raw"], b["log_sigma_o"], y, levels);
        if (grads) {
            t.backward(out);
            *grads = b.gradients(t);
        }
        return t.value(out)[0];
    };
    ParamSet g;
    eval(p, &g);
    return fd_check(p, g, [&](const ParamSet& ps) { return eval(ps, nullptr); }, 1e-6, true);
}

FdReport fd_gp_recon(std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t n = 1 + rng.uniform_index(8), d1 = 1 + rng.uniform_index(3), d0 = 1 + rng.uniform_index(4);
    ParamSet p;
    p.add("z1", random_normal({n, d1}, rng));
    p.add("log_sf2", Tensor::scalar(0.3 * rng.normal()));
    p.add("log_ell", random_normal({d1}, rng, 0.3));
    p.add("log_noise", Tensor::scalar(-1.0 + 0.3 * rng.normal()));
    const Tensor z0 = random_normal({n, d0}, rng);
    const auto eval = [&](const ParamSet& ps, ParamSet* grads) {
        Tape t;
        const BoundParams b(t, ps, grads != nullptr);
        const Slot k = gp::add_noise(t, gp::rbf_kernel(t, b["z1"], b["z1"], b["log_sf2"], b["log_ell"]), b["log_noise"]);
        const Slot out = gp::mvn_logdensity(t, k, t.constant(z0));
        if (grads) {
            t.backward(out);
            *grads = b.gradients(t);
        }
        return t.value(out)[0];
    };
    ParamSet g;
    eval(p, &g);
    return fd_check(p, g, [&](const ParamSet& ps) { return eval(ps, nullptr); }, 1e-6, true);
}

Outcome gradient_suite() {
    const auto t0 = Clock::now();
    std::map<std::string, std::function<FdReport(std::uint64_t)>> suites{
        {"vcae", fd_vcae}, {"vogpae", fd_vogpae}, {"ordinal", fd_ordinal}, {"gp_recon", fd_gp_recon}};
    std::string detail;
    double worst = 0.0;
    std::size_t retries = 0;
    for (const auto& [name, f] : suites) {
        double w = 0.0;
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            const FdReport r = f(seed);
            w = std::max(w, r.worst);
            retries += r.kink_retries;
        }
        worst = std::max(worst, w);
        detail += fmt("%s %.1e, ", name.c_str(), w);
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-5 && secs < 60.0,
            detail + fmt("worst %.1e (< 1e-5), %zu kink re-steps, %.1f s (< 60)", worst, retries, secs)};
}

// ---------------------------------------------------------------------------
// 2. Leave-one-out oracle

Eigen::MatrixXd without(const Eigen::MatrixXd& m, long skip_row, long skip_col) {
    Eigen::MatrixXd out(m.rows() - (skip_row >= 0), m.cols() - (skip_col >= 0));
    for (long i = 0, r = 0; i < m.rows(); ++i) {
        if (i == skip_row) continue;
        for (long j = 0, c = 0; j < m.cols(); ++j) {
            if (j == skip_col) continue;
            out(r, c++) = m(i, j);
        }
        ++r;
    }
    return out;
}

Outcome loo_oracle() {
    const auto t0 = Clock::now();
    Rng rng(10);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.uniform_index(16), d = 1 + rng.uniform_index(4), q = 1 + rng.uniform_index(3);
        std::vector<double> ell(d);
        for (double& e : ell) e = 0.3 + 2.0 * rng.uniform();
        auto k = gp::RbfArdKernel::make(d, 0.2 + 2.0 * rng.uniform());
        for (std::size_t j = 0; j < d; ++j) k.log_ell[j] = std::log(ell[j]);
        const double noise = 0.01 + rng.uniform();
        const Tensor x = random_normal({n, d}, rng), m = random_normal({n, q}, rng);
        const Tensor kk = gp::kernel_matrix(x, x, k);
        const auto f = gp::CholFactor::factorize(kk, noise);
        const auto r = gp::loo_posterior(f, m);
        Eigen::MatrixXd c = gp::as_matrix(kk);
        c.diagonal().array() += noise + f.jitter();
        const Eigen::MatrixXd mm = gp::as_matrix(m);
        for (long i = 0; i < static_cast<long>(n); ++i) {
            std::vector<double> mean(q, 0.0);
            double var = c(i, i);
            if (n > 1) {
                const Eigen::MatrixXd w = without(c.row(i), -1, i) * without(c, i, i).inverse();
                const Eigen::MatrixXd targets = without(mm, i, -1);
                for (std::size_t j = 0; j < q; ++j) mean[j] = (w * targets.col(static_cast<long>(j)))(0, 0);
                var -= (w * without(c.row(i), -1, i).transpose())(0, 0);
            }
            for (std::size_t j = 0; j < q; ++j)
                worst = std::max(worst, std::abs(r.mean.at(static_cast<std::size_t>(i), j) - mean[j]));
            worst = std::max(worst, std::abs(r.var[static_cast<std::size_t>(i)] - var));
        }
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-8 && secs < 30.0, fmt("200 cases, worst %.1e (< 1e-8), %.2f s (< 30)", worst, secs)};
}

// ---------------------------------------------------------------------------
// 3. Ordinal normalization

Outcome ordinal_normalization() {
    Rng rng(31);
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const int levels = 2 + static_cast<int>(rng.uniform_index(7));
        std::vector<double> gamma(levels - 1);
        double g = -2.0 + rng.normal();
        for (double& v : gamma) {
            v = g;
            g += 0.05 + 1.5 * rng.uniform();
        }
        const double f = i % 10 == 0 ? (i % 20 == 0 ? 50.0 : -50.0) : 5.0 * rng.normal();
        const double sigma = std::exp(2.0 * rng.normal());
        double sum = 0.0;
        for (double p : vogpae::ordinal_level_probs(f, gamma, sigma)) sum += p;
        worst = std::max(worst, std::abs(sum - 1.0));
    }
    return {worst < 1e-9, fmt("10^4 draws incl. |f| = 50, worst |sum - 1| = %.1e (< 1e-9)", worst)};
}

// ---------------------------------------------------------------------------
// 4. KL properties

Outcome kl_properties() {
    Rng rng(41);
    double min_kl = 1e300;
    for (int i = 0; i < 1000; ++i) {
        const std::size_t n = 1 + rng.uniform_index(5), d = 1 + rng.uniform_index(5);
        const Tensor mu = random_normal({n, d}, rng, 2.0), lv = random_normal({n, d}, rng);
        const vcae::GaussianPrior p{random_normal({n, d}, rng, 2.0), random_uniform({n, d}, rng, 0.05, 4.0)};
        min_kl = std::min(min_kl, vcae::kl_diag_gauss(mu, lv, p));
    }
    bool self_zero = true;
    for (int i = 0; i < 100; ++i) {
        const Tensor mu = random_normal({3, 4}, rng), lv = random_normal({3, 4}, rng);
        Tensor var = lv;
        for (double& v : var.raw()) v = std::exp(v);
        self_zero = self_zero && vcae::kl_diag_gauss(mu, lv, {mu, var}) == 0.0;
    }
    int mc_ok = 0;
    double worst_z = 0.0;
    for (int c = 0; c < 10; ++c) {
        const std::size_t d = 1 + rng.uniform_index(3);
        const Tensor mu = random_normal({1, d}, rng), lv = random_normal({1, d}, rng, 0.5);
        const vcae::GaussianPrior p{random_normal({1, d}, rng), random_uniform({1, d}, rng, 0.3, 3.0)};
        const double closed = vcae::kl_diag_gauss(mu, lv, p);
        const std::size_t samples = 10'000'000;
        double sum = 0.0, sum2 = 0.0;
        for (std::size_t s = 0; s < samples; ++s) {
            double v = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double e = rng.normal();
                const double sd = std::exp(0.5 * lv[j]);
                const double z = mu[j] + sd * e;
                const double r = z - p.mean[j];
                v += -0.5 * e * e - 0.5 * lv[j] + 0.5 * std::log(p.var[j]) + 0.5 * r * r / p.var[j];
            }
            sum += v;
            sum2 += v * v;
        }
        const double mean = sum / samples, se = std::sqrt((sum2 / samples - mean * mean) / samples);
        const double zscore = std::abs(mean - closed) / se;
        worst_z = std::max(worst_z, zscore);
        mc_ok += zscore < 3.0;
    }
    return {min_kl >= 0.0 && self_zero && mc_ok == 10,
            fmt("min KL %.2e over 1000 pairs, KL(q||q) == 0: %s, MC within 3 SE: %d/10 (worst %.2f SE)", min_kl,
                self_zero ? "yes" : "no", mc_ok, worst_z)};
}

// ---------------------------------------------------------------------------
// 5. End-to-end synthetic recovery

Outcome end_to_end() {
    kernels::set_thread_count(4);
    const auto t0 = Clock::now();
    const dataio::Config c;
    const Dataset train = dataio::generate_synthetic(c.synth);
    auto held = c.synth;
    held.seed = c.synth.seed + 1;
    const Dataset test_set = dataio::generate_synthetic(held);
    const auto st = trainer::train_joint(train, c.train);
    const auto inf = trainer::infer(st, test_set.images);
    const auto rep = metrics::evaluate(inf.levels, test_set.labels);
    const double secs = seconds_since(t0);
    const double icc = rep.avg_icc.value_or(-1.0);
    const bool pass = st.converged && st.joint_epochs <= 100 && icc >= 0.85 && rep.avg_accuracy >= 0.75 && secs < 600.0;
    return {pass, fmt("converged %s after %zu joint epochs (<= 100), held-out ICC %.3f (>= 0.85), accuracy %.3f "
                      "(>= 0.75), %.0f s (< 600)",
                      st.converged ? "yes" : "no", st.joint_epochs, icc, rep.avg_accuracy, secs)};
}

// ---------------------------------------------------------------------------
// 6. Warm-up ablation

Outcome warmup_ablation() {
    int wins = 0;
    std::string detail;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        dataio::Config c;
        c.synth.height = c.synth.width = 16;
        c.synth.samples = 400;
        c.synth.seed = seed;
        c.train.arch.height = c.train.arch.width = 16;
        c.train.n_l = 130;
        c.train.max_epochs = 40;
        c.train.seed = seed;
        const Dataset d = dataio::generate_synthetic(c.synth);
        const double warm = trainer::train_joint(d, c.train).history.back().l_dc;
        auto cold_cfg = c.train;
        cold_cfg.n_t_alpha = cold_cfg.n_t_beta = 0;
        const double cold = trainer::train_joint(d, cold_cfg).history.back().l_dc;
        wins += warm > cold;
        detail += fmt("%s%.1f vs %.1f", seed ? ", " : "", warm, cold);
    }
    return {wins >= 4, fmt("warm-up wins %d/5 (>= 4); final L_DC warm vs cold: ", wins) + detail};
}

// ---------------------------------------------------------------------------
// 7. Determinism and resume

std::string csv_without_wall(const trainer::TrainState& s) {
    std::string out = dataio::metrics_csv_header() + "\n";
    for (const auto& r : s.history) {
        const std::string row = dataio::metrics_csv_row(r);
        out += row.substr(0, row.rfind(',')) + "\n";
    }
    return out;
}

Outcome determinism_and_resume() {
    auto cfg = small_config();
    cfg.train.max_epochs = 5;
    const Dataset d = dataio::generate_synthetic(cfg.synth);
    const auto a = trainer::train_joint(d, cfg.train), b = trainer::train_joint(d, cfg.train);
    const bool same_csv = csv_without_wall(a) == csv_without_wall(b);

    auto first = cfg.train;
    first.max_epochs = 2;
    const auto part = trainer::train_joint(d, first);
    TempDir dir("acceptance_resume");
    dataio::save_checkpoint(part, dir / "p.ckpt");
    auto resumed = dataio::load_checkpoint(dir / "p.ckpt");
    resumed.config.max_epochs = 5;
    trainer::run_training(resumed, d);
    const bool same_resume = same_state(a, resumed) && csv_without_wall(a) == csv_without_wall(resumed);
    return {same_csv && same_resume, fmt("rerun CSV identical: %s, 2 + resume + 3 epochs identical to 5: %s",
                                         same_csv ? "yes" : "no", same_resume ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// 8. Metric oracles

Outcome metric_oracles() {
    Rng rng(81);
    double worst = 0.0, worst_self = 0.0, worst_inv = 0.0;
    for (int c = 0; c < 100; ++c) {
        const std::size_t n = 2 + rng.uniform_index(60);
        std::vector<double> a(n), b(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = rng.normal();
            b[i] = 0.6 * a[i] + 0.4 * rng.normal();
        }
        const double v = metrics::icc31(a, b);
        worst = std::max(worst, std::abs(v - icc31_anova_oracle(a, b)));
        worst_self = std::max(worst_self, std::abs(metrics::icc31(a, a) - 1.0));
        const double shift = 10.0 * rng.normal(), scale = 0.1 + 5.0 * rng.uniform();
        std::vector<double> as(n), bs(n);
        for (std::size_t i = 0; i < n; ++i) {
            as[i] = scale * a[i] + shift;
            bs[i] = scale * b[i] + shift;
        }
        worst_inv = std::max(worst_inv, std::abs(metrics::icc31(as, bs) - v));
    }
    return {worst < 1e-10 && worst_self < 1e-12 && worst_inv < 1e-10,
            fmt("ANOVA oracle worst %.1e (< 1e-10), |icc(x,x) - 1| %.1e, shift/scale drift %.1e", worst, worst_self,
                worst_inv)};
}

// ---------------------------------------------------------------------------
// 9. Balance guarantees

Outcome balance() {
    Rng rng(91);
    int split_bad = 0, batch_bad = 0;
    for (int c = 0; c < 100; ++c) {
        const std::size_t subjects = 1 + rng.uniform_index(8), n = subjects + rng.uniform_index(120);
        const std::size_t q = 1 + rng.uniform_index(3);
        std::vector<int> ids(n);
        for (std::size_t i = 0; i < n; ++i)
            ids[i] = i < subjects ? static_cast<int>(i) : static_cast<int>(rng.uniform_index(subjects));
        LabelMatrix y(n, q);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < q; ++k) y.at(i, k) = 1 + static_cast<int>(rng.uniform_index(4));

        const auto s = trainer::split_leave_subset_out(ids, {rng.uniform_index(n + 1), static_cast<std::uint64_t>(c)});
        std::map<int, std::size_t> avail, got;
        for (int id : ids) ++avail[id];
        for (std::size_t i : s.subset) ++got[ids[i]];
        std::size_t hi = 0;
        for (const auto& [id, k] : got) hi = std::max(hi, k);
        for (const auto& [id, k] : avail)
            if (got[id] != k && got[id] + 1 < hi) ++split_bad;

        std::map<std::pair<int, int>, std::size_t> stratum;
        std::vector<std::size_t> of(n);
        for (std::size_t i = 0; i < n; ++i) {
            int m = 0;
            for (std::size_t k = 0; k < q; ++k) m = std::max(m, y.at(i, k));
            of[i] = stratum.emplace(std::make_pair(ids[i], m), stratum.size()).first->second;
        }
        const std::size_t bs = 1 + rng.uniform_index(40);
        for (const auto& batch : trainer::balanced_batches(y, ids, bs, static_cast<std::uint64_t>(c))) {
            std::vector<std::size_t> cnt(stratum.size(), 0);
            for (std::size_t i : batch) ++cnt[of[i]];
            const auto [lo, top] = std::minmax_element(cnt.begin(), cnt.end());
            if (*top - *lo > 1 || batch.size() != bs) ++batch_bad;
        }
    }
    return {split_bad == 0 && batch_bad == 0,
            fmt("100 datasets: split violations %d, batch violations %d", split_bad, batch_bad)};
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"gradient suite", gradient_suite},
        {"leave-one-out oracle", loo_oracle},
        {"ordinal normalization", ordinal_normalization},
        {"KL properties", kl_properties},
        {"end-to-end synthetic recovery", end_to_end},
        {"warm-up ablation", warmup_ablation},
        {"determinism and resume", determinism_and_resume},
        {"metric oracles", metric_oracles},
        {"balance guarantees", balance},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("criterion %zu: %s  %s: %s\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first,
                    o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%zu/%zu criteria pass\n", criteria.size() - failed, criteria.size());
    return failed;
}
