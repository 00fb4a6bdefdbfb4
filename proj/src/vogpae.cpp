#include "deepcoder/vogpae.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "deepcoder/ops.hpp"
#include "deepcoder/special.hpp"

namespace deepcoder::vogpae {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double inverse_gauss_cdf(double p) {
    double lo = -40.0, hi = 40.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (gauss_cdf(mid) < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

std::vector<std::size_t> raw_offsets(const std::vector<int>& levels) {
    std::vector<std::size_t> off(levels.size() + 1, 0);
    for (std::size_t q = 0; q < levels.size(); ++q) off[q + 1] = off[q] + static_cast<std::size_t>(levels[q] - 1);
    return off;
}

gp::RbfArdKernel kernel_from(const ParamSet& p, const char* prefix) {
    gp::RbfArdKernel k;
    k.log_sf2 = p[std::string(prefix) + ".log_sf2"][0];
    const Tensor& ell = p[std::string(prefix) + ".log_ell"];
    k.log_ell.assign(ell.values().begin(), ell.values().end());
    return k;
}

void check_levels(const std::vector<int>& levels) {
    if (levels.empty()) throw std::invalid_argument("vogpae: at least one output is required");
    for (int l : levels)
        if (l < 2) throw std::invalid_argument("vogpae: every output needs at least 2 levels");
}

}  // namespace

gp::RbfArdKernel State::encoder_kernel() const { return kernel_from(params, "enc"); }
gp::RbfArdKernel State::decoder_kernel() const { return kernel_from(params, "dec"); }
double State::noise_r() const { return std::exp(params["enc.log_noise"][0]); }
double State::noise_v() const { return std::exp(params["dec.log_noise"][0]); }
double State::sigma_o() const { return std::exp(params["log_sigma_o"][0]); }

std::vector<double> State::thresholds(std::size_t q) const {
    const auto off = raw_offsets(levels);
    return raw_to_thresholds(params["gamma_raw"].data() + off[q], off[q + 1] - off[q]);
}

std::vector<double> quantile_thresholds(int levels) {
    if (levels < 2) throw std::invalid_argument("quantile_thresholds: need at least 2 levels");
    std::vector<double> g(static_cast<std::size_t>(levels - 1));
    for (int s = 1; s < levels; ++s) g[static_cast<std::size_t>(s - 1)] = inverse_gauss_cdf(static_cast<double>(s) / levels);
    return g;
}

std::vector<double> thresholds_to_raw(const std::vector<double>& gamma) {
    std::vector<double> raw(gamma.size());
    if (gamma.empty()) return raw;
    raw[0] = gamma[0];
    for (std::size_t k = 1; k < gamma.size(); ++k) {
        const double d = gamma[k] - gamma[k - 1];
        if (!(d > 0.0)) throw std::invalid_argument("thresholds_to_raw: cut-points must be strictly increasing");
        raw[k] = d > 30.0 ? d : std::log(std::expm1(d));
    }
    return raw;
}

std::vector<double> raw_to_thresholds(const double* raw, std::size_t count) {
    std::vector<double> g(count);
    for (std::size_t k = 0; k < count; ++k) g[k] = k == 0 ? raw[0] : g[k - 1] + softplus(raw[k]);
    return g;
}

State init_state(const Tensor& z0, const std::vector<int>& levels, const InitOptions& opt, Rng& rng) {
    check_levels(levels);
    if (z0.rank() != 2) throw std::invalid_argument("vogpae::init_state: Z_0 must be [n, D_0]");
    const std::size_t n = z0.dim(0), d0 = z0.dim(1), d1 = opt.latent_dim;
    if (d1 == 0) throw std::invalid_argument("vogpae::init_state: latent_dim must be positive");
    State s;
    s.z0 = z0;
    s.levels = levels;
    const auto ell = [&](std::size_t dim) { return opt.ell > 0.0 ? opt.ell : std::sqrt(static_cast<double>(dim)); };
    const auto enc = gp::RbfArdKernel::make(d0, opt.sf2, ell(d0));
    const auto dec = gp::RbfArdKernel::make(d1, opt.sf2, ell(d1));
    s.params.add("enc.log_sf2", Tensor::scalar(enc.log_sf2));
    s.params.add("enc.log_ell", Tensor({d0}, enc.log_ell));
    s.params.add("enc.log_noise", Tensor::scalar(std::log(opt.noise_r)));
    s.params.add("dec.log_sf2", Tensor::scalar(dec.log_sf2));
    s.params.add("dec.log_ell", Tensor({d1}, dec.log_ell));
    s.params.add("dec.log_noise", Tensor::scalar(std::log(opt.noise_v)));
    Tensor m({n, d1});
    for (double& v : m.raw()) v = opt.m_scale * rng.normal();
    s.params.add("M", std::move(m));
    s.params.add("log_S", Tensor({n, d1}, std::log(opt.s_init)));
    const std::size_t q = levels.size();
    Tensor w({d1, q});
    const double ws = 1.0 / std::sqrt(static_cast<double>(d1));
    for (double& v : w.raw()) v = ws * rng.normal();
    s.params.add("w_o", std::move(w));
    s.params.add("log_sigma_o", Tensor::scalar(0.0));
    std::vector<double> raw;
    for (int l : levels) {
        const auto r = thresholds_to_raw(quantile_thresholds(l));
        raw.insert(raw.end(), r.begin(), r.end());
    }
    s.params.add("gamma_raw", Tensor({raw.size()}, raw));
    return s;
}

Posterior variational_posterior(const State& s) {
    const Tensor& m = s.params["M"];
    const auto kernel = s.decoder_kernel();
    const auto f = gp::CholFactor::factorize(gp::kernel_matrix(m, m, kernel), s.noise_v());
    const auto loo = gp::loo_posterior(f, m);
    Posterior p{loo.mean, Tensor(m.shape())};
    const Tensor& log_s = s.params["log_S"];
    for (std::size_t i = 0; i < m.dim(0); ++i)
        for (std::size_t j = 0; j < m.dim(1); ++j) p.var.at(i, j) = std::exp(log_s.at(i, j)) + loo.var[i];
    return p;
}

std::vector<double> ordinal_level_probs(double f, const std::vector<double>& gamma, double sigma_o) {
    if (!(sigma_o > 0.0)) throw std::invalid_argument("ordinal_level_probs: sigma_o must be positive");
    for (std::size_t k = 1; k < gamma.size(); ++k)
        if (!(gamma[k] > gamma[k - 1]))
            throw std::invalid_argument("ordinal_level_probs: cut-points must be strictly increasing");
    std::vector<double> p(gamma.size() + 1);
    for (std::size_t s = 0; s < p.size(); ++s) {
        const double lo = s == 0 ? -kInf : (gamma[s - 1] - f) / sigma_o;
        const double hi = s == gamma.size() ? kInf : (gamma[s] - f) / sigma_o;
        p[s] = gauss_interval(lo, hi);
    }
    return p;
}

Slot ordinal_loglik_op(Tape& t, Slot f, Slot gamma_raw, Slot log_sigma_o, const LabelMatrix& y,
                       const std::vector<int>& levels) {
    check_levels(levels);
    validate_labels(y, levels);
    const Tensor& fv = t.value(f);
    const auto off = raw_offsets(levels);
    if (fv.rank() != 2 || fv.dim(0) != y.rows || fv.dim(1) != levels.size())
        throw std::invalid_argument("ordinal_loglik: projections " + shape_str(fv.shape()) + " do not match labels");
    if (t.value(gamma_raw).size() != off.back())
        throw std::invalid_argument("ordinal_loglik: expected " + std::to_string(off.back()) + " raw cut-points");
    const double sigma = std::exp(t.value(log_sigma_o)[0]);
    const std::size_t n = y.rows, nq = levels.size();
    std::vector<std::vector<double>> gamma(nq);
    for (std::size_t q = 0; q < nq; ++q)
        gamma[q] = raw_to_thresholds(t.value(gamma_raw).data() + off[q], off[q + 1] - off[q]);

    // Per (i, q): d log P / d lower and d log P / d upper standardized bounds.
    Tensor dlo({n, nq}), dhi({n, nq}), zlo({n, nq}), zhi({n, nq});
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t q = 0; q < nq; ++q) {
            const auto s = static_cast<std::size_t>(y.at(i, q));
            const std::size_t lq = static_cast<std::size_t>(levels[q]);
            const double fi = fv.at(i, q);
            const double a = s == 1 ? -kInf : (gamma[q][s - 2] - fi) / sigma;
            const double b = s == lq ? kInf : (gamma[q][s - 1] - fi) / sigma;
            const double p = gauss_interval(a, b);
            zlo.at(i, q) = std::isfinite(a) ? a : 0.0;
            zhi.at(i, q) = std::isfinite(b) ? b : 0.0;
            if (p < 1e-12) {
                ll += kMinLogProb;
                continue;
            }
            ll += std::log(p);
            dlo.at(i, q) = std::isfinite(a) ? -gauss_pdf(a) / p : 0.0;
            dhi.at(i, q) = std::isfinite(b) ? gauss_pdf(b) / p : 0.0;
        }
    return t.record(Tensor::scalar(ll), {f, gamma_raw, log_sigma_o}, [=](Tape& tp, const Tensor& gout) {
        const double g = gout[0];
        Tensor gf({n, nq});
        std::vector<double> ggamma(off.back(), 0.0);  // d / d gamma_{q,k}, flattened like gamma_raw
        double gls = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t q = 0; q < nq; ++q) {
                const auto s = static_cast<std::size_t>(y.at(i, q));
                const std::size_t lq = static_cast<std::size_t>(levels[q]);
                const double da = g * dlo.at(i, q), db = g * dhi.at(i, q);
                gf.at(i, q) = -(da + db) / sigma;
                if (s > 1) ggamma[off[q] + s - 2] += da / sigma;
                if (s < lq) ggamma[off[q] + s - 1] += db / sigma;
                gls += -(da * zlo.at(i, q) + db * zhi.at(i, q));
            }
        tp.accumulate(f, std::move(gf));
        if (tp.requires_grad(gamma_raw)) {
            const Tensor& raw = tp.value(gamma_raw);
            Tensor gr(raw.shape());
            for (std::size_t q = 0; q < nq; ++q) {
                const std::size_t cnt = off[q + 1] - off[q];
                double tail = 0.0;  // sum_{k >= j} d / d gamma_k
                for (std::size_t j = cnt; j-- > 0;) {
                    tail += ggamma[off[q] + j];
                    gr[off[q] + j] = j == 0 ? tail : tail * sigmoid(raw[off[q] + j]);
                }
            }
            tp.accumulate(gamma_raw, std::move(gr));
        }
        tp.accumulate(log_sigma_o, Tensor::scalar(gls));
    });
}

double ordinal_loglik(const std::vector<Tensor>& z1_samples, const LabelMatrix& y, const State& s) {
    if (z1_samples.empty()) throw std::invalid_argument("ordinal_loglik: need at least one sample");
    double total = 0.0;
    for (const Tensor& z1 : z1_samples) {
        Tape t;
        const Slot w = t.constant(s.params["w_o"]);
        const Slot f = ops::matmul(t, t.constant(z1), w);
        total += t.value(ordinal_loglik_op(t, f, t.constant(s.params["gamma_raw"]), t.constant(s.params["log_sigma_o"]),
                                           y, s.levels))[0];
    }
    return total / static_cast<double>(z1_samples.size());
}

double gp_recon_loglik(const Tensor& z0, const std::vector<Tensor>& z1_samples, const gp::RbfArdKernel& kernel,
                       double noise_v) {
    if (z1_samples.empty()) throw std::invalid_argument("gp_recon_loglik: need at least one sample");
    double total = 0.0;
    for (const Tensor& z1 : z1_samples) {
        if (z1.dim(0) != z0.dim(0)) throw std::invalid_argument("gp_recon_loglik: sample rows do not match Z_0");
        Tensor k = gp::kernel_matrix(z1, z1, kernel);
        for (std::size_t i = 0; i < k.dim(0); ++i) k.at(i, i) += noise_v;
        Tape t;
        total += t.value(gp::mvn_logdensity(t, t.constant(std::move(k)), t.constant(z0)))[0];
    }
    return total / static_cast<double>(z1_samples.size());
}

double kl_to_unit_prior(const Tensor& means, const Tensor& vars) {
    require_same_shape(means, vars, "kl_to_unit_prior");
    Tensor log_var(vars.shape());
    for (std::size_t i = 0; i < vars.size(); ++i) {
        if (!(vars[i] > 0.0)) throw std::invalid_argument("kl_to_unit_prior: variances must be positive");
        log_var[i] = std::log(vars[i]);
    }
    Tape t;
    return t.value(ops::kl_diag_gauss(t, t.constant(means), t.constant(log_var), Tensor(means.shape(), 0.0),
                                      Tensor(means.shape(), 1.0)))[0];
}

ObjectiveResult objective(const State& s, const LabelMatrix& y, double beta, const std::vector<Tensor>& eps,
                          bool with_grads) {
    if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("vogpae objective: beta must lie in [0, 1]");
    if (eps.empty()) throw std::invalid_argument("vogpae objective: need at least one noise sample");
    if (y.rows != s.n()) throw std::invalid_argument("vogpae objective: label rows do not match the subset");
    Tape t;
    const BoundParams p(t, s.params, with_grads);
    const Slot m = p["M"];
    const Slot k_m = gp::add_noise(t, gp::rbf_kernel(t, m, m, p["dec.log_sf2"], p["dec.log_ell"]), p["dec.log_noise"]);
    const auto [q_mean, loo_var] = gp::loo(t, k_m, m);
    const Slot q_var = ops::add_col(t, ops::exp(t, p["log_S"]), loo_var);
    const Slot q_logvar = ops::log(t, q_var);
    const Tensor zeros(t.value(q_mean).shape(), 0.0), ones(t.value(q_mean).shape(), 1.0);
    const Slot l_kl = ops::scale(t, ops::kl_diag_gauss(t, q_mean, q_logvar, zeros, ones), -1.0);

    const Slot z0 = t.constant(s.z0);
    std::vector<Slot> recon, ord;
    for (const Tensor& e : eps) {
        const Slot z1 = ops::reparam_sample(t, q_mean, q_logvar, e);
        const Slot k_z = gp::add_noise(t, gp::rbf_kernel(t, z1, z1, p["dec.log_sf2"], p["dec.log_ell"]), p["dec.log_noise"]);
        recon.push_back(gp::mvn_logdensity(t, k_z, z0));
        ord.push_back(ordinal_loglik_op(t, ops::matmul(t, z1, p["w_o"]), p["gamma_raw"], p["log_sigma_o"], y, s.levels));
    }
    const std::vector<double> avg(eps.size(), 1.0 / static_cast<double>(eps.size()));
    const Slot l_r = ops::weighted_sum(t, recon, avg);
    const Slot l_o = ops::weighted_sum(t, ord, avg);
    const Slot parts[] = {l_kl, l_r, l_o};
    const double weights[] = {beta, 1.0, 1.0};
    const Slot total = ops::weighted_sum(t, parts, weights);

    ObjectiveResult r;
    r.terms = {t.value(l_kl)[0], t.value(l_r)[0], t.value(l_o)[0], t.value(total)[0]};
    if (with_grads) {
        t.backward(total);
        r.grads = p.gradients(t);
    }
    return r;
}

ObjectiveResult encoder_fit_objective(const State& s, bool with_grads) {
    Tape t;
    const BoundParams p(t, s.params, with_grads);
    const Slot z0 = t.constant(s.z0);
    const Slot k = gp::add_noise(t, gp::rbf_kernel(t, z0, z0, p["enc.log_sf2"], p["enc.log_ell"]), p["enc.log_noise"]);
    // M enters as data here, not as a parameter.
    const Slot ll = gp::mvn_logdensity(t, k, t.constant(s.params["M"]));
    ObjectiveResult r;
    r.terms.total = t.value(ll)[0];
    if (with_grads) {
        t.backward(ll);
        r.grads = p.gradients(t);
    }
    return r;
}

Tensor encode_new(const State& s, const Tensor& z0_star) {
    return gp::gp_predict(s.z0, s.params["M"], z0_star, s.encoder_kernel(), s.noise_r()).mean;
}

std::vector<int> predict_labels(const State& s, const Tensor& z1_star_row) {
    const Tensor& w = s.params["w_o"];
    const std::size_t d1 = w.dim(0);
    if (z1_star_row.size() != d1) throw std::invalid_argument("predict_labels: latent width mismatch");
    std::vector<int> out(s.outputs());
    for (std::size_t q = 0; q < s.outputs(); ++q) {
        double f = 0.0;
        for (std::size_t j = 0; j < d1; ++j) f += w.at(j, q) * z1_star_row[j];
        const auto probs = ordinal_level_probs(f, s.thresholds(q), s.sigma_o());
        std::size_t best = 0;
        for (std::size_t l = 1; l < probs.size(); ++l)
            if (probs[l] > probs[best]) best = l;
        out[q] = static_cast<int>(best) + 1;
    }
    return out;
}

LabelMatrix predict_labels_batch(const State& s, const Tensor& z1_star) {
    const std::size_t n = z1_star.dim(0), d1 = z1_star.dim(1);
    LabelMatrix out(n, s.outputs());
    Tensor row({d1});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d1; ++j) row[j] = z1_star.at(i, j);
        const auto lv = predict_labels(s, row);
        for (std::size_t q = 0; q < lv.size(); ++q) out.at(i, q) = lv[q];
    }
    return out;
}

gp::Prediction decode_new(const State& s, const Tensor& z1_star) {
    return gp::gp_predict(s.params["M"], s.z0, z1_star, s.decoder_kernel(), s.noise_v());
}

}  // namespace deepcoder::vogpae
