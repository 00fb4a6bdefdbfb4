#include "deepcoder/vcae.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "deepcoder/ops.hpp"
#include "deepcoder/special.hpp"

namespace deepcoder::vcae {

namespace {

std::string stage_name(const char* prefix, std::size_t i) { return std::string(prefix) + std::to_string(i); }

Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    Tensor w(std::move(shape));
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : w.raw()) v = (2.0 * rng.uniform() - 1.0) * limit;
    return w;
}

std::size_t level_width(const std::vector<int>& levels) {
    std::size_t w = 0;
    for (int l : levels) {
        if (l < 2) throw std::invalid_argument("every output needs at least 2 levels");
        w += static_cast<std::size_t>(l);
    }
    return w;
}

}  // namespace

Architecture Architecture::desk_default() { return Architecture{}; }

Architecture Architecture::paper_profile() {
    Architecture a;
    a.channels = 1;
    a.height = 240;
    a.width = 160;
    a.stages = {{128, 5, true}, {64, 5, true}, {32, 5, true}, {16, 5, true}, {8, 5, true}};
    a.hidden = {};
    a.latent_dim = 2000;
    a.stated_compressed = std::vector<std::size_t>{16, 15, 20};
    return a;
}

void Architecture::validate() const {
    if (channels == 0 || height == 0 || width == 0) throw std::invalid_argument("architecture: empty input shape");
    if (stages.empty()) throw std::invalid_argument("architecture: at least one conv stage is required");
    if (latent_dim == 0) throw std::invalid_argument("architecture: latent_dim must be positive");
    std::size_t h = height, w = width;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const auto& s = stages[i];
        if (s.filters == 0) throw std::invalid_argument("architecture: stage " + std::to_string(i) + " has no filters");
        if (s.kernel == 0 || s.kernel % 2 == 0)
            throw std::invalid_argument("architecture: stage " + std::to_string(i) + " kernel must be odd");
        if (s.pool) {
            if (h % 2 || w % 2) {
                std::ostringstream os;
                os << "architecture: stage " << i << " pools a " << h << "x" << w
                   << " map; spatial dims must be divisible by 2";
                throw std::invalid_argument(os.str());
            }
            h /= 2;
            w /= 2;
        }
    }
    for (auto width_i : hidden)
        if (width_i == 0) throw std::invalid_argument("architecture: hidden layer width must be positive");
    if (stated_compressed) {
        const std::vector<std::size_t> got{stages.back().filters, h, w};
        if (*stated_compressed != got) {
            std::ostringstream os;
            os << "architecture: stated compressed shape " << shape_str(*stated_compressed)
               << " is unreachable; the layer list yields " << shape_str(got);
            throw std::invalid_argument(os.str());
        }
    }
}

std::vector<std::size_t> Architecture::compressed_shape() const {
    std::size_t h = height, w = width;
    for (const auto& s : stages)
        if (s.pool) {
            h /= 2;
            w /= 2;
        }
    return {stages.back().filters, h, w};
}

std::size_t Architecture::compressed_size() const { return shape_size(compressed_shape()); }

GaussianPrior GaussianPrior::flat(std::size_t n, std::size_t dim) {
    return GaussianPrior{Tensor({n, dim}, 0.0), Tensor({n, dim}, 1.0)};
}

GaussianPrior GaussianPrior::rows(const std::vector<std::size_t>& idx) const {
    const std::size_t d = mean.dim(1);
    GaussianPrior out{Tensor({idx.size(), d}), Tensor({idx.size(), d})};
    for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < d; ++j) {
            out.mean.at(r, j) = mean.at(idx[r], j);
            out.var.at(r, j) = var.at(idx[r], j);
        }
    return out;
}

void GaussianPrior::validate() const {
    require_same_shape(mean, var, "GaussianPrior");
    for (double v : var.values())
        if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument("GaussianPrior: variances must be positive");
}

ParamSet init_params(const Architecture& arch, const std::vector<int>& levels, Rng& rng) {
    arch.validate();
    ParamSet p;
    std::size_t in_c = arch.channels;
    for (std::size_t i = 0; i < arch.stages.size(); ++i) {
        const auto& s = arch.stages[i];
        const std::size_t k2 = s.kernel * s.kernel;
        p.add(stage_name("enc.conv", i) + ".w", glorot({s.filters, in_c, s.kernel, s.kernel}, in_c * k2, s.filters * k2, rng));
        p.add(stage_name("enc.conv", i) + ".b", Tensor({s.filters}));
        in_c = s.filters;
    }
    std::size_t width = arch.compressed_size();
    for (std::size_t j = 0; j < arch.hidden.size(); ++j) {
        p.add(stage_name("enc.fc", j) + ".w", glorot({width, arch.hidden[j]}, width, arch.hidden[j], rng));
        p.add(stage_name("enc.fc", j) + ".b", Tensor({arch.hidden[j]}));
        width = arch.hidden[j];
    }
    const std::size_t d0 = arch.latent_dim;
    p.add("enc.mu.w", glorot({width, d0}, width, d0, rng));
    p.add("enc.mu.b", Tensor({d0}));
    p.add("enc.logvar.w", glorot({width, d0}, width, d0, rng));
    p.add("enc.logvar.b", Tensor({d0}));

    // Decoder mirrors the encoder: D_0 -> hidden (reversed) -> compressed map.
    std::vector<std::size_t> widths{d0};
    for (std::size_t j = arch.hidden.size(); j-- > 0;) widths.push_back(arch.hidden[j]);
    widths.push_back(arch.compressed_size());
    for (std::size_t j = 0; j + 1 < widths.size(); ++j) {
        p.add(stage_name("dec.fc", j) + ".w", glorot({widths[j], widths[j + 1]}, widths[j], widths[j + 1], rng));
        p.add(stage_name("dec.fc", j) + ".b", Tensor({widths[j + 1]}));
    }
    for (std::size_t i = arch.stages.size(); i-- > 0;) {
        const auto& s = arch.stages[i];
        const std::size_t out_c = i == 0 ? arch.channels : arch.stages[i - 1].filters;
        const std::size_t k2 = s.kernel * s.kernel;
        p.add(stage_name("dec.conv", i) + ".w", glorot({out_c, s.filters, s.kernel, s.kernel}, s.filters * k2, out_c * k2, rng));
        p.add(stage_name("dec.conv", i) + ".b", Tensor({out_c}));
    }
    const std::size_t lw = level_width(levels);
    p.add("cls.w", glorot({d0, lw}, d0, lw, rng));
    p.add("cls.b", Tensor({lw}));
    return p;
}

EncoderOut encode(Tape& t, Slot x, const BoundParams& p, const Architecture& arch) {
    const Tensor& xv = t.value(x);
    if (xv.rank() != 4 || xv.dim(1) != arch.channels || xv.dim(2) != arch.height || xv.dim(3) != arch.width)
        throw std::invalid_argument("vcae::encode: input " + shape_str(xv.shape()) + " does not match architecture [N," +
                                    std::to_string(arch.channels) + "," + std::to_string(arch.height) + "," +
                                    std::to_string(arch.width) + "]");
    const std::size_t n = xv.dim(0);
    Slot h = x;
    for (std::size_t i = 0; i < arch.stages.size(); ++i) {
        const auto& s = arch.stages[i];
        h = ops::conv2d(t, h, p[stage_name("enc.conv", i) + ".w"], p[stage_name("enc.conv", i) + ".b"], 1, s.kernel / 2);
        h = ops::relu(t, h);
        if (s.pool) h = ops::max_pool2d(t, h, 2);
    }
    h = ops::reshape(t, h, {n, arch.compressed_size()});
    for (std::size_t j = 0; j < arch.hidden.size(); ++j)
        h = ops::relu(t, ops::dense(t, h, p[stage_name("enc.fc", j) + ".w"], p[stage_name("enc.fc", j) + ".b"]));
    return {ops::dense(t, h, p["enc.mu.w"], p["enc.mu.b"]), ops::dense(t, h, p["enc.logvar.w"], p["enc.logvar.b"])};
}

Slot decode(Tape& t, Slot z0, const BoundParams& p, const Architecture& arch) {
    const Tensor& zv = t.value(z0);
    if (zv.rank() != 2 || zv.dim(1) != arch.latent_dim)
        throw std::invalid_argument("vcae::decode: latent " + shape_str(zv.shape()) + " does not have width " +
                                    std::to_string(arch.latent_dim));
    const std::size_t n = zv.dim(0);
    Slot h = z0;
    for (std::size_t j = 0; j <= arch.hidden.size(); ++j)
        h = ops::relu(t, ops::dense(t, h, p[stage_name("dec.fc", j) + ".w"], p[stage_name("dec.fc", j) + ".b"]));
    const auto cs = arch.compressed_shape();
    h = ops::reshape(t, h, {n, cs[0], cs[1], cs[2]});
    for (std::size_t i = arch.stages.size(); i-- > 0;) {
        const auto& s = arch.stages[i];
        if (s.pool) h = ops::upsample2x(t, h);
        h = ops::conv2d(t, h, p[stage_name("dec.conv", i) + ".w"], p[stage_name("dec.conv", i) + ".b"], 1, s.kernel / 2);
        if (i != 0) h = ops::relu(t, h);
    }
    return h;
}

Slot classify_head(Tape& t, Slot z0, const BoundParams& p) { return ops::dense(t, z0, p["cls.w"], p["cls.b"]); }

std::pair<Tensor, Tensor> encode(const Tensor& x, const ParamSet& params, const Architecture& arch) {
    Tape t;
    const BoundParams p(t, params, false);
    const auto e = encode(t, t.constant(x), p, arch);
    return {t.value(e.mu), t.value(e.log_var)};
}

Tensor decode(const Tensor& z0, const ParamSet& params, const Architecture& arch) {
    Tape t;
    const BoundParams p(t, params, false);
    return t.value(decode(t, t.constant(z0), p, arch));
}

Tensor classify_head(const Tensor& z0, const ParamSet& params, const std::vector<int>& levels) {
    Tape t;
    const BoundParams p(t, params, false);
    Tensor logits = t.value(classify_head(t, t.constant(z0), p));
    const std::size_t n = logits.dim(0);
    if (logits.dim(1) != level_width(levels)) throw std::invalid_argument("classify_head: level counts do not match head");
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t off = 0;
        for (int lq : levels) {
            double mx = logits.at(i, off);
            for (int s = 1; s < lq; ++s) mx = std::max(mx, logits.at(i, off + s));
            double den = 0.0;
            for (int s = 0; s < lq; ++s) den += std::exp(logits.at(i, off + s) - mx);
            const double lse = mx + std::log(den);
            for (int s = 0; s < lq; ++s) logits.at(i, off + s) -= lse;
            off += static_cast<std::size_t>(lq);
        }
    }
    return logits;
}

double kl_diag_gauss(const Tensor& mu, const Tensor& log_var, const GaussianPrior& prior) {
    Tape t;
    return t.value(ops::kl_diag_gauss(t, t.constant(mu), t.constant(log_var), prior.mean, prior.var))[0];
}

double recon_loglik(const Tensor& x, const Tensor& x_hat, double sigma_x) {
    Tape t;
    return t.value(ops::gaussian_loglik(t, t.constant(x), t.constant(x_hat), sigma_x))[0];
}

double class_loglik(const Tensor& log_probs, const LabelMatrix& y, const std::vector<int>& levels) {
    validate_labels(y, levels);
    if (log_probs.rank() != 2 || log_probs.dim(0) != y.rows || log_probs.dim(1) != level_width(levels))
        throw std::invalid_argument("class_loglik: log-probabilities do not match labels");
    double ll = 0.0;
    for (std::size_t i = 0; i < y.rows; ++i) {
        std::size_t off = 0;
        for (std::size_t q = 0; q < y.cols; ++q) {
            ll += log_probs.at(i, off + static_cast<std::size_t>(y.at(i, q) - 1));
            off += static_cast<std::size_t>(levels[q]);
        }
    }
    return ll;
}

Slot objective_on_tape(Tape& t, const BoundParams& p, const Tensor& x, const LabelMatrix& y,
                       const std::vector<int>& levels, const Architecture& arch, const GaussianPrior& prior,
                       const Tensor& eps, const ObjectiveOptions& opt, Terms& terms) {
    if (!(opt.alpha >= 0.0 && opt.alpha <= 1.0)) throw std::invalid_argument("vcae objective: alpha must lie in [0, 1]");
    if (y.rows != x.dim(0)) throw std::invalid_argument("vcae objective: label rows do not match batch");
    const Slot xs = t.constant(x);
    const auto enc = encode(t, xs, p, arch);
    const Slot z = ops::reparam_sample(t, enc.mu, enc.log_var, eps);
    const Slot xh = decode(t, z, p, arch);
    const Slot l_kl = ops::scale(t, ops::kl_diag_gauss(t, enc.mu, enc.log_var, prior.mean, prior.var), -1.0);
    const Slot l_r = ops::gaussian_loglik(t, xs, xh, opt.sigma_x);
    const Slot l_p = ops::categorical_loglik(t, classify_head(t, z, p), y, levels);
    const Slot parts[] = {l_kl, l_r, l_p};
    const double weights[] = {opt.alpha, 1.0, 1.0 - opt.alpha};
    const Slot total = ops::weighted_sum(t, parts, weights);
    terms.kl = t.value(l_kl)[0];
    terms.recon = t.value(l_r)[0];
    terms.cls = t.value(l_p)[0];
    terms.total = t.value(total)[0];
    return total;
}

ObjectiveResult objective(const Tensor& x, const LabelMatrix& y, const std::vector<int>& levels,
                          const ParamSet& params, const Architecture& arch, const GaussianPrior& prior,
                          const Tensor& eps, const ObjectiveOptions& opt, bool with_grads) {
    Tape t;
    const BoundParams p(t, params, with_grads);
    ObjectiveResult r;
    const Slot total = objective_on_tape(t, p, x, y, levels, arch, prior, eps, opt, r.terms);
    if (with_grads) {
        t.backward(total);
        r.grads = p.gradients(t);
    }
    return r;
}

}  // namespace deepcoder::vcae
