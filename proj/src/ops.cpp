#include "deepcoder/ops.hpp"

#include <cmath>
#include <stdexcept>

#include "deepcoder/kernels.hpp"
#include "deepcoder/special.hpp"

namespace deepcoder::ops {

namespace {

Tensor map(const Tensor& x, auto&& f) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
    return out;
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
    if (x.rank() != rank)
        throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                    shape_str(x.shape()));
}

}  // namespace

Slot conv2d(Tape& t, Slot input, Slot kernels, Slot bias, std::size_t stride, std::size_t padding) {
    const Tensor& x = t.value(input);
    const Tensor& w = t.value(kernels);
    const Tensor& b = t.value(bias);
    const auto g = kernels::ConvGeometry::make(x.shape(), w.shape(), stride, padding);
    if (b.rank() != 1 || b.dim(0) != g.filters)
        throw std::invalid_argument("conv2d: bias must have shape [" + std::to_string(g.filters) + "]");
    Tensor y = kernels::conv2d_forward(x, w, b, g);
    return t.record(std::move(y), {input, kernels, bias}, [=](Tape& tp, const Tensor& gout) {
        if (tp.requires_grad(input)) tp.accumulate(input, kernels::conv2d_grad_input(gout, tp.value(kernels), g));
        if (tp.requires_grad(kernels) || tp.requires_grad(bias)) {
            Tensor gb;
            Tensor gw = kernels::conv2d_grad_weights(gout, tp.value(input), g, gb);
            tp.accumulate(kernels, std::move(gw));
            tp.accumulate(bias, std::move(gb));
        }
    });
}

Slot max_pool2d(Tape& t, Slot input, std::size_t window) {
    const Tensor& x = t.value(input);
    require_rank(x, 4, "max_pool2d");
    if (window == 0 || x.dim(2) % window || x.dim(3) % window)
        throw std::invalid_argument("max_pool2d: spatial dims " + shape_str(x.shape()) + " not divisible by window " +
                                    std::to_string(window));
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = h / window, ow = w / window;
    Tensor y({n, c, oh, ow});
    std::vector<std::size_t> argmax(y.size());
    for (std::size_t p = 0; p < n * c; ++p) {
        const double* xp = x.data() + p * h * w;
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                std::size_t best = (i * window) * w + j * window;
                for (std::size_t a = 0; a < window; ++a)
                    for (std::size_t b = 0; b < window; ++b) {
                        const std::size_t idx = (i * window + a) * w + j * window + b;
                        if (xp[idx] > xp[best]) best = idx;
                    }
                const std::size_t o = p * oh * ow + i * ow + j;
                y[o] = xp[best];
                argmax[o] = p * h * w + best;
            }
    }
    const Shape in_shape = x.shape();
    return t.record(std::move(y), {input}, [=, argmax = std::move(argmax)](Tape& tp, const Tensor& gout) {
        Tensor gin(in_shape);
        for (std::size_t o = 0; o < gout.size(); ++o) gin[argmax[o]] += gout[o];
        tp.accumulate(input, std::move(gin));
    });
}

Slot upsample2x(Tape& t, Slot input) {
    const Tensor& x = t.value(input);
    require_rank(x, 4, "upsample2x");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor y({n, c, 2 * h, 2 * w});
    for (std::size_t p = 0; p < n * c; ++p)
        for (std::size_t i = 0; i < 2 * h; ++i)
            for (std::size_t j = 0; j < 2 * w; ++j) y[(p * 2 * h + i) * 2 * w + j] = x[(p * h + i / 2) * w + j / 2];
    const Shape in_shape = x.shape();
    return t.record(std::move(y), {input}, [=](Tape& tp, const Tensor& gout) {
        Tensor gin(in_shape);
        for (std::size_t p = 0; p < n * c; ++p)
            for (std::size_t i = 0; i < 2 * h; ++i)
                for (std::size_t j = 0; j < 2 * w; ++j)
                    gin[(p * h + i / 2) * w + j / 2] += gout[(p * 2 * h + i) * 2 * w + j];
        tp.accumulate(input, std::move(gin));
    });
}

Slot dense(Tape& t, Slot input, Slot weight, Slot bias) {
    const Tensor& x = t.value(input);
    const Tensor& w = t.value(weight);
    const Tensor& b = t.value(bias);
    require_rank(x, 2, "dense");
    require_rank(w, 2, "dense");
    if (x.dim(1) != w.dim(0))
        throw std::invalid_argument("dense: input " + shape_str(x.shape()) + " incompatible with weight " +
                                    shape_str(w.shape()));
    if (b.rank() != 1 || b.dim(0) != w.dim(1))
        throw std::invalid_argument("dense: bias must have shape [" + std::to_string(w.dim(1)) + "]");
    Tensor y = kernels::matmul(x, w);
    const std::size_t n = y.dim(0), e = y.dim(1);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < e; ++j) y.at(i, j) += b[j];
    return t.record(std::move(y), {input, weight, bias}, [=](Tape& tp, const Tensor& gout) {
        if (tp.requires_grad(input)) tp.accumulate(input, kernels::matmul_bt(gout, tp.value(weight)));
        if (tp.requires_grad(weight)) tp.accumulate(weight, kernels::matmul_at(tp.value(input), gout));
        if (tp.requires_grad(bias)) {
            Tensor gb({e});
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < e; ++j) gb[j] += gout.at(i, j);
            tp.accumulate(bias, std::move(gb));
        }
    });
}

Slot matmul(Tape& t, Slot a, Slot b) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    require_rank(av, 2, "matmul");
    require_rank(bv, 2, "matmul");
    if (av.dim(1) != bv.dim(0))
        throw std::invalid_argument("matmul: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    return t.record(kernels::matmul(av, bv), {a, b}, [=](Tape& tp, const Tensor& gout) {
        if (tp.requires_grad(a)) tp.accumulate(a, kernels::matmul_bt(gout, tp.value(b)));
        if (tp.requires_grad(b)) tp.accumulate(b, kernels::matmul_at(tp.value(a), gout));
    });
}

Slot relu(Tape& t, Slot x) {
    Tensor y = map(t.value(x), [](double v) { return v > 0.0 ? v : 0.0; });
    return t.record(std::move(y), {x}, [=](Tape& tp, const Tensor& gout) {
        const Tensor& xv = tp.value(x);
        Tensor g(xv.shape());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = xv[i] > 0.0 ? gout[i] : 0.0;
        tp.accumulate(x, std::move(g));
    });
}

Slot exp(Tape& t, Slot x) {
    Tensor y = map(t.value(x), [](double v) { return std::exp(v); });
    const Slot out{t.size()};
    return t.record(std::move(y), {x}, [=](Tape& tp, const Tensor& gout) {
        const Tensor& yv = tp.value(out);
        Tensor g(yv.shape());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = gout[i] * yv[i];
        tp.accumulate(x, std::move(g));
    });
}

Slot log(Tape& t, Slot x) {
    const Tensor& xv = t.value(x);
    for (double v : xv.values())
        if (!(v > 0.0)) throw std::invalid_argument("log: non-positive argument");
    Tensor y = map(xv, [](double v) { return std::log(v); });
    return t.record(std::move(y), {x}, [=](Tape& tp, const Tensor& gout) {
        const Tensor& in = tp.value(x);
        Tensor g(in.shape());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = gout[i] / in[i];
        tp.accumulate(x, std::move(g));
    });
}

Slot square(Tape& t, Slot x) {
    Tensor y = map(t.value(x), [](double v) { return v * v; });
    return t.record(std::move(y), {x}, [=](Tape& tp, const Tensor& gout) {
        const Tensor& in = tp.value(x);
        Tensor g(in.shape());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = 2.0 * in[i] * gout[i];
        tp.accumulate(x, std::move(g));
    });
}

Slot gauss_cdf(Tape& t, Slot x) {
    Tensor y = map(t.value(x), [](double v) { return deepcoder::gauss_cdf(v); });
    return t.record(std::move(y), {x}, [=](Tape& tp, const Tensor& gout) {
        const Tensor& in = tp.value(x);
        Tensor g(in.shape());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = gout[i] * gauss_pdf(in[i]);
        tp.accumulate(x, std::move(g));
    });
}

Slot add(Tape& t, Slot a, Slot b) {
    require_same_shape(t.value(a), t.value(b), "add");
    Tensor y = t.value(a);
    y += t.value(b);
    return t.record(std::move(y), {a, b}, [=](Tape& tp, const Tensor& gout) {
        tp.accumulate(a, gout);
        tp.accumulate(b, gout);
    });
}

Slot sub(Tape& t, Slot a, Slot b) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    require_same_shape(av, bv, "sub");
    Tensor y(av.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] - bv[i];
    return t.record(std::move(y), {a, b}, [=](Tape& tp, const Tensor& gout) {
        tp.accumulate(a, gout);
        if (tp.requires_grad(b)) {
            Tensor g = gout;
            g *= -1.0;
            tp.accumulate(b, std::move(g));
        }
    });
}

Slot mul(Tape& t, Slot a, Slot b) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    require_same_shape(av, bv, "mul");
    Tensor y(av.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
    return t.record(std::move(y), {a, b}, [=](Tape& tp, const Tensor& gout) {
        const Tensor& x = tp.value(a);
        const Tensor& z = tp.value(b);
        if (tp.requires_grad(a)) {
            Tensor g(x.shape());
            for (std::size_t i = 0; i < g.size(); ++i) g[i] = gout[i] * z[i];
            tp.accumulate(a, std::move(g));
        }
        if (tp.requires_grad(b)) {
            Tensor g(x.shape());
            for (std::size_t i = 0; i < g.size(); ++i) g[i] = gout[i] * x[i];
            tp.accumulate(b, std::move(g));
        }
    });
}

Slot scale(Tape& t, Slot a, double s) {
    Tensor y = t.value(a);
    y *= s;
    return t.record(std::move(y), {a}, [=](Tape& tp, const Tensor& gout) {
        Tensor g = gout;
        g *= s;
        tp.accumulate(a, std::move(g));
    });
}

Slot add_col(Tape& t, Slot a, Slot v) {
    const Tensor& av = t.value(a);
    const Tensor& vv = t.value(v);
    require_rank(av, 2, "add_col");
    if (vv.rank() != 1 || vv.dim(0) != av.dim(0))
        throw std::invalid_argument("add_col: vector " + shape_str(vv.shape()) + " does not match rows of " +
                                    shape_str(av.shape()));
    const std::size_t n = av.dim(0), d = av.dim(1);
    Tensor y = av;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) y.at(i, j) += vv[i];
    return t.record(std::move(y), {a, v}, [=](Tape& tp, const Tensor& gout) {
        tp.accumulate(a, gout);
        if (tp.requires_grad(v)) {
            Tensor g({n});
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) g[i] += gout.at(i, j);
            tp.accumulate(v, std::move(g));
        }
    });
}

Slot reshape(Tape& t, Slot x, Shape shape) {
    const Shape in_shape = t.value(x).shape();
    Tensor y = t.value(x).reshaped(std::move(shape));
    return t.record(std::move(y), {x},
                    [=](Tape& tp, const Tensor& gout) { tp.accumulate(x, gout.reshaped(in_shape)); });
}

Slot sum(Tape& t, Slot x) {
    double s = 0.0;
    for (double v : t.value(x).values()) s += v;
    const Shape in_shape = t.value(x).shape();
    return t.record(Tensor::scalar(s), {x},
                    [=](Tape& tp, const Tensor& gout) { tp.accumulate(x, Tensor(in_shape, gout[0])); });
}

Slot weighted_sum(Tape& t, std::span<const Slot> terms, std::span<const double> weights) {
    if (terms.size() != weights.size() || terms.empty())
        throw std::invalid_argument("weighted_sum: need one weight per term");
    std::vector<Slot> used;
    std::vector<double> w;
    for (std::size_t i = 0; i < terms.size(); ++i) {
        if (t.value(terms[i]).size() != 1) throw std::invalid_argument("weighted_sum: terms must be scalars");
        if (weights[i] == 0.0) continue;
        used.push_back(terms[i]);
        w.push_back(weights[i]);
    }
    Slot out = t.constant(Tensor::scalar(0.0));
    // Record one binary node per used term so the tape keeps its fixed-arity records.
    for (std::size_t i = 0; i < used.size(); ++i) {
        const Slot term = used[i];
        const double wi = w[i];
        const Slot prev = out;
        Tensor v = Tensor::scalar(t.value(prev)[0] + wi * t.value(term)[0]);
        out = t.record(std::move(v), {prev, term}, [=](Tape& tp, const Tensor& gout) {
            tp.accumulate(prev, gout);
            tp.accumulate(term, Tensor::scalar(wi * gout[0]));
        });
    }
    return out;
}

Slot reparam_sample(Tape& t, Slot mu, Slot log_var, const Tensor& eps) {
    const Tensor& m = t.value(mu);
    const Tensor& lv = t.value(log_var);
    require_same_shape(m, lv, "reparam_sample");
    require_same_shape(m, eps, "reparam_sample");
    Tensor y(m.shape());
    Tensor sd(m.shape());
    for (std::size_t i = 0; i < y.size(); ++i) {
        sd[i] = std::exp(0.5 * lv[i]);
        y[i] = m[i] + sd[i] * eps[i];
    }
    return t.record(std::move(y), {mu, log_var}, [=, sd = std::move(sd)](Tape& tp, const Tensor& gout) {
        tp.accumulate(mu, gout);
        if (tp.requires_grad(log_var)) {
            Tensor g(gout.shape());
            for (std::size_t i = 0; i < g.size(); ++i) g[i] = gout[i] * 0.5 * sd[i] * eps[i];
            tp.accumulate(log_var, std::move(g));
        }
    });
}

Slot kl_diag_gauss(Tape& t, Slot mu, Slot log_var, const Tensor& prior_mean, const Tensor& prior_var) {
    const Tensor& m = t.value(mu);
    const Tensor& lv = t.value(log_var);
    require_same_shape(m, lv, "kl_diag_gauss");
    require_same_shape(m, prior_mean, "kl_diag_gauss prior mean");
    require_same_shape(m, prior_var, "kl_diag_gauss prior variance");
    double kl = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double vp = prior_var[i];
        if (!(vp > 0.0)) throw std::invalid_argument("kl_diag_gauss: prior variance must be positive");
        // r - log(1 + r) with r = s2 / vp - 1: exactly zero when the variances agree.
        const double r = std::exp(lv[i]) / vp - 1.0;
        const double d = m[i] - prior_mean[i];
        kl += 0.5 * (r - std::log1p(r) + d * d / vp);
    }
    return t.record(Tensor::scalar(kl), {mu, log_var}, [=](Tape& tp, const Tensor& gout) {
        const Tensor& mv = tp.value(mu);
        const Tensor& lvv = tp.value(log_var);
        const double g = gout[0];
        if (tp.requires_grad(mu)) {
            Tensor gm(mv.shape());
            for (std::size_t i = 0; i < gm.size(); ++i) gm[i] = g * (mv[i] - prior_mean[i]) / prior_var[i];
            tp.accumulate(mu, std::move(gm));
        }
        if (tp.requires_grad(log_var)) {
            Tensor gl(mv.shape());
            for (std::size_t i = 0; i < gl.size(); ++i) gl[i] = g * 0.5 * (std::exp(lvv[i]) / prior_var[i] - 1.0);
            tp.accumulate(log_var, std::move(gl));
        }
    });
}

Slot gaussian_loglik(Tape& t, Slot x, Slot x_hat, double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_loglik: sigma must be positive");
    const Tensor& xv = t.value(x);
    const Tensor& xh = t.value(x_hat);
    require_same_shape(xv, xh, "gaussian_loglik");
    const double s2 = sigma * sigma;
    double quad = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) {
        const double r = xv[i] - xh[i];
        quad += r * r;
    }
    const double ll = -0.5 * quad / s2 - static_cast<double>(xv.size()) * (std::log(sigma) + 0.5 * kLog2Pi);
    return t.record(Tensor::scalar(ll), {x, x_hat}, [=](Tape& tp, const Tensor& gout) {
        const Tensor& a = tp.value(x);
        const Tensor& b = tp.value(x_hat);
        Tensor g(a.shape());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = gout[0] * (a[i] - b[i]) / s2;
        if (tp.requires_grad(x_hat)) tp.accumulate(x_hat, g);
        if (tp.requires_grad(x)) {
            g *= -1.0;
            tp.accumulate(x, std::move(g));
        }
    });
}

Slot categorical_loglik(Tape& t, Slot logits, const LabelMatrix& labels, const std::vector<int>& levels) {
    const Tensor& z = t.value(logits);
    require_rank(z, 2, "categorical_loglik");
    validate_labels(labels, levels);
    std::size_t width = 0;
    for (int l : levels) width += static_cast<std::size_t>(l);
    if (z.dim(1) != width || z.dim(0) != labels.rows)
        throw std::invalid_argument("categorical_loglik: logits " + shape_str(z.shape()) + " do not match " +
                                    std::to_string(labels.rows) + " rows with " + std::to_string(width) +
                                    " level slots");
    const std::size_t n = z.dim(0);
    Tensor probs(z.shape());
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t off = 0;
        for (std::size_t q = 0; q < levels.size(); ++q) {
            const auto lq = static_cast<std::size_t>(levels[q]);
            double mx = z.at(i, off);
            for (std::size_t s = 1; s < lq; ++s) mx = std::max(mx, z.at(i, off + s));
            double denom = 0.0;
            for (std::size_t s = 0; s < lq; ++s) denom += std::exp(z.at(i, off + s) - mx);
            const double lse = mx + std::log(denom);
            for (std::size_t s = 0; s < lq; ++s) probs.at(i, off + s) = std::exp(z.at(i, off + s) - lse);
            ll += z.at(i, off + static_cast<std::size_t>(labels.at(i, q) - 1)) - lse;
            off += lq;
        }
    }
    return t.record(Tensor::scalar(ll), {logits}, [=, probs = std::move(probs)](Tape& tp, const Tensor& gout) {
        Tensor g(probs.shape());
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t off = 0;
            for (std::size_t q = 0; q < levels.size(); ++q) {
                const auto lq = static_cast<std::size_t>(levels[q]);
                for (std::size_t s = 0; s < lq; ++s) {
                    const double onehot = static_cast<int>(s) + 1 == labels.at(i, q) ? 1.0 : 0.0;
                    g.at(i, off + s) = gout[0] * (onehot - probs.at(i, off + s));
                }
                off += lq;
            }
        }
        tp.accumulate(logits, std::move(g));
    });
}

}  // namespace deepcoder::ops
