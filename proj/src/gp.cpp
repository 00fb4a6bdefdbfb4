#include "deepcoder/gp.hpp"

#include <cmath>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "deepcoder/errors.hpp"
#include "deepcoder/kernels.hpp"
#include "deepcoder/special.hpp"

namespace deepcoder::gp {

namespace {

constexpr double kJitterLadder[] = {1e-10, 1e-6, 1e-4};

void check_points(const Tensor& a, const Tensor& b, const char* what) {
    if (a.rank() != 2 || b.rank() != 2)
        throw std::invalid_argument(std::string(what) + ": point sets must be 2-D");
    if (a.dim(1) != b.dim(1))
        throw std::invalid_argument(std::string(what) + ": point dimension mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
}

Eigen::MatrixXd rhs_matrix(const Tensor& rhs) {
    if (rhs.rank() == 1) return Eigen::Map<const Eigen::VectorXd>(rhs.data(), static_cast<long>(rhs.size()));
    if (rhs.rank() == 2) return as_matrix(rhs);
    throw std::invalid_argument("chol_solve: right-hand side must be 1-D or 2-D");
}

}  // namespace

RbfArdKernel RbfArdKernel::make(std::size_t dim, double sf2, double ell) {
    if (!(sf2 > 0.0) || !(ell > 0.0)) throw std::invalid_argument("RbfArdKernel: sf2 and ell must be positive");
    RbfArdKernel k;
    k.log_sf2 = std::log(sf2);
    k.log_ell.assign(dim, std::log(ell));
    return k;
}

double RbfArdKernel::sf2() const { return std::exp(log_sf2); }

std::vector<double> RbfArdKernel::inv_ell2() const {
    std::vector<double> out(log_ell.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(-2.0 * log_ell[i]);
    return out;
}

std::vector<double> RbfArdKernel::relevance() const {
    std::vector<double> out(log_ell.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(-log_ell[i]);
    return out;
}

NoiseModel NoiseModel::make(double noise_r, double noise_v) {
    if (!(noise_r > 0.0) || !(noise_v > 0.0)) throw std::invalid_argument("NoiseModel: variances must be positive");
    return NoiseModel{std::log(noise_r), std::log(noise_v)};
}

double NoiseModel::noise_r() const { return std::exp(log_noise_r); }
double NoiseModel::noise_v() const { return std::exp(log_noise_v); }

Eigen::Map<const RowMatrix> as_matrix(const Tensor& t) {
    if (t.rank() != 2) throw std::invalid_argument("as_matrix: expected 2-D tensor, got " + shape_str(t.shape()));
    return {t.data(), static_cast<long>(t.dim(0)), static_cast<long>(t.dim(1))};
}

Tensor to_tensor(const Eigen::MatrixXd& m) {
    Tensor out({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
    Eigen::Map<RowMatrix>(out.data(), m.rows(), m.cols()) = m;
    return out;
}

Tensor kernel_matrix(const Tensor& a, const Tensor& b, const RbfArdKernel& kernel) {
    check_points(a, b, "kernel_matrix");
    if (a.dim(1) != kernel.dim())
        throw std::invalid_argument("kernel_matrix: kernel has " + std::to_string(kernel.dim()) +
                                    " lengthscales for " + std::to_string(a.dim(1)) + "-D points");
    return kernels::rbf_matrix(a, b, kernel.sf2(), kernel.inv_ell2());
}

CholFactor CholFactor::factorize(const Tensor& k, double noise) {
    if (k.rank() != 2 || k.dim(0) != k.dim(1))
        throw std::invalid_argument("CholFactor: expected a square matrix, got " + shape_str(k.shape()));
    const Eigen::MatrixXd base = as_matrix(k);
    const long n = base.rows();
    double min_diag = base.diagonal().minCoeff();
    for (double jitter : kJitterLadder) {
        Eigen::MatrixXd a = base;
        a.diagonal().array() += noise + jitter;
        Eigen::LLT<Eigen::MatrixXd> llt(a);
        if (llt.info() != Eigen::Success) continue;
        CholFactor f;
        f.l_ = llt.matrixL();
        if (!f.l_.allFinite()) continue;
        f.jitter_ = jitter;
        return f;
    }
    std::ostringstream os;
    os << "Cholesky factorization failed for " << n << "x" << n << " matrix (noise " << noise
       << ", min diagonal " << min_diag << ") after jitter up to " << kJitterLadder[2];
    throw NumericalError(os.str());
}

double CholFactor::log_det() const { return 2.0 * l_.diagonal().array().log().sum(); }

Eigen::MatrixXd CholFactor::solve(const Eigen::MatrixXd& rhs) const {
    if (rhs.rows() != l_.rows()) throw std::invalid_argument("CholFactor::solve: row mismatch");
    Eigen::MatrixXd x = l_.triangularView<Eigen::Lower>().solve(rhs);
    l_.transpose().triangularView<Eigen::Upper>().solveInPlace(x);
    return x;
}

Eigen::MatrixXd CholFactor::inverse() const {
    return solve(Eigen::MatrixXd::Identity(l_.rows(), l_.rows()));
}

Tensor chol_solve(const CholFactor& factor, const Tensor& rhs) {
    const Eigen::MatrixXd x = factor.solve(rhs_matrix(rhs));
    if (rhs.rank() == 1) return Tensor(rhs.shape(), std::vector<double>(x.data(), x.data() + x.size()));
    return to_tensor(x);
}

Prediction gp_predict(const Tensor& train_in, const Tensor& train_out, const Tensor& test_in,
                      const RbfArdKernel& kernel, double noise) {
    check_points(train_in, test_in, "gp_predict");
    if (train_out.rank() != 2 || train_out.dim(0) != train_in.dim(0))
        throw std::invalid_argument("gp_predict: targets " + shape_str(train_out.shape()) + " do not match inputs " +
                                    shape_str(train_in.shape()));
    const CholFactor f = CholFactor::factorize(kernel_matrix(train_in, train_in, kernel), noise);
    const Eigen::MatrixXd ks = as_matrix(kernel_matrix(train_in, test_in, kernel));  // [n, m]
    const Eigen::MatrixXd alpha = f.solve(as_matrix(train_out));
    const Eigen::MatrixXd v = f.lower().triangularView<Eigen::Lower>().solve(ks);  // L^-1 k*
    Prediction p;
    p.mean = to_tensor(ks.transpose() * alpha);
    p.var = Tensor({test_in.dim(0)});
    const double sf2 = kernel.sf2();
    for (long j = 0; j < v.cols(); ++j) {
        const double var = sf2 - v.col(j).squaredNorm() + noise;
        p.var[static_cast<std::size_t>(j)] = std::max(var, noise);
    }
    return p;
}

LooResult loo_posterior(const CholFactor& factor, const Tensor& m) {
    if (m.rank() != 2 || m.dim(0) != factor.size())
        throw std::invalid_argument("loo_posterior: means " + shape_str(m.shape()) + " do not match factor of size " +
                                    std::to_string(factor.size()));
    const Eigen::MatrixXd p = factor.inverse();
    const Eigen::MatrixXd a = p * as_matrix(m);
    LooResult r{Tensor(m.shape()), Tensor({m.dim(0)})};
    for (std::size_t i = 0; i < m.dim(0); ++i) {
        const double pii = p(static_cast<long>(i), static_cast<long>(i));
        if (!std::isfinite(pii) || !(pii > 0.0))
            throw NumericalError("loo_posterior: non-finite inverse diagonal at point " + std::to_string(i));
        for (std::size_t q = 0; q < m.dim(1); ++q)
            r.mean.at(i, q) = m.at(i, q) - a(static_cast<long>(i), static_cast<long>(q)) / pii;
        r.var[i] = 1.0 / pii;
    }
    return r;
}

Slot rbf_kernel(Tape& t, Slot a, Slot b, Slot log_sf2, Slot log_ell) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    check_points(av, bv, "rbf_kernel");
    const std::size_t d = av.dim(1);
    if (t.value(log_sf2).size() != 1 || t.value(log_ell).size() != d)
        throw std::invalid_argument("rbf_kernel: hyperparameter shapes do not match " + std::to_string(d) + "-D points");
    RbfArdKernel kern;
    kern.log_sf2 = t.value(log_sf2)[0];
    kern.log_ell.assign(t.value(log_ell).values().begin(), t.value(log_ell).values().end());
    const std::vector<double> inv = kern.inv_ell2();
    Tensor k = kernels::rbf_matrix(av, bv, kern.sf2(), inv);
    const Slot out{t.size()};
    return t.record(std::move(k), {a, b, log_sf2, log_ell}, [=](Tape& tp, const Tensor& gout) {
        const auto A = as_matrix(tp.value(a));
        const auto B = as_matrix(tp.value(b));
        const auto K = as_matrix(tp.value(out));
        const auto G = as_matrix(gout);
        const Eigen::MatrixXd e = G.cwiseProduct(K);
        const Eigen::VectorXd r = e.rowwise().sum();
        const Eigen::VectorXd c = e.colwise().sum().transpose();
        const Eigen::Map<const Eigen::RowVectorXd> invv(inv.data(), static_cast<long>(d));
        if (tp.requires_grad(log_sf2)) tp.accumulate(log_sf2, Tensor::scalar(e.sum()));
        const Eigen::MatrixXd eb = e * B;              // [n, d]
        const Eigen::MatrixXd eta = e.transpose() * A;  // [m, d]
        if (tp.requires_grad(a)) {
            Eigen::MatrixXd ga = -(A.array().colwise() * r.array() - eb.array()).matrix();
            ga = ga.array().rowwise() * invv.array();
            tp.accumulate(a, to_tensor(ga));
        }
        if (tp.requires_grad(b)) {
            Eigen::MatrixXd gb = (eta.array() - B.array().colwise() * c.array()).matrix();
            gb = gb.array().rowwise() * invv.array();
            tp.accumulate(b, to_tensor(gb));
        }
        if (tp.requires_grad(log_ell)) {
            Tensor gl({d});
            for (std::size_t t2 = 0; t2 < d; ++t2) {
                const long col = static_cast<long>(t2);
                const double s = (A.col(col).array().square() * r.array()).sum() -
                                 2.0 * (A.col(col).array() * eb.col(col).array()).sum() +
                                 (B.col(col).array().square() * c.array()).sum();
                gl[t2] = inv[t2] * s;
            }
            tp.accumulate(log_ell, std::move(gl));
        }
    });
}

Slot add_noise(Tape& t, Slot k, Slot log_noise) {
    const Tensor& kv = t.value(k);
    if (kv.rank() != 2 || kv.dim(0) != kv.dim(1)) throw std::invalid_argument("add_noise: expected square matrix");
    if (t.value(log_noise).size() != 1) throw std::invalid_argument("add_noise: noise must be a scalar");
    const double noise = std::exp(t.value(log_noise)[0]);
    Tensor y = kv;
    const std::size_t n = kv.dim(0);
    for (std::size_t i = 0; i < n; ++i) y.at(i, i) += noise;
    return t.record(std::move(y), {k, log_noise}, [=](Tape& tp, const Tensor& gout) {
        tp.accumulate(k, gout);
        if (tp.requires_grad(log_noise)) {
            double tr = 0.0;
            for (std::size_t i = 0; i < n; ++i) tr += gout.at(i, i);
            tp.accumulate(log_noise, Tensor::scalar(noise * tr));
        }
    });
}

Slot mvn_logdensity(Tape& t, Slot k, Slot y) {
    const Tensor& kv = t.value(k);
    const Tensor& yv = t.value(y);
    if (yv.rank() != 2 || yv.dim(0) != kv.dim(0))
        throw std::invalid_argument("mvn_logdensity: targets " + shape_str(yv.shape()) + " do not match covariance " +
                                    shape_str(kv.shape()));
    const CholFactor f = CholFactor::factorize(kv);
    const auto Y = as_matrix(yv);
    Eigen::MatrixXd alpha = f.solve(Y);
    const double n = static_cast<double>(yv.dim(0)), cols = static_cast<double>(yv.dim(1));
    const double ll = -0.5 * Y.cwiseProduct(alpha).sum() - 0.5 * cols * f.log_det() - 0.5 * n * cols * kLog2Pi;
    return t.record(Tensor::scalar(ll), {k, y}, [=, alpha = std::move(alpha)](Tape& tp, const Tensor& gout) {
        const double g = gout[0];
        if (tp.requires_grad(k)) {
            Eigen::MatrixXd gk = alpha * alpha.transpose() - cols * f.inverse();
            gk *= 0.5 * g;
            tp.accumulate(k, to_tensor(gk));
        }
        if (tp.requires_grad(y)) tp.accumulate(y, to_tensor(-g * alpha));
    });
}

namespace {

using SharedInverse = std::shared_ptr<const Eigen::MatrixXd>;

SharedInverse checked_inverse(const Tensor& k, const char* what) {
    auto p = std::make_shared<const Eigen::MatrixXd>(CholFactor::factorize(k).inverse());
    for (long i = 0; i < p->rows(); ++i) {
        const double pii = (*p)(i, i);
        if (!std::isfinite(pii) || !(pii > 0.0))
            throw NumericalError(std::string(what) + ": non-finite inverse diagonal at point " + std::to_string(i));
    }
    return p;
}

Slot loo_mean_with(Tape& t, Slot k, Slot m, const SharedInverse& inv) {
    const Eigen::MatrixXd& p = *inv;
    const Tensor& mv = t.value(m);
    if (mv.rank() != 2 || mv.dim(0) != static_cast<std::size_t>(p.rows()))
        throw std::invalid_argument("loo_mean: means " + shape_str(mv.shape()) + " do not match kernel of size " +
                                    std::to_string(p.rows()));
    auto a = std::make_shared<const Eigen::MatrixXd>(p * as_matrix(mv));
    Tensor mean(mv.shape());
    for (std::size_t i = 0; i < mv.dim(0); ++i)
        for (std::size_t q = 0; q < mv.dim(1); ++q)
            mean.at(i, q) = mv.at(i, q) - (*a)(static_cast<long>(i), static_cast<long>(q)) /
                                              p(static_cast<long>(i), static_cast<long>(i));
    return t.record(std::move(mean), {k, m}, [=](Tape& tp, const Tensor& gout) {
        const Eigen::MatrixXd& pm = *inv;
        const auto G = as_matrix(gout);
        const Eigen::VectorXd pd = pm.diagonal();
        const Eigen::MatrixXd bm = -(G.array().colwise() / pd.array()).matrix();  // dL/dA
        const Eigen::MatrixXd pbm = pm * bm;
        if (tp.requires_grad(m)) tp.accumulate(m, to_tensor(G + pbm));
        if (tp.requires_grad(k)) {
            // P (bm M^T + diag(d)) P with P M = a.
            const Eigen::VectorXd d = (G.array() * a->array()).rowwise().sum() / pd.array().square();
            Eigen::MatrixXd gk = pbm * a->transpose();
            gk.noalias() += pm * (d.asDiagonal() * pm);
            tp.accumulate(k, to_tensor(-gk));
        }
    });
}

Slot loo_var_with(Tape& t, Slot k, const SharedInverse& inv) {
    const std::size_t n = static_cast<std::size_t>(inv->rows());
    Tensor v({n});
    for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 / (*inv)(static_cast<long>(i), static_cast<long>(i));
    return t.record(std::move(v), {k}, [=](Tape& tp, const Tensor& gout) {
        // dL/dK = sum_i g_i / p_ii^2 * P e_i e_i^T P
        const Eigen::MatrixXd& p = *inv;
        Eigen::VectorXd s(static_cast<long>(n));
        for (std::size_t i = 0; i < n; ++i) {
            const double pii = p(static_cast<long>(i), static_cast<long>(i));
            s[static_cast<long>(i)] = gout[i] / (pii * pii);
        }
        tp.accumulate(k, to_tensor(p * (s.asDiagonal() * p)));
    });
}

}  // namespace

Slot loo_mean(Tape& t, Slot k, Slot m) { return loo_mean_with(t, k, m, checked_inverse(t.value(k), "loo_mean")); }

Slot loo_var(Tape& t, Slot k) { return loo_var_with(t, k, checked_inverse(t.value(k), "loo_var")); }

LooSlots loo(Tape& t, Slot k, Slot m) {
    const SharedInverse inv = checked_inverse(t.value(k), "loo");
    return {loo_mean_with(t, k, m, inv), loo_var_with(t, k, inv)};
}

}  // namespace deepcoder::gp
