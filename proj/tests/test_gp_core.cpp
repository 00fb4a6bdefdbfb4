#include <doctest.h>

#include <chrono>
#include <cmath>
#include <numbers>

#include "deepcoder/errors.hpp"
#include "deepcoder/gp.hpp"
#include "deepcoder/ops.hpp"
#include "support.hpp"

using namespace deepcoder;
using deepcoder::test::fd_check;
using deepcoder::test::max_abs_diff;
using deepcoder::test::random_normal;
using deepcoder::test::random_uniform;

namespace {

gp::RbfArdKernel random_kernel(std::size_t d, Rng& rng) {
    gp::RbfArdKernel k = gp::RbfArdKernel::make(d, 0.5 + rng.uniform(), 1.0);
    for (double& l : k.log_ell) l = std::log(0.5 + 1.5 * rng.uniform());
    return k;
}

double kernel_oracle(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j, const gp::RbfArdKernel& k) {
    double r = 0.0;
    for (std::size_t d = 0; d < a.dim(1); ++d) {
        const double ell = std::exp(k.log_ell[d]);
        r += (a.at(i, d) - b.at(j, d)) * (a.at(i, d) - b.at(j, d)) / (ell * ell);
    }
    return std::exp(k.log_sf2) * std::exp(-0.5 * r);
}

Eigen::MatrixXd dense(const Tensor& t) { return gp::as_matrix(t); }

Eigen::MatrixXd without(const Eigen::MatrixXd& m, long skip_row, long skip_col) {
    const long r = m.rows() - (skip_row >= 0), c = m.cols() - (skip_col >= 0);
    Eigen::MatrixXd out(r, c);
    for (long i = 0, oi = 0; i < m.rows(); ++i) {
        if (i == skip_row) continue;
        for (long j = 0, oj = 0; j < m.cols(); ++j) {
            if (j == skip_col) continue;
            out(oi, oj++) = m(i, j);
        }
        ++oi;
    }
    return out;
}

}  // namespace

TEST_SUITE("kernel_matrix") {
    TEST_CASE("single point gives the signal variance") {
        const auto k = gp::RbfArdKernel::make(3, 1.7, 0.4);
        const Tensor a = Tensor::from({0.3, -1.0, 2.0}, {1, 3});
        const Tensor m = gp::kernel_matrix(a, a, k);
        REQUIRE(m.shape() == Shape{1, 1});
        CHECK(m[0] == doctest::Approx(1.7).epsilon(1e-15));
    }

    TEST_CASE("huge lengthscale flattens the kernel") {
        Rng rng(1);
        const auto k = gp::RbfArdKernel::make(2, 2.0, 1e8);
        const Tensor m = gp::kernel_matrix(random_normal({4, 2}, rng), random_normal({3, 2}, rng), k);
        for (double v : m.values()) CHECK(std::abs(v - 2.0) < 1e-12);
    }

    TEST_CASE("random case matches scalar loop") {
        Rng rng(2);
        const auto k = random_kernel(3, rng);
        const Tensor a = random_normal({4, 3}, rng), b = random_normal({5, 3}, rng);
        const Tensor m = gp::kernel_matrix(a, b, k);
        double worst = 0.0;
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 5; ++j) worst = std::max(worst, std::abs(m.at(i, j) - kernel_oracle(a, i, b, j, k)));
        CHECK(worst < 1e-12);
    }

    TEST_CASE("square kernel matrices are symmetric with exact diagonal") {
        Rng rng(3);
        for (int trial = 0; trial < 20; ++trial) {
            const auto k = random_kernel(4, rng);
            const Tensor a = random_normal({9, 4}, rng);
            const Tensor m = gp::kernel_matrix(a, a, k);
            for (std::size_t i = 0; i < 9; ++i) {
                CHECK(m.at(i, i) == k.sf2());
                for (std::size_t j = 0; j < 9; ++j) CHECK(std::abs(m.at(i, j) - m.at(j, i)) <= 1e-12);
            }
        }
    }

    TEST_CASE("dimension mismatch rejected") {
        const auto k = gp::RbfArdKernel::make(2);
        CHECK_THROWS_AS(gp::kernel_matrix(Tensor({2, 2}), Tensor({2, 3}), k), std::invalid_argument);
        CHECK_THROWS_AS(gp::kernel_matrix(Tensor({2, 3}), Tensor({2, 3}), k), std::invalid_argument);
    }

    TEST_CASE("relevance is the inverse lengthscale") {
        auto k = gp::RbfArdKernel::make(2, 1.0, 1.0);
        k.log_ell = {std::log(0.5), std::log(4.0)};
        CHECK(k.relevance()[0] == doctest::Approx(2.0));
        CHECK(k.relevance()[1] == doctest::Approx(0.25));
    }
}

TEST_SUITE("CholFactor") {
    TEST_CASE("factor reconstructs the jittered matrix") {
        Rng rng(4);
        for (int trial = 0; trial < 50; ++trial) {
            const std::size_t n = 2 + rng.uniform_index(15);
            const auto k = random_kernel(3, rng);
            const Tensor pts = random_normal({n, 3}, rng);
            const Tensor kk = gp::kernel_matrix(pts, pts, k);
            const double noise = 0.01 + rng.uniform();
            const auto f = gp::CholFactor::factorize(kk, noise);
            Eigen::MatrixXd a = dense(kk);
            a.diagonal().array() += noise + f.jitter();
            const Eigen::MatrixXd rec = f.lower() * f.lower().transpose();
            CHECK((rec - a).norm() / a.norm() < 1e-8);
        }
    }

    TEST_CASE("jitter climbs the ladder") {
        const Tensor pd = Tensor::from({2, 0, 0, 1}, {2, 2});
        CHECK(gp::CholFactor::factorize(pd).jitter() == 1e-10);
        const Tensor slightly = Tensor::from({1, 0, 0, -1e-5}, {2, 2});
        CHECK(gp::CholFactor::factorize(slightly).jitter() == 1e-4);
        const Tensor broken = Tensor::from({1, 0, 0, -1}, {2, 2});
        CHECK_THROWS_AS(gp::CholFactor::factorize(broken), NumericalError);
    }

    TEST_CASE("log determinant") {
        const auto f = gp::CholFactor::factorize(Tensor::from({4, 0, 0, 9}, {2, 2}));
        CHECK(f.log_det() == doctest::Approx(std::log(36.0)).epsilon(1e-9));
    }
}

TEST_SUITE("chol_solve") {
    TEST_CASE("identity leaves rhs unchanged") {
        Rng rng(5);
        Tensor eye({4, 4});
        for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
        const Tensor rhs = random_normal({4, 2}, rng);
        CHECK(max_abs_diff(gp::chol_solve(gp::CholFactor::factorize(eye), rhs), rhs) < 1e-8);
    }

    TEST_CASE("diagonal two halves the rhs") {
        Rng rng(6);
        const Tensor rhs = random_normal({3}, rng);
        const Tensor x = gp::chol_solve(gp::CholFactor::factorize(Tensor({3, 3}), 2.0), rhs);
        REQUIRE(x.shape() == Shape{3});
        for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(x[i] - rhs[i] / 2.0) < 1e-9);
    }

    TEST_CASE("random SPD system matches the dense inverse") {
        Rng rng(7);
        for (int trial = 0; trial < 20; ++trial) {
            const Tensor g = random_normal({6, 6}, rng);
            Eigen::MatrixXd a = dense(g) * dense(g).transpose();
            a.diagonal().array() += 0.5;
            const Tensor at = gp::to_tensor(a);
            const Tensor rhs = random_normal({6, 3}, rng);
            const double noise = 0.3;
            const auto f = gp::CholFactor::factorize(at, noise);
            Eigen::MatrixXd full = a;
            full.diagonal().array() += noise + f.jitter();
            const Eigen::MatrixXd oracle = full.inverse() * dense(rhs);
            const Tensor x = gp::chol_solve(f, rhs);
            CHECK((dense(x) - oracle).norm() / oracle.norm() < 1e-8);
            CHECK((full * dense(x) - dense(rhs)).norm() / dense(rhs).norm() < 1e-8);
        }
    }
}

TEST_SUITE("gp_predict") {
    TEST_CASE("lone training point is reproduced without noise") {
        const auto k = gp::RbfArdKernel::make(2);
        const Tensor x = Tensor::from({0.5, -0.2}, {1, 2});
        const auto p = gp::gp_predict(x, Tensor::from({1.25, -3.0}, {1, 2}), x, k, 1e-12);
        CHECK(std::abs(p.mean.at(0, 0) - 1.25) < 1e-8);
        CHECK(std::abs(p.mean.at(0, 1) + 3.0) < 1e-8);
    }

    TEST_CASE("far test point reverts to the prior") {
        const auto k = gp::RbfArdKernel::make(1, 1.5, 0.1);
        const auto p = gp::gp_predict(Tensor::from({0.0, 1.0}, {2, 1}), Tensor::from({2.0, -1.0}, {2, 1}),
                                      Tensor::from({50.0}, {1, 1}), k, 0.2);
        CHECK(std::abs(p.mean[0]) < 1e-12);
        CHECK(p.var[0] == doctest::Approx(1.7).epsilon(1e-12));
    }

    TEST_CASE("random case matches the dense formula") {
        Rng rng(8);
        for (int trial = 0; trial < 10; ++trial) {
            const auto k = random_kernel(3, rng);
            const double noise = 0.05 + rng.uniform();
            const Tensor x = random_normal({8, 3}, rng), y = random_normal({8, 2}, rng), xs = random_normal({4, 3}, rng);
            const auto p = gp::gp_predict(x, y, xs, k, noise);
            Eigen::MatrixXd kk = dense(gp::kernel_matrix(x, x, k));
            kk.diagonal().array() += noise + 1e-10;
            const Eigen::MatrixXd ks = dense(gp::kernel_matrix(xs, x, k));
            const Eigen::MatrixXd inv = kk.inverse();
            const Eigen::MatrixXd mean = ks * inv * dense(y);
            CHECK((dense(p.mean) - mean).cwiseAbs().maxCoeff() < 1e-9);
            for (long j = 0; j < 4; ++j) {
                const double var = k.sf2() - (ks.row(j) * inv * ks.row(j).transpose())(0, 0) + noise;
                CHECK(std::abs(p.var[static_cast<std::size_t>(j)] - var) < 1e-9);
                CHECK(p.var[static_cast<std::size_t>(j)] > 0.0);
            }
        }
    }
}

TEST_SUITE("loo_posterior") {
    TEST_CASE("identity matrix gives zero means and unit variance") {
        Rng rng(9);
        const Tensor m = random_normal({5, 2}, rng);
        const auto r = gp::loo_posterior(gp::CholFactor::factorize(Tensor({5, 5}), 1.0), m);
        for (double v : r.mean.values()) CHECK(std::abs(v) < 1e-9);
        for (double v : r.var.values()) CHECK(std::abs(v - 1.0) < 1e-9);
    }

    TEST_CASE("single point variance is the kernel entry") {
        const auto r = gp::loo_posterior(gp::CholFactor::factorize(Tensor::from({1.3}, {1, 1})), Tensor::from({0.7}, {1, 1}));
        CHECK(std::abs(r.var[0] - 1.3) < 1e-9);
        CHECK(std::abs(r.mean[0]) < 1e-9);
    }

    TEST_CASE("matches brute-force leave-one-out regression on 200 instances") {
        const auto start = std::chrono::steady_clock::now();
        Rng rng(10);
        double worst = 0.0;
        for (int trial = 0; trial < 200; ++trial) {
            const std::size_t n = 1 + rng.uniform_index(16), d = 1 + rng.uniform_index(4), q = 1 + rng.uniform_index(3);
            const auto k = random_kernel(d, rng);
            const double noise = 0.01 + rng.uniform();
            const Tensor x = random_normal({n, d}, rng), m = random_normal({n, q}, rng);
            const Tensor kk = gp::kernel_matrix(x, x, k);
            const auto f = gp::CholFactor::factorize(kk, noise);
            const auto r = gp::loo_posterior(f, m);
            Eigen::MatrixXd c = dense(kk);
            c.diagonal().array() += noise + f.jitter();
            const Eigen::MatrixXd mm = dense(m);
            for (long i = 0; i < static_cast<long>(n); ++i) {
                double mean_oracle[3] = {0, 0, 0};
                double var_oracle = c(i, i);
                if (n > 1) {
                    const Eigen::MatrixXd rest = without(c, i, i);
                    const Eigen::RowVectorXd cross = without(c.row(i), -1, i);
                    const Eigen::MatrixXd targets = without(mm, i, -1);
                    const Eigen::MatrixXd w = cross * rest.inverse();
                    for (std::size_t j = 0; j < q; ++j) mean_oracle[j] = (w * targets.col(static_cast<long>(j)))(0, 0);
                    var_oracle -= (w * cross.transpose())(0, 0);
                }
                for (std::size_t j = 0; j < q; ++j)
                    worst = std::max(worst, std::abs(r.mean.at(static_cast<std::size_t>(i), j) - mean_oracle[j]));
                worst = std::max(worst, std::abs(r.var[static_cast<std::size_t>(i)] - var_oracle));
            }
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        CHECK(worst < 1e-8);
        CHECK(secs < 30.0);
    }
}

TEST_SUITE("differentiable gp ops") {
    TEST_CASE("tape values agree with the direct routines") {
        Rng rng(11);
        const auto k = random_kernel(3, rng);
        const Tensor x = random_normal({6, 3}, rng), m = random_normal({6, 2}, rng);
        const double noise = 0.3;
        Tape t;
        const Slot xs = t.constant(x);
        const Slot km = gp::rbf_kernel(t, xs, xs, t.constant(Tensor::scalar(k.log_sf2)),
                                       t.constant(Tensor({3}, k.log_ell)));
        CHECK(max_abs_diff(t.value(km), gp::kernel_matrix(x, x, k)) < 1e-14);
        const Slot kn = gp::add_noise(t, km, t.constant(Tensor::scalar(std::log(noise))));
        const auto loo = gp::loo(t, kn, t.constant(m));
        const auto ref = gp::loo_posterior(gp::CholFactor::factorize(gp::kernel_matrix(x, x, k), noise), m);
        CHECK(max_abs_diff(t.value(loo.mean), ref.mean) < 1e-9);
        CHECK(max_abs_diff(t.value(loo.var), ref.var) < 1e-9);
        CHECK(max_abs_diff(t.value(gp::loo_mean(t, kn, t.constant(m))), ref.mean) < 1e-9);
        CHECK(max_abs_diff(t.value(gp::loo_var(t, kn)), ref.var) < 1e-9);

        // Dense multivariate normal oracle: sum_d log N(m_d | 0, C).
        Eigen::MatrixXd c = dense(gp::kernel_matrix(x, x, k));
        c.diagonal().array() += noise;
        const Eigen::MatrixXd mm = dense(m);
        double oracle = 0.0;
        for (long d = 0; d < 2; ++d)
            oracle += -0.5 * (mm.col(d).transpose() * c.inverse() * mm.col(d))(0, 0) -
                      0.5 * std::log(c.determinant()) - 3.0 * std::log(2.0 * std::numbers::pi);
        CHECK(std::abs(t.value(gp::mvn_logdensity(t, kn, t.constant(m)))[0] - oracle) < 1e-8);
    }

    TEST_CASE("hyperparameter and input gradients match central differences over 100 seeds") {
        double worst = 0.0;
        std::string where;
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            Rng rng(seed);
            const std::size_t n = 2 + rng.uniform_index(7), d = 1 + rng.uniform_index(3), q = 1 + rng.uniform_index(3);
            ParamSet p;
            p.add("x", random_normal({n, d}, rng));
            p.add("log_sf2", Tensor::scalar(0.3 * rng.normal()));
            p.add("log_ell", random_normal({d}, rng, 0.3));
            p.add("log_noise", Tensor::scalar(std::log(0.05 + 0.5 * rng.uniform())));
            p.add("m", random_normal({n, q}, rng));
            const Tensor wm = random_normal({n, q}, rng), wv = random_normal({n}, rng);
            // A scalar touching every op: mvn log-density plus weighted LOO means and variances.
            auto eval = [&](const ParamSet& ps, ParamSet* grads) {
                Tape t;
                const BoundParams b(t, ps, grads != nullptr);
                const Slot km = gp::add_noise(t, gp::rbf_kernel(t, b["x"], b["x"], b["log_sf2"], b["log_ell"]), b["log_noise"]);
                const auto loo = gp::loo(t, km, b["m"]);
                const Slot parts[] = {gp::mvn_logdensity(t, km, b["m"]), ops::sum(t, ops::mul(t, loo.mean, t.constant(wm))),
                                      ops::sum(t, ops::mul(t, loo.var, t.constant(wv))),
                                      ops::sum(t, ops::mul(t, gp::loo_mean(t, km, b["m"]), t.constant(wm))),
                                      ops::sum(t, ops::mul(t, gp::loo_var(t, km), t.constant(wv)))};
                const double w[] = {1.0, 1.0, 1.0, 0.5, 0.5};
                const Slot out = ops::weighted_sum(t, parts, w);
                if (grads) {
                    t.backward(out);
                    *grads = b.gradients(t);
                }
                return t.value(out)[0];
            };
            ParamSet g;
            eval(p, &g);
            const auto r = fd_check(p, g, [&](const ParamSet& ps) { return eval(ps, nullptr); });
            if (r.worst > worst) {
                worst = r.worst;
                where = "seed " + std::to_string(seed) + " " + r.where;
            }
        }
        INFO(where);
        CHECK(worst < 1e-5);
    }

    TEST_CASE("cross kernel gradients reach both point sets") {
        Rng rng(12);
        ParamSet p;
        p.add("a", random_normal({3, 2}, rng));
        p.add("b", random_normal({4, 2}, rng));
        p.add("log_sf2", Tensor::scalar(0.2));
        p.add("log_ell", random_normal({2}, rng, 0.3));
        const Tensor w = random_normal({3, 4}, rng);
        auto eval = [&](const ParamSet& ps, ParamSet* grads) {
            Tape t;
            const BoundParams b(t, ps, grads != nullptr);
            const Slot out = ops::sum(t, ops::mul(t, gp::rbf_kernel(t, b["a"], b["b"], b["log_sf2"], b["log_ell"]), t.constant(w)));
            if (grads) {
                t.backward(out);
                *grads = b.gradients(t);
            }
            return t.value(out)[0];
        };
        ParamSet g;
        eval(p, &g);
        CHECK(fd_check(p, g, [&](const ParamSet& ps) { return eval(ps, nullptr); }).worst < 1e-5);
    }
}
