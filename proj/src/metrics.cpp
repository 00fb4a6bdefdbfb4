#include "deepcoder/metrics.hpp"

#include <cmath>
#include <stdexcept>

#include "json.hpp"
#include "deepcoder/errors.hpp"
#include "deepcoder/special.hpp"

namespace deepcoder::metrics {

namespace {

void require_equal(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw std::invalid_argument(std::string(what) + ": length mismatch");
    if (a == 0) throw std::invalid_argument(std::string(what) + ": empty input");
}

std::vector<double> to_double(const std::vector<int>& v) { return {v.begin(), v.end()}; }

}  // namespace

double icc31(const std::vector<double>& pred, const std::vector<double>& truth) {
    if (pred.size() != truth.size()) throw std::invalid_argument("icc31: length mismatch");
    const std::size_t n = pred.size();
    if (n < 2) throw UndefinedMetric("icc31: needs at least 2 targets");
    const double k = 2.0;
    double sum_p = 0.0, sum_t = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sum_p += pred[i];
        sum_t += truth[i];
    }
    const double mean_p = sum_p / n, mean_t = sum_t / n, grand = (sum_p + sum_t) / (k * n);
    double ss_rows = 0.0, ss_err = 0.0, var_p = 0.0, var_t = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double row = 0.5 * (pred[i] + truth[i]);
        ss_rows += k * (row - grand) * (row - grand);
        const double ep = pred[i] - row - mean_p + grand;
        const double et = truth[i] - row - mean_t + grand;
        ss_err += ep * ep + et * et;
        var_p += (pred[i] - mean_p) * (pred[i] - mean_p);
        var_t += (truth[i] - mean_t) * (truth[i] - mean_t);
    }
    if (var_p == 0.0 && var_t == 0.0) throw UndefinedMetric("icc31: both series are constant");
    const double bms = ss_rows / (n - 1.0);
    const double ems = ss_err / ((n - 1.0) * (k - 1.0));
    return (bms - ems) / (bms + (k - 1.0) * ems);
}

double icc31(const std::vector<int>& pred, const std::vector<int>& truth) {
    return icc31(to_double(pred), to_double(truth));
}

double mse(const std::vector<int>& pred, const std::vector<int>& truth) {
    require_equal(pred.size(), truth.size(), "mse");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - truth[i];
        s += d * d;
    }
    return s / static_cast<double>(pred.size());
}

double ordinal_accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
    require_equal(pred.size(), truth.size(), "ordinal_accuracy");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i];
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double nlpd(const Tensor& z, const Tensor& mean, const Tensor& var) {
    require_same_shape(z, mean, "nlpd");
    const bool shared = var.rank() == 1 && z.rank() == 2 && var.dim(0) == z.dim(0);
    if (!shared) require_same_shape(z, var, "nlpd");
    const std::size_t d = z.rank() == 2 ? z.dim(1) : 1;
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double v = shared ? var[i / d] : var[i];
        if (!(v > 0.0)) throw std::invalid_argument("nlpd: variances must be positive");
        const double r = z[i] - mean[i];
        s += 0.5 * (kLog2Pi + std::log(v) + r * r / v);
    }
    return s / static_cast<double>(z.size());
}

MetricReport evaluate(const LabelMatrix& pred, const LabelMatrix& truth) {
    if (pred.rows != truth.rows || pred.cols != truth.cols) throw std::invalid_argument("evaluate: label shapes differ");
    MetricReport r;
    r.samples = truth.rows;
    double icc_sum = 0.0;
    std::size_t icc_count = 0;
    for (std::size_t q = 0; q < truth.cols; ++q) {
        const auto p = pred.column(q), t = truth.column(q);
        OutputScores s;
        try {
            s.icc = icc31(p, t);
            icc_sum += *s.icc;
            ++icc_count;
        } catch (const UndefinedMetric&) {
        }
        s.mse = mse(p, t);
        s.accuracy = ordinal_accuracy(p, t);
        r.avg_mse += s.mse;
        r.avg_accuracy += s.accuracy;
        r.outputs.push_back(s);
    }
    if (icc_count > 0) r.avg_icc = icc_sum / static_cast<double>(icc_count);
    r.avg_mse /= static_cast<double>(truth.cols);
    r.avg_accuracy /= static_cast<double>(truth.cols);
    return r;
}

std::string MetricReport::to_json() const {
    using nlohmann::json;
    const auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    json j;
    j["samples"] = samples;
    j["outputs"] = json::array();
    for (const auto& o : outputs) j["outputs"].push_back({{"icc", opt(o.icc)}, {"mse", o.mse}, {"accuracy", o.accuracy}});
    j["average"] = {{"icc", opt(avg_icc)}, {"mse", avg_mse}, {"accuracy", avg_accuracy}};
    j["nlpd"] = opt(nlpd);
    return j.dump(2) + "\n";
}

}  // namespace deepcoder::metrics
