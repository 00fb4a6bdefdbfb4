#pragma once

#include <optional>
#include <string>
#include <vector>

#include "deepcoder/labels.hpp"
#include "deepcoder/tensor.hpp"

namespace deepcoder::metrics {

/// ICC(3,1) of two raters over n targets from the two-way ANOVA mean squares:
/// (BMS - EMS) / (BMS + EMS). Throws UndefinedMetric when n < 2 or both
/// series are constant.
double icc31(const std::vector<double>& pred, const std::vector<double>& truth);
double icc31(const std::vector<int>& pred, const std::vector<int>& truth);

double mse(const std::vector<int>& pred, const std::vector<int>& truth);
double ordinal_accuracy(const std::vector<int>& pred, const std::vector<int>& truth);

/// Mean over points and dims of -log N(z | mean, var). `var` is [n] (shared
/// across dims) or the same shape as `z`.
double nlpd(const Tensor& z, const Tensor& mean, const Tensor& var);

struct OutputScores {
    std::optional<double> icc;  // empty when undefined
    double mse = 0.0;
    double accuracy = 0.0;
};

struct MetricReport {
    std::vector<OutputScores> outputs;
    std::optional<double> avg_icc;  // over outputs with a defined ICC
    double avg_mse = 0.0;
    double avg_accuracy = 0.0;
    std::optional<double> nlpd;
    std::size_t samples = 0;

    /// JSON document.
    std::string to_json() const;
};

MetricReport evaluate(const LabelMatrix& pred, const LabelMatrix& truth);

}  // namespace deepcoder::metrics
