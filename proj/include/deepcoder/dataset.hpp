#pragma once

#include <vector>

#include "deepcoder/labels.hpp"
#include "deepcoder/tensor.hpp"

namespace deepcoder {

struct Dataset {
    Tensor images;             // [N, C, H, W], values in [0, 1]
    LabelMatrix labels;        // [N, Q], 1-based levels
    std::vector<int> subjects;  // [N]
    std::vector<int> levels;    // L_q per output

    std::size_t size() const { return labels.rows; }
    std::size_t outputs() const { return levels.size(); }

    /// Throws std::invalid_argument on any broken invariant.
    void validate() const;
    Dataset select(const std::vector<std::size_t>& idx) const;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Rows `idx` of a tensor along its first axis.
Tensor select_rows(const Tensor& t, const std::vector<std::size_t>& idx);

}  // namespace deepcoder
