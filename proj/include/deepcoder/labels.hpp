#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace deepcoder {

/// Ordinal labels: rows = samples, cols = outputs, levels are 1-based.
struct LabelMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<int> data;

    LabelMatrix() = default;
    LabelMatrix(std::size_t r, std::size_t c, int fill = 1) : rows(r), cols(c), data(r * c, fill) {}

    int& at(std::size_t i, std::size_t q) { return data[i * cols + q]; }
    int at(std::size_t i, std::size_t q) const { return data[i * cols + q]; }

    LabelMatrix select(const std::vector<std::size_t>& idx) const {
        LabelMatrix out(idx.size(), cols);
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t q = 0; q < cols; ++q) out.at(r, q) = at(idx[r], q);
        return out;
    }

    std::vector<int> column(std::size_t q) const {
        std::vector<int> out(rows);
        for (std::size_t i = 0; i < rows; ++i) out[i] = at(i, q);
        return out;
    }

    friend bool operator==(const LabelMatrix&, const LabelMatrix&) = default;
};

/// Throws std::invalid_argument when a label falls outside 1..levels[q].
inline void validate_labels(const LabelMatrix& y, const std::vector<int>& levels) {
    if (levels.size() != y.cols)
        throw std::invalid_argument("labels have " + std::to_string(y.cols) + " outputs but " +
                                    std::to_string(levels.size()) + " level counts were given");
    for (std::size_t i = 0; i < y.rows; ++i)
        for (std::size_t q = 0; q < y.cols; ++q)
            if (y.at(i, q) < 1 || y.at(i, q) > levels[q])
                throw std::invalid_argument("label " + std::to_string(y.at(i, q)) + " at row " + std::to_string(i) +
                                            ", output " + std::to_string(q) + " outside 1.." +
                                            std::to_string(levels[q]));
}

}  // namespace deepcoder
