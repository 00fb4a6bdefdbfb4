#include "deepcoder/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace deepcoder {

void Dataset::validate() const {
    if (images.rank() != 4) throw std::invalid_argument("dataset: images must be [N, C, H, W]");
    const std::size_t n = images.dim(0);
    if (labels.rows != n) throw std::invalid_argument("dataset: label rows do not match image count");
    if (subjects.size() != n) throw std::invalid_argument("dataset: subject count does not match image count");
    if (levels.empty()) throw std::invalid_argument("dataset: no outputs");
    for (int l : levels)
        if (l < 2) throw std::invalid_argument("dataset: every output needs at least 2 levels");
    validate_labels(labels, levels);
    for (double v : images.values())
        if (!std::isfinite(v)) throw std::invalid_argument("dataset: non-finite pixel value");
}

Tensor select_rows(const Tensor& t, const std::vector<std::size_t>& idx) {
    if (idx.empty()) return {};
    Shape shape = t.shape();
    const std::size_t stride = t.size() / shape[0];
    shape[0] = idx.size();
    Tensor out(shape);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= t.dim(0)) throw std::out_of_range("select_rows: index " + std::to_string(idx[r]));
        std::copy_n(t.data() + idx[r] * stride, stride, out.data() + r * stride);
    }
    return out;
}

Dataset Dataset::select(const std::vector<std::size_t>& idx) const {
    Dataset d;
    d.images = select_rows(images, idx);
    d.labels = labels.select(idx);
    d.subjects.reserve(idx.size());
    for (std::size_t i : idx) d.subjects.push_back(subjects.at(i));
    d.levels = levels;
    return d;
}

}  // namespace deepcoder
