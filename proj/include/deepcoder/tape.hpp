#pragma once

#include <functional>
#include <vector>

#include "deepcoder/tensor.hpp"

namespace deepcoder {

/// Handle to a value slot on a Tape.
struct Slot {
    std::size_t id = static_cast<std::size_t>(-1);
    bool valid() const { return id != static_cast<std::size_t>(-1); }
};

/// Records primitive operations in execution order; reverse-mode
/// differentiation walks the record backwards. Single owner, not thread-safe.
class Tape {
public:
    using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

    Slot constant(Tensor value);
    Slot parameter(Tensor value);

    /// Appends an operation result. `backward` is dropped when no input needs gradients.
    Slot record(Tensor value, std::initializer_list<Slot> inputs, Backward backward);

    const Tensor& value(Slot s) const { return nodes_.at(s.id).value; }
    bool requires_grad(Slot s) const { return nodes_.at(s.id).requires_grad; }

    /// Gradient of the last backward() output w.r.t. slot s (zeros if unreached).
    const Tensor& grad(Slot s) const;

    /// Adds g into the gradient accumulator of s, if s requires gradients.
    void accumulate(Slot s, const Tensor& g);
    void accumulate(Slot s, Tensor&& g);

    /// Reverse sweep seeded with d(output)/d(output) = 1. Output must be a scalar.
    void backward(Slot output);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        Backward backward;
        bool requires_grad = false;
    };
    std::vector<Node> nodes_;
};

}  // namespace deepcoder
