#include "deepcoder/tape.hpp"

#include <stdexcept>

namespace deepcoder {

Slot Tape::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, false});
    return Slot{nodes_.size() - 1};
}

Slot Tape::parameter(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, true});
    return Slot{nodes_.size() - 1};
}

Slot Tape::record(Tensor value, std::initializer_list<Slot> inputs, Backward backward) {
    bool needs = false;
    for (Slot in : inputs) {
        if (in.id >= nodes_.size()) throw std::invalid_argument("tape: operation input not recorded before use");
        needs = needs || nodes_[in.id].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{}, needs});
    return Slot{nodes_.size() - 1};
}

const Tensor& Tape::grad(Slot s) const {
    Node& n = const_cast<Node&>(nodes_.at(s.id));
    if (n.grad.empty()) n.grad = Tensor::zeros_like(n.value);
    return n.grad;
}

void Tape::accumulate(Slot s, const Tensor& g) {
    Node& n = nodes_.at(s.id);
    if (!n.requires_grad) return;
    if (n.grad.empty()) {
        require_same_shape(n.value, g, "tape gradient");
        n.grad = g;
    } else {
        n.grad += g;
    }
}

void Tape::accumulate(Slot s, Tensor&& g) {
    Node& n = nodes_.at(s.id);
    if (!n.requires_grad) return;
    if (n.grad.empty()) {
        require_same_shape(n.value, g, "tape gradient");
        n.grad = std::move(g);
    } else {
        n.grad += g;
    }
}

void Tape::backward(Slot output) {
    if (value(output).size() != 1)
        throw std::invalid_argument("backward: output slot holds " + shape_str(value(output).shape()) +
                                    ", expected a scalar");
    for (auto& n : nodes_) n.grad = Tensor{};
    if (!nodes_[output.id].requires_grad) return;
    nodes_[output.id].grad = Tensor(value(output).shape(), 1.0);
    for (std::size_t i = output.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.backward || n.grad.empty()) continue;
        // Callbacks only touch gradients of earlier slots.
        n.backward(*this, n.grad);
    }
}

}  // namespace deepcoder
