#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "deepcoder/tape.hpp"
#include "deepcoder/tensor.hpp"

namespace deepcoder {

/// Ordered collection of named tensors. Order is the checkpoint block order.
class ParamSet {
public:
    void add(std::string name, Tensor value);

    Tensor& operator[](std::string_view name);
    const Tensor& operator[](std::string_view name) const;
    bool contains(std::string_view name) const;

    std::size_t size() const { return entries_.size(); }
    const std::string& name(std::size_t i) const { return entries_[i].first; }
    Tensor& at(std::size_t i) { return entries_[i].second; }
    const Tensor& at(std::size_t i) const { return entries_[i].second; }

    std::size_t index_of(std::string_view name) const;
    ParamSet zeros_like() const;
    bool all_finite() const;

    friend bool operator==(const ParamSet&, const ParamSet&) = default;

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
};

/// Slots for a ParamSet placed on a tape, index-aligned with the set.
class BoundParams {
public:
    BoundParams(Tape& tape, const ParamSet& params, bool trainable);

    Slot operator[](std::string_view name) const { return slots_[params_->index_of(name)]; }
    Slot at(std::size_t i) const { return slots_[i]; }

    /// Gradients after tape.backward(), in ParamSet order.
    ParamSet gradients(const Tape& tape) const;

private:
    const ParamSet* params_;
    std::vector<Slot> slots_;
};

}  // namespace deepcoder
