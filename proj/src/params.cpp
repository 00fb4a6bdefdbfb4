#include "deepcoder/params.hpp"

#include <stdexcept>

namespace deepcoder {

void ParamSet::add(std::string name, Tensor value) {
    if (contains(name)) throw std::invalid_argument("duplicate parameter " + name);
    entries_.emplace_back(std::move(name), std::move(value));
}

std::size_t ParamSet::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (entries_[i].first == name) return i;
    throw std::out_of_range("unknown parameter " + std::string(name));
}

Tensor& ParamSet::operator[](std::string_view name) { return entries_[index_of(name)].second; }
const Tensor& ParamSet::operator[](std::string_view name) const { return entries_[index_of(name)].second; }

bool ParamSet::contains(std::string_view name) const {
    for (const auto& e : entries_)
        if (e.first == name) return true;
    return false;
}

ParamSet ParamSet::zeros_like() const {
    ParamSet out;
    for (const auto& [n, t] : entries_) out.add(n, Tensor::zeros_like(t));
    return out;
}

bool ParamSet::all_finite() const {
    for (const auto& e : entries_)
        if (!e.second.all_finite()) return false;
    return true;
}

BoundParams::BoundParams(Tape& tape, const ParamSet& params, bool trainable) : params_(&params) {
    slots_.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i)
        slots_.push_back(trainable ? tape.parameter(params.at(i)) : tape.constant(params.at(i)));
}

ParamSet BoundParams::gradients(const Tape& tape) const {
    ParamSet g;
    for (std::size_t i = 0; i < slots_.size(); ++i) g.add(params_->name(i), tape.grad(slots_[i]));
    return g;
}

}  // namespace deepcoder
