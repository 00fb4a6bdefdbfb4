#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace deepcoder {

/// Seeded generator. Normal draws use Box-Muller without a cached spare, so
/// the serialized engine state is the complete generator state.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    double uniform();                      // [0, 1)
    double normal();                       // N(0, 1)
    std::size_t uniform_index(std::size_t n);  // [0, n)

    template <class It>
    void shuffle(It first, It last) {
        auto n = static_cast<std::size_t>(last - first);
        for (std::size_t i = n; i > 1; --i) std::swap(first[i - 1], first[uniform_index(i)]);
    }

    std::string serialize() const;
    void deserialize(const std::string& state);

    friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace deepcoder
