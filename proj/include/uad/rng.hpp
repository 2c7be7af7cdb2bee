#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace uad {

/// Counter-based random stream.
///
/// A stream is keyed by (seed, a, b); draws are a pure function of the key and
/// a running counter, so independent streams can be handed to concurrent
/// workers and the result never depends on scheduling. Output is identical on
/// every platform (no std:: distributions are involved).
class Rng {
  public:
    explicit Rng(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0);

    std::uint64_t next_u64();
    /// Uniform on [0, 1).
    double uniform();
    double uniform(double lo, double hi);
    /// Standard normal via Box-Muller.
    double normal();
    /// Uniform integer on [0, n).
    std::uint64_t below(std::uint64_t n);
    bool bernoulli(double p) { return uniform() < p; }

    void fill_normal(std::span<double> out);

    template <class T>
    void shuffle(std::vector<T> &items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

  private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

std::uint64_t splitmix64(std::uint64_t x);

} // namespace uad
