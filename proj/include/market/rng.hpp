#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace market {

std::uint64_t splitmix64(std::uint64_t x);

/// Stable 64-bit FNV-1a hash; used for seed derivation and output checksums.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// Derives an independent stream seed from a master seed, a stage label and
/// an index. Adding a new stage never perturbs the streams of existing ones.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stage, std::uint64_t index = 0);

/// Seeded random source. Every sampler is implemented here on top of the raw
/// engine so that streams are identical across standard-library vendors.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform();
    double normal(double mean = 0.0, double stddev = 1.0);
    double gamma(double shape);
    double beta(double a, double b);
    std::size_t uniform_index(std::size_t n);

    /// Inverse-CDF draw from a probability row that sums to one.
    /// Consumes exactly one uniform, so two chains sampled from the same seed
    /// stay coupled.
    std::size_t categorical(std::span<const double> probs);

    template <typename It>
    void shuffle(It first, It last) {
        for (auto n = static_cast<std::size_t>(last - first); n > 1; --n) {
            std::size_t j = uniform_index(n);
            std::swap(first[n - 1], first[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

} // namespace market
