#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace momok {

// Splittable counter-style generator built on splitmix64. Identical seed and
// draw sequence reproduce the same values on every platform; substreams are
// derived from the seed (not the evolving state), so splitting is insensitive
// to how many draws the parent has made.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();
    // Uniform in [0, 1) with 53 random bits.
    double uniform();
    // Uniform in [lo, hi).
    double uniform(double lo, double hi);
    // Standard normal via Box-Muller (one spare cached).
    double normal();
    // Uniform integer in [0, n), n >= 1.
    std::uint64_t below(std::uint64_t n);

    // Independent substream identified by a tag.
    Rng split(std::uint64_t tag) const;
    Rng split(std::string_view tag) const;

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Stateless 64-bit mixers, used for deriving per-item seeds.
std::uint64_t mix64(std::uint64_t x);
std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b);
std::uint64_t hash_str(std::string_view s);

// sample = mean + std ⊙ z with z iid standard normal. Throws
// std::invalid_argument on negative std or length mismatch.
std::vector<double> gaussian_sample(Rng& rng, std::span<const double> mean,
                                    std::span<const double> std_dev);

}  // namespace momok
