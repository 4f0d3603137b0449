#include "momok/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace momok {

namespace {

constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;

std::uint64_t splitmix_next(std::uint64_t& state) {
    state += kGamma;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace

std::uint64_t mix64(std::uint64_t x) {
    std::uint64_t s = x;
    return splitmix_next(s);
}

std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
    return mix64(a ^ (b + kGamma + (a << 6) + (a >> 2)));
}

std::uint64_t hash_str(std::string_view s) {
    // FNV-1a, then mixed.
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return mix64(h);
}

Rng::Rng(std::uint64_t seed) : seed_(seed), state_(mix64(seed)) {}

std::uint64_t Rng::next_u64() { return splitmix_next(state_); }

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double mag = std::sqrt(-2.0 * std::log(u1));
    const double ang = 2.0 * std::numbers::pi * u2;
    spare_ = mag * std::sin(ang);
    has_spare_ = true;
    return mag * std::cos(ang);
}

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be >= 1");
    // Rejection sampling to avoid modulo bias.
    const std::uint64_t limit = ~0ull - (~0ull % n);
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
}

Rng Rng::split(std::uint64_t tag) const { return Rng(hash_combine(seed_, mix64(tag))); }

Rng Rng::split(std::string_view tag) const { return split(hash_str(tag)); }

std::vector<double> gaussian_sample(Rng& rng, std::span<const double> mean,
                                    std::span<const double> std_dev) {
    if (mean.size() != std_dev.size())
        throw std::invalid_argument("gaussian_sample: mean/std length mismatch");
    std::vector<double> out(mean.size());
    for (std::size_t i = 0; i < mean.size(); ++i) {
        if (std_dev[i] < 0.0)
            throw std::invalid_argument("gaussian_sample: negative std");
        out[i] = mean[i] + std_dev[i] * rng.normal();
    }
    return out;
}

}  // namespace momok
