#include "c33d/rng.hpp"

#include <cmath>
#include <numbers>

namespace c33d {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t value) noexcept {
    return splitmix64(seed ^ splitmix64(value));
}

std::uint64_t hash_string(std::string_view s) noexcept {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return splitmix64(h);
}

namespace {

double to_unit(std::uint64_t bits) noexcept {
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

// Box-Muller on two independent counter hashes; u1 is kept away from 0.
double normal_from(std::uint64_t a, std::uint64_t b) noexcept {
    const double u1 = (static_cast<double>(a >> 11) + 0.5) * 0x1.0p-53;
    const double u2 = to_unit(b);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace

std::uint64_t Rng::next_u64() noexcept {
    state_ += 0x9e3779b97f4a7c15ull;
    return splitmix64(state_);
}

double Rng::uniform() noexcept { return to_unit(next_u64()); }

double Rng::normal() noexcept {
    const std::uint64_t a = next_u64();
    const std::uint64_t b = next_u64();
    return normal_from(a, b);
}

std::uint64_t NoiseKey::hash() const noexcept {
    std::uint64_t h = splitmix64(seed);
    h = hash_combine(h, stage);
    h = hash_combine(h, view);
    h = hash_combine(h, static_cast<std::uint32_t>(role));
    h = hash_combine(h, static_cast<std::uint32_t>(phase));
    h = hash_combine(h, step);
    return h;
}

LatentGrid gaussian_grid(const NoiseKey& key, std::size_t channels, std::size_t height, std::size_t width,
                         double scale) {
    LatentGrid g(channels, height, width);
    const std::uint64_t base = key.hash();
    for (std::size_t i = 0; i < g.size(); ++i) {
        const std::uint64_t a = splitmix64(base + 2 * i);
        const std::uint64_t b = splitmix64(base + 2 * i + 1);
        g[i] = scale * normal_from(a, b);
    }
    return g;
}

}  // namespace c33d
