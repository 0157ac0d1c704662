#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

#include "c33d/latent.hpp"

namespace c33d {

std::uint64_t splitmix64(std::uint64_t x) noexcept;
std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t value) noexcept;
std::uint64_t hash_string(std::string_view s) noexcept;

// Sequential generator for non-diffusion randomness (point sampling, tests).
class Rng {
public:
    explicit Rng(std::uint64_t seed) noexcept : state_(seed) {}
    std::uint64_t next_u64() noexcept;
    double uniform() noexcept;  // [0, 1)
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    double normal() noexcept;

private:
    std::uint64_t state_;
};

enum class NoisePhase : std::uint32_t { Inversion = 1, Denoising = 2, Edit = 3 };
enum class NoiseRole : std::uint32_t { Rgb = 0, Normal = 1 };

// Address of one Gaussian draw. Every element of the drawn grid is a pure
// function of (key, element index), so draws can be regenerated on replay.
struct NoiseKey {
    std::uint64_t seed = 0;
    std::uint32_t stage = 0;
    std::uint32_t view = 0;
    NoiseRole role = NoiseRole::Rgb;
    NoisePhase phase = NoisePhase::Inversion;
    std::uint32_t step = 0;

    std::uint64_t hash() const noexcept;
    friend bool operator==(const NoiseKey&, const NoiseKey&) = default;
    friend auto operator<=>(const NoiseKey&, const NoiseKey&) = default;
};

// Standard normal draws, element i taken from counter i under the key.
LatentGrid gaussian_grid(const NoiseKey& key, std::size_t channels, std::size_t height, std::size_t width,
                         double scale = 1.0);

}  // namespace c33d
