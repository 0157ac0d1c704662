#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace c33d {

// channels x height x width real array, row-major within a channel.
class LatentGrid {
public:
    LatentGrid() = default;
    LatentGrid(std::size_t channels, std::size_t height, std::size_t width, double fill = 0.0);

    std::size_t channels() const noexcept { return channels_; }
    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& at(std::size_t c, std::size_t y, std::size_t x) {
        return data_[(c * height_ + y) * width_ + x];
    }
    double at(std::size_t c, std::size_t y, std::size_t x) const {
        return data_[(c * height_ + y) * width_ + x];
    }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    bool same_shape(const LatentGrid& other) const noexcept {
        return channels_ == other.channels_ && height_ == other.height_ && width_ == other.width_;
    }

    friend bool operator==(const LatentGrid&, const LatentGrid&) = default;

private:
    std::size_t channels_ = 0;
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<double> data_;
};

// Throws ShapeError naming `what` when shapes differ.
void require_same_shape(const LatentGrid& a, const LatentGrid& b, const char* what);

double mean_abs_diff(const LatentGrid& a, const LatentGrid& b);
double l2_distance(const LatentGrid& a, const LatentGrid& b);
double max_abs(const LatentGrid& a);

// FNV-1a style hash over the dimensions and 64-bit sample words; used to
// fingerprint grids in the noise ledger.
std::uint64_t digest(const LatentGrid& g);

// On-disk latent dump: "C33DLAT1", u32 channels, u32 height, u32 width,
// u8 dtype, then row-major little-endian samples.
enum class LatentDtype : std::uint8_t { F32 = 0, F64 = 1 };

void write_latent(const std::filesystem::path& path, const LatentGrid& grid,
                  LatentDtype dtype = LatentDtype::F32);
LatentGrid read_latent(const std::filesystem::path& path);

}  // namespace c33d
