#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace c33d {

using Rgb = std::array<double, 3>;

// height x width x 3 real image, interleaved rows.
class Image {
public:
    Image() = default;
    Image(std::size_t height, std::size_t width, Rgb fill = {0.0, 0.0, 0.0});

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    bool empty() const noexcept { return data_.empty(); }

    Rgb pixel(std::size_t y, std::size_t x) const {
        const std::size_t i = (y * width_ + x) * 3;
        return {data_[i], data_[i + 1], data_[i + 2]};
    }
    void set_pixel(std::size_t y, std::size_t x, const Rgb& v) {
        const std::size_t i = (y * width_ + x) * 3;
        data_[i] = v[0];
        data_[i + 1] = v[1];
        data_[i + 2] = v[2];
    }
    double& at(std::size_t y, std::size_t x, std::size_t c) { return data_[(y * width_ + x) * 3 + c]; }
    double at(std::size_t y, std::size_t x, std::size_t c) const { return data_[(y * width_ + x) * 3 + c]; }

    const std::vector<double>& data() const noexcept { return data_; }
    std::vector<double>& data() noexcept { return data_; }

    friend bool operator==(const Image&, const Image&) = default;

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<double> data_;
};

// Per-pixel coverage, 1 where a surface was rasterized.
class Mask {
public:
    Mask() = default;
    Mask(std::size_t height, std::size_t width, std::uint8_t fill = 0)
        : height_(height), width_(width), data_(height * width, fill) {}

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    bool operator()(std::size_t y, std::size_t x) const { return data_[y * width_ + x] != 0; }
    void set(std::size_t y, std::size_t x, bool v) { data_[y * width_ + x] = v ? 1 : 0; }
    std::size_t count() const;
    double coverage() const;

    friend bool operator==(const Mask&, const Mask&) = default;

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<std::uint8_t> data_;
};

Image flip_horizontal(const Image& img);
Mask flip_horizontal(const Mask& m);

// Normal maps are stored as unit vectors in [-1, 1]; images as [0, 1].
Image encode_normals(const Image& normals);  // (n + 1) / 2
Image decode_normals(const Image& encoded);  // 2v - 1, no renormalization

Image clamp01(const Image& img);
double mean_abs_diff(const Image& a, const Image& b);

// 8-bit RGB PNG, values clamped to [0, 1] and rounded.
void write_png(const std::filesystem::path& path, const Image& img);
std::vector<std::uint8_t> encode_png(const Image& img);

}  // namespace c33d
