#include "c33d/latent.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "c33d/error.hpp"

namespace c33d {

namespace {

constexpr std::array<char, 8> kMagic = {'C', '3', '3', 'D', 'L', 'A', 'T', '1'};

template <typename T>
void put_le(std::ostream& os, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::array<unsigned char, sizeof(T)> bytes{};
    std::memcpy(bytes.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    os.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <typename T>
T get_le(std::istream& is) {
    std::array<unsigned char, sizeof(T)> bytes{};
    is.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
    if (!is) throw IoError("truncated latent file");
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    T value;
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
}

}  // namespace

LatentGrid::LatentGrid(std::size_t channels, std::size_t height, std::size_t width, double fill)
    : channels_(channels), height_(height), width_(width), data_(channels * height * width, fill) {}

void require_same_shape(const LatentGrid& a, const LatentGrid& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(what) + ": shape " + std::to_string(a.channels()) + "x" +
                         std::to_string(a.height()) + "x" + std::to_string(a.width()) + " vs " +
                         std::to_string(b.channels()) + "x" + std::to_string(b.height()) + "x" +
                         std::to_string(b.width()));
    }
}

double mean_abs_diff(const LatentGrid& a, const LatentGrid& b) {
    require_same_shape(a, b, "mean_abs_diff");
    if (a.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
    return acc / static_cast<double>(a.size());
}

double l2_distance(const LatentGrid& a, const LatentGrid& b) {
    require_same_shape(a, b, "l2_distance");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(acc);
}

double max_abs(const LatentGrid& a) {
    double m = 0.0;
    for (double v : a.values()) m = std::max(m, std::abs(v));
    return m;
}

std::uint64_t digest(const LatentGrid& g) {
    std::uint64_t h = 14695981039346656037ull;
    const auto mix = [&h](std::uint64_t word) {
        h ^= word;
        h *= 1099511628211ull;
    };
    mix(g.channels());
    mix(g.height());
    mix(g.width());
    for (double v : g.values()) mix(std::bit_cast<std::uint64_t>(v));
    return h;
}

void write_latent(const std::filesystem::path& path, const LatentGrid& grid, LatentDtype dtype) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os.write(kMagic.data(), kMagic.size());
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(grid.channels()));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(grid.height()));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(grid.width()));
    put_le<std::uint8_t>(os, static_cast<std::uint8_t>(dtype));
    for (double v : grid.values()) {
        if (dtype == LatentDtype::F32) {
            put_le<float>(os, static_cast<float>(v));
        } else {
            put_le<double>(os, v);
        }
    }
    if (!os) throw IoError("write failed for " + path.string());
}

LatentGrid read_latent(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    std::array<char, 8> magic{};
    is.read(magic.data(), magic.size());
    if (!is || magic != kMagic) throw IoError(path.string() + ": bad latent magic");
    const auto c = get_le<std::uint32_t>(is);
    const auto h = get_le<std::uint32_t>(is);
    const auto w = get_le<std::uint32_t>(is);
    const auto dtype = get_le<std::uint8_t>(is);
    if (dtype > 1) throw IoError(path.string() + ": unknown dtype " + std::to_string(dtype));
    LatentGrid grid(c, h, w);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        grid[i] = dtype == 0 ? static_cast<double>(get_le<float>(is)) : get_le<double>(is);
    }
    return grid;
}

}  // namespace c33d
