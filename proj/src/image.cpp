#include "c33d/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "c33d/error.hpp"

namespace c33d {

Image::Image(std::size_t height, std::size_t width, Rgb fill)
    : height_(height), width_(width), data_(height * width * 3) {
    for (std::size_t i = 0; i < height * width; ++i) {
        data_[3 * i] = fill[0];
        data_[3 * i + 1] = fill[1];
        data_[3 * i + 2] = fill[2];
    }
}

std::size_t Mask::count() const {
    return static_cast<std::size_t>(std::count_if(data_.begin(), data_.end(), [](std::uint8_t v) { return v != 0; }));
}

double Mask::coverage() const {
    return data_.empty() ? 0.0 : static_cast<double>(count()) / static_cast<double>(data_.size());
}

Image flip_horizontal(const Image& img) {
    Image out(img.height(), img.width());
    for (std::size_t y = 0; y < img.height(); ++y)
        for (std::size_t x = 0; x < img.width(); ++x) out.set_pixel(y, img.width() - 1 - x, img.pixel(y, x));
    return out;
}

Mask flip_horizontal(const Mask& m) {
    Mask out(m.height(), m.width());
    for (std::size_t y = 0; y < m.height(); ++y)
        for (std::size_t x = 0; x < m.width(); ++x) out.set(y, m.width() - 1 - x, m(y, x));
    return out;
}

Image encode_normals(const Image& normals) {
    Image out = normals;
    for (double& v : out.data()) v = (v + 1.0) * 0.5;
    return out;
}

Image decode_normals(const Image& encoded) {
    Image out = encoded;
    for (double& v : out.data()) v = 2.0 * v - 1.0;
    return out;
}

Image clamp01(const Image& img) {
    Image out = img;
    for (double& v : out.data()) v = std::clamp(v, 0.0, 1.0);
    return out;
}

double mean_abs_diff(const Image& a, const Image& b) {
    if (a.height() != b.height() || a.width() != b.width()) throw ShapeError("mean_abs_diff: image sizes differ");
    if (a.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) acc += std::abs(a.data()[i] - b.data()[i]);
    return acc / static_cast<double>(a.data().size());
}

namespace {

void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

void put_chunk(std::vector<std::uint8_t>& out, const char* type, const std::vector<std::uint8_t>& payload) {
    put_u32_be(out, static_cast<std::uint32_t>(payload.size()));
    const std::size_t type_at = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    const uLong crc = crc32(0L, out.data() + type_at, static_cast<uInt>(payload.size() + 4));
    put_u32_be(out, static_cast<std::uint32_t>(crc));
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image& img) {
    if (img.empty()) throw InvalidInput("encode_png: empty image");
    std::vector<std::uint8_t> raw;
    raw.reserve(img.height() * (img.width() * 3 + 1));
    for (std::size_t y = 0; y < img.height(); ++y) {
        raw.push_back(0);  // filter: none
        for (std::size_t x = 0; x < img.width(); ++x)
            for (std::size_t c = 0; c < 3; ++c)
                raw.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(img.at(y, x, c), 0.0, 1.0) * 255.0)));
    }
    uLongf packed_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> packed(packed_len);
    if (compress2(packed.data(), &packed_len, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
        throw IoError("encode_png: zlib failure");
    packed.resize(packed_len);

    std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    std::vector<std::uint8_t> ihdr;
    put_u32_be(ihdr, static_cast<std::uint32_t>(img.width()));
    put_u32_be(ihdr, static_cast<std::uint32_t>(img.height()));
    ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // 8-bit, truecolor, deflate, no filter, no interlace
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", packed);
    put_chunk(out, "IEND", {});
    return out;
}

void write_png(const std::filesystem::path& path, const Image& img) {
    const auto bytes = encode_png(img);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("write failed for " + path.string());
}

}  // namespace c33d
