#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "c33d/image.hpp"

namespace c33d {

// The six canonical viewpoints around the object.
enum class ViewId : std::uint8_t { F = 0, FR = 1, FL = 2, R = 3, L = 4, B = 5 };

inline constexpr std::size_t kViewCount = 6;
inline constexpr std::array<ViewId, kViewCount> kAllViews = {ViewId::F, ViewId::FR, ViewId::FL,
                                                             ViewId::R, ViewId::L, ViewId::B};

constexpr std::size_t index_of(ViewId v) noexcept { return static_cast<std::size_t>(v); }
std::string_view tag(ViewId v) noexcept;
ViewId view_from_tag(std::string_view tag);  // throws InvalidInput
double azimuth_deg(ViewId v) noexcept;

template <typename T>
using PerView = std::array<T, kViewCount>;

using Vec3 = std::array<double, 3>;

struct ToyMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<std::uint32_t, 3>> faces;
    std::vector<Rgb> vertex_colors;  // same length as vertices

    void validate() const;  // throws InvalidMesh
};

// OBJ subset: `v x y z [r g b]`, `f a b c ...` (fan-triangulated; v/vt/vn
// references accepted, only the vertex index is used). Missing colors
// default to mid grey.
ToyMesh read_obj(const std::filesystem::path& path);
ToyMesh parse_obj(std::string_view text);
void write_obj(const std::filesystem::path& path, const ToyMesh& mesh);

// Centre the bounding box at the origin and scale the longest extent to 1.
ToyMesh normalize_to_unit_cube(ToyMesh mesh);

ToyMesh make_cube(const Rgb& color = {0.8, 0.3, 0.2});
ToyMesh make_uv_sphere(std::size_t rings, std::size_t segments, const Rgb& color = {0.3, 0.5, 0.8});
// Two boxes of different colors, offset along x; asymmetric left/right.
ToyMesh make_l_shape();
// x -> -x with the winding flipped so faces keep pointing outward.
ToyMesh mirror_x(const ToyMesh& mesh);

struct RenderedView {
    ViewId view = ViewId::F;
    double azimuth_deg = 0.0;
    Image rgb;
    Image normal;  // camera-frame unit vectors inside the mask, zero outside
    Mask alpha;
};

struct ViewBundle {
    PerView<RenderedView> views;
    std::size_t degenerate_faces = 0;

    const RenderedView& operator[](ViewId v) const { return views[index_of(v)]; }
    RenderedView& operator[](ViewId v) { return views[index_of(v)]; }
    std::size_t resolution() const { return views[0].rgb.height(); }
};

// Orthographic, elevation 0, flat-shaded from vertex colors, back faces
// culled, depth-buffered. The mesh is normalized to the unit cube first.
ViewBundle render_views(const ToyMesh& mesh, std::size_t resolution);

// Half-width of the orthographic frustum in normalized mesh units.
double frame_half_extent() noexcept;

inline constexpr Rgb kBackground = {1.0, 1.0, 1.0};

struct ViewWeights {
    PerView<double> weight{};

    double operator[](ViewId v) const { return weight[index_of(v)]; }
    double sum() const;
    void validate() const;  // nonnegative, sums to 1 within 1e-9; throws ConfigError
};

ViewWeights default_view_weights();

}  // namespace c33d
