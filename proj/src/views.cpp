#include "c33d/views.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>

#include "c33d/error.hpp"

namespace c33d {

namespace {

constexpr std::array<std::string_view, kViewCount> kTags = {"f", "fr", "fl", "r", "l", "b"};
constexpr std::array<double, kViewCount> kAzimuths = {0.0, 45.0, -45.0, -90.0, 90.0, 180.0};

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

// cos/sin of an azimuth, exact on multiples of 90 degrees.
std::pair<double, double> cos_sin_deg(double deg) {
    const double wrapped = std::fmod(std::fmod(deg, 360.0) + 360.0, 360.0);
    if (wrapped == 0.0) return {1.0, 0.0};
    if (wrapped == 90.0) return {0.0, 1.0};
    if (wrapped == 180.0) return {-1.0, 0.0};
    if (wrapped == 270.0) return {0.0, -1.0};
    const double rad = deg * std::numbers::pi / 180.0;
    return {std::cos(rad), std::sin(rad)};
}

double parse_double(std::string_view tok, std::size_t line_no) {
    double v = 0.0;
    const auto* end = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(tok.data(), end, v);
    if (ec != std::errc() || ptr != end)
        throw InvalidMesh("obj line " + std::to_string(line_no) + ": bad number '" + std::string(tok) + "'");
    return v;
}

void add_box(ToyMesh& mesh, const Vec3& lo, const Vec3& hi, const Rgb& color) {
    const auto base = static_cast<std::uint32_t>(mesh.vertices.size());
    for (std::uint32_t i = 0; i < 8; ++i) {
        mesh.vertices.push_back({(i & 1) ? hi[0] : lo[0], (i & 2) ? hi[1] : lo[1], (i & 4) ? hi[2] : lo[2]});
        mesh.vertex_colors.push_back(color);
    }
    static constexpr std::array<std::array<std::uint32_t, 3>, 12> kFaces = {{
        {4, 5, 7}, {4, 7, 6},  // +z
        {0, 2, 3}, {0, 3, 1},  // -z
        {1, 3, 7}, {1, 7, 5},  // +x
        {0, 4, 6}, {0, 6, 2},  // -x
        {2, 6, 7}, {2, 7, 3},  // +y
        {0, 1, 5}, {0, 5, 4},  // -y
    }};
    for (const auto& f : kFaces) mesh.faces.push_back({base + f[0], base + f[1], base + f[2]});
}

}  // namespace

std::string_view tag(ViewId v) noexcept { return kTags[index_of(v)]; }

ViewId view_from_tag(std::string_view t) {
    for (std::size_t i = 0; i < kViewCount; ++i)
        if (kTags[i] == t) return kAllViews[i];
    throw InvalidInput("unknown view tag '" + std::string(t) + "'");
}

double azimuth_deg(ViewId v) noexcept { return kAzimuths[index_of(v)]; }

void ToyMesh::validate() const {
    if (vertices.empty() || faces.empty()) throw InvalidMesh("mesh has no vertices or no faces");
    if (vertex_colors.size() != vertices.size()) throw InvalidMesh("vertex color count does not match vertices");
    for (const auto& f : faces)
        for (auto idx : f)
            if (idx >= vertices.size()) throw InvalidMesh("face index " + std::to_string(idx) + " out of range");
    for (const auto& v : vertices)
        for (double c : v)
            if (!std::isfinite(c)) throw InvalidMesh("non-finite vertex coordinate");
}

ToyMesh parse_obj(std::string_view text) {
    ToyMesh mesh;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string kind;
        if (!(ls >> kind) || kind[0] == '#') continue;
        std::vector<std::string> toks;
        for (std::string t; ls >> t;) toks.push_back(t);
        if (kind == "v") {
            if (toks.size() != 3 && toks.size() != 6)
                throw InvalidMesh("obj line " + std::to_string(line_no) + ": expected 3 or 6 values on v");
            mesh.vertices.push_back(
                {parse_double(toks[0], line_no), parse_double(toks[1], line_no), parse_double(toks[2], line_no)});
            if (toks.size() == 6) {
                mesh.vertex_colors.push_back({std::clamp(parse_double(toks[3], line_no), 0.0, 1.0),
                                              std::clamp(parse_double(toks[4], line_no), 0.0, 1.0),
                                              std::clamp(parse_double(toks[5], line_no), 0.0, 1.0)});
            } else {
                mesh.vertex_colors.push_back({0.5, 0.5, 0.5});
            }
        } else if (kind == "f") {
            if (toks.size() < 3) throw InvalidMesh("obj line " + std::to_string(line_no) + ": face needs 3 vertices");
            std::vector<std::uint32_t> idx;
            for (const auto& t : toks) {
                const std::string head = t.substr(0, t.find('/'));
                long v = 0;
                auto [ptr, ec] = std::from_chars(head.data(), head.data() + head.size(), v);
                if (ec != std::errc() || ptr != head.data() + head.size() || v == 0)
                    throw InvalidMesh("obj line " + std::to_string(line_no) + ": bad face index '" + t + "'");
                const long n = static_cast<long>(mesh.vertices.size());
                const long resolved = v > 0 ? v - 1 : n + v;
                if (resolved < 0 || resolved >= n)
                    throw InvalidMesh("obj line " + std::to_string(line_no) + ": face index out of range");
                idx.push_back(static_cast<std::uint32_t>(resolved));
            }
            for (std::size_t k = 1; k + 1 < idx.size(); ++k) mesh.faces.push_back({idx[0], idx[k], idx[k + 1]});
        }
        // vt, vn, o, g, s, usemtl, mtllib: ignored
    }
    mesh.validate();
    return mesh;
}

ToyMesh read_obj(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open mesh " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_obj(ss.str());
}

void write_obj(const std::filesystem::path& path, const ToyMesh& mesh) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os.precision(17);
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        const auto& v = mesh.vertices[i];
        const auto& c = mesh.vertex_colors[i];
        os << "v " << v[0] << ' ' << v[1] << ' ' << v[2] << ' ' << c[0] << ' ' << c[1] << ' ' << c[2] << '\n';
    }
    for (const auto& f : mesh.faces) os << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
    if (!os) throw IoError("write failed for " + path.string());
}

ToyMesh normalize_to_unit_cube(ToyMesh mesh) {
    mesh.validate();
    Vec3 lo = mesh.vertices[0];
    Vec3 hi = mesh.vertices[0];
    for (const auto& v : mesh.vertices)
        for (int k = 0; k < 3; ++k) {
            lo[k] = std::min(lo[k], v[k]);
            hi[k] = std::max(hi[k], v[k]);
        }
    const double extent = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]});
    if (!(extent > 0.0)) throw InvalidMesh("mesh has zero extent");
    const Vec3 centre = {(lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, (lo[2] + hi[2]) / 2};
    for (auto& v : mesh.vertices)
        for (int k = 0; k < 3; ++k) v[k] = (v[k] - centre[k]) / extent;
    return mesh;
}

ToyMesh make_cube(const Rgb& color) {
    ToyMesh mesh;
    add_box(mesh, {-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5}, color);
    return mesh;
}

ToyMesh make_uv_sphere(std::size_t rings, std::size_t segments, const Rgb& color) {
    if (rings < 2 || segments < 3) throw InvalidInput("sphere needs rings >= 2 and segments >= 3");
    ToyMesh mesh;
    mesh.vertices.push_back({0.0, 1.0, 0.0});
    for (std::size_t i = 1; i < rings; ++i) {
        const double theta = std::numbers::pi * static_cast<double>(i) / static_cast<double>(rings);
        for (std::size_t j = 0; j < segments; ++j) {
            const double phi = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(segments);
            mesh.vertices.push_back({std::sin(theta) * std::cos(phi), std::cos(theta), std::sin(theta) * std::sin(phi)});
        }
    }
    mesh.vertices.push_back({0.0, -1.0, 0.0});
    mesh.vertex_colors.assign(mesh.vertices.size(), color);

    const auto ring_at = [segments](std::size_t ring, std::size_t seg) {
        return static_cast<std::uint32_t>(1 + (ring - 1) * segments + seg % segments);
    };
    const auto bottom = static_cast<std::uint32_t>(mesh.vertices.size() - 1);
    for (std::size_t j = 0; j < segments; ++j) {
        mesh.faces.push_back({0, ring_at(1, j), ring_at(1, j + 1)});
        for (std::size_t i = 1; i + 1 < rings; ++i) {
            mesh.faces.push_back({ring_at(i, j), ring_at(i + 1, j), ring_at(i + 1, j + 1)});
            mesh.faces.push_back({ring_at(i, j), ring_at(i + 1, j + 1), ring_at(i, j + 1)});
        }
        mesh.faces.push_back({bottom, ring_at(rings - 1, j + 1), ring_at(rings - 1, j)});
    }
    // Orient every face outward (the sphere is centred at the origin).
    for (auto& f : mesh.faces) {
        const auto& a = mesh.vertices[f[0]];
        const Vec3 n = cross(sub(mesh.vertices[f[1]], a), sub(mesh.vertices[f[2]], a));
        const Vec3 c = {(a[0] + mesh.vertices[f[1]][0] + mesh.vertices[f[2]][0]),
                        (a[1] + mesh.vertices[f[1]][1] + mesh.vertices[f[2]][1]),
                        (a[2] + mesh.vertices[f[1]][2] + mesh.vertices[f[2]][2])};
        if (dot(n, c) < 0.0) std::swap(f[1], f[2]);
    }
    return mesh;
}

ToyMesh make_l_shape() {
    ToyMesh mesh;
    add_box(mesh, {-1.0, -0.5, -0.4}, {0.0, 0.5, 0.4}, {0.85, 0.2, 0.2});
    add_box(mesh, {0.0, -0.5, -0.3}, {1.0, 0.0, 0.3}, {0.2, 0.3, 0.85});
    return mesh;
}

ToyMesh mirror_x(const ToyMesh& mesh) {
    ToyMesh out = mesh;
    for (auto& v : out.vertices) v[0] = -v[0];
    for (auto& f : out.faces) std::swap(f[1], f[2]);
    return out;
}

double frame_half_extent() noexcept { return 1.1 * std::numbers::sqrt2 / 2.0; }

namespace {

RenderedView render_one(const ToyMesh& mesh, ViewId view, std::size_t res) {
    RenderedView out;
    out.view = view;
    out.azimuth_deg = azimuth_deg(view);
    out.rgb = Image(res, res, kBackground);
    out.normal = Image(res, res);
    out.alpha = Mask(res, res);
    std::vector<double> depth(res * res, -std::numeric_limits<double>::infinity());

    const auto [ca, sa] = cos_sin_deg(out.azimuth_deg);
    std::vector<Vec3> cam(mesh.vertices.size());
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        const auto& p = mesh.vertices[i];
        cam[i] = {ca * p[0] - sa * p[2], p[1], sa * p[0] + ca * p[2]};
    }

    const double extent = frame_half_extent();
    const auto n = static_cast<double>(res);
    // Pixel centre i maps to ((2i + 1 - res) / res) * extent, symmetric about 0.
    const auto centre_x = [&](std::size_t i) { return (2.0 * static_cast<double>(i) + 1.0 - n) / n * extent; };
    const auto centre_y = [&](std::size_t j) { return (n - 2.0 * static_cast<double>(j) - 1.0) / n * extent; };
    const auto to_col = [&](double x) { return (x / extent + 1.0) * 0.5 * n - 0.5; };
    const auto to_row = [&](double y) { return (1.0 - y / extent) * 0.5 * n - 0.5; };

    for (std::size_t fi = 0; fi < mesh.faces.size(); ++fi) {
        const auto& f = mesh.faces[fi];
        const Vec3& a = cam[f[0]];
        const Vec3& b = cam[f[1]];
        const Vec3& c = cam[f[2]];
        const Vec3 nrm = cross(sub(b, a), sub(c, a));
        const double len = norm(nrm);
        if (!(len > 1e-14)) continue;  // degenerate, counted by the caller
        if (nrm[2] <= 0.0) continue;   // back-facing or edge-on
        const Vec3 unit = {nrm[0] / len, nrm[1] / len, nrm[2] / len};
        const double area2 = nrm[2];  // twice the projected signed area, > 0
        const auto& ka = mesh.vertex_colors[f[0]];
        const auto& kb = mesh.vertex_colors[f[1]];
        const auto& kc = mesh.vertex_colors[f[2]];
        const Rgb color = {(ka[0] + kb[0] + kc[0]) / 3.0, (ka[1] + kb[1] + kc[1]) / 3.0,
                           (ka[2] + kb[2] + kc[2]) / 3.0};

        const double xmin = std::min({a[0], b[0], c[0]}), xmax = std::max({a[0], b[0], c[0]});
        const double ymin = std::min({a[1], b[1], c[1]}), ymax = std::max({a[1], b[1], c[1]});
        const long c0 = std::max(0L, static_cast<long>(std::floor(to_col(xmin))));
        const long c1 = std::min(static_cast<long>(res) - 1, static_cast<long>(std::ceil(to_col(xmax))));
        const long r0 = std::max(0L, static_cast<long>(std::floor(to_row(ymax))));
        const long r1 = std::min(static_cast<long>(res) - 1, static_cast<long>(std::ceil(to_row(ymin))));
        for (long r = r0; r <= r1; ++r) {
            const double py = centre_y(static_cast<std::size_t>(r));
            for (long col = c0; col <= c1; ++col) {
                const double px = centre_x(static_cast<std::size_t>(col));
                const double w0 = (c[0] - b[0]) * (py - b[1]) - (c[1] - b[1]) * (px - b[0]);
                const double w1 = (a[0] - c[0]) * (py - c[1]) - (a[1] - c[1]) * (px - c[0]);
                const double w2 = (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]);
                if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
                const double z = (w0 * a[2] + w1 * b[2] + w2 * c[2]) / area2;
                const std::size_t pix = static_cast<std::size_t>(r) * res + static_cast<std::size_t>(col);
                if (z <= depth[pix]) continue;
                depth[pix] = z;
                out.rgb.set_pixel(static_cast<std::size_t>(r), static_cast<std::size_t>(col), color);
                out.normal.set_pixel(static_cast<std::size_t>(r), static_cast<std::size_t>(col), unit);
                out.alpha.set(static_cast<std::size_t>(r), static_cast<std::size_t>(col), true);
            }
        }
    }
    return out;
}

}  // namespace

ViewBundle render_views(const ToyMesh& mesh, std::size_t resolution) {
    if (mesh.vertices.empty() || mesh.faces.empty()) throw InvalidMesh("empty mesh");
    if (resolution < 16) throw InvalidInput("resolution must be at least 16");
    const ToyMesh norm_mesh = normalize_to_unit_cube(mesh);

    ViewBundle bundle;
    for (const auto& f : norm_mesh.faces) {
        const auto& a = norm_mesh.vertices[f[0]];
        if (!(norm(cross(sub(norm_mesh.vertices[f[1]], a), sub(norm_mesh.vertices[f[2]], a))) > 1e-14))
            ++bundle.degenerate_faces;
    }
    for (ViewId v : kAllViews) bundle[v] = render_one(norm_mesh, v, resolution);
    return bundle;
}

double ViewWeights::sum() const {
    double s = 0.0;
    for (double w : weight) s += w;
    return s;
}

void ViewWeights::validate() const {
    for (double w : weight)
        if (!(w >= 0.0)) throw ConfigError("view weights must be nonnegative");
    if (std::abs(sum() - 1.0) > 1e-9) throw ConfigError("view weights must sum to 1");
}

ViewWeights default_view_weights() {
    ViewWeights w;
    w.weight = {0.10, 0.18, 0.18, 0.18, 0.18, 0.18};
    return w;
}

}  // namespace c33d
