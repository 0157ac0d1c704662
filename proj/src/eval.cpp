#include "c33d/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <unordered_map>

#include <json.hpp>

#include "c33d/error.hpp"
#include "c33d/rng.hpp"
#include "c33d/tmdiff.hpp"

namespace c33d {

void PointCloud::validate() const {
    if (points.empty()) throw InvalidInput("point cloud is empty");
    for (const auto& p : points)
        if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2]))
            throw InvalidInput("point cloud has non-finite coordinates");
}

namespace {

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }

double tri_area(const Vec3& a, const Vec3& b, const Vec3& c) {
    const Vec3 u = sub(b, a);
    const Vec3 v = sub(c, a);
    const Vec3 n = {u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]};
    return 0.5 * std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
}

inline bool within(const Vec3& a, const Vec3& b, double t2) {
    const double dx = a[0] - b[0];
    const double dy = a[1] - b[1];
    const double dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz <= t2;
}

double harmonic(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

struct CellHash {
    std::size_t operator()(const std::array<std::int64_t, 3>& c) const noexcept {
        std::uint64_t h = splitmix64(static_cast<std::uint64_t>(c[0]));
        h = hash_combine(h, static_cast<std::uint64_t>(c[1]));
        return hash_combine(h, static_cast<std::uint64_t>(c[2]));
    }
};

class PointGrid {
public:
    PointGrid(const PointCloud& cloud, double cell) : cloud_(cloud), inv_(1.0 / cell) {
        for (std::size_t i = 0; i < cloud.points.size(); ++i) cells_[cell_of(cloud.points[i])].push_back(i);
    }

    bool any_within(const Vec3& p, double t2) const {
        const auto c = cell_of(p);
        for (std::int64_t dx = -1; dx <= 1; ++dx)
            for (std::int64_t dy = -1; dy <= 1; ++dy)
                for (std::int64_t dz = -1; dz <= 1; ++dz) {
                    const auto it = cells_.find({c[0] + dx, c[1] + dy, c[2] + dz});
                    if (it == cells_.end()) continue;
                    for (std::size_t i : it->second)
                        if (within(p, cloud_.points[i], t2)) return true;
                }
        return false;
    }

private:
    std::array<std::int64_t, 3> cell_of(const Vec3& p) const {
        return {static_cast<std::int64_t>(std::floor(p[0] * inv_)), static_cast<std::int64_t>(std::floor(p[1] * inv_)),
                static_cast<std::int64_t>(std::floor(p[2] * inv_))};
    }

    const PointCloud& cloud_;
    double inv_;
    std::unordered_map<std::array<std::int64_t, 3>, std::vector<std::size_t>, CellHash> cells_;
};

void check_threshold(double threshold) {
    if (!(threshold > 0.0) || !std::isfinite(threshold)) throw InvalidInput("F-score threshold must be positive");
}

}  // namespace

PointCloud sample_point_cloud(const ToyMesh& mesh, std::size_t count, std::uint64_t seed) {
    if (count == 0) throw InvalidInput("point count must be positive");
    const ToyMesh norm = normalize_to_unit_cube(mesh);
    std::vector<double> cumulative;
    cumulative.reserve(norm.faces.size());
    double total = 0.0;
    for (const auto& f : norm.faces) {
        total += tri_area(norm.vertices[f[0]], norm.vertices[f[1]], norm.vertices[f[2]]);
        cumulative.push_back(total);
    }
    if (!(total > 0.0)) throw InvalidMesh("mesh has zero surface area");

    Rng rng(seed);
    PointCloud cloud;
    cloud.points.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        const double pick = rng.uniform() * total;
        std::size_t fi = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), pick) -
                                                  cumulative.begin());
        if (fi >= norm.faces.size()) fi = norm.faces.size() - 1;
        const auto& f = norm.faces[fi];
        double r1 = rng.uniform();
        double r2 = rng.uniform();
        if (r1 + r2 > 1.0) {
            r1 = 1.0 - r1;
            r2 = 1.0 - r2;
        }
        const Vec3& a = norm.vertices[f[0]];
        const Vec3& b = norm.vertices[f[1]];
        const Vec3& c = norm.vertices[f[2]];
        cloud.points.push_back({a[0] + r1 * (b[0] - a[0]) + r2 * (c[0] - a[0]),
                                a[1] + r1 * (b[1] - a[1]) + r2 * (c[1] - a[1]),
                                a[2] + r1 * (b[2] - a[2]) + r2 * (c[2] - a[2])});
    }
    return cloud;
}

void write_ply(const std::filesystem::path& path, const PointCloud& cloud) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
        << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
    char buf[96];
    for (const auto& p : cloud.points) {
        std::snprintf(buf, sizeof buf, "%.7g %.7g %.7g\n", p[0], p[1], p[2]);
        out << buf;
    }
    if (!out) throw IoError("failed writing " + path.string());
}

FScore f_score_detail(const PointCloud& o, const PointCloud& m, double threshold) {
    o.validate();
    m.validate();
    check_threshold(threshold);
    const double t2 = threshold * threshold;
    // Slightly wider cells so that rounding in the cell index can never
    // separate two points that pass the distance test.
    const double cell = threshold * (1.0 + 1e-9);
    const PointGrid grid_m(m, cell);
    const PointGrid grid_o(o, cell);
    std::size_t hit_o = 0;
    for (const auto& p : o.points) hit_o += grid_m.any_within(p, t2) ? 1 : 0;
    std::size_t hit_m = 0;
    for (const auto& p : m.points) hit_m += grid_o.any_within(p, t2) ? 1 : 0;
    FScore s;
    s.precision = static_cast<double>(hit_o) / static_cast<double>(o.size());
    s.recall = static_cast<double>(hit_m) / static_cast<double>(m.size());
    s.f = harmonic(s.precision, s.recall);
    return s;
}

double f_score_geo(const PointCloud& o, const PointCloud& m, double threshold) {
    return f_score_detail(o, m, threshold).f;
}

double f_score_geo_bruteforce(const PointCloud& o, const PointCloud& m, double threshold) {
    o.validate();
    m.validate();
    check_threshold(threshold);
    const double t2 = threshold * threshold;
    const auto matched = [t2](const PointCloud& from, const PointCloud& to) {
        std::size_t n = 0;
        for (const auto& p : from.points)
            for (const auto& q : to.points)
                if (within(p, q, t2)) {
                    ++n;
                    break;
                }
        return static_cast<double>(n) / static_cast<double>(from.size());
    };
    return harmonic(matched(o, m), matched(m, o));
}

double mean_of(const PerView<double>& values) {
    double s = 0.0;
    for (double v : values) s += v;
    return s / static_cast<double>(values.size());
}

PerView<double> texture_cosines(const ViewBundle& renders_o, const ViewBundle& renders_m, const Embedder& embedder) {
    require_complete(renders_o);
    require_complete(renders_m);
    PerView<double> out{};
    for (ViewId v : kAllViews)
        out[index_of(v)] = cosine(embedder.embed_image(renders_o[v].rgb, renders_o[v].alpha),
                                  embedder.embed_image(renders_m[v].rgb, renders_m[v].alpha));
    return out;
}

double s_texture_models(const ViewBundle& renders_o, const ViewBundle& renders_m, const Embedder& embedder) {
    return mean_of(texture_cosines(renders_o, renders_m, embedder));
}

PerView<double> text_cosines(const ViewBundle& renders_o, std::string_view category, const Embedder& embedder) {
    require_complete(renders_o);
    if (category.empty()) throw InvalidInput("category must be non-empty");
    const auto text = embedder.embed_text(category);
    PerView<double> out{};
    for (ViewId v : kAllViews)
        out[index_of(v)] = cosine(embedder.embed_image_clip(renders_o[v].rgb, renders_o[v].alpha), text);
    return out;
}

double s_text_model(const ViewBundle& renders_o, std::string_view category, const Embedder& embedder) {
    return mean_of(text_cosines(renders_o, category, embedder));
}

double normalize_cosine(double c, double eps) { return std::clamp((c + 1.0) / 2.0, eps, 1.0 - eps); }

double normalize_fscore(double f, double eps) { return std::clamp(f, eps, 1.0 - eps); }

EvalReport compose_report(double s_geo, double s_texture, double s_text) {
    EvalReport r;
    r.s_geo = s_geo;
    r.s_texture = s_texture;
    r.s_3d = (s_geo + s_texture) / 2.0;
    r.s_text = s_text;
    r.s_3d_norm = (normalize_fscore(s_geo) + normalize_cosine(s_texture)) / 2.0;
    r.s_text_norm = normalize_cosine(s_text);
    r.f_sim = r.s_3d_norm * r.s_text_norm;
    return r;
}

EvalReport f_sim(const PointCloud& o_cloud, const PointCloud& m_cloud, const ViewBundle& renders_o,
                 const ViewBundle& renders_m, std::string_view category, const Embedder& embedder, double threshold,
                 bool use_oracle) {
    FScore fs;
    if (use_oracle) {
        fs.f = f_score_geo_bruteforce(o_cloud, m_cloud, threshold);
        fs.precision = fs.recall = std::numeric_limits<double>::quiet_NaN();
    } else {
        fs = f_score_detail(o_cloud, m_cloud, threshold);
    }
    const auto tex = texture_cosines(renders_o, renders_m, embedder);
    const auto txt = text_cosines(renders_o, category, embedder);
    EvalReport r = compose_report(fs.f, mean_of(tex), mean_of(txt));
    r.precision = fs.precision;
    r.recall = fs.recall;
    r.texture_per_view = tex;
    r.text_per_view = txt;
    r.threshold = threshold;
    r.oracle = use_oracle;
    return r;
}

std::string EvalReport::to_json() const {
    nlohmann::json tex = nlohmann::json::object();
    nlohmann::json txt = nlohmann::json::object();
    for (ViewId v : kAllViews) {
        tex[std::string(tag(v))] = texture_per_view[index_of(v)];
        txt[std::string(tag(v))] = text_per_view[index_of(v)];
    }
    nlohmann::json j = {{"s_geo", s_geo},
                        {"s_texture", s_texture},
                        {"s_3d", s_3d},
                        {"s_text", s_text},
                        {"s_3d_normalized", s_3d_norm},
                        {"s_text_normalized", s_text_norm},
                        {"f_sim", f_sim},
                        {"threshold", threshold},
                        {"geo_oracle", oracle},
                        {"texture_per_view", tex},
                        {"text_per_view", txt}};
    if (std::isfinite(precision)) {
        j["precision"] = precision;
        j["recall"] = recall;
    }
    return j.dump(2);
}

}  // namespace c33d
