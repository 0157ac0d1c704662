#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "c33d/backends.hpp"
#include "c33d/views.hpp"

namespace c33d {

inline constexpr double kFScoreThreshold = 0.02;
inline constexpr double kNormEpsilon = 1e-6;

struct PointCloud {
    std::vector<Vec3> points;

    std::size_t size() const noexcept { return points.size(); }
    void validate() const;  // non-empty, finite; throws InvalidInput
};

// Uniform by face area over the unit-cube-normalized mesh.
PointCloud sample_point_cloud(const ToyMesh& mesh, std::size_t count = 4096, std::uint64_t seed = 0);

void write_ply(const std::filesystem::path& path, const PointCloud& cloud);

struct FScore {
    double precision = 0.0;
    double recall = 0.0;
    double f = 0.0;
};

// Nearest-match precision/recall at `threshold` (squared distances compared
// against threshold^2), via a uniform hash grid.
FScore f_score_detail(const PointCloud& o, const PointCloud& m, double threshold = kFScoreThreshold);
double f_score_geo(const PointCloud& o, const PointCloud& m, double threshold = kFScoreThreshold);
// All-pairs reference implementation.
double f_score_geo_bruteforce(const PointCloud& o, const PointCloud& m, double threshold = kFScoreThreshold);

double mean_of(const PerView<double>& values);

// Per-view cosines of phi(rgb) between two bundles.
PerView<double> texture_cosines(const ViewBundle& renders_o, const ViewBundle& renders_m, const Embedder& embedder);
double s_texture_models(const ViewBundle& renders_o, const ViewBundle& renders_m, const Embedder& embedder);

PerView<double> text_cosines(const ViewBundle& renders_o, std::string_view category, const Embedder& embedder);
double s_text_model(const ViewBundle& renders_o, std::string_view category, const Embedder& embedder);

// Maps into (eps, 1 - eps): cosines via (c + 1) / 2, F-scores directly.
double normalize_cosine(double c, double eps = kNormEpsilon);
double normalize_fscore(double f, double eps = kNormEpsilon);

struct EvalReport {
    double s_geo = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double s_texture = 0.0;
    double s_3d = 0.0;       // mean(s_geo, s_texture)
    double s_text = 0.0;
    double s_3d_norm = 0.0;  // mean of the normalized components
    double s_text_norm = 0.0;
    double f_sim = 0.0;      // s_3d_norm * s_text_norm
    PerView<double> texture_per_view{};
    PerView<double> text_per_view{};
    double threshold = kFScoreThreshold;
    bool oracle = false;

    std::string to_json() const;
};

EvalReport compose_report(double s_geo, double s_texture, double s_text);

EvalReport f_sim(const PointCloud& o_cloud, const PointCloud& m_cloud, const ViewBundle& renders_o,
                 const ViewBundle& renders_m, std::string_view category, const Embedder& embedder,
                 double threshold = kFScoreThreshold, bool use_oracle = false);

}  // namespace c33d
