#pragma once

#include <cstddef>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "c33d/backends.hpp"
#include "c33d/error.hpp"
#include "c33d/views.hpp"

namespace c33d {

inline constexpr double kDefaultLambda = 0.5;

// Candidate inversion depths, strictly increasing.
struct AlphaGrid {
    std::vector<std::size_t> candidates;

    static AlphaGrid standard();  // {1, 101, ..., 901}
    static AlphaGrid from_range(std::size_t lo, std::size_t hi, std::size_t stride);
    static AlphaGrid parse(std::string_view text);  // "lo:hi:stride", throws ConfigError

    std::size_t size() const noexcept { return candidates.size(); }
    std::size_t operator[](std::size_t i) const { return candidates[i]; }
    void validate(std::size_t max_alpha) const;  // throws ConfigError
};

struct ViewScore {
    double s3d = 0.0;
    double stext = 0.0;
};

struct FusionReport {
    std::size_t alpha = 0;
    PerView<double> s3d{};
    PerView<double> stext{};
    double total = 0.0;
    std::size_t evaluations_used = 0;

    // Weighted sum of the stored per-view products.
    double recompute(const ViewWeights& weights) const;
};

// lambda * cos_image + (1 - lambda) * cos_normal
double s3d_from_cosines(double cos_image, double cos_normal, double lambda);

// Structural similarity of one output view against the input render;
// normal maps are embedded in their (n + 1) / 2 image encoding.
double s3d_view(const Image& i_out, const Image& n_out, const Image& i_ref, const Image& n_ref, const Mask& mask_out,
                const Mask& mask_ref, double lambda, const Embedder& embedder);

double stext_view(const Image& i_out, const Mask& mask, std::string_view category, const Embedder& embedder);

// Sum over views of w_s * s3d_s * stext_s; throws IncompleteBundle when a
// view has no score.
double fusion_score(const PerView<std::optional<ViewScore>>& per_view, const ViewWeights& weights);

FusionReport make_report(std::size_t alpha, const PerView<ViewScore>& per_view, const ViewWeights& weights);

enum class SearchMode { Ternary, Exhaustive };
enum class TieBreak { LowerAlpha, HigherAlpha };

std::string_view to_string(SearchMode m) noexcept;
SearchMode search_mode_from_string(std::string_view s);  // throws ConfigError
std::string_view to_string(TieBreak t) noexcept;
TieBreak tie_break_from_string(std::string_view s);  // throws ConfigError

using AlphaEvaluator = std::function<FusionReport(std::size_t alpha)>;

// Raised when the evaluator fails; carries the probed alpha and the cause.
class AlphaEvaluationError : public Error {
public:
    AlphaEvaluationError(std::size_t alpha, std::exception_ptr cause, const std::string& what);
    std::size_t alpha() const noexcept { return alpha_; }
    std::exception_ptr cause() const noexcept { return cause_; }

private:
    std::size_t alpha_;
    std::exception_ptr cause_;
};

// Caches evaluator results by alpha; each alpha reaches the wrapped
// function at most once. Thread-safe.
class AlphaMemo {
public:
    explicit AlphaMemo(AlphaEvaluator fn) : fn_(std::move(fn)) {}

    FusionReport operator()(std::size_t alpha);
    std::size_t evaluations() const;
    bool contains(std::size_t alpha) const;

private:
    AlphaEvaluator fn_;
    mutable std::mutex mu_;
    std::map<std::size_t, FusionReport> cache_;
};

struct FaiOptions {
    SearchMode mode = SearchMode::Ternary;
    TieBreak tie_break = TieBreak::LowerAlpha;
    bool parallel = false;  // evaluate independent probes concurrently
};

struct FaiProbe {
    std::size_t alpha = 0;
    std::size_t index = 0;  // position in the grid
    std::size_t round = 0;  // 1-based
    bool memo_hit = false;
    FusionReport report;
};

struct FaiResult {
    std::size_t alpha_star = 0;
    FusionReport best;
    std::vector<FaiProbe> trace;
    std::size_t evaluations = 0;  // distinct alphas evaluated
    std::size_t rounds = 0;
    // False when the probed totals, ordered by alpha, contain a valley.
    bool unimodal_consistent = true;
};

FaiResult adaptive_inversion(const AlphaEvaluator& evaluate, const AlphaGrid& grid, const FaiOptions& opts = {});

// True when values (in grid order) rise then fall without a valley.
bool consistent_with_unimodal(const std::vector<double>& values);

// One JSON object per probe.
void write_fai_trace(const std::filesystem::path& path, const FaiResult& result);
std::string fusion_report_json(const FusionReport& report);

}  // namespace c33d
