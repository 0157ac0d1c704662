#include "c33d/fai.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <future>
#include <set>

#include <json.hpp>

namespace c33d {

AlphaGrid AlphaGrid::standard() { return from_range(1, 901, 100); }

AlphaGrid AlphaGrid::from_range(std::size_t lo, std::size_t hi, std::size_t stride) {
    if (stride == 0) throw ConfigError("alpha grid stride must be positive");
    if (lo < 1 || hi < lo) throw ConfigError("alpha grid needs 1 <= lo <= hi");
    AlphaGrid g;
    for (std::size_t a = lo; a <= hi; a += stride) g.candidates.push_back(a);
    return g;
}

AlphaGrid AlphaGrid::parse(std::string_view text) {
    std::size_t parts[3] = {0, 0, 0};
    std::size_t idx = 0;
    std::size_t start = 0;
    while (true) {
        const std::size_t colon = text.find(':', start);
        const std::string_view field = text.substr(start, colon == std::string_view::npos ? text.npos : colon - start);
        if (idx >= 3) throw ConfigError("alpha grid must be lo:hi:stride, got '" + std::string(text) + "'");
        const auto res = std::from_chars(field.data(), field.data() + field.size(), parts[idx]);
        if (res.ec != std::errc() || res.ptr != field.data() + field.size() || field.empty())
            throw ConfigError("alpha grid must be lo:hi:stride, got '" + std::string(text) + "'");
        ++idx;
        if (colon == std::string_view::npos) break;
        start = colon + 1;
    }
    if (idx != 3) throw ConfigError("alpha grid must be lo:hi:stride, got '" + std::string(text) + "'");
    return from_range(parts[0], parts[1], parts[2]);
}

void AlphaGrid::validate(std::size_t max_alpha) const {
    if (candidates.empty()) throw ConfigError("alpha grid is empty");
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (candidates[i] < 1 || candidates[i] > max_alpha)
            throw ConfigError("alpha " + std::to_string(candidates[i]) + " outside [1, " + std::to_string(max_alpha) +
                              "]");
        if (i > 0 && candidates[i] <= candidates[i - 1]) throw ConfigError("alpha grid must be strictly increasing");
    }
}

double FusionReport::recompute(const ViewWeights& weights) const {
    double total_sum = 0.0;
    for (ViewId v : kAllViews) total_sum += weights[v] * s3d[index_of(v)] * stext[index_of(v)];
    return total_sum;
}

double s3d_from_cosines(double cos_image, double cos_normal, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidInput("lambda must lie in [0, 1]");
    return lambda * cos_image + (1.0 - lambda) * cos_normal;
}

double s3d_view(const Image& i_out, const Image& n_out, const Image& i_ref, const Image& n_ref, const Mask& mask_out,
                const Mask& mask_ref, double lambda, const Embedder& embedder) {
    if (i_out.height() != i_ref.height() || i_out.width() != i_ref.width() || n_out.height() != n_ref.height() ||
        n_out.width() != n_ref.width())
        throw ShapeError("s3d_view: output and reference resolutions differ");
    const double ci = cosine(embedder.embed_image(i_out, mask_out), embedder.embed_image(i_ref, mask_ref));
    const double cn = cosine(embedder.embed_image(encode_normals(n_out), mask_out),
                             embedder.embed_image(encode_normals(n_ref), mask_ref));
    return s3d_from_cosines(ci, cn, lambda);
}

double stext_view(const Image& i_out, const Mask& mask, std::string_view category, const Embedder& embedder) {
    if (category.empty()) throw InvalidInput("category must be non-empty");
    return cosine(embedder.embed_image_clip(i_out, mask), embedder.embed_text(category));
}

double fusion_score(const PerView<std::optional<ViewScore>>& per_view, const ViewWeights& weights) {
    double total = 0.0;
    for (ViewId v : kAllViews) {
        const auto& s = per_view[index_of(v)];
        if (!s) throw IncompleteBundle("fusion score: no score for view " + std::string(tag(v)));
        total += weights[v] * s->s3d * s->stext;
    }
    return total;
}

FusionReport make_report(std::size_t alpha, const PerView<ViewScore>& per_view, const ViewWeights& weights) {
    FusionReport r;
    r.alpha = alpha;
    PerView<std::optional<ViewScore>> opt;
    for (std::size_t i = 0; i < kViewCount; ++i) {
        r.s3d[i] = per_view[i].s3d;
        r.stext[i] = per_view[i].stext;
        opt[i] = per_view[i];
    }
    r.total = fusion_score(opt, weights);
    return r;
}

std::string_view to_string(SearchMode m) noexcept { return m == SearchMode::Ternary ? "ternary" : "exhaustive"; }

SearchMode search_mode_from_string(std::string_view s) {
    if (s == "ternary") return SearchMode::Ternary;
    if (s == "exhaustive") return SearchMode::Exhaustive;
    throw ConfigError("unknown fai mode '" + std::string(s) + "' (expected ternary or exhaustive)");
}

std::string_view to_string(TieBreak t) noexcept { return t == TieBreak::LowerAlpha ? "lower" : "higher"; }

TieBreak tie_break_from_string(std::string_view s) {
    if (s == "lower") return TieBreak::LowerAlpha;
    if (s == "higher") return TieBreak::HigherAlpha;
    throw ConfigError("unknown tie break '" + std::string(s) + "' (expected lower or higher)");
}

AlphaEvaluationError::AlphaEvaluationError(std::size_t alpha, std::exception_ptr cause, const std::string& what)
    : Error("alpha " + std::to_string(alpha) + ": " + what), alpha_(alpha), cause_(std::move(cause)) {}

FusionReport AlphaMemo::operator()(std::size_t alpha) {
    {
        std::lock_guard lock(mu_);
        if (auto it = cache_.find(alpha); it != cache_.end()) return it->second;
    }
    FusionReport r = fn_(alpha);
    std::lock_guard lock(mu_);
    auto [it, inserted] = cache_.emplace(alpha, r);
    if (inserted) it->second.evaluations_used = cache_.size();
    return it->second;
}

std::size_t AlphaMemo::evaluations() const {
    std::lock_guard lock(mu_);
    return cache_.size();
}

bool AlphaMemo::contains(std::size_t alpha) const {
    std::lock_guard lock(mu_);
    return cache_.count(alpha) != 0;
}

bool consistent_with_unimodal(const std::vector<double>& values) {
    bool falling = false;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] < values[i - 1]) falling = true;
        else if (values[i] > values[i - 1] && falling) return false;
    }
    return true;
}

namespace {

class Search {
public:
    Search(const AlphaEvaluator& evaluate, const AlphaGrid& grid, const FaiOptions& opts)
        : evaluate_(evaluate), grid_(grid), opts_(opts) {}

    // Evaluates grid indices in one round, concurrently when allowed.
    std::vector<double> probe(const std::vector<std::size_t>& indices) {
        std::vector<std::size_t> fresh;
        for (std::size_t i : indices)
            if (!memo_.count(i) && std::find(fresh.begin(), fresh.end(), i) == fresh.end()) fresh.push_back(i);
        std::vector<FusionReport> got(fresh.size());
        if (opts_.parallel && fresh.size() > 1) {
            std::vector<std::future<FusionReport>> jobs;
            for (std::size_t i : fresh) jobs.push_back(std::async(std::launch::async, [this, i] { return call(i); }));
            for (std::size_t k = 0; k < jobs.size(); ++k) got[k] = jobs[k].get();
        } else {
            for (std::size_t k = 0; k < fresh.size(); ++k) got[k] = call(fresh[k]);
        }
        for (std::size_t k = 0; k < fresh.size(); ++k) {
            got[k].evaluations_used = memo_.size() + 1;
            memo_.emplace(fresh[k], got[k]);
        }

        std::vector<double> out;
        std::set<std::size_t> seen_this_round;
        for (std::size_t i : indices) {
            const bool hit = std::find(fresh.begin(), fresh.end(), i) == fresh.end() || seen_this_round.count(i);
            seen_this_round.insert(i);
            trace_.push_back({grid_[i], i, round_, hit, memo_.at(i)});
            out.push_back(memo_.at(i).total);
        }
        return out;
    }

    FaiResult finish() {
        FaiResult res;
        bool have = false;
        std::size_t best_i = 0;
        for (const auto& [i, r] : memo_) {
            const double bt = have ? memo_.at(best_i).total : 0.0;
            // memo_ iterates in increasing alpha, so ">" keeps the lowest on ties.
            if (!have || r.total > bt || (opts_.tie_break == TieBreak::HigherAlpha && r.total == bt)) {
                best_i = i;
                have = true;
            }
        }
        res.alpha_star = grid_[best_i];
        res.best = memo_.at(best_i);
        res.trace = std::move(trace_);
        res.evaluations = memo_.size();
        res.rounds = round_;
        std::vector<double> ordered;
        for (const auto& [i, r] : memo_) ordered.push_back(r.total);
        res.unimodal_consistent = consistent_with_unimodal(ordered);
        return res;
    }

    void next_round() { ++round_; }

private:
    FusionReport call(std::size_t i) const {
        const std::size_t alpha = grid_[i];
        try {
            FusionReport r = evaluate_(alpha);
            r.alpha = alpha;
            return r;
        } catch (const std::exception& e) {
            throw AlphaEvaluationError(alpha, std::current_exception(), e.what());
        }
    }

    const AlphaEvaluator& evaluate_;
    const AlphaGrid& grid_;
    const FaiOptions& opts_;
    std::map<std::size_t, FusionReport> memo_;
    std::vector<FaiProbe> trace_;
    std::size_t round_ = 0;
};

}  // namespace

FaiResult adaptive_inversion(const AlphaEvaluator& evaluate, const AlphaGrid& grid, const FaiOptions& opts) {
    if (grid.candidates.empty()) throw ConfigError("alpha grid is empty");
    for (std::size_t i = 1; i < grid.size(); ++i)
        if (grid[i] <= grid[i - 1]) throw ConfigError("alpha grid must be strictly increasing");

    Search search(evaluate, grid, opts);
    if (opts.mode == SearchMode::Exhaustive) {
        std::vector<std::size_t> all(grid.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        search.next_round();
        search.probe(all);
        return search.finish();
    }

    std::size_t lo = 0;
    std::size_t hi = grid.size() - 1;
    while (hi - lo > 2) {
        const std::size_t m1 = lo + (hi - lo) / 3;
        const std::size_t m2 = hi - (hi - lo) / 3;
        search.next_round();
        const auto f = search.probe({m1, m2});
        const bool go_right = opts.tie_break == TieBreak::LowerAlpha ? f[0] < f[1] : f[0] <= f[1];
        if (go_right) lo = m1 + 1;
        else hi = m2 - 1;
    }
    std::vector<std::size_t> rest;
    for (std::size_t i = lo; i <= hi; ++i) rest.push_back(i);
    search.next_round();
    search.probe(rest);
    return search.finish();
}

namespace {

nlohmann::json per_view_json(const PerView<double>& values) {
    nlohmann::json j = nlohmann::json::object();
    for (ViewId v : kAllViews) j[std::string(tag(v))] = values[index_of(v)];
    return j;
}

nlohmann::json report_to_json(const FusionReport& r) {
    return {{"alpha", r.alpha},
            {"total", r.total},
            {"s3d", per_view_json(r.s3d)},
            {"stext", per_view_json(r.stext)},
            {"evaluations_used", r.evaluations_used}};
}

}  // namespace

std::string fusion_report_json(const FusionReport& report) { return report_to_json(report).dump(); }

void write_fai_trace(const std::filesystem::path& path, const FaiResult& result) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& p : result.trace) {
        nlohmann::json j = report_to_json(p.report);
        j["round"] = p.round;
        j["index"] = p.index;
        j["memo_hit"] = p.memo_hit;
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace c33d
