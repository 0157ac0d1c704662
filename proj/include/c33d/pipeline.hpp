#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "c33d/backends.hpp"
#include "c33d/eval.hpp"
#include "c33d/fai.hpp"
#include "c33d/schedule.hpp"
#include "c33d/smdiff.hpp"
#include "c33d/tmdiff.hpp"
#include "c33d/views.hpp"

namespace c33d {

struct RunConfig {
    std::filesystem::path mesh;
    std::string category;
    std::size_t resolution = 512;
    std::string backend = "toy";
    std::uint64_t seed = 0;
    std::filesystem::path out_dir = "c33d_out";
    std::set<std::string> dump_stages;  // subset of {"tmdiff", "smdiff"}

    // texture stage
    std::size_t tmdiff_steps = 4;
    SamplerKind tmdiff_sampler = SamplerKind::AncestralLike;
    bool injection_enabled = true;
    std::optional<std::pair<std::size_t, std::size_t>> injection_layers;  // backend default when unset
    std::pair<std::size_t, std::size_t> injection_steps{3, 4};
    bool tmdiff_replay_noise = false;

    // shape stage
    std::size_t smdiff_total_steps = 1000;
    SamplerKind smdiff_sampler = SamplerKind::DdimLike;
    std::optional<double> edit_noise_scale;  // unset: default_edit_noise_scale
    bool smdiff_replay_noise = false;

    // alpha search
    AlphaGrid alpha_grid = AlphaGrid::standard();
    SearchMode fai_mode = SearchMode::Ternary;
    TieBreak tie_break = TieBreak::LowerAlpha;
    bool fai_parallel = false;
    ViewWeights weights = default_view_weights();
    double lambda = kDefaultLambda;

    // export
    std::size_t point_count = 4096;
};

// Reads a JSON config file over the defaults; unknown keys are rejected.
RunConfig load_run_config(const std::filesystem::path& path);
void merge_run_config(RunConfig& cfg, std::string_view json_text);  // throws ConfigError
std::string run_config_json(const RunConfig& cfg);

// Throws ConfigError describing the first violated constraint.
void validate_run_config(const RunConfig& cfg);

TMDiffConfig tmdiff_config(const RunConfig& cfg, const Backend& backend, std::size_t site_count);
SMDiffConfig smdiff_config(const RunConfig& cfg, std::size_t alpha);

// Shared inputs of one alpha evaluation.
struct FaiContext {
    const ViewBundle* bundle = nullptr;  // original renders, the similarity reference
    SMDiffInputs inputs;
    const LatentCodec* codec = nullptr;
    const Embedder* embedder = nullptr;
    const Denoiser* denoiser = nullptr;
    const ScheduleCoeffs* sched = nullptr;
    SMDiffConfig smdiff;  // alpha overwritten per call
    PromptPair prompts;
    ViewWeights weights = default_view_weights();
    double lambda = kDefaultLambda;
    std::string category;
    DumpSink dump;
};

// Runs the shape stage at alpha and scores it against the original renders.
FusionReport evaluate_alpha(std::size_t alpha, const FaiContext& ctx, SMDiffResult* result = nullptr);

struct RunManifest {
    std::string status = "ok";  // "ok" | "failed"
    std::string failed_stage;
    std::string error;
    std::string config_json;
    std::filesystem::path out_dir;
    std::map<std::string, std::string> artifacts;  // name -> path relative to out_dir
    std::optional<std::size_t> alpha_star;
    std::optional<FusionReport> report;
    std::string fai_mode;
    std::size_t fai_evaluations = 0;
    std::size_t fai_rounds = 0;
    bool fai_unimodal_consistent = true;
    std::vector<std::pair<std::string, double>> timings;  // stage -> seconds

    std::string to_json() const;
};

// render -> fuse front -> texture stage -> alpha search -> shape stage at
// alpha* -> export. Writes manifest.json (also on failure, with the stage
// that failed) and rethrows stage failures as StageError.
RunManifest run_pipeline(const RunConfig& cfg);

}  // namespace c33d
