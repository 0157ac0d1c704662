#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>

#include "c33d/backends.hpp"
#include "c33d/dump.hpp"
#include "c33d/schedule.hpp"
#include "c33d/tmdiff.hpp"
#include "c33d/views.hpp"

namespace c33d {

inline constexpr std::uint32_t kSmdiffStage = 2;

struct SMDiffConfig {
    std::size_t alpha = 401;          // inversion depth on the total_steps grid
    std::size_t total_steps = 1000;
    // Extra noise added at alpha; nullopt selects default_edit_noise_scale().
    std::optional<double> edit_noise_scale;
    std::uint64_t seed = 0;
    bool replay_noise = false;

    void validate(std::size_t schedule_steps) const;  // throws ConfigError
};

// Noise added at depth alpha when no scale is configured: the per-step
// ancestral std of the base schedule at alpha for deterministic (ddim-like)
// samplers, zero for ancestral-like ones which already inject noise.
double default_edit_noise_scale(const ScheduleCoeffs& sched, std::size_t alpha);

// View-specific prompts for the color and normal latents; "{view}" is
// replaced by the view's full name.
struct PromptPair {
    std::string color_template = "a rendering image of 3D models, {view}-view, color map";
    std::string normal_template = "a rendering image of 3D models, {view}-view, normal map";

    std::string render(ViewId view, NoiseRole role) const;
};

std::string_view view_name(ViewId v) noexcept;  // "front", "front-right", ...

struct JointLatents {
    PerView<LatentGrid> y;  // image latents
    PerView<LatentGrid> z;  // normal latents

    const LatentGrid& get(ViewId v, NoiseRole role) const {
        return role == NoiseRole::Rgb ? y[index_of(v)] : z[index_of(v)];
    }
    LatentGrid& get(ViewId v, NoiseRole role) { return role == NoiseRole::Rgb ? y[index_of(v)] : z[index_of(v)]; }
    void validate() const;  // throws IncompleteBundle / ShapeError
};

// Noise addition from step 1 to alpha for every (view, role) with tau set
// to the role's prompt and eta null; every draw is recorded in the ledger.
JointLatents smdiff_invert(const JointLatents& latents, const PromptPair& prompts, const Denoiser& denoiser,
                           const ScheduleCoeffs& sched, const SMDiffConfig& cfg, NoiseLedger& ledger);

// {y + eps_y, z + eps_z}, eps ~ N(0, scale^2) from the seeded generator.
JointLatents add_edit_noise(const JointLatents& latents, double scale, std::uint64_t seed);

// Denoising from alpha to 0 with eta = x_nov_f concatenated to the input
// and added to the time embedding.
JointLatents smdiff_denoise(const JointLatents& latents, const std::shared_ptr<const LatentGrid>& x_nov_f,
                            const PromptPair& prompts, const Denoiser& denoiser, const ScheduleCoeffs& sched,
                            const SMDiffConfig& cfg, NoiseLedger& ledger);

struct SMDiffImages {
    PerView<Image> images;   // clamped to [0, 1]
    PerView<Image> normals;  // unit length inside the mask, zero outside
};

SMDiffImages decode_joint(const JointLatents& latents, const PerView<Mask>& masks, const LatentCodec& codec);

// Renormalizes decoded normals to unit length inside the mask.
Image renormalize_normals(const Image& normals, const Mask& mask);

struct SMDiffInputs {
    PerView<Image> images;   // I_TMDiff^s (front = I_nov^f)
    PerView<Image> normals;  // N^s, unit vectors
    PerView<Mask> masks;
    Image i_nov_f;
};

SMDiffInputs smdiff_inputs(const TexturedBundle& textured, const ViewBundle& bundle, const Image& i_nov_f);

struct SMDiffResult {
    PerView<Image> images;
    PerView<Image> normals;
    JointLatents at_alpha;
    JointLatents noised;
    NoiseLedger ledger;
    double edit_noise_scale = 0.0;

    // Packs output s as a rendered view using the input mask.
    RenderedView view(ViewId v, const PerView<Mask>& masks) const;
};

// encode -> invert to alpha -> edit noise -> conditional denoise -> decode.
// The dump sink sees the latents at alpha, after the edit noise, and final.
SMDiffResult smdiff_run(const SMDiffInputs& inputs, const LatentCodec& codec, const Denoiser& denoiser,
                        const ScheduleCoeffs& sched, const SMDiffConfig& cfg, const PromptPair& prompts = {},
                        const DumpSink& dump = {});

}  // namespace c33d
