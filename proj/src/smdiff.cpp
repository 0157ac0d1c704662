#include "c33d/smdiff.hpp"

#include <cmath>
#include <future>
#include <string>
#include <vector>

#include "c33d/error.hpp"

namespace c33d {

void SMDiffConfig::validate(std::size_t schedule_steps) const {
    if (total_steps != schedule_steps)
        throw ConfigError("smdiff total_steps (" + std::to_string(total_steps) + ") does not match the schedule (" +
                          std::to_string(schedule_steps) + ")");
    if (alpha < 1 || alpha > total_steps)
        throw ConfigError("alpha " + std::to_string(alpha) + " outside [1, " + std::to_string(total_steps) + "]");
    if (edit_noise_scale && !(*edit_noise_scale >= 0.0)) throw ConfigError("edit noise scale must be nonnegative");
}

double default_edit_noise_scale(const ScheduleCoeffs& sched, std::size_t alpha) {
    if (sched.kind == SamplerKind::AncestralLike) return 0.0;
    const double ab_t = sched.alpha_bar.at(alpha);
    const double ab_prev = sched.alpha_bar.at(alpha - 1);
    return std::sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_prev);
}

std::string_view view_name(ViewId v) noexcept {
    switch (v) {
        case ViewId::F: return "front";
        case ViewId::FR: return "front-right";
        case ViewId::FL: return "front-left";
        case ViewId::R: return "right";
        case ViewId::L: return "left";
        case ViewId::B: return "back";
    }
    return "?";
}

std::string PromptPair::render(ViewId view, NoiseRole role) const {
    std::string out = role == NoiseRole::Rgb ? color_template : normal_template;
    const std::string needle = "{view}";
    for (auto pos = out.find(needle); pos != std::string::npos; pos = out.find(needle, pos))
        out.replace(pos, needle.size(), view_name(view));
    return out;
}

void JointLatents::validate() const {
    for (ViewId v : kAllViews) {
        const auto& yy = y[index_of(v)];
        const auto& zz = z[index_of(v)];
        if (yy.empty() || zz.empty()) throw IncompleteBundle("joint latents missing view " + std::string(tag(v)));
        require_same_shape(yy, zz, "joint latents y/z");
        require_same_shape(yy, y[0], "joint latents across views");
    }
}

namespace {

constexpr std::array<NoiseRole, 2> kRoles = {NoiseRole::Rgb, NoiseRole::Normal};

NoiseKey smdiff_key(const SMDiffConfig& cfg, ViewId v, NoiseRole role, NoisePhase phase, std::size_t t) {
    return NoiseKey{cfg.seed, kSmdiffStage, static_cast<std::uint32_t>(index_of(v)), role, phase,
                    static_cast<std::uint32_t>(t)};
}

// Runs fn(view, role) over all twelve chains, in parallel when allowed.
template <typename Fn>
void for_each_chain(bool parallel, Fn&& fn) {
    if (!parallel) {
        for (ViewId v : kAllViews)
            for (NoiseRole r : kRoles) fn(v, r);
        return;
    }
    std::vector<std::future<void>> jobs;
    for (ViewId v : kAllViews)
        for (NoiseRole r : kRoles) jobs.push_back(std::async(std::launch::async, [&fn, v, r] { fn(v, r); }));
    for (auto& j : jobs) j.get();
}

}  // namespace

JointLatents smdiff_invert(const JointLatents& latents, const PromptPair& prompts, const Denoiser& denoiser,
                           const ScheduleCoeffs& sched, const SMDiffConfig& cfg, NoiseLedger& ledger) {
    cfg.validate(sched.steps());
    latents.validate();
    JointLatents out;
    for_each_chain(denoiser.concurrent_safe(), [&](ViewId v, NoiseRole role) {
        Condition cond;
        cond.tau = prompts.render(v, role);
        cond.usage = EtaUsage::KeyValue;  // eta is null during inversion
        LatentGrid x = latents.get(v, role);
        for (std::size_t t = 1; t <= cfg.alpha; ++t) {
            const LatentGrid eps = denoiser.predict_noise(x, t, cond, InjectionConfig::disabled());
            const NoiseKey k = smdiff_key(cfg, v, role, NoisePhase::Inversion, t);
            const LatentGrid noise = draw_step_noise(k, k, x, sched.gamma_at(t), eps, ledger);
            x = invert_step(x, eps, noise, sched, t);
        }
        out.get(v, role) = std::move(x);
    });
    return out;
}

JointLatents add_edit_noise(const JointLatents& latents, double scale, std::uint64_t seed) {
    if (!(scale >= 0.0)) throw InvalidInput("edit noise scale must be nonnegative");
    JointLatents out = latents;
    if (scale == 0.0) return out;
    for (ViewId v : kAllViews)
        for (NoiseRole role : kRoles) {
            LatentGrid& g = out.get(v, role);
            const NoiseKey key{seed, kSmdiffStage, static_cast<std::uint32_t>(index_of(v)), role, NoisePhase::Edit, 0};
            const LatentGrid eps = gaussian_grid(key, g.channels(), g.height(), g.width(), scale);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += eps[i];
        }
    return out;
}

JointLatents smdiff_denoise(const JointLatents& latents, const std::shared_ptr<const LatentGrid>& x_nov_f,
                            const PromptPair& prompts, const Denoiser& denoiser, const ScheduleCoeffs& sched,
                            const SMDiffConfig& cfg, NoiseLedger& ledger) {
    if (!x_nov_f) throw MissingCondition("smdiff_denoise: x_nov_f is null");
    cfg.validate(sched.steps());
    latents.validate();
    require_same_shape(latents.y[0], *x_nov_f, "smdiff x_nov_f");
    JointLatents out;
    for_each_chain(denoiser.concurrent_safe(), [&](ViewId v, NoiseRole role) {
        Condition cond;
        cond.tau = prompts.render(v, role);
        cond.eta = x_nov_f;
        cond.usage = EtaUsage::Concat;
        LatentGrid x = latents.get(v, role);
        for (std::size_t t = cfg.alpha; t >= 1; --t) {
            const LatentGrid eps = denoiser.predict_noise(x, t, cond, InjectionConfig::disabled());
            const NoiseKey slot = smdiff_key(cfg, v, role, NoisePhase::Denoising, t);
            const NoiseKey source = cfg.replay_noise ? smdiff_key(cfg, v, role, NoisePhase::Inversion, t) : slot;
            const LatentGrid noise = draw_step_noise(slot, source, x, sched.gamma_at(t), eps, ledger);
            x = denoise_step(x, eps, noise, sched, t);
        }
        out.get(v, role) = std::move(x);
    });
    return out;
}

Image renormalize_normals(const Image& normals, const Mask& mask) {
    Image out(normals.height(), normals.width());
    for (std::size_t y = 0; y < normals.height(); ++y)
        for (std::size_t x = 0; x < normals.width(); ++x) {
            if (!mask(y, x)) continue;
            Rgb n = normals.pixel(y, x);
            const double len = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
            if (len > 1e-12) {
                n = {n[0] / len, n[1] / len, n[2] / len};
            } else {
                n = {0.0, 0.0, 1.0};  // facing the camera
            }
            out.set_pixel(y, x, n);
        }
    return out;
}

SMDiffImages decode_joint(const JointLatents& latents, const PerView<Mask>& masks, const LatentCodec& codec) {
    latents.validate();
    SMDiffImages out;
    for (ViewId v : kAllViews) {
        const std::size_t i = index_of(v);
        out.images[i] = clamp01(codec.decode(latents.y[i]));
        out.normals[i] = renormalize_normals(decode_normals(codec.decode(latents.z[i])), masks[i]);
    }
    return out;
}

SMDiffInputs smdiff_inputs(const TexturedBundle& textured, const ViewBundle& bundle, const Image& i_nov_f) {
    require_complete(bundle);
    SMDiffInputs in;
    for (ViewId v : kAllViews) {
        const std::size_t i = index_of(v);
        if (textured.images[i].empty()) throw IncompleteBundle("textured bundle missing view " + std::string(tag(v)));
        in.images[i] = textured.images[i];
        in.normals[i] = bundle[v].normal;
        in.masks[i] = bundle[v].alpha;
    }
    in.i_nov_f = i_nov_f;
    return in;
}

RenderedView SMDiffResult::view(ViewId v, const PerView<Mask>& masks) const {
    RenderedView rv;
    rv.view = v;
    rv.azimuth_deg = azimuth_deg(v);
    rv.rgb = images[index_of(v)];
    rv.normal = normals[index_of(v)];
    rv.alpha = masks[index_of(v)];
    return rv;
}

SMDiffResult smdiff_run(const SMDiffInputs& inputs, const LatentCodec& codec, const Denoiser& denoiser,
                        const ScheduleCoeffs& sched, const SMDiffConfig& cfg, const PromptPair& prompts,
                        const DumpSink& dump) {
    cfg.validate(sched.steps());
    JointLatents start;
    for (ViewId v : kAllViews) {
        const std::size_t i = index_of(v);
        if (inputs.images[i].empty() || inputs.normals[i].empty())
            throw IncompleteBundle("smdiff input missing view " + std::string(tag(v)));
        start.y[i] = codec.encode(inputs.images[i]);
        start.z[i] = codec.encode(encode_normals(inputs.normals[i]));
    }
    const auto x_nov_f = std::make_shared<const LatentGrid>(codec.encode(inputs.i_nov_f));

    SMDiffResult res;
    res.at_alpha = smdiff_invert(start, prompts, denoiser, sched, cfg, res.ledger);
    res.edit_noise_scale = cfg.edit_noise_scale.value_or(default_edit_noise_scale(sched, cfg.alpha));
    res.noised = add_edit_noise(res.at_alpha, res.edit_noise_scale, cfg.seed);
    if (dump)
        for (ViewId v : kAllViews)
            for (NoiseRole role : kRoles) {
                dump({"smdiff", v, role, "alpha", cfg.alpha, res.at_alpha.get(v, role)});
                dump({"smdiff", v, role, "edit", cfg.alpha, res.noised.get(v, role)});
            }
    const JointLatents final_latents = smdiff_denoise(res.noised, x_nov_f, prompts, denoiser, sched, cfg, res.ledger);
    if (dump)
        for (ViewId v : kAllViews)
            for (NoiseRole role : kRoles) dump({"smdiff", v, role, "final", 0, final_latents.get(v, role)});
    SMDiffImages decoded = decode_joint(final_latents, inputs.masks, codec);
    res.images = std::move(decoded.images);
    res.normals = std::move(decoded.normals);
    return res;
}

}  // namespace c33d
