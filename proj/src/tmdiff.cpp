#include "c33d/tmdiff.hpp"

#include <future>
#include <string>
#include <vector>

#include "c33d/error.hpp"

namespace c33d {

void TMDiffConfig::validate(std::size_t site_count, std::size_t schedule_steps) const {
    if (steps < 1) throw ConfigError("tmdiff steps must be at least 1");
    if (steps > schedule_steps)
        throw ConfigError("tmdiff steps (" + std::to_string(steps) + ") exceed the schedule length (" +
                          std::to_string(schedule_steps) + ")");
    injection.validate(site_count, steps);
}

void require_complete(const ViewBundle& bundle) {
    const auto& ref = bundle.views[0];
    for (ViewId v : kAllViews) {
        const auto& rv = bundle[v];
        if (rv.view != v) throw IncompleteBundle("view slot " + std::string(tag(v)) + " holds another view");
        if (rv.rgb.empty() || rv.normal.empty())
            throw IncompleteBundle("missing view " + std::string(tag(v)));
        if (rv.rgb.height() != ref.rgb.height() || rv.rgb.width() != ref.rgb.width() ||
            rv.normal.height() != rv.rgb.height() || rv.normal.width() != rv.rgb.width() ||
            rv.alpha.height() != rv.rgb.height() || rv.alpha.width() != rv.rgb.width())
            throw IncompleteBundle("view " + std::string(tag(v)) + " has mismatched dimensions");
    }
}

Image tmdiff_view(ViewId view, const Image& rgb, const LatentGrid& x_nov_f, const LatentCodec& codec,
                  const Denoiser& denoiser, const ScheduleCoeffs& sched, const TMDiffConfig& cfg, NoiseLedger& ledger,
                  const DumpSink& dump) {
    const auto key = [&](NoisePhase phase, std::size_t t) {
        return NoiseKey{cfg.seed, kTmdiffStage, static_cast<std::uint32_t>(index_of(view)), NoiseRole::Rgb, phase,
                        static_cast<std::uint32_t>(t)};
    };
    LatentGrid x = codec.encode(rgb);
    require_same_shape(x, x_nov_f, "tmdiff x_nov_f");

    // Noise addition: tau = eta = null, prediction taken at x_{t-1}.
    const Condition null_cond = Condition::null();
    for (std::size_t t = 1; t <= cfg.steps; ++t) {
        const LatentGrid eps = denoiser.predict_noise(x, t, null_cond, InjectionConfig::disabled());
        const LatentGrid noise =
            draw_step_noise(key(NoisePhase::Inversion, t), key(NoisePhase::Inversion, t), x, sched.gamma_at(t), eps, ledger);
        x = invert_step(x, eps, noise, sched, t);
        if (dump) dump({"tmdiff", view, NoiseRole::Rgb, "inv", t, x});
    }

    Condition cond;
    cond.eta = std::make_shared<const LatentGrid>(x_nov_f);
    cond.usage = EtaUsage::KeyValue;
    for (std::size_t t = cfg.steps; t >= 1; --t) {
        const LatentGrid eps = denoiser.predict_noise(x, t, cond, cfg.injection);
        const NoiseKey source = cfg.replay_noise ? key(NoisePhase::Inversion, t) : key(NoisePhase::Denoising, t);
        const LatentGrid noise = draw_step_noise(key(NoisePhase::Denoising, t), source, x, sched.gamma_at(t), eps, ledger);
        x = denoise_step(x, eps, noise, sched, t);
        if (dump) dump({"tmdiff", view, NoiseRole::Rgb, "den", t - 1, x});
    }
    return clamp01(codec.decode(x));
}

TexturedBundle tmdiff_run(const ViewBundle& bundle, const Image& i_nov_f, const LatentCodec& codec,
                          const Denoiser& denoiser, const ScheduleCoeffs& sched, const TMDiffConfig& cfg,
                          const DumpSink& dump) {
    require_complete(bundle);
    if (i_nov_f.height() != bundle.resolution() || i_nov_f.width() != bundle.resolution())
        throw ShapeError("tmdiff: fused front image resolution differs from the bundle");
    cfg.validate(denoiser.attention_site_count(), sched.steps());

    const LatentGrid x_nov_f = codec.encode(i_nov_f);
    TexturedBundle out;
    out.images[index_of(ViewId::F)] = i_nov_f;

    std::vector<ViewId> side_views(kAllViews.begin() + 1, kAllViews.end());
    if (denoiser.concurrent_safe() && !dump) {
        std::vector<std::future<Image>> jobs;
        for (ViewId v : side_views)
            jobs.push_back(std::async(std::launch::async, [&, v] {
                return tmdiff_view(v, bundle[v].rgb, x_nov_f, codec, denoiser, sched, cfg, out.ledger);
            }));
        for (std::size_t i = 0; i < side_views.size(); ++i) out.images[index_of(side_views[i])] = jobs[i].get();
    } else {
        for (ViewId v : side_views)
            out.images[index_of(v)] = tmdiff_view(v, bundle[v].rgb, x_nov_f, codec, denoiser, sched, cfg, out.ledger, dump);
    }
    return out;
}

}  // namespace c33d
