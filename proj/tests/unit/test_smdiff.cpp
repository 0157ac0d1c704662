#include <doctest.h>

#include <cmath>
#include <memory>

#include "c33d/backends.hpp"
#include "c33d/error.hpp"
#include "c33d/smdiff.hpp"
#include "c33d/views.hpp"

using namespace c33d;

namespace {

constexpr std::size_t kRes = 24;

const ViewBundle& bundle() {
    static const ViewBundle b = render_views(make_l_shape(), kRes);
    return b;
}

SMDiffInputs plain_inputs() {
    const ViewBundle& b = bundle();
    SMDiffInputs in;
    for (ViewId v : kAllViews) {
        in.images[index_of(v)] = b[v].rgb;
        in.normals[index_of(v)] = b[v].normal;
        in.masks[index_of(v)] = b[v].alpha;
    }
    in.i_nov_f = ToyFuser().fuse(b[ViewId::F].rgb, b[ViewId::F].alpha, "tiger");
    return in;
}

JointLatents encoded(const SMDiffInputs& in) {
    const ToyCodec codec;
    JointLatents j;
    for (ViewId v : kAllViews) {
        j.y[index_of(v)] = codec.encode(in.images[index_of(v)]);
        j.z[index_of(v)] = codec.encode(encode_normals(in.normals[index_of(v)]));
    }
    return j;
}

const ScheduleCoeffs& ddim() {
    static const ScheduleCoeffs s = make_schedule(1000, SamplerKind::DdimLike);
    return s;
}

double joint_gap(const JointLatents& a, const JointLatents& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < kViewCount; ++i) d += mean_abs_diff(a.y[i], b.y[i]) + mean_abs_diff(a.z[i], b.z[i]);
    return d / (2.0 * kViewCount);
}

}  // namespace

TEST_SUITE("smdiff") {

TEST_CASE("prompts name the view and the role") {
    const PromptPair p;
    CHECK(p.render(ViewId::FR, NoiseRole::Rgb) == "a rendering image of 3D models, front-right-view, color map");
    CHECK(p.render(ViewId::B, NoiseRole::Normal) == "a rendering image of 3D models, back-view, normal map");
    for (ViewId v : kAllViews) CHECK(p.render(v, NoiseRole::Rgb) != p.render(v, NoiseRole::Normal));
}

TEST_CASE("config validation") {
    SMDiffConfig c;
    CHECK_NOTHROW(c.validate(1000));
    c.alpha = 0;
    CHECK_THROWS_AS(c.validate(1000), ConfigError);
    c.alpha = 1001;
    CHECK_THROWS_AS(c.validate(1000), ConfigError);
    c.alpha = 901;
    c.edit_noise_scale = -0.1;
    CHECK_THROWS_AS(c.validate(1000), ConfigError);
    c.edit_noise_scale.reset();
    CHECK_THROWS_AS(c.validate(50), ConfigError);

    const ToyDenoiser den(ddim().alpha_bar);
    NoiseLedger ledger;
    SMDiffConfig bad;
    bad.alpha = 1001;
    CHECK_THROWS_AS(smdiff_invert(encoded(plain_inputs()), PromptPair{}, den, ddim(), bad, ledger), ConfigError);
}

TEST_CASE("default edit noise follows the sampler") {
    CHECK(default_edit_noise_scale(ddim(), 401) > 0.0);
    CHECK(default_edit_noise_scale(make_schedule(1000, SamplerKind::AncestralLike), 401) == 0.0);
    const ScheduleCoeffs anc = make_schedule(1000, SamplerKind::AncestralLike);
    CHECK(default_edit_noise_scale(ddim(), 401) == doctest::Approx(anc.gamma_at(401)).epsilon(1e-12));
}

TEST_CASE("alpha = 1 is nearly the identity") {
    const Backend be = make_backend("toy");
    const auto den = be.make_denoiser(ddim());
    const SMDiffInputs in = plain_inputs();
    SMDiffConfig cfg;
    cfg.alpha = 1;
    cfg.edit_noise_scale = 0.0;
    const SMDiffResult r = smdiff_run(in, *be.codec, *den, ddim(), cfg);
    for (ViewId v : kAllViews) {
        CHECK(mean_abs_diff(r.images[index_of(v)], in.images[index_of(v)]) <= 1e-3);
        CHECK(mean_abs_diff(r.normals[index_of(v)], in.normals[index_of(v)]) <= 1e-3);
    }
}

TEST_CASE("zero predictor scales latents by the inverse product of nu") {
    const ConstantDenoiser zero(0.0);
    const JointLatents start = encoded(plain_inputs());
    SMDiffConfig cfg;
    cfg.alpha = 37;
    NoiseLedger ledger;
    const JointLatents out = smdiff_invert(start, PromptPair{}, zero, ddim(), cfg, ledger);
    double prod = 1.0;
    for (std::size_t t = 1; t <= 37; ++t) prod *= ddim().nu_at(t);
    for (std::size_t v = 0; v < kViewCount; ++v)
        for (std::size_t i = 0; i < start.y[v].size(); ++i) {
            CHECK(out.y[v][i] == doctest::Approx(start.y[v][i] / prod).epsilon(1e-12));
            CHECK(out.z[v][i] == doctest::Approx(start.z[v][i] / prod).epsilon(1e-12));
        }
}

TEST_CASE("prompts reach the predictor") {
    const ToyDenoiser den(ddim().alpha_bar);
    JointLatents start = encoded(plain_inputs());
    for (std::size_t v = 0; v < kViewCount; ++v) start.z[v] = start.y[v];
    SMDiffConfig cfg;
    cfg.alpha = 21;
    NoiseLedger l1, l2;
    const JointLatents a = smdiff_invert(start, PromptPair{}, den, ddim(), cfg, l1);
    for (std::size_t v = 0; v < kViewCount; ++v) CHECK_FALSE(a.y[v] == a.z[v]);

    PromptPair swapped;
    std::swap(swapped.color_template, swapped.normal_template);
    const JointLatents b = smdiff_invert(encoded(plain_inputs()), swapped, den, ddim(), cfg, l2);
    const JointLatents c = smdiff_invert(encoded(plain_inputs()), PromptPair{}, den, ddim(), cfg, l1 = {});
    CHECK(joint_gap(b, c) > 0.0);
}

TEST_CASE("edit noise statistics") {
    const JointLatents start = encoded(plain_inputs());
    CHECK(joint_gap(add_edit_noise(start, 0.0, 3), start) == 0.0);
    CHECK_THROWS_AS(add_edit_noise(start, -1.0, 3), InvalidInput);
    const JointLatents a = add_edit_noise(start, 1.0, 3);
    CHECK(joint_gap(a, add_edit_noise(start, 1.0, 3)) == 0.0);
    CHECK(joint_gap(a, add_edit_noise(start, 1.0, 4)) > 0.0);

    JointLatents big;
    for (std::size_t v = 0; v < kViewCount; ++v) {
        big.y[v] = LatentGrid(3, 64, 64, 0.25);
        big.z[v] = LatentGrid(3, 64, 64, -0.5);
    }
    for (double scale : {1.0, 0.3}) {
        const JointLatents n = add_edit_noise(big, scale, 99);
        for (std::size_t v = 0; v < kViewCount; ++v)
            for (const auto* pair : {&n.y[v], &n.z[v]}) {
                const LatentGrid& base = pair == &n.y[v] ? big.y[v] : big.z[v];
                const double count = static_cast<double>(base.size());
                double m = 0.0, var = 0.0;
                for (std::size_t i = 0; i < base.size(); ++i) m += (*pair)[i] - base[i];
                m /= count;
                for (std::size_t i = 0; i < base.size(); ++i) {
                    const double d = (*pair)[i] - base[i] - m;
                    var += d * d;
                }
                var /= count;
                CHECK(std::abs(m) <= 4.0 * scale / std::sqrt(count));
                CHECK(std::abs(var - scale * scale) <= 0.1 * scale * scale);
            }
    }
}

TEST_CASE("inversion then replayed denoising round trips under a constant predictor") {
    const ConstantDenoiser den(0.1);
    const SMDiffInputs in = plain_inputs();
    const JointLatents start = encoded(in);
    const auto eta = std::make_shared<const LatentGrid>(ToyCodec().encode(in.i_nov_f));
    for (SamplerKind kind : {SamplerKind::DdimLike, SamplerKind::AncestralLike}) {
        const ScheduleCoeffs s = make_schedule(1000, kind);
        SMDiffConfig cfg;
        cfg.alpha = 201;
        cfg.replay_noise = true;
        NoiseLedger ledger;
        const JointLatents at = smdiff_invert(start, PromptPair{}, den, s, cfg, ledger);
        const JointLatents back = smdiff_denoise(add_edit_noise(at, 0.0, 0), eta, PromptPair{}, den, s, cfg, ledger);
        CHECK(joint_gap(back, start) <= 1e-4);
    }
}

TEST_CASE("deeper inversion pulls harder toward eta") {
    const ShapePullDenoiser den(ddim().alpha_bar);
    const SMDiffInputs in = plain_inputs();
    const JointLatents start = encoded(in);
    const auto eta = std::make_shared<const LatentGrid>(ToyCodec().encode(in.i_nov_f));
    double last = INFINITY;
    for (std::size_t alpha : {1u, 101u, 201u}) {
        SMDiffConfig cfg;
        cfg.alpha = alpha;
        cfg.edit_noise_scale = 0.0;
        NoiseLedger ledger;
        const JointLatents at = smdiff_invert(start, PromptPair{}, den, ddim(), cfg, ledger);
        const JointLatents out = smdiff_denoise(at, eta, PromptPair{}, den, ddim(), cfg, ledger);
        double d = 0.0;
        for (std::size_t v = 0; v < kViewCount; ++v) d += l2_distance(out.y[v], *eta);
        CHECK(d < last);
        last = d;
    }
}

TEST_CASE("normal outputs are unit length under the mask") {
    const Backend be = make_backend("toy");
    const auto den = be.make_denoiser(ddim());
    const SMDiffInputs in = plain_inputs();
    SMDiffConfig cfg;
    cfg.alpha = 601;
    const SMDiffResult r = smdiff_run(in, *be.codec, *den, ddim(), cfg);
    for (ViewId v : kAllViews) {
        const Image& n = r.normals[index_of(v)];
        const Mask& m = in.masks[index_of(v)];
        for (std::size_t y = 0; y < kRes; ++y)
            for (std::size_t x = 0; x < kRes; ++x) {
                const Rgb p = n.pixel(y, x);
                const double len = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
                if (m(y, x))
                    CHECK(std::abs(len - 1.0) <= 1e-4);
                else
                    CHECK(len == 0.0);
            }
        for (double c : r.images[index_of(v)].data()) CHECK((c >= 0.0 && c <= 1.0));
    }
    Image zeros(4, 4);
    const Image fixed = renormalize_normals(zeros, Mask(4, 4, 1));
    CHECK(fixed.pixel(2, 2) == Rgb{0.0, 0.0, 1.0});
}

TEST_CASE("runs are deterministic and sensitive to alpha") {
    const Backend be = make_backend("toy");
    const auto den = be.make_denoiser(ddim());
    const SMDiffInputs in = plain_inputs();
    SMDiffConfig cfg;
    cfg.seed = 77;
    cfg.alpha = 401;
    const SMDiffResult a = smdiff_run(in, *be.codec, *den, ddim(), cfg);
    const SMDiffResult b = smdiff_run(in, *be.codec, *den, ddim(), cfg);
    cfg.alpha = 801;
    const SMDiffResult c = smdiff_run(in, *be.codec, *den, ddim(), cfg);
    double gap = 0.0;
    for (std::size_t v = 0; v < kViewCount; ++v) {
        CHECK(a.images[v] == b.images[v]);
        CHECK(a.normals[v] == b.normals[v]);
        gap += mean_abs_diff(a.images[v], c.images[v]);
    }
    CHECK(gap > 0.0);
    CHECK(a.edit_noise_scale == doctest::Approx(default_edit_noise_scale(ddim(), 401)));
}

TEST_CASE("every inversion step of every chain is recorded once") {
    const ToyDenoiser den(ddim().alpha_bar);
    SMDiffConfig cfg;
    cfg.alpha = 45;
    cfg.seed = 6;
    NoiseLedger ledger;
    smdiff_invert(encoded(plain_inputs()), PromptPair{}, den, ddim(), cfg, ledger);
    CHECK(ledger.size() == kViewCount * 2 * 45);
    for (ViewId v : kAllViews)
        for (NoiseRole role : {NoiseRole::Rgb, NoiseRole::Normal})
            for (std::uint32_t t = 1; t <= 45; ++t)
                CHECK(ledger.contains(NoiseKey{6, kSmdiffStage, static_cast<std::uint32_t>(index_of(v)), role,
                                               NoisePhase::Inversion, t}));
}

TEST_CASE("denoising needs the front latent") {
    const ToyDenoiser den(ddim().alpha_bar);
    NoiseLedger ledger;
    SMDiffConfig cfg;
    cfg.alpha = 3;
    CHECK_THROWS_AS(smdiff_denoise(encoded(plain_inputs()), nullptr, PromptPair{}, den, ddim(), cfg, ledger),
                    MissingCondition);
    JointLatents partial = encoded(plain_inputs());
    partial.z[2] = LatentGrid();
    const auto eta = std::make_shared<const LatentGrid>(3, kRes, kRes, 0.5);
    CHECK_THROWS_AS(smdiff_denoise(partial, eta, PromptPair{}, den, ddim(), cfg, ledger), IncompleteBundle);
}

}
