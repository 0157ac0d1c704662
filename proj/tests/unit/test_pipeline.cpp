#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include <json.hpp>

#include "c33d/error.hpp"
#include "c33d/pipeline.hpp"

using namespace c33d;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("c33d_unit_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

fs::path write_mesh(const fs::path& dir, const ToyMesh& mesh, const std::string& name = "mesh.obj") {
    const fs::path p = dir / name;
    write_obj(p, mesh);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

RunConfig small_config(const fs::path& dir, const ToyMesh& mesh, std::size_t res) {
    RunConfig cfg;
    cfg.mesh = write_mesh(dir, mesh);
    cfg.category = "red";
    cfg.resolution = res;
    cfg.out_dir = dir / "out";
    cfg.point_count = 512;
    return cfg;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("toy run at 64x64 produces the full artifact set") {
    const fs::path dir = scratch("smoke");
    RunConfig cfg;
    cfg.mesh = write_mesh(dir, make_cube());
    cfg.category = "red";
    cfg.resolution = 64;
    cfg.seed = 1;
    cfg.out_dir = dir / "out";
    const RunManifest m = run_pipeline(cfg);
    CHECK(m.status == "ok");
    REQUIRE(m.alpha_star.has_value());
    for (ViewId v : kAllViews) {
        const std::string t(tag(v));
        CHECK(m.artifacts.count("final/" + t + "_rgb"));
        CHECK(m.artifacts.count("final/" + t + "_normal"));
    }
    CHECK(m.artifacts.count("fai_trace"));
    for (const auto& [name, rel] : m.artifacts) CHECK_MESSAGE(fs::exists(cfg.out_dir / rel), name);
    REQUIRE(fs::exists(cfg.out_dir / "manifest.json"));

    const auto j = nlohmann::json::parse(slurp(cfg.out_dir / "manifest.json"));
    CHECK(j["status"] == "ok");
    CHECK(j["alpha_star"] == *m.alpha_star);
    CHECK(j["config"]["resolution"] == 64);

    // the chosen alpha is the best probed value in the trace
    std::ifstream trace(cfg.out_dir / "fai_trace.jsonl");
    std::string line;
    double best = -INFINITY;
    std::size_t best_alpha = 0;
    while (std::getline(trace, line)) {
        const auto rec = nlohmann::json::parse(line);
        const double total = rec["total"];
        CHECK(std::isfinite(total));
        if (total > best) {
            best = total;
            best_alpha = rec["alpha"];
        }
    }
    CHECK(best_alpha == *m.alpha_star);
    CHECK(std::abs(m.report->recompute(cfg.weights) - m.report->total) <= 1e-9);
    CHECK(m.fai_rounds <= 5);
    CHECK(m.fai_evaluations <= 10);
}

TEST_CASE("exhaustive and ternary agree on a unimodal setup") {
    const fs::path dir = scratch("modes");
    RunConfig cfg = small_config(dir, make_l_shape(), 24);
    cfg.backend = "toy-pull";
    cfg.category = "tiger";
    cfg.fai_mode = SearchMode::Exhaustive;
    const RunManifest ex = run_pipeline(cfg);
    CHECK(ex.fai_evaluations == 10);
    CHECK(ex.fai_unimodal_consistent);

    cfg.fai_mode = SearchMode::Ternary;
    cfg.out_dir = dir / "out_t";
    const RunManifest tr = run_pipeline(cfg);
    CHECK(tr.alpha_star == ex.alpha_star);
    CHECK(tr.fai_evaluations < 10);
}

TEST_CASE("alpha evaluation is memoized and bounded") {
    const fs::path dir = scratch("memo");
    const ViewBundle bundle = render_views(make_l_shape(), 24);
    const Backend be = make_backend("toy-pull");
    const ScheduleCoeffs sched = make_schedule(1000, SamplerKind::DdimLike);
    const auto den = be.make_denoiser(sched);
    const Image front = be.fuser->fuse(bundle[ViewId::F].rgb, bundle[ViewId::F].alpha, "frog");
    TexturedBundle textured;
    for (ViewId v : kAllViews) textured.images[index_of(v)] = bundle[v].rgb;
    textured.images[0] = front;

    FaiContext ctx;
    ctx.bundle = &bundle;
    ctx.inputs = smdiff_inputs(textured, bundle, front);
    ctx.codec = be.codec.get();
    ctx.embedder = be.embedder.get();
    ctx.denoiser = den.get();
    ctx.sched = &sched;
    ctx.category = "frog";

    std::size_t calls = 0;
    AlphaMemo memo([&](std::size_t a) {
        ++calls;
        return evaluate_alpha(a, ctx);
    });
    const FusionReport a = memo(301);
    const FusionReport b = memo(301);
    CHECK(calls == 1);
    CHECK(memo.evaluations() == 1);
    CHECK(a.total == b.total);
    CHECK(a.evaluations_used == b.evaluations_used);

    for (std::size_t alpha : AlphaGrid::standard().candidates) {
        const FusionReport r = memo(alpha);
        CHECK(std::isfinite(r.total));
        CHECK(std::abs(r.total) <= 1.0);
        CHECK(std::abs(r.recompute(ctx.weights) - r.total) <= 1e-9);
        for (std::size_t i = 0; i < kViewCount; ++i) {
            CHECK(std::abs(r.s3d[i]) <= 1.0);
            CHECK(std::abs(r.stext[i]) <= 1.0);
        }
    }
    CHECK(calls == 10);
}

TEST_CASE("dumped latents round trip bit-exactly") {
    const fs::path dir = scratch("dump");
    RunConfig cfg = small_config(dir, make_cube(), 16);
    cfg.alpha_grid = AlphaGrid::parse("1:201:100");
    cfg.dump_stages = {"tmdiff", "smdiff"};
    run_pipeline(cfg);
    std::size_t tm = 0, sm = 0;
    for (const auto& e : fs::recursive_directory_iterator(cfg.out_dir / "dump")) {
        if (e.path().extension() != ".lat") continue;
        const std::string p = e.path().generic_string();
        (p.find("/tmdiff/") != std::string::npos ? tm : sm) += 1;
        const LatentGrid g = read_latent(e.path());
        CHECK(g.channels() == 3);
        CHECK(g.height() == 16);
        const fs::path again = dir / "again.lat";
        write_latent(again, g);
        CHECK(slurp(again) == slurp(e.path()));
        CHECK(read_latent(again) == g);
    }
    CHECK(tm == 5 * 2 * 4);
    // alpha, edit, final for 12 chains at each probed alpha
    CHECK(sm % 36 == 0);
    CHECK(sm >= 36 * 2);
}

TEST_CASE("config files merge over the defaults") {
    RunConfig cfg;
    merge_run_config(cfg, R"({
        "category": "frog", "resolution": 32, "seed": 9,
        "tmdiff": {"steps": 6, "sampler": "ddim-like", "injection": {"layers": [0, 1], "steps": [5, 6]}},
        "smdiff": {"edit_noise_scale": 0.25, "replay_noise": true},
        "fai": {"alpha_grid": "1:501:100", "mode": "exhaustive", "tie_break": "higher", "lambda": 0.3},
        "eval": {"points": 100}
    })");
    CHECK(cfg.category == "frog");
    CHECK(cfg.resolution == 32);
    CHECK(cfg.seed == 9);
    CHECK(cfg.tmdiff_steps == 6);
    CHECK(cfg.tmdiff_sampler == SamplerKind::DdimLike);
    CHECK(cfg.injection_layers == std::pair<std::size_t, std::size_t>{0, 1});
    CHECK(cfg.injection_steps == std::pair<std::size_t, std::size_t>{5, 6});
    CHECK(cfg.edit_noise_scale == 0.25);
    CHECK(cfg.smdiff_replay_noise);
    CHECK(cfg.alpha_grid.size() == 6);
    CHECK(cfg.fai_mode == SearchMode::Exhaustive);
    CHECK(cfg.tie_break == TieBreak::HigherAlpha);
    CHECK(cfg.lambda == 0.3);
    CHECK(cfg.point_count == 100);

    merge_run_config(cfg, R"({"smdiff": {"edit_noise_scale": "auto"}})");
    CHECK_FALSE(cfg.edit_noise_scale.has_value());

    RunConfig snap;
    merge_run_config(snap, run_config_json(cfg));
    CHECK(run_config_json(snap) == run_config_json(cfg));

    RunConfig other;
    CHECK_THROWS_AS(merge_run_config(other, R"({"resolutoin": 64})"), ConfigError);
    CHECK_THROWS_AS(merge_run_config(other, R"({"fai": {"grid": "1:9:1"}})"), ConfigError);
    CHECK_THROWS_AS(merge_run_config(other, R"({"resolution": "big"})"), ConfigError);
    CHECK_THROWS_AS(merge_run_config(other, "{not json"), ConfigError);
    CHECK_THROWS_AS(merge_run_config(other, R"({"fai": {"mode": "golden"}})"), ConfigError);

    const fs::path dir = scratch("config");
    std::ofstream(dir / "c.json") << R"({"category": "lion", "backend": "toy-pull"})";
    const RunConfig loaded = load_run_config(dir / "c.json");
    CHECK(loaded.category == "lion");
    CHECK(loaded.backend == "toy-pull");
    CHECK_THROWS_AS(load_run_config(dir / "missing.json"), ConfigError);
}

TEST_CASE("invalid configurations are rejected before any stage runs") {
    const fs::path dir = scratch("invalid");
    const RunConfig good = small_config(dir, make_cube(), 16);
    CHECK_NOTHROW(validate_run_config(good));
    auto expect_bad = [&](auto mutate) {
        RunConfig c = good;
        mutate(c);
        CHECK_THROWS_AS(validate_run_config(c), ConfigError);
        CHECK_THROWS_AS(run_pipeline(c), ConfigError);
    };
    expect_bad([&](RunConfig& c) { c.mesh = dir / "nope.obj"; });
    expect_bad([](RunConfig& c) { c.category.clear(); });
    expect_bad([](RunConfig& c) { c.resolution = 0; });
    expect_bad([](RunConfig& c) { c.resolution = 513; });
    expect_bad([](RunConfig& c) { c.alpha_grid = AlphaGrid{{1, 1101}}; });
    expect_bad([](RunConfig& c) { c.lambda = 2.0; });
    expect_bad([](RunConfig& c) { c.weights.weight[0] = 0.5; });
    expect_bad([](RunConfig& c) { c.dump_stages = {"render"}; });
    expect_bad([](RunConfig& c) { c.injection_steps = {3, 7}; });
    expect_bad([](RunConfig& c) { c.backend = "nonexistent"; });
}

TEST_CASE("stage failures leave a partial manifest") {
    const fs::path dir = scratch("failure");
    RunConfig cfg = small_config(dir, make_cube(), 16);
    std::ofstream(cfg.mesh) << "v 0 0 0\nv 1 0 0\nf 1 2 7\n";
    try {
        run_pipeline(cfg);
        FAIL("expected a stage failure");
    } catch (const StageError& e) {
        CHECK(e.stage() == "load");
    }
    const auto j = nlohmann::json::parse(slurp(cfg.out_dir / "manifest.json"));
    CHECK(j["status"] == "failed");
    CHECK(j["failed_stage"] == "load");
}

TEST_CASE("stage configs follow the run config") {
    RunConfig cfg;
    const Backend toy = make_backend("toy");
    const TMDiffConfig t = tmdiff_config(cfg, toy, 2);
    CHECK(t.steps == 4);
    CHECK(t.injection.enabled);
    CHECK(t.injection.layer_range == toy.default_injection_sites);
    CHECK(t.injection.step_range == std::pair<std::size_t, std::size_t>{3, 4});
    CHECK_FALSE(tmdiff_config(cfg, make_backend("toy-pull"), 0).injection.enabled);
    cfg.seed = 12;
    const SMDiffConfig s = smdiff_config(cfg, 501);
    CHECK(s.alpha == 501);
    CHECK(s.total_steps == 1000);
    CHECK(s.seed == 12);
    CHECK(cfg.resolution == 512);
}

}
