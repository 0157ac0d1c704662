#include "c33d/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <mutex>
#include <sstream>

#include <json.hpp>

#include "c33d/error.hpp"

namespace c33d {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, std::initializer_list<std::string_view> allowed, const std::string& where) {
    for (const auto& [key, value] : obj.items()) {
        bool ok = false;
        for (auto a : allowed) ok = ok || key == a;
        if (!ok) throw ConfigError("unknown config key '" + where + key + "'");
    }
}

std::pair<std::size_t, std::size_t> read_range(const json& j, const std::string& what) {
    if (!j.is_array() || j.size() != 2) throw ConfigError(what + " must be a two-element array");
    return {j[0].get<std::size_t>(), j[1].get<std::size_t>()};
}

void merge_json(RunConfig& cfg, const json& j) {
    if (!j.is_object()) throw ConfigError("config root must be an object");
    reject_unknown(j, {"mesh", "category", "resolution", "backend", "seed", "out", "dump_stages", "tmdiff", "smdiff",
                       "fai", "eval"},
                   "");
    if (j.contains("mesh")) cfg.mesh = j["mesh"].get<std::string>();
    if (j.contains("category")) cfg.category = j["category"].get<std::string>();
    if (j.contains("resolution")) cfg.resolution = j["resolution"].get<std::size_t>();
    if (j.contains("backend")) cfg.backend = j["backend"].get<std::string>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("out")) cfg.out_dir = j["out"].get<std::string>();
    if (j.contains("dump_stages")) {
        cfg.dump_stages.clear();
        for (const auto& s : j["dump_stages"]) cfg.dump_stages.insert(s.get<std::string>());
    }
    if (j.contains("tmdiff")) {
        const json& t = j["tmdiff"];
        reject_unknown(t, {"steps", "sampler", "injection", "replay_noise"}, "tmdiff.");
        if (t.contains("steps")) cfg.tmdiff_steps = t["steps"].get<std::size_t>();
        if (t.contains("sampler")) cfg.tmdiff_sampler = sampler_from_string(t["sampler"].get<std::string>());
        if (t.contains("replay_noise")) cfg.tmdiff_replay_noise = t["replay_noise"].get<bool>();
        if (t.contains("injection")) {
            const json& in = t["injection"];
            reject_unknown(in, {"enabled", "layers", "steps"}, "tmdiff.injection.");
            if (in.contains("enabled")) cfg.injection_enabled = in["enabled"].get<bool>();
            if (in.contains("layers")) {
                if (in["layers"].is_null()) cfg.injection_layers.reset();
                else cfg.injection_layers = read_range(in["layers"], "tmdiff.injection.layers");
            }
            if (in.contains("steps")) cfg.injection_steps = read_range(in["steps"], "tmdiff.injection.steps");
        }
    }
    if (j.contains("smdiff")) {
        const json& s = j["smdiff"];
        reject_unknown(s, {"total_steps", "sampler", "edit_noise_scale", "replay_noise"}, "smdiff.");
        if (s.contains("total_steps")) cfg.smdiff_total_steps = s["total_steps"].get<std::size_t>();
        if (s.contains("sampler")) cfg.smdiff_sampler = sampler_from_string(s["sampler"].get<std::string>());
        if (s.contains("replay_noise")) cfg.smdiff_replay_noise = s["replay_noise"].get<bool>();
        if (s.contains("edit_noise_scale")) {
            const json& e = s["edit_noise_scale"];
            if (e.is_null() || (e.is_string() && e.get<std::string>() == "auto")) cfg.edit_noise_scale.reset();
            else cfg.edit_noise_scale = e.get<double>();
        }
    }
    if (j.contains("fai")) {
        const json& f = j["fai"];
        reject_unknown(f, {"alpha_grid", "mode", "tie_break", "lambda", "weights", "parallel"}, "fai.");
        if (f.contains("alpha_grid")) {
            const json& g = f["alpha_grid"];
            if (g.is_string()) {
                cfg.alpha_grid = AlphaGrid::parse(g.get<std::string>());
            } else {
                cfg.alpha_grid.candidates = g.get<std::vector<std::size_t>>();
            }
        }
        if (f.contains("mode")) cfg.fai_mode = search_mode_from_string(f["mode"].get<std::string>());
        if (f.contains("tie_break")) cfg.tie_break = tie_break_from_string(f["tie_break"].get<std::string>());
        if (f.contains("lambda")) cfg.lambda = f["lambda"].get<double>();
        if (f.contains("parallel")) cfg.fai_parallel = f["parallel"].get<bool>();
        if (f.contains("weights")) {
            for (const auto& [key, value] : f["weights"].items()) {
                ViewId v;
                try {
                    v = view_from_tag(key);
                } catch (const Error&) {
                    throw ConfigError("unknown view '" + key + "' in fai.weights");
                }
                cfg.weights.weight[index_of(v)] = value.get<double>();
            }
        }
    }
    if (j.contains("eval")) {
        const json& e = j["eval"];
        reject_unknown(e, {"points"}, "eval.");
        if (e.contains("points")) cfg.point_count = e["points"].get<std::size_t>();
    }
}

json config_to_json(const RunConfig& cfg) {
    json weights = json::object();
    for (ViewId v : kAllViews) weights[std::string(tag(v))] = cfg.weights[v];
    json injection = {{"enabled", cfg.injection_enabled},
                      {"steps", {cfg.injection_steps.first, cfg.injection_steps.second}}};
    injection["layers"] = cfg.injection_layers
                              ? json{cfg.injection_layers->first, cfg.injection_layers->second}
                              : json(nullptr);
    return {{"mesh", cfg.mesh.string()},
            {"category", cfg.category},
            {"resolution", cfg.resolution},
            {"backend", cfg.backend},
            {"seed", cfg.seed},
            {"out", cfg.out_dir.string()},
            {"dump_stages", cfg.dump_stages},
            {"tmdiff",
             {{"steps", cfg.tmdiff_steps},
              {"sampler", to_string(cfg.tmdiff_sampler)},
              {"injection", injection},
              {"replay_noise", cfg.tmdiff_replay_noise}}},
            {"smdiff",
             {{"total_steps", cfg.smdiff_total_steps},
              {"sampler", to_string(cfg.smdiff_sampler)},
              {"edit_noise_scale", cfg.edit_noise_scale ? json(*cfg.edit_noise_scale) : json("auto")},
              {"replay_noise", cfg.smdiff_replay_noise}}},
            {"fai",
             {{"alpha_grid", cfg.alpha_grid.candidates},
              {"mode", to_string(cfg.fai_mode)},
              {"tie_break", to_string(cfg.tie_break)},
              {"lambda", cfg.lambda},
              {"weights", weights},
              {"parallel", cfg.fai_parallel}}},
            {"eval", {{"points", cfg.point_count}}}};
}

}  // namespace

void merge_run_config(RunConfig& cfg, std::string_view json_text) {
    try {
        merge_json(cfg, json::parse(json_text));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    RunConfig cfg;
    merge_run_config(cfg, ss.str());
    return cfg;
}

std::string run_config_json(const RunConfig& cfg) { return config_to_json(cfg).dump(2); }

TMDiffConfig tmdiff_config(const RunConfig& cfg, const Backend& backend, std::size_t site_count) {
    TMDiffConfig t;
    t.steps = cfg.tmdiff_steps;
    t.seed = cfg.seed;
    t.replay_noise = cfg.tmdiff_replay_noise;
    t.injection.enabled = cfg.injection_enabled && site_count > 0;
    t.injection.layer_range = cfg.injection_layers.value_or(backend.default_injection_sites);
    t.injection.step_range = cfg.injection_steps;
    return t;
}

SMDiffConfig smdiff_config(const RunConfig& cfg, std::size_t alpha) {
    SMDiffConfig s;
    s.alpha = alpha;
    s.total_steps = cfg.smdiff_total_steps;
    s.edit_noise_scale = cfg.edit_noise_scale;
    s.seed = cfg.seed;
    s.replay_noise = cfg.smdiff_replay_noise;
    return s;
}

void validate_run_config(const RunConfig& cfg) {
    if (cfg.mesh.empty()) throw ConfigError("no mesh given");
    if (!std::filesystem::is_regular_file(cfg.mesh)) throw ConfigError("mesh file not found: " + cfg.mesh.string());
    if (cfg.category.empty()) throw ConfigError("category must be non-empty");
    if (cfg.resolution < 16 || cfg.resolution > 512) throw ConfigError("resolution must lie in [16, 512]");
    for (const auto& s : cfg.dump_stages)
        if (s != "tmdiff" && s != "smdiff") throw ConfigError("unknown dump stage '" + s + "'");
    if (cfg.smdiff_total_steps < 2 || cfg.smdiff_total_steps > 1000)
        throw ConfigError("smdiff total_steps must lie in [2, 1000]");
    if (cfg.tmdiff_steps < 2 || cfg.tmdiff_steps > 1000) throw ConfigError("tmdiff steps must lie in [2, 1000]");
    const Backend backend = make_backend(cfg.backend);
    const auto denoiser = backend.make_denoiser(make_schedule(cfg.tmdiff_steps, cfg.tmdiff_sampler));
    tmdiff_config(cfg, backend, denoiser->attention_site_count())
        .validate(denoiser->attention_site_count(), cfg.tmdiff_steps);
    cfg.alpha_grid.validate(cfg.smdiff_total_steps);
    if (cfg.edit_noise_scale && !(*cfg.edit_noise_scale >= 0.0)) throw ConfigError("edit noise scale must be >= 0");
    cfg.weights.validate();
    if (!(cfg.lambda >= 0.0 && cfg.lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
    if (cfg.point_count == 0) throw ConfigError("point count must be positive");
}

FusionReport evaluate_alpha(std::size_t alpha, const FaiContext& ctx, SMDiffResult* result) {
    SMDiffConfig scfg = ctx.smdiff;
    scfg.alpha = alpha;
    SMDiffResult res = smdiff_run(ctx.inputs, *ctx.codec, *ctx.denoiser, *ctx.sched, scfg, ctx.prompts, ctx.dump);
    PerView<ViewScore> scores;
    for (ViewId v : kAllViews) {
        const std::size_t i = index_of(v);
        const RenderedView& ref = (*ctx.bundle)[v];
        scores[i].s3d = s3d_view(res.images[i], res.normals[i], ref.rgb, ref.normal, ctx.inputs.masks[i], ref.alpha,
                                 ctx.lambda, *ctx.embedder);
        scores[i].stext = stext_view(res.images[i], ctx.inputs.masks[i], ctx.category, *ctx.embedder);
    }
    FusionReport report = make_report(alpha, scores, ctx.weights);
    if (result) *result = std::move(res);
    return report;
}

std::string RunManifest::to_json() const {
    json j;
    j["status"] = status;
    if (status != "ok") {
        j["failed_stage"] = failed_stage;
        j["error"] = error;
    }
    j["config"] = config_json.empty() ? json(nullptr) : json::parse(config_json);
    j["artifacts"] = artifacts;
    j["alpha_star"] = alpha_star ? json(*alpha_star) : json(nullptr);
    if (report) {
        json s3d = json::object();
        json stext = json::object();
        for (ViewId v : kAllViews) {
            s3d[std::string(tag(v))] = report->s3d[index_of(v)];
            stext[std::string(tag(v))] = report->stext[index_of(v)];
        }
        j["report"] = {{"alpha", report->alpha},
                       {"total", report->total},
                       {"s3d", s3d},
                       {"stext", stext},
                       {"evaluations_used", report->evaluations_used}};
    } else {
        j["report"] = nullptr;
    }
    j["fai"] = {{"mode", fai_mode},
                {"evaluations", fai_evaluations},
                {"rounds", fai_rounds},
                {"unimodal_consistent", fai_unimodal_consistent}};
    json t = json::object();
    for (const auto& [stage, secs] : timings) t[stage] = secs;
    j["timings_s"] = t;
    return j.dump(2);
}

namespace {

// Serializes every file the run produces.
class ArtifactWriter {
public:
    ArtifactWriter(std::filesystem::path root, RunManifest& manifest) : root_(std::move(root)), manifest_(manifest) {}

    void png(const std::string& name, const std::filesystem::path& rel, const Image& img) {
        std::lock_guard lock(mu_);
        prepare(rel);
        write_png(root_ / rel, img);
        manifest_.artifacts[name] = rel.generic_string();
    }
    void latent(const std::filesystem::path& rel, const LatentGrid& g) {
        std::lock_guard lock(mu_);
        prepare(rel);
        write_latent(root_ / rel, g);
    }
    void png_unlisted(const std::filesystem::path& rel, const Image& img) {
        std::lock_guard lock(mu_);
        prepare(rel);
        write_png(root_ / rel, img);
    }
    template <typename Fn>
    void file(const std::string& name, const std::filesystem::path& rel, Fn&& write) {
        std::lock_guard lock(mu_);
        prepare(rel);
        write(root_ / rel);
        manifest_.artifacts[name] = rel.generic_string();
    }
    void manifest() {
        std::lock_guard lock(mu_);
        std::filesystem::create_directories(root_);
        std::ofstream out(root_ / "manifest.json", std::ios::binary);
        out << manifest_.to_json() << '\n';
        if (!out) throw IoError("failed writing manifest.json");
    }

private:
    void prepare(const std::filesystem::path& rel) {
        std::filesystem::create_directories((root_ / rel).parent_path());
    }

    std::filesystem::path root_;
    RunManifest& manifest_;
    std::mutex mu_;
};

class StageTimer {
public:
    StageTimer(RunManifest& m, std::string stage) : m_(m), stage_(std::move(stage)), t0_(Clock::now()) {}
    ~StageTimer() {
        m_.timings.emplace_back(stage_, std::chrono::duration<double>(Clock::now() - t0_).count());
    }

private:
    using Clock = std::chrono::steady_clock;
    RunManifest& m_;
    std::string stage_;
    Clock::time_point t0_;
};

DumpSink make_dump_sink(ArtifactWriter& writer, const LatentCodec& codec, const std::string& subdir) {
    return [&writer, &codec, subdir](const DumpEvent& e) {
        const std::string role = e.role == NoiseRole::Rgb ? "rgb" : "normal";
        char step[16];
        std::snprintf(step, sizeof step, "%04zu", e.step);
        const std::string base = std::string(tag(e.view)) + "_" + role + "_" + std::string(e.label) + "_" + step;
        const std::filesystem::path dir = std::filesystem::path("dump") / subdir;
        writer.latent(dir / (base + ".lat"), e.latent);
        writer.png_unlisted(dir / (base + ".png"), clamp01(codec.decode(e.latent)));
    };
}

}  // namespace

RunManifest run_pipeline(const RunConfig& cfg) {
    validate_run_config(cfg);

    RunManifest manifest;
    manifest.config_json = run_config_json(cfg);
    manifest.out_dir = cfg.out_dir;
    manifest.fai_mode = std::string(to_string(cfg.fai_mode));
    ArtifactWriter writer(cfg.out_dir, manifest);
    std::string current = "setup";

    try {
        std::filesystem::create_directories(cfg.out_dir);
        const Backend backend = make_backend(cfg.backend);

        current = "load";
        ToyMesh mesh;
        {
            StageTimer timer(manifest, current);
            mesh = read_obj(cfg.mesh);
        }

        current = "render";
        ViewBundle bundle;
        {
            StageTimer timer(manifest, current);
            bundle = render_views(mesh, cfg.resolution);
            for (ViewId v : kAllViews) {
                const std::string t(tag(v));
                writer.png("render/" + t + "_rgb", "render/" + t + "_rgb.png", bundle[v].rgb);
                writer.png("render/" + t + "_normal", "render/" + t + "_normal.png", encode_normals(bundle[v].normal));
            }
        }

        current = "fuse";
        Image i_nov_f;
        {
            StageTimer timer(manifest, current);
            const RenderedView& front = bundle[ViewId::F];
            i_nov_f = backend.fuser->fuse(front.rgb, front.alpha, cfg.category);
            writer.png("fused_front", "fused_front.png", i_nov_f);
        }

        current = "tmdiff";
        TexturedBundle textured;
        {
            StageTimer timer(manifest, current);
            const ScheduleCoeffs sched = make_schedule(cfg.tmdiff_steps, cfg.tmdiff_sampler);
            const auto denoiser = backend.make_denoiser(sched);
            const TMDiffConfig tcfg = tmdiff_config(cfg, backend, denoiser->attention_site_count());
            const DumpSink dump =
                cfg.dump_stages.count("tmdiff") ? make_dump_sink(writer, *backend.codec, "tmdiff") : DumpSink{};
            textured = tmdiff_run(bundle, i_nov_f, *backend.codec, *denoiser, sched, tcfg, dump);
            for (ViewId v : kAllViews)
                writer.png("tmdiff/" + std::string(tag(v)), "tmdiff/" + std::string(tag(v)) + ".png", textured[v]);
        }

        current = "fai";
        const ScheduleCoeffs ssched = make_schedule(cfg.smdiff_total_steps, cfg.smdiff_sampler);
        const auto sdenoiser = backend.make_denoiser(ssched);
        FaiContext ctx;
        ctx.bundle = &bundle;
        ctx.inputs = smdiff_inputs(textured, bundle, i_nov_f);
        ctx.codec = backend.codec.get();
        ctx.embedder = backend.embedder.get();
        ctx.denoiser = sdenoiser.get();
        ctx.sched = &ssched;
        ctx.smdiff = smdiff_config(cfg, cfg.alpha_grid[0]);
        ctx.weights = cfg.weights;
        ctx.lambda = cfg.lambda;
        ctx.category = cfg.category;
        const bool dump_smdiff = cfg.dump_stages.count("smdiff") != 0;

        FaiResult fai;
        {
            StageTimer timer(manifest, current);
            AlphaMemo memo([&](std::size_t alpha) {
                FaiContext local = ctx;
                if (dump_smdiff) {
                    char sub[32];
                    std::snprintf(sub, sizeof sub, "smdiff/alpha_%04zu", alpha);
                    local.dump = make_dump_sink(writer, *backend.codec, sub);
                }
                return evaluate_alpha(alpha, local);
            });
            FaiOptions opts;
            opts.mode = cfg.fai_mode;
            opts.tie_break = cfg.tie_break;
            opts.parallel = cfg.fai_parallel && backend.concurrent_safe && sdenoiser->concurrent_safe();
            fai = adaptive_inversion([&memo](std::size_t a) { return memo(a); }, cfg.alpha_grid, opts);
            writer.file("fai_trace", "fai_trace.jsonl", [&](const std::filesystem::path& p) { write_fai_trace(p, fai); });
            manifest.alpha_star = fai.alpha_star;
            manifest.report = fai.best;
            manifest.fai_evaluations = fai.evaluations;
            manifest.fai_rounds = fai.rounds;
            manifest.fai_unimodal_consistent = fai.unimodal_consistent;
        }

        current = "smdiff";
        {
            StageTimer timer(manifest, current);
            SMDiffResult final_res;
            evaluate_alpha(fai.alpha_star, ctx, &final_res);
            for (ViewId v : kAllViews) {
                const std::size_t i = index_of(v);
                const std::string t(tag(v));
                writer.png("final/" + t + "_rgb", "final/" + t + "_rgb.png", final_res.images[i]);
                writer.png("final/" + t + "_normal", "final/" + t + "_normal.png", encode_normals(final_res.normals[i]));
            }
        }

        current = "export";
        {
            StageTimer timer(manifest, current);
            const PointCloud cloud = sample_point_cloud(mesh, cfg.point_count, cfg.seed);
            writer.file("input_points", "input_points.ply", [&](const std::filesystem::path& p) { write_ply(p, cloud); });
        }
        writer.manifest();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        manifest.status = "failed";
        manifest.failed_stage = current;
        manifest.error = e.what();
        try {
            writer.manifest();
        } catch (const std::exception&) {
        }
        throw StageError(current, e.what());
    }
    return manifest;
}

}  // namespace c33d
