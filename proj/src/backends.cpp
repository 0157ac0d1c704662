#include "c33d/backends.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <string>

#include "c33d/error.hpp"
#include "c33d/rng.hpp"

namespace c33d {

void InjectionConfig::validate(std::size_t site_count, std::size_t steps) const {
    if (!enabled) return;
    if (layer_range.first > layer_range.second) throw ConfigError("injection layer range is empty");
    if (step_range.first > step_range.second) throw ConfigError("injection step range is empty");
    if (layer_range.second >= site_count)
        throw ConfigError("injection layer " + std::to_string(layer_range.second) + " beyond the backend's " +
                          std::to_string(site_count) + " attention sites");
    if (step_range.first < 1 || step_range.second > steps)
        throw ConfigError("injection steps must lie in [1, " + std::to_string(steps) + "]");
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ShapeError("cosine: feature lengths differ");
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d += a[i] * b[i];
    return std::clamp(d, -1.0, 1.0);
}

namespace {

std::vector<double> normalized(std::vector<double> v) {
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    if (!(n2 > 1e-24)) throw ZeroFeature("feature vector has zero norm");
    const double inv = 1.0 / std::sqrt(n2);
    for (double& x : v) x *= inv;
    return v;
}

double hash_unit(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

}  // namespace

// ---------------------------------------------------------------------------

LatentGrid ToyCodec::encode(const Image& img) const {
    LatentGrid g(3, img.height(), img.width());
    for (std::size_t y = 0; y < img.height(); ++y)
        for (std::size_t x = 0; x < img.width(); ++x)
            for (std::size_t c = 0; c < 3; ++c) g.at(c, y, x) = img.at(y, x, c);
    return g;
}

Image ToyCodec::decode(const LatentGrid& latent) const {
    if (latent.channels() != 3) throw ShapeError("toy codec decodes 3-channel latents only");
    Image img(latent.height(), latent.width());
    for (std::size_t y = 0; y < img.height(); ++y)
        for (std::size_t x = 0; x < img.width(); ++x)
            for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = latent.at(c, y, x);
    return img;
}

// ---------------------------------------------------------------------------

std::vector<double> ToyEmbedder::embed_image(const Image& img, const Mask& mask) const {
    if (mask.height() != img.height() || mask.width() != img.width())
        throw ShapeError("embed_image: mask and image sizes differ");
    if (mask.count() == 0) throw ZeroFeature("embed_image: empty mask");
    constexpr std::size_t kCells = 3;
    std::vector<double> feat;
    feat.reserve(kCells * kCells * 7);
    for (std::size_t cy = 0; cy < kCells; ++cy) {
        for (std::size_t cx = 0; cx < kCells; ++cx) {
            const std::size_t y0 = cy * img.height() / kCells, y1 = (cy + 1) * img.height() / kCells;
            const std::size_t x0 = cx * img.width() / kCells, x1 = (cx + 1) * img.width() / kCells;
            double n = 0.0;
            std::array<double, 3> sum{}, sum2{};
            for (std::size_t y = y0; y < y1; ++y)
                for (std::size_t x = x0; x < x1; ++x) {
                    if (!mask(y, x)) continue;
                    n += 1.0;
                    for (std::size_t c = 0; c < 3; ++c) {
                        sum[c] += img.at(y, x, c);
                        sum2[c] += img.at(y, x, c) * img.at(y, x, c);
                    }
                }
            const double area = static_cast<double>((y1 - y0) * (x1 - x0));
            feat.push_back(area > 0 ? n / area : 0.0);
            for (std::size_t c = 0; c < 3; ++c) feat.push_back(n > 0 ? sum[c] / n : 0.0);
            for (std::size_t c = 0; c < 3; ++c) {
                const double mean = n > 0 ? sum[c] / n : 0.0;
                feat.push_back(n > 0 ? std::sqrt(std::max(0.0, sum2[c] / n - mean * mean)) : 0.0);
            }
        }
    }
    return normalized(std::move(feat));
}

namespace {

constexpr double kClipBias = 0.05;

std::vector<double> clip_from_color(const Rgb& c) { return normalized({c[0], c[1], c[2], kClipBias}); }

}  // namespace

std::vector<double> ToyEmbedder::embed_image_clip(const Image& img, const Mask& mask) const {
    if (mask.height() != img.height() || mask.width() != img.width())
        throw ShapeError("embed_image_clip: mask and image sizes differ");
    const std::size_t n = mask.count();
    if (n == 0) throw ZeroFeature("embed_image_clip: empty mask");
    Rgb mean{};
    for (std::size_t y = 0; y < img.height(); ++y)
        for (std::size_t x = 0; x < img.width(); ++x)
            if (mask(y, x))
                for (std::size_t c = 0; c < 3; ++c) mean[c] += img.at(y, x, c);
    for (double& m : mean) m /= static_cast<double>(n);
    return clip_from_color(mean);
}

std::vector<double> ToyEmbedder::embed_text(std::string_view text) const {
    if (text.empty()) throw InvalidInput("embed_text: empty text");
    return clip_from_color(category_color(text));
}

Rgb category_color(std::string_view category) {
    static const std::map<std::string, Rgb, std::less<>> kNamed = {
        {"red", {1.0, 0.0, 0.0}},     {"green", {0.0, 1.0, 0.0}},   {"blue", {0.0, 0.0, 1.0}},
        {"yellow", {1.0, 1.0, 0.0}},  {"magenta", {1.0, 0.0, 1.0}}, {"cyan", {0.0, 1.0, 1.0}},
        {"white", {1.0, 1.0, 1.0}},   {"black", {0.0, 0.0, 0.0}},   {"orange", {1.0, 0.55, 0.0}},
        {"purple", {0.5, 0.0, 0.5}},  {"pink", {1.0, 0.75, 0.8}},   {"brown", {0.55, 0.35, 0.15}},
        {"gray", {0.5, 0.5, 0.5}},    {"grey", {0.5, 0.5, 0.5}},    {"tiger", {0.95, 0.5, 0.1}},
        {"frog", {0.2, 0.7, 0.2}},    {"lion", {0.85, 0.65, 0.3}},  {"panda", {0.9, 0.9, 0.9}},
    };
    if (auto it = kNamed.find(category); it != kNamed.end()) return it->second;
    const std::uint64_t h = hash_string(category);
    return {0.15 + 0.8 * hash_unit(splitmix64(h)), 0.15 + 0.8 * hash_unit(splitmix64(h + 1)),
            0.15 + 0.8 * hash_unit(splitmix64(h + 2))};
}

// ---------------------------------------------------------------------------

double ToyFuser::ratio_for(std::string_view category) const {
    if (forced_ratio_) return *forced_ratio_;
    return 0.35 + 0.4 * hash_unit(hash_combine(hash_string(category), 0xF05Eull));
}

Image ToyFuser::procedural_texture(std::size_t height, std::size_t width, std::string_view category) {
    const Rgb base = category_color(category);
    const std::uint64_t h = hash_string(category);
    const double freq = 2.0 + 4.0 * hash_unit(splitmix64(h ^ 0x5717e5ull));
    Image tex(height, width);
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
            const double u = (static_cast<double>(x) + static_cast<double>(y)) / static_cast<double>(height + width);
            const double shade = std::sin(2.0 * std::numbers::pi * freq * u) >= 0.0 ? 1.0 : 0.75;
            tex.set_pixel(y, x, {base[0] * shade, base[1] * shade, base[2] * shade});
        }
    return tex;
}

Image ToyFuser::fuse(const Image& front_rgb, const Mask& mask, std::string_view category) const {
    if (category.empty()) throw InvalidInput("fuse: empty category");
    if (mask.height() != front_rgb.height() || mask.width() != front_rgb.width())
        throw ShapeError("fuse: mask and image sizes differ");
    const double r = ratio_for(category);
    const Image tex = procedural_texture(front_rgb.height(), front_rgb.width(), category);
    Image out = front_rgb;
    for (std::size_t y = 0; y < out.height(); ++y)
        for (std::size_t x = 0; x < out.width(); ++x) {
            if (!mask(y, x)) continue;
            for (std::size_t c = 0; c < 3; ++c)
                out.at(y, x, c) = (1.0 - r) * front_rgb.at(y, x, c) + r * tex.at(y, x, c);
        }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

std::size_t token_side(std::size_t grid, std::size_t extent) { return std::max<std::size_t>(1, std::min(grid, extent)); }

// Average-pools value(i) over a channels x height x width layout onto a
// gh x gw token grid; rows are tokens.
template <typename Value>
Matrix pool_tokens(std::size_t channels, std::size_t height, std::size_t width, std::size_t gh, std::size_t gw,
                   Value&& value) {
    Matrix tokens(gh * gw, channels);
    std::vector<std::size_t> col(width);
    for (std::size_t x = 0; x < width; ++x) col[x] = x * gw / width;
    std::vector<double> counts(gh * gw, 0.0);
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) counts[(y * gh / height) * gw + col[x]] += 1.0;
    std::vector<double> acc(gh * gw);
    for (std::size_t c = 0; c < channels; ++c) {
        std::fill(acc.begin(), acc.end(), 0.0);
        std::size_t i = c * height * width;
        for (std::size_t y = 0; y < height; ++y) {
            double* row = acc.data() + (y * gh / height) * gw;
            for (std::size_t x = 0; x < width; ++x, ++i) row[col[x]] += value(i);
        }
        for (std::size_t r = 0; r < tokens.rows; ++r) tokens(r, c) = acc[r] / counts[r];
    }
    return tokens;
}

Matrix pool_tokens(const LatentGrid& g, std::size_t gh, std::size_t gw) {
    return pool_tokens(g.channels(), g.height(), g.width(), gh, gw, [&g](std::size_t i) { return g[i]; });
}

// Bilinear upsampling of token content back to the latent grid; emit(i, m)
// receives the interpolated value for flat index i.
template <typename Emit>
void upsample_tokens(const Matrix& tokens, std::size_t channels, std::size_t gh, std::size_t gw, std::size_t height,
                     std::size_t width, Emit&& emit) {
    struct Tap {
        std::size_t i0, i1;
        double frac;
    };
    const auto taps = [](std::size_t extent, std::size_t cells) {
        std::vector<Tap> out(extent);
        for (std::size_t p = 0; p < extent; ++p) {
            const double pos =
                (static_cast<double>(p) + 0.5) * static_cast<double>(cells) / static_cast<double>(extent) - 0.5;
            const double clamped = std::clamp(pos, 0.0, static_cast<double>(cells - 1));
            const auto i0 = static_cast<std::size_t>(std::floor(clamped));
            out[p] = {i0, std::min(i0 + 1, cells - 1), clamped - static_cast<double>(i0)};
        }
        return out;
    };
    const std::vector<Tap> ty = taps(height, gh);
    const std::vector<Tap> tx = taps(width, gw);
    std::vector<double> top(gw), bot(gw);
    std::size_t i = 0;
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t y = 0; y < height; ++y) {
            const Tap& a = ty[y];
            for (std::size_t g = 0; g < gw; ++g) {
                top[g] = tokens(a.i0 * gw + g, c);
                bot[g] = tokens(a.i1 * gw + g, c);
            }
            for (std::size_t x = 0; x < width; ++x, ++i) {
                const Tap& b = tx[x];
                const double t = (1 - b.frac) * top[b.i0] + b.frac * top[b.i1];
                const double d = (1 - b.frac) * bot[b.i0] + b.frac * bot[b.i1];
                emit(i, (1 - a.frac) * t + a.frac * d);
            }
        }
}

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
    Matrix m(rows, cols);
    for (double& v : m.data) v = scale * rng.normal();
    return m;
}

std::vector<double> prompt_embedding(const std::optional<std::string>& tau, std::size_t dim) {
    std::vector<double> e(dim, 0.0);
    if (!tau) return e;
    Rng rng(hash_string(*tau));
    double n2 = 0.0;
    for (double& v : e) {
        v = rng.normal();
        n2 += v * v;
    }
    for (double& v : e) v *= 0.5 / std::sqrt(n2);
    return e;
}

std::vector<double> prompt_color(const std::optional<std::string>& tau, std::size_t channels) {
    std::vector<double> c(channels, 0.0);
    if (!tau) return c;
    Rng rng(hash_combine(hash_string(*tau), 0xC010ull));
    for (double& v : c) v = rng.uniform(-1.0, 1.0);
    return c;
}

double abar_at(const std::vector<double>& alpha_bar, std::size_t t) {
    if (t < 1 || t >= alpha_bar.size())
        throw InvalidSchedule("denoiser step " + std::to_string(t) + " outside the schedule");
    return alpha_bar[t];
}

}  // namespace

ToyDenoiser::ToyDenoiser(std::vector<double> alpha_bar, ToyDenoiserParams params)
    : alpha_bar_(std::move(alpha_bar)), params_(params) {
    if (alpha_bar_.size() < 2) throw InvalidSchedule("toy denoiser needs a schedule");
    const std::size_t c = params_.channels;
    const std::size_t d = c + params_.embed_dim;
    for (std::size_t site = 0; site < kSites; ++site) {
        Rng rng(hash_combine(params_.weight_seed, site));
        AttentionProjections p;
        p.w_q = random_matrix(rng, d, params_.key_dim, params_.qk_scale / std::sqrt(static_cast<double>(d)));
        p.w_k = random_matrix(rng, d, params_.key_dim, params_.qk_scale / std::sqrt(static_cast<double>(d)));
        p.w_v = Matrix(d, c);
        for (std::size_t k = 0; k < c; ++k) p.w_v(k, k) = 1.0;
        proj_.push_back(std::move(p));
    }
    Rng rng(hash_combine(params_.weight_seed, 0xE7Aull));
    eta_embed_ = random_matrix(rng, params_.embed_dim, c, 0.5);
}

LatentGrid ToyDenoiser::predict_noise(const LatentGrid& x, std::size_t t, const Condition& cond,
                                      const InjectionConfig& inj) const {
    return predict_traced(x, t, cond, inj, nullptr);
}

LatentGrid ToyDenoiser::predict_traced(const LatentGrid& x, std::size_t t, const Condition& cond,
                                       const InjectionConfig& inj, ToyTrace* trace) const {
    const std::size_t C = params_.channels;
    const std::size_t E = params_.embed_dim;
    if (x.channels() != C) throw ShapeError("toy denoiser expects " + std::to_string(C) + "-channel latents");
    bool any_injection = false;
    for (std::size_t site = 0; site < kSites; ++site) any_injection = any_injection || inj.active(site, t);
    const bool inject = any_injection && cond.usage == EtaUsage::KeyValue;
    const bool concat = cond.usage == EtaUsage::Concat;
    if ((inject || concat) && !cond.eta) throw MissingCondition("toy denoiser: eta required but null");
    if (cond.eta) require_same_shape(x, *cond.eta, "toy denoiser eta");

    const double abar = abar_at(alpha_bar_, t);
    const double s2 = (1.0 - abar) / abar;
    const double s = std::sqrt(s2);
    const double inv_root = 1.0 / std::sqrt(abar);

    const double rho = concat ? params_.eta_mix : 0.0;
    const LatentGrid* eta = cond.eta.get();

    // Time embedding + prompt embedding (+ projected eta mean in Concat mode).
    std::vector<double> emb = prompt_embedding(cond.tau, E);
    const double t_norm = static_cast<double>(t) / static_cast<double>(alpha_bar_.size() - 1);
    for (std::size_t k = 0; k < E; ++k) {
        const double freq = std::pow(8.0, static_cast<double>(k / 2) / static_cast<double>(std::max<std::size_t>(1, E / 2)));
        emb[k] += 0.5 * (k % 2 == 0 ? std::sin(std::numbers::pi * freq * t_norm) : std::cos(std::numbers::pi * freq * t_norm));
    }
    if (concat) {
        std::vector<double> mean(C, 0.0);
        const std::size_t plane = x.height() * x.width();
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t i = 0; i < plane; ++i) mean[c] += (*cond.eta)[c * plane + i];
            mean[c] /= static_cast<double>(plane);
        }
        for (std::size_t k = 0; k < E; ++k)
            for (std::size_t c = 0; c < C; ++c) emb[k] += eta_embed_(k, c) * mean[c];
    }

    const std::size_t gh = token_side(params_.token_grid, x.height());
    const std::size_t gw = token_side(params_.token_grid, x.width());
    const auto with_embedding = [&](const Matrix& pooled) {
        Matrix h(pooled.rows, C + E);
        for (std::size_t r = 0; r < h.rows; ++r) {
            for (std::size_t c = 0; c < C; ++c) h(r, c) = pooled(r, c);
            for (std::size_t k = 0; k < E; ++k) h(r, C + k) = emb[k];
        }
        return h;
    };
    // Pooled tokens still carry noise of variance s^2 / P; shrink them toward
    // the token prior so the read-in stays bounded at high noise levels.
    const double per_token = static_cast<double>(x.height() * x.width()) / static_cast<double>(gh * gw);
    const auto shrink = [&](Matrix pooled, double noise_var) {
        const double tau2 = params_.token_prior_variance;
        const double f = tau2 / (tau2 + noise_var / per_token);
        for (double& v : pooled.data) v = params_.token_prior_mean + f * (v - params_.token_prior_mean);
        return pooled;
    };
    Matrix h = with_embedding(
        concat ? shrink(pool_tokens(C, x.height(), x.width(), gh, gw,
                                    [&](std::size_t i) { return (1.0 - rho) * x[i] * inv_root + rho * (*eta)[i]; }),
                        (1.0 - rho) * (1.0 - rho) * s2)
               : shrink(pool_tokens(C, x.height(), x.width(), gh, gw, [&](std::size_t i) { return x[i] * inv_root; }),
                        s2));
    // The reference pass reads eta through the same noise-level read-in, so
    // eta = x / sqrt(abar_t) reproduces the query rows exactly.
    Matrix h_ref;
    if (inject) h_ref = with_embedding(shrink(pool_tokens(*eta, gh, gw), s2));

    const double gain = params_.attention_gain;
    const double key_dim = static_cast<double>(params_.key_dim);
    if (trace) {
        *trace = ToyTrace{};
        trace->key_dim = key_dim;
    }
    for (std::size_t site = 0; site < kSites; ++site) {
        const bool injected = inject && inj.active(site, t);
        AttentionResult res = mself_attn(h, injected ? h_ref : h, proj_[site], key_dim);
        if (trace) {
            trace->query_rows.push_back(h);
            trace->kv_rows.push_back(injected ? h_ref : h);
            trace->projections.push_back(proj_[site]);
            trace->injected.push_back(injected);
        }
        for (std::size_t r = 0; r < h.rows; ++r)
            for (std::size_t c = 0; c < C; ++c) h(r, c) += gain * (res.output(r, c) - h(r, c));
        if (inject) {
            const AttentionResult ref = mself_attn(h_ref, h_ref, proj_[site], key_dim);
            for (std::size_t r = 0; r < h_ref.rows; ++r)
                for (std::size_t c = 0; c < C; ++c) h_ref(r, c) += gain * (ref.output(r, c) - h_ref(r, c));
        }
        if (trace) trace->sites.push_back(std::move(res));
    }

    Matrix target(h.rows, C);
    const std::vector<double> bias = prompt_color(cond.tau, C);
    for (std::size_t r = 0; r < h.rows; ++r)
        for (std::size_t c = 0; c < C; ++c) target(r, c) = h(r, c) + params_.prompt_gain * bias[c];
    LatentGrid eps(C, x.height(), x.width());
    const double k = s / (params_.prior_variance + s2);
    upsample_tokens(target, C, gh, gw, x.height(), x.width(),
                    [&](std::size_t i, double m) { eps[i] = k * (x[i] * inv_root - m); });
    return eps;
}

ShapePullDenoiser::ShapePullDenoiser(std::vector<double> alpha_bar, double prior_variance)
    : alpha_bar_(std::move(alpha_bar)), prior_variance_(prior_variance) {
    if (alpha_bar_.size() < 2) throw InvalidSchedule("shape-pull denoiser needs a schedule");
}

LatentGrid ShapePullDenoiser::predict_noise(const LatentGrid& x, std::size_t t, const Condition& cond,
                                            const InjectionConfig&) const {
    LatentGrid eps(x.channels(), x.height(), x.width());
    if (cond.usage != EtaUsage::Concat) return eps;
    if (!cond.eta) throw MissingCondition("shape-pull denoiser: eta required but null");
    require_same_shape(x, *cond.eta, "shape-pull eta");
    const double abar = abar_at(alpha_bar_, t);
    const double s2 = (1.0 - abar) / abar;
    const double k = std::sqrt(s2) / (prior_variance_ + s2);
    const double inv_root = 1.0 / std::sqrt(abar);
    for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = k * (x[i] * inv_root - (*cond.eta)[i]);
    return eps;
}

// ---------------------------------------------------------------------------

namespace {

std::mutex& registry_mutex() {
    static std::mutex mu;
    return mu;
}

std::map<std::string, BackendFactory>& registry() {
    static std::map<std::string, BackendFactory> r;
    return r;
}

Backend toy_backend(std::string name, bool pull) {
    Backend b;
    b.name = std::move(name);
    b.codec = std::make_shared<ToyCodec>();
    b.embedder = std::make_shared<ToyEmbedder>();
    b.fuser = std::make_shared<ToyFuser>();
    if (pull) {
        b.make_denoiser = [](const ScheduleCoeffs& s) -> std::shared_ptr<const Denoiser> {
            return std::make_shared<ShapePullDenoiser>(s.alpha_bar);
        };
        b.default_injection_sites = {0, 0};
    } else {
        b.make_denoiser = [](const ScheduleCoeffs& s) -> std::shared_ptr<const Denoiser> {
            return std::make_shared<ToyDenoiser>(s.alpha_bar);
        };
        b.default_injection_sites = {ToyDenoiser::kSites - 1, ToyDenoiser::kSites - 1};
    }
    return b;
}

}  // namespace

void register_adapter(const std::string& name, BackendFactory factory) {
    std::lock_guard lock(registry_mutex());
    registry()[name] = std::move(factory);
}

Backend make_backend(std::string_view selector) {
    if (selector == "toy") return toy_backend("toy", false);
    if (selector == "toy-pull") return toy_backend("toy-pull", true);
    constexpr std::string_view kPrefix = "adapter:";
    if (selector.substr(0, kPrefix.size()) == kPrefix) {
        const std::string name(selector.substr(kPrefix.size()));
        std::lock_guard lock(registry_mutex());
        auto it = registry().find(name);
        if (it == registry().end()) throw ConfigError("no adapter registered under '" + name + "'");
        Backend b = it->second();
        if (b.name.empty()) b.name = std::string(selector);
        return b;
    }
    throw ConfigError("unknown backend '" + std::string(selector) + "'");
}

}  // namespace c33d
