#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "c33d/attention.hpp"
#include "c33d/image.hpp"
#include "c33d/latent.hpp"
#include "c33d/schedule.hpp"

namespace c33d {

// How a denoiser consumes the front-view latent eta.
enum class EtaUsage {
    KeyValue,  // keys/values of the configured attention sites (texture stage)
    Concat,    // channel concatenation plus time-embedding term (shape stage)
};

// tau: text condition (null = unconditional); eta: front-view latent.
struct Condition {
    std::optional<std::string> tau;
    std::shared_ptr<const LatentGrid> eta;
    EtaUsage usage = EtaUsage::KeyValue;

    static Condition null() { return {}; }
};

// Attention-site and step ranges are inclusive and expressed in the
// backend's own indices (sites 0..attention_site_count-1, steps 1..T).
struct InjectionConfig {
    bool enabled = false;
    std::pair<std::size_t, std::size_t> layer_range{0, 0};
    std::pair<std::size_t, std::size_t> step_range{1, 1};

    bool active(std::size_t site, std::size_t t) const noexcept {
        return enabled && site >= layer_range.first && site <= layer_range.second && t >= step_range.first &&
               t <= step_range.second;
    }
    void validate(std::size_t site_count, std::size_t steps) const;  // throws ConfigError

    static InjectionConfig disabled() { return {}; }
};

class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual LatentGrid predict_noise(const LatentGrid& x, std::size_t t, const Condition& cond,
                                     const InjectionConfig& inj) const = 0;
    virtual std::size_t attention_site_count() const = 0;
    // False for adapters that must not be called from several threads.
    virtual bool concurrent_safe() const { return true; }
};

// All returned features have unit L2 norm.
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::vector<double> embed_image(const Image& img, const Mask& mask) const = 0;
    virtual std::vector<double> embed_text(std::string_view text) const = 0;
    virtual std::vector<double> embed_image_clip(const Image& img, const Mask& mask) const = 0;
};

class LatentCodec {
public:
    virtual ~LatentCodec() = default;
    virtual LatentGrid encode(const Image& img) const = 0;
    virtual Image decode(const LatentGrid& latent) const = 0;
};

class FrontViewFuser {
public:
    virtual ~FrontViewFuser() = default;
    virtual Image fuse(const Image& front_rgb, const Mask& mask, std::string_view category) const = 0;
};

// Cosine of two unit vectors (plain dot product, clamped to [-1, 1]).
double cosine(const std::vector<double>& a, const std::vector<double>& b);

// ---------------------------------------------------------------------------
// Toy reference implementations

// Identity codec: the latent is the image at full resolution, 3 channels.
class ToyCodec final : public LatentCodec {
public:
    LatentGrid encode(const Image& img) const override;
    Image decode(const LatentGrid& latent) const override;
};

// phi: per 3x3 spatial cell, masked coverage, mean and std of each color
// channel, L2-normalized. CLIP stand-ins: mean masked color plus a small
// constant component; text maps a category to the feature of a constant
// image of the category's color.
class ToyEmbedder final : public Embedder {
public:
    std::vector<double> embed_image(const Image& img, const Mask& mask) const override;
    std::vector<double> embed_text(std::string_view text) const override;
    std::vector<double> embed_image_clip(const Image& img, const Mask& mask) const override;
};

// Color the toy world associates with a category: named colors and a few
// animals map to fixed colors, anything else to a hash-derived color.
Rgb category_color(std::string_view category);

// Blend of the front render with a category-keyed striped texture inside
// the mask. The ratio is hashed from the category unless forced.
class ToyFuser final : public FrontViewFuser {
public:
    explicit ToyFuser(std::optional<double> forced_ratio = std::nullopt) : forced_ratio_(forced_ratio) {}
    Image fuse(const Image& front_rgb, const Mask& mask, std::string_view category) const override;

    double ratio_for(std::string_view category) const;
    static Image procedural_texture(std::size_t height, std::size_t width, std::string_view category);

private:
    std::optional<double> forced_ratio_;
};

struct ToyDenoiserParams {
    std::size_t channels = 3;       // latent channels the projections are built for
    std::size_t token_grid = 4;     // tokens per side after average pooling
    std::size_t embed_dim = 8;      // width of the time/prompt embedding block
    std::size_t key_dim = 8;
    double prior_variance = 0.03;   // variance of the toy data prior around the target
    double token_prior_mean = 0.5;
    double token_prior_variance = 0.25;
    double eta_mix = 0.5;           // weight of eta in the concatenated read-in
    double attention_gain = 0.5;    // residual mixing of each attention site
    double prompt_gain = 0.02;      // direct prompt bias on the target color
    double qk_scale = 1.5;
    std::uint64_t weight_seed = 0xC33Dull;
};

// Per-site debug capture for the toy denoiser.
struct ToyTrace {
    std::vector<AttentionResult> sites;
    std::vector<bool> injected;
    std::vector<Matrix> query_rows;
    std::vector<Matrix> kv_rows;
    std::vector<AttentionProjections> projections;
    double key_dim = 0.0;
};

// Two attention sites over pooled tokens followed by a Gaussian-prior
// denoising read-out:
//   u = x / sqrt(abar_t),  s^2 = (1 - abar_t) / abar_t,
//   eps = s (u - m) / (v + s^2),
// where m is the upsampled token target produced by the attention sites.
// Injected sites take keys/values from a parallel pass over eta; in Concat
// mode the read-in mixes eta into the content channels and the embedding
// gains a projection of eta's mean.
class ToyDenoiser final : public Denoiser {
public:
    ToyDenoiser(std::vector<double> alpha_bar, ToyDenoiserParams params = {});

    LatentGrid predict_noise(const LatentGrid& x, std::size_t t, const Condition& cond,
                             const InjectionConfig& inj) const override;
    LatentGrid predict_traced(const LatentGrid& x, std::size_t t, const Condition& cond, const InjectionConfig& inj,
                              ToyTrace* trace) const;
    std::size_t attention_site_count() const override { return kSites; }
    const ToyDenoiserParams& params() const noexcept { return params_; }

    static constexpr std::size_t kSites = 2;

private:
    std::vector<double> alpha_bar_;
    ToyDenoiserParams params_;
    std::vector<AttentionProjections> proj_;  // per site
    Matrix eta_embed_;                       // embed_dim x channels
};

// Contraction toward eta: same Gaussian-prior read-out with m = eta when
// eta is given in Concat mode, and m = u (zero prediction) otherwise.
class ShapePullDenoiser final : public Denoiser {
public:
    explicit ShapePullDenoiser(std::vector<double> alpha_bar, double prior_variance = 0.1);
    LatentGrid predict_noise(const LatentGrid& x, std::size_t t, const Condition& cond,
                             const InjectionConfig& inj) const override;
    std::size_t attention_site_count() const override { return 0; }

private:
    std::vector<double> alpha_bar_;
    double prior_variance_;
};

// Returns a constant grid regardless of input.
class ConstantDenoiser final : public Denoiser {
public:
    explicit ConstantDenoiser(double value = 0.0) : value_(value) {}
    LatentGrid predict_noise(const LatentGrid& x, std::size_t, const Condition&, const InjectionConfig&) const override {
        return LatentGrid(x.channels(), x.height(), x.width(), value_);
    }
    std::size_t attention_site_count() const override { return ToyDenoiser::kSites; }

private:
    double value_;
};

// ---------------------------------------------------------------------------
// Backend selection

using DenoiserFactory = std::function<std::shared_ptr<const Denoiser>(const ScheduleCoeffs&)>;

struct Backend {
    std::string name;
    std::shared_ptr<const LatentCodec> codec;
    std::shared_ptr<const Embedder> embedder;
    std::shared_ptr<const FrontViewFuser> fuser;
    DenoiserFactory make_denoiser;  // one denoiser per stage schedule
    bool concurrent_safe = true;
    // Site range the backend uses for the texture-stage injection default.
    std::pair<std::size_t, std::size_t> default_injection_sites{1, 1};
};

using BackendFactory = std::function<Backend()>;

// Registers an external adapter reachable as "adapter:<name>".
void register_adapter(const std::string& name, BackendFactory factory);

// "toy", "toy-pull" or "adapter:<name>"; throws ConfigError otherwise.
Backend make_backend(std::string_view selector);

}  // namespace c33d
