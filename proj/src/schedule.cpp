#include "c33d/schedule.hpp"

#include <cmath>
#include <string>

#include "c33d/error.hpp"

namespace c33d {

namespace {

constexpr std::size_t kTrainSteps = 1000;
constexpr double kBetaStart = 1e-4;
constexpr double kBetaEnd = 0.02;

std::vector<double> base_alpha_bar() {
    std::vector<double> ab(kTrainSteps + 1);
    ab[0] = 1.0;
    for (std::size_t t = 1; t <= kTrainSteps; ++t) {
        const double b = kBetaStart + (kBetaEnd - kBetaStart) * static_cast<double>(t - 1) /
                                          static_cast<double>(kTrainSteps - 1);
        ab[t] = ab[t - 1] * (1.0 - b);
    }
    return ab;
}

}  // namespace

std::string_view to_string(SamplerKind k) noexcept {
    return k == SamplerKind::AncestralLike ? "ancestral-like" : "ddim-like";
}

SamplerKind sampler_from_string(std::string_view s) {
    if (s == "ancestral-like" || s == "ancestral") return SamplerKind::AncestralLike;
    if (s == "ddim-like" || s == "ddim") return SamplerKind::DdimLike;
    throw ConfigError("unknown sampler kind '" + std::string(s) + "'");
}

double ScheduleCoeffs::sigma(std::size_t t) const { return std::sqrt(1.0 - alpha_bar.at(t)); }

void ScheduleCoeffs::validate() const {
    if (nu.size() < 1 || nu.size() != beta.size() || nu.size() != gamma.size())
        throw InvalidSchedule("coefficient arrays must be non-empty and of equal length");
    for (std::size_t i = 0; i < nu.size(); ++i) {
        if (!(nu[i] > 0.0)) throw InvalidSchedule("nu_" + std::to_string(i + 1) + " must be positive");
        if (!std::isfinite(beta[i]) || !std::isfinite(gamma[i]))
            throw InvalidSchedule("non-finite coefficient at step " + std::to_string(i + 1));
    }
}

ScheduleCoeffs make_schedule(std::size_t steps, SamplerKind kind) {
    if (steps < 2) throw InvalidSchedule("schedule needs at least 2 steps");
    if (steps > kTrainSteps) throw InvalidSchedule("schedule supports at most 1000 steps");
    static const std::vector<double> base = base_alpha_bar();

    ScheduleCoeffs s;
    s.kind = kind;
    s.alpha_bar.resize(steps + 1);
    s.alpha_bar[0] = 1.0;
    for (std::size_t i = 1; i <= steps; ++i) s.alpha_bar[i] = base[(i * kTrainSteps) / steps];

    s.nu.resize(steps);
    s.beta.resize(steps);
    s.gamma.resize(steps);
    for (std::size_t t = 1; t <= steps; ++t) {
        const double ab_t = s.alpha_bar[t];
        const double ab_prev = s.alpha_bar[t - 1];
        const double nu = std::sqrt(ab_prev / ab_t);
        double sigma = 0.0;
        if (kind == SamplerKind::AncestralLike)
            sigma = std::sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_prev);
        s.nu[t - 1] = nu;
        s.beta[t - 1] = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma)) - nu * std::sqrt(1.0 - ab_t);
        s.gamma[t - 1] = sigma;
    }
    s.validate();
    return s;
}

ScheduleCoeffs make_custom_schedule(std::vector<double> nu, std::vector<double> beta, std::vector<double> gamma) {
    ScheduleCoeffs s;
    s.nu = std::move(nu);
    s.beta = std::move(beta);
    s.gamma = std::move(gamma);
    s.validate();
    // Recover alpha_bar from nu under the variance-preserving reading.
    s.alpha_bar.resize(s.nu.size() + 1);
    s.alpha_bar[0] = 1.0;
    for (std::size_t t = 1; t <= s.nu.size(); ++t) {
        const double ab = s.alpha_bar[t - 1] / (s.nu[t - 1] * s.nu[t - 1]);
        s.alpha_bar[t] = std::min(ab, 1.0 - 1e-12);
    }
    bool any_noise = false;
    for (double g : s.gamma) any_noise = any_noise || g != 0.0;
    s.kind = any_noise ? SamplerKind::AncestralLike : SamplerKind::DdimLike;
    return s;
}

namespace {

void check_step(const ScheduleCoeffs& c, std::size_t t) {
    if (t < 1 || t > c.steps())
        throw InvalidSchedule("step " + std::to_string(t) + " outside [1, " + std::to_string(c.steps()) + "]");
}

}  // namespace

LatentGrid denoise_step(const LatentGrid& x_t, const LatentGrid& eps_pred, const LatentGrid& noise,
                        const ScheduleCoeffs& coeffs, std::size_t t) {
    require_same_shape(x_t, eps_pred, "denoise_step eps_pred");
    require_same_shape(x_t, noise, "denoise_step noise");
    check_step(coeffs, t);
    const double nu = coeffs.nu_at(t), beta = coeffs.beta_at(t), gamma = coeffs.gamma_at(t);
    LatentGrid out(x_t.channels(), x_t.height(), x_t.width());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = nu * x_t[i] + beta * eps_pred[i] + gamma * noise[i];
    return out;
}

LatentGrid invert_step(const LatentGrid& x_prev, const LatentGrid& eps_pred, const LatentGrid& noise,
                       const ScheduleCoeffs& coeffs, std::size_t t) {
    require_same_shape(x_prev, eps_pred, "invert_step eps_pred");
    require_same_shape(x_prev, noise, "invert_step noise");
    check_step(coeffs, t);
    const double nu = coeffs.nu_at(t), beta = coeffs.beta_at(t), gamma = coeffs.gamma_at(t);
    if (!(nu > 0.0)) throw InvalidSchedule("invert_step: nu_t must be positive");
    LatentGrid out(x_prev.channels(), x_prev.height(), x_prev.width());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (x_prev[i] - beta * eps_pred[i] - gamma * noise[i]) / nu;
    return out;
}

NoiseLedger::NoiseLedger(const NoiseLedger& other) {
    std::lock_guard lock(other.mu_);
    entries_ = other.entries_;
}

NoiseLedger& NoiseLedger::operator=(const NoiseLedger& other) {
    if (this == &other) return *this;
    std::scoped_lock lock(mu_, other.mu_);
    entries_ = other.entries_;
    return *this;
}

void NoiseLedger::record(const NoiseEntry& entry) {
    std::lock_guard lock(mu_);
    auto [it, inserted] = entries_.emplace(entry.key, entry);
    if (!inserted)
        throw InvalidInput("noise slot written twice (view " + std::to_string(entry.key.view) + ", step " +
                           std::to_string(entry.key.step) + ")");
}

std::optional<NoiseEntry> NoiseLedger::find(const NoiseKey& key) const {
    std::lock_guard lock(mu_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

std::size_t NoiseLedger::size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
}

std::vector<NoiseEntry> NoiseLedger::entries() const {
    std::lock_guard lock(mu_);
    std::vector<NoiseEntry> out;
    out.reserve(entries_.size());
    for (const auto& [k, e] : entries_) out.push_back(e);
    return out;
}

void NoiseLedger::merge(const NoiseLedger& other) {
    for (const auto& e : other.entries()) record(e);
}

LatentGrid draw_step_noise(const NoiseKey& slot, const NoiseKey& source, const LatentGrid& like, double gamma,
                           const LatentGrid& eps_pred, NoiseLedger& ledger) {
    NoiseEntry entry;
    entry.key = slot;
    entry.source = source;
    entry.eps_digest = digest(eps_pred);
    LatentGrid noise;
    if (gamma != 0.0) {
        noise = gaussian_grid(source, like.channels(), like.height(), like.width());
        entry.materialized = true;
        entry.noise_digest = digest(noise);
    } else {
        noise = LatentGrid(like.channels(), like.height(), like.width());
    }
    ledger.record(entry);
    return noise;
}

}  // namespace c33d
