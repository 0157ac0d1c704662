#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "c33d/latent.hpp"
#include "c33d/rng.hpp"

namespace c33d {

enum class SamplerKind { AncestralLike, DdimLike };

std::string_view to_string(SamplerKind k) noexcept;
SamplerKind sampler_from_string(std::string_view s);  // throws ConfigError

// Per-step coefficients of the affine step
//     x_{t-1} = nu_t x_t + beta_t eps_pred + gamma_t noise,   t = 1..T.
// Arrays are stored 0-based: index t-1 holds step t.
struct ScheduleCoeffs {
    SamplerKind kind = SamplerKind::DdimLike;
    std::vector<double> nu;
    std::vector<double> beta;
    std::vector<double> gamma;
    // Cumulative signal fraction of the underlying variance-preserving
    // schedule, alpha_bar[0] = 1 and alpha_bar[t] for t = 1..T.
    std::vector<double> alpha_bar;

    std::size_t steps() const noexcept { return nu.size(); }
    double nu_at(std::size_t t) const { return nu.at(t - 1); }
    double beta_at(std::size_t t) const { return beta.at(t - 1); }
    double gamma_at(std::size_t t) const { return gamma.at(t - 1); }

    // Marginal noise std sqrt(1 - alpha_bar_t) at step t.
    double sigma(std::size_t t) const;

    void validate() const;  // throws InvalidSchedule
};

// Base schedule: 1000 training steps with variances linear in
// [1e-4, 0.02]; T < 1000 subsamples it at evenly spaced timesteps.
ScheduleCoeffs make_schedule(std::size_t steps, SamplerKind kind);

// Build a schedule directly from coefficient arrays (tests, adapters).
ScheduleCoeffs make_custom_schedule(std::vector<double> nu, std::vector<double> beta, std::vector<double> gamma);

LatentGrid denoise_step(const LatentGrid& x_t, const LatentGrid& eps_pred, const LatentGrid& noise,
                        const ScheduleCoeffs& coeffs, std::size_t t);

LatentGrid invert_step(const LatentGrid& x_prev, const LatentGrid& eps_pred, const LatentGrid& noise,
                       const ScheduleCoeffs& coeffs, std::size_t t);

// One recorded Gaussian draw. The draw itself is regenerable from `key`;
// `noise_digest` is set when the grid was materialized (gamma_t != 0) and
// `eps_digest` fingerprints the noise prediction used in the same step.
struct NoiseEntry {
    NoiseKey key;     // ledger slot
    NoiseKey source;  // key the draw was generated from (differs on replay)
    bool materialized = false;
    std::uint64_t noise_digest = 0;
    std::uint64_t eps_digest = 0;
};

// Append-only record of every draw in a run, keyed by (stage, view, role,
// phase, step). Each slot may be written once. Thread-safe.
class NoiseLedger {
public:
    NoiseLedger() = default;
    NoiseLedger(const NoiseLedger& other);
    NoiseLedger& operator=(const NoiseLedger& other);

    void record(const NoiseEntry& entry);  // throws InvalidInput on a duplicate slot
    std::optional<NoiseEntry> find(const NoiseKey& key) const;
    bool contains(const NoiseKey& key) const { return find(key).has_value(); }
    std::size_t size() const;
    std::vector<NoiseEntry> entries() const;
    void merge(const NoiseLedger& other);

private:
    mutable std::mutex mu_;
    std::map<NoiseKey, NoiseEntry> entries_;
};

// Draws the noise for one step: materialized only when gamma is nonzero
// (otherwise a zero grid, since the draw cannot influence the result), and
// recorded in the ledger either way. `source` equals `slot` for fresh draws
// and names the earlier slot when replaying.
LatentGrid draw_step_noise(const NoiseKey& slot, const NoiseKey& source, const LatentGrid& like, double gamma,
                           const LatentGrid& eps_pred, NoiseLedger& ledger);

}  // namespace c33d
