#pragma once

#include <cstddef>
#include <cstdint>

#include "c33d/backends.hpp"
#include "c33d/dump.hpp"
#include "c33d/schedule.hpp"
#include "c33d/views.hpp"

namespace c33d {

inline constexpr std::uint32_t kTmdiffStage = 1;

struct TMDiffConfig {
    std::size_t steps = 4;
    InjectionConfig injection{true, {1, 1}, {3, 4}};
    std::uint64_t seed = 0;
    // Denoising reuses the inversion draws instead of fresh ones.
    bool replay_noise = false;

    void validate(std::size_t site_count, std::size_t schedule_steps) const;  // throws ConfigError
};

struct TexturedBundle {
    PerView<Image> images;  // front slot holds I_nov^f unchanged
    NoiseLedger ledger;

    const Image& operator[](ViewId v) const { return images[index_of(v)]; }
};

// Inverts one non-front view with null conditions, then denoises it with
// eta = x_nov_f feeding keys/values of the injected attention sites.
Image tmdiff_view(ViewId view, const Image& rgb, const LatentGrid& x_nov_f, const LatentCodec& codec,
                  const Denoiser& denoiser, const ScheduleCoeffs& sched, const TMDiffConfig& cfg, NoiseLedger& ledger,
                  const DumpSink& dump = {});

TexturedBundle tmdiff_run(const ViewBundle& bundle, const Image& i_nov_f, const LatentCodec& codec,
                          const Denoiser& denoiser, const ScheduleCoeffs& sched, const TMDiffConfig& cfg,
                          const DumpSink& dump = {});

// Throws IncompleteBundle unless all six views are present with equal sizes.
void require_complete(const ViewBundle& bundle);

}  // namespace c33d
