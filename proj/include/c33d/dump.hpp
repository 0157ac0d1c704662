#pragma once

#include <cstddef>
#include <functional>
#include <string_view>

#include "c33d/latent.hpp"
#include "c33d/rng.hpp"
#include "c33d/views.hpp"

namespace c33d {

// Intermediate latent emitted by a stage for inspection (--dump-stage).
struct DumpEvent {
    std::string_view stage;  // "tmdiff" | "smdiff"
    ViewId view;
    NoiseRole role;
    std::string_view label;  // "inv", "den", "alpha", "edit", "final"
    std::size_t step;
    const LatentGrid& latent;
};

using DumpSink = std::function<void(const DumpEvent&)>;

}  // namespace c33d
