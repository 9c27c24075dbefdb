// Copyright (c) 2026 The AlignHuman-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>

namespace alignhuman {

using Rng = std::mt19937_64;

/// Per-purpose seed streams. Every random draw in a run derives from the
/// root seed plus one of these offsets, so changing how one stage consumes
/// randomness never shifts another stage.
enum class SeedPurpose : std::uint64_t {
    TrainData = 1,
    HeldOut = 2,
    BaseInit = 3,
    BaseTrain = 4,
    Prefs = 5,
    LoraInit = 6,
    TpoTrain = 7,
    EvalConds = 8,
    EvalNoise = 9,
};

inline constexpr std::uint64_t kPurposeStride = 1'000'003;

inline std::uint64_t derive_seed(std::uint64_t root, SeedPurpose purpose) {
    return root + static_cast<std::uint64_t>(purpose) * kPurposeStride;
}

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

inline double gaussian(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

} // namespace alignhuman
