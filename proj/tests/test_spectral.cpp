// Copyright (c) 2026 The AlignHuman-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "alignhuman/rng.hpp"
#include "alignhuman/spectral.hpp"

namespace {

using namespace alignhuman;

Sequence sine(double amp, std::size_t bin, double phase = 0.0) {
    Sequence x{};
    for (std::size_t i = 0; i < kSeqLen; ++i)
        x[i] = amp * std::sin(2.0 * std::numbers::pi * static_cast<double>(bin * i) / kSeqLen + phase);
    return x;
}

Sequence random_sequence(std::uint64_t seed) {
    Rng rng(seed);
    Sequence x{};
    for (double& v : x) v = gaussian(rng);
    return x;
}

TEST(Spectral, AmplitudeOfPureSineIsItsAmplitude) {
    for (std::size_t k : {1u, 2u, 7u, 16u, 31u}) {
        const auto a = spectral::amplitudes(sine(0.7, k, 0.4));
        for (std::size_t j = 0; j < kNumBins; ++j) EXPECT_NEAR(a[j], j == k ? 0.7 : 0.0, 1e-12) << k << "," << j;
    }
}

TEST(Spectral, DcAndNyquistUseSingleScaling) {
    Sequence dc{}, alt{};
    for (std::size_t i = 0; i < kSeqLen; ++i) {
        dc[i] = 0.5;
        alt[i] = (i % 2 == 0) ? 0.25 : -0.25;
    }
    EXPECT_NEAR(spectral::amplitudes(dc)[0], 0.5, 1e-12);
    EXPECT_NEAR(spectral::amplitudes(alt)[32], 0.25, 1e-12);
}

TEST(Spectral, MotionOfBinTwoSineMatchesClosedForm) {
    // √2·A·sin(πk/L) for a unit sine on bin k.
    const double expected = std::sqrt(2.0) * std::sin(std::numbers::pi * 2.0 / kSeqLen);
    EXPECT_NEAR(motion_score(sine(1.0, 2)), expected, 1e-12);
    EXPECT_NEAR(motion_score(sine(1.0, 2)), 0.13861, 1e-5);
}

TEST(Spectral, MotionIgnoresConstantsAndHighBins) {
    Sequence c{};
    c.fill(3.0);
    EXPECT_NEAR(motion_score(c), 0.0, 1e-12);
    EXPECT_NEAR(motion_score(sine(1.0, 9)), 0.0, 1e-12);
    EXPECT_NEAR(motion_score(sine(1.0, 16)), 0.0, 1e-12);
}

TEST(Spectral, FidelityOfResidualSineIsNegativeRms) {
    EXPECT_NEAR(fidelity_score(sine(0.2, 7)), -0.2 / std::sqrt(2.0), 1e-12);
    EXPECT_NEAR(fidelity_score(sine(0.2, 20)), -0.2 / std::sqrt(2.0), 1e-12);
}

TEST(Spectral, FidelityIgnoresMotionTextureAndNyquist) {
    Sequence x = sine(1.0, 3);
    const Sequence tex = sine(0.15, 16, 1.0);
    for (std::size_t i = 0; i < kSeqLen; ++i) x[i] += tex[i] + ((i % 2 == 0) ? 0.3 : -0.3);
    EXPECT_NEAR(fidelity_score(x), 0.0, 1e-12);
}

TEST(Spectral, BandsPartitionTheSignal) {
    for (std::uint64_t s = 0; s < 5; ++s) {
        const Sequence x = random_sequence(s);
        BinMask rest{};
        rest[spectral::kTextureBin] = true;
        rest[kNumBins - 1] = true;
        const Sequence a = spectral::band_component(x, spectral::motion_band());
        const Sequence b = spectral::band_component(x, spectral::residual_band());
        const Sequence c = spectral::band_component(x, rest);
        for (std::size_t i = 0; i < kSeqLen; ++i) EXPECT_NEAR(a[i] + b[i] + c[i], x[i], 1e-12);
    }
}

TEST(Spectral, BandComponentIsIdempotent) {
    const Sequence x = random_sequence(9);
    const Sequence once = spectral::low_band(x);
    const Sequence twice = spectral::low_band(once);
    for (std::size_t i = 0; i < kSeqLen; ++i) EXPECT_NEAR(once[i], twice[i], 1e-12);
}

TEST(Spectral, ScoresScaleWithAmplitude) {
    const Sequence x = random_sequence(4);
    Sequence y = x;
    for (double& v : y) v *= 2.5;
    EXPECT_NEAR(motion_score(y), 2.5 * motion_score(x), 1e-12);
    EXPECT_NEAR(fidelity_score(y), 2.5 * fidelity_score(x), 1e-12);
}

} // namespace
