// Copyright (c) 2026 The AlignHuman-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>

#include <gtest/gtest.h>

#include "alignhuman/synthgen.hpp"

namespace {

using namespace alignhuman;
namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("alignhuman_synthgen_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

TEST(Synthgen, ConditionRejectsOutOfRangeComponents) {
    EXPECT_THROW(Condition({0.0, 1.5, 0.0, 0.0}), InvalidArgument);
    EXPECT_THROW(Condition({0.0, 0.0, std::nan(""), 0.0}), InvalidArgument);
    EXPECT_NO_THROW(Condition({-1.0, 1.0, 0.0, 0.0}));
}

TEST(Synthgen, CleanSampleAtZeroConditionIsCarrierPlusTexture) {
    // Integer frequency 3 is already band-limited, so the projection is exact.
    const Sequence x = gen_clean(Condition{});
    for (std::size_t i = 0; i < kSeqLen; ++i) {
        const double t = static_cast<double>(i) / kSeqLen;
        const double expected = std::sin(2.0 * std::numbers::pi * 3.0 * t) +
                                0.15 * std::sin(2.0 * std::numbers::pi * 16.0 * t);
        EXPECT_NEAR(x[i], expected, 1e-12);
    }
}

TEST(Synthgen, CleanSamplesHavePerfectFidelity) {
    Rng rng(3);
    for (int n = 0; n < 50; ++n) EXPECT_NEAR(fidelity_score(gen_clean(Condition::random(rng))), 0.0, 1e-12);
}

TEST(Synthgen, MotionDegradationScalesMotionOnly) {
    Rng rng(5);
    for (int n = 0; n < 20; ++n) {
        const Condition c = Condition::random(rng);
        const Sequence x = gen_clean(c);
        const Sequence y = degrade_motion(x, c, 0.3);
        EXPECT_NEAR(motion_score(y), 0.3 * motion_score(x), 1e-9);
        EXPECT_NEAR(fidelity_score(y), fidelity_score(x), 1e-12);
    }
}

TEST(Synthgen, MotionDegradationAtZeroLeavesTexture) {
    const Condition c({0.2, -0.4, 0.5, 0.3});
    const Sequence y = degrade_motion(gen_clean(c), c, 0.0);
    const Sequence tex = texture(c);
    for (std::size_t i = 0; i < kSeqLen; ++i) EXPECT_NEAR(y[i], tex[i], 1e-12);
}

TEST(Synthgen, MotionDegradationRejectsLambdaOutsideUnitInterval) {
    const Condition c;
    EXPECT_THROW(degrade_motion(gen_clean(c), c, 1.0), InvalidArgument);
    EXPECT_THROW(degrade_motion(gen_clean(c), c, -0.1), InvalidArgument);
}

TEST(Synthgen, FidelityDegradationHasClosedFormRms) {
    // 11 orthogonal sines of amplitude σ/√11 have RMS σ/√2.
    const Condition c({0.1, 0.2, -0.3, 0.4});
    for (std::uint64_t s = 0; s < 10; ++s) {
        const Sequence x = gen_clean(c);
        const Sequence y = degrade_fidelity(x, s, 0.2);
        EXPECT_NEAR(fidelity_score(y), -0.2 / std::sqrt(2.0), 1e-12);
        EXPECT_NEAR(motion_score(y), motion_score(x), 1e-12);
    }
}

TEST(Synthgen, FidelityDegradationVanishesAsSigmaShrinks) {
    const Sequence x = gen_clean(Condition{});
    const Sequence y = degrade_fidelity(x, 7, 1e-14);
    for (std::size_t i = 0; i < kSeqLen; ++i) EXPECT_NEAR(y[i], x[i], 1e-12);
    EXPECT_THROW(degrade_fidelity(x, 7, 0.0), InvalidArgument);
}

TEST(Synthgen, PairsDifferOnlyInTheirDimension) {
    const SynthParams params;
    for (const auto& p : make_pref_dataset(11, 2000, params)) {
        if (p.dim == Dimension::Motion) {
            EXPECT_NEAR(fidelity_score(p.win), fidelity_score(p.lose), 1e-9);
            EXPECT_NEAR(motion_score(p.lose), params.motion_damping * motion_score(p.win), 1e-9);
            EXPECT_GT(motion_score(p.win) - motion_score(p.lose), kMinPairSeparation);
        } else {
            EXPECT_NEAR(motion_score(p.win), motion_score(p.lose), 1e-9);
            EXPECT_GT(fidelity_score(p.win) - fidelity_score(p.lose), kMinPairSeparation);
        }
    }
}

TEST(Synthgen, DatasetBalancesDimensions) {
    std::size_t motion = 0;
    const auto pairs = make_pref_dataset(12, 4000);
    for (const auto& p : pairs) motion += p.dim == Dimension::Motion;
    EXPECT_NEAR(static_cast<double>(motion) / pairs.size(), 0.5, 0.03);
}

TEST(Synthgen, GenerationIsDeterministic) {
    EXPECT_EQ(make_pref_dataset(21, 50), make_pref_dataset(21, 50));
    EXPECT_NE(make_pref_dataset(21, 50), make_pref_dataset(22, 50));
    EXPECT_EQ(make_pref_pair(99, Dimension::Fidelity), make_pref_pair(99, Dimension::Fidelity));
}

TEST(Synthgen, DatasetSeedsAreConsecutive) {
    const auto pairs = make_pref_dataset(40, 5);
    for (std::size_t i = 0; i < pairs.size(); ++i) EXPECT_EQ(pairs[i].seed, 41 + i);
}

TEST(Synthgen, PairDatasetRoundTripsExactly) {
    const fs::path dir = temp_dir("roundtrip");
    const auto pairs = make_pref_dataset(31, 100);
    EXPECT_EQ(write_dataset(dir / "prefs.jsonl", pairs), 100u);
    EXPECT_EQ(read_dataset(dir / "prefs.jsonl"), pairs);
}

TEST(Synthgen, SampleDatasetRoundTripsExactly) {
    const fs::path dir = temp_dir("samples");
    const auto samples = make_clean_dataset(8, 30);
    write_samples(dir / "train.jsonl", samples);
    const auto back = read_samples(dir / "train.jsonl");
    ASSERT_EQ(back.size(), samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        EXPECT_EQ(back[i].x, samples[i].x);
        EXPECT_EQ(back[i].cond, samples[i].cond);
    }
}

TEST(Synthgen, MalformedLineIsReportedWithItsNumber) {
    const fs::path dir = temp_dir("malformed");
    const auto pairs = make_pref_dataset(32, 3);
    write_dataset(dir / "prefs.jsonl", pairs);
    {
        std::ofstream out(dir / "prefs.jsonl", std::ios::app);
        out << "{\"win\": [1, 2]}\n";
    }
    try {
        read_dataset(dir / "prefs.jsonl");
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos) << e.what();
    }
}

TEST(Synthgen, UnknownDimensionIsRejected) {
    const fs::path dir = temp_dir("dimension");
    auto pairs = make_pref_dataset(33, 1);
    write_dataset(dir / "prefs.jsonl", pairs);
    std::ifstream in(dir / "prefs.jsonl");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto pos = text.find(std::string(to_string(pairs[0].dim)));
    ASSERT_NE(pos, std::string::npos);
    text.replace(pos, to_string(pairs[0].dim).size(), "Texture");
    std::ofstream(dir / "prefs.jsonl") << text;
    EXPECT_THROW(read_dataset(dir / "prefs.jsonl"), ParseError);
}

TEST(Synthgen, MissingFileIsADependencyError) {
    EXPECT_THROW(read_dataset(temp_dir("missing") / "nope.jsonl"), DependencyError);
}

} // namespace
