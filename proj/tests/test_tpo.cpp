// Copyright (c) 2026 The AlignHuman-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "alignhuman/tpo.hpp"

namespace {

using namespace alignhuman;

PairLosses with_inner(double inner) { return {inner, 0.0, 0.0, 0.0}; }

double neg_log_sigmoid(double x) { return std::log1p(std::exp(-x)); }

TEST(Tpo, LossExamples) {
    EXPECT_NEAR(tpo_loss(with_inner(-0.2), 50.0), 0.0067153, 1e-7);
    EXPECT_NEAR(tpo_loss(with_inner(0.2), 50.0), 5.0067153, 1e-7);
    EXPECT_NEAR(tpo_loss({0.10, 0.30, 0.20, 0.20}, 50.0), 0.0067153, 1e-6);
    EXPECT_NEAR(tpo_loss({0.3, 0.5, 0.3, 0.5}, 50.0), std::numbers::ln2, 1e-15);
}

TEST(Tpo, BetaScalesTheSigmoidArgument) {
    const PairLosses l{0.10, 0.30, 0.20, 0.25};
    EXPECT_DOUBLE_EQ(tpo_argument(l, 150.0), 3.0 * tpo_argument(l, 50.0));
}

TEST(Tpo, InnerTermCombinesPolicyAndReference) {
    const PairLosses l{1.0, 0.25, 0.5, 0.125};
    EXPECT_DOUBLE_EQ(l.inner(), (1.0 - 0.25) - (0.5 - 0.125));
    EXPECT_NEAR(tpo_loss(l, 4.0), neg_log_sigmoid(-2.0 * l.inner()), 1e-15);
}

TEST(Tpo, LossScalesWithBetaTimesInner) {
    for (double inner : {-0.3, -0.01, 0.02, 0.4})
        EXPECT_NEAR(tpo_loss(with_inner(2.0 * inner), 10.0), tpo_loss(with_inner(inner), 20.0), 1e-12);
}

TEST(Tpo, LossIncreasesWithInnerTerm) {
    double prev = -1.0;
    for (int i = -50; i <= 50; ++i) {
        const double l = tpo_loss(with_inner(0.01 * i), 50.0);
        EXPECT_GT(l, prev);
        prev = l;
    }
}

TEST(Tpo, LossStaysFiniteAtExtremes) {
    EXPECT_TRUE(std::isfinite(tpo_loss(with_inner(1e6), 50.0)));
    EXPECT_NEAR(tpo_loss(with_inner(-1e6), 50.0), 0.0, 1e-300);
    EXPECT_THROW(tpo_loss(with_inner(0.0), 0.0), InvalidArgument);
}

TEST(Tpo, VariantLossExamples) {
    const VariantParams p{50.0, 0.1, 0.5};
    EXPECT_NEAR(variant_loss(with_inner(0.0), LossVariant::IPO, p), 25.0, 1e-12);
    EXPECT_NEAR(variant_loss(with_inner(-0.2), LossVariant::IPO, p), 0.0, 1e-12);
    EXPECT_NEAR(variant_loss({0.4, 0.4, 9.0, 1.0}, LossVariant::SimPO, p), neg_log_sigmoid(-0.5), 1e-12);
    EXPECT_NEAR(variant_loss(with_inner(0.0), LossVariant::IPO, {50.0, 0.5, 0.5}), 1.0, 1e-15);
    EXPECT_NEAR(variant_loss({0.4, 0.4, 9.0, 1.0}, LossVariant::SimPO, {50.0, 0.1, 0.0}), std::numbers::ln2, 1e-15);
    EXPECT_DOUBLE_EQ(variant_loss(with_inner(0.1), LossVariant::NaiveDPO, p), tpo_loss(with_inner(0.1), 50.0));
    EXPECT_THROW(variant_loss(with_inner(0.0), LossVariant::IPO, {50.0, 0.0, 0.5}), InvalidArgument);
}

TEST(Tpo, TapeLossMatchesScalarFormula) {
    const std::vector<double> policy{0.30, 0.10, 0.45, 0.52, 0.20, 0.31};  // wins then loses
    const std::vector<double> ref{0.32, 0.12, 0.40, 0.50, 0.25, 0.30};
    const VariantParams p{50.0, 0.1, 0.5};
    for (auto v : {LossVariant::TPO, LossVariant::NaiveDPO, LossVariant::IPO, LossVariant::SimPO}) {
        Tape tape;
        const double tape_loss =
            preference_loss(tape.leaf(Tensor({6, 1}, policy)), ref, v, p).value()[0];
        double expected = 0.0;
        for (std::size_t i = 0; i < 3; ++i)
            expected += variant_loss({policy[i], policy[3 + i], ref[i], ref[3 + i]}, v, p);
        EXPECT_NEAR(tape_loss, expected, 1e-12) << static_cast<int>(v);
    }
}

TEST(Tpo, TapeLossGradientMatchesCentralDifferences) {
    const std::vector<double> ref{0.32, 0.12, 0.40, 0.50};
    const VariantParams p{50.0, 0.1, 0.5};
    for (auto v : {LossVariant::TPO, LossVariant::IPO, LossVariant::SimPO}) {
        const ad::ScalarFn fn = [&](Tape&, Var rows) { return preference_loss(rows, ref, v, p); };
        EXPECT_LT(ad::grad_check(fn, Tensor({4, 1}, {0.30, 0.10, 0.35, 0.52}), 1e-6), 1e-6);
    }
}

struct Fixture {
    VelocityNet base = VelocityNet::init(1);
    std::vector<PreferencePair> prefs = make_pref_dataset(2, 64);
    SegmentSchedule schedule{0.2};
};

TpoConfig small_config(TpoVariant v) {
    TpoConfig cfg;
    cfg.epochs = 1;
    cfg.batch = 8;
    cfg.rank = 4;
    cfg.variant = v;
    return cfg;
}

TpoStepBatch step_batch(const std::vector<PreferencePair>& prefs, Dimension dim, double t) {
    TpoStepBatch b;
    b.dim = dim;
    Rng rng(5);
    for (const auto& p : prefs) {
        if (p.dim != dim) continue;
        b.pairs.push_back(&p);
        b.t.push_back(t);
        Sequence z0{};
        for (double& x : z0) x = gaussian(rng);
        b.z0.push_back(z0);
        if (b.pairs.size() == 4) break;
    }
    return b;
}

double squared_norm(const std::vector<Tensor>& ts) {
    double s = 0.0;
    for (const auto& t : ts)
        for (double v : t.data) s += v * v;
    return s;
}

TEST(Tpo, StepAtZeroInitIsLnTwoAndTouchesOnlyItsExpert) {
    Fixture f;
    VelocityNet policy = f.base;
    LoraPair loras = make_lora_pair(4, 8.0, 3, f.schedule);
    const TpoConfig cfg = small_config(TpoVariant::Full);

    const auto motion = tpo_step(f.base, policy, &loras, step_batch(f.prefs, Dimension::Motion, 0.1), cfg);
    EXPECT_NEAR(motion.loss, std::numbers::ln2, 1e-12);
    EXPECT_GT(squared_norm(motion.motion), 0.0);
    EXPECT_EQ(squared_norm(motion.fidelity), 0.0);
    EXPECT_EQ(squared_norm(motion.net), 0.0);

    const auto fidelity = tpo_step(f.base, policy, &loras, step_batch(f.prefs, Dimension::Fidelity, 0.6), cfg);
    EXPECT_GT(squared_norm(fidelity.fidelity), 0.0);
    EXPECT_EQ(squared_norm(fidelity.motion), 0.0);
}

TEST(Tpo, PairLossesOfUnchangedPolicyCancel) {
    Fixture f;
    Sequence z0{};
    z0.fill(0.1);
    const auto l = pair_losses(f.base, nullptr, f.base, f.prefs[0], 0.4, z0);
    EXPECT_EQ(l.policy_win, l.ref_win);
    EXPECT_EQ(l.policy_lose, l.ref_lose);
    EXPECT_EQ(l.inner(), 0.0);
}

TEST(Tpo, TrainingRunsCeilEpochsTimesPairsOverBatchSteps) {
    Fixture f;
    TpoConfig cfg = small_config(TpoVariant::Full);
    cfg.batch = 10;
    EXPECT_EQ(train_tpo(f.base, f.prefs, f.schedule, cfg, 1).log.size(), 7u);
    cfg.epochs = 2;
    EXPECT_EQ(train_tpo(f.base, f.prefs, f.schedule, cfg, 1).log.size(), 13u);
}

TEST(Tpo, StepsDrawTimesFromTheirInterval) {
    Fixture f;
    TpoConfig cfg = small_config(TpoVariant::Full);
    cfg.batch = 1;
    std::size_t motion = 0;
    const auto r = train_tpo(f.base, f.prefs, f.schedule, cfg, 2);
    for (const auto& row : r.log) {
        EXPECT_GE(row.t_mean, f.schedule.lower(row.dim));
        EXPECT_LT(row.t_mean, f.schedule.upper(row.dim));
        motion += row.dim == Dimension::Motion;
    }
    EXPECT_GT(motion, 0u);
    EXPECT_LT(motion, r.log.size());
}

TEST(Tpo, DimensionProbabilityControlsSteps) {
    Fixture f;
    TpoConfig cfg = small_config(TpoVariant::Full);
    cfg.batch = 1;
    cfg.dim_prob = 1.0;
    for (const auto& row : train_tpo(f.base, f.prefs, f.schedule, cfg, 2).log) EXPECT_EQ(row.dim, Dimension::Motion);
    cfg.dim_prob = 0.0;
    for (const auto& row : train_tpo(f.base, f.prefs, f.schedule, cfg, 2).log) EXPECT_EQ(row.dim, Dimension::Fidelity);
}

TEST(Tpo, AblatedExpertStaysAtZero) {
    Fixture f;
    const auto wo_fid = train_tpo(f.base, f.prefs, f.schedule, small_config(TpoVariant::WithoutFidelityLora), 3);
    EXPECT_TRUE(wo_fid.loras->fidelity.b_is_zero());
    EXPECT_FALSE(wo_fid.loras->motion.b_is_zero());
    const auto wo_mot = train_tpo(f.base, f.prefs, f.schedule, small_config(TpoVariant::WithoutMotionLora), 3);
    EXPECT_TRUE(wo_mot.loras->motion.b_is_zero());
    EXPECT_FALSE(wo_mot.loras->fidelity.b_is_zero());
}

TEST(Tpo, SingleLoraTrainsOneSharedSet) {
    Fixture f;
    const auto r = train_tpo(f.base, f.prefs, f.schedule, small_config(TpoVariant::SingleLora), 4);
    EXPECT_EQ(r.loras->routing, LoraRouting::Single);
    EXPECT_FALSE(r.loras->motion.b_is_zero());
    EXPECT_TRUE(r.loras->fidelity.b_is_zero());
}

TEST(Tpo, FullFinetuneVariantsMoveTheBase) {
    Fixture f;
    for (auto v : {TpoVariant::ZeroLora, TpoVariant::NaiveDPO, TpoVariant::IPO, TpoVariant::SimPO}) {
        const auto r = train_tpo(f.base, f.prefs, f.schedule, small_config(v), 5);
        EXPECT_FALSE(r.loras.has_value()) << to_string(v);
        EXPECT_FALSE(r.policy == f.base) << to_string(v);
    }
    const auto full = train_tpo(f.base, f.prefs, f.schedule, small_config(TpoVariant::Full), 5);
    EXPECT_TRUE(full.policy == f.base);
}

TEST(Tpo, ZeroLearningRateKeepsThePolicyNeutral) {
    Fixture f;
    TpoConfig cfg = small_config(TpoVariant::Full);
    cfg.lr = 0.0;
    const auto r = train_tpo(f.base, f.prefs, f.schedule, cfg, 6);
    EXPECT_TRUE(r.loras->motion.b_is_zero());
    EXPECT_TRUE(r.loras->fidelity.b_is_zero());
    for (const auto& row : r.log) EXPECT_NEAR(row.loss, std::numbers::ln2, 1e-12);
}

TEST(Tpo, FullFinetuneUsesItsOwnLearningRate) {
    Fixture f;
    TpoConfig cfg = small_config(TpoVariant::NaiveDPO);
    cfg.finetune_lr = 0.0;
    const auto r = train_tpo(f.base, f.prefs, f.schedule, cfg, 6);
    EXPECT_TRUE(r.policy == f.base);
    for (const auto& row : r.log) EXPECT_NEAR(row.loss, std::numbers::ln2, 1e-12);
    cfg.finetune_lr = -1.0;
    EXPECT_THROW(cfg.validate(), InvalidArgument);
}

TEST(Tpo, TrainingIsDeterministic) {
    Fixture f;
    const auto cfg = small_config(TpoVariant::Full);
    const auto a = train_tpo(f.base, f.prefs, f.schedule, cfg, 7);
    const auto b = train_tpo(f.base, f.prefs, f.schedule, cfg, 7);
    EXPECT_EQ(*a.loras, *b.loras);
    EXPECT_FALSE(*a.loras == *train_tpo(f.base, f.prefs, f.schedule, cfg, 8).loras);
}

TEST(Tpo, MissingDimensionIsRejected) {
    Fixture f;
    std::vector<PreferencePair> motion_only;
    for (const auto& p : f.prefs)
        if (p.dim == Dimension::Motion) motion_only.push_back(p);
    EXPECT_THROW(train_tpo(f.base, motion_only, f.schedule, small_config(TpoVariant::Full), 1), InvalidArgument);
    EXPECT_NO_THROW(train_tpo(f.base, motion_only, f.schedule, small_config(TpoVariant::WithoutFidelityLora), 1));
    EXPECT_THROW(train_tpo(f.base, {}, f.schedule, small_config(TpoVariant::NaiveDPO), 1), InvalidArgument);
}

TEST(Tpo, VariantNamesRoundTrip) {
    for (auto v : kAllVariants) EXPECT_EQ(parse_variant(to_string(v)), v);
    EXPECT_FALSE(parse_variant("dpo").has_value());
}

} // namespace
