// Copyright (c) 2026 The AlignHuman-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>
#include <string>

#include <gtest/gtest.h>

#include "alignhuman/config.hpp"

namespace {

using namespace alignhuman;
namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("alignhuman_config_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

TEST(Config, DefaultsAreValid) {
    const RunConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    EXPECT_EQ(cfg.tpo.beta, 50.0);
    EXPECT_EQ(cfg.f_switch, 0.2);
    EXPECT_EQ(cfg.sampler.n_steps, 50u);
    EXPECT_EQ(cfg.sampler.cfg_w, 2.0);
    EXPECT_EQ(cfg.tpo.rank, 8u);
    EXPECT_EQ(cfg.tpo.alpha, 16.0);
    EXPECT_EQ(cfg.seeds(), (std::vector<std::uint64_t>{1, 2, 3}));
}

TEST(Config, TextOverridesWithCommentsAndBlanks) {
    RunConfig cfg;
    apply_config_text(cfg,
                      "# run\n"
                      "seed = 7\n"
                      "\n"
                      "tpo.beta = 25   # sharper\n"
                      "  lora.rank=4\n"
                      "base_train.cosine_decay = false\n"
                      "tpo.loss_variant = ipo\n"
                      "out_dir = runs/a\n");
    EXPECT_EQ(cfg.seed, 7u);
    EXPECT_EQ(cfg.tpo.beta, 25.0);
    EXPECT_EQ(cfg.tpo.rank, 4u);
    EXPECT_FALSE(cfg.base.cosine_decay);
    EXPECT_EQ(cfg.tpo.variant, TpoVariant::IPO);
    EXPECT_EQ(cfg.out_dir, fs::path("runs/a"));
}

TEST(Config, ErrorsNameTheLine) {
    RunConfig cfg;
    auto message = [&](const std::string& text) {
        try {
            apply_config_text(cfg, text);
        } catch (const InvalidArgument& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    EXPECT_NE(message("seed = 1\ntpo.bta = 3\n").find("line 2"), std::string::npos);
    EXPECT_NE(message("seed = 1\ntpo.bta = 3\n").find("tpo.bta"), std::string::npos);
    EXPECT_NE(message("\n\nseed 4\n").find("line 3"), std::string::npos);
    EXPECT_NE(message("tpo.beta = fast\n").find("line 1"), std::string::npos);
    EXPECT_NE(message("seed = -1\n"), "");
    EXPECT_NE(message("tpo.beta = inf\n"), "");
    EXPECT_NE(message("base_train.cosine_decay = yes\n"), "");
    EXPECT_NE(message("tpo.loss_variant = dpo\n"), "");
}

TEST(Config, ValidationRejectsOutOfDomainValues) {
    auto invalid = [](const std::string& text) {
        RunConfig cfg;
        apply_config_text(cfg, text);
        EXPECT_THROW(cfg.validate(), InvalidArgument) << text;
    };
    invalid("schedule.f_switch = 1.0");
    invalid("schedule.f_switch = 0");
    invalid("lora.rank = 0");
    invalid("lora.rank = 65");
    invalid("tpo.beta = 0");
    invalid("data.lambda = 1");
    invalid("data.sigma_n = 0");
    invalid("eval.n_conds = 9");
    invalid("sample.n_steps = 0");
    invalid("tpo.dim_prob = 1.5");
}

TEST(Config, JsonRoundTripIsExact) {
    RunConfig cfg;
    apply_config_text(cfg, "seed = 11\ntpo.lr = 0.000123\nsample.cfg_w = 1.5\ntpo.loss_variant = simpo\n");
    RunConfig back;
    apply_config_json(back, config_json(cfg));
    EXPECT_EQ(config_json(back), config_json(cfg));
    EXPECT_EQ(back.tpo.lr, 0.000123);
    EXPECT_EQ(back.tpo.variant, TpoVariant::SimPO);
}

TEST(Config, TextRoundTripIsExact) {
    RunConfig cfg;
    apply_config_text(cfg, "seed = 3\nbase_train.lr = 0.003\nout_dir = x/y\n");
    RunConfig back;
    apply_config_text(back, config_text(cfg));
    EXPECT_EQ(config_json(back), config_json(cfg));
}

TEST(Config, LoadsTextFileOrRunManifest) {
    const fs::path dir = temp_dir("load");
    std::ofstream(dir / "a.cfg") << "seed = 9\n";
    EXPECT_EQ(load_run_config(dir / "a.cfg").seed, 9u);

    RunConfig cfg;
    cfg.seed = 13;
    cfg.n_prefs = 321;
    nlohmann::json run = {{"format", "alignhuman.run/1"}, {"config", config_json(cfg)}};
    std::ofstream(dir / "run.json") << run.dump(2);
    const RunConfig back = load_run_config(dir / "run.json");
    EXPECT_EQ(back.seed, 13u);
    EXPECT_EQ(back.n_prefs, 321u);

    std::ofstream(dir / "bad.json") << "{\"format\": 1}";
    EXPECT_THROW(load_run_config(dir / "bad.json"), InvalidArgument);
    EXPECT_THROW(load_run_config(dir / "missing.cfg"), DependencyError);
}

TEST(Config, ExperimentCarriesSweepSettings) {
    RunConfig cfg;
    cfg.f_switch = 0.3;
    cfg.n_eval = 50;
    cfg.tpo.rank = 16;
    const auto e = cfg.experiment();
    EXPECT_EQ(e.f_switch, 0.3);
    EXPECT_EQ(e.n_eval, 50u);
    EXPECT_EQ(e.tpo.rank, 16u);
}

} // namespace
