// Copyright (c) 2026 The AlignHuman-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// alignhuman: gen-data | train-base | analyze-timesteps | build-prefs |
// train-tpo | eval | sweep. Exit codes: 0 ok, 2 usage, 3 missing or unreadable
// upstream artifact, 4 numerical failure. Failures print one line
//   error kind=<usage|dependency|numerical> message="..."
// on stderr.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "alignhuman/config.hpp"
#include "alignhuman/errors.hpp"
#include "alignhuman/evalsuite.hpp"
#include "alignhuman/pipeline.hpp"

namespace {

namespace ah = alignhuman;

enum Exit { kOk = 0, kUsage = 2, kDependency = 3, kNumerical = 4 };

int fail(Exit code, const char* kind, const std::string& message) {
    std::string escaped;
    for (char c : message) {
        if (c == '"' || c == '\\') escaped += '\\';
        escaped += c == '\n' ? ' ' : c;
    }
    std::cerr << "error kind=" << kind << " message=\"" << escaped << "\"\n";
    return code;
}

std::vector<std::string> split_grid(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != ' ') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::optional<ah::TpoVariant> variant_flag(const std::string& s) {
    if (s.empty()) return std::nullopt;
    const auto v = ah::parse_variant(s);
    if (!v) throw ah::InvalidArgument("unknown variant '" + s + "'");
    return v;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"AlignHuman desk-scale pipeline: flow matching, timestep-segment preference optimization, "
                 "and the evaluation sweeps."};
    app.require_subcommand(1, 1);
    app.fallthrough();

    std::string config_path, out_dir, variant, grid;
    std::optional<std::uint64_t> seed;
    app.add_option("--config", config_path, "dotted-key config file, or a run.json to replay");
    app.add_option("--seed", seed, "root seed");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--variant", variant,
                   "train-tpo: variant to train; eval/analyze-timesteps: evaluate params/tpo_<variant>.json");
    app.add_option("--grid", grid, "sweep grid, comma separated");

    app.add_subcommand("gen-data", "write data/train.jsonl and data/heldout.jsonl");
    app.add_subcommand("train-base", "train the base velocity network -> params/base.json");
    app.add_subcommand("analyze-timesteps", "per-step clean-estimate curves and the step-skip probe");
    app.add_subcommand("build-prefs", "write data/prefs.jsonl");
    app.add_subcommand("train-tpo", "train the expert adapters -> params/tpo_<variant>.json");
    app.add_subcommand("eval", "held-out metrics of the base or a TPO model");
    std::string kind;
    app.add_subcommand("sweep", "switch | rank | nfe | ablation sweep -> sweeps/")
        ->add_option("kind", kind, "switch, rank, nfe or ablation")
        ->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail(kUsage, "usage", e.what());
    }
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        ah::RunConfig cfg = config_path.empty() ? ah::RunConfig{} : ah::load_run_config(config_path);
        if (seed) cfg.seed = *seed;
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        const auto model = variant_flag(variant);
        if (!grid.empty() && command != "sweep") throw ah::InvalidArgument("--grid only applies to sweep");
        if (model && command != "train-tpo" && command != "eval" && command != "analyze-timesteps")
            throw ah::InvalidArgument("--variant does not apply to " + command);
        if (command == "train-tpo" && model) cfg.tpo.variant = *model;
        cfg.validate();

        namespace pl = ah::pipeline;
        pl::StageResult result;
        if (command == "gen-data") result = pl::gen_data(cfg);
        else if (command == "train-base") result = pl::train_base(cfg);
        else if (command == "analyze-timesteps") result = pl::analyze_timesteps(cfg, model);
        else if (command == "build-prefs") result = pl::build_prefs(cfg);
        else if (command == "train-tpo") result = pl::train_tpo(cfg);
        else if (command == "eval") result = pl::evaluate(cfg, model);
        else {
            const auto k = ah::parse_sweep_kind(kind);
            if (!k) throw ah::InvalidArgument("unknown sweep kind '" + kind + "'");
            result = pl::run_sweep(cfg, *k, grid.empty() ? ah::default_grid(*k, cfg.experiment()) : split_grid(grid));
        }
        pl::write_manifest(cfg, result);
        std::cout << "ok stage=" << result.name << " metrics=" << result.metrics.dump() << '\n';
        return kOk;
    } catch (const ah::InvalidArgument& e) {
        return fail(kUsage, "usage", e.what());
    } catch (const ah::DependencyError& e) {
        return fail(kDependency, "dependency", e.what());
    } catch (const ah::ParseError& e) {
        return fail(kDependency, "dependency", e.what());
    } catch (const ah::NumericalError& e) {
        return fail(kNumerical, "numerical", e.what());
    }
}
