// Copyright (c) 2026 The AlignHuman-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// The command-line pipeline stages. Every stage reads and writes only under
// cfg.out_dir:
//
//   data/     train.jsonl, heldout.jsonl, prefs.jsonl
//   params/   base.json, tpo_<variant>.json
//   curves/   loss logs, per-step analysis CSV/SVG, skip probe
//   sweeps/   eval and sweep tables, summaries, charts
//   run.json  resolved config plus hashes of each stage's inputs and outputs
//
// Hashing needs OpenSSL's libcrypto.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include <json.hpp>

#include "alignhuman/config.hpp"
#include "alignhuman/errors.hpp"
#include "alignhuman/evalsuite.hpp"
#include "alignhuman/flowmatch.hpp"
#include "alignhuman/rng.hpp"
#include "alignhuman/synthgen.hpp"
#include "alignhuman/tpo.hpp"
#include "alignhuman/velonet.hpp"

namespace alignhuman::pipeline {

namespace fs = std::filesystem;

struct Layout {
    fs::path root;

    fs::path train_data() const { return root / "data" / "train.jsonl"; }
    fs::path heldout_data() const { return root / "data" / "heldout.jsonl"; }
    fs::path prefs() const { return root / "data" / "prefs.jsonl"; }
    fs::path base_params() const { return root / "params" / "base.json"; }
    fs::path tpo_params(TpoVariant v) const { return root / "params" / ("tpo_" + std::string(to_string(v)) + ".json"); }
    fs::path curves(const std::string& name) const { return root / "curves" / name; }
    fs::path sweeps(const std::string& name) const { return root / "sweeps" / name; }
    fs::path manifest() const { return root / "run.json"; }
};

struct StageResult {
    std::string name;  // manifest entry, e.g. "train-tpo:tpo"
    std::vector<fs::path> inputs;
    std::vector<fs::path> outputs;
    nlohmann::json metrics = nlohmann::json::object();
};

/// Git blob id: SHA-1 over "blob <size>\0" followed by the content.
inline std::string git_blob_sha1(const std::string& content) {
    const std::string header = "blob " + std::to_string(content.size()) + '\0';
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx) throw DependencyError("libcrypto: cannot allocate digest context");
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                    EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                    EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                    EVP_DigestFinal_ex(ctx, md, &len) == 1;
    EVP_MD_CTX_free(ctx);
    if (!ok) throw DependencyError("libcrypto: SHA-1 digest failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 0xf];
    }
    return out;
}

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DependencyError("missing file: " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Throws a DependencyError naming the missing artifact and its producer.
inline const fs::path& require(const fs::path& path, const std::string& producer) {
    if (!fs::exists(path))
        throw DependencyError("missing upstream artifact " + path.string() + " (run " + producer + " first)");
    return path;
}

namespace detail {

inline nlohmann::json file_entries(const std::vector<fs::path>& files, const fs::path& root) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& f : files)
        arr.push_back({{"path", f.lexically_relative(root).generic_string()}, {"sha1", git_blob_sha1(read_file(f))}});
    return arr;
}

inline std::string model_name(const std::optional<TpoVariant>& v) {
    return v ? std::string(to_string(*v)) : std::string("base");
}

} // namespace detail

/// Merges this stage into run.json: the top-level "config" is the latest
/// resolved config, "runs" keeps one entry per stage.
inline void write_manifest(const RunConfig& cfg, const StageResult& r) {
    const Layout out{cfg.out_dir};
    nlohmann::json doc = nlohmann::json::object();
    if (fs::exists(out.manifest())) {
        try {
            doc = nlohmann::json::parse(read_file(out.manifest()));
        } catch (const nlohmann::json::exception&) {
            doc = nlohmann::json::object();
        }
    }
    doc["format"] = "alignhuman.run/1";
    doc["config"] = config_json(cfg);
    doc["runs"][r.name] = {{"config", config_json(cfg)},
                           {"inputs", detail::file_entries(r.inputs, out.root)},
                           {"outputs", detail::file_entries(r.outputs, out.root)},
                           {"metrics", r.metrics}};
    fs::create_directories(out.root);
    std::ofstream f(out.manifest(), std::ios::binary);
    if (!f) throw DependencyError("cannot write " + out.manifest().string());
    f << doc.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Stages

inline StageResult gen_data(const RunConfig& cfg) {
    cfg.validate();
    const Layout out{cfg.out_dir};
    const auto train = make_clean_dataset(derive_seed(cfg.seed, SeedPurpose::TrainData), cfg.n_train);
    const auto heldout = make_clean_dataset(derive_seed(cfg.seed, SeedPurpose::HeldOut), cfg.n_heldout);
    write_samples(out.train_data(), train);
    write_samples(out.heldout_data(), heldout);
    StageResult r{"gen-data", {}, {out.train_data(), out.heldout_data()}};
    r.metrics = {{"n_train", train.size()}, {"n_heldout", heldout.size()}};
    return r;
}

inline BaseTrainConfig base_train_config(const RunConfig& cfg) {
    BaseTrainConfig b = cfg.base;
    b.init_seed = derive_seed(cfg.seed, SeedPurpose::BaseInit);
    b.train_seed = derive_seed(cfg.seed, SeedPurpose::BaseTrain);
    return b;
}

inline StageResult train_base(const RunConfig& cfg) {
    cfg.validate();
    const Layout out{cfg.out_dir};
    const auto train = read_samples(require(out.train_data(), "gen-data"));
    const auto heldout = read_samples(require(out.heldout_data(), "gen-data"));
    const BaseTrainConfig bc = base_train_config(cfg);
    const BaseTrainResult res = alignhuman::train_base(bc, train);
    const FlowBatch probe = heldout_batch(heldout, derive_seed(cfg.seed, SeedPurpose::HeldOut));
    const double initial = fm_loss_value(VelocityNet::init(bc.init_seed), nullptr, probe);
    const double final_loss = fm_loss_value(res.net, nullptr, probe);

    serialize_params(out.base_params(), res.net, nullptr);
    {
        auto f = alignhuman::detail::open_output(out.curves("base_loss.csv"));
        f << "step,loss\n";
        for (const auto& p : res.history) f << p.step << ',' << format_number(p.loss) << '\n';
    }
    StageResult r{"train-base", {out.train_data(), out.heldout_data()}, {out.base_params(), out.curves("base_loss.csv")}};
    r.metrics = {{"heldout_loss_initial", initial},
                 {"heldout_loss_final", final_loss},
                 {"heldout_ratio", final_loss / initial}};
    return r;
}

inline StageResult build_prefs(const RunConfig& cfg) {
    cfg.validate();
    const Layout out{cfg.out_dir};
    const auto prefs = make_pref_dataset(derive_seed(cfg.seed, SeedPurpose::Prefs), cfg.n_prefs, cfg.synth);
    write_dataset(out.prefs(), prefs);
    std::size_t motion = 0;
    for (const auto& p : prefs) motion += p.dim == Dimension::Motion;
    StageResult r{"build-prefs", {}, {out.prefs()}};
    r.metrics = {{"n_pairs", prefs.size()}, {"n_motion", motion}, {"n_fidelity", prefs.size() - motion}};
    return r;
}

inline StageResult train_tpo(const RunConfig& cfg) {
    cfg.validate();
    const Layout out{cfg.out_dir};
    const VelocityNet base = load_params(require(out.base_params(), "train-base")).net;
    const auto prefs = read_dataset(require(out.prefs(), "build-prefs"));
    const TpoResult res = alignhuman::train_tpo(base, prefs, SegmentSchedule(cfg.f_switch), cfg.tpo, cfg.seed);
    const std::string name(to_string(cfg.tpo.variant));
    serialize_params(out.tpo_params(cfg.tpo.variant), res.policy, res.loras ? &*res.loras : nullptr);
    write_tpo_log_csv(out.curves("tpo_" + name + "_log.csv"), res.log);
    const auto [first, last] = loss_window_means(res.log);
    StageResult r{"train-tpo:" + name, {out.base_params(), out.prefs()},
                  {out.tpo_params(cfg.tpo.variant), out.curves("tpo_" + name + "_log.csv")}};
    r.metrics = {{"steps", res.log.size()}, {"loss_first_10pct", first}, {"loss_last_10pct", last}};
    return r;
}

/// Loads the base, or the TPO model of `variant` whose policy already holds
/// the fine-tuned weights when there are no adapters.
struct LoadedModel {
    ModelBundle bundle;
    VelocityField field() const { return model_field(bundle.net, bundle.loras ? &*bundle.loras : nullptr); }
};

inline LoadedModel load_model(const Layout& out, const std::optional<TpoVariant>& variant) {
    if (!variant) return {load_params(require(out.base_params(), "train-base"))};
    return {load_params(require(out.tpo_params(*variant), "train-tpo --variant " + std::string(to_string(*variant))))};
}

inline StageResult analyze_timesteps(const RunConfig& cfg, const std::optional<TpoVariant>& variant) {
    cfg.validate();
    const Layout out{cfg.out_dir};
    const std::string name = detail::model_name(variant);
    const LoadedModel model = load_model(out, variant);
    const fs::path model_path = variant ? out.tpo_params(*variant) : out.base_params();

    // The conditions of the root seed's evaluation set, sampled under every
    // evaluation seed's noise.
    const std::vector<Condition> conds = make_eval_set(cfg.n_eval, cfg.seed).conds;
    std::vector<std::uint64_t> noise_seeds;
    for (std::uint64_t s : cfg.seeds()) noise_seeds.push_back(make_eval_set(1, s).noise_seed);
    const auto curve = timestep_analysis(model.field(), conds, cfg.sampler, noise_seeds);
    write_curve_csv(out.curves("timesteps_" + name + ".csv"), curve);
    Series motion{name, {}, {}}, fidelity{name, {}, {}};
    for (const auto& p : curve) {
        motion.x.push_back(static_cast<double>(p.step));
        motion.y.push_back(p.motion_mean);
        fidelity.x.push_back(static_cast<double>(p.step));
        fidelity.y.push_back(p.fidelity_mean);
    }
    write_line_chart(out.curves("timesteps_" + name + "_motion.svg"), "Motion of the clean estimate", "step",
                     "motion_score", {motion});
    write_line_chart(out.curves("timesteps_" + name + "_fidelity.svg"), "Fidelity of the clean estimate", "step",
                     "fidelity_score", {fidelity});

    const SkipReport skip = skip_experiment(model.field(), conds, cfg.sampler, 0.2, noise_seeds);
    {
        auto f = alignhuman::detail::open_output(out.curves("skip_" + name + ".csv"));
        f << "fidelity_full,fidelity_skipped,motion_full,motion_skipped,low_band_divergence,floor_divergence,"
             "resample_divergence\n";
        for (const auto& p : skip.pairs)
            f << format_number(p.fidelity_full) << ',' << format_number(p.fidelity_skipped) << ','
              << format_number(p.motion_full) << ',' << format_number(p.motion_skipped) << ','
              << format_number(p.low_band_divergence) << ',' << format_number(p.floor_divergence) << ','
              << format_number(p.resample_divergence) << '\n';
    }
    std::vector<double> steps, fid;
    for (const auto& p : curve) {
        steps.push_back(static_cast<double>(p.step));
        fid.push_back(p.fidelity_mean);
    }
    StageResult r{"analyze-timesteps:" + name,
                  {model_path},
                  {out.curves("timesteps_" + name + ".csv"), out.curves("timesteps_" + name + "_motion.svg"),
                   out.curves("timesteps_" + name + "_fidelity.svg"), out.curves("skip_" + name + ".csv")}};
    r.metrics = {{"fidelity_spearman", stats::spearman(steps, fid)},
                 {"skip_k", skip.skip_k},
                 {"skip_median_fidelity_full", skip.median_fidelity_full},
                 {"skip_median_fidelity_skipped", skip.median_fidelity_skipped},
                 {"skip_median_divergence", skip.median_divergence},
                 {"skip_median_floor_divergence", skip.median_floor_divergence}};
    return r;
}

inline StageResult evaluate(const RunConfig& cfg, const std::optional<TpoVariant>& variant) {
    cfg.validate();
    const Layout out{cfg.out_dir};
    const std::string name = detail::model_name(variant);
    const LoadedModel model = load_model(out, variant);
    std::vector<MetricRecord> records;
    for (std::uint64_t s : cfg.seeds()) {
        const EvalSet e = make_eval_set(cfg.n_eval, s);
        records.push_back(summarize(generate(model.field(), e, cfg.sampler), e, name,
                                    format_number(cfg.sampler.n_steps), s));
    }
    write_sweep_csv(out.sweeps("eval_" + name + ".csv"), records);
    const auto summary = summarize_sweep(records);
    StageResult r{"eval:" + name, {variant ? out.tpo_params(*variant) : out.base_params()},
                  {out.sweeps("eval_" + name + ".csv")}};
    r.metrics = {{"motion_median", summary.front().motion_median},
                 {"fidelity_median", summary.front().fidelity_median},
                 {"fd_median", summary.front().fd_median}};
    return r;
}

inline StageResult run_sweep(const RunConfig& cfg, SweepKind kind, const std::vector<std::string>& grid) {
    cfg.validate();
    const Layout out{cfg.out_dir};
    const ExperimentConfig ex = cfg.experiment();
    validate_grid(kind, grid, ex);
    const VelocityNet base = load_params(require(out.base_params(), "train-base")).net;
    const auto prefs = read_dataset(require(out.prefs(), "build-prefs"));
    const auto seeds = cfg.seeds();
    const auto records = sweep(kind, grid, base, prefs, ex, seeds);
    const std::string k(to_string(kind));
    write_sweep_csv(out.sweeps(k + ".csv"), records);
    const auto summary = summarize_sweep(records);
    write_summary_csv(out.sweeps(k + "_summary.csv"), summary);
    StageResult r{"sweep:" + k, {out.base_params(), out.prefs()},
                  {out.sweeps(k + ".csv"), out.sweeps(k + "_summary.csv")}};

    if (kind != SweepKind::Ablation) {
        std::vector<Series> motion, fidelity;
        for (const auto& row : summary) {
            const double x = std::stod(row.param);
            auto find = [&](std::vector<Series>& v) -> Series& {
                for (auto& s : v)
                    if (s.name == row.variant) return s;
                v.push_back({row.variant, {}, {}});
                return v.back();
            };
            find(motion).x.push_back(x);
            find(motion).y.push_back(row.motion_mean);
            find(fidelity).x.push_back(x);
            find(fidelity).y.push_back(row.fidelity_mean);
        }
        write_line_chart(out.sweeps(k + "_motion.svg"), k + " sweep: motion", k, "motion_score (mean)", motion);
        write_line_chart(out.sweeps(k + "_fidelity.svg"), k + " sweep: fidelity", k, "fidelity_score (mean)",
                         fidelity);
        r.outputs.push_back(out.sweeps(k + "_motion.svg"));
        r.outputs.push_back(out.sweeps(k + "_fidelity.svg"));
    }
    std::size_t failed = 0;
    for (const auto& rec : records) failed += !rec.ok();
    r.metrics = {{"rows", records.size()}, {"failed", failed}};
    return r;
}

} // namespace alignhuman::pipeline
