// Copyright (c) 2026 The AlignHuman-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: a flat `dotted.key = value` text format, one key per
// line, `#` starts a comment. Unknown keys are rejected.

#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "alignhuman/errors.hpp"
#include "alignhuman/evalsuite.hpp"
#include "alignhuman/flowmatch.hpp"
#include "alignhuman/segment.hpp"
#include "alignhuman/synthgen.hpp"
#include "alignhuman/tpo.hpp"
#include "alignhuman/velonet.hpp"

namespace alignhuman {

struct RunConfig {
    std::uint64_t seed = 1;
    std::size_t n_train = 5000;
    std::size_t n_heldout = 500;
    std::size_t n_prefs = 10000;
    SynthParams synth;
    BaseTrainConfig base = [] {
        BaseTrainConfig b;
        b.lr = 1e-2;
        b.cosine_decay = true;
        return b;
    }();
    TpoConfig tpo;
    SamplerConfig sampler;
    double f_switch = 0.2;
    std::size_t n_eval = 200;
    std::size_t eval_seeds = 3;
    std::filesystem::path out_dir = "out";

    void validate() const;

    /// Seeds of the repeated evaluation runs: seed, seed + 1, ...
    std::vector<std::uint64_t> seeds() const {
        std::vector<std::uint64_t> s;
        for (std::size_t i = 0; i < eval_seeds; ++i) s.push_back(seed + i);
        return s;
    }

    ExperimentConfig experiment() const { return {tpo, sampler, f_switch, n_eval}; }
};

namespace detail {

template <class T>
T parse_scalar(std::string_view key, std::string_view text) {
    const std::string s(text);
    if constexpr (std::is_same_v<T, bool>) {
        if (s == "true") return true;
        if (s == "false") return false;
        throw InvalidArgument("config key " + std::string(key) + ": expected true or false, got '" + s + "'");
    } else if constexpr (std::is_same_v<T, std::string>) {
        return s;
    } else {
        T v{};
        const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
            throw InvalidArgument("config key " + std::string(key) + ": cannot parse '" + s + "'");
        if constexpr (std::is_floating_point_v<T>)
            if (!std::isfinite(v)) throw InvalidArgument("config key " + std::string(key) + ": value must be finite");
        return v;
    }
}

struct ConfigKey {
    std::string name;
    std::function<void(RunConfig&, std::string_view)> set;
    std::function<nlohmann::json(const RunConfig&)> get;
};

template <class T, class Ref>
ConfigKey plain_key(std::string name, Ref ref) {
    return {name, [ref, name](RunConfig& c, std::string_view v) { ref(c) = parse_scalar<T>(name, v); },
            [ref](const RunConfig& c) { return nlohmann::json(ref(c)); }};
}

#define ALIGNHUMAN_KEY(type, name, member) \
    plain_key<type>(name, [](auto& c) -> auto& { return c.member; })

inline const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> k{
            ALIGNHUMAN_KEY(std::uint64_t, "seed", seed),
            ALIGNHUMAN_KEY(std::size_t, "data.n_train", n_train),
            ALIGNHUMAN_KEY(std::size_t, "data.n_heldout", n_heldout),
            ALIGNHUMAN_KEY(std::size_t, "data.n_prefs", n_prefs),
            ALIGNHUMAN_KEY(double, "data.lambda", synth.motion_damping),
            ALIGNHUMAN_KEY(double, "data.sigma_n", synth.noise_sigma),
            ALIGNHUMAN_KEY(std::size_t, "base_train.steps", base.steps),
            ALIGNHUMAN_KEY(std::size_t, "base_train.batch", base.batch),
            ALIGNHUMAN_KEY(double, "base_train.lr", base.lr),
            ALIGNHUMAN_KEY(double, "base_train.weight_decay", base.weight_decay),
            ALIGNHUMAN_KEY(double, "base_train.cond_dropout", base.cond_dropout),
            ALIGNHUMAN_KEY(bool, "base_train.cosine_decay", base.cosine_decay),
            ALIGNHUMAN_KEY(double, "tpo.beta", tpo.beta),
            ALIGNHUMAN_KEY(double, "tpo.dim_prob", tpo.dim_prob),
            ALIGNHUMAN_KEY(double, "tpo.lr", tpo.lr),
            ALIGNHUMAN_KEY(double, "tpo.finetune_lr", tpo.finetune_lr),
            ALIGNHUMAN_KEY(double, "tpo.weight_decay", tpo.weight_decay),
            ALIGNHUMAN_KEY(std::size_t, "tpo.epochs", tpo.epochs),
            ALIGNHUMAN_KEY(std::size_t, "tpo.batch", tpo.batch),
            ALIGNHUMAN_KEY(double, "tpo.tau", tpo.tau),
            ALIGNHUMAN_KEY(double, "tpo.gamma", tpo.gamma),
            ALIGNHUMAN_KEY(std::size_t, "sample.n_steps", sampler.n_steps),
            ALIGNHUMAN_KEY(double, "sample.cfg_w", sampler.cfg_w),
            ALIGNHUMAN_KEY(double, "schedule.f_switch", f_switch),
            ALIGNHUMAN_KEY(std::size_t, "lora.rank", tpo.rank),
            ALIGNHUMAN_KEY(double, "lora.alpha", tpo.alpha),
            ALIGNHUMAN_KEY(std::size_t, "eval.n_conds", n_eval),
            ALIGNHUMAN_KEY(std::size_t, "eval.seeds", eval_seeds),
        };
        k.push_back({"tpo.loss_variant",
                     [](RunConfig& c, std::string_view v) {
                         const auto parsed = parse_variant(v);
                         if (!parsed)
                             throw InvalidArgument("config key tpo.loss_variant: unknown variant '" + std::string(v) +
                                                   "'");
                         c.tpo.variant = *parsed;
                     },
                     [](const RunConfig& c) { return nlohmann::json(std::string(to_string(c.tpo.variant))); }});
        k.push_back({"out_dir", [](RunConfig& c, std::string_view v) { c.out_dir = std::string(v); },
                     [](const RunConfig& c) { return nlohmann::json(c.out_dir.generic_string()); }});
        return k;
    }();
    return keys;
}

#undef ALIGNHUMAN_KEY

inline const ConfigKey& find_key(std::string_view name) {
    for (const auto& k : config_keys())
        if (k.name == name) return k;
    throw InvalidArgument("unknown config key '" + std::string(name) + "'");
}

inline std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

} // namespace detail

inline void RunConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw InvalidArgument("config: " + what);
    };
    require(n_train > 0, "data.n_train must be positive");
    require(n_heldout > 0, "data.n_heldout must be positive");
    require(n_prefs > 0, "data.n_prefs must be positive");
    require(synth.motion_damping >= 0.0 && synth.motion_damping < 1.0, "data.lambda must lie in [0, 1)");
    require(synth.noise_sigma > 0.0, "data.sigma_n must be positive");
    require(base.steps > 0, "base_train.steps must be positive");
    require(base.batch > 0, "base_train.batch must be positive");
    require(base.lr >= 0.0, "base_train.lr must be non-negative");
    require(base.cond_dropout >= 0.0 && base.cond_dropout <= 1.0, "base_train.cond_dropout must lie in [0, 1]");
    require(tpo.rank >= 1 && tpo.rank <= max_lora_rank(),
            "lora.rank must lie in [1, " + std::to_string(max_lora_rank()) + "]");
    require(n_eval >= kMinFrechetSamples, "eval.n_conds must be at least " + std::to_string(kMinFrechetSamples));
    require(eval_seeds >= 1, "eval.seeds must be positive");
    tpo.validate();
    sampler.validate();
    SegmentSchedule{f_switch};
}

/// Applies `key = value` lines on top of `cfg`. Errors name the line.
inline void apply_config_text(RunConfig& cfg, std::string_view text, const std::string& origin = "config") {
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto end = std::min(text.find('\n', pos), text.size());
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw InvalidArgument(origin + " line " + std::to_string(line_no) + ": expected 'key = value'");
        const auto key = detail::trim(line.substr(0, eq));
        const auto value = detail::trim(line.substr(eq + 1));
        try {
            detail::find_key(key).set(cfg, value);
        } catch (const InvalidArgument& e) {
            throw InvalidArgument(origin + " line " + std::to_string(line_no) + ": " + e.what());
        }
    }
}

/// Resolved configuration as a flat {dotted key: value} object.
inline nlohmann::json config_json(const RunConfig& cfg) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& k : detail::config_keys()) j[k.name] = k.get(cfg);
    return j;
}

/// Inverse of config_json; every key must be known.
inline void apply_config_json(RunConfig& cfg, const nlohmann::json& j) {
    if (!j.is_object()) throw InvalidArgument("config object expected");
    for (const auto& [name, value] : j.items())
        detail::find_key(name).set(cfg, value.is_string() ? value.get<std::string>() : value.dump());
}

inline std::string config_text(const RunConfig& cfg) {
    std::ostringstream out;
    for (const auto& k : detail::config_keys()) {
        const auto v = k.get(cfg);
        out << k.name << " = " << (v.is_string() ? v.get<std::string>() : v.dump()) << '\n';
    }
    return out.str();
}

/// Reads a dotted-key text file, or the "config" object of a run.json.
inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DependencyError("config file not found: " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    RunConfig cfg;
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception& e) {
            throw InvalidArgument(path.string() + ": " + e.what());
        }
        if (!doc.contains("config")) throw InvalidArgument(path.string() + ": no \"config\" object");
        apply_config_json(cfg, doc["config"]);
    } else {
        apply_config_text(cfg, text, path.string());
    }
    return cfg;
}

} // namespace alignhuman
