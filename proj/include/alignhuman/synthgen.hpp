// Copyright (c) 2026 The AlignHuman-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic conditional data with two separable quality dimensions, and
// single-dimension preference pairs built from it.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "alignhuman/errors.hpp"
#include "alignhuman/rng.hpp"
#include "alignhuman/spectral.hpp"

namespace alignhuman {

inline constexpr std::size_t kCondDim = 4;

/// Collapsed conditioning vector; every component lies in [-1, 1].
class Condition {
public:
    Condition() = default;
    explicit Condition(const std::array<double, kCondDim>& c) : c_(c) {
        for (std::size_t i = 0; i < kCondDim; ++i)
            if (!(c[i] >= -1.0 && c[i] <= 1.0))
                throw InvalidArgument("condition component " + std::to_string(i) + " = " + std::to_string(c[i]) +
                                      " outside [-1, 1]");
    }

    static Condition random(Rng& rng) {
        std::array<double, kCondDim> c{};
        for (auto& v : c) v = uniform(rng, -1.0, 1.0);
        return Condition(c);
    }

    double operator[](std::size_t i) const { return c_[i]; }
    const std::array<double, kCondDim>& values() const { return c_; }
    bool operator==(const Condition&) const = default;

private:
    std::array<double, kCondDim> c_{};
};

enum class Dimension { Motion, Fidelity };

inline std::string_view to_string(Dimension d) { return d == Dimension::Motion ? "Motion" : "Fidelity"; }

inline std::optional<Dimension> parse_dimension(std::string_view s) {
    if (s == "Motion") return Dimension::Motion;
    if (s == "Fidelity") return Dimension::Fidelity;
    return std::nullopt;
}

struct DataSample {
    Sequence x{};
    Condition cond;
};

struct PreferencePair {
    Sequence win{};
    Sequence lose{};
    Condition cond;
    Dimension dim = Dimension::Motion;
    std::uint64_t seed = 0;

    bool operator==(const PreferencePair&) const = default;
};

struct SynthParams {
    double motion_damping = 0.3;  // λ
    double noise_sigma = 0.2;     // σ_n
};

inline constexpr double kTextureAmplitude = 0.15;
inline constexpr double kMinPairSeparation = 0.05;

/// Motion carrier A·sin(2π·f·i/64 + φ), band-limited to bins 0-4.
/// A = 1 + 0.5·c0, f = 3 + c1, φ = π·c2.
inline Sequence motion_carrier(const Condition& c) {
    const double amp = 1.0 + 0.5 * c[0];
    const double freq = 2.0 + (c[1] + 1.0);
    const double phase = std::numbers::pi * c[2];
    Sequence raw{};
    for (std::size_t i = 0; i < kSeqLen; ++i)
        raw[i] = amp * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / kSeqLen + phase);
    return spectral::low_band(raw);
}

/// Fixed bin-16 texture 0.15·sin(2π·16·i/64 + ψ), ψ = π·c3.
inline Sequence texture(const Condition& c) {
    Sequence out{};
    for (std::size_t i = 0; i < kSeqLen; ++i)
        out[i] = kTextureAmplitude *
                 std::sin(2.0 * std::numbers::pi * static_cast<double>(spectral::kTextureBin * i) / kSeqLen +
                          std::numbers::pi * c[3]);
    return out;
}

inline Sequence gen_clean(const Condition& c) {
    Sequence x = motion_carrier(c);
    const Sequence tex = texture(c);
    for (std::size_t i = 0; i < kSeqLen; ++i) x[i] += tex[i];
    return x;
}

/// Rescales the motion carrier of `x` by λ, leaving everything else intact.
inline Sequence degrade_motion(const Sequence& x, const Condition& c, double lambda) {
    if (!(lambda >= 0.0 && lambda < 1.0))
        throw InvalidArgument("degrade_motion: lambda must lie in [0, 1), got " + std::to_string(lambda));
    const Sequence carrier = motion_carrier(c);
    Sequence out = x;
    for (std::size_t i = 0; i < kSeqLen; ++i) out[i] -= (1.0 - lambda) * carrier[i];
    return out;
}

/// Adds noise confined to DFT bins 5-15, per-bin amplitude σ/√11, random phases.
inline Sequence degrade_fidelity(const Sequence& x, std::uint64_t seed, double sigma) {
    if (!(sigma > 0.0)) throw InvalidArgument("degrade_fidelity: sigma must be positive");
    constexpr std::size_t lo = 5, hi = 15;
    const double amp = sigma / std::sqrt(static_cast<double>(hi - lo + 1));
    Rng rng(seed);
    Sequence out = x;
    for (std::size_t k = lo; k <= hi; ++k) {
        const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        for (std::size_t i = 0; i < kSeqLen; ++i)
            out[i] += amp * std::sin(2.0 * std::numbers::pi * static_cast<double>(k * i) / kSeqLen + phase);
    }
    return out;
}

/// Motion pairs are drawn only from conditions whose damped carrier still
/// separates from the clean one by more than kMinPairSeparation.
inline PreferencePair make_pref_pair(std::uint64_t seed, Dimension dim, const SynthParams& params = {}) {
    Rng rng(seed);
    PreferencePair p;
    p.dim = dim;
    p.seed = seed;
    constexpr int kMaxDraws = 1000;
    for (int draw = 0;; ++draw) {
        if (draw == kMaxDraws)
            throw InvalidArgument("make_pref_pair: no condition reaches the required motion separation");
        p.cond = Condition::random(rng);
        p.win = gen_clean(p.cond);
        if (dim == Dimension::Fidelity) break;
        if ((1.0 - params.motion_damping) * motion_score(p.win) > kMinPairSeparation) break;
    }
    if (dim == Dimension::Motion) {
        p.lose = degrade_motion(p.win, p.cond, params.motion_damping);
    } else {
        p.lose = degrade_fidelity(p.win, rng(), params.noise_sigma);
    }
    return p;
}

/// `count` pairs, each dimension drawn with probability ½, pair seeds root+1..root+count.
inline std::vector<PreferencePair> make_pref_dataset(std::uint64_t root, std::size_t count,
                                                     const SynthParams& params = {}) {
    std::vector<PreferencePair> out;
    out.reserve(count);
    Rng dims(root);
    for (std::size_t i = 0; i < count; ++i) {
        const Dimension d = (dims() & 1u) ? Dimension::Fidelity : Dimension::Motion;
        out.push_back(make_pref_pair(root + 1 + i, d, params));
    }
    return out;
}

inline std::vector<DataSample> make_clean_dataset(std::uint64_t seed, std::size_t count) {
    Rng rng(seed);
    std::vector<DataSample> out(count);
    for (auto& s : out) {
        s.cond = Condition::random(rng);
        s.x = gen_clean(s.cond);
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSON-Lines persistence

namespace jsonl {

using nlohmann::json;

template <std::size_t N>
std::array<double, N> to_array(const json& j, std::string_view field, std::size_t line) {
    if (!j.contains(field) || !j.at(std::string(field)).is_array())
        throw ParseError("line " + std::to_string(line) + ": missing array field '" + std::string(field) + "'");
    const auto& arr = j.at(std::string(field));
    if (arr.size() != N)
        throw ParseError("line " + std::to_string(line) + ": field '" + std::string(field) + "' has " +
                         std::to_string(arr.size()) + " elements, expected " + std::to_string(N));
    std::array<double, N> out{};
    for (std::size_t i = 0; i < N; ++i) {
        if (!arr[i].is_number())
            throw ParseError("line " + std::to_string(line) + ": non-numeric entry in '" + std::string(field) + "'");
        out[i] = arr[i].get<double>();
    }
    return out;
}

inline Condition to_condition(const json& j, std::size_t line) {
    try {
        return Condition(to_array<kCondDim>(j, "cond", line));
    } catch (const InvalidArgument& e) {
        throw ParseError("line " + std::to_string(line) + ": " + e.what());
    }
}

inline void write_lines(const std::filesystem::path& path, const std::vector<json>& rows) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidArgument("cannot open " + path.string() + " for writing");
    for (const auto& r : rows) out << r.dump() << '\n';
    if (!out) throw InvalidArgument("write failed for " + path.string());
}

template <typename F>
void for_each_line(const std::filesystem::path& path, F&& on_record) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DependencyError("cannot open " + path.string());
    std::string text;
    std::size_t line_no = 0;
    while (std::getline(in, text)) {
        ++line_no;
        if (text.empty()) continue;
        json j;
        try {
            j = json::parse(text);
        } catch (const json::parse_error& e) {
            throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!j.is_object()) throw ParseError("line " + std::to_string(line_no) + ": record is not an object");
        on_record(j, line_no);
    }
}

} // namespace jsonl

inline std::size_t write_dataset(const std::filesystem::path& path, std::span<const PreferencePair> pairs) {
    std::vector<nlohmann::json> rows;
    rows.reserve(pairs.size());
    for (const auto& p : pairs) {
        rows.push_back({{"win", p.win},
                        {"lose", p.lose},
                        {"cond", p.cond.values()},
                        {"dim", to_string(p.dim)},
                        {"seed", p.seed}});
    }
    jsonl::write_lines(path, rows);
    return rows.size();
}

inline std::vector<PreferencePair> read_dataset(const std::filesystem::path& path) {
    std::vector<PreferencePair> out;
    jsonl::for_each_line(path, [&](const nlohmann::json& j, std::size_t line) {
        PreferencePair p;
        p.win = jsonl::to_array<kSeqLen>(j, "win", line);
        p.lose = jsonl::to_array<kSeqLen>(j, "lose", line);
        p.cond = jsonl::to_condition(j, line);
        if (!j.contains("dim") || !j["dim"].is_string())
            throw ParseError("line " + std::to_string(line) + ": missing string field 'dim'");
        const auto dim = parse_dimension(j["dim"].get<std::string>());
        if (!dim)
            throw ParseError("line " + std::to_string(line) + ": unknown dimension '" + j["dim"].get<std::string>() +
                             "'");
        p.dim = *dim;
        if (!j.contains("seed") || !j["seed"].is_number_unsigned())
            throw ParseError("line " + std::to_string(line) + ": missing unsigned field 'seed'");
        p.seed = j["seed"].get<std::uint64_t>();
        out.push_back(p);
    });
    return out;
}

inline std::size_t write_samples(const std::filesystem::path& path, std::span<const DataSample> samples) {
    std::vector<nlohmann::json> rows;
    rows.reserve(samples.size());
    for (const auto& s : samples) rows.push_back({{"x", s.x}, {"cond", s.cond.values()}});
    jsonl::write_lines(path, rows);
    return rows.size();
}

inline std::vector<DataSample> read_samples(const std::filesystem::path& path) {
    std::vector<DataSample> out;
    jsonl::for_each_line(path, [&](const nlohmann::json& j, std::size_t line) {
        out.push_back({jsonl::to_array<kSeqLen>(j, "x", line), jsonl::to_condition(j, line)});
    });
    return out;
}

} // namespace alignhuman
