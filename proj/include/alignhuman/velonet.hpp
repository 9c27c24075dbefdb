// Copyright (c) 2026 The AlignHuman-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Conditional velocity field v(z_t, t, c) and the timestep-gated LoRA experts.
//
//   cond (B×4) ─ cond_embed ─┐
//   t ─ sinusoidal(8) ───────┼─ concat (B×88) ─ fc1 ─ SiLU ─ fc2 ─ SiLU ─ fc3 ─ v (B×64)
//   z_t (B×64) ──────────────┘
//
// Weights are stored out×in. A LoRA adapter replaces W by W + (α/r)·B·A.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "alignhuman/autodiff.hpp"
#include "alignhuman/errors.hpp"
#include "alignhuman/rng.hpp"
#include "alignhuman/segment.hpp"
#include "alignhuman/spectral.hpp"
#include "alignhuman/synthgen.hpp"

namespace alignhuman {

using ad::Tape;
using ad::Tensor;
using ad::Var;

inline constexpr std::size_t kTimeFreqs = 4;
inline constexpr std::size_t kTimeEmbedDim = 2 * kTimeFreqs;
inline constexpr std::size_t kCondEmbedDim = 16;
inline constexpr std::size_t kHiddenDim = 128;
inline constexpr std::size_t kInputDim = kSeqLen + kTimeEmbedDim + kCondEmbedDim;
inline constexpr std::size_t kNumLayers = 4;

struct LayerSpec {
    const char* name;
    std::size_t in;
    std::size_t out;
};

inline constexpr std::array<LayerSpec, kNumLayers> kLayers{{
    {"cond_embed", kCondDim, kCondEmbedDim},
    {"fc1", kInputDim, kHiddenDim},
    {"fc2", kHiddenDim, kHiddenDim},
    {"fc3", kHiddenDim, kSeqLen},
}};

struct Linear {
    Tensor weight;  // out×in
    Tensor bias;    // out
};

struct VelocityNet {
    std::array<Linear, kNumLayers> layers;

    /// PyTorch-style U(−1/√in, 1/√in) for weights and biases.
    static VelocityNet init(std::uint64_t seed) {
        Rng rng(seed);
        VelocityNet net;
        for (std::size_t l = 0; l < kNumLayers; ++l) {
            const auto& spec = kLayers[l];
            const double bound = 1.0 / std::sqrt(static_cast<double>(spec.in));
            Tensor w({spec.out, spec.in});
            for (double& v : w.data) v = uniform(rng, -bound, bound);
            Tensor b({spec.out});
            for (double& v : b.data) v = uniform(rng, -bound, bound);
            net.layers[l] = {std::move(w), std::move(b)};
        }
        return net;
    }

    static constexpr std::size_t parameter_count() {
        std::size_t n = 0;
        for (const auto& s : kLayers) n += s.in * s.out + s.out;
        return n;
    }

    std::vector<Tensor*> parameters() {
        std::vector<Tensor*> out;
        for (auto& l : layers) {
            out.push_back(&l.weight);
            out.push_back(&l.bias);
        }
        return out;
    }

    bool operator==(const VelocityNet& o) const {
        for (std::size_t l = 0; l < kNumLayers; ++l)
            if (!(layers[l].weight == o.layers[l].weight && layers[l].bias == o.layers[l].bias)) return false;
        return true;
    }
};

struct LoraLayer {
    Tensor a;  // rank×in
    Tensor b;  // out×rank

    bool operator==(const LoraLayer&) const = default;
};

/// One adapter per linear layer (cond_embed included).
struct LoraSet {
    std::array<LoraLayer, kNumLayers> layers;
    std::size_t rank = 0;
    double alpha = 0.0;

    double scaling() const { return alpha / static_cast<double>(rank); }

    std::vector<Tensor*> parameters() {
        std::vector<Tensor*> out;
        for (auto& l : layers) {
            out.push_back(&l.a);
            out.push_back(&l.b);
        }
        return out;
    }

    bool b_is_zero() const {
        for (const auto& l : layers)
            for (double v : l.b.data)
                if (v != 0.0) return false;
        return true;
    }

    bool operator==(const LoraSet&) const = default;
};

/// Adapter rank on layer `l`. The condition embedding (4 inputs) is capped at
/// its full rank; every other layer takes the nominal rank unchanged.
inline std::size_t layer_rank(std::size_t nominal, std::size_t l) {
    return l == 0 ? std::min({nominal, kLayers[0].in, kLayers[0].out}) : nominal;
}

/// Largest nominal rank attach_lora accepts.
inline constexpr std::size_t max_lora_rank() {
    std::size_t r = kHiddenDim;
    for (std::size_t l = 1; l < kNumLayers; ++l) r = std::min({r, kLayers[l].in, kLayers[l].out});
    return r;
}

/// B = 0, A ~ N(0, 0.02²) from `seed`; the effective delta starts at exactly zero.
inline LoraSet attach_lora(std::size_t rank, double alpha, std::uint64_t seed) {
    if (rank == 0) throw InvalidArgument("attach_lora: rank must be at least 1");
    for (std::size_t l = 1; l < kNumLayers; ++l) {
        const auto& s = kLayers[l];
        if (rank > std::min(s.in, s.out))
            throw InvalidArgument("attach_lora: rank " + std::to_string(rank) + " exceeds min dimension of layer " +
                                  s.name + " (" + std::to_string(s.out) + "x" + std::to_string(s.in) + ")");
    }
    Rng rng(seed);
    LoraSet set;
    set.rank = rank;
    set.alpha = alpha;
    for (std::size_t l = 0; l < kNumLayers; ++l) {
        const std::size_t r = layer_rank(rank, l);
        Tensor a({r, kLayers[l].in});
        for (double& v : a.data) v = 0.02 * gaussian(rng);
        set.layers[l] = {std::move(a), Tensor({kLayers[l].out, r})};
    }
    return set;
}

enum class LoraRouting { Segmented, Single };

/// Motion and fidelity expert sets. Under Segmented routing exactly one set
/// is active at any t; Single routes every t to the motion set.
struct LoraPair {
    LoraSet motion;
    LoraSet fidelity;
    SegmentSchedule schedule;
    LoraRouting routing = LoraRouting::Segmented;

    const LoraSet& active(double t) const {
        if (routing == LoraRouting::Single) return motion;
        return active_lora(schedule, t) == Dimension::Motion ? motion : fidelity;
    }
    LoraSet& set_for(Dimension d) { return d == Dimension::Motion ? motion : fidelity; }
    const LoraSet& set_for(Dimension d) const { return d == Dimension::Motion ? motion : fidelity; }

    bool operator==(const LoraPair&) const = default;
};

inline LoraPair make_lora_pair(std::size_t rank, double alpha, std::uint64_t seed, SegmentSchedule schedule,
                               LoraRouting routing = LoraRouting::Segmented) {
    return {attach_lora(rank, alpha, seed), attach_lora(rank, alpha, seed + 1), schedule, routing};
}

// ---------------------------------------------------------------------------
// Forward pass on a tape

/// Parameters placed on a tape, either as trainable leaves or constants.
struct BoundNet {
    std::array<Var, kNumLayers> weight;
    std::array<Var, kNumLayers> bias;
};

struct BoundLora {
    std::array<Var, kNumLayers> a;
    std::array<Var, kNumLayers> b;
    double scaling = 0.0;
};

inline BoundNet bind(Tape& tape, const VelocityNet& net, bool trainable) {
    BoundNet out;
    for (std::size_t l = 0; l < kNumLayers; ++l) {
        out.weight[l] = tape.leaf(net.layers[l].weight, trainable);
        out.bias[l] = tape.leaf(net.layers[l].bias, trainable);
    }
    return out;
}

inline BoundLora bind(Tape& tape, const LoraSet& set, bool trainable) {
    BoundLora out;
    out.scaling = set.scaling();
    for (std::size_t l = 0; l < kNumLayers; ++l) {
        const auto& spec = kLayers[l];
        const auto& a = set.layers[l].a;
        const auto& b = set.layers[l].b;
        const std::size_t r = layer_rank(set.rank, l);
        if (a.rank() != 2 || b.rank() != 2 || a.shape[0] != r || a.shape[1] != spec.in || b.shape[0] != spec.out ||
            b.shape[1] != r)
            throw InvalidArgument(std::string("LoRA shape mismatch on layer ") + spec.name + ": A " +
                                  ad::shape_str(a.shape) + ", B " + ad::shape_str(b.shape) + ", rank " +
                                  std::to_string(r) + ", layer " + std::to_string(spec.out) + "x" +
                                  std::to_string(spec.in));
        out.a[l] = tape.leaf(a, trainable);
        out.b[l] = tape.leaf(b, trainable);
    }
    return out;
}

/// sin/cos(t·2^k·π), k = 0..3, one row per t.
inline Tensor time_embedding(std::span<const double> ts) {
    Tensor out({ts.size(), kTimeEmbedDim});
    for (std::size_t r = 0; r < ts.size(); ++r) {
        for (std::size_t k = 0; k < kTimeFreqs; ++k) {
            const double w = ts[r] * std::ldexp(1.0, static_cast<int>(k)) * std::numbers::pi;
            out.at(r, 2 * k) = std::sin(w);
            out.at(r, 2 * k + 1) = std::cos(w);
        }
    }
    return out;
}

namespace detail {

inline Var linear(const BoundNet& net, const BoundLora* lora, std::size_t layer, Var x) {
    Var w = net.weight[layer];
    if (lora) w = ad::add(w, ad::scale(ad::matmul(lora->b[layer], lora->a[layer]), lora->scaling));
    return ad::add(ad::matmul_nt(x, w), net.bias[layer]);
}

} // namespace detail

/// v for a batch: z is B×64, ts has B entries in [0, 1), cond is B×4.
inline Var eval_velocity(const BoundNet& net, const BoundLora* lora, Var z, std::span<const double> ts, Var cond) {
    Tape& tape = *z.tape;
    if (z.shape().size() != 2 || z.shape()[1] != kSeqLen)
        throw InvalidArgument("eval_velocity: z must be Bx64, got " + ad::shape_str(z.shape()));
    if (ts.size() != z.shape()[0])
        throw InvalidArgument("eval_velocity: " + std::to_string(ts.size()) + " timesteps for batch of " +
                              std::to_string(z.shape()[0]));
    for (double t : ts)
        if (!(t >= 0.0 && t < 1.0)) throw InvalidArgument("eval_velocity: t must lie in [0, 1), got " + std::to_string(t));
    Var ce = detail::linear(net, lora, 0, cond);
    Var h = ad::concat(ad::concat(z, tape.constant(time_embedding(ts))), ce);
    h = ad::silu(detail::linear(net, lora, 1, h));
    h = ad::silu(detail::linear(net, lora, 2, h));
    return detail::linear(net, lora, 3, h);
}

/// Rows of conditions as a B×4 tensor; masked rows are zero (unconditional).
inline Tensor cond_matrix(std::span<const Condition> conds, const std::vector<bool>& keep = {}) {
    Tensor out({conds.size(), kCondDim});
    for (std::size_t r = 0; r < conds.size(); ++r) {
        if (!keep.empty() && !keep[r]) continue;
        for (std::size_t c = 0; c < kCondDim; ++c) out.at(r, c) = conds[r][c];
    }
    return out;
}

/// Tape-free convenience: velocity for a batch with optional active adapter.
inline Tensor velocity(const VelocityNet& net, const LoraSet* lora, const Tensor& z, std::span<const double> ts,
                       const Tensor& cond) {
    Tape tape;
    const BoundNet bn = bind(tape, net, false);
    std::optional<BoundLora> bl;
    if (lora) bl = bind(tape, *lora, false);
    return eval_velocity(bn, bl ? &*bl : nullptr, tape.constant(z), ts, tape.constant(cond)).value();
}

// ---------------------------------------------------------------------------
// Parameter files

struct ModelBundle {
    VelocityNet net;
    std::optional<LoraPair> loras;
};

namespace detail {

using nlohmann::json;

inline json tensor_json(const Tensor& t) { return {{"shape", t.shape}, {"data", t.data}}; }

inline Tensor tensor_from(const json& doc, const std::string& field, const ad::Shape& expected,
                          const std::string& label) {
    try {
        const auto& j = doc.at(field);
        auto shape = j.at("shape").get<ad::Shape>();
        auto data = j.at("data").get<std::vector<double>>();
        if (shape != expected)
            throw ParseError("parameter '" + label + "' has shape " + ad::shape_str(shape) + ", expected " +
                             ad::shape_str(expected));
        return Tensor(std::move(shape), std::move(data));
    } catch (const json::exception& e) {
        throw ParseError("parameter '" + label + "': " + e.what());
    } catch (const InvalidArgument& e) {
        throw ParseError("parameter '" + label + "': " + e.what());
    }
}

inline json lora_json(const LoraSet& s) {
    json layers = json::object();
    for (std::size_t l = 0; l < kNumLayers; ++l)
        layers[kLayers[l].name] = {{"A", tensor_json(s.layers[l].a)}, {"B", tensor_json(s.layers[l].b)}};
    return {{"rank", s.rank}, {"alpha", s.alpha}, {"layers", layers}};
}

inline LoraSet lora_from(const json& j, const std::string& prefix) {
    LoraSet s;
    try {
        s.rank = j.at("rank").get<std::size_t>();
        s.alpha = j.at("alpha").get<double>();
    } catch (const json::exception& e) {
        throw ParseError(prefix + ": " + e.what());
    }
    if (s.rank == 0) throw ParseError(prefix + ".rank must be positive");
    for (std::size_t l = 0; l < kNumLayers; ++l) {
        const auto& spec = kLayers[l];
        const std::string name = prefix + ".layers." + spec.name;
        const json* layer = nullptr;
        try {
            layer = &j.at("layers").at(spec.name);
        } catch (const json::exception&) {
            throw ParseError("missing parameter group '" + name + "'");
        }
        const std::size_t r = layer_rank(s.rank, l);
        s.layers[l].a = tensor_from(*layer, "A", {r, spec.in}, name + ".A");
        s.layers[l].b = tensor_from(*layer, "B", {spec.out, r}, name + ".B");
    }
    return s;
}

} // namespace detail

inline constexpr const char* kParamsFormat = "alignhuman.params/1";

inline nlohmann::json params_json(const VelocityNet& net, const LoraPair* loras) {
    nlohmann::json layers = nlohmann::json::object();
    for (std::size_t l = 0; l < kNumLayers; ++l)
        layers[kLayers[l].name] = {{"weight", detail::tensor_json(net.layers[l].weight)},
                                   {"bias", detail::tensor_json(net.layers[l].bias)}};
    nlohmann::json doc = {{"format", kParamsFormat}, {"net", layers}};
    if (loras) {
        doc["loras"] = {{"motion", detail::lora_json(loras->motion)},
                        {"fidelity", detail::lora_json(loras->fidelity)},
                        {"f_switch", loras->schedule.f_switch()},
                        {"routing", loras->routing == LoraRouting::Single ? "single" : "segmented"}};
    }
    return doc;
}

inline void serialize_params(const std::filesystem::path& path, const VelocityNet& net, const LoraPair* loras) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidArgument("cannot open " + path.string() + " for writing");
    out << params_json(net, loras).dump() << '\n';
}

inline ModelBundle load_params(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DependencyError("missing parameter file " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    if (!doc.is_object() || doc.value("format", "") != kParamsFormat)
        throw ParseError(path.string() + ": not an " + std::string(kParamsFormat) + " document");
    ModelBundle bundle;
    for (std::size_t l = 0; l < kNumLayers; ++l) {
        const auto& spec = kLayers[l];
        const std::string prefix = std::string("net.") + spec.name;
        if (!doc["net"].contains(spec.name)) throw ParseError("missing parameter group '" + prefix + "'");
        const auto& layer = doc["net"][spec.name];
        bundle.net.layers[l].weight = detail::tensor_from(layer, "weight", {spec.out, spec.in}, prefix + ".weight");
        bundle.net.layers[l].bias = detail::tensor_from(layer, "bias", {spec.out}, prefix + ".bias");
    }
    if (doc.contains("loras")) {
        const auto& lj = doc["loras"];
        LoraPair pair;
        pair.motion = detail::lora_from(lj.at("motion"), "loras.motion");
        pair.fidelity = detail::lora_from(lj.at("fidelity"), "loras.fidelity");
        try {
            pair.schedule = SegmentSchedule(lj.at("f_switch").get<double>());
            pair.routing = lj.at("routing").get<std::string>() == "single" ? LoraRouting::Single : LoraRouting::Segmented;
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("loras: ") + e.what());
        } catch (const InvalidArgument& e) {
            throw ParseError(std::string("loras.f_switch: ") + e.what());
        }
        bundle.loras = std::move(pair);
    }
    return bundle;
}

} // namespace alignhuman
