// Copyright (c) 2026 The AlignHuman-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Timestep-segment preference optimization.
//
// Each preference pair is scored by the flow-matching loss of the policy and
// of the frozen reference at one shared (t, z0). Motion pairs only ever see
// t in the motion interval and update the motion expert; fidelity pairs only
// see the fidelity interval and update the fidelity expert.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "alignhuman/autodiff.hpp"
#include "alignhuman/errors.hpp"
#include "alignhuman/flowmatch.hpp"
#include "alignhuman/optim.hpp"
#include "alignhuman/rng.hpp"
#include "alignhuman/segment.hpp"
#include "alignhuman/synthgen.hpp"
#include "alignhuman/velonet.hpp"

namespace alignhuman {

/// Flow-matching losses of one pair: policy/reference × win/lose.
struct PairLosses {
    double policy_win = 0.0;
    double policy_lose = 0.0;
    double ref_win = 0.0;
    double ref_lose = 0.0;

    /// (Lθ_w − Lθ_l) − (Lref_w − Lref_l)
    double inner() const { return (policy_win - policy_lose) - (ref_win - ref_lose); }
};

/// −log σ(−(β/2)·inner); σ is floored at 1e-300 inside the log.
inline double tpo_loss(const PairLosses& l, double beta) {
    if (!(beta > 0.0)) throw InvalidArgument("tpo_loss: beta must be positive");
    return -std::log(std::max(ad::sigmoid(-0.5 * beta * l.inner()), ad::kLogFloor));
}

inline double tpo_argument(const PairLosses& l, double beta) { return -0.5 * beta * l.inner(); }

enum class LossVariant { TPO, NaiveDPO, IPO, SimPO };

struct VariantParams {
    double beta = 50.0;
    double tau = 0.1;    // IPO target h = 1/(2τ)
    double gamma = 0.5;  // SimPO margin

    void validate() const {
        if (!(beta > 0.0)) throw InvalidArgument("beta must be positive");
        if (!(tau > 0.0)) throw InvalidArgument("IPO tau must be positive");
        if (!(gamma >= 0.0)) throw InvalidArgument("SimPO gamma must be non-negative");
    }
};

/// NaiveDPO shares the TPO formula (it differs in how pairs and t are drawn).
/// IPO: (h − 1/(2τ))² with h = −(β/2)·inner. SimPO: −log σ(−(β/2)(Lθ_w − Lθ_l) − γ).
inline double variant_loss(const PairLosses& l, LossVariant v, const VariantParams& p) {
    p.validate();
    switch (v) {
    case LossVariant::TPO:
    case LossVariant::NaiveDPO: return tpo_loss(l, p.beta);
    case LossVariant::IPO: {
        const double d = tpo_argument(l, p.beta) - 1.0 / (2.0 * p.tau);
        return d * d;
    }
    case LossVariant::SimPO:
        return -std::log(std::max(ad::sigmoid(-0.5 * p.beta * (l.policy_win - l.policy_lose) - p.gamma), ad::kLogFloor));
    }
    return 0.0;
}

// ---------------------------------------------------------------------------
// Pair losses through the network

/// The four flow-matching inputs of a pair batch: wins stacked above loses,
/// both rows of a pair sharing t, z0 and the condition.
struct StackedPairs {
    std::vector<Sequence> z1;
    std::vector<Sequence> z0;
    std::vector<double> t;
    std::vector<Condition> cond;
};

inline StackedPairs stack_pairs(std::span<const PreferencePair* const> pairs, std::span<const double> t,
                                std::span<const Sequence> z0) {
    StackedPairs s;
    for (int side = 0; side < 2; ++side) {
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            s.z1.push_back(side == 0 ? pairs[i]->win : pairs[i]->lose);
            s.z0.push_back(z0[i]);
            s.t.push_back(t[i]);
            s.cond.push_back(pairs[i]->cond);
        }
    }
    return s;
}

/// Per-row flow-matching losses (2n×1) for stacked pairs.
inline Var stacked_row_losses(const BoundNet& net, const BoundLora* lora, const StackedPairs& s) {
    Tape& tape = *net.weight[0].tape;
    auto [zt, target] = interpolate(s.z1, s.z0, s.t);
    Var v = eval_velocity(net, lora, tape.constant(zt), s.t, tape.constant(cond_matrix(s.cond)));
    return row_mse(v, target);
}

inline std::vector<double> stacked_row_losses_value(const VelocityNet& net, const LoraSet* lora, const StackedPairs& s) {
    Tape tape;
    const BoundNet bn = bind(tape, net, false);
    std::optional<BoundLora> bl;
    if (lora) bl = bind(tape, *lora, false);
    return stacked_row_losses(bn, bl ? &*bl : nullptr, s).value().data;
}

/// Losses of one pair at a shared (t, z0): policy = `policy` with `active`
/// adapter, reference = `ref` without adapter.
inline PairLosses pair_losses(const VelocityNet& policy, const LoraSet* active, const VelocityNet& ref,
                              const PreferencePair& pair, double t, const Sequence& z0) {
    const std::array<const PreferencePair*, 1> ps{&pair};
    const std::array<double, 1> ts{t};
    const std::array<Sequence, 1> zs{z0};
    const StackedPairs s = stack_pairs(ps, ts, zs);
    const auto pol = stacked_row_losses_value(policy, active, s);
    const auto rf = stacked_row_losses_value(ref, nullptr, s);
    return {pol[0], pol[1], rf[0], rf[1]};
}

/// Summed preference loss of a pair batch as a scalar on the tape.
/// `ref_rows` are reference losses in stacked order (wins then loses).
inline Var preference_loss(Var policy_rows, std::span<const double> ref_rows, LossVariant variant,
                           const VariantParams& p) {
    Tape& tape = *policy_rows.tape;
    const std::size_t n = ref_rows.size() / 2;
    Tensor pick_win({n, 2 * n}), pick_lose({n, 2 * n}), ref_diff({n, 1});
    for (std::size_t i = 0; i < n; ++i) {
        pick_win.at(i, i) = 1.0;
        pick_lose.at(i, n + i) = 1.0;
        ref_diff.at(i, 0) = ref_rows[i] - ref_rows[n + i];
    }
    Var diff = ad::sub(ad::matmul(tape.constant(pick_win), policy_rows),
                       ad::matmul(tape.constant(pick_lose), policy_rows));
    Var per_pair;
    switch (variant) {
    case LossVariant::TPO:
    case LossVariant::NaiveDPO: {
        Var h = ad::scale(ad::sub(diff, tape.constant(ref_diff)), -0.5 * p.beta);
        per_pair = ad::scale(ad::log(ad::sigmoid(h)), -1.0);
        break;
    }
    case LossVariant::IPO: {
        Var h = ad::scale(ad::sub(diff, tape.constant(ref_diff)), -0.5 * p.beta);
        Tensor target({n, 1}, std::vector<double>(n, 1.0 / (2.0 * p.tau)));
        per_pair = ad::square(ad::sub(h, tape.constant(target)));
        break;
    }
    case LossVariant::SimPO: {
        Tensor margin({n, 1}, std::vector<double>(n, p.gamma));
        Var arg = ad::sub(ad::scale(diff, -0.5 * p.beta), tape.constant(margin));
        per_pair = ad::scale(ad::log(ad::sigmoid(arg)), -1.0);
        break;
    }
    }
    return ad::sum(per_pair);
}

// ---------------------------------------------------------------------------
// Training

/// Rows of the ablation table. Full is the method itself.
enum class TpoVariant {
    Full,
    WithoutFidelityLora,
    WithoutMotionLora,
    WithoutSegment,
    SingleLora,
    ZeroLora,
    NaiveDPO,
    IPO,
    SimPO,
};

inline constexpr std::array<TpoVariant, 9> kAllVariants{
    TpoVariant::Full,     TpoVariant::WithoutFidelityLora, TpoVariant::WithoutMotionLora,
    TpoVariant::WithoutSegment, TpoVariant::SingleLora,    TpoVariant::ZeroLora,
    TpoVariant::NaiveDPO, TpoVariant::IPO,                 TpoVariant::SimPO,
};

inline std::string_view to_string(TpoVariant v) {
    switch (v) {
    case TpoVariant::Full: return "tpo";
    case TpoVariant::WithoutFidelityLora: return "wo_fidelity_lora";
    case TpoVariant::WithoutMotionLora: return "wo_motion_lora";
    case TpoVariant::WithoutSegment: return "wo_timestep_segment";
    case TpoVariant::SingleLora: return "single_lora";
    case TpoVariant::ZeroLora: return "zero_lora";
    case TpoVariant::NaiveDPO: return "naive_dpo";
    case TpoVariant::IPO: return "ipo";
    case TpoVariant::SimPO: return "simpo";
    }
    return "?";
}

inline std::optional<TpoVariant> parse_variant(std::string_view s) {
    for (auto v : kAllVariants)
        if (to_string(v) == s) return v;
    return std::nullopt;
}

inline LossVariant loss_of(TpoVariant v) {
    switch (v) {
    case TpoVariant::NaiveDPO: return LossVariant::NaiveDPO;
    case TpoVariant::IPO: return LossVariant::IPO;
    case TpoVariant::SimPO: return LossVariant::SimPO;
    default: return LossVariant::TPO;
    }
}

/// Variants that fine-tune every base parameter instead of training adapters.
inline bool is_full_finetune(TpoVariant v) {
    return v == TpoVariant::ZeroLora || v == TpoVariant::NaiveDPO || v == TpoVariant::IPO || v == TpoVariant::SimPO;
}

/// Variants that draw pairs of any dimension and t over all of [0, 1).
inline bool is_unsegmented(TpoVariant v) {
    return v == TpoVariant::NaiveDPO || v == TpoVariant::IPO || v == TpoVariant::SimPO;
}

struct TpoConfig {
    double beta = 50.0;
    double dim_prob = 0.5;  // probability of a motion step
    double lr = 1e-3;           // adapters
    double finetune_lr = 1e-4;  // every base parameter (full fine-tuning variants)
    double weight_decay = 0.01;
    std::size_t epochs = 2;
    std::size_t batch = 8;
    std::size_t rank = 8;
    double alpha = 16.0;
    double tau = 0.1;
    double gamma = 0.5;
    TpoVariant variant = TpoVariant::Full;

    VariantParams variant_params() const { return {beta, tau, gamma}; }

    void validate() const {
        variant_params().validate();
        if (!(dim_prob >= 0.0 && dim_prob <= 1.0)) throw InvalidArgument("tpo: dim_prob must lie in [0, 1]");
        if (lr < 0.0 || finetune_lr < 0.0) throw InvalidArgument("tpo: negative learning rate");
        if (batch == 0) throw InvalidArgument("tpo: batch must be positive");
    }
};

struct TpoLogRow {
    std::size_t step;
    Dimension dim;
    double t_mean;
    double loss;
};

struct TpoResult {
    TpoVariant variant = TpoVariant::Full;
    VelocityNet policy;              // equals the base unless fully fine-tuned
    std::optional<LoraPair> loras;   // absent for full fine-tuning variants
    std::vector<TpoLogRow> log;

    VelocityField field() const { return model_field(policy, loras ? &*loras : nullptr); }
};

/// One optimisation step's worth of sampled pairs.
struct TpoStepBatch {
    Dimension dim = Dimension::Motion;
    std::vector<const PreferencePair*> pairs;
    std::vector<double> t;
    std::vector<Sequence> z0;
};

struct TpoStepGrads {
    double loss = 0.0;  // mean over the batch
    std::vector<Tensor> motion;    // A, B per layer; zero when untouched
    std::vector<Tensor> fidelity;
    std::vector<Tensor> net;       // weight, bias per layer; zero unless fine-tuning
};

namespace detail {

inline std::vector<Tensor> zeros_like(std::vector<Tensor*> params) {
    std::vector<Tensor> out;
    for (auto* p : params) out.push_back(Tensor::zeros(p->shape));
    return out;
}

inline void accumulate(std::vector<Tensor>& into, const Tape& tape, std::span<const Var> vars) {
    for (std::size_t i = 0; i < vars.size(); ++i) {
        const Tensor& g = tape.grad(vars[i]);
        for (std::size_t j = 0; j < g.size(); ++j) into[i].data[j] += g.data[j];
    }
}

} // namespace detail

/// Loss and gradients of one step. Which adapter each row uses follows the
/// variant: the step's dimension for segmented variants, active_lora(t) for
/// WithoutSegment, the shared set for SingleLora, none for full fine-tuning.
inline TpoStepGrads tpo_step(const VelocityNet& base, VelocityNet& policy, LoraPair* loras, const TpoStepBatch& b,
                             const TpoConfig& cfg) {
    const std::size_t n = b.pairs.size();
    const bool finetune = is_full_finetune(cfg.variant);
    TpoStepGrads out;
    out.net = detail::zeros_like(policy.parameters());
    if (loras) {
        out.motion = detail::zeros_like(loras->motion.parameters());
        out.fidelity = detail::zeros_like(loras->fidelity.parameters());
    }

    // Group rows by the adapter they route through (-1 = none).
    auto route = [&](std::size_t i) -> int {
        if (!loras || finetune) return -1;
        if (loras->routing == LoraRouting::Single) return 0;
        const Dimension d = cfg.variant == TpoVariant::WithoutSegment ? active_lora(loras->schedule, b.t[i]) : b.dim;
        return d == Dimension::Motion ? 0 : 1;
    };
    std::array<std::vector<std::size_t>, 3> groups;
    for (std::size_t i = 0; i < n; ++i) groups[static_cast<std::size_t>(route(i) + 1)].push_back(i);

    const VariantParams vp = cfg.variant_params();
    for (std::size_t g = 0; g < groups.size(); ++g) {
        if (groups[g].empty()) continue;
        std::vector<const PreferencePair*> ps;
        std::vector<double> ts;
        std::vector<Sequence> zs;
        for (auto i : groups[g]) {
            ps.push_back(b.pairs[i]);
            ts.push_back(b.t[i]);
            zs.push_back(b.z0[i]);
        }
        const StackedPairs s = stack_pairs(ps, ts, zs);
        const std::vector<double> ref_rows = stacked_row_losses_value(base, nullptr, s);

        Tape tape;
        const BoundNet bn = bind(tape, policy, finetune);
        LoraSet* set = g == 0 ? nullptr : (g == 1 ? &loras->motion : &loras->fidelity);
        std::optional<BoundLora> bl;
        if (set) bl = bind(tape, *set, true);
        Var rows = stacked_row_losses(bn, bl ? &*bl : nullptr, s);
        Var total = ad::scale(preference_loss(rows, ref_rows, loss_of(cfg.variant), vp), 1.0 / static_cast<double>(n));
        tape.backward(total);
        out.loss += total.value()[0];
        if (finetune) {
            std::vector<Var> vars;
            for (std::size_t l = 0; l < kNumLayers; ++l) {
                vars.push_back(bn.weight[l]);
                vars.push_back(bn.bias[l]);
            }
            detail::accumulate(out.net, tape, vars);
        }
        if (bl) {
            std::vector<Var> vars;
            for (std::size_t l = 0; l < kNumLayers; ++l) {
                vars.push_back(bl->a[l]);
                vars.push_back(bl->b[l]);
            }
            detail::accumulate(g == 1 ? out.motion : out.fidelity, tape, vars);
        }
    }
    return out;
}

/// Preference fine-tuning of `base` on `prefs`.
///
/// Per step: draw the dimension (motion with probability dim_prob), draw
/// `batch` pairs of that dimension, draw each t uniformly from that
/// dimension's interval and a fresh z0 per pair, then update only the
/// parameters the variant trains. Runs epochs·|prefs|/batch steps.
inline TpoResult train_tpo(const VelocityNet& base, std::span<const PreferencePair> prefs,
                           const SegmentSchedule& schedule, const TpoConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::array<std::vector<const PreferencePair*>, 2> by_dim;
    std::vector<const PreferencePair*> all;
    for (const auto& p : prefs) {
        by_dim[p.dim == Dimension::Motion ? 0 : 1].push_back(&p);
        all.push_back(&p);
    }
    const TpoVariant v = cfg.variant;
    const bool need_motion = v != TpoVariant::WithoutMotionLora && !is_unsegmented(v);
    const bool need_fidelity = v != TpoVariant::WithoutFidelityLora && !is_unsegmented(v);
    if (need_motion && by_dim[0].empty())
        throw InvalidArgument(std::string("train_tpo: variant ") + std::string(to_string(v)) + " needs motion pairs");
    if (need_fidelity && by_dim[1].empty())
        throw InvalidArgument(std::string("train_tpo: variant ") + std::string(to_string(v)) + " needs fidelity pairs");
    if (all.empty()) throw InvalidArgument("train_tpo: empty preference set");

    TpoResult result;
    result.variant = v;
    result.policy = base;
    const bool finetune = is_full_finetune(v);
    if (!finetune) {
        const auto routing = v == TpoVariant::SingleLora ? LoraRouting::Single : LoraRouting::Segmented;
        result.loras = make_lora_pair(cfg.rank, cfg.alpha, derive_seed(seed, SeedPurpose::LoraInit), schedule, routing);
    }

    const AdamWConfig opt_cfg{finetune ? cfg.finetune_lr : cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay};
    std::optional<AdamW> opt_net, opt_motion, opt_fidelity;
    if (finetune) opt_net.emplace(result.policy.parameters(), opt_cfg);
    if (result.loras) {
        opt_motion.emplace(result.loras->motion.parameters(), opt_cfg);
        opt_fidelity.emplace(result.loras->fidelity.parameters(), opt_cfg);
    }
    auto step_with = [](AdamW& opt, const std::vector<Tensor>& grads) {
        std::vector<const Tensor*> ptrs;
        for (const auto& g : grads) ptrs.push_back(&g);
        opt.step(ptrs);
    };

    Rng rng(derive_seed(seed, SeedPurpose::TpoTrain));
    const std::size_t steps = std::max<std::size_t>(1, (cfg.epochs * prefs.size() + cfg.batch - 1) / cfg.batch);
    LoraPair* loras = result.loras ? &*result.loras : nullptr;
    for (std::size_t step = 0; step < steps; ++step) {
        TpoStepBatch b;
        const double u = uniform(rng, 0.0, 1.0);
        if (v == TpoVariant::WithoutFidelityLora)
            b.dim = Dimension::Motion;
        else if (v == TpoVariant::WithoutMotionLora)
            b.dim = Dimension::Fidelity;
        else
            b.dim = u < cfg.dim_prob ? Dimension::Motion : Dimension::Fidelity;
        const auto& pool = is_unsegmented(v) ? all : by_dim[b.dim == Dimension::Motion ? 0 : 1];
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        const bool full_range = is_unsegmented(v) || v == TpoVariant::WithoutSegment;
        const double lo = full_range ? 0.0 : schedule.lower(b.dim);
        const double hi = full_range ? 1.0 : schedule.upper(b.dim);
        double t_sum = 0.0;
        for (std::size_t i = 0; i < cfg.batch; ++i) {
            b.pairs.push_back(pool[pick(rng)]);
            b.t.push_back(uniform(rng, lo, hi));
            t_sum += b.t.back();
            Sequence z0{};
            for (double& x : z0) x = gaussian(rng);
            b.z0.push_back(z0);
        }

        const TpoStepGrads g = tpo_step(base, result.policy, loras, b, cfg);
        if (!std::isfinite(g.loss)) throw NumericalError("train_tpo: non-finite loss at step " + std::to_string(step));
        if (finetune) {
            step_with(*opt_net, g.net);
        } else {
            // Only an adapter that received rows this step is updated; the
            // other keeps its exact state (including zero-initialised B).
            bool touched_motion = false, touched_fidelity = false;
            for (std::size_t i = 0; i < b.pairs.size(); ++i) {
                const Dimension d = loras->routing == LoraRouting::Single ? Dimension::Motion
                                    : v == TpoVariant::WithoutSegment     ? active_lora(schedule, b.t[i])
                                                                          : b.dim;
                (d == Dimension::Motion ? touched_motion : touched_fidelity) = true;
            }
            if (touched_motion) step_with(*opt_motion, g.motion);
            if (touched_fidelity) step_with(*opt_fidelity, g.fidelity);
        }
        result.log.push_back({step, b.dim, t_sum / static_cast<double>(cfg.batch), g.loss});
    }
    return result;
}

} // namespace alignhuman
