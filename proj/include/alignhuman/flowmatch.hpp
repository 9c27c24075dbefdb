// Copyright (c) 2026 The AlignHuman-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Flow matching on straight noise→data paths.
//
// Time runs from t = 0 (pure noise z0) to t = 1 (data z1):
//   z_t = (1 − t)·z0 + t·z1,   target velocity u = z1 − z0.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "alignhuman/autodiff.hpp"
#include "alignhuman/errors.hpp"
#include "alignhuman/optim.hpp"
#include "alignhuman/rng.hpp"
#include "alignhuman/synthgen.hpp"
#include "alignhuman/velonet.hpp"

namespace alignhuman {

struct FlowBatch {
    std::vector<Sequence> z1;
    std::vector<Sequence> z0;
    std::vector<double> t;
    std::vector<Condition> cond;
    std::vector<bool> cond_mask;  // false = condition dropped

    std::size_t size() const { return z1.size(); }

    void validate() const {
        const std::size_t n = z1.size();
        if (n == 0) throw InvalidArgument("FlowBatch: empty batch");
        if (z0.size() != n || t.size() != n || cond.size() != n || cond_mask.size() != n)
            throw InvalidArgument("FlowBatch: field sizes disagree");
        for (double ti : t)
            if (!(ti >= 0.0 && ti < 1.0)) throw InvalidArgument("FlowBatch: t outside [0, 1)");
    }
};

/// Interpolated states z_t (B×64) and targets z1 − z0 (B×64).
inline std::pair<Tensor, Tensor> interpolate(std::span<const Sequence> z1, std::span<const Sequence> z0,
                                             std::span<const double> t) {
    Tensor zt({z1.size(), kSeqLen});
    Tensor target({z1.size(), kSeqLen});
    for (std::size_t r = 0; r < z1.size(); ++r) {
        for (std::size_t i = 0; i < kSeqLen; ++i) {
            zt.at(r, i) = (1.0 - t[r]) * z0[r][i] + t[r] * z1[r][i];
            target.at(r, i) = z1[r][i] - z0[r][i];
        }
    }
    return {std::move(zt), std::move(target)};
}

/// Per-row mean squared error as a B×1 column.
inline Var row_mse(Var v, const Tensor& target) {
    Tape& tape = *v.tape;
    Var diff = ad::sub(v, tape.constant(target));
    const Tensor avg(ad::Shape{kSeqLen, 1}, std::vector<double>(kSeqLen, 1.0 / kSeqLen));
    return ad::matmul(ad::square(diff), tape.constant(avg));
}

/// Mean over the batch of ‖v − (z1 − z0)‖² / 64, recorded on the tape of `net`.
inline Var fm_loss(const BoundNet& net, const BoundLora* lora, const FlowBatch& batch) {
    batch.validate();
    Tape& tape = *net.weight[0].tape;
    auto [zt, target] = interpolate(batch.z1, batch.z0, batch.t);
    Var cond = tape.constant(cond_matrix(batch.cond, batch.cond_mask));
    try {
        Var v = eval_velocity(net, lora, tape.constant(zt), batch.t, cond);
        return ad::mean(ad::square(ad::sub(v, tape.constant(target))));
    } catch (const NumericalError& e) {
        std::ostringstream os;
        os << "fm_loss: " << e.what() << "; t =";
        for (double ti : batch.t) os << ' ' << ti;
        os << "; |z_t| = " << std::sqrt(std::inner_product(zt.data.begin(), zt.data.end(), zt.data.begin(), 0.0));
        throw NumericalError(os.str());
    }
}

struct FmLossResult {
    double loss = 0.0;
    std::vector<Tensor> net_grads;   // weight, bias per layer
    std::vector<Tensor> lora_grads;  // A, B per layer (empty without adapter)
};

/// Loss and gradients; the base net is differentiated only when `train_net`.
inline FmLossResult fm_loss_and_grads(const VelocityNet& net, const LoraSet* lora, const FlowBatch& batch,
                                      bool train_net = true) {
    Tape tape;
    const BoundNet bn = bind(tape, net, train_net);
    std::optional<BoundLora> bl;
    if (lora) bl = bind(tape, *lora, true);
    Var loss = fm_loss(bn, bl ? &*bl : nullptr, batch);
    tape.backward(loss);
    FmLossResult out;
    out.loss = loss.value()[0];
    for (std::size_t l = 0; l < kNumLayers; ++l) {
        out.net_grads.push_back(tape.grad(bn.weight[l]));
        out.net_grads.push_back(tape.grad(bn.bias[l]));
        if (bl) {
            out.lora_grads.push_back(tape.grad(bl->a[l]));
            out.lora_grads.push_back(tape.grad(bl->b[l]));
        }
    }
    return out;
}

inline double fm_loss_value(const VelocityNet& net, const LoraSet* lora, const FlowBatch& batch) {
    Tape tape;
    const BoundNet bn = bind(tape, net, false);
    std::optional<BoundLora> bl;
    if (lora) bl = bind(tape, *lora, false);
    return fm_loss(bn, bl ? &*bl : nullptr, batch).value()[0];
}

/// Random batch: samples with replacement, t ~ U[0,1), z0 ~ N(0, I), conditions
/// dropped with probability `cond_dropout`.
inline FlowBatch draw_flow_batch(std::span<const DataSample> data, std::size_t batch, double cond_dropout, Rng& rng) {
    FlowBatch b;
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    for (std::size_t r = 0; r < batch; ++r) {
        const DataSample& s = data[pick(rng)];
        b.z1.push_back(s.x);
        Sequence z0{};
        for (double& v : z0) v = gaussian(rng);
        b.z0.push_back(z0);
        b.t.push_back(uniform(rng, 0.0, 1.0));
        b.cond.push_back(s.cond);
        b.cond_mask.push_back(uniform(rng, 0.0, 1.0) >= cond_dropout);
    }
    return b;
}

/// Fixed evaluation batch over every sample with conditions kept.
inline FlowBatch heldout_batch(std::span<const DataSample> data, std::uint64_t seed) {
    Rng rng(seed);
    FlowBatch b;
    for (const auto& s : data) {
        b.z1.push_back(s.x);
        Sequence z0{};
        for (double& v : z0) v = gaussian(rng);
        b.z0.push_back(z0);
        b.t.push_back(uniform(rng, 0.0, 1.0));
        b.cond.push_back(s.cond);
        b.cond_mask.push_back(true);
    }
    return b;
}

struct BaseTrainConfig {
    std::size_t steps = 2000;
    std::size_t batch = 64;
    double lr = 1e-3;
    double weight_decay = 0.01;
    double cond_dropout = 0.1;
    std::uint64_t init_seed = 0;
    std::uint64_t train_seed = 1;
    double divergence_limit = 1e3;
    bool cosine_decay = false;  // lr → 0 over `steps`
};

struct LossPoint {
    std::size_t step;
    double loss;
};

struct BaseTrainResult {
    VelocityNet net;
    std::vector<LossPoint> history;
};

inline BaseTrainResult train_base(const BaseTrainConfig& cfg, std::span<const DataSample> data) {
    if (data.empty()) throw InvalidArgument("train_base: empty dataset");
    if (cfg.batch == 0) throw InvalidArgument("train_base: batch must be positive");
    if (!(cfg.cond_dropout >= 0.0 && cfg.cond_dropout <= 1.0))
        throw InvalidArgument("train_base: cond_dropout must lie in [0, 1]");
    BaseTrainResult out{VelocityNet::init(cfg.init_seed), {}};
    AdamW opt(out.net.parameters(), {cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
    Rng rng(cfg.train_seed);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const FlowBatch batch = draw_flow_batch(data, cfg.batch, cfg.cond_dropout, rng);
        const FmLossResult r = fm_loss_and_grads(out.net, nullptr, batch);
        if (!(r.loss <= cfg.divergence_limit))
            throw NumericalError("train_base: loss " + std::to_string(r.loss) + " at step " + std::to_string(step) +
                                 " exceeds divergence limit");
        std::vector<const Tensor*> grads;
        for (const auto& g : r.net_grads) grads.push_back(&g);
        if (cfg.cosine_decay)
            opt.set_lr(cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) /
                                                      static_cast<double>(cfg.steps))));
        opt.step(grads);
        out.history.push_back({step, r.loss});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sampling

/// One-shot clean estimate ẑ1 = z_t + (1 − t)·v.
inline std::vector<double> predict_clean(std::span<const double> zt, double t, std::span<const double> v) {
    if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("predict_clean: t outside [0, 1]");
    if (zt.size() != v.size()) throw InvalidArgument("predict_clean: length mismatch");
    std::vector<double> out(zt.size());
    for (std::size_t i = 0; i < zt.size(); ++i) out[i] = zt[i] + (1.0 - t) * v[i];
    return out;
}

inline Tensor predict_clean(const Tensor& zt, double t, const Tensor& v) {
    Tensor out(zt.shape);
    out.data = predict_clean(zt.data, t, v.data);
    return out;
}

/// Velocity for a batch of states at a shared time t. cond rows of zeros mean
/// "unconditional".
using VelocityField = std::function<Tensor(const Tensor& z, double t, const Tensor& cond)>;

/// Base network, optionally with timestep-routed LoRA experts.
inline VelocityField model_field(const VelocityNet& net, const LoraPair* loras = nullptr) {
    return [&net, loras](const Tensor& z, double t, const Tensor& cond) {
        const std::vector<double> ts(z.rows(), t);
        return velocity(net, loras ? &loras->active(t) : nullptr, z, ts, cond);
    };
}

struct SamplerConfig {
    std::size_t n_steps = 50;
    double cfg_w = 2.0;
    std::size_t skip_k = 0;

    void validate() const {
        if (n_steps == 0) throw InvalidArgument("sampler: n_steps must be at least 1");
        if (skip_k >= n_steps) throw InvalidArgument("sampler: skip_k must be below n_steps");
        if (!(cfg_w >= 0.0)) throw InvalidArgument("sampler: cfg_w must be non-negative");
    }
    std::size_t nfe_per_step() const { return cfg_w != 1.0 ? 2 : 1; }
    std::size_t nfe() const { return nfe_per_step() * (n_steps - skip_k); }
};

/// states[0] is the noise at t = 0; states[j] (j ≥ 1) is the state after the
/// j-th executed Euler update, at times[j]. The last state is the sample.
/// clean_estimates[j] is ẑ1 at the evaluation time estimate_times[j].
struct SampleTrajectory {
    std::vector<double> times;
    std::vector<Tensor> states;
    std::vector<double> estimate_times;
    std::vector<Tensor> clean_estimates;
    std::size_t n_steps = 0;
    double cfg_weight = 0.0;
    std::size_t skipped_steps = 0;
    std::size_t nfe = 0;  // network evaluations per sample, counted during sampling

    const Tensor& final_state() const { return states.back(); }
};

inline Tensor gaussian_noise(std::size_t rows, std::uint64_t seed) {
    Rng rng(seed);
    Tensor z({rows, kSeqLen});
    for (double& v : z.data) v = gaussian(rng);
    return z;
}

inline SampleTrajectory sample(const VelocityField& field, std::span<const Condition> conds,
                               const SamplerConfig& cfg, const Tensor& noise) {
    cfg.validate();
    if (noise.rank() != 2 || noise.rows() != conds.size() || noise.cols() != kSeqLen)
        throw InvalidArgument("sample: noise must be " + std::to_string(conds.size()) + "x64");
    const Tensor cond = cond_matrix(conds);
    const Tensor uncond({conds.size(), kCondDim});
    const double dt = 1.0 / static_cast<double>(cfg.n_steps);

    SampleTrajectory traj;
    traj.n_steps = cfg.n_steps;
    traj.cfg_weight = cfg.cfg_w;
    traj.skipped_steps = cfg.skip_k;
    traj.times.push_back(0.0);
    traj.states.push_back(noise);

    Tensor z = noise;
    std::size_t calls = 0;
    for (std::size_t k = cfg.skip_k; k < cfg.n_steps; ++k) {
        const double t = static_cast<double>(k) * dt;
        Tensor v = field(z, t, cond);
        ++calls;
        if (cfg.cfg_w != 1.0) {
            const Tensor vu = field(z, t, uncond);
            ++calls;
            for (std::size_t i = 0; i < v.size(); ++i) v.data[i] = vu.data[i] + cfg.cfg_w * (v.data[i] - vu.data[i]);
        }
        traj.estimate_times.push_back(t);
        traj.clean_estimates.push_back(predict_clean(z, t, v));
        for (std::size_t i = 0; i < z.size(); ++i) {
            z.data[i] += dt * v.data[i];
            if (!std::isfinite(z.data[i]))
                throw NumericalError("sample: non-finite state at step " + std::to_string(k));
        }
        traj.times.push_back(static_cast<double>(k + 1) * dt);
        traj.states.push_back(z);
    }
    traj.nfe = calls;
    return traj;
}

inline SampleTrajectory sample(const VelocityField& field, std::span<const Condition> conds,
                               const SamplerConfig& cfg, std::uint64_t seed) {
    return sample(field, conds, cfg, gaussian_noise(conds.size(), seed));
}

/// Row r of a B×64 tensor as a Sequence.
inline Sequence row_sequence(const Tensor& t, std::size_t r) {
    Sequence s{};
    const auto row = t.row(r);
    std::copy(row.begin(), row.end(), s.begin());
    return s;
}

} // namespace alignhuman
