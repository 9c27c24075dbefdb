// Copyright (c) 2026 The AlignHuman-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "alignhuman/autodiff.hpp"
#include "alignhuman/errors.hpp"

namespace alignhuman {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// Decoupled weight decay Adam over a fixed list of parameter tensors.
/// With lr = 0 the parameters are never modified.
class AdamW {
public:
    AdamW(std::vector<ad::Tensor*> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
        if (cfg_.lr < 0.0) throw InvalidArgument("AdamW: negative learning rate");
        for (auto* p : params_) {
            m_.emplace_back(p->shape);
            v_.emplace_back(p->shape);
        }
    }

    void step(const std::vector<const ad::Tensor*>& grads) {
        if (grads.size() != params_.size())
            throw InvalidArgument("AdamW: " + std::to_string(grads.size()) + " gradients for " +
                                  std::to_string(params_.size()) + " parameters");
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i]->data;
            const auto& g = grads[i]->data;
            auto& m = m_[i].data;
            auto& v = v_[i].data;
            for (std::size_t j = 0; j < p.size(); ++j) {
                m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
                v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
                if (cfg_.lr == 0.0) continue;
                const double update = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
                p[j] -= cfg_.lr * (update + cfg_.weight_decay * p[j]);
            }
        }
    }

    std::size_t steps() const { return t_; }
    void set_lr(double lr) { cfg_.lr = lr; }

private:
    std::vector<ad::Tensor*> params_;
    AdamWConfig cfg_;
    std::vector<ad::Tensor> m_;
    std::vector<ad::Tensor> v_;
    std::size_t t_ = 0;
};

} // namespace alignhuman
