#pragma once

// Momentum-free adaptive optimizer (RMSProp-style second-moment scaling with
// bias correction), decoupled weight decay, global gradient-norm clipping,
// and a one-cycle learning-rate schedule (linear warmup, linear decay).

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gaussflow/tensor.hpp"

namespace gaussflow {

struct OptimConfig {
    double peak_lr = 2.5e-4;
    int total_steps = 2000;
    double warmup_frac = 0.05;
    double min_lr_frac = 0.02;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-5;
    double clip_norm = 1.0;

    void validate() const {
        if (total_steps < 1) throw ConfigError("optimizer: total_steps must be >= 1");
        if (peak_lr <= 0.0) throw ConfigError("optimizer: peak_lr must be positive");
        if (warmup_frac <= 0.0 || warmup_frac >= 1.0)
            throw ConfigError("optimizer: warmup_frac must lie in (0, 1)");
    }
};

class Optimizer {
public:
    Optimizer(std::vector<std::pair<std::string, Tensor>> params, const OptimConfig& cfg)
        : params_(std::move(params)), cfg_(cfg) {
        cfg.validate();
        sq_.reserve(params_.size());
        for (auto& [name, t] : params_) sq_.emplace_back(t.numel(), 0.0);
    }

    // Learning rate applied on 1-based step t: linear warmup to the peak,
    // then linear decay toward min_lr_frac * peak.
    double lr_at(int t) const {
        double u = std::min(1.0, double(t) / cfg_.total_steps);
        if (u <= cfg_.warmup_frac) return cfg_.peak_lr * (u / cfg_.warmup_frac);
        double decay = (u - cfg_.warmup_frac) / (1.0 - cfg_.warmup_frac);
        return cfg_.peak_lr * (cfg_.min_lr_frac + (1.0 - cfg_.min_lr_frac) * (1.0 - decay));
    }

    double current_lr() const { return lr_at(step_ + 1); }
    int steps_done() const { return step_; }

    void zero_grad() {
        for (auto& [name, t] : params_) t.zero_grad();
    }

    // Applies one update from the gradients currently stored on the
    // parameters. Returns the pre-clip global gradient norm.
    double step() {
        double norm_sq = 0.0;
        for (auto& [name, t] : params_) {
            const auto& g = t.grad();
            for (double v : g) norm_sq += v * v;
        }
        double norm = std::sqrt(norm_sq);
        double scale = 1.0;
        if (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
        ++step_;
        double lr = lr_at(step_);
        double corr = 1.0 - std::pow(cfg_.beta2, step_);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor& t = params_[i].second;
            const auto& g = t.grad();
            auto& p = t.mutable_data();
            auto& s = sq_[i];
            for (std::size_t j = 0; j < p.size(); ++j) {
                double gj = (j < g.size() ? g[j] : 0.0) * scale;
                s[j] = cfg_.beta2 * s[j] + (1.0 - cfg_.beta2) * gj * gj;
                double vhat = s[j] / corr;
                p[j] -= lr * (gj / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p[j]);
            }
        }
        return norm;
    }

private:
    std::vector<std::pair<std::string, Tensor>> params_;
    std::vector<std::vector<double>> sq_;
    OptimConfig cfg_;
    int step_ = 0;
};

}  // namespace gaussflow
