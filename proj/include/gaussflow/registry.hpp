#pragma once

// Named finite-difference cases covering every differentiable operator, from
// single primitives to full composite blocks with their parameters included
// among the checked leaves. Shared by the test suite and the CLI.

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "gaussflow/flow_net.hpp"
#include "gaussflow/gaussian.hpp"
#include "gaussflow/gcl.hpp"
#include "gaussflow/ggam.hpp"
#include "gaussflow/gradcheck.hpp"
#include "gaussflow/ops.hpp"

namespace gaussflow {

namespace registry_detail {

inline void randomize(Tensor& t, Rng& rng, double scale) {
    for (double& v : t.mutable_data()) v = rng.uniform(-scale, scale);
}

inline bool name_has(const std::string& name, std::initializer_list<const char*> keys) {
    for (const char* k : keys)
        if (name.find(k) != std::string::npos) return true;
    return false;
}

}  // namespace registry_detail

inline std::vector<GradCheckCase> gradcheck_registry() {
    using registry_detail::name_has;
    using registry_detail::randomize;
    std::vector<GradCheckCase> cases;

    {
        GradCheckCase c;
        c.name = "matmul";
        c.make_inputs = [](Rng& rng) {
            return std::vector<Tensor>{Tensor::uniform({3, 4}, rng, -1.0, 1.0),
                                       Tensor::uniform({4, 5}, rng, -1.0, 1.0)};
        };
        c.f = [](const std::vector<Tensor>& in) { return matmul(in[0], in[1]); };
        cases.push_back(c);
    }
    {
        GradCheckCase c;
        c.name = "softmax";
        c.make_inputs = [](Rng& rng) {
            return std::vector<Tensor>{Tensor::uniform({5, 7}, rng, -2.0, 2.0)};
        };
        c.f = [](const std::vector<Tensor>& in) { return softmax(in[0], 0); };
        cases.push_back(c);
    }
    {
        GradCheckCase c;
        c.name = "layer_norm";
        c.make_inputs = [](Rng& rng) {
            return std::vector<Tensor>{Tensor::uniform({6, 5}, rng, -1.5, 1.5),
                                       Tensor::uniform({5}, rng, 0.5, 1.5),
                                       Tensor::uniform({5}, rng, -0.5, 0.5)};
        };
        c.f = [](const std::vector<Tensor>& in) { return layer_norm(in[0], in[1], in[2]); };
        cases.push_back(c);
    }
    {
        GradCheckCase c;
        c.name = "linear";
        c.make_inputs = [](Rng& rng) {
            return std::vector<Tensor>{Tensor::uniform({6, 4}, rng, -1.0, 1.0),
                                       Tensor::uniform({4, 3}, rng, -1.0, 1.0),
                                       Tensor::uniform({3}, rng, -0.5, 0.5)};
        };
        c.f = [](const std::vector<Tensor>& in) { return linear(in[0], in[1], in[2]); };
        cases.push_back(c);
    }
    {
        GradCheckCase c;
        c.name = "unfold";
        c.make_inputs = [](Rng& rng) {
            return std::vector<Tensor>{Tensor::uniform({3, 5, 4}, rng, -1.0, 1.0)};
        };
        c.f = [](const std::vector<Tensor>& in) { return unfold(in[0], 3); };
        cases.push_back(c);
    }
    {
        GradCheckCase c;
        c.name = "bilinear_sample";
        c.make_inputs = [](Rng& rng) {
            Tensor x = Tensor::uniform({2, 6, 6}, rng, -1.0, 1.0);
            Tensor coords({2, 8});
            auto& d = coords.mutable_data();
            for (int m = 0; m < 8; ++m) {
                d[m] = rng.uniform_int(0, 4) + rng.uniform(0.25, 0.75);      // y
                d[8 + m] = rng.uniform_int(0, 4) + rng.uniform(0.25, 0.75);  // x
            }
            return std::vector<Tensor>{x, coords};
        };
        c.f = [](const std::vector<Tensor>& in) { return bilinear_sample(in[0], in[1]); };
        cases.push_back(c);
    }
    {
        GradCheckCase c;
        c.name = "materialize";
        c.make_inputs = [](Rng& rng) {
            return std::vector<Tensor>{Tensor::uniform({5, 5}, rng, -0.4, 0.4)};
        };
        c.f = [](const std::vector<Tensor>& in) {
            GaussianKernelSpec spec;
            spec.k = 5;
            spec.sigma = 1.5;
            LearnableGaussianKernel kern(spec);
            kern.delta = in[0];
            return materialize(kern);
        };
        cases.push_back(c);
    }
    {
        GradCheckCase c;
        c.name = "deform";
        c.make_inputs = [](Rng& rng) {
            return std::vector<Tensor>{Tensor::uniform({2, 9, 6}, rng, -0.8, 0.8)};
        };
        c.f = [](const std::vector<Tensor>& in) {
            GaussianKernelSpec spec;
            spec.k = 3;
            spec.sigma = 1.0;
            return deform(spec, in[0]);
        };
        cases.push_back(c);
    }
    {
        GradCheckCase c;
        c.name = "amplitude";
        c.make_inputs = [](Rng& rng) {
            return std::vector<Tensor>{Tensor::uniform({9, 6}, rng, -1.0, 1.0),
                                       Tensor::uniform({1}, rng, -0.6, 0.6)};
        };
        c.f = [](const std::vector<Tensor>& in) { return amplitude(in[0], in[1]); };
        cases.push_back(c);
    }
    {
        GradCheckCase c;
        c.name = "gca";
        auto block = std::make_shared<GclBlock>();
        c.make_inputs = [block](Rng& rng) {
            GclConfig cfg;
            cfg.channels = 4;
            cfg.heads = 2;
            cfg.window = 3;
            cfg.sigma = 1.0;
            *block = GclBlock(cfg, "g", 1);
            std::vector<Tensor> inputs{Tensor::uniform({4, 4, 4}, rng, -0.8, 0.8)};
            std::vector<std::pair<std::string, Tensor>> params;
            block->collect_params(params);
            for (auto& kv : params)
                if (name_has(kv.first, {".wq", ".bq", ".wk", ".bk", ".wv", ".bv", ".wo", ".bo",
                                        ".mask_delta"})) {
                    randomize(kv.second, rng, 0.5);
                    inputs.push_back(kv.second);
                }
            return inputs;
        };
        c.f = [block](const std::vector<Tensor>& in) { return block->gca(in[0]); };
        cases.push_back(c);
    }
    {
        GradCheckCase c;
        c.name = "gcl_block";
        auto block = std::make_shared<GclBlock>();
        c.make_inputs = [block](Rng& rng) {
            GclConfig cfg;
            cfg.channels = 4;
            cfg.heads = 2;
            cfg.window = 3;
            cfg.sigma = 1.0;
            *block = GclBlock(cfg, "g", 1);
            std::vector<Tensor> inputs{Tensor::uniform({4, 4, 3}, rng, -0.8, 0.8)};
            std::vector<std::pair<std::string, Tensor>> params;
            block->collect_params(params);
            for (auto& kv : params) {
                randomize(kv.second, rng, 0.4);
                inputs.push_back(kv.second);
            }
            return inputs;
        };
        c.f = [block](const std::vector<Tensor>& in) { return (*block)(in[0]); };
        cases.push_back(c);
    }
    {
        GradCheckCase c;
        c.name = "ggac";
        auto mod = std::make_shared<GgamModule>();
        c.make_inputs = [mod](Rng& rng) {
            GgamConfig cfg;
            cfg.channels = 4;
            cfg.window = 3;
            cfg.sigma = 1.0;
            cfg.mode = GgamMode::ggac;
            *mod = GgamModule(cfg, "m", 1);
            std::vector<Tensor> inputs{Tensor::uniform({4, 4, 4}, rng, -0.8, 0.8),
                                       Tensor::uniform({4, 4, 4}, rng, -0.8, 0.8)};
            std::vector<std::pair<std::string, Tensor>> params;
            mod->collect_params(params);
            for (auto& kv : params) {
                randomize(kv.second, rng, 0.5);
                inputs.push_back(kv.second);
            }
            return inputs;
        };
        c.f = [mod](const std::vector<Tensor>& in) { return (*mod)(in[0], in[1]); };
        cases.push_back(c);
    }
    {
        GradCheckCase c;
        c.name = "ggad";
        auto mod = std::make_shared<GgamModule>();
        c.make_inputs = [mod](Rng& rng) {
            GgamConfig cfg;
            cfg.channels = 4;
            cfg.window = 3;
            cfg.sigma = 1.0;
            cfg.mode = GgamMode::ggad;
            *mod = GgamModule(cfg, "m", 1);
            std::vector<Tensor> inputs{Tensor::uniform({4, 4, 4}, rng, -0.8, 0.8),
                                       Tensor::uniform({4, 4, 4}, rng, -0.8, 0.8)};
            std::vector<std::pair<std::string, Tensor>> params;
            mod->collect_params(params);
            for (auto& kv : params) {
                double scale = name_has(kv.first, {".woff", ".boff"}) ? 0.3 : 0.5;
                randomize(kv.second, rng, scale);
                inputs.push_back(kv.second);
            }
            return inputs;
        };
        c.f = [mod](const std::vector<Tensor>& in) { return (*mod)(in[0], in[1]); };
        cases.push_back(c);
    }
    {
        GradCheckCase c;
        c.name = "lookup";
        ModelConfig cfg;
        cfg.factor = 2;
        cfg.channels = 8;
        cfg.gcl_heads = 2;
        cfg.iters = 1;
        cfg.radius = 1;
        cfg.window = 3;
        auto net = std::make_shared<FlowNet>(cfg, 3);
        c.make_inputs = [](Rng& rng) {
            int h = 6, w = 6;
            Tensor f1 = Tensor::uniform({4, h, w}, rng, -0.8, 0.8);
            Tensor f2 = Tensor::uniform({4, h, w}, rng, -0.8, 0.8);
            Tensor flow({2, h, w});
            auto& d = flow.mutable_data();
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    std::size_t n = static_cast<std::size_t>(y) * w + x;
                    d[n] = (w / 2 - x) + rng.uniform(0.25, 0.55);                  // u
                    d[static_cast<std::size_t>(h) * w + n] =
                        (h / 2 - y) + rng.uniform(0.25, 0.55);                     // v
                }
            return std::vector<Tensor>{f1, f2, flow};
        };
        c.f = [net](const std::vector<Tensor>& in) {
            CorrVolume corr = net->build_corr(in[0], in[1]);
            return net->lookup(corr, in[2]);
        };
        cases.push_back(c);
    }
    {
        GradCheckCase c;
        c.name = "sequence_loss";
        auto valid = std::make_shared<Tensor>();
        c.make_inputs = [valid](Rng& rng) {
            int h = 5, w = 6;
            Tensor gt = Tensor::uniform({2, h, w}, rng, -2.0, 2.0);
            auto offset_field = [&]() {
                Tensor p({2, h, w});
                auto& d = p.mutable_data();
                for (std::size_t i = 0; i < p.numel(); ++i) {
                    double sign = rng.uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0;
                    d[i] = gt[i] + sign * rng.uniform(0.15, 0.8);
                }
                return p;
            };
            *valid = Tensor({h, w});
            auto& vd = valid->mutable_data();
            for (double& m : vd) m = rng.uniform(0.0, 1.0) < 0.7 ? 1.0 : 0.0;
            vd[0] = 1.0;
            return std::vector<Tensor>{offset_field(), offset_field(), gt};
        };
        c.f = [valid](const std::vector<Tensor>& in) {
            std::vector<FlowField> preds{FlowField::from_packed(in[0]),
                                         FlowField::from_packed(in[1])};
            return sequence_loss(preds, FlowField::from_packed(in[2]), *valid, 0.8);
        };
        cases.push_back(c);
    }
    return cases;
}

}  // namespace gaussflow
