#pragma once

// Central finite-difference gradient checking. A case supplies its
// differentiable leaves and a function rebuilding the output from them; the
// harness compares analytic gradients of a randomly weighted scalar output
// sum against central differences, element by element.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gaussflow/ops.hpp"
#include "gaussflow/rng.hpp"
#include "gaussflow/tensor.hpp"

namespace gaussflow {

struct GradCheckCase {
    std::string name;
    double tol = 1e-4;
    int seeds = 20;
    // Builds the leaves to differentiate; called once per seed. Leaves may
    // include module parameters shared with state captured inside f.
    std::function<std::vector<Tensor>(Rng&)> make_inputs;
    // Rebuilds the output tensor from the (possibly perturbed) leaves.
    std::function<Tensor(const std::vector<Tensor>&)> f;
};

struct GradCheckReport {
    std::string name;
    double max_rel_err = 0.0;
    double tol = 1e-4;
    bool pass = false;
    double seconds = 0.0;
};

inline constexpr double kGradCheckEps = 1e-5;

inline double gradcheck_rel_err(double analytic, double numeric) {
    double scale = std::max(1.0, std::max(std::abs(analytic), std::abs(numeric)));
    return std::abs(analytic - numeric) / scale;
}

inline GradCheckReport run_gradcheck(const GradCheckCase& c) {
    GradCheckReport rep;
    rep.name = c.name;
    rep.tol = c.tol;
    for (int seed = 1; seed <= c.seeds; ++seed) {
        Rng rng(fnv1a(c.name) ^ (static_cast<std::uint64_t>(seed) * 0x9e3779b97f4a7c15ULL));
        std::vector<Tensor> inputs = c.make_inputs(rng);
        for (Tensor& t : inputs) t.set_requires_grad(true);
        Tensor y = c.f(inputs);
        Tensor proj = Tensor::uniform(y.shape(), rng, -1.0, 1.0);
        auto weighted = [&]() {
            double acc = 0.0;
            NoGradGuard ng;
            Tensor yy = c.f(inputs);
            for (std::size_t i = 0; i < yy.numel(); ++i) acc += yy[i] * proj[i];
            return acc;
        };
        Tensor loss = sum_all(mul(y, proj));
        loss.backward();
        for (Tensor& t : inputs) {
            const std::vector<double>& grad = t.grad();
            std::vector<double>& data = t.mutable_data();
            for (std::size_t j = 0; j < data.size(); ++j) {
                double orig = data[j];
                data[j] = orig + kGradCheckEps;
                double lp = weighted();
                data[j] = orig - kGradCheckEps;
                double lm = weighted();
                data[j] = orig;
                double numeric = (lp - lm) / (2.0 * kGradCheckEps);
                rep.max_rel_err = std::max(rep.max_rel_err, gradcheck_rel_err(grad[j], numeric));
            }
        }
    }
    rep.pass = rep.max_rel_err < c.tol;
    return rep;
}

}  // namespace gaussflow
