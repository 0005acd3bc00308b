#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <string>
#include <vector>

#include "gaussflow/registry.hpp"

using namespace gaussflow;

namespace {

// Forward doubles, but the hand-written backward claims a factor of three.
Tensor buggy_double(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 2.0 * a[i];
    return Tensor::make_result(a.shape(), std::move(out), {a},
                               [a](const std::vector<double>& g) {
                                   if (!a.requires_grad()) return;
                                   auto& ga = a.grad_buffer();
                                   for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 3.0 * g[i];
                               });
}

}  // namespace

TEST(Registry, ListsExpectedOperators) {
    std::vector<GradCheckCase> cases = gradcheck_registry();
    EXPECT_GE(cases.size(), 12u);
    std::vector<std::string> names;
    for (const auto& c : cases) names.push_back(c.name);
    for (const char* want :
         {"matmul", "softmax", "layer_norm", "linear", "unfold", "bilinear_sample", "materialize",
          "deform", "amplitude", "gca", "gcl_block", "ggac", "ggad", "lookup", "sequence_loss"})
        EXPECT_NE(std::find(names.begin(), names.end(), want), names.end()) << want;
}

TEST(Registry, EveryCasePassesUnderTolerance) {
    auto t0 = std::chrono::steady_clock::now();
    for (const GradCheckCase& c : gradcheck_registry()) {
        auto c0 = std::chrono::steady_clock::now();
        GradCheckReport rep = run_gradcheck(c);
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - c0).count();
        EXPECT_TRUE(rep.pass) << rep.name << " max rel err " << rep.max_rel_err;
        std::printf("  %-16s max_rel_err %.3e  (%.2fs, %d seeds)\n", rep.name.c_str(),
                    rep.max_rel_err, secs, c.seeds);
    }
    double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("  registry total %.2fs\n", total);
    EXPECT_LT(total, 120.0);
}

TEST(Registry, ReportsAreDeterministic) {
    std::vector<GradCheckCase> cases = gradcheck_registry();
    auto it = std::find_if(cases.begin(), cases.end(),
                           [](const GradCheckCase& c) { return c.name == "matmul"; });
    ASSERT_NE(it, cases.end());
    GradCheckReport a = run_gradcheck(*it);
    GradCheckReport b = run_gradcheck(*it);
    EXPECT_EQ(a.max_rel_err, b.max_rel_err);
}

TEST(Registry, WrongBackwardIsFlaggedByName) {
    GradCheckCase c;
    c.name = "buggy_double";
    c.seeds = 3;
    c.make_inputs = [](Rng& rng) {
        return std::vector<Tensor>{Tensor::uniform({3, 3}, rng, -1.0, 1.0)};
    };
    c.f = [](const std::vector<Tensor>& in) { return buggy_double(in[0]); };
    GradCheckReport rep = run_gradcheck(c);
    EXPECT_FALSE(rep.pass);
    EXPECT_EQ(rep.name, "buggy_double");
    EXPECT_GT(rep.max_rel_err, 0.1);
}
