#pragma once

// Gaussian-constrained attention: a pre-norm Transformer block whose
// neighborhood attention logits are multiplied by a learnable Gaussian
// window before the softmax, so attention mass is biased toward spatially
// near neighbors while staying content-adaptive.

#include <cmath>
#include <string>
#include <vector>

#include "gaussflow/gaussian.hpp"
#include "gaussflow/ops.hpp"
#include "gaussflow/tensor.hpp"

namespace gaussflow {

struct GclConfig {
    int channels = 64;
    int heads = 4;
    int window = 9;
    double sigma = 3.0;
    int ffn_ratio = 4;
    bool per_head_masks = false;

    void validate() const {
        if (channels % heads != 0)
            throw ConfigError("gcl: channels " + std::to_string(channels) +
                              " not divisible by heads " + std::to_string(heads));
        if (window < 1 || window % 2 == 0)
            throw ConfigError("gcl: window size must be odd and positive");
    }
    int head_dim() const { return channels / heads; }
};

// Attention for one pixel: keys/values hold the K neighborhood slots
// (zero rows where the window leaves the image), mask is the flattened
// Gaussian window. The mask multiplies the scaled logits before softmax.
inline Tensor gca_pixel(const Tensor& q, const Tensor& keys, const Tensor& values,
                        const Tensor& mask) {
    int K = keys.dim(0), d = keys.dim(1);
    if (q.numel() != static_cast<std::size_t>(d) || mask.numel() != static_cast<std::size_t>(K))
        throw ShapeError("gca_pixel: q " + shape_str(q.shape()) + " / mask " +
                         shape_str(mask.shape()) + " do not match keys " +
                         shape_str(keys.shape()));
    Tensor logits = mul_scalar(matmul(keys, reshape(q, {d, 1})), 1.0 / std::sqrt(double(d)));
    Tensor masked = mul(logits, reshape(mask, {K, 1}));
    Tensor w = softmax(masked, 0);
    return reshape(matmul(transpose2d(w), values), {d});
}

// Optional capture of post-softmax attention weights, one [K x N] map per
// head, for normalization checks and inspection.
struct GcaTrace {
    std::vector<Tensor> head_weights;
};

// [c x h x w] -> [N x c] pixel-major view and back.
inline Tensor to_pixel_major(const Tensor& x) {
    return transpose2d(reshape(x, {x.dim(0), x.dim(1) * x.dim(2)}));
}
inline Tensor from_pixel_major(const Tensor& x, int h, int w) {
    return reshape(transpose2d(x), {x.dim(1), h, w});
}

class GclBlock {
public:
    GclBlock() = default;

    GclBlock(const GclConfig& cfg, const std::string& prefix, std::uint64_t seed)
        : cfg_(cfg), prefix_(prefix) {
        cfg.validate();
        int c = cfg.channels;
        double ps = 1.0 / std::sqrt(double(c));
        wq_ = Tensor::param({c, c}, prefix + ".wq", seed, ps);
        bq_ = Tensor::param({c}, prefix + ".bq", seed, 0.0);
        wk_ = Tensor::param({c, c}, prefix + ".wk", seed, ps);
        bk_ = Tensor::param({c}, prefix + ".bk", seed, 0.0);
        wv_ = Tensor::param({c, c}, prefix + ".wv", seed, ps);
        bv_ = Tensor::param({c}, prefix + ".bv", seed, 0.0);
        wo_ = Tensor::param({c, c}, prefix + ".wo", seed, ps);
        bo_ = Tensor::param({c}, prefix + ".bo", seed, 0.0);
        int hidden = cfg.ffn_ratio * c;
        ffn_w1_ = Tensor::param({c, hidden}, prefix + ".ffn_w1", seed, ps);
        ffn_b1_ = Tensor::param({hidden}, prefix + ".ffn_b1", seed, 0.0);
        ffn_w2_ = Tensor::param({hidden, c}, prefix + ".ffn_w2", seed,
                                1.0 / std::sqrt(double(hidden)));
        ffn_b2_ = Tensor::param({c}, prefix + ".ffn_b2", seed, 0.0);
        ln1_g_ = Tensor::ones({c});
        ln1_g_.set_requires_grad(true);
        ln1_b_ = Tensor::param({c}, prefix + ".ln1_b", seed, 0.0);
        ln2_g_ = Tensor::ones({c});
        ln2_g_.set_requires_grad(true);
        ln2_b_ = Tensor::param({c}, prefix + ".ln2_b", seed, 0.0);
        GaussianKernelSpec spec;
        spec.k = cfg.window;
        spec.sigma = cfg.sigma;
        int n_kernels = cfg.per_head_masks ? cfg.heads : 1;
        for (int i = 0; i < n_kernels; ++i) kernels_.emplace_back(spec);
    }

    const GclConfig& config() const { return cfg_; }
    std::vector<LearnableGaussianKernel>& kernels() { return kernels_; }

    // Gaussian-constrained neighborhood attention on an already-normalized
    // feature map. Multi-head with a shared (or per-head) Gaussian mask.
    Tensor gca(const Tensor& x, GcaTrace* trace = nullptr) const {
        int c = cfg_.channels, h = x.dim(1), w = x.dim(2);
        if (x.dim(0) != c)
            throw ShapeError("gca: input " + shape_str(x.shape()) + " does not carry " +
                             std::to_string(c) + " channels");
        int d = cfg_.head_dim(), K = cfg_.window * cfg_.window, N = h * w;
        Tensor q = conv1x1(x, wq_, bq_);
        Tensor ku = unfold(conv1x1(x, wk_, bk_), cfg_.window);
        Tensor vu = unfold(conv1x1(x, wv_, bv_), cfg_.window);
        Tensor qf = reshape(q, {c, N});
        std::vector<Tensor> heads;
        heads.reserve(static_cast<std::size_t>(cfg_.heads));
        for (int i = 0; i < cfg_.heads; ++i) {
            const LearnableGaussianKernel& kern =
                kernels_[cfg_.per_head_masks ? static_cast<std::size_t>(i) : 0];
            Tensor mask = reshape(materialize(kern), {K});
            Tensor qh = narrow(qf, 0, i * d, d);
            Tensor kuh = narrow(ku, 0, i * d, d);
            Tensor vuh = narrow(vu, 0, i * d, d);
            Tensor logits = mul_scalar(dot_over_channels(kuh, qh), 1.0 / std::sqrt(double(d)));
            Tensor weights = softmax(row_scale(logits, mask), 0);
            if (trace) trace->head_weights.push_back(weights);
            heads.push_back(weighted_gather(vuh, weights));
        }
        Tensor merged = reshape(concat(heads, 0), {c, h, w});
        return conv1x1(merged, wo_, bo_);
    }

    // Pre-norm residual block: attention sublayer then feed-forward sublayer.
    Tensor operator()(const Tensor& x, GcaTrace* trace = nullptr) const {
        int h = x.dim(1), w = x.dim(2);
        Tensor n1 = layer_norm(to_pixel_major(x), ln1_g_, ln1_b_);
        Tensor xhat = add(gca(from_pixel_major(n1, h, w), trace), x);
        Tensor n2 = layer_norm(to_pixel_major(xhat), ln2_g_, ln2_b_);
        Tensor f = linear(gelu(linear(n2, ffn_w1_, ffn_b1_)), ffn_w2_, ffn_b2_);
        return add(from_pixel_major(f, h, w), xhat);
    }

    void collect_params(std::vector<std::pair<std::string, Tensor>>& out) const {
        out.emplace_back(prefix_ + ".wq", wq_);
        out.emplace_back(prefix_ + ".bq", bq_);
        out.emplace_back(prefix_ + ".wk", wk_);
        out.emplace_back(prefix_ + ".bk", bk_);
        out.emplace_back(prefix_ + ".wv", wv_);
        out.emplace_back(prefix_ + ".bv", bv_);
        out.emplace_back(prefix_ + ".wo", wo_);
        out.emplace_back(prefix_ + ".bo", bo_);
        out.emplace_back(prefix_ + ".ffn_w1", ffn_w1_);
        out.emplace_back(prefix_ + ".ffn_b1", ffn_b1_);
        out.emplace_back(prefix_ + ".ffn_w2", ffn_w2_);
        out.emplace_back(prefix_ + ".ffn_b2", ffn_b2_);
        out.emplace_back(prefix_ + ".ln1_g", ln1_g_);
        out.emplace_back(prefix_ + ".ln1_b", ln1_b_);
        out.emplace_back(prefix_ + ".ln2_g", ln2_g_);
        out.emplace_back(prefix_ + ".ln2_b", ln2_b_);
        for (std::size_t i = 0; i < kernels_.size(); ++i)
            out.emplace_back(prefix_ + ".mask_delta" + std::to_string(i), kernels_[i].delta);
    }

    // Test access to individual projections.
    Tensor& wq() { return wq_; }
    Tensor& wk() { return wk_; }
    Tensor& wv() { return wv_; }
    Tensor& wo() { return wo_; }
    Tensor& bo() { return bo_; }
    Tensor& ffn_w2() { return ffn_w2_; }
    Tensor& ffn_b2() { return ffn_b2_; }

private:
    GclConfig cfg_;
    std::string prefix_;
    Tensor wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_;
    Tensor ffn_w1_, ffn_b1_, ffn_w2_, ffn_b2_;
    Tensor ln1_g_, ln1_b_, ln2_g_, ln2_b_;
    std::vector<LearnableGaussianKernel> kernels_;
};

}  // namespace gaussflow
