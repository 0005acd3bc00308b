#pragma once

// Miniature recurrent optical-flow estimator: shared convolutional feature
// encoder, context encoder, two-level all-pairs correlation volume with
// windowed bilinear lookup, and a gated recurrent update that accumulates
// residual flow. Gaussian-constrained attention refines the motion features
// and Gaussian-guided aggregation feeds the recurrent input.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gaussflow/gcl.hpp"
#include "gaussflow/ggam.hpp"
#include "gaussflow/ops.hpp"
#include "gaussflow/tensor.hpp"

namespace gaussflow {

// Dense displacement field; u is the horizontal (x) component and v the
// vertical (y) component, in pixels at the field's own resolution.
struct FlowField {
    Tensor u, v;  // [h x w] each

    FlowField() = default;
    FlowField(Tensor u_, Tensor v_) : u(std::move(u_)), v(std::move(v_)) {
        if (u.shape() != v.shape())
            throw ShapeError("flow field: u " + shape_str(u.shape()) + " vs v " +
                             shape_str(v.shape()));
    }

    // packed layout: [2 x h x w], channel 0 = u, channel 1 = v.
    static FlowField from_packed(const Tensor& f) {
        int h = f.dim(1), w = f.dim(2);
        return FlowField(reshape(narrow(f, 0, 0, 1), {h, w}),
                         reshape(narrow(f, 0, 1, 1), {h, w}));
    }
    Tensor packed() const {
        int h = u.dim(0), w = u.dim(1);
        return concat({reshape(u, {1, h, w}), reshape(v, {1, h, w})}, 0);
    }
    int height() const { return u.dim(0); }
    int width() const { return u.dim(1); }
};

// Two-level all-pairs similarity volume. Rows index first-frame pixels; the
// coarse level averages the fine level over 2x2 second-frame windows.
struct CorrVolume {
    Tensor level0;  // [N x h*w]
    Tensor level1;  // [N x h1*w1]
    int h = 0, w = 0;    // second-frame extents at level 0
    int h1 = 0, w1 = 0;  // second-frame extents at level 1
};

struct ModelConfig {
    int factor = 4;    // image-to-feature downsampling, power of two
    int channels = 64; // feature width c
    int iters = 6;     // recurrent iterations T
    int radius = 3;    // correlation lookup radius
    int window = 9;    // Gaussian window size for attention/aggregation
    double gcl_sigma = 3.0;
    double ggam_sigma = 3.0;
    int gcl_heads = 4;
    bool use_gcl = true;
    GgamMode ggam_mode = GgamMode::ggad;
    bool product_fusion = false;  // multiply aggregate into f_m instead of concatenating

    void validate() const {
        if (iters < 1) throw ConfigError("model: iters must be >= 1");
        if (factor < 1 || (factor & (factor - 1)) != 0)
            throw ConfigError("model: downsample factor must be a power of two, got " +
                              std::to_string(factor));
        if (channels < 4 || channels % 2 != 0)
            throw ConfigError("model: channels must be even and >= 4");
        if (radius < 1) throw ConfigError("model: lookup radius must be >= 1");
        if (window < 1 || window % 2 == 0)
            throw ConfigError("model: window size must be odd and positive");
        if (use_gcl && channels % gcl_heads != 0)
            throw ConfigError("model: channels not divisible by attention heads");
    }

    GclConfig gcl_config() const {
        GclConfig g;
        g.channels = channels;
        g.heads = gcl_heads;
        g.window = window;
        g.sigma = gcl_sigma;
        return g;
    }
    GgamConfig ggam_config() const {
        GgamConfig g;
        g.channels = channels;
        g.window = window;
        g.sigma = ggam_sigma;
        g.mode = ggam_mode;
        return g;
    }
};

namespace detail {

// A named convolution layer; weights use fan-in scaled initialization.
struct ConvLayer {
    Tensor w, b;
    int k = 1;
    std::string name;

    ConvLayer() = default;
    ConvLayer(int cin, int cout, int kk, const std::string& nm, std::uint64_t seed,
              bool zero_init = false)
        : k(kk), name(nm) {
        double stddev = zero_init ? 0.0 : 1.0 / std::sqrt(double(cin) * k * k);
        w = Tensor::param({cin * k * k, cout}, nm + ".w", seed, stddev);
        b = Tensor::param({cout}, nm + ".b", seed, 0.0);
    }

    Tensor operator()(const Tensor& x) const { return k == 1 ? conv1x1(x, w, b) : conv2d(x, w, b, k); }

    void collect(std::vector<std::pair<std::string, Tensor>>& out) const {
        out.emplace_back(name + ".w", w);
        out.emplace_back(name + ".b", b);
    }
};

}  // namespace detail

// Stride-reducing convolution stack: a stem conv, one conv per halving, the
// last conv linear, all others standardized per channel and passed through
// relu. The standardization keeps untrained feature maps centered so their
// correlation volumes carry usable matching signal from the start.
class Encoder {
public:
    Encoder() = default;

    Encoder(int factor, int out_channels, int hidden, const std::string& name, std::uint64_t seed) {
        for (int s = factor; s > 1; s /= 2) ++subsamples_;
        convs_.emplace_back(3, 32, 3, name + ".conv0", seed);
        int cin = 32;
        for (std::size_t i = 1; i <= subsamples_; ++i) {
            int cout = (i == subsamples_) ? out_channels : hidden;
            convs_.emplace_back(cin, cout, 3, name + ".conv" + std::to_string(i), seed);
            cin = cout;
        }
        if (subsamples_ == 0) convs_.emplace_back(cin, out_channels, 3, name + ".conv1", seed);
    }

    Tensor operator()(const Tensor& img) const {
        Tensor x = relu(instance_norm(convs_[0](img)));
        for (std::size_t i = 1; i < convs_.size(); ++i) {
            if (i <= subsamples_) x = subsample2(x);
            x = convs_[i](x);
            if (i + 1 < convs_.size()) x = relu(instance_norm(x));
        }
        return x;
    }

    void collect_params(std::vector<std::pair<std::string, Tensor>>& out) const {
        for (const auto& c : convs_) c.collect(out);
    }

private:
    std::vector<detail::ConvLayer> convs_;
    std::size_t subsamples_ = 0;
};

class FlowNet;

// Captured working-resolution intermediates of one forward pass.
struct ForwardTrace {
    std::vector<Tensor> deltas;         // per-iteration residual flow [2 x h x w]
    std::vector<Tensor> working_flows;  // accumulated flow after each iteration
};

class FlowNet {
public:
    FlowNet() = default;

    explicit FlowNet(const ModelConfig& cfg, std::uint64_t seed = 7) : cfg_(cfg) {
        cfg.validate();
        int c = cfg.channels;
        fnet_ = Encoder(cfg.factor, c, c, "fnet", seed);
        cnet_ = Encoder(cfg.factor, 2 * c, c, "cnet", seed);
        int P2 = 2 * lookup_positions();
        menc_corr_ = detail::ConvLayer(P2, c, 1, "menc.corr", seed);
        menc_flow_ = detail::ConvLayer(2, c / 2, 3, "menc.flow", seed);
        menc_mix_ = detail::ConvLayer(c + c / 2, c - 2, 3, "menc.mix", seed);
        if (cfg.use_gcl) gcl_ = GclBlock(cfg.gcl_config(), "gcl", seed);
        if (cfg.ggam_mode != GgamMode::off) ggam_ = GgamModule(cfg.ggam_config(), "ggam", seed);
        int in_x = gru_input_channels();
        gru_z_ = detail::ConvLayer(c + in_x, c, 3, "gru.z", seed);
        gru_r_ = detail::ConvLayer(c + in_x, c, 3, "gru.r", seed);
        gru_q_ = detail::ConvLayer(c + in_x, c, 3, "gru.q", seed);
        head_hidden_ = detail::ConvLayer(c, 32, 3, "head.hidden", seed);
        head_out_ = detail::ConvLayer(32, 2, 3, "head.out", seed, /*zero_init=*/true);
    }

    const ModelConfig& config() const { return cfg_; }
    int lookup_positions() const { return (2 * cfg_.radius + 1) * (2 * cfg_.radius + 1); }
    int gru_input_channels() const {
        if (cfg_.ggam_mode == GgamMode::off || cfg_.product_fusion) return 2 * cfg_.channels;
        return 3 * cfg_.channels;
    }

    Tensor encode_features(const Tensor& img) const { return fnet_(img); }
    Tensor encode_context(const Tensor& img) const { return cnet_(img); }

    CorrVolume build_corr(const Tensor& f1, const Tensor& f2) const {
        if (f1.shape() != f2.shape())
            throw ShapeError("build_corr: " + shape_str(f1.shape()) + " vs " +
                             shape_str(f2.shape()));
        int c = f1.dim(0), h = f1.dim(1), w = f1.dim(2), N = h * w;
        Tensor a = transpose2d(reshape(f1, {c, N}));
        Tensor level0 = mul_scalar(matmul(a, reshape(f2, {c, N})), 1.0 / std::sqrt(double(c)));
        Tensor pooled = avg_pool2(reshape(level0, {N, h, w}));
        CorrVolume cv;
        cv.level0 = level0;
        cv.h = h;
        cv.w = w;
        cv.h1 = pooled.dim(1);
        cv.w1 = pooled.dim(2);
        cv.level1 = reshape(pooled, {N, cv.h1 * cv.w1});
        return cv;
    }

    // Windowed bilinear samples of both correlation levels around the flow
    // target of each pixel; [-r, r]^2 offsets, levels concatenated.
    Tensor lookup(const CorrVolume& corr, const Tensor& flow) const {
        int h = flow.dim(1), w = flow.dim(2), N = h * w;
        int r = cfg_.radius, side = 2 * r + 1, P = side * side;
        Tensor flowN = reshape(flow, {2, N});
        Tensor u = narrow(flowN, 0, 0, 1), v = narrow(flowN, 0, 1, 1);
        std::vector<double> py(static_cast<std::size_t>(N)), px(static_cast<std::size_t>(N));
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                py[static_cast<std::size_t>(y * w + x)] = y;
                px[static_cast<std::size_t>(y * w + x)] = x;
            }
        Tensor py_t(Shape{1, N}, py), px_t(Shape{1, N}, px);
        std::vector<double> dy(static_cast<std::size_t>(P) * N), dx(static_cast<std::size_t>(P) * N);
        for (int p = 0; p < P; ++p)
            for (int n = 0; n < N; ++n) {
                dy[static_cast<std::size_t>(p) * N + n] = p / side - r;
                dx[static_cast<std::size_t>(p) * N + n] = p % side - r;
            }
        Tensor dy_t(Shape{P, N}, dy), dx_t(Shape{P, N}, dx);
        Tensor cy = add(v, py_t), cx = add(u, px_t);
        std::vector<Tensor> levels;
        for (int lev = 0; lev < 2; ++lev) {
            double inv = lev == 0 ? 1.0 : 0.5;
            Tensor ly = reshape(repeat_middle(mul_scalar(cy, inv), P), {P, N});
            Tensor lx = reshape(repeat_middle(mul_scalar(cx, inv), P), {P, N});
            Tensor coords = concat({reshape(add(ly, dy_t), {1, P, N}), reshape(add(lx, dx_t), {1, P, N})}, 0);
            if (lev == 0)
                levels.push_back(corr_lookup(corr.level0, corr.h, corr.w, coords));
            else
                levels.push_back(corr_lookup(corr.level1, corr.h1, corr.w1, coords));
        }
        return reshape(concat(levels, 0), {2 * P, h, w});
    }

    // Motion features from lookup responses and the current flow; refined by
    // the Gaussian-constrained attention block when enabled. The flow itself
    // rides along in the last two channels.
    Tensor motion_features(const Tensor& corr_feat, const Tensor& flow) const {
        Tensor cf = relu(menc_corr_(corr_feat));
        Tensor ff = relu(menc_flow_(flow));
        Tensor mixed = relu(menc_mix_(concat({cf, ff}, 0)));
        Tensor f_m = concat({mixed, flow}, 0);
        if (cfg_.use_gcl) f_m = gcl_(f_m);
        return f_m;
    }

    struct StepResult {
        Tensor hidden;
        Tensor delta;  // [2 x h x w] residual flow
    };

    // Gated recurrent update; the zero-initialized head makes the first
    // residual exactly zero.
    StepResult update_step(const Tensor& hidden, const Tensor& f_c, const Tensor& f_m) const {
        Tensor x;
        if (cfg_.ggam_mode == GgamMode::off) {
            x = concat({f_m, f_c}, 0);
        } else {
            Tensor g = ggam_(f_c, f_m);
            x = cfg_.product_fusion ? concat({mul(f_m, g), f_c}, 0) : concat({f_m, g, f_c}, 0);
        }
        Tensor hx = concat({hidden, x}, 0);
        Tensor z = sigmoid(gru_z_(hx));
        Tensor rr = sigmoid(gru_r_(hx));
        Tensor q = tanh_op(gru_q_(concat({mul(rr, hidden), x}, 0)));
        Tensor h1 = add(sub(hidden, mul(z, hidden)), mul(z, q));
        Tensor delta = head_out_(relu(head_hidden_(h1)));
        return {h1, delta};
    }

    // Full-resolution flow prediction per iteration; each working-resolution
    // iterate is bilinearly upsampled with displacements scaled by the factor.
    std::vector<FlowField> forward(const Tensor& img1, const Tensor& img2,
                                   ForwardTrace* trace = nullptr) const {
        if (img1.shape() != img2.shape())
            throw ShapeError("forward: image shapes differ, " + shape_str(img1.shape()) + " vs " +
                             shape_str(img2.shape()));
        if (img1.dim(0) != 3)
            throw ShapeError("forward: expected 3-channel images, got " + shape_str(img1.shape()));
        if (img1.dim(1) % cfg_.factor != 0 || img1.dim(2) % cfg_.factor != 0)
            throw ConfigError("forward: image extents " + std::to_string(img1.dim(1)) + "x" +
                              std::to_string(img1.dim(2)) + " not divisible by factor " +
                              std::to_string(cfg_.factor));
        Tensor f1 = fnet_(img1), f2 = fnet_(img2);
        Tensor ctx = cnet_(img1);
        int c = cfg_.channels;
        Tensor hidden = tanh_op(narrow(ctx, 0, 0, c));
        Tensor f_c = relu(narrow(ctx, 0, c, c));
        CorrVolume corr = build_corr(f1, f2);
        int h = f1.dim(1), w = f1.dim(2);
        Tensor flow = Tensor::zeros({2, h, w});
        std::vector<FlowField> preds;
        preds.reserve(static_cast<std::size_t>(cfg_.iters));
        for (int t = 0; t < cfg_.iters; ++t) {
            flow = flow.detach();
            Tensor corr_feat = lookup(corr, flow);
            Tensor f_m = motion_features(corr_feat, flow);
            StepResult sr = update_step(hidden, f_c, f_m);
            hidden = sr.hidden;
            flow = add(flow, sr.delta);
            if (trace) {
                trace->deltas.push_back(sr.delta);
                trace->working_flows.push_back(flow);
            }
            Tensor up = mul_scalar(upsample2d(flow, cfg_.factor), double(cfg_.factor));
            preds.push_back(FlowField::from_packed(up));
        }
        return preds;
    }

    void collect_params(std::vector<std::pair<std::string, Tensor>>& out) const {
        fnet_.collect_params(out);
        cnet_.collect_params(out);
        menc_corr_.collect(out);
        menc_flow_.collect(out);
        menc_mix_.collect(out);
        if (cfg_.use_gcl) gcl_.collect_params(out);
        if (cfg_.ggam_mode != GgamMode::off) ggam_.collect_params(out);
        gru_z_.collect(out);
        gru_r_.collect(out);
        gru_q_.collect(out);
        head_hidden_.collect(out);
        head_out_.collect(out);
    }

    std::vector<std::pair<std::string, Tensor>> params() const {
        std::vector<std::pair<std::string, Tensor>> out;
        collect_params(out);
        return out;
    }

    GclBlock& gcl() { return gcl_; }
    GgamModule& ggam() { return ggam_; }
    detail::ConvLayer& head_out() { return head_out_; }

private:
    ModelConfig cfg_;
    Encoder fnet_, cnet_;
    detail::ConvLayer menc_corr_, menc_flow_, menc_mix_;
    GclBlock gcl_;
    GgamModule ggam_;
    detail::ConvLayer gru_z_, gru_r_, gru_q_;
    detail::ConvLayer head_hidden_, head_out_;
};

// Exponentially weighted sum of per-prediction masked mean L1 errors; the
// most recent prediction carries weight 1.
inline Tensor sequence_loss(const std::vector<FlowField>& preds, const FlowField& gt,
                            const Tensor& valid, double gamma = 0.8) {
    if (preds.empty()) throw ConfigError("sequence_loss: no predictions");
    if (gamma <= 0.0 || gamma >= 1.0)
        throw ConfigError("sequence_loss: gamma must lie in (0, 1), got " + std::to_string(gamma));
    if (valid.shape() != gt.u.shape())
        throw ShapeError("sequence_loss: valid mask " + shape_str(valid.shape()) + " vs flow " +
                         shape_str(gt.u.shape()));
    double count = 0.0;
    for (std::size_t i = 0; i < valid.numel(); ++i) count += valid[i] > 0.5 ? 1.0 : 0.0;
    if (count == 0.0) throw ConfigError("sequence_loss: empty valid mask");
    int T = int(preds.size());
    Tensor total;
    for (int i = 0; i < T; ++i) {
        if (preds[static_cast<std::size_t>(i)].u.shape() != gt.u.shape())
            throw ShapeError("sequence_loss: prediction " + std::to_string(i) + " shape " +
                             shape_str(preds[static_cast<std::size_t>(i)].u.shape()) + " vs gt " +
                             shape_str(gt.u.shape()));
        const FlowField& p = preds[static_cast<std::size_t>(i)];
        Tensor l1 = add(abs_op(sub(p.u, gt.u)), abs_op(sub(p.v, gt.v)));
        Tensor masked = mul(l1, valid);
        Tensor mean = mul_scalar(sum_all(masked), 1.0 / count);
        Tensor weighted = mul_scalar(mean, std::pow(gamma, T - 1 - i));
        total = total.defined() ? add(total, weighted) : weighted;
    }
    return total;
}

}  // namespace gaussflow
