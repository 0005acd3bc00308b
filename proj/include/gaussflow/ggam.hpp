#pragma once

// Gaussian-guided aggregation of motion features. Three variants share one
// aggregation skeleton (per-pixel weighted sum over the k x k neighborhood):
//   smooth - static Gaussian window, raw kernel weights;
//   ggac   - Gaussian window modulated per pixel by context self-similarity;
//   ggad   - ggac plus learned per-slot kernel displacements and a learned
//            multiplicative amplitude derived from the motion features.

#include <cmath>
#include <string>
#include <vector>

#include "gaussflow/gaussian.hpp"
#include "gaussflow/ops.hpp"
#include "gaussflow/tensor.hpp"

namespace gaussflow {

enum class GgamMode { off, smooth, ggac, ggad };

inline const char* to_string(GgamMode m) {
    switch (m) {
        case GgamMode::off: return "off";
        case GgamMode::smooth: return "smooth";
        case GgamMode::ggac: return "ggac";
        case GgamMode::ggad: return "ggad";
    }
    return "off";
}

inline GgamMode ggam_mode_from_string(const std::string& s) {
    if (s == "off") return GgamMode::off;
    if (s == "smooth") return GgamMode::smooth;
    if (s == "ggac") return GgamMode::ggac;
    if (s == "ggad") return GgamMode::ggad;
    throw ConfigError("unknown ggam mode '" + s + "' (expected off|smooth|ggac|ggad)");
}

struct GgamConfig {
    int channels = 64;
    int window = 9;
    double sigma = 3.0;
    GgamMode mode = GgamMode::ggad;

    void validate() const {
        if (window < 1 || window % 2 == 0)
            throw ConfigError("ggam: window size must be odd and positive");
        if (mode == GgamMode::off) throw ConfigError("ggam: module built with mode off");
    }
    GaussianKernelSpec spec() const {
        GaussianKernelSpec s;
        s.k = window;
        s.sigma = sigma;
        return s;
    }
};

class GgamModule {
public:
    GgamModule() = default;

    GgamModule(const GgamConfig& cfg, const std::string& prefix, std::uint64_t seed)
        : cfg_(cfg), prefix_(prefix) {
        cfg.validate();
        int c = cfg.channels, K = cfg.window * cfg.window;
        double ps = 1.0 / std::sqrt(double(c));
        wtheta_ = Tensor::param({c, c}, prefix + ".wtheta", seed, ps);
        btheta_ = Tensor::param({c}, prefix + ".btheta", seed, 0.0);
        wphi_ = Tensor::param({c, c}, prefix + ".wphi", seed, ps);
        bphi_ = Tensor::param({c}, prefix + ".bphi", seed, 0.0);
        wrho_ = Tensor::param({c, c}, prefix + ".wrho", seed, ps);
        brho_ = Tensor::param({c}, prefix + ".brho", seed, 0.0);
        if (cfg.mode == GgamMode::ggad) {
            // Zero-initialized so the deformed path starts exactly at ggac.
            woff_ = Tensor::param({c, 2 * K}, prefix + ".woff", seed, 0.0);
            boff_ = Tensor::param({2 * K}, prefix + ".boff", seed, 0.0);
            wamp_ = Tensor::param({c, K}, prefix + ".wamp", seed, 0.0);
            bamp_ = Tensor::param({K}, prefix + ".bamp", seed, 0.0);
            lambda_ = Tensor::param({1}, prefix + ".lambda", seed, 0.0);
        }
    }

    const GgamConfig& config() const { return cfg_; }
    Tensor& lambda() { return lambda_; }
    Tensor& woff() { return woff_; }
    Tensor& wamp() { return wamp_; }

    // The linear value projection used by the aggregation.
    Tensor rho(const Tensor& f_m) const { return conv1x1(f_m, wrho_, brho_); }

    // Context self-similarity weights F: per pixel, softmax over the K
    // neighborhood slots of the scaled inner product between the unfolded
    // theta embedding and the local phi embedding.
    Tensor context_weights(const Tensor& f_c) const {
        int c = cfg_.channels, h = f_c.dim(1), w = f_c.dim(2);
        Tensor th = conv1x1(f_c, wtheta_, btheta_);
        Tensor ph = conv1x1(f_c, wphi_, bphi_);
        Tensor thu = unfold(th, cfg_.window);
        Tensor sim =
            mul_scalar(dot_over_channels(thu, reshape(ph, {c, h * w})), 1.0 / std::sqrt(double(c)));
        return softmax(sim, 0);
    }

    // Aggregation weights [K x N] for the current mode.
    Tensor weights(const Tensor& f_c, const Tensor& f_m) const {
        return weights_as(cfg_.mode, f_c, f_m);
    }

    // Window weights under an explicit aggregation mode; a module trained with
    // deformation can also render its undeformed context-only window.
    Tensor weights_as(GgamMode mode, const Tensor& f_c, const Tensor& f_m) const {
        if (mode == GgamMode::ggad && cfg_.mode != GgamMode::ggad)
            throw ConfigError("ggam: deformed window needs offset parameters");
        int h = f_m.dim(1), w = f_m.dim(2);
        GaussianKernelSpec spec = cfg_.spec();
        switch (mode) {
            case GgamMode::smooth:
                return expand_kernel(spec, h, w);
            case GgamMode::ggac:
                return mul(expand_kernel(spec, h, w), context_weights(f_c));
            case GgamMode::ggad: {
                int c = cfg_.channels, K = cfg_.window * cfg_.window, N = h * w;
                Tensor off_map = conv1x1(f_m, woff_, boff_);      // [2K x h x w]
                Tensor offsets = reshape(off_map, {2, K, N});     // ch 0 = dy, ch 1 = dx
                Tensor deformed = deform(spec, offsets);
                Tensor amp_map = reshape(conv1x1(f_m, wamp_, bamp_), {K, N});
                Tensor amp = amplitude(amp_map, lambda_);
                (void)c;
                return mul(mul(amp, deformed), context_weights(f_c));
            }
            case GgamMode::off: break;
        }
        throw ConfigError("ggam: weights requested with mode off");
    }

    std::vector<double> attn_window_as(GgamMode mode, const Tensor& f_c, const Tensor& f_m,
                                       int qy, int qx) const {
        int h = f_m.dim(1), w = f_m.dim(2), k = cfg_.window;
        if (qy < 0 || qy >= h || qx < 0 || qx >= w)
            throw ConfigError("attn_window: query pixel (" + std::to_string(qy) + ", " +
                              std::to_string(qx) + ") outside " + std::to_string(h) + "x" +
                              std::to_string(w));
        NoGradGuard ng;
        Tensor wmap = weights_as(mode, f_c, f_m);
        int n = qy * w + qx, N = h * w;
        std::vector<double> out(static_cast<std::size_t>(k) * k);
        for (int l = 0; l < k * k; ++l)
            out[static_cast<std::size_t>(l)] = wmap[static_cast<std::size_t>(l) * N + n];
        return out;
    }

    // Aggregate rho(f_m) over each pixel's neighborhood with mode weights.
    // Mode smooth aggregates f_m directly with the raw kernel.
    Tensor operator()(const Tensor& f_c, const Tensor& f_m) const {
        if (f_c.dim(1) != f_m.dim(1) || f_c.dim(2) != f_m.dim(2))
            throw ShapeError("ggam: context " + shape_str(f_c.shape()) + " and motion " +
                             shape_str(f_m.shape()) + " differ spatially");
        int h = f_m.dim(1), w = f_m.dim(2);
        if (cfg_.mode == GgamMode::smooth) return gaussian_smooth(f_m, cfg_.spec());
        Tensor ru = unfold(conv1x1(f_m, wrho_, brho_), cfg_.window);
        Tensor out = weighted_gather(ru, weights(f_c, f_m));
        return reshape(out, {cfg_.channels, h, w});
    }

    // The k x k aggregation window at one query pixel (inspection only).
    std::vector<double> attn_window(const Tensor& f_c, const Tensor& f_m, int qy, int qx) const {
        return attn_window_as(cfg_.mode, f_c, f_m, qy, qx);
    }

    void collect_params(std::vector<std::pair<std::string, Tensor>>& out) const {
        if (cfg_.mode == GgamMode::smooth) return;
        out.emplace_back(prefix_ + ".wtheta", wtheta_);
        out.emplace_back(prefix_ + ".btheta", btheta_);
        out.emplace_back(prefix_ + ".wphi", wphi_);
        out.emplace_back(prefix_ + ".bphi", bphi_);
        out.emplace_back(prefix_ + ".wrho", wrho_);
        out.emplace_back(prefix_ + ".brho", brho_);
        if (cfg_.mode == GgamMode::ggad) {
            out.emplace_back(prefix_ + ".woff", woff_);
            out.emplace_back(prefix_ + ".boff", boff_);
            out.emplace_back(prefix_ + ".wamp", wamp_);
            out.emplace_back(prefix_ + ".bamp", bamp_);
            out.emplace_back(prefix_ + ".lambda", lambda_);
        }
    }

private:
    GgamConfig cfg_;
    std::string prefix_;
    Tensor wtheta_, btheta_, wphi_, bphi_, wrho_, brho_;
    Tensor woff_, boff_, wamp_, bamp_, lambda_;
};

}  // namespace gaussflow
