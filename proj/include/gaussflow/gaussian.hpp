#pragma once

// Gaussian kernel machinery: the analytic 2D Gaussian, its discretization
// with a learnable additive residual, the spatially expanded form, the
// offset-deformed form (the analytic Gaussian re-evaluated at displaced
// sample points), the learned amplitude field, and plain Gaussian smoothing.

#include <cmath>
#include <string>
#include <vector>

#include "gaussflow/ops.hpp"
#include "gaussflow/tensor.hpp"

namespace gaussflow {

struct GaussianKernelSpec {
    int k = 9;              // odd window size
    double sigma = 3.0;     // isotropic standard deviation
    double amplitude = 1.0; // static peak value
    // Window center in window coordinates; defaults to the middle cell.
    double cx = -1.0;
    double cy = -1.0;

    void validate() const {
        if (k < 1 || k % 2 == 0)
            throw ConfigError("gaussian kernel: window size must be odd and positive, got " +
                              std::to_string(k));
        if (sigma <= 0.0) throw ConfigError("gaussian kernel: sigma must be positive");
    }
    double center_x() const { return cx >= 0.0 ? cx : (k / 2); }
    double center_y() const { return cy >= 0.0 ? cy : (k / 2); }
};

// A exp(-((x-x0)^2 + (y-y0)^2) / (2 sigma^2))
inline double gauss2d(const GaussianKernelSpec& spec, double x, double y) {
    double dx = x - spec.center_x();
    double dy = y - spec.center_y();
    double s2 = 2.0 * spec.sigma * spec.sigma;
    return spec.amplitude * std::exp(-(dx * dx + dy * dy) / s2);
}

// Discretized Gaussian on the k x k lattice (constant data, no graph).
inline std::vector<double> gauss_lattice(const GaussianKernelSpec& spec) {
    spec.validate();
    std::vector<double> out(static_cast<std::size_t>(spec.k) * spec.k);
    for (int y = 0; y < spec.k; ++y)
        for (int x = 0; x < spec.k; ++x)
            out[static_cast<std::size_t>(y) * spec.k + x] = gauss2d(spec, x, y);
    return out;
}

// Lattice Gaussian plus a learnable residual matrix, initialized to zero so
// the materialized kernel starts as the plain discretized Gaussian.
struct LearnableGaussianKernel {
    GaussianKernelSpec base;
    Tensor delta;  // [k x k]

    LearnableGaussianKernel() = default;
    explicit LearnableGaussianKernel(const GaussianKernelSpec& spec) : base(spec) {
        spec.validate();
        delta = Tensor::zeros({spec.k, spec.k});
        delta.set_requires_grad(true);
    }
};

// [k x k]; differentiable w.r.t. delta with identity Jacobian.
inline Tensor materialize(const LearnableGaussianKernel& kern) {
    std::vector<double> base = gauss_lattice(kern.base);
    Tensor base_t(Shape{kern.base.k, kern.base.k}, std::move(base));
    return add(base_t, kern.delta);
}

// [K x N]: every spatial position carries an identical flattened copy of the
// k x k Gaussian over its neighborhood offsets. Constant (not learnable).
inline Tensor expand_kernel(const GaussianKernelSpec& spec, int h, int w) {
    std::vector<double> kern = gauss_lattice(spec);
    int K = spec.k * spec.k, N = h * w;
    std::vector<double> out(static_cast<std::size_t>(K) * N);
    for (int l = 0; l < K; ++l)
        for (int n = 0; n < N; ++n)
            out[static_cast<std::size_t>(l) * N + n] = kern[static_cast<std::size_t>(l)];
    return Tensor(Shape{K, N}, std::move(out));
}

// Deformed kernel: entry (l, n) is the analytic Gaussian re-evaluated at the
// slot-l lattice point displaced by offsets(:, l, n); offsets channel 0 is
// the y displacement, channel 1 the x displacement. Differentiable w.r.t.
// offsets; zero offsets reproduce expand_kernel bit for bit.
inline Tensor deform(const GaussianKernelSpec& spec, const Tensor& offsets) {
    spec.validate();
    int K = spec.k * spec.k;
    if (offsets.rank() != 3 || offsets.dim(0) != 2 || offsets.dim(1) != K)
        throw ShapeError("deform: offsets must be [2 x " + std::to_string(K) + " x N], got " +
                         shape_str(offsets.shape()));
    int N = offsets.dim(2);
    std::size_t KN = static_cast<std::size_t>(K) * N;
    std::vector<double> out(KN);
    std::vector<double> vals(KN);  // saved for the backward rule
    double s2 = 2.0 * spec.sigma * spec.sigma;
    double cx = spec.center_x(), cy = spec.center_y();
    for (int l = 0; l < K; ++l) {
        double ly = static_cast<double>(l / spec.k);
        double lx = static_cast<double>(l % spec.k);
        for (int n = 0; n < N; ++n) {
            std::size_t i = static_cast<std::size_t>(l) * N + n;
            double dy = ly + offsets[i] - cy;
            double dx = lx + offsets[KN + i] - cx;
            double v = spec.amplitude * std::exp(-(dx * dx + dy * dy) / s2);
            out[i] = v;
            vals[i] = v;
        }
    }
    return Tensor::make_result(
        {K, N}, std::move(out), {offsets},
        [offsets, spec, K, N, KN, s2, cx, cy, vv = std::move(vals)](const std::vector<double>& g) {
            if (!offsets.requires_grad()) return;
            auto& go = offsets.grad_buffer();
            for (int l = 0; l < K; ++l) {
                double ly = static_cast<double>(l / spec.k);
                double lx = static_cast<double>(l % spec.k);
                for (int n = 0; n < N; ++n) {
                    std::size_t i = static_cast<std::size_t>(l) * N + n;
                    double dy = ly + offsets[i] - cy;
                    double dx = lx + offsets[KN + i] - cx;
                    double common = g[i] * vv[i] * (-2.0 / s2);
                    go[i] += common * dy;
                    go[KN + i] += common * dx;
                }
            }
        });
}

// Amplitude field 1 + theta(f_m) * lambda; theta_out: [K x N] (an already
// projected per-offset map), lambda: learnable scalar [1].
inline Tensor amplitude(const Tensor& theta_out, const Tensor& lambda) {
    return add_scalar(scale_by(theta_out, lambda), 1.0);
}

// (F * G)(p) = sum over the k x k neighborhood of G(p_i - p) * f(p_i),
// zero-padded at borders. Aggregation weights come from the static kernel.
inline Tensor gaussian_smooth(const Tensor& f, const GaussianKernelSpec& spec) {
    spec.validate();
    int h = f.dim(1), w = f.dim(2);
    Tensor u = unfold(f, spec.k);
    Tensor g = expand_kernel(spec, h, w);
    return reshape(weighted_gather(u, g), {f.dim(0), h, w});
}

}  // namespace gaussflow
