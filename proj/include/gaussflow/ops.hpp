#pragma once

// Neural-network operations on top of the autograd core: normalizations,
// activations, neighborhood unfolding, bilinear sampling, and the small
// gather/contract primitives the attention operators are built from.
//
// Shape conventions: feature maps are [c x h x w]; "flat" maps are [c x N]
// with N = h*w and n = y*w + x; unfolded neighborhoods are [c x K x N] with
// K = k*k and slot l = (dy+r)*k + (dx+r) for offsets dy,dx in [-r, r].

#include <cmath>
#include <cstddef>
#include <vector>

#include "gaussflow/tensor.hpp"

namespace gaussflow {

// ---- softmax ----

inline Tensor softmax(const Tensor& x, int axis) {
    if (axis < 0 || axis >= x.rank())
        throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape()));
    std::size_t outer = 1, inner = 1;
    std::size_t ax = static_cast<std::size_t>(x.dim(axis));
    for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(x.dim(i));
    for (int i = axis + 1; i < x.rank(); ++i) inner *= static_cast<std::size_t>(x.dim(i));
    std::vector<double> out(x.numel());
    const auto& v = x.data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
            std::size_t base = o * ax * inner + i;
            double m = v[base];
            for (std::size_t l = 1; l < ax; ++l) m = std::max(m, v[base + l * inner]);
            double denom = 0.0;
            for (std::size_t l = 0; l < ax; ++l) {
                double e = std::exp(v[base + l * inner] - m);
                out[base + l * inner] = e;
                denom += e;
            }
            for (std::size_t l = 0; l < ax; ++l) out[base + l * inner] /= denom;
        }
    std::vector<double> saved = out;  // backward needs the softmax output
    return Tensor::make_result(
        x.shape(), std::move(out), {x},
        [x, outer, inner, ax, yd = std::move(saved)](const std::vector<double>& g) {
            if (!x.requires_grad()) return;
            auto& gx = x.grad_buffer();
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < inner; ++i) {
                    std::size_t base = o * ax * inner + i;
                    double dot = 0.0;
                    for (std::size_t l = 0; l < ax; ++l)
                        dot += g[base + l * inner] * yd[base + l * inner];
                    for (std::size_t l = 0; l < ax; ++l)
                        gx[base + l * inner] +=
                            yd[base + l * inner] * (g[base + l * inner] - dot);
                }
        });
}

// ---- layer normalization over the last axis ----

inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-6) {
    int c = x.dim(x.rank() - 1);
    if (gain.rank() != 1 || gain.dim(0) != c || bias.rank() != 1 || bias.dim(0) != c)
        throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(c) + "]");
    if (eps <= 0.0) throw ConfigError("layer_norm: eps must be positive");
    std::size_t rows = x.numel() / static_cast<std::size_t>(c);
    std::size_t cc = static_cast<std::size_t>(c);
    std::vector<double> out(x.numel());
    std::vector<double> xhat(x.numel());
    std::vector<double> inv_std(rows);
    const auto& v = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = v.data() + r * cc;
        double mean = 0.0;
        for (std::size_t j = 0; j < cc; ++j) mean += row[j];
        mean /= static_cast<double>(cc);
        double var = 0.0;
        for (std::size_t j = 0; j < cc; ++j) {
            double d = row[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(cc);
        double inv = 1.0 / std::sqrt(var + eps);
        inv_std[r] = inv;
        for (std::size_t j = 0; j < cc; ++j) {
            double h = (row[j] - mean) * inv;
            xhat[r * cc + j] = h;
            out[r * cc + j] = gain[j] * h + bias[j];
        }
    }
    return Tensor::make_result(
        x.shape(), std::move(out), {x, gain, bias},
        [x, gain, bias, rows, cc, xh = std::move(xhat),
         inv = std::move(inv_std)](const std::vector<double>& g) {
            for (std::size_t r = 0; r < rows; ++r) {
                const double* grow = g.data() + r * cc;
                const double* hrow = xh.data() + r * cc;
                if (gain.requires_grad())
                    for (std::size_t j = 0; j < cc; ++j) gain.accum_grad(j, grow[j] * hrow[j]);
                if (bias.requires_grad())
                    for (std::size_t j = 0; j < cc; ++j) bias.accum_grad(j, grow[j]);
                if (x.requires_grad()) {
                    double mean_dh = 0.0, mean_dh_h = 0.0;
                    for (std::size_t j = 0; j < cc; ++j) {
                        double dh = grow[j] * gain[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hrow[j];
                    }
                    mean_dh /= static_cast<double>(cc);
                    mean_dh_h /= static_cast<double>(cc);
                    auto& gx = x.grad_buffer();
                    for (std::size_t j = 0; j < cc; ++j) {
                        double dh = grow[j] * gain[j];
                        gx[r * cc + j] += inv[r] * (dh - mean_dh - hrow[j] * mean_dh_h);
                    }
                }
            }
        });
}

// ---- per-channel standardization over the spatial extent ----
//
// x is channel-major ([c x ...spatial]); each channel is shifted to zero mean
// and unit variance over its spatial block. Parameter-free: any following
// convolution supplies scale and shift. Centering the features keeps their
// dot products from being dominated by a shared mean component, which is what
// makes correlation volumes informative from the first training step.

inline Tensor instance_norm(const Tensor& x, double eps = 1e-6) {
    if (x.rank() < 2) throw ShapeError("instance_norm: need rank >= 2, got " + shape_str(x.shape()));
    if (eps <= 0.0) throw ConfigError("instance_norm: eps must be positive");
    std::size_t rows = static_cast<std::size_t>(x.dim(0));
    std::size_t cc = x.numel() / rows;
    std::vector<double> out(x.numel());
    std::vector<double> xhat(x.numel());
    std::vector<double> inv_std(rows);
    const auto& v = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = v.data() + r * cc;
        double mean = 0.0;
        for (std::size_t j = 0; j < cc; ++j) mean += row[j];
        mean /= static_cast<double>(cc);
        double var = 0.0;
        for (std::size_t j = 0; j < cc; ++j) {
            double d = row[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(cc);
        double inv = 1.0 / std::sqrt(var + eps);
        inv_std[r] = inv;
        for (std::size_t j = 0; j < cc; ++j) {
            double h = (row[j] - mean) * inv;
            xhat[r * cc + j] = h;
            out[r * cc + j] = h;
        }
    }
    return Tensor::make_result(
        x.shape(), std::move(out), {x},
        [x, rows, cc, xh = std::move(xhat), inv = std::move(inv_std)](
            const std::vector<double>& g) {
            if (!x.requires_grad()) return;
            auto& gx = x.grad_buffer();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* grow = g.data() + r * cc;
                const double* hrow = xh.data() + r * cc;
                double mean_g = 0.0, mean_g_h = 0.0;
                for (std::size_t j = 0; j < cc; ++j) {
                    mean_g += grow[j];
                    mean_g_h += grow[j] * hrow[j];
                }
                mean_g /= static_cast<double>(cc);
                mean_g_h /= static_cast<double>(cc);
                for (std::size_t j = 0; j < cc; ++j)
                    gx[r * cc + j] += inv[r] * (grow[j] - mean_g - hrow[j] * mean_g_h);
            }
        });
}

// ---- affine map over the last axis ----

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (w.rank() != 2)
        throw ShapeError("linear: weight must be rank 2, got " + shape_str(w.shape()));
    int cin = w.dim(0), cout = w.dim(1);
    if (x.dim(x.rank() - 1) != cin)
        throw ShapeError("linear: input channels " + shape_str(x.shape()) +
                         " do not match weight " + shape_str(w.shape()));
    if (b.rank() != 1 || b.dim(0) != cout)
        throw ShapeError("linear: bias must be [" + std::to_string(cout) + "]");
    std::size_t rows = x.numel() / static_cast<std::size_t>(cin);
    Shape out_shape = x.shape();
    out_shape.back() = cout;
    std::vector<double> out(rows * static_cast<std::size_t>(cout));
    const auto& xv = x.data();
    const auto& wv = w.data();
    for (std::size_t r = 0; r < rows; ++r) {
        double* orow = out.data() + r * static_cast<std::size_t>(cout);
        for (int j = 0; j < cout; ++j) orow[j] = b[static_cast<std::size_t>(j)];
        const double* xrow = xv.data() + r * static_cast<std::size_t>(cin);
        for (int k = 0; k < cin; ++k) {
            double xk = xrow[k];
            const double* wrow = wv.data() + static_cast<std::size_t>(k) * cout;
            for (int j = 0; j < cout; ++j) orow[j] += xk * wrow[j];
        }
    }
    return Tensor::make_result(
        std::move(out_shape), std::move(out), {x, w, b},
        [x, w, b, rows, cin, cout](const std::vector<double>& g) {
            const auto& xv = x.data();
            const auto& wv = w.data();
            if (x.requires_grad()) {
                auto& gx = x.grad_buffer();
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* grow = g.data() + r * static_cast<std::size_t>(cout);
                    double* gxrow = gx.data() + r * static_cast<std::size_t>(cin);
                    for (int k = 0; k < cin; ++k) {
                        const double* wrow = wv.data() + static_cast<std::size_t>(k) * cout;
                        double acc = 0.0;
                        for (int j = 0; j < cout; ++j) acc += grow[j] * wrow[j];
                        gxrow[k] += acc;
                    }
                }
            }
            if (w.requires_grad()) {
                auto& gw = w.grad_buffer();
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* grow = g.data() + r * static_cast<std::size_t>(cout);
                    const double* xrow = xv.data() + r * static_cast<std::size_t>(cin);
                    for (int k = 0; k < cin; ++k) {
                        double xk = xrow[k];
                        double* gwrow = gw.data() + static_cast<std::size_t>(k) * cout;
                        for (int j = 0; j < cout; ++j) gwrow[j] += xk * grow[j];
                    }
                }
            }
            if (b.requires_grad()) {
                auto& gb = b.grad_buffer();
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* grow = g.data() + r * static_cast<std::size_t>(cout);
                    for (int j = 0; j < cout; ++j) gb[static_cast<std::size_t>(j)] += grow[j];
                }
            }
        });
}

// ---- activations ----

namespace detail {

template <class F, class DF>
Tensor elementwise(const Tensor& x, F f, DF df) {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
    return Tensor::make_result(x.shape(), std::move(out), {x},
                               [x, df](const std::vector<double>& g) {
                                   if (!x.requires_grad()) return;
                                   auto& gx = x.grad_buffer();
                                   for (std::size_t i = 0; i < g.size(); ++i)
                                       gx[i] += g[i] * df(x[i]);
                               });
}

}  // namespace detail

inline Tensor relu(const Tensor& x) {
    return detail::elementwise(
        x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor gelu(const Tensor& x) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    return detail::elementwise(
        x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
        [](double v) {
            double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            return cdf + v * inv_sqrt2pi * std::exp(-0.5 * v * v);
        });
}

inline Tensor sigmoid(const Tensor& x) {
    return detail::elementwise(
        x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double v) {
            double s = 1.0 / (1.0 + std::exp(-v));
            return s * (1.0 - s);
        });
}

inline Tensor tanh_op(const Tensor& x) {
    return detail::elementwise(
        x, [](double v) { return std::tanh(v); },
        [](double v) {
            double t = std::tanh(v);
            return 1.0 - t * t;
        });
}

inline Tensor abs_op(const Tensor& x) {
    return detail::elementwise(
        x, [](double v) { return std::abs(v); },
        [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

// ---- neighborhood unfolding ----

// x: [c x h x w], window k (odd) -> [c x K x N]. Out-of-image slots are zero.
inline Tensor unfold(const Tensor& x, int k) {
    if (x.rank() != 3) throw ShapeError("unfold expects [c x h x w], got " + shape_str(x.shape()));
    if (k < 1 || k % 2 == 0)
        throw ConfigError("unfold: window size must be odd and positive, got " +
                          std::to_string(k));
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    int r = k / 2, K = k * k, N = h * w;
    std::vector<double> out(static_cast<std::size_t>(c) * K * N, 0.0);
    const auto& v = x.data();
    for (int ch = 0; ch < c; ++ch) {
        const double* plane = v.data() + static_cast<std::size_t>(ch) * h * w;
        for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx) {
                int l = (dy + r) * k + (dx + r);
                double* slot =
                    out.data() + (static_cast<std::size_t>(ch) * K + l) * N;
                for (int y = 0; y < h; ++y) {
                    int sy = y + dy;
                    if (sy < 0 || sy >= h) continue;
                    int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                    const double* src = plane + static_cast<std::size_t>(sy) * w + dx;
                    double* dst = slot + static_cast<std::size_t>(y) * w;
                    for (int xx = x0; xx < x1; ++xx) dst[xx] = src[xx];
                }
            }
    }
    return Tensor::make_result(
        {c, K, N}, std::move(out), {x},
        [x, c, h, w, k, r, K, N](const std::vector<double>& g) {
            if (!x.requires_grad()) return;
            auto& gx = x.grad_buffer();
            for (int ch = 0; ch < c; ++ch) {
                double* plane = gx.data() + static_cast<std::size_t>(ch) * h * w;
                for (int dy = -r; dy <= r; ++dy)
                    for (int dx = -r; dx <= r; ++dx) {
                        int l = (dy + r) * k + (dx + r);
                        const double* slot =
                            g.data() + (static_cast<std::size_t>(ch) * K + l) * N;
                        for (int y = 0; y < h; ++y) {
                            int sy = y + dy;
                            if (sy < 0 || sy >= h) continue;
                            int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                            double* dst = plane + static_cast<std::size_t>(sy) * w + dx;
                            const double* src = slot + static_cast<std::size_t>(y) * w;
                            for (int xx = x0; xx < x1; ++xx) dst[xx] += src[xx];
                        }
                    }
            }
        });
}

// ---- bilinear sampling ----

// x: [c x h x w], coords: [2 x M] rows (y, x) -> [c x M]. Zero outside the
// grid; each of the four corner taps contributes only if it lies inside.
inline Tensor bilinear_sample(const Tensor& x, const Tensor& coords) {
    if (x.rank() != 3)
        throw ShapeError("bilinear_sample expects [c x h x w], got " + shape_str(x.shape()));
    if (coords.rank() != 2 || coords.dim(0) != 2)
        throw ShapeError("bilinear_sample: coords must be [2 x M], got " +
                         shape_str(coords.shape()));
    int c = x.dim(0), h = x.dim(1), w = x.dim(2), M = coords.dim(1);
    std::vector<double> out(static_cast<std::size_t>(c) * M, 0.0);
    const auto& v = x.data();
    auto at = [&](int ch, int y, int xx) -> double {
        if (y < 0 || y >= h || xx < 0 || xx >= w) return 0.0;
        return v[(static_cast<std::size_t>(ch) * h + y) * w + xx];
    };
    for (int m = 0; m < M; ++m) {
        double py = coords[static_cast<std::size_t>(m)];
        double px = coords[static_cast<std::size_t>(M) + m];
        double fy = std::floor(py), fx = std::floor(px);
        int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
        double wy = py - fy, wx = px - fx;
        for (int ch = 0; ch < c; ++ch) {
            double val = (1 - wy) * (1 - wx) * at(ch, y0, x0) +
                         (1 - wy) * wx * at(ch, y0, x0 + 1) +
                         wy * (1 - wx) * at(ch, y0 + 1, x0) +
                         wy * wx * at(ch, y0 + 1, x0 + 1);
            out[static_cast<std::size_t>(ch) * M + m] = val;
        }
    }
    return Tensor::make_result(
        {c, M}, std::move(out), {x, coords},
        [x, coords, c, h, w, M](const std::vector<double>& g) {
            const auto& v = x.data();
            auto inside = [&](int y, int xx) { return y >= 0 && y < h && xx >= 0 && xx < w; };
            auto at = [&](int ch, int y, int xx) -> double {
                return inside(y, xx) ? v[(static_cast<std::size_t>(ch) * h + y) * w + xx] : 0.0;
            };
            for (int m = 0; m < M; ++m) {
                double py = coords[static_cast<std::size_t>(m)];
                double px = coords[static_cast<std::size_t>(M) + m];
                double fy = std::floor(py), fx = std::floor(px);
                int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
                double wy = py - fy, wx = px - fx;
                double gy = 0.0, gx = 0.0;
                for (int ch = 0; ch < c; ++ch) {
                    double go = g[static_cast<std::size_t>(ch) * M + m];
                    if (go == 0.0 && !coords.requires_grad()) continue;
                    if (x.requires_grad()) {
                        auto& gxb = x.grad_buffer();
                        auto add = [&](int y, int xx, double wgt) {
                            if (inside(y, xx))
                                gxb[(static_cast<std::size_t>(ch) * h + y) * w + xx] += go * wgt;
                        };
                        add(y0, x0, (1 - wy) * (1 - wx));
                        add(y0, x0 + 1, (1 - wy) * wx);
                        add(y0 + 1, x0, wy * (1 - wx));
                        add(y0 + 1, x0 + 1, wy * wx);
                    }
                    if (coords.requires_grad()) {
                        double v00 = at(ch, y0, x0), v01 = at(ch, y0, x0 + 1);
                        double v10 = at(ch, y0 + 1, x0), v11 = at(ch, y0 + 1, x0 + 1);
                        gy += go * (-(1 - wx) * v00 - wx * v01 + (1 - wx) * v10 + wx * v11);
                        gx += go * (-(1 - wy) * v00 + (1 - wy) * v01 - wy * v10 + wy * v11);
                    }
                }
                if (coords.requires_grad()) {
                    coords.accum_grad(static_cast<std::size_t>(m), gy);
                    coords.accum_grad(static_cast<std::size_t>(M) + m, gx);
                }
            }
        });
}

// ---- attention building blocks ----

// a: [c x K x N], b: [c x N] -> [K x N]; out(l,n) = sum_ch a(ch,l,n)*b(ch,n).
inline Tensor dot_over_channels(const Tensor& a, const Tensor& b) {
    if (a.rank() != 3 || b.rank() != 2 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
        throw ShapeError("dot_over_channels: incompatible " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    int c = a.dim(0), K = a.dim(1), N = a.dim(2);
    std::vector<double> out(static_cast<std::size_t>(K) * N, 0.0);
    const auto& av = a.data();
    const auto& bv = b.data();
    for (int ch = 0; ch < c; ++ch)
        for (int l = 0; l < K; ++l) {
            const double* arow = av.data() + (static_cast<std::size_t>(ch) * K + l) * N;
            const double* brow = bv.data() + static_cast<std::size_t>(ch) * N;
            double* orow = out.data() + static_cast<std::size_t>(l) * N;
            for (int n = 0; n < N; ++n) orow[n] += arow[n] * brow[n];
        }
    return Tensor::make_result(
        {K, N}, std::move(out), {a, b},
        [a, b, c, K, N](const std::vector<double>& g) {
            const auto& av = a.data();
            const auto& bv = b.data();
            if (a.requires_grad()) {
                auto& ga = a.grad_buffer();
                for (int ch = 0; ch < c; ++ch)
                    for (int l = 0; l < K; ++l) {
                        double* garow = ga.data() + (static_cast<std::size_t>(ch) * K + l) * N;
                        const double* brow = bv.data() + static_cast<std::size_t>(ch) * N;
                        const double* grow = g.data() + static_cast<std::size_t>(l) * N;
                        for (int n = 0; n < N; ++n) garow[n] += grow[n] * brow[n];
                    }
            }
            if (b.requires_grad()) {
                auto& gb = b.grad_buffer();
                for (int ch = 0; ch < c; ++ch)
                    for (int l = 0; l < K; ++l) {
                        const double* arow = av.data() + (static_cast<std::size_t>(ch) * K + l) * N;
                        double* gbrow = gb.data() + static_cast<std::size_t>(ch) * N;
                        const double* grow = g.data() + static_cast<std::size_t>(l) * N;
                        for (int n = 0; n < N; ++n) gbrow[n] += grow[n] * arow[n];
                    }
            }
        });
}

// a: [K x N], s: [K] -> [K x N]; row l scaled by s(l).
inline Tensor row_scale(const Tensor& a, const Tensor& s) {
    if (a.rank() != 2 || s.rank() != 1 || s.dim(0) != a.dim(0))
        throw ShapeError("row_scale: incompatible " + shape_str(a.shape()) + " and " +
                         shape_str(s.shape()));
    int K = a.dim(0), N = a.dim(1);
    std::vector<double> out(a.numel());
    for (int l = 0; l < K; ++l) {
        double sv = s[static_cast<std::size_t>(l)];
        for (int n = 0; n < N; ++n)
            out[static_cast<std::size_t>(l) * N + n] = a[static_cast<std::size_t>(l) * N + n] * sv;
    }
    return Tensor::make_result(
        {K, N}, std::move(out), {a, s},
        [a, s, K, N](const std::vector<double>& g) {
            if (a.requires_grad()) {
                auto& ga = a.grad_buffer();
                for (int l = 0; l < K; ++l) {
                    double sv = s[static_cast<std::size_t>(l)];
                    for (int n = 0; n < N; ++n)
                        ga[static_cast<std::size_t>(l) * N + n] +=
                            g[static_cast<std::size_t>(l) * N + n] * sv;
                }
            }
            if (s.requires_grad()) {
                for (int l = 0; l < K; ++l) {
                    double acc = 0.0;
                    for (int n = 0; n < N; ++n)
                        acc += g[static_cast<std::size_t>(l) * N + n] *
                               a[static_cast<std::size_t>(l) * N + n];
                    s.accum_grad(static_cast<std::size_t>(l), acc);
                }
            }
        });
}

// v: [c x K x N], w: [K x N] -> [c x N]; out(ch,n) = sum_l v(ch,l,n)*w(l,n).
inline Tensor weighted_gather(const Tensor& v, const Tensor& w) {
    if (v.rank() != 3 || w.rank() != 2 || v.dim(1) != w.dim(0) || v.dim(2) != w.dim(1))
        throw ShapeError("weighted_gather: incompatible " + shape_str(v.shape()) + " and " +
                         shape_str(w.shape()));
    int c = v.dim(0), K = v.dim(1), N = v.dim(2);
    std::vector<double> out(static_cast<std::size_t>(c) * N, 0.0);
    const auto& vv = v.data();
    const auto& wv = w.data();
    for (int ch = 0; ch < c; ++ch)
        for (int l = 0; l < K; ++l) {
            const double* vrow = vv.data() + (static_cast<std::size_t>(ch) * K + l) * N;
            const double* wrow = wv.data() + static_cast<std::size_t>(l) * N;
            double* orow = out.data() + static_cast<std::size_t>(ch) * N;
            for (int n = 0; n < N; ++n) orow[n] += vrow[n] * wrow[n];
        }
    return Tensor::make_result(
        {c, N}, std::move(out), {v, w},
        [v, w, c, K, N](const std::vector<double>& g) {
            const auto& vv = v.data();
            const auto& wv = w.data();
            if (v.requires_grad()) {
                auto& gv = v.grad_buffer();
                for (int ch = 0; ch < c; ++ch)
                    for (int l = 0; l < K; ++l) {
                        double* gvrow = gv.data() + (static_cast<std::size_t>(ch) * K + l) * N;
                        const double* wrow = wv.data() + static_cast<std::size_t>(l) * N;
                        const double* grow = g.data() + static_cast<std::size_t>(ch) * N;
                        for (int n = 0; n < N; ++n) gvrow[n] += grow[n] * wrow[n];
                    }
            }
            if (w.requires_grad()) {
                auto& gw = w.grad_buffer();
                for (int ch = 0; ch < c; ++ch)
                    for (int l = 0; l < K; ++l) {
                        const double* vrow = vv.data() + (static_cast<std::size_t>(ch) * K + l) * N;
                        double* gwrow = gw.data() + static_cast<std::size_t>(l) * N;
                        const double* grow = g.data() + static_cast<std::size_t>(ch) * N;
                        for (int n = 0; n < N; ++n) gwrow[n] += grow[n] * vrow[n];
                    }
            }
        });
}

// x: [a x b] -> [a x m x b] by repeating along a new middle axis.
inline Tensor repeat_middle(const Tensor& x, int m) {
    if (x.rank() != 2) throw ShapeError("repeat_middle expects rank 2, got " + shape_str(x.shape()));
    int a = x.dim(0), b = x.dim(1);
    std::vector<double> out(static_cast<std::size_t>(a) * m * b);
    for (int i = 0; i < a; ++i)
        for (int p = 0; p < m; ++p)
            std::copy(x.data().data() + static_cast<std::size_t>(i) * b,
                      x.data().data() + static_cast<std::size_t>(i + 1) * b,
                      out.data() + (static_cast<std::size_t>(i) * m + p) * b);
    return Tensor::make_result(
        {a, m, b}, std::move(out), {x},
        [x, a, m, b](const std::vector<double>& g) {
            if (!x.requires_grad()) return;
            auto& gx = x.grad_buffer();
            for (int i = 0; i < a; ++i)
                for (int p = 0; p < m; ++p) {
                    const double* src = g.data() + (static_cast<std::size_t>(i) * m + p) * b;
                    double* dst = gx.data() + static_cast<std::size_t>(i) * b;
                    for (int j = 0; j < b; ++j) dst[j] += src[j];
                }
        });
}

// ---- spatial resampling ----

// Keep every second pixel starting at (0,0); realizes stride-2 convolution
// when composed after a stride-1 convolution.
inline Tensor subsample2(const Tensor& x) {
    if (x.rank() != 3) throw ShapeError("subsample2 expects [c x h x w], got " + shape_str(x.shape()));
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    int ho = (h + 1) / 2, wo = (w + 1) / 2;
    std::vector<double> out(static_cast<std::size_t>(c) * ho * wo);
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < ho; ++y)
            for (int xx = 0; xx < wo; ++xx)
                out[(static_cast<std::size_t>(ch) * ho + y) * wo + xx] =
                    x[(static_cast<std::size_t>(ch) * h + 2 * y) * w + 2 * xx];
    return Tensor::make_result(
        {c, ho, wo}, std::move(out), {x},
        [x, c, h, w, ho, wo](const std::vector<double>& g) {
            if (!x.requires_grad()) return;
            auto& gx = x.grad_buffer();
            for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y < ho; ++y)
                    for (int xx = 0; xx < wo; ++xx)
                        gx[(static_cast<std::size_t>(ch) * h + 2 * y) * w + 2 * xx] +=
                            g[(static_cast<std::size_t>(ch) * ho + y) * wo + xx];
        });
}

// 2x average pooling with partial windows at odd extents.
inline Tensor avg_pool2(const Tensor& x) {
    if (x.rank() != 3) throw ShapeError("avg_pool2 expects [n x h x w], got " + shape_str(x.shape()));
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    int ho = (h + 1) / 2, wo = (w + 1) / 2;
    std::vector<double> out(static_cast<std::size_t>(c) * ho * wo, 0.0);
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < ho; ++y)
            for (int xx = 0; xx < wo; ++xx) {
                double acc = 0.0;
                int cnt = 0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        int sy = 2 * y + dy, sx = 2 * xx + dx;
                        if (sy < h && sx < w) {
                            acc += x[(static_cast<std::size_t>(ch) * h + sy) * w + sx];
                            ++cnt;
                        }
                    }
                out[(static_cast<std::size_t>(ch) * ho + y) * wo + xx] = acc / cnt;
            }
    return Tensor::make_result(
        {c, ho, wo}, std::move(out), {x},
        [x, c, h, w, ho, wo](const std::vector<double>& g) {
            if (!x.requires_grad()) return;
            auto& gx = x.grad_buffer();
            for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y < ho; ++y)
                    for (int xx = 0; xx < wo; ++xx) {
                        int cnt = 0;
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx)
                                if (2 * y + dy < h && 2 * xx + dx < w) ++cnt;
                        double go = g[(static_cast<std::size_t>(ch) * ho + y) * wo + xx] / cnt;
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                int sy = 2 * y + dy, sx = 2 * xx + dx;
                                if (sy < h && sx < w)
                                    gx[(static_cast<std::size_t>(ch) * h + sy) * w + sx] += go;
                            }
                    }
        });
}

// ---- correlation lookup sampling ----

// corr: [N x M] where each row n is an hc x wc similarity plane (M = hc*wc);
// coords: [2 x P x N] (y, x) sample positions per plane. Output [P x N].
// Differentiable in both corr and coords; zero outside each plane.
inline Tensor corr_lookup(const Tensor& corr, int hc, int wc, const Tensor& coords) {
    if (corr.rank() != 2 || corr.dim(1) != hc * wc)
        throw ShapeError("corr_lookup: volume " + shape_str(corr.shape()) + " is not N x " +
                         std::to_string(hc * wc));
    if (coords.rank() != 3 || coords.dim(0) != 2 || coords.dim(2) != corr.dim(0))
        throw ShapeError("corr_lookup: coords " + shape_str(coords.shape()) +
                         " do not match volume " + shape_str(corr.shape()));
    int N = corr.dim(0), P = coords.dim(1);
    std::vector<double> out(static_cast<std::size_t>(P) * N, 0.0);
    const auto& cv = corr.data();
    auto plane_at = [&](int n, int y, int xx) -> double {
        if (y < 0 || y >= hc || xx < 0 || xx >= wc) return 0.0;
        return cv[(static_cast<std::size_t>(n) * hc + y) * wc + xx];
    };
    std::size_t PN = static_cast<std::size_t>(P) * N;
    for (int p = 0; p < P; ++p)
        for (int n = 0; n < N; ++n) {
            double py = coords[static_cast<std::size_t>(p) * N + n];
            double px = coords[PN + static_cast<std::size_t>(p) * N + n];
            double fy = std::floor(py), fx = std::floor(px);
            int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
            double wy = py - fy, wx = px - fx;
            out[static_cast<std::size_t>(p) * N + n] =
                (1 - wy) * (1 - wx) * plane_at(n, y0, x0) +
                (1 - wy) * wx * plane_at(n, y0, x0 + 1) +
                wy * (1 - wx) * plane_at(n, y0 + 1, x0) +
                wy * wx * plane_at(n, y0 + 1, x0 + 1);
        }
    return Tensor::make_result(
        {P, N}, std::move(out), {corr, coords},
        [corr, coords, hc, wc, N, P, PN](const std::vector<double>& g) {
            const auto& cv = corr.data();
            auto inside = [&](int y, int xx) { return y >= 0 && y < hc && xx >= 0 && xx < wc; };
            for (int p = 0; p < P; ++p)
                for (int n = 0; n < N; ++n) {
                    double go = g[static_cast<std::size_t>(p) * N + n];
                    if (go == 0.0) continue;
                    double py = coords[static_cast<std::size_t>(p) * N + n];
                    double px = coords[PN + static_cast<std::size_t>(p) * N + n];
                    double fy = std::floor(py), fx = std::floor(px);
                    int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
                    double wy = py - fy, wx = px - fx;
                    if (corr.requires_grad()) {
                        auto& gc = corr.grad_buffer();
                        auto add = [&](int y, int xx, double wgt) {
                            if (inside(y, xx))
                                gc[(static_cast<std::size_t>(n) * hc + y) * wc + xx] += go * wgt;
                        };
                        add(y0, x0, (1 - wy) * (1 - wx));
                        add(y0, x0 + 1, (1 - wy) * wx);
                        add(y0 + 1, x0, wy * (1 - wx));
                        add(y0 + 1, x0 + 1, wy * wx);
                    }
                    if (coords.requires_grad()) {
                        auto at = [&](int y, int xx) -> double {
                            return inside(y, xx)
                                       ? cv[(static_cast<std::size_t>(n) * hc + y) * wc + xx]
                                       : 0.0;
                        };
                        double v00 = at(y0, x0), v01 = at(y0, x0 + 1);
                        double v10 = at(y0 + 1, x0), v11 = at(y0 + 1, x0 + 1);
                        double gy =
                            go * (-(1 - wx) * v00 - wx * v01 + (1 - wx) * v10 + wx * v11);
                        double gx =
                            go * (-(1 - wy) * v00 + (1 - wy) * v01 - wy * v10 + wy * v11);
                        coords.accum_grad(static_cast<std::size_t>(p) * N + n, gy);
                        coords.accum_grad(PN + static_cast<std::size_t>(p) * N + n, gx);
                    }
                }
        });
}

// ---- convolution helpers (composed from verified primitives) ----

// Per-pixel linear map on a [c x h x w] map; w: [cin x cout].
inline Tensor conv1x1(const Tensor& x, const Tensor& w, const Tensor& b) {
    int c = x.dim(0), h = x.dim(1), ww = x.dim(2);
    Tensor flat = reshape(x, {c, h * ww});
    Tensor y = linear(transpose2d(flat), w, b);
    return reshape(transpose2d(y), {w.dim(1), h, ww});
}

// k x k stride-1 convolution, zero padded; w: [cin*k*k x cout] with the
// row index ci*K + l matching unfold's slot order.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int k) {
    int c = x.dim(0), h = x.dim(1), ww = x.dim(2);
    if (w.dim(0) != c * k * k)
        throw ShapeError("conv2d: weight " + shape_str(w.shape()) + " does not match input " +
                         shape_str(x.shape()) + " with window " + std::to_string(k));
    Tensor u = unfold(x, k);
    Tensor m = reshape(u, {c * k * k, h * ww});
    Tensor y = linear(transpose2d(m), w, b);
    return reshape(transpose2d(y), {w.dim(1), h, ww});
}

// Bilinear upsampling by an integer factor with edge-clamped sampling.
inline Tensor upsample2d(const Tensor& x, int factor) {
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    int H = h * factor, W = w * factor;
    Tensor coords({2, H * W});
    auto& cd = coords.mutable_data();
    for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
            double sy = (y + 0.5) / factor - 0.5;
            double sx = (xx + 0.5) / factor - 0.5;
            sy = std::min(std::max(sy, 0.0), static_cast<double>(h - 1));
            sx = std::min(std::max(sx, 0.0), static_cast<double>(w - 1));
            cd[static_cast<std::size_t>(y) * W + xx] = sy;
            cd[static_cast<std::size_t>(H) * W + static_cast<std::size_t>(y) * W + xx] = sx;
        }
    return reshape(bilinear_sample(x, coords), {c, H, W});
}

}  // namespace gaussflow
