#pragma once

// Synthetic scene generation with analytic ground truth. Scenes are layered
// compositions of band-limited sinusoid textures: a full-canvas background
// plus convex polygon layers, each moving by its own similarity transform
// (rotation, uniform scale, translation). Both frames are rendered directly
// from the analytic textures, so ground-truth flow carries no resampling
// error. Pixels whose true correspondence is covered by a closer layer, or
// sits within 1.5 px of a layer silhouette in either frame, are flagged as
// occluded but stay supervised (the ground truth is still known exactly).
// Polygon-layer pixels whose correspondence leaves the canvas are marked
// invalid; full-canvas layers stay supervised everywhere.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "gaussflow/flow_net.hpp"
#include "gaussflow/rng.hpp"
#include "gaussflow/tensor.hpp"

namespace gaussflow {

struct LayerSpec {
    std::uint64_t texture_seed = 1;
    // Convex polygon vertices (x, y) in counter-clockwise order; empty means
    // the layer covers the whole canvas.
    std::vector<std::array<double, 2>> poly;
    double tx = 0.0, ty = 0.0;  // translation, pixels
    double rot = 0.0;           // rotation, radians
    double scale = 1.0;         // uniform scale
    double cx = 0.0, cy = 0.0;  // rotation/scale center
};

struct SceneSpec {
    int height = 96;
    int width = 128;
    std::vector<LayerSpec> layers;  // back to front; layers[0] is the background
    std::uint64_t seed = 0;
};

struct SyntheticSample {
    Tensor img1, img2;  // [3 x H x W] in [0, 1]
    FlowField gt;
    Tensor valid;     // [H x W], 1 = supervised
    Tensor occluded;  // [H x W], 1 = correspondence occluded or near a silhouette
};

namespace synth_detail {

constexpr double kEdgeBand = 1.5;  // px distance to a silhouette that flags occlusion

struct Wave {
    double kx, ky, amp;
    std::array<double, 3> phase;
};

struct TextureSpec {
    std::vector<Wave> waves;
};

inline TextureSpec make_texture(std::uint64_t seed) {
    Rng rng(seed);
    TextureSpec t;
    int n = 6;
    std::vector<double> raw(static_cast<std::size_t>(n));
    double total = 0.0;
    for (auto& a : raw) {
        a = rng.uniform(0.5, 1.0);
        total += a;
    }
    for (int i = 0; i < n; ++i) {
        Wave wv;
        double lambda = rng.uniform(12.0, 32.0);
        double ang = rng.uniform(0.0, 2.0 * M_PI);
        wv.kx = std::cos(ang) / lambda;
        wv.ky = std::sin(ang) / lambda;
        wv.amp = 0.35 * raw[static_cast<std::size_t>(i)] / total;
        for (int ch = 0; ch < 3; ++ch) wv.phase[static_cast<std::size_t>(ch)] = rng.uniform(0.0, 2.0 * M_PI);
        t.waves.push_back(wv);
    }
    return t;
}

inline double texture_at(const TextureSpec& t, int ch, double x, double y) {
    double v = 0.5;
    for (const Wave& wv : t.waves)
        v += wv.amp * std::sin(2.0 * M_PI * (wv.kx * x + wv.ky * y) + wv.phase[static_cast<std::size_t>(ch)]);
    return v;
}

struct Affine {
    double a = 1.0, b = 0.0, c = 0.0, d = 1.0;
    double tx = 0.0, ty = 0.0, cx = 0.0, cy = 0.0;

    std::array<double, 2> forward(double x, double y) const {
        double dx = x - cx, dy = y - cy;
        return {a * dx + b * dy + cx + tx, c * dx + d * dy + cy + ty};
    }
    std::array<double, 2> inverse(double X, double Y) const {
        double det = a * d - b * c;
        double dx = X - cx - tx, dy = Y - cy - ty;
        return {(d * dx - b * dy) / det + cx, (-c * dx + a * dy) / det + cy};
    }
};

inline Affine make_affine(const LayerSpec& l) {
    Affine m;
    m.a = l.scale * std::cos(l.rot);
    m.b = -l.scale * std::sin(l.rot);
    m.c = l.scale * std::sin(l.rot);
    m.d = l.scale * std::cos(l.rot);
    m.tx = l.tx;
    m.ty = l.ty;
    m.cx = l.cx;
    m.cy = l.cy;
    return m;
}

// Convex CCW polygon containment; empty polygon = full canvas.
inline bool poly_contains(const std::vector<std::array<double, 2>>& poly, double x, double y) {
    if (poly.empty()) return true;
    std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) {
        const auto& p0 = poly[i];
        const auto& p1 = poly[(i + 1) % n];
        double cross = (p1[0] - p0[0]) * (y - p0[1]) - (p1[1] - p0[1]) * (x - p0[0]);
        if (cross < 0.0) return false;
    }
    return true;
}

inline double poly_edge_distance(const std::vector<std::array<double, 2>>& poly, double x, double y) {
    if (poly.empty()) return std::numeric_limits<double>::infinity();
    double best = std::numeric_limits<double>::infinity();
    std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) {
        const auto& p0 = poly[i];
        const auto& p1 = poly[(i + 1) % n];
        double ex = p1[0] - p0[0], ey = p1[1] - p0[1];
        double len_sq = ex * ex + ey * ey;
        double t = len_sq > 0.0 ? ((x - p0[0]) * ex + (y - p0[1]) * ey) / len_sq : 0.0;
        t = std::min(1.0, std::max(0.0, t));
        double dx = x - (p0[0] + t * ex), dy = y - (p0[1] + t * ey);
        best = std::min(best, std::sqrt(dx * dx + dy * dy));
    }
    return best;
}

}  // namespace synth_detail

inline SyntheticSample generate(const SceneSpec& spec) {
    if (spec.layers.empty()) throw ConfigError("scene: at least one layer required");
    if (spec.height < 1 || spec.width < 1)
        throw ConfigError("scene: canvas extents must be positive");
    int H = spec.height, W = spec.width;
    std::size_t L = spec.layers.size();
    std::vector<synth_detail::TextureSpec> tex;
    std::vector<synth_detail::Affine> maps;
    std::vector<std::vector<std::array<double, 2>>> poly2(L);
    for (std::size_t l = 0; l < L; ++l) {
        tex.push_back(synth_detail::make_texture(spec.layers[l].texture_seed));
        maps.push_back(synth_detail::make_affine(spec.layers[l]));
        for (const auto& v : spec.layers[l].poly) poly2[l].push_back(maps[l].forward(v[0], v[1]));
    }

    SyntheticSample s;
    s.img1 = Tensor({3, H, W});
    s.img2 = Tensor({3, H, W});
    Tensor u({H, W}), v({H, W});
    s.valid = Tensor({H, W});
    s.occluded = Tensor::zeros({H, W});
    auto& d1 = s.img1.mutable_data();
    auto& d2 = s.img2.mutable_data();
    auto& du = u.mutable_data();
    auto& dv = v.mutable_data();
    auto& dva = s.valid.mutable_data();
    auto& doc = s.occluded.mutable_data();

    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            std::size_t n = static_cast<std::size_t>(y) * W + x;
            std::size_t l1 = 0;
            for (std::size_t l = L; l-- > 0;)
                if (synth_detail::poly_contains(spec.layers[l].poly, x, y)) {
                    l1 = l;
                    break;
                }
            for (int ch = 0; ch < 3; ++ch)
                d1[static_cast<std::size_t>(ch) * H * W + n] =
                    std::min(1.0, std::max(0.0, synth_detail::texture_at(tex[l1], ch, x, y)));
            auto target = maps[l1].forward(x, y);
            du[n] = target[0] - x;
            dv[n] = target[1] - y;
            bool full_canvas = spec.layers[l1].poly.empty();
            bool inside = target[0] >= 0.0 && target[0] <= W - 1.0 && target[1] >= 0.0 &&
                          target[1] <= H - 1.0;
            dva[n] = (full_canvas || inside) ? 1.0 : 0.0;
            bool occ = false;
            for (std::size_t l = l1 + 1; l < L && !occ; ++l) {
                if (synth_detail::poly_contains(poly2[l], target[0], target[1])) occ = true;
                else if (synth_detail::poly_edge_distance(poly2[l], target[0], target[1]) <
                         synth_detail::kEdgeBand)
                    occ = true;
            }
            if (!occ && !full_canvas) {
                if (synth_detail::poly_edge_distance(spec.layers[l1].poly, x, y) <
                        synth_detail::kEdgeBand ||
                    synth_detail::poly_edge_distance(poly2[l1], target[0], target[1]) <
                        synth_detail::kEdgeBand)
                    occ = true;
            }
            doc[n] = occ ? 1.0 : 0.0;
        }

    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            std::size_t n = static_cast<std::size_t>(y) * W + x;
            std::size_t l2 = 0;
            std::array<double, 2> src{double(x), double(y)};
            for (std::size_t l = L; l-- > 0;) {
                auto cand = maps[l].inverse(x, y);
                if (synth_detail::poly_contains(spec.layers[l].poly, cand[0], cand[1])) {
                    l2 = l;
                    src = cand;
                    break;
                }
            }
            for (int ch = 0; ch < 3; ++ch)
                d2[static_cast<std::size_t>(ch) * H * W + n] =
                    std::min(1.0, std::max(0.0, synth_detail::texture_at(tex[l2], ch, src[0], src[1])));
        }

    s.gt = FlowField(u, v);
    return s;
}

// Bilinear sample of one channel; coordinates must lie within the image.
inline double sample_channel(const Tensor& img, int ch, double y, double x) {
    int H = img.dim(1), W = img.dim(2);
    int x0 = std::min(static_cast<int>(std::floor(x)), W - 2);
    int y0 = std::min(static_cast<int>(std::floor(y)), H - 2);
    x0 = std::max(x0, 0);
    y0 = std::max(y0, 0);
    double fx = x - x0, fy = y - y0;
    auto at = [&](int yy, int xx) {
        return img[(static_cast<std::size_t>(ch) * H + yy) * W + xx];
    };
    return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
           fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
}

// Largest per-channel L1 difference between img1 and img2 warped back by the
// ground-truth flow, over supervised, non-occluded pixels whose target lies
// inside the second frame. Verifies the brightness-constancy invariant.
inline double brightness_constancy_error(const SyntheticSample& s) {
    int H = s.img1.dim(1), W = s.img1.dim(2);
    double worst = 0.0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            std::size_t n = static_cast<std::size_t>(y) * W + x;
            if (s.valid[n] < 0.5 || s.occluded[n] > 0.5) continue;
            double ty = y + s.gt.v[n], tx = x + s.gt.u[n];
            if (tx < 0.0 || tx > W - 1.0 || ty < 0.0 || ty > H - 1.0) continue;
            for (int ch = 0; ch < 3; ++ch) {
                double a = s.img1[(static_cast<std::size_t>(ch) * H + y) * W + x];
                double b = sample_channel(s.img2, ch, ty, tx);
                worst = std::max(worst, std::abs(a - b));
            }
        }
    return worst;
}

// Deterministic random scene: full-canvas background with gentle motion plus
// 1-3 convex polygon layers whose translation magnitudes are drawn from a
// three-band mixture so small, medium, and large displacements all occur.
inline SceneSpec random_scene(std::uint64_t seed, int height, int width) {
    Rng rng(seed * 0x9e3779b97f4a7c15ULL + 0x7f4a7c15ULL);
    SceneSpec spec;
    spec.height = height;
    spec.width = width;
    spec.seed = seed;

    double t_max = std::max(12.0, 0.5 * std::min(height, width));
    auto sample_translation = [&](double cap) {
        double pick = rng.uniform(0.0, 1.0);
        double mag;
        if (pick < 0.5) mag = rng.uniform(0.0, std::min(10.0, cap));
        else if (pick < 0.8) mag = rng.uniform(std::min(10.0, cap * 0.5), std::min(40.0, cap));
        else mag = rng.uniform(std::min(40.0, cap * 0.8), cap);
        double ang = rng.uniform(0.0, 2.0 * M_PI);
        return std::array<double, 2>{mag * std::cos(ang), mag * std::sin(ang)};
    };

    LayerSpec bg;
    bg.texture_seed = seed * 6364136223846793005ULL + 1442695040888963407ULL;
    double bg_mag = rng.uniform(0.0, 6.0);
    double bg_ang = rng.uniform(0.0, 2.0 * M_PI);
    bg.tx = bg_mag * std::cos(bg_ang);
    bg.ty = bg_mag * std::sin(bg_ang);
    bg.rot = rng.uniform(-0.05, 0.05);
    bg.scale = rng.uniform(0.97, 1.03);
    bg.cx = 0.5 * (width - 1);
    bg.cy = 0.5 * (height - 1);
    spec.layers.push_back(bg);

    int n_layers = rng.uniform_int(1, 3);
    for (int i = 0; i < n_layers; ++i) {
        LayerSpec l;
        l.texture_seed = bg.texture_seed ^ (0x9e3779b97f4a7c15ULL * std::uint64_t(i + 1));
        double cx = rng.uniform(0.15, 0.85) * width;
        double cy = rng.uniform(0.15, 0.85) * height;
        double rx = rng.uniform(0.12, 0.3) * std::min(height, width);
        double ry = rng.uniform(0.12, 0.3) * std::min(height, width);
        int nv = rng.uniform_int(3, 6);
        for (int vtx = 0; vtx < nv; ++vtx) {
            double ang = 2.0 * M_PI * (vtx + rng.uniform(0.0, 0.6)) / nv;
            l.poly.push_back({cx + rx * std::cos(ang), cy + ry * std::sin(ang)});
        }
        auto t = sample_translation(t_max);
        l.tx = t[0];
        l.ty = t[1];
        l.rot = rng.uniform(-0.15, 0.15);
        l.scale = rng.uniform(0.9, 1.1);
        l.cx = cx;
        l.cy = cy;
        spec.layers.push_back(l);
    }
    return spec;
}

// Deterministic full-canvas rigid-motion scene: one background layer moving by
// a translation of magnitude U(0, t_max) in a uniform direction, rotated by
// U(-rot_max, rot_max) radians and scaled by 1 + U(-zoom_max, zoom_max) about
// the canvas center. The flow field is smooth and spatially varying: small
// near the center, growing with radius, so displacement bins from slow to fast
// are all populated while neighboring pixels stay kinematically consistent.
inline SceneSpec global_affine_scene(std::uint64_t seed, int height, int width, double t_max,
                                     double rot_max, double zoom_max) {
    Rng rng(seed * 0x9e3779b97f4a7c15ULL + 0x2545F4914F6CDD1DULL);
    SceneSpec spec;
    spec.height = height;
    spec.width = width;
    spec.seed = seed;
    LayerSpec bg;
    bg.texture_seed = seed * 6364136223846793005ULL + 1442695040888963407ULL;
    double mag = rng.uniform(0.0, t_max);
    double ang = rng.uniform(0.0, 2.0 * M_PI);
    bg.tx = mag * std::cos(ang);
    bg.ty = mag * std::sin(ang);
    bg.rot = rot_max > 0 ? rng.uniform(-rot_max, rot_max) : 0.0;
    bg.scale = zoom_max > 0 ? 1.0 + rng.uniform(-zoom_max, zoom_max) : 1.0;
    bg.cx = 0.5 * (width - 1);
    bg.cy = 0.5 * (height - 1);
    spec.layers.push_back(bg);
    return spec;
}

}  // namespace gaussflow
