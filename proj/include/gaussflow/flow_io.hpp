#pragma once

// File formats: .flo flow fields (little-endian float32, "PIEH" magic), binary
// PPM/PGM images, and the standard direction-hue flow visualization.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaussflow/flow_net.hpp"
#include "gaussflow/tensor.hpp"

namespace gaussflow {

struct FlowIoError : std::runtime_error {
    explicit FlowIoError(const std::string& msg) : std::runtime_error("flow io: " + msg) {}
};

namespace io_detail {

constexpr float kFloMagic = 202021.25f;

inline void put_f32_le(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    out.push_back(static_cast<char>(bits & 0xff));
    out.push_back(static_cast<char>((bits >> 8) & 0xff));
    out.push_back(static_cast<char>((bits >> 16) & 0xff));
    out.push_back(static_cast<char>((bits >> 24) & 0xff));
}

inline void put_i32_le(std::string& out, std::int32_t v) {
    put_f32_le(out, 0.0f);  // reserve 4 bytes
    std::uint32_t bits = static_cast<std::uint32_t>(v);
    std::size_t base = out.size() - 4;
    out[base] = static_cast<char>(bits & 0xff);
    out[base + 1] = static_cast<char>((bits >> 8) & 0xff);
    out[base + 2] = static_cast<char>((bits >> 16) & 0xff);
    out[base + 3] = static_cast<char>((bits >> 24) & 0xff);
}

// Reads exactly n bytes or reports the byte offset where the file ran out.
inline void read_exact(std::istream& is, char* dst, std::size_t n, std::size_t& offset,
                       const std::string& what) {
    is.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n)
        throw FlowIoError("truncated while reading " + what + " at byte " +
                          std::to_string(offset + static_cast<std::size_t>(is.gcount())));
    offset += n;
}

inline float get_f32_le(std::istream& is, std::size_t& offset, const std::string& what) {
    unsigned char b[4];
    read_exact(is, reinterpret_cast<char*>(b), 4, offset, what);
    std::uint32_t bits = std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
                         (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

inline std::int32_t get_i32_le(std::istream& is, std::size_t& offset, const std::string& what) {
    unsigned char b[4];
    read_exact(is, reinterpret_cast<char*>(b), 4, offset, what);
    std::uint32_t bits = std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
                         (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
    return static_cast<std::int32_t>(bits);
}

}  // namespace io_detail

inline void write_flo(const std::string& path, const FlowField& f) {
    int h = f.height(), w = f.width();
    std::string buf;
    buf.reserve(12 + static_cast<std::size_t>(h) * w * 8);
    io_detail::put_f32_le(buf, io_detail::kFloMagic);
    io_detail::put_i32_le(buf, w);
    io_detail::put_i32_le(buf, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            std::size_t n = static_cast<std::size_t>(y) * w + x;
            io_detail::put_f32_le(buf, static_cast<float>(f.u[n]));
            io_detail::put_f32_le(buf, static_cast<float>(f.v[n]));
        }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FlowIoError("cannot open " + path + " for writing");
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!os) throw FlowIoError("write failed for " + path);
}

inline FlowField read_flo(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FlowIoError("cannot open " + path);
    std::size_t offset = 0;
    float magic = io_detail::get_f32_le(is, offset, "magic");
    if (magic != io_detail::kFloMagic)
        throw FlowIoError("bad magic " + std::to_string(magic) + " in " + path +
                          " (expected 202021.25)");
    std::int32_t w = io_detail::get_i32_le(is, offset, "width");
    std::int32_t h = io_detail::get_i32_le(is, offset, "height");
    if (w < 1 || h < 1 || w > 1000000 || h > 1000000)
        throw FlowIoError("implausible extents " + std::to_string(w) + "x" + std::to_string(h) +
                          " in " + path);
    Tensor u({h, w}), v({h, w});
    auto& du = u.mutable_data();
    auto& dv = v.mutable_data();
    for (std::int32_t y = 0; y < h; ++y)
        for (std::int32_t x = 0; x < w; ++x) {
            std::size_t n = static_cast<std::size_t>(y) * w + x;
            du[n] = io_detail::get_f32_le(is, offset, "u component");
            dv[n] = io_detail::get_f32_le(is, offset, "v component");
        }
    return FlowField(u, v);
}

// Clamps to [0, 1] and quantizes to bytes; img is [3 x h x w].
inline void write_ppm(const std::string& path, const Tensor& img) {
    if (img.rank() != 3 || img.dim(0) != 3)
        throw ShapeError("ppm: expected [3 x h x w], got " + shape_str(img.shape()));
    int h = img.dim(1), w = img.dim(2);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FlowIoError("cannot open " + path + " for writing");
    os << "P6\n" << w << " " << h << "\n255\n";
    std::string row;
    for (int y = 0; y < h; ++y) {
        row.clear();
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < 3; ++ch) {
                double val = img[(static_cast<std::size_t>(ch) * h + y) * w + x];
                val = std::min(1.0, std::max(0.0, val));
                row.push_back(static_cast<char>(std::lround(val * 255.0)));
            }
        os.write(row.data(), static_cast<std::streamsize>(row.size()));
    }
    if (!os) throw FlowIoError("write failed for " + path);
}

inline Tensor read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FlowIoError("cannot open " + path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    is >> magic >> w >> h >> maxval;
    if (magic != "P6") throw FlowIoError("bad ppm magic '" + magic + "' in " + path);
    if (w < 1 || h < 1 || maxval != 255)
        throw FlowIoError("unsupported ppm header in " + path);
    is.get();  // single whitespace byte after the header
    std::vector<char> raw(static_cast<std::size_t>(w) * h * 3);
    is.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(is.gcount()) != raw.size())
        throw FlowIoError("truncated pixel data in " + path);
    Tensor img({3, h, w});
    auto& d = img.mutable_data();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < 3; ++ch)
                d[(static_cast<std::size_t>(ch) * h + y) * w + x] =
                    static_cast<unsigned char>(raw[(static_cast<std::size_t>(y) * w + x) * 3 + ch]) /
                    255.0;
    return img;
}

// Grayscale P5 image of a value grid, scaled so the largest entry maps to 255.
inline void write_pgm(const std::string& path, const std::vector<double>& vals, int h, int w) {
    if (h < 1 || w < 1 || vals.size() != static_cast<std::size_t>(h) * w)
        throw ShapeError("pgm: value count " + std::to_string(vals.size()) + " does not match " +
                         std::to_string(h) + "x" + std::to_string(w));
    double peak = 0.0;
    for (double v : vals) peak = std::max(peak, v);
    double scale = peak > 0.0 ? 255.0 / peak : 0.0;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FlowIoError("cannot open " + path + " for writing");
    os << "P5\n" << w << " " << h << "\n255\n";
    std::string row;
    for (double v : vals)
        row.push_back(static_cast<char>(std::lround(std::min(255.0, std::max(0.0, v * scale)))));
    os.write(row.data(), static_cast<std::streamsize>(row.size()));
    if (!os) throw FlowIoError("write failed for " + path);
}

namespace io_detail {

// Piecewise-linear hue wheel: 55 colors over six arcs.
inline const std::vector<std::array<double, 3>>& color_wheel() {
    static const std::vector<std::array<double, 3>> wheel = [] {
        const int RY = 15, YG = 6, GC = 4, CB = 11, BM = 13, MR = 6;
        std::vector<std::array<double, 3>> cols;
        for (int i = 0; i < RY; ++i) cols.push_back({1.0, double(i) / RY, 0.0});
        for (int i = 0; i < YG; ++i) cols.push_back({1.0 - double(i) / YG, 1.0, 0.0});
        for (int i = 0; i < GC; ++i) cols.push_back({0.0, 1.0, double(i) / GC});
        for (int i = 0; i < CB; ++i) cols.push_back({0.0, 1.0 - double(i) / CB, 1.0});
        for (int i = 0; i < BM; ++i) cols.push_back({double(i) / BM, 0.0, 1.0});
        for (int i = 0; i < MR; ++i) cols.push_back({1.0, 0.0, 1.0 - double(i) / MR});
        return cols;
    }();
    return wheel;
}

}  // namespace io_detail

// Direction-as-hue rendering: magnitude is normalized by the field maximum so
// hues are scale-invariant, zero motion renders white, and negated flow lands
// on the opposite side of the wheel.
inline Tensor flow_to_color(const FlowField& f) {
    int h = f.height(), w = f.width();
    const auto& wheel = io_detail::color_wheel();
    int ncols = static_cast<int>(wheel.size());
    double max_rad = 0.0;
    for (std::size_t n = 0; n < f.u.numel(); ++n)
        max_rad = std::max(max_rad, std::sqrt(f.u[n] * f.u[n] + f.v[n] * f.v[n]));
    double denom = max_rad > 0.0 ? max_rad : 1.0;
    Tensor img({3, h, w});
    auto& d = img.mutable_data();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            std::size_t n = static_cast<std::size_t>(y) * w + x;
            double u = f.u[n] / denom, v = f.v[n] / denom;
            double rad = std::sqrt(u * u + v * v);
            double a = std::atan2(-v, -u) / M_PI;  // [-1, 1]
            double fk = (a + 1.0) / 2.0 * (ncols - 1);
            int k0 = static_cast<int>(std::floor(fk));
            int k1 = (k0 + 1) % ncols;
            double frac = fk - k0;
            for (int ch = 0; ch < 3; ++ch) {
                double col = (1.0 - frac) * wheel[static_cast<std::size_t>(k0)][static_cast<std::size_t>(ch)] +
                             frac * wheel[static_cast<std::size_t>(k1)][static_cast<std::size_t>(ch)];
                col = 1.0 - std::min(rad, 1.0) * (1.0 - col);
                d[(static_cast<std::size_t>(ch) * h + y) * w + x] = col;
            }
        }
    return img;
}

}  // namespace gaussflow
