#pragma once

// Dense double-precision tensors with reverse-mode automatic
// differentiation. Tensors are immutable once they enter a graph; backward
// walks the graph once in reverse topological order and accumulates (+=)
// into leaf gradients.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "gaussflow/rng.hpp"

namespace gaussflow {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<double> grad;  // lazily sized to data.size()
    std::vector<std::shared_ptr<TensorImpl>> parents;
    // Receives d(loss)/d(this) and accumulates into parents' grads. Never
    // captures its own impl (that would be a reference cycle).
    std::function<void(const std::vector<double>&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

// Disables graph construction in a scope (forward-only evaluation).
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape)
        : impl_(std::make_shared<detail::TensorImpl>()) {
        check_shape(shape);
        impl_->shape = std::move(shape);
        impl_->data.assign(shape_numel(impl_->shape), 0.0);
    }

    Tensor(Shape shape, std::vector<double> data)
        : impl_(std::make_shared<detail::TensorImpl>()) {
        check_shape(shape);
        if (shape_numel(shape) != data.size())
            throw ShapeError("tensor data size " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        impl_->shape = std::move(shape);
        impl_->data = std::move(data);
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, double v) {
        Tensor t(std::move(shape));
        std::fill(t.impl_->data.begin(), t.impl_->data.end(), v);
        return t;
    }

    static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
        Tensor t(std::move(shape));
        for (double& x : t.impl_->data) x = rng.uniform(lo, hi);
        return t;
    }

    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0) {
        Tensor t(std::move(shape));
        for (double& x : t.impl_->data) x = stddev * rng.normal();
        return t;
    }

    // Leaf parameter with deterministic per-name init (normal, given stddev).
    static Tensor param(Shape shape, const std::string& name, std::uint64_t seed,
                        double stddev) {
        Rng rng(param_seed(seed, name));
        Tensor t = stddev == 0.0 ? zeros(std::move(shape)) : randn(std::move(shape), rng, stddev);
        t.impl_->requires_grad = true;
        return t;
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
    std::size_t numel() const { return impl_->data.size(); }

    const std::vector<double>& data() const { return impl_->data; }
    std::vector<double>& mutable_data() { return impl_->data; }
    double operator[](std::size_t i) const { return impl_->data[i]; }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool b) {
        if (b && !impl_->is_leaf)
            throw std::logic_error("requires_grad can only be toggled on leaves");
        impl_->requires_grad = b;
        return *this;
    }
    bool is_leaf() const { return impl_->is_leaf; }

    const std::vector<double>& grad() const {
        impl_->ensure_grad();
        return impl_->grad;
    }
    std::vector<double>& mutable_grad() {
        impl_->ensure_grad();
        return impl_->grad;
    }
    void zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }

    // Leaf copy sharing no graph history.
    Tensor detach() const {
        Tensor t(impl_->shape, impl_->data);
        return t;
    }

    void backward() const {
        if (numel() != 1)
            throw std::logic_error("backward() without seed requires a scalar; shape is " +
                                   shape_str(impl_->shape));
        backward(ones(impl_->shape));
    }

    void backward(const Tensor& seed) const {
        if (seed.shape() != impl_->shape)
            throw ShapeError("backward seed shape " + shape_str(seed.shape()) +
                             " does not match output shape " + shape_str(impl_->shape));
        std::vector<detail::TensorImpl*> order;
        topo_sort(order);
        impl_->ensure_grad();
        for (std::size_t i = 0; i < seed.numel(); ++i) impl_->grad[i] += seed[i];
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            detail::TensorImpl* node = *it;
            if (node->backward_fn) {
                node->ensure_grad();
                node->backward_fn(node->grad);
            }
        }
    }

    // --- graph construction (used by the op layer) ---

    static Tensor make_result(Shape shape, std::vector<double> data,
                              std::vector<Tensor> inputs,
                              std::function<void(const std::vector<double>&)> backward_fn) {
        Tensor out(std::move(shape), std::move(data));
        bool need = detail::grad_mode() &&
                    std::any_of(inputs.begin(), inputs.end(),
                                [](const Tensor& t) { return t.requires_grad(); });
        if (need) {
            out.impl_->requires_grad = true;
            out.impl_->is_leaf = false;
            out.impl_->parents.reserve(inputs.size());
            for (const Tensor& t : inputs) out.impl_->parents.push_back(t.impl_);
            out.impl_->backward_fn = std::move(backward_fn);
        }
        return out;
    }

    std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

    // Accumulates v into this tensor's grad buffer (op backward helpers).
    void accum_grad(std::size_t i, double v) const {
        impl_->ensure_grad();
        impl_->grad[i] += v;
    }
    std::vector<double>& grad_buffer() const {
        impl_->ensure_grad();
        return impl_->grad;
    }

private:
    static void check_shape(const Shape& s) {
        for (int d : s)
            if (d <= 0) throw ShapeError("non-positive extent in shape " + shape_str(s));
    }

    void topo_sort(std::vector<detail::TensorImpl*>& order) const {
        // Iterative post-order DFS; each node appears once.
        std::unordered_set<detail::TensorImpl*> seen;
        struct Frame {
            detail::TensorImpl* node;
            std::size_t next_child;
        };
        std::vector<Frame> stack;
        if (!impl_->requires_grad) return;
        stack.push_back({impl_.get(), 0});
        seen.insert(impl_.get());
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next_child < f.node->parents.size()) {
                detail::TensorImpl* child = f.node->parents[f.next_child++].get();
                if (child->requires_grad && seen.insert(child).second)
                    stack.push_back({child, 0});
            } else {
                order.push_back(f.node);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<detail::TensorImpl> impl_;
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

// ---- elementwise arithmetic ----

inline Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b},
                               [a, b](const std::vector<double>& g) {
                                   if (a.requires_grad()) {
                                       auto& ga = a.grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                                   }
                                   if (b.requires_grad()) {
                                       auto& gb = b.grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                                   }
                               });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b},
                               [a, b](const std::vector<double>& g) {
                                   if (a.requires_grad()) {
                                       auto& ga = a.grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                                   }
                                   if (b.requires_grad()) {
                                       auto& gb = b.grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                                   }
                               });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b},
                               [a, b](const std::vector<double>& g) {
                                   if (a.requires_grad()) {
                                       auto& ga = a.grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
                                   }
                                   if (b.requires_grad()) {
                                       auto& gb = b.grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
                                   }
                               });
}

inline Tensor add_scalar(const Tensor& a, double s) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + s;
    return Tensor::make_result(a.shape(), std::move(out), {a},
                               [a](const std::vector<double>& g) {
                                   if (!a.requires_grad()) return;
                                   auto& ga = a.grad_buffer();
                                   for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                               });
}

inline Tensor mul_scalar(const Tensor& a, double s) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
    return Tensor::make_result(a.shape(), std::move(out), {a},
                               [a, s](const std::vector<double>& g) {
                                   if (!a.requires_grad()) return;
                                   auto& ga = a.grad_buffer();
                                   for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
                               });
}

// x * s where s is a learnable scalar tensor of shape [1].
inline Tensor scale_by(const Tensor& x, const Tensor& s) {
    if (s.numel() != 1) throw ShapeError("scale_by: scale must have a single element");
    double sv = s[0];
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * sv;
    return Tensor::make_result(x.shape(), std::move(out), {x, s},
                               [x, s, sv](const std::vector<double>& g) {
                                   if (x.requires_grad()) {
                                       auto& gx = x.grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * sv;
                                   }
                                   if (s.requires_grad()) {
                                       double acc = 0.0;
                                       for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * x[i];
                                       s.accum_grad(0, acc);
                                   }
                               });
}

inline Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// ---- reductions ----

inline Tensor sum_all(const Tensor& a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) acc += a[i];
    return Tensor::make_result({1}, {acc}, {a},
                               [a](const std::vector<double>& g) {
                                   if (!a.requires_grad()) return;
                                   auto& ga = a.grad_buffer();
                                   for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
                               });
}

inline Tensor mean_all(const Tensor& a) {
    return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

// ---- shape manipulation ----

inline Tensor reshape(const Tensor& a, Shape new_shape) {
    if (shape_numel(new_shape) != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(new_shape));
    return Tensor::make_result(std::move(new_shape), a.data(), {a},
                               [a](const std::vector<double>& g) {
                                   if (!a.requires_grad()) return;
                                   auto& ga = a.grad_buffer();
                                   for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                               });
}

inline Tensor transpose2d(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose2d expects rank 2, got " + shape_str(a.shape()));
    int m = a.dim(0), n = a.dim(1);
    std::vector<double> out(a.numel());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<std::size_t>(j) * m + i] = a[static_cast<std::size_t>(i) * n + j];
    return Tensor::make_result({n, m}, std::move(out), {a},
                               [a, m, n](const std::vector<double>& g) {
                                   if (!a.requires_grad()) return;
                                   auto& ga = a.grad_buffer();
                                   for (int i = 0; i < m; ++i)
                                       for (int j = 0; j < n; ++j)
                                           ga[static_cast<std::size_t>(i) * n + j] +=
                                               g[static_cast<std::size_t>(j) * m + i];
                               });
}

// Slice of length `len` starting at `start` along `axis`.
inline Tensor narrow(const Tensor& a, int axis, int start, int len) {
    if (axis < 0 || axis >= a.rank())
        throw ShapeError("narrow: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(a.shape()));
    if (start < 0 || len <= 0 || start + len > a.dim(axis))
        throw ShapeError("narrow: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") exceeds extent " +
                         std::to_string(a.dim(axis)));
    Shape out_shape = a.shape();
    out_shape[static_cast<std::size_t>(axis)] = len;
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(a.dim(i));
    for (int i = axis + 1; i < a.rank(); ++i) inner *= static_cast<std::size_t>(a.dim(i));
    std::size_t ax = static_cast<std::size_t>(a.dim(axis));
    std::vector<double> out(shape_numel(out_shape));
    const auto& src = a.data();
    for (std::size_t o = 0; o < outer; ++o)
        for (int j = 0; j < len; ++j) {
            const double* s = src.data() + (o * ax + static_cast<std::size_t>(start + j)) * inner;
            double* d = out.data() + (o * static_cast<std::size_t>(len) + static_cast<std::size_t>(j)) * inner;
            std::copy(s, s + inner, d);
        }
    return Tensor::make_result(
        std::move(out_shape), std::move(out), {a},
        [a, axis, start, len, outer, inner, ax](const std::vector<double>& g) {
            if (!a.requires_grad()) return;
            auto& ga = a.grad_buffer();
            for (std::size_t o = 0; o < outer; ++o)
                for (int j = 0; j < len; ++j) {
                    const double* s =
                        g.data() + (o * static_cast<std::size_t>(len) + static_cast<std::size_t>(j)) * inner;
                    double* d = ga.data() + (o * ax + static_cast<std::size_t>(start + j)) * inner;
                    for (std::size_t i = 0; i < inner; ++i) d[i] += s[i];
                }
        });
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    int rank = static_cast<int>(s0.size());
    if (axis < 0 || axis >= rank) throw ShapeError("concat: bad axis");
    int total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != rank) throw ShapeError("concat: rank mismatch");
        for (int i = 0; i < rank; ++i)
            if (i != axis && p.dim(i) != s0[static_cast<std::size_t>(i)])
                throw ShapeError("concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                                 shape_str(s0));
        total += p.dim(axis);
    }
    Shape out_shape = s0;
    out_shape[static_cast<std::size_t>(axis)] = total;
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(s0[static_cast<std::size_t>(i)]);
    for (int i = axis + 1; i < rank; ++i) inner *= static_cast<std::size_t>(s0[static_cast<std::size_t>(i)]);
    std::vector<double> out(shape_numel(out_shape));
    std::size_t tot = static_cast<std::size_t>(total);
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        std::size_t ax = static_cast<std::size_t>(p.dim(axis));
        const auto& src = p.data();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy(src.data() + o * ax * inner, src.data() + (o + 1) * ax * inner,
                      out.data() + (o * tot + off) * inner);
        off += ax;
    }
    return Tensor::make_result(
        std::move(out_shape), std::move(out), parts,
        [parts, outer, inner, tot](const std::vector<double>& g) {
            std::size_t offset = 0;
            for (const Tensor& p : parts) {
                std::size_t ax = p.numel() / (outer * inner);
                if (p.requires_grad()) {
                    auto& gp = p.grad_buffer();
                    for (std::size_t o = 0; o < outer; ++o) {
                        const double* s = g.data() + (o * tot + offset) * inner;
                        double* d = gp.data() + o * ax * inner;
                        for (std::size_t i = 0; i < ax * inner; ++i) d[i] += s[i];
                    }
                }
                offset += ax;
            }
        });
}

// ---- matrix product ----

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    int m = a.dim(0), p = a.dim(1), n = b.dim(1);
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    const auto& A = a.data();
    const auto& B = b.data();
    for (int i = 0; i < m; ++i)
        for (int k = 0; k < p; ++k) {
            double av = A[static_cast<std::size_t>(i) * p + k];
            const double* brow = B.data() + static_cast<std::size_t>(k) * n;
            double* orow = out.data() + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    return Tensor::make_result(
        {m, n}, std::move(out), {a, b},
        [a, b, m, p, n](const std::vector<double>& g) {
            const auto& A = a.data();
            const auto& B = b.data();
            if (a.requires_grad()) {
                auto& ga = a.grad_buffer();  // dA = dC * B^T
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) {
                        double gv = g[static_cast<std::size_t>(i) * n + j];
                        const double* brow = B.data() + 0 + static_cast<std::size_t>(j);
                        double* garow = ga.data() + static_cast<std::size_t>(i) * p;
                        for (int k = 0; k < p; ++k)
                            garow[k] += gv * brow[static_cast<std::size_t>(k) * n];
                    }
            }
            if (b.requires_grad()) {
                auto& gb = b.grad_buffer();  // dB = A^T * dC
                for (int k = 0; k < p; ++k)
                    for (int i = 0; i < m; ++i) {
                        double av = A[static_cast<std::size_t>(i) * p + k];
                        const double* grow = g.data() + static_cast<std::size_t>(i) * n;
                        double* gbrow = gb.data() + static_cast<std::size_t>(k) * n;
                        for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                    }
            }
        });
}

}  // namespace gaussflow
