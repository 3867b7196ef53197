#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "streamnas/errors.hpp"

namespace streamnas {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream oss;
    oss << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) oss << (i ? "," : "") << shape[i];
    oss << "]";
    return oss.str();
}

namespace detail {
/// Gradient recording is disabled inside sampling and evaluation paths.
inline thread_local bool grad_enabled = true;
}  // namespace detail

/// RAII guard that turns off graph recording on the current thread.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
    ~NoGradGuard() { detail::grad_enabled = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

struct TensorImpl;
using TensorImplPtr = std::shared_ptr<TensorImpl>;

/// One node of the reverse-mode graph: the producing operation's name,
/// parent references and a closure that pushes this node's gradient into
/// the parents' gradient buffers.
struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;

    const char* op = "leaf";
    std::vector<TensorImplPtr> parents;
    std::function<void(const TensorImpl&)> backward_fn;

    std::size_t numel() const { return data.size(); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

/// Dense 64-bit float array with optional gradient, value-semantics handle.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false)
        : impl_(std::make_shared<TensorImpl>()) {
        impl_->shape = std::move(shape);
        impl_->data.assign(shape_numel(impl_->shape), fill);
        impl_->requires_grad = requires_grad;
        if (requires_grad) impl_->ensure_grad();
    }

    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
        : impl_(std::make_shared<TensorImpl>()) {
        if (shape_numel(shape) != values.size())
            throw ShapeError("tensor init: shape " + shape_str(shape) + " needs " +
                             std::to_string(shape_numel(shape)) + " values, got " +
                             std::to_string(values.size()));
        impl_->shape = std::move(shape);
        impl_->data = std::move(values);
        impl_->requires_grad = requires_grad;
        if (requires_grad) impl_->ensure_grad();
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return Tensor(Shape{1}, std::vector<double>{value}, requires_grad);
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t numel() const { return impl_->numel(); }
    std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
    std::size_t rank() const { return impl_->shape.size(); }

    std::vector<double>& data() { return impl_->data; }
    const std::vector<double>& data() const { return impl_->data; }
    std::vector<double>& grad() { return impl_->grad; }
    const std::vector<double>& grad() const { return impl_->grad; }

    double value() const {
        if (numel() != 1) throw ContractError("value(): tensor is not scalar, shape " + shape_str(shape()));
        return impl_->data[0];
    }

    double at(std::size_t i) const { return impl_->data[i]; }
    double at(std::size_t r, std::size_t c) const { return impl_->data[r * impl_->shape[1] + c]; }
    double& at(std::size_t i) { return impl_->data[i]; }
    double& at(std::size_t r, std::size_t c) { return impl_->data[r * impl_->shape[1] + c]; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) {
        impl_->requires_grad = v;
        if (v) impl_->ensure_grad();
    }

    void zero_grad() {
        if (impl_->requires_grad) impl_->grad.assign(impl_->data.size(), 0.0);
    }

    TensorImplPtr impl() const { return impl_; }

    /// Reverse-mode differentiation from a scalar. Visits every reachable
    /// node exactly once in reverse topological order; gradients accumulate
    /// across repeated calls until zeroed.
    void backward() const;

private:
    TensorImplPtr impl_;
};

inline void Tensor::backward() const {
    if (!defined() || numel() != 1)
        throw ContractError("backward(): loss must be a defined scalar tensor");

    // Iterative post-order DFS over parents.
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> visited;
    struct Frame {
        TensorImpl* node;
        std::size_t next_parent;
    };
    std::vector<Frame> stack;
    if (!visited.count(impl_.get())) {
        stack.push_back({impl_.get(), 0});
        visited.insert(impl_.get());
    }
    while (!stack.empty()) {
        Frame& top = stack.back();
        if (top.next_parent < top.node->parents.size()) {
            TensorImpl* parent = top.node->parents[top.next_parent++].get();
            if (!visited.count(parent)) {
                visited.insert(parent);
                stack.push_back({parent, 0});
            }
        } else {
            order.push_back(top.node);
            stack.pop_back();
        }
    }

    for (TensorImpl* node : order)
        if (node->requires_grad || node->backward_fn) node->ensure_grad();
    impl_->grad[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* node = *it;
        if (node->backward_fn) node->backward_fn(*node);
    }
}

namespace detail {

/// Build a result tensor and register the graph node when any input needs it.
inline Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                          std::vector<Tensor> inputs,
                          std::function<void(const TensorImpl&)> backward_fn) {
    Tensor out(std::move(shape), std::move(values));
    bool needs_graph = false;
    if (grad_enabled) {
        for (const Tensor& input : inputs)
            if (input.impl()->requires_grad || input.impl()->backward_fn) needs_graph = true;
    }
    if (needs_graph) {
        TensorImpl* impl = out.impl().get();
        impl->op = op;
        impl->parents.reserve(inputs.size());
        for (const Tensor& input : inputs) impl->parents.push_back(input.impl());
        impl->backward_fn = std::move(backward_fn);
        for (const Tensor& input : inputs) input.impl()->ensure_grad();
    }
    return out;
}

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic. Broadcasting is limited to what the child networks
// and controllers need: equal shapes, a scalar against anything, a length-m
// vector against the rows of an [n,m] matrix, and an [n,1] column against
// an [n,m] matrix.
// ---------------------------------------------------------------------------

namespace detail {

enum class Broadcast { Same, ScalarRight, RowRight, ColRight };

inline Broadcast classify_broadcast(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape()) return Broadcast::Same;
    if (b.numel() == 1) return Broadcast::ScalarRight;
    if (a.rank() == 2 && b.rank() == 1 && b.dim(0) == a.dim(1)) return Broadcast::RowRight;
    if (a.rank() == 2 && b.rank() == 2 && b.dim(0) == a.dim(0) && b.dim(1) == 1)
        return Broadcast::ColRight;
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

inline std::size_t broadcast_index(Broadcast mode, std::size_t i, std::size_t cols) {
    switch (mode) {
        case Broadcast::Same: return i;
        case Broadcast::ScalarRight: return 0;
        case Broadcast::RowRight: return i % cols;
        case Broadcast::ColRight: return i / cols;
    }
    return 0;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    const auto mode = detail::classify_broadcast("add", a, b);
    const std::size_t cols = a.rank() == 2 ? a.dim(1) : 1;
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.at(i) + b.at(detail::broadcast_index(mode, i, cols));
    return detail::make_result(
        "add", a.shape(), std::move(out), {a, b}, [mode, cols](const TensorImpl& node) {
            auto& ga = node.parents[0]->grad;
            auto& gb = node.parents[1]->grad;
            for (std::size_t i = 0; i < node.grad.size(); ++i) {
                ga[i] += node.grad[i];
                gb[detail::broadcast_index(mode, i, cols)] += node.grad[i];
            }
        });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    const auto mode = detail::classify_broadcast("sub", a, b);
    const std::size_t cols = a.rank() == 2 ? a.dim(1) : 1;
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.at(i) - b.at(detail::broadcast_index(mode, i, cols));
    return detail::make_result(
        "sub", a.shape(), std::move(out), {a, b}, [mode, cols](const TensorImpl& node) {
            auto& ga = node.parents[0]->grad;
            auto& gb = node.parents[1]->grad;
            for (std::size_t i = 0; i < node.grad.size(); ++i) {
                ga[i] += node.grad[i];
                gb[detail::broadcast_index(mode, i, cols)] -= node.grad[i];
            }
        });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    const auto mode = detail::classify_broadcast("mul", a, b);
    const std::size_t cols = a.rank() == 2 ? a.dim(1) : 1;
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.at(i) * b.at(detail::broadcast_index(mode, i, cols));
    return detail::make_result(
        "mul", a.shape(), std::move(out), {a, b}, [mode, cols](const TensorImpl& node) {
            const auto& da = node.parents[0]->data;
            const auto& db = node.parents[1]->data;
            auto& ga = node.parents[0]->grad;
            auto& gb = node.parents[1]->grad;
            for (std::size_t i = 0; i < node.grad.size(); ++i) {
                const std::size_t j = detail::broadcast_index(mode, i, cols);
                ga[i] += node.grad[i] * db[j];
                gb[j] += node.grad[i] * da[i];
            }
        });
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * c;
    return detail::make_result("scale", a.shape(), std::move(out), {a},
                               [c](const TensorImpl& node) {
                                   auto& ga = node.parents[0]->grad;
                                   for (std::size_t i = 0; i < node.grad.size(); ++i)
                                       ga[i] += node.grad[i] * c;
                               });
}

inline Tensor add_scalar(const Tensor& a, double c) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + c;
    return detail::make_result("add_scalar", a.shape(), std::move(out), {a},
                               [](const TensorImpl& node) {
                                   auto& ga = node.parents[0]->grad;
                                   for (std::size_t i = 0; i < node.grad.size(); ++i)
                                       ga[i] += node.grad[i];
                               });
}

/// Elementwise minimum; ties route the gradient to the first operand.
inline Tensor minimum(const Tensor& a, const Tensor& b) {
    const auto mode = detail::classify_broadcast("min", a, b);
    const std::size_t cols = a.rank() == 2 ? a.dim(1) : 1;
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::min(a.at(i), b.at(detail::broadcast_index(mode, i, cols)));
    return detail::make_result(
        "min", a.shape(), std::move(out), {a, b}, [mode, cols](const TensorImpl& node) {
            const auto& da = node.parents[0]->data;
            const auto& db = node.parents[1]->data;
            auto& ga = node.parents[0]->grad;
            auto& gb = node.parents[1]->grad;
            for (std::size_t i = 0; i < node.grad.size(); ++i) {
                const std::size_t j = detail::broadcast_index(mode, i, cols);
                if (da[i] <= db[j])
                    ga[i] += node.grad[i];
                else
                    gb[j] += node.grad[i];
            }
        });
}

/// Clamp into [lo, hi]; zero gradient outside the interval.
inline Tensor clip(const Tensor& a, double lo, double hi) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(a.at(i), lo, hi);
    return detail::make_result("clip", a.shape(), std::move(out), {a},
                               [lo, hi](const TensorImpl& node) {
                                   const auto& da = node.parents[0]->data;
                                   auto& ga = node.parents[0]->grad;
                                   for (std::size_t i = 0; i < node.grad.size(); ++i)
                                       if (da[i] > lo && da[i] < hi) ga[i] += node.grad[i];
                               });
}

// ---------------------------------------------------------------------------
// Unary elementwise functions.
// ---------------------------------------------------------------------------

inline Tensor relu(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) > 0.0 ? a.at(i) : 0.0;
    return detail::make_result("relu", a.shape(), std::move(out), {a},
                               [](const TensorImpl& node) {
                                   const auto& da = node.parents[0]->data;
                                   auto& ga = node.parents[0]->grad;
                                   for (std::size_t i = 0; i < node.grad.size(); ++i)
                                       if (da[i] > 0.0) ga[i] += node.grad[i];
                               });
}

inline Tensor tanh_op(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.at(i));
    return detail::make_result("tanh", a.shape(), std::move(out), {a},
                               [](const TensorImpl& node) {
                                   auto& ga = node.parents[0]->grad;
                                   for (std::size_t i = 0; i < node.grad.size(); ++i)
                                       ga[i] += node.grad[i] * (1.0 - node.data[i] * node.data[i]);
                               });
}

inline Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-a.at(i)));
    return detail::make_result("sigmoid", a.shape(), std::move(out), {a},
                               [](const TensorImpl& node) {
                                   auto& ga = node.parents[0]->grad;
                                   for (std::size_t i = 0; i < node.grad.size(); ++i)
                                       ga[i] += node.grad[i] * node.data[i] * (1.0 - node.data[i]);
                               });
}

inline Tensor log_op(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(a.at(i));
    return detail::make_result("log", a.shape(), std::move(out), {a},
                               [](const TensorImpl& node) {
                                   const auto& da = node.parents[0]->data;
                                   auto& ga = node.parents[0]->grad;
                                   for (std::size_t i = 0; i < node.grad.size(); ++i)
                                       ga[i] += node.grad[i] / da[i];
                               });
}

inline Tensor exp_op(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.at(i));
    return detail::make_result("exp", a.shape(), std::move(out), {a},
                               [](const TensorImpl& node) {
                                   auto& ga = node.parents[0]->grad;
                                   for (std::size_t i = 0; i < node.grad.size(); ++i)
                                       ga[i] += node.grad[i] * node.data[i];
                               });
}

// ---------------------------------------------------------------------------
// Matrix product, reductions, softmax.
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const std::size_t n = a.dim(0), m = a.dim(1), p = b.dim(1);
    std::vector<double> out(n * p, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < m; ++k) {
            const double av = a.at(i, k);
            if (av == 0.0) continue;
            const double* brow = b.data().data() + k * p;
            double* orow = out.data() + i * p;
            for (std::size_t j = 0; j < p; ++j) orow[j] += av * brow[j];
        }
    return detail::make_result(
        "matmul", Shape{n, p}, std::move(out), {a, b}, [n, m, p](const TensorImpl& node) {
            const auto& da = node.parents[0]->data;
            const auto& db = node.parents[1]->data;
            auto& ga = node.parents[0]->grad;
            auto& gb = node.parents[1]->grad;
            // dA = dOut * B^T ; dB = A^T * dOut
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < p; ++j) {
                    const double g = node.grad[i * p + j];
                    if (g == 0.0) continue;
                    for (std::size_t k = 0; k < m; ++k) {
                        ga[i * m + k] += g * db[k * p + j];
                        gb[k * p + j] += g * da[i * m + k];
                    }
                }
        });
}

inline Tensor sum_all(const Tensor& a) {
    double total = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) total += a.at(i);
    return detail::make_result("sum", Shape{1}, {total}, {a}, [](const TensorImpl& node) {
        auto& ga = node.parents[0]->grad;
        for (double& g : ga) g += node.grad[0];
    });
}

inline Tensor mean_all(const Tensor& a) {
    const double inv = 1.0 / static_cast<double>(a.numel());
    double total = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) total += a.at(i);
    return detail::make_result("mean", Shape{1}, {total * inv}, {a},
                               [inv](const TensorImpl& node) {
                                   auto& ga = node.parents[0]->grad;
                                   for (double& g : ga) g += node.grad[0] * inv;
                               });
}

/// Softmax along the last axis of a 1-D or 2-D tensor.
inline Tensor softmax(const Tensor& a, int axis = -1) {
    if (a.rank() > 2) throw AxisError("softmax: rank > 2 not supported");
    const int last = static_cast<int>(a.rank()) - 1;
    if (axis != -1 && axis != last)
        throw AxisError("softmax: invalid axis " + std::to_string(axis) + " for shape " +
                        shape_str(a.shape()));
    const std::size_t cols = a.rank() == 2 ? a.dim(1) : a.dim(0);
    const std::size_t rows = a.numel() / cols;
    std::vector<double> out(a.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = a.data().data() + r * cols;
        double* o = out.data() + r * cols;
        double mx = in[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < cols; ++j) denom += (o[j] = std::exp(in[j] - mx));
        for (std::size_t j = 0; j < cols; ++j) o[j] /= denom;
    }
    return detail::make_result(
        "softmax", a.shape(), std::move(out), {a}, [rows, cols](const TensorImpl& node) {
            auto& ga = node.parents[0]->grad;
            for (std::size_t r = 0; r < rows; ++r) {
                const double* y = node.data.data() + r * cols;
                const double* gy = node.grad.data() + r * cols;
                double dot = 0.0;
                for (std::size_t j = 0; j < cols; ++j) dot += y[j] * gy[j];
                for (std::size_t j = 0; j < cols; ++j) ga[r * cols + j] += y[j] * (gy[j] - dot);
            }
        });
}

// ---------------------------------------------------------------------------
// Structure ops: concat, slice, gather/scatter, embedding lookup.
// ---------------------------------------------------------------------------

inline Tensor concat(const std::vector<Tensor>& parts, int axis = 0) {
    if (parts.empty()) throw ContractError("concat: no inputs");
    const std::size_t rank = parts[0].rank();
    if (axis < 0 || static_cast<std::size_t>(axis) >= rank)
        throw AxisError("concat: invalid axis " + std::to_string(axis) + " for rank " +
                        std::to_string(rank));
    if (rank > 2) throw AxisError("concat: rank > 2 not supported");

    Shape out_shape = parts[0].shape();
    for (std::size_t p = 1; p < parts.size(); ++p) {
        const Shape& s = parts[p].shape();
        if (s.size() != rank)
            throw ShapeError("concat: rank mismatch " + shape_str(out_shape) + " vs " + shape_str(s));
        for (std::size_t d = 0; d < rank; ++d)
            if (d != static_cast<std::size_t>(axis) && s[d] != out_shape[d])
                throw ShapeError("concat: shape mismatch " + shape_str(parts[0].shape()) + " vs " +
                                 shape_str(s));
        out_shape[axis] += s[axis];
    }

    std::vector<double> out(shape_numel(out_shape));
    std::vector<std::size_t> offsets(parts.size());
    if (rank == 1 || axis == 0) {
        std::size_t pos = 0;
        for (std::size_t p = 0; p < parts.size(); ++p) {
            offsets[p] = pos;
            std::copy(parts[p].data().begin(), parts[p].data().end(), out.begin() + pos);
            pos += parts[p].numel();
        }
    } else {  // axis == 1, rank 2
        const std::size_t rows = out_shape[0], out_cols = out_shape[1];
        std::size_t col = 0;
        for (std::size_t p = 0; p < parts.size(); ++p) {
            offsets[p] = col;
            const std::size_t cols = parts[p].dim(1);
            for (std::size_t r = 0; r < rows; ++r)
                std::copy(parts[p].data().begin() + r * cols, parts[p].data().begin() + (r + 1) * cols,
                          out.begin() + r * out_cols + col);
            col += cols;
        }
    }

    std::vector<Shape> part_shapes;
    for (const Tensor& t : parts) part_shapes.push_back(t.shape());
    return detail::make_result(
        "concat", out_shape, std::move(out), parts,
        [axis, rank, out_shape, part_shapes, offsets](const TensorImpl& node) {
            if (rank == 1 || axis == 0) {
                for (std::size_t p = 0; p < node.parents.size(); ++p) {
                    auto& gp = node.parents[p]->grad;
                    const std::size_t off = offsets[p];
                    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += node.grad[off + i];
                }
            } else {
                const std::size_t rows = out_shape[0], out_cols = out_shape[1];
                for (std::size_t p = 0; p < node.parents.size(); ++p) {
                    auto& gp = node.parents[p]->grad;
                    const std::size_t cols = part_shapes[p][1], off = offsets[p];
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < cols; ++c)
                            gp[r * cols + c] += node.grad[r * out_cols + off + c];
                }
            }
        });
}

/// Columns [start, start+len) of a 2-D tensor.
inline Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t len) {
    if (a.rank() != 2 || start + len > a.dim(1))
        throw ShapeError("slice_cols: [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") out of range for " + shape_str(a.shape()));
    const std::size_t rows = a.dim(0), cols = a.dim(1);
    std::vector<double> out(rows * len);
    for (std::size_t r = 0; r < rows; ++r)
        std::copy(a.data().begin() + r * cols + start, a.data().begin() + r * cols + start + len,
                  out.begin() + r * len);
    return detail::make_result("slice_cols", Shape{rows, len}, std::move(out), {a},
                               [rows, cols, start, len](const TensorImpl& node) {
                                   auto& ga = node.parents[0]->grad;
                                   for (std::size_t r = 0; r < rows; ++r)
                                       for (std::size_t c = 0; c < len; ++c)
                                           ga[r * cols + start + c] += node.grad[r * len + c];
                               });
}

/// Rows of a 2-D tensor selected by index (may repeat).
inline Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& indices) {
    if (a.rank() != 2) throw ShapeError("gather: expected a 2-D tensor, got " + shape_str(a.shape()));
    const std::size_t cols = a.dim(1);
    for (std::size_t idx : indices)
        if (idx >= a.dim(0))
            throw ContractError("gather: row index " + std::to_string(idx) + " out of range " +
                                std::to_string(a.dim(0)));
    std::vector<double> out(indices.size() * cols);
    for (std::size_t r = 0; r < indices.size(); ++r)
        std::copy(a.data().begin() + indices[r] * cols, a.data().begin() + (indices[r] + 1) * cols,
                  out.begin() + r * cols);
    return detail::make_result("gather", Shape{indices.size(), cols}, std::move(out), {a},
                               [indices, cols](const TensorImpl& node) {
                                   auto& ga = node.parents[0]->grad;
                                   for (std::size_t r = 0; r < indices.size(); ++r)
                                       for (std::size_t c = 0; c < cols; ++c)
                                           ga[indices[r] * cols + c] += node.grad[r * cols + c];
                               });
}

/// Sum rows of a 2-D tensor into `num_targets` output rows by index.
inline Tensor scatter_sum_rows(const Tensor& a, const std::vector<std::size_t>& indices,
                               std::size_t num_targets) {
    if (a.rank() != 2 || indices.size() != a.dim(0))
        throw ShapeError("scatter_sum: index count " + std::to_string(indices.size()) +
                         " vs rows of " + shape_str(a.shape()));
    const std::size_t cols = a.dim(1);
    for (std::size_t idx : indices)
        if (idx >= num_targets)
            throw ContractError("scatter_sum: target index " + std::to_string(idx) +
                                " out of range " + std::to_string(num_targets));
    std::vector<double> out(num_targets * cols, 0.0);
    for (std::size_t r = 0; r < indices.size(); ++r)
        for (std::size_t c = 0; c < cols; ++c) out[indices[r] * cols + c] += a.at(r, c);
    return detail::make_result("scatter_sum", Shape{num_targets, cols}, std::move(out), {a},
                               [indices, cols](const TensorImpl& node) {
                                   auto& ga = node.parents[0]->grad;
                                   for (std::size_t r = 0; r < indices.size(); ++r)
                                       for (std::size_t c = 0; c < cols; ++c)
                                           ga[r * cols + c] += node.grad[indices[r] * cols + c];
                               });
}

/// Max-reduce rows of a 2-D tensor into `num_targets` rows by index.
/// Empty targets yield 0; ties route the gradient to the first maximal row.
inline Tensor scatter_max_rows(const Tensor& a, const std::vector<std::size_t>& indices,
                               std::size_t num_targets) {
    if (a.rank() != 2 || indices.size() != a.dim(0))
        throw ShapeError("scatter_max: index count " + std::to_string(indices.size()) +
                         " vs rows of " + shape_str(a.shape()));
    const std::size_t cols = a.dim(1);
    std::vector<double> out(num_targets * cols, 0.0);
    std::vector<std::ptrdiff_t> argmax(num_targets * cols, -1);
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const std::size_t t = indices[r];
        if (t >= num_targets)
            throw ContractError("scatter_max: target index out of range");
        for (std::size_t c = 0; c < cols; ++c) {
            const double v = a.at(r, c);
            auto& slot = argmax[t * cols + c];
            if (slot < 0 || v > out[t * cols + c]) {
                out[t * cols + c] = v;
                slot = static_cast<std::ptrdiff_t>(r);
            }
        }
    }
    return detail::make_result("scatter_max", Shape{num_targets, cols}, std::move(out), {a},
                               [argmax, cols](const TensorImpl& node) {
                                   auto& ga = node.parents[0]->grad;
                                   for (std::size_t i = 0; i < argmax.size(); ++i)
                                       if (argmax[i] >= 0)
                                           ga[static_cast<std::size_t>(argmax[i]) * cols + i % cols] +=
                                               node.grad[i];
                               });
}

/// Rows of an embedding table selected by token index.
inline Tensor embedding(const Tensor& table, const std::vector<std::size_t>& ids) {
    return gather_rows(table, ids);
}

// ---------------------------------------------------------------------------
// 1-D convolution and pooling over [channels, length] maps.
// ---------------------------------------------------------------------------

inline std::size_t conv1d_out_len(std::size_t length, std::size_t kernel, std::size_t stride,
                                  std::size_t dilation, std::size_t padding) {
    const std::size_t span = dilation * (kernel - 1) + 1;
    if (length + 2 * padding < span)
        throw ShapeError("conv1d: input length " + std::to_string(length) + " (+2*" +
                         std::to_string(padding) + " pad) shorter than kernel span " +
                         std::to_string(span));
    return (length + 2 * padding - span) / stride + 1;
}

/// conv1d over input [C_in, L] with weight [C_out, C_in, k] and bias [C_out].
inline Tensor conv1d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                     std::size_t stride = 1, std::size_t dilation = 1, std::size_t padding = 0) {
    if (input.rank() != 2 || weight.rank() != 3)
        throw ShapeError("conv1d: expected input [C,L] and weight [Co,Ci,k], got " +
                         shape_str(input.shape()) + " and " + shape_str(weight.shape()));
    const std::size_t c_in = input.dim(0), length = input.dim(1);
    const std::size_t c_out = weight.dim(0), kernel = weight.dim(2);
    if (weight.dim(1) != c_in)
        throw ShapeError("conv1d: weight expects " + std::to_string(weight.dim(1)) +
                         " input channels, input has " + std::to_string(c_in));
    if (bias.numel() != c_out) throw ShapeError("conv1d: bias size mismatch");
    const std::size_t out_len = conv1d_out_len(length, kernel, stride, dilation, padding);

    std::vector<double> out(c_out * out_len);
    for (std::size_t d = 0; d < c_out; ++d)
        for (std::size_t o = 0; o < out_len; ++o) {
            double acc = bias.at(d);
            for (std::size_t c = 0; c < c_in; ++c) {
                const double* w = weight.data().data() + (d * c_in + c) * kernel;
                const double* x = input.data().data() + c * length;
                for (std::size_t k = 0; k < kernel; ++k) {
                    const std::ptrdiff_t pos =
                        static_cast<std::ptrdiff_t>(o * stride + k * dilation) -
                        static_cast<std::ptrdiff_t>(padding);
                    if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(length)) acc += w[k] * x[pos];
                }
            }
            out[d * out_len + o] = acc;
        }

    return detail::make_result(
        "conv1d", Shape{c_out, out_len}, std::move(out), {input, weight, bias},
        [c_in, length, c_out, kernel, out_len, stride, dilation, padding](const TensorImpl& node) {
            const auto& x = node.parents[0]->data;
            const auto& w = node.parents[1]->data;
            auto& gx = node.parents[0]->grad;
            auto& gw = node.parents[1]->grad;
            auto& gb = node.parents[2]->grad;
            for (std::size_t d = 0; d < c_out; ++d)
                for (std::size_t o = 0; o < out_len; ++o) {
                    const double g = node.grad[d * out_len + o];
                    if (g == 0.0) continue;
                    gb[d] += g;
                    for (std::size_t c = 0; c < c_in; ++c)
                        for (std::size_t k = 0; k < kernel; ++k) {
                            const std::ptrdiff_t pos =
                                static_cast<std::ptrdiff_t>(o * stride + k * dilation) -
                                static_cast<std::ptrdiff_t>(padding);
                            if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(length)) continue;
                            gw[(d * c_in + c) * kernel + k] += g * x[c * length + pos];
                            gx[c * length + pos] += g * w[(d * c_in + c) * kernel + k];
                        }
                }
        });
}

/// Average pooling over the length axis of [C, L]; padded positions are
/// excluded from the window average.
inline Tensor mean_pool1d(const Tensor& input, std::size_t kernel, std::size_t stride,
                          std::size_t padding = 0) {
    if (input.rank() != 2) throw ShapeError("mean_pool1d: expected [C,L], got " + shape_str(input.shape()));
    const std::size_t channels = input.dim(0), length = input.dim(1);
    const std::size_t out_len = conv1d_out_len(length, kernel, stride, 1, padding);
    std::vector<double> out(channels * out_len, 0.0);
    std::vector<double> counts(out_len, 0.0);
    for (std::size_t o = 0; o < out_len; ++o) {
        int n = 0;
        for (std::size_t k = 0; k < kernel; ++k) {
            const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(o * stride + k) -
                                       static_cast<std::ptrdiff_t>(padding);
            if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(length)) ++n;
        }
        counts[o] = static_cast<double>(n);
    }
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t o = 0; o < out_len; ++o) {
            double acc = 0.0;
            for (std::size_t k = 0; k < kernel; ++k) {
                const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(o * stride + k) -
                                           static_cast<std::ptrdiff_t>(padding);
                if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(length))
                    acc += input.at(c, static_cast<std::size_t>(pos));
            }
            out[c * out_len + o] = acc / counts[o];
        }
    return detail::make_result(
        "mean_pool1d", Shape{channels, out_len}, std::move(out), {input},
        [channels, length, out_len, kernel, stride, padding, counts](const TensorImpl& node) {
            auto& gx = node.parents[0]->grad;
            for (std::size_t c = 0; c < channels; ++c)
                for (std::size_t o = 0; o < out_len; ++o) {
                    const double g = node.grad[c * out_len + o] / counts[o];
                    for (std::size_t k = 0; k < kernel; ++k) {
                        const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(o * stride + k) -
                                                   static_cast<std::ptrdiff_t>(padding);
                        if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(length))
                            gx[c * length + pos] += g;
                    }
                }
        });
}

/// Max pooling over the length axis of [C, L].
inline Tensor max_pool1d(const Tensor& input, std::size_t kernel, std::size_t stride,
                         std::size_t padding = 0) {
    if (input.rank() != 2) throw ShapeError("max_pool1d: expected [C,L], got " + shape_str(input.shape()));
    const std::size_t channels = input.dim(0), length = input.dim(1);
    const std::size_t out_len = conv1d_out_len(length, kernel, stride, 1, padding);
    std::vector<double> out(channels * out_len);
    std::vector<std::size_t> argmax(channels * out_len);
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t o = 0; o < out_len; ++o) {
            double best = -std::numeric_limits<double>::infinity();
            std::size_t best_pos = 0;
            for (std::size_t k = 0; k < kernel; ++k) {
                const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(o * stride + k) -
                                           static_cast<std::ptrdiff_t>(padding);
                if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(length)) continue;
                const double v = input.at(c, static_cast<std::size_t>(pos));
                if (v > best) {
                    best = v;
                    best_pos = static_cast<std::size_t>(pos);
                }
            }
            out[c * out_len + o] = best;
            argmax[c * out_len + o] = best_pos;
        }
    return detail::make_result("max_pool1d", Shape{channels, out_len}, std::move(out), {input},
                               [channels, length, out_len, argmax](const TensorImpl& node) {
                                   auto& gx = node.parents[0]->grad;
                                   for (std::size_t c = 0; c < channels; ++c)
                                       for (std::size_t o = 0; o < out_len; ++o)
                                           gx[c * length + argmax[c * out_len + o]] +=
                                               node.grad[c * out_len + o];
                               });
}

/// Global average over the length axis: [C, L] -> [C].
inline Tensor global_mean_pool(const Tensor& input) {
    if (input.rank() != 2) throw ShapeError("global_mean_pool: expected [C,L]");
    const std::size_t channels = input.dim(0), length = input.dim(1);
    const double inv = 1.0 / static_cast<double>(length);
    std::vector<double> out(channels, 0.0);
    for (std::size_t c = 0; c < channels; ++c) {
        double acc = 0.0;
        for (std::size_t t = 0; t < length; ++t) acc += input.at(c, t);
        out[c] = acc * inv;
    }
    return detail::make_result("global_mean_pool", Shape{channels}, std::move(out), {input},
                               [channels, length, inv](const TensorImpl& node) {
                                   auto& gx = node.parents[0]->grad;
                                   for (std::size_t c = 0; c < channels; ++c)
                                       for (std::size_t t = 0; t < length; ++t)
                                           gx[c * length + t] += node.grad[c] * inv;
                               });
}

/// Adaptive average pooling of a 1-D vector to a fixed output length.
/// Bin b averages input positions [floor(b*n/out), ceil((b+1)*n/out)); the
/// same rule upsamples by repetition when n < out.
inline Tensor adaptive_mean_1d(const Tensor& input, std::size_t out_len) {
    if (input.rank() != 1) throw ShapeError("adaptive_mean_1d: expected a vector");
    const std::size_t n = input.dim(0);
    std::vector<double> out(out_len, 0.0);
    std::vector<std::pair<std::size_t, std::size_t>> windows(out_len);
    for (std::size_t b = 0; b < out_len; ++b) {
        const std::size_t start = (b * n) / out_len;
        const std::size_t end = ((b + 1) * n + out_len - 1) / out_len;
        windows[b] = {start, std::max(end, start + 1)};
        double acc = 0.0;
        for (std::size_t i = windows[b].first; i < windows[b].second; ++i) acc += input.at(i);
        out[b] = acc / static_cast<double>(windows[b].second - windows[b].first);
    }
    return detail::make_result("adaptive_mean_1d", Shape{out_len}, std::move(out), {input},
                               [windows](const TensorImpl& node) {
                                   auto& gx = node.parents[0]->grad;
                                   for (std::size_t b = 0; b < windows.size(); ++b) {
                                       const double inv =
                                           1.0 / static_cast<double>(windows[b].second - windows[b].first);
                                       for (std::size_t i = windows[b].first; i < windows[b].second; ++i)
                                           gx[i] += node.grad[b] * inv;
                                   }
                               });
}

/// Inverted dropout: kept activations are scaled by 1/(1-p) during training,
/// so evaluation mode is the identity (the input tensor is returned as-is).
template <typename RngT>
inline Tensor dropout(const Tensor& input, double p, RngT& rng, bool training) {
    if (p < 0.0 || p >= 1.0) throw ContractError("dropout: p must be in [0,1)");
    if (!training || p == 0.0) return input;
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> mask(input.numel());
    std::vector<double> out(input.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        mask[i] = rng.uniform() >= p ? keep_scale : 0.0;
        out[i] = input.at(i) * mask[i];
    }
    return detail::make_result("dropout", input.shape(), std::move(out), {input},
                               [mask](const TensorImpl& node) {
                                   auto& gx = node.parents[0]->grad;
                                   for (std::size_t i = 0; i < node.grad.size(); ++i)
                                       gx[i] += node.grad[i] * mask[i];
                               });
}

/// Reinterpret a [C] vector as [1, C] (or generally flatten to a row).
inline Tensor as_row(const Tensor& a) {
    std::vector<double> out = a.data();
    const std::size_t n = a.numel();
    return detail::make_result("as_row", Shape{1, n}, std::move(out), {a},
                               [](const TensorImpl& node) {
                                   auto& ga = node.parents[0]->grad;
                                   for (std::size_t i = 0; i < node.grad.size(); ++i)
                                       ga[i] += node.grad[i];
                               });
}

/// Flatten to a 1-D vector.
inline Tensor flatten(const Tensor& a) {
    std::vector<double> out = a.data();
    const std::size_t n = a.numel();
    return detail::make_result("flatten", Shape{n}, std::move(out), {a},
                               [](const TensorImpl& node) {
                                   auto& ga = node.parents[0]->grad;
                                   for (std::size_t i = 0; i < node.grad.size(); ++i)
                                       ga[i] += node.grad[i];
                               });
}

}  // namespace streamnas
