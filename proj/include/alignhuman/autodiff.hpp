// Copyright (c) 2026 The AlignHuman-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode differentiation over dense 1-D/2-D double arrays.
//
// A Tape records primitive operations in execution order. Every Var is a
// handle (tape, node index); values are computed eagerly on construction and
// adjoints are filled in by a single reverse sweep in Tape::backward.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "alignhuman/errors.hpp"

namespace alignhuman::ad {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

/// Dense row-major array of doubles, rank 1 or 2.
struct Tensor {
    std::vector<double> data;
    Shape shape;

    Tensor() : shape{0} {}
    explicit Tensor(Shape s) : data(shape_numel(s), 0.0), shape(std::move(s)) { validate(); }
    Tensor(Shape s, std::vector<double> values) : data(std::move(values)), shape(std::move(s)) { validate(); }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor vector(std::vector<double> v) {
        const std::size_t n = v.size();
        return Tensor({n}, std::move(v));
    }
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
        return Tensor({rows, cols}, std::move(v));
    }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
    std::size_t cols() const { return shape.back(); }
    bool is_scalar() const { return data.size() == 1; }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }
    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols(), cols()}; }
    std::span<double> row(std::size_t r) { return {data.data() + r * cols(), cols()}; }

    bool operator==(const Tensor&) const = default;

private:
    void validate() const {
        if (shape.empty() || shape.size() > 2)
            throw InvalidArgument("tensor rank must be 1 or 2, got shape " + shape_str(shape));
        if (shape_numel(shape) != data.size())
            throw InvalidArgument("tensor shape " + shape_str(shape) + " does not match " +
                                  std::to_string(data.size()) + " elements");
    }
};

enum class Op {
    Leaf,
    MatMul,   // A·B, or A·Bᵀ when the transpose flag is set
    Add,      // same shape, or matrix + row vector
    Mul,      // elementwise
    SiLU,
    Sin,
    Concat,   // 1-D append, or 2-D column-wise
    Sum,
    Mean,
    Square,
    Scale,
    Sigmoid,
    Log,      // argument clamped at kLogFloor
};

inline constexpr double kLogFloor = 1e-300;

inline std::string_view op_name(Op op) {
    switch (op) {
    case Op::Leaf: return "leaf";
    case Op::MatMul: return "matmul";
    case Op::Add: return "add";
    case Op::Mul: return "mul";
    case Op::SiLU: return "silu";
    case Op::Sin: return "sin";
    case Op::Concat: return "concat";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::Square: return "square";
    case Op::Scale: return "scale";
    case Op::Sigmoid: return "sigmoid";
    case Op::Log: return "log";
    }
    return "?";
}

inline double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

namespace detail {

// C(m×n) += A(m×k)·B(k×n)
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            if (aip == 0.0) continue;
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

// C(m×n) += A(m×k)·B(n×k)ᵀ
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
            c[i * n + j] += s;
        }
    }
}

// C(k×n) += A(m×k)ᵀ·B(m×n)
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            if (aip == 0.0) continue;
            double* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
        }
    }
}

} // namespace detail

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Tensor& grad() const;
    const Shape& shape() const { return value().shape; }
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad = true) {
        check_finite(Op::Leaf, value);
        nodes_.push_back(Node{Op::Leaf, {}, 0, 0.0, std::move(value), {}, requires_grad});
        return {this, nodes_.size() - 1};
    }
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    /// Records `op` applied to `inputs`. `scalar` is the factor for Scale and
    /// the transpose flag (nonzero = transpose right operand) for MatMul.
    Var apply(Op op, std::span<const Var> inputs, double scalar = 0.0) {
        const std::size_t arity = expected_arity(op);
        if (inputs.size() != arity)
            throw InvalidArgument(std::string(op_name(op)) + ": expected " + std::to_string(arity) +
                                  " inputs, got " + std::to_string(inputs.size()));
        Node node{op, {}, arity, scalar, {}, {}, false};
        for (std::size_t i = 0; i < arity; ++i) {
            if (inputs[i].tape != this)
                throw InvalidArgument(std::string(op_name(op)) + ": input belongs to a different tape");
            node.in[i] = inputs[i].id;
            node.requires_grad = node.requires_grad || nodes_[inputs[i].id].requires_grad;
        }
        node.value = compute(node);
        check_finite(op, node.value);
        nodes_.push_back(std::move(node));
        return {this, nodes_.size() - 1};
    }

    /// Reverse sweep from a scalar root. A tape may be swept once; a second
    /// call is rejected rather than silently doubling adjoints.
    void backward(Var root) {
        if (root.tape != this) throw InvalidArgument("backward: root belongs to a different tape");
        if (swept_) throw InvalidArgument("backward: tape already differentiated; build a new tape");
        const Tensor& rv = nodes_[root.id].value;
        if (!rv.is_scalar())
            throw InvalidArgument("backward: root must be scalar, got shape " + shape_str(rv.shape));
        swept_ = true;
        for (auto& n : nodes_)
            if (n.requires_grad) n.grad = Tensor::zeros(n.value.shape);
        if (!nodes_[root.id].requires_grad) return;
        nodes_[root.id].grad.data[0] = 1.0;
        for (std::size_t id = root.id + 1; id-- > 0;) {
            Node& n = nodes_[id];
            if (!n.requires_grad || n.op == Op::Leaf) continue;
            propagate(n);
        }
    }

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }

    /// Adjoint of `v` after backward. Nodes that do not depend on any
    /// differentiable leaf report an all-zero adjoint.
    const Tensor& grad(Var v) const {
        if (!swept_) throw InvalidArgument("grad: backward has not been run on this tape");
        const Node& n = nodes_.at(v.id);
        if (!n.requires_grad) {
            zero_cache_ = Tensor::zeros(n.value.shape);
            return zero_cache_;
        }
        return n.grad;
    }

    std::size_t size() const { return nodes_.size(); }
    bool differentiated() const { return swept_; }
    Op op_at(std::size_t id) const { return nodes_.at(id).op; }
    std::vector<std::size_t> inputs_of(std::size_t id) const {
        const Node& n = nodes_.at(id);
        return {n.in.begin(), n.in.begin() + static_cast<std::ptrdiff_t>(n.arity)};
    }

private:
    struct Node {
        Op op;
        std::array<std::size_t, 2> in;
        std::size_t arity;
        double scalar;
        Tensor value;
        Tensor grad;
        bool requires_grad;
    };

    static std::size_t expected_arity(Op op) {
        switch (op) {
        case Op::Leaf: return 0;
        case Op::MatMul:
        case Op::Add:
        case Op::Mul:
        case Op::Concat: return 2;
        default: return 1;
        }
    }

    static void check_finite(Op op, const Tensor& t) {
        for (std::size_t i = 0; i < t.size(); ++i)
            if (!std::isfinite(t.data[i]))
                throw NumericalError(std::string(op_name(op)) + ": non-finite value at element " +
                                     std::to_string(i));
    }

    [[noreturn]] void shape_error(const Node& n, std::string_view what) const {
        std::ostringstream os;
        os << op_name(n.op) << ": " << what << " (";
        for (std::size_t i = 0; i < n.arity; ++i) {
            if (i) os << ", ";
            os << shape_str(nodes_[n.in[i]].value.shape);
        }
        os << ")";
        throw InvalidArgument(os.str());
    }

    Tensor compute(const Node& n) const {
        const Tensor& a = nodes_[n.in[0]].value;
        switch (n.op) {
        case Op::MatMul: {
            const Tensor& b = nodes_[n.in[1]].value;
            if (a.rank() != 2 || b.rank() != 2) shape_error(n, "operands must be 2-D");
            const bool nt = n.scalar != 0.0;
            const std::size_t m = a.shape[0], k = a.shape[1];
            const std::size_t kb = nt ? b.shape[1] : b.shape[0];
            const std::size_t cols = nt ? b.shape[0] : b.shape[1];
            if (k != kb) shape_error(n, "inner dimensions differ");
            Tensor out({m, cols});
            if (nt)
                detail::gemm_nt(a.data.data(), b.data.data(), out.data.data(), m, k, cols);
            else
                detail::gemm_nn(a.data.data(), b.data.data(), out.data.data(), m, k, cols);
            return out;
        }
        case Op::Add: {
            const Tensor& b = nodes_[n.in[1]].value;
            Tensor out = a;
            if (a.shape == b.shape) {
                for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.data[i];
            } else if (a.rank() == 2 && b.rank() == 1 && b.shape[0] == a.shape[1]) {
                for (std::size_t r = 0; r < a.rows(); ++r)
                    for (std::size_t c = 0; c < a.cols(); ++c) out.at(r, c) += b.data[c];
            } else {
                shape_error(n, "shapes not addable");
            }
            return out;
        }
        case Op::Mul: {
            const Tensor& b = nodes_[n.in[1]].value;
            if (a.shape != b.shape) shape_error(n, "shapes differ");
            Tensor out = a;
            for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.data[i];
            return out;
        }
        case Op::Concat: {
            const Tensor& b = nodes_[n.in[1]].value;
            if (a.rank() != b.rank()) shape_error(n, "ranks differ");
            if (a.rank() == 1) {
                std::vector<double> v = a.data;
                v.insert(v.end(), b.data.begin(), b.data.end());
                return Tensor::vector(std::move(v));
            }
            if (a.rows() != b.rows()) shape_error(n, "row counts differ");
            const std::size_t ca = a.cols(), cb = b.cols();
            Tensor out({a.rows(), ca + cb});
            for (std::size_t r = 0; r < a.rows(); ++r) {
                std::copy_n(a.data.begin() + static_cast<std::ptrdiff_t>(r * ca), ca,
                            out.data.begin() + static_cast<std::ptrdiff_t>(r * (ca + cb)));
                std::copy_n(b.data.begin() + static_cast<std::ptrdiff_t>(r * cb), cb,
                            out.data.begin() + static_cast<std::ptrdiff_t>(r * (ca + cb) + ca));
            }
            return out;
        }
        case Op::Sum:
        case Op::Mean: {
            double s = 0.0;
            for (double x : a.data) s += x;
            if (n.op == Op::Mean) {
                if (a.size() == 0) shape_error(n, "mean of empty tensor");
                s /= static_cast<double>(a.size());
            }
            return Tensor::scalar(s);
        }
        default: break;
        }
        Tensor out = a;
        for (double& x : out.data) {
            switch (n.op) {
            case Op::SiLU: x = x * sigmoid(x); break;
            case Op::Sin: x = std::sin(x); break;
            case Op::Square: x = x * x; break;
            case Op::Scale: x = x * n.scalar; break;
            case Op::Sigmoid: x = sigmoid(x); break;
            case Op::Log: x = std::log(std::max(x, kLogFloor)); break;
            default: break;
            }
        }
        return out;
    }

    void propagate(const Node& n) {
        const Tensor& g = n.grad;
        Node& an = nodes_[n.in[0]];
        const Tensor& a = an.value;
        auto* ga = an.requires_grad ? &an.grad : nullptr;
        switch (n.op) {
        case Op::MatMul: {
            Node& bn = nodes_[n.in[1]];
            const Tensor& b = bn.value;
            const std::size_t m = a.shape[0], k = a.shape[1], cols = g.shape[1];
            if (n.scalar != 0.0) {
                // C = A·Bᵀ, B is cols×k
                if (ga) detail::gemm_nn(g.data.data(), b.data.data(), ga->data.data(), m, cols, k);
                if (bn.requires_grad) detail::gemm_tn(g.data.data(), a.data.data(), bn.grad.data.data(), m, cols, k);
            } else {
                // C = A·B, B is k×cols
                if (ga) detail::gemm_nt(g.data.data(), b.data.data(), ga->data.data(), m, cols, k);
                if (bn.requires_grad) detail::gemm_tn(a.data.data(), g.data.data(), bn.grad.data.data(), m, k, cols);
            }
            return;
        }
        case Op::Add: {
            Node& bn = nodes_[n.in[1]];
            if (ga)
                for (std::size_t i = 0; i < g.size(); ++i) ga->data[i] += g.data[i];
            if (bn.requires_grad) {
                if (bn.value.shape == g.shape) {
                    for (std::size_t i = 0; i < g.size(); ++i) bn.grad.data[i] += g.data[i];
                } else {
                    for (std::size_t r = 0; r < g.rows(); ++r)
                        for (std::size_t c = 0; c < g.cols(); ++c) bn.grad.data[c] += g.at(r, c);
                }
            }
            return;
        }
        case Op::Mul: {
            Node& bn = nodes_[n.in[1]];
            const Tensor& b = bn.value;
            if (ga)
                for (std::size_t i = 0; i < g.size(); ++i) ga->data[i] += g.data[i] * b.data[i];
            if (bn.requires_grad)
                for (std::size_t i = 0; i < g.size(); ++i) bn.grad.data[i] += g.data[i] * a.data[i];
            return;
        }
        case Op::Concat: {
            Node& bn = nodes_[n.in[1]];
            const std::size_t ca = a.cols(), cb = bn.value.cols(), rows = a.rows();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* gr = g.data.data() + r * (ca + cb);
                if (ga)
                    for (std::size_t c = 0; c < ca; ++c) ga->data[r * ca + c] += gr[c];
                if (bn.requires_grad)
                    for (std::size_t c = 0; c < cb; ++c) bn.grad.data[r * cb + c] += gr[ca + c];
            }
            return;
        }
        case Op::Sum:
        case Op::Mean: {
            if (!ga) return;
            double d = g.data[0];
            if (n.op == Op::Mean) d /= static_cast<double>(a.size());
            for (double& x : ga->data) x += d;
            return;
        }
        default: break;
        }
        if (!ga) return;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = a.data[i];
            double d = 0.0;
            switch (n.op) {
            case Op::SiLU: {
                const double s = sigmoid(x);
                d = s * (1.0 + x * (1.0 - s));
                break;
            }
            case Op::Sin: d = std::cos(x); break;
            case Op::Square: d = 2.0 * x; break;
            case Op::Scale: d = n.scalar; break;
            case Op::Sigmoid: {
                const double s = n.value.data[i];
                d = s * (1.0 - s);
                break;
            }
            case Op::Log: d = x > kLogFloor ? 1.0 / x : 0.0; break;
            default: break;
            }
            ga->data[i] += g.data[i] * d;
        }
    }

    std::vector<Node> nodes_;
    bool swept_ = false;
    mutable Tensor zero_cache_;
};

inline const Tensor& Var::value() const { return tape->value(*this); }
inline const Tensor& Var::grad() const { return tape->grad(*this); }

// Convenience wrappers over Tape::apply.

inline Var unary(Op op, Var a, double scalar = 0.0) {
    const std::array<Var, 1> in{a};
    return a.tape->apply(op, in, scalar);
}
inline Var binary(Op op, Var a, Var b, double scalar = 0.0) {
    const std::array<Var, 2> in{a, b};
    return a.tape->apply(op, in, scalar);
}

inline Var matmul(Var a, Var b) { return binary(Op::MatMul, a, b); }
/// a·bᵀ without materialising the transpose.
inline Var matmul_nt(Var a, Var b) { return binary(Op::MatMul, a, b, 1.0); }
inline Var add(Var a, Var b) { return binary(Op::Add, a, b); }
inline Var mul(Var a, Var b) { return binary(Op::Mul, a, b); }
inline Var concat(Var a, Var b) { return binary(Op::Concat, a, b); }
inline Var silu(Var a) { return unary(Op::SiLU, a); }
inline Var sin(Var a) { return unary(Op::Sin, a); }
inline Var sum(Var a) { return unary(Op::Sum, a); }
inline Var mean(Var a) { return unary(Op::Mean, a); }
inline Var square(Var a) { return unary(Op::Square, a); }
inline Var scale(Var a, double k) { return unary(Op::Scale, a, k); }
inline Var sigmoid(Var a) { return unary(Op::Sigmoid, a); }
inline Var log(Var a) { return unary(Op::Log, a); }
inline Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double k, Var a) { return scale(a, k); }

/// Scalar function of one differentiable tensor, built on the given tape.
using ScalarFn = std::function<Var(Tape&, Var)>;

/// Max over `coords` of |analytic − central difference| /
/// max(1e-8, |analytic| + |central difference|).
inline double grad_check(const ScalarFn& fn, const Tensor& point, double h, std::span<const std::size_t> coords) {
    if (!(h > 0.0)) throw InvalidArgument("grad_check: step h must be positive");
    Tape tape;
    Var x = tape.leaf(point);
    Var y = fn(tape, x);
    tape.backward(y);
    const Tensor analytic = tape.grad(x);

    auto eval_at = [&](const Tensor& p, std::size_t coord) {
        Tape t;
        double v = 0.0;
        try {
            v = fn(t, t.constant(p)).value().data.at(0);
        } catch (const NumericalError& e) {
            throw NumericalError("grad_check: coordinate " + std::to_string(coord) + ": " + e.what());
        }
        if (!std::isfinite(v))
            throw NumericalError("grad_check: non-finite value at coordinate " + std::to_string(coord));
        return v;
    };

    double worst = 0.0;
    Tensor probe = point;
    for (std::size_t i : coords) {
        if (i >= point.size())
            throw InvalidArgument("grad_check: coordinate " + std::to_string(i) + " outside a tensor of " +
                                  std::to_string(point.size()));
        const double x0 = point.data[i];
        probe.data[i] = x0 + h;
        const double fp = eval_at(probe, i);
        probe.data[i] = x0 - h;
        const double fm = eval_at(probe, i);
        probe.data[i] = x0;
        const double numeric = (fp - fm) / (2.0 * h);
        const double denom = std::max(1e-8, std::abs(analytic.data[i]) + std::abs(numeric));
        worst = std::max(worst, std::abs(analytic.data[i] - numeric) / denom);
    }
    return worst;
}

/// Every coordinate of `point`.
inline double grad_check(const ScalarFn& fn, const Tensor& point, double h) {
    std::vector<std::size_t> all(point.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return grad_check(fn, point, h, all);
}

} // namespace alignhuman::ad
