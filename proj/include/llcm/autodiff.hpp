#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "llcm/tensor.hpp"

namespace llcm {

// Dense kernels shared by the plain forward pass and the tape.

namespace detail {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
inline Eigen::Map<const RowMat> view(const Tensor& t) { return {t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())}; }
inline Eigen::Map<RowMat> view(Tensor& t) { return {t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())}; }
}  // namespace detail

/// C = A * B for A (m x k), B (k x n).
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows())
        throw Error("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    Tensor c = Tensor::zeros(a.rows(), b.cols());
    detail::view(c).noalias() = detail::view(a) * detail::view(b);
    return c;
}

/// A * B^T for A (m x k), B (n x k).
inline Tensor matmul_bt(const Tensor& a, const Tensor& b) {
    Tensor c = Tensor::zeros(a.rows(), b.rows());
    detail::view(c).noalias() = detail::view(a) * detail::view(b).transpose();
    return c;
}

/// A^T * B for A (m x k), B (m x n).
inline Tensor matmul_at(const Tensor& a, const Tensor& b) {
    Tensor c = Tensor::zeros(a.cols(), b.cols());
    detail::view(c).noalias() = detail::view(a).transpose() * detail::view(b);
    return c;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

inline double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

enum class Op {
    Leaf,
    MatMul,
    AddBias,
    Add,
    Sub,
    Mul,
    Scale,
    ScaleRows,
    AddScalar,
    Gelu,
    Square,
    Sqrt,
    Sum,
    Mean,
    RowSum,
    ConcatCols,
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::MatMul: return "matmul";
        case Op::AddBias: return "add_bias";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Scale: return "scale";
        case Op::ScaleRows: return "scale_rows";
        case Op::AddScalar: return "add_scalar";
        case Op::Gelu: return "gelu";
        case Op::Square: return "square";
        case Op::Sqrt: return "sqrt";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::RowSum: return "row_sum";
        case Op::ConcatCols: return "concat_cols";
    }
    return "?";
}

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
};

/// Records a computation for reverse-mode differentiation. Nodes are stored
/// in creation order, which is already a topological order.
class Tape {
   public:
    Var leaf(Tensor value, bool requires_grad = true) { return push(Op::Leaf, std::move(value), {}, {}, requires_grad); }
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }

    /// Gradient of the last backward() target w.r.t. v; zeros if v is off the path.
    const Tensor& grad(Var v) {
        Node& n = nodes_.at(v.id);
        if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape());
        return n.grad;
    }

    std::size_t size() const { return nodes_.size(); }

    /// Mutation hook for the gradient checker: negates the backward rule of one op.
    void inject_sign_flip(std::optional<Op> op) { fault_ = op; }

    void backward(Var loss) {
        if (loss.tape != this) throw Error("backward: variable belongs to another tape");
        const Tensor& lv = nodes_.at(loss.id).value;
        if (lv.size() != 1) throw Error("backward: loss must be scalar, got shape " + shape_str(lv.shape()));
        for (auto& n : nodes_) n.grad = Tensor(n.value.shape());
        nodes_[loss.id].grad[0] = 1.0;
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || n.op == Op::Leaf) continue;
            backprop(i);
        }
    }

   private:
    struct Node {
        Op op;
        Tensor value;
        Tensor grad;
        std::vector<std::size_t> inputs;
        std::vector<double> aux;
        bool requires_grad;
    };

    Var push(Op op, Tensor value, std::vector<std::size_t> inputs, std::vector<double> aux, bool requires_grad) {
        nodes_.push_back(Node{op, std::move(value), Tensor{}, std::move(inputs), std::move(aux), requires_grad});
        return Var{this, nodes_.size() - 1};
    }

    Var record(Op op, Tensor value, std::vector<std::size_t> inputs, std::vector<double> aux = {}) {
        bool rg = false;
        for (auto i : inputs) rg = rg || nodes_[i].requires_grad;
        return push(op, std::move(value), std::move(inputs), std::move(aux), rg);
    }

    void accumulate(std::size_t id, const Tensor& g, double sign) {
        Node& n = nodes_[id];
        if (!n.requires_grad) return;
        for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += sign * g[i];
    }

    void backprop(std::size_t i) {
        // copies: accumulate() may touch nodes_ elements but never reallocates
        const Node& n = nodes_[i];
        const Tensor& g = n.grad;
        const double sign = (fault_ && *fault_ == n.op) ? -1.0 : 1.0;
        const auto& in = n.inputs;
        switch (n.op) {
            case Op::Leaf: break;
            case Op::MatMul: {
                const Tensor& a = nodes_[in[0]].value;
                const Tensor& b = nodes_[in[1]].value;
                if (nodes_[in[0]].requires_grad) accumulate(in[0], matmul_bt(g, b), sign);
                if (nodes_[in[1]].requires_grad) accumulate(in[1], matmul_at(a, g), sign);
                break;
            }
            case Op::AddBias: {
                accumulate(in[0], g, sign);
                Tensor db(nodes_[in[1]].value.shape());
                const std::size_t c = g.cols();
                for (std::size_t r = 0; r < g.rows(); ++r)
                    for (std::size_t j = 0; j < c; ++j) db[j] += g(r, j);
                accumulate(in[1], db, sign);
                break;
            }
            case Op::Add:
                accumulate(in[0], g, sign);
                accumulate(in[1], g, sign);
                break;
            case Op::Sub:
                accumulate(in[0], g, sign);
                accumulate(in[1], g, -sign);
                break;
            case Op::Mul: {
                const Tensor& a = nodes_[in[0]].value;
                const Tensor& b = nodes_[in[1]].value;
                Tensor ga(g.shape()), gb(g.shape());
                for (std::size_t k = 0; k < g.size(); ++k) {
                    ga[k] = g[k] * b[k];
                    gb[k] = g[k] * a[k];
                }
                accumulate(in[0], ga, sign);
                accumulate(in[1], gb, sign);
                break;
            }
            case Op::Scale: accumulate(in[0], n.aux[0] * g, sign); break;
            case Op::ScaleRows: {
                Tensor ga(g.shape());
                const std::size_t c = g.cols();
                for (std::size_t r = 0; r < g.rows(); ++r)
                    for (std::size_t j = 0; j < c; ++j) ga(r, j) = n.aux[r] * g(r, j);
                accumulate(in[0], ga, sign);
                break;
            }
            case Op::AddScalar: accumulate(in[0], g, sign); break;
            case Op::Gelu: {
                const Tensor& x = nodes_[in[0]].value;
                Tensor gx(g.shape());
                for (std::size_t k = 0; k < g.size(); ++k) gx[k] = g[k] * gelu_grad(x[k]);
                accumulate(in[0], gx, sign);
                break;
            }
            case Op::Square: {
                const Tensor& x = nodes_[in[0]].value;
                Tensor gx(g.shape());
                for (std::size_t k = 0; k < g.size(); ++k) gx[k] = 2.0 * x[k] * g[k];
                accumulate(in[0], gx, sign);
                break;
            }
            case Op::Sqrt: {
                Tensor gx(g.shape());
                for (std::size_t k = 0; k < g.size(); ++k) gx[k] = g[k] / (2.0 * n.value[k]);
                accumulate(in[0], gx, sign);
                break;
            }
            case Op::Sum: accumulate(in[0], Tensor(nodes_[in[0]].value.shape(), g[0]), sign); break;
            case Op::Mean: {
                const Tensor& x = nodes_[in[0]].value;
                accumulate(in[0], Tensor(x.shape(), g[0] / static_cast<double>(x.size())), sign);
                break;
            }
            case Op::RowSum: {
                const Tensor& x = nodes_[in[0]].value;
                Tensor gx(x.shape());
                for (std::size_t r = 0; r < x.rows(); ++r)
                    for (std::size_t j = 0; j < x.cols(); ++j) gx(r, j) = g(r, 0);
                accumulate(in[0], gx, sign);
                break;
            }
            case Op::ConcatCols: {
                std::size_t off = 0;
                const std::size_t total = g.cols();
                for (std::size_t p = 0; p < in.size(); ++p) {
                    const Tensor& x = nodes_[in[p]].value;
                    const std::size_t w = x.cols();
                    Tensor gx(x.shape());
                    for (std::size_t r = 0; r < x.rows(); ++r)
                        for (std::size_t j = 0; j < w; ++j) gx(r, j) = g[r * total + off + j];
                    accumulate(in[p], gx, sign);
                    off += w;
                }
                break;
            }
        }
    }

    std::vector<Node> nodes_;
    std::optional<Op> fault_;

    friend Var matmul(Var, Var);
    friend Var add_bias(Var, Var);
    friend Var add(Var, Var);
    friend Var sub(Var, Var);
    friend Var mul(Var, Var);
    friend Var scale(Var, double);
    friend Var scale_rows(Var, std::span<const double>);
    friend Var add_scalar(Var, double);
    friend Var gelu(Var);
    friend Var square(Var);
    friend Var sqrt(Var);
    friend Var sum(Var);
    friend Var mean(Var);
    friend Var row_sum(Var);
    friend Var concat_cols(std::span<const Var>);
};

inline const Tensor& Var::value() const { return tape->value(*this); }

namespace detail {
inline void same_tape(Var a, Var b, const char* op) {
    if (a.tape != b.tape || a.tape == nullptr) throw Error(std::string(op) + ": operands on different tapes");
}

template <class F>
Tensor map(const Tensor& x, F f) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
    return out;
}
}  // namespace detail

inline Var matmul(Var a, Var b) {
    detail::same_tape(a, b, "matmul");
    return a.tape->record(Op::MatMul, matmul(a.value(), b.value()), {a.id, b.id});
}

/// x (m x n) plus bias b broadcast over rows (b has n values).
inline Var add_bias(Var x, Var b) {
    detail::same_tape(x, b, "add_bias");
    const Tensor& xv = x.value();
    const Tensor& bv = b.value();
    if (bv.size() != xv.cols()) throw Error("add_bias: bias of " + std::to_string(bv.size()) + " values for " + std::to_string(xv.cols()) + " columns");
    Tensor out = xv;
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t j = 0; j < out.cols(); ++j) out(r, j) += bv[j];
    return x.tape->record(Op::AddBias, std::move(out), {x.id, b.id});
}

inline Var add(Var a, Var b) {
    detail::same_tape(a, b, "add");
    return a.tape->record(Op::Add, a.value() + b.value(), {a.id, b.id});
}

inline Var sub(Var a, Var b) {
    detail::same_tape(a, b, "sub");
    return a.tape->record(Op::Sub, a.value() - b.value(), {a.id, b.id});
}

inline Var mul(Var a, Var b) {
    detail::same_tape(a, b, "mul");
    require_same_shape(a.value(), b.value(), "mul");
    Tensor out(a.value().shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
    return a.tape->record(Op::Mul, std::move(out), {a.id, b.id});
}

inline Var scale(Var a, double s) { return a.tape->record(Op::Scale, s * a.value(), {a.id}, {s}); }

/// Multiplies row r of a by coeffs[r]; the coefficients are constants.
inline Var scale_rows(Var a, std::span<const double> coeffs) {
    const Tensor& x = a.value();
    if (coeffs.size() != x.rows()) throw Error("scale_rows: " + std::to_string(coeffs.size()) + " coefficients for " + std::to_string(x.rows()) + " rows");
    Tensor out = x;
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (auto& v : out.row(r)) v *= coeffs[r];
    return a.tape->record(Op::ScaleRows, std::move(out), {a.id}, std::vector<double>(coeffs.begin(), coeffs.end()));
}

inline Var add_scalar(Var a, double s) {
    return a.tape->record(Op::AddScalar, detail::map(a.value(), [s](double v) { return v + s; }), {a.id}, {s});
}

inline Var gelu(Var a) {
    return a.tape->record(Op::Gelu, detail::map(a.value(), [](double v) { return gelu(v); }), {a.id});
}

inline Var square(Var a) {
    return a.tape->record(Op::Square, detail::map(a.value(), [](double v) { return v * v; }), {a.id});
}

inline Var sqrt(Var a) {
    for (double v : a.value().values())
        if (v <= 0.0) throw Error("sqrt: argument must be positive");
    return a.tape->record(Op::Sqrt, detail::map(a.value(), [](double v) { return std::sqrt(v); }), {a.id});
}

inline Var sum(Var a) { return a.tape->record(Op::Sum, Tensor::scalar(a.value().sum()), {a.id}); }

inline Var mean(Var a) {
    const Tensor& x = a.value();
    if (x.empty()) throw Error("mean: empty tensor");
    return a.tape->record(Op::Mean, Tensor::scalar(x.sum() / static_cast<double>(x.size())), {a.id});
}

/// (m x n) -> (m x 1)
inline Var row_sum(Var a) {
    const Tensor& x = a.value();
    Tensor out = Tensor::zeros(x.rows(), 1);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double s = 0.0;
        for (double v : x.row(r)) s += v;
        out[r] = s;
    }
    return a.tape->record(Op::RowSum, std::move(out), {a.id});
}

inline Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw Error("concat_cols: no operands");
    Tape* tape = parts[0].tape;
    const std::size_t rows = parts[0].value().rows();
    std::size_t total = 0;
    std::vector<std::size_t> ids;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        if (parts[p].tape != tape) throw Error("concat_cols: operands on different tapes");
        if (parts[p].value().rows() != rows)
            throw Error("concat_cols: operand " + std::to_string(p) + " has " + std::to_string(parts[p].value().rows()) + " rows, expected " + std::to_string(rows));
        total += parts[p].value().cols();
        ids.push_back(parts[p].id);
    }
    Tensor out = Tensor::zeros(rows, total);
    std::size_t off = 0;
    for (const Var& p : parts) {
        const Tensor& x = p.value();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < x.cols(); ++j) out(r, off + j) = x(r, j);
        off += x.cols();
    }
    return tape->record(Op::ConcatCols, std::move(out), std::move(ids));
}

}  // namespace llcm
