#pragma once

// Reverse-mode differentiation of scalar losses with respect to a flat
// parameter vector. Graph nodes carry whole matrices so an MLP batch is a
// handful of nodes; the tape is append-only, so creation order is a valid
// topological order and backward() just walks it in reverse.

#include "msgm/numcore.hpp"

#include <algorithm>
#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

namespace msgm {

class ParamTape;

/// Handle to a node recorded on a ParamTape.
struct Var {
    ParamTape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
};

class ParamTape {
public:
    ParamTape() = default;
    explicit ParamTape(std::vector<double> params)
        : params_(std::move(params)), adjoints_(params_.size(), 0.0) {}

    std::span<const double> params() const { return params_; }
    std::span<double> params() { return params_; }
    std::span<const double> adjoints() const { return adjoints_; }
    std::size_t size() const { return params_.size(); }

    /// Drops recorded nodes; parameters and adjoints survive.
    void clear_graph() { nodes_.clear(); }
    void zero_adjoints() { std::fill(adjoints_.begin(), adjoints_.end(), 0.0); }
    std::size_t node_count() const { return nodes_.size(); }

    Var constant(Tensor value) { return push(std::move(value), false, {}); }

    /// Leaf viewing params[offset, offset + rows*cols) as a row-major matrix.
    Var param(std::size_t offset, Eigen::Index rows, Eigen::Index cols) {
        require(offset + static_cast<std::size_t>(rows * cols) <= params_.size(),
                "ParamTape::param: range exceeds parameter vector");
        Tensor v = Eigen::Map<const Tensor>(params_.data() + offset, rows, cols);
        Var out = push(std::move(v), true, {});
        nodes_[out.id].param_offset = static_cast<std::ptrdiff_t>(offset);
        return out;
    }

    /// Accumulates d(loss)/d(theta) into the adjoint vector (after zeroing it)
    /// and returns it. Returns the number of parameters left with a zero adjoint
    /// through `unreached` when requested; that is diagnostic only.
    std::span<const double> backward(Var loss, std::size_t* unreached = nullptr) {
        require(loss.tape == this, "backward: loss recorded on another tape");
        require(loss.value().size() == 1, "backward: loss must be a scalar node");
        zero_adjoints();
        for (auto& n : nodes_) n.adjoint.resize(0, 0);
        nodes_[loss.id].adjoint.setOnes(1, 1);
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || n.adjoint.size() == 0) continue;
            if (n.param_offset >= 0) {
                Eigen::Map<Tensor> dst(adjoints_.data() + n.param_offset, n.value.rows(), n.value.cols());
                dst += n.adjoint;
            } else if (n.back) {
                n.back(*this, i);
            }
        }
        if (unreached) {
            *unreached = static_cast<std::size_t>(
                std::count(adjoints_.begin(), adjoints_.end(), 0.0));
        }
        return adjoints_;
    }

    // --- node access used by the op implementations below ---
    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    /// Adjoint buffer; empty (size 0) until the first contribution arrives.
    Tensor& adjoint(std::size_t id) { return nodes_[id].adjoint; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    using BackFn = std::function<void(ParamTape&, std::size_t)>;

    Var push(Tensor value, bool requires_grad, BackFn back) {
        nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, -1, std::move(back)});
        return Var{this, nodes_.size() - 1};
    }

private:
    struct Node {
        Tensor value;
        Tensor adjoint;
        bool requires_grad = false;
        std::ptrdiff_t param_offset = -1;
        BackFn back;
    };

    std::vector<double> params_;
    std::vector<double> adjoints_;
    std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

namespace ops {

namespace detail {

inline bool any_grad(const Var& a) { return a.tape->requires_grad(a.id); }
inline bool any_grad(const Var& a, const Var& b) { return any_grad(a) || any_grad(b); }

/// adjoint(id) += g, where an empty adjoint counts as zero.
template <class Expr>
void accumulate(ParamTape& t, std::size_t id, const Expr& g) {
    if (!t.requires_grad(id)) return;
    Tensor& a = t.adjoint(id);
    if (a.size() == 0) {
        a = g;
    } else {
        a += g;
    }
}

template <class Lhs, class Rhs>
void accumulate_product(ParamTape& t, std::size_t id, const Lhs& l, const Rhs& r) {
    if (!t.requires_grad(id)) return;
    Tensor& a = t.adjoint(id);
    if (a.size() == 0) {
        a.noalias() = l * r;
    } else {
        a.noalias() += l * r;
    }
}

} // namespace detail

inline Var matmul(Var a, Var b) {
    ParamTape& t = *a.tape;
    Tensor v = a.value() * b.value();
    const std::size_t ia = a.id, ib = b.id;
    return t.push(std::move(v), detail::any_grad(a, b), [ia, ib](ParamTape& tp, std::size_t self) {
        const Tensor& g = tp.adjoint(self);
        detail::accumulate_product(tp, ia, g, tp.value(ib).transpose());
        detail::accumulate_product(tp, ib, tp.value(ia).transpose(), g);
    });
}

/// a (N x k) plus a 1 x k row broadcast over every row.
inline Var add_row(Var a, Var row) {
    ParamTape& t = *a.tape;
    require(row.rows() == 1 && row.cols() == a.cols(), "add_row: shape mismatch");
    Tensor v = a.value().rowwise() + row.value().row(0);
    const std::size_t ia = a.id, ir = row.id;
    return t.push(std::move(v), detail::any_grad(a, row), [ia, ir](ParamTape& tp, std::size_t self) {
        const Tensor& g = tp.adjoint(self);
        detail::accumulate(tp, ia, g);
        detail::accumulate(tp, ir, g.colwise().sum());
    });
}

inline Var add(Var a, Var b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
    Tensor v = a.value() + b.value();
    const std::size_t ia = a.id, ib = b.id;
    return a.tape->push(std::move(v), detail::any_grad(a, b), [ia, ib](ParamTape& tp, std::size_t self) {
        detail::accumulate(tp, ia, tp.adjoint(self));
        detail::accumulate(tp, ib, tp.adjoint(self));
    });
}

inline Var sub(Var a, Var b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
    Tensor v = a.value() - b.value();
    const std::size_t ia = a.id, ib = b.id;
    return a.tape->push(std::move(v), detail::any_grad(a, b), [ia, ib](ParamTape& tp, std::size_t self) {
        detail::accumulate(tp, ia, tp.adjoint(self));
        detail::accumulate(tp, ib, -tp.adjoint(self));
    });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
    Tensor v = a.value().cwiseProduct(b.value());
    const std::size_t ia = a.id, ib = b.id;
    return a.tape->push(std::move(v), detail::any_grad(a, b), [ia, ib](ParamTape& tp, std::size_t self) {
        const Tensor& g = tp.adjoint(self);
        detail::accumulate(tp, ia, g.cwiseProduct(tp.value(ib)));
        detail::accumulate(tp, ib, g.cwiseProduct(tp.value(ia)));
    });
}

inline Var scale(Var a, double k) {
    Tensor v = a.value() * k;
    const std::size_t ia = a.id;
    return a.tape->push(std::move(v), detail::any_grad(a), [ia, k](ParamTape& tp, std::size_t self) {
        detail::accumulate(tp, ia, tp.adjoint(self) * k);
    });
}

/// Multiplies row i of a by the constant c[i].
inline Var scale_rows(Var a, const Vector& c) {
    require(c.size() == a.rows(), "scale_rows: length mismatch");
    Tensor v = c.asDiagonal() * a.value();
    const std::size_t ia = a.id;
    return a.tape->push(std::move(v), detail::any_grad(a), [ia, c](ParamTape& tp, std::size_t self) {
        detail::accumulate(tp, ia, c.asDiagonal() * tp.adjoint(self));
    });
}

inline Var silu(Var a) {
    Tensor v = msgm::silu(a.value());
    const std::size_t ia = a.id;
    return a.tape->push(std::move(v), detail::any_grad(a), [ia](ParamTape& tp, std::size_t self) {
        if (!tp.requires_grad(ia)) return;
        detail::accumulate(tp, ia, tp.adjoint(self).cwiseProduct(msgm::silu_grad(tp.value(ia))));
    });
}

inline Var square(Var a) { return mul(a, a); }

inline Var relu(Var a) {
    Tensor v = a.value().cwiseMax(0.0);
    const std::size_t ia = a.id;
    return a.tape->push(std::move(v), detail::any_grad(a), [ia](ParamTape& tp, std::size_t self) {
        if (!tp.requires_grad(ia)) return;
        const Tensor mask = (tp.value(ia).array() > 0.0).cast<double>().matrix();
        detail::accumulate(tp, ia, tp.adjoint(self).cwiseProduct(mask));
    });
}

/// N x k -> N x 1 row sums.
inline Var row_sum(Var a) {
    Tensor v = a.value().rowwise().sum();
    const std::size_t ia = a.id;
    const Eigen::Index cols = a.cols();
    return a.tape->push(std::move(v), detail::any_grad(a), [ia, cols](ParamTape& tp, std::size_t self) {
        detail::accumulate(tp, ia, tp.adjoint(self).replicate(1, cols));
    });
}

/// Row-wise inner product, N x 1.
inline Var row_dot(Var a, Var b) { return row_sum(mul(a, b)); }

inline Var sum(Var a) {
    Tensor v(1, 1);
    v(0, 0) = a.value().sum();
    const std::size_t ia = a.id;
    return a.tape->push(std::move(v), detail::any_grad(a), [ia](ParamTape& tp, std::size_t self) {
        if (!tp.requires_grad(ia)) return;
        const Tensor& v = tp.value(ia);
        detail::accumulate(tp, ia, Tensor::Constant(v.rows(), v.cols(), tp.adjoint(self)(0, 0)));
    });
}

inline Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

/// Scalar node holding a(i, j).
inline Var element(Var a, Eigen::Index i, Eigen::Index j) {
    Tensor v(1, 1);
    v(0, 0) = a.value()(i, j);
    const std::size_t ia = a.id;
    return a.tape->push(std::move(v), detail::any_grad(a), [ia, i, j](ParamTape& tp, std::size_t self) {
        if (!tp.requires_grad(ia)) return;
        const Tensor& v = tp.value(ia);
        Tensor g = Tensor::Zero(v.rows(), v.cols());
        g(i, j) = tp.adjoint(self)(0, 0);
        detail::accumulate(tp, ia, g);
    });
}

/// Weighted sum of two scalar nodes: wa*a + wb*b.
inline Var combine(Var a, double wa, Var b, double wb) { return add(scale(a, wa), scale(b, wb)); }

} // namespace ops
} // namespace msgm
