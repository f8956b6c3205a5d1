#pragma once

// Reverse-mode automatic differentiation over dense Eigen matrices.
// Nodes form a DAG held together by shared_ptr; backward() walks the
// graph in topological order from a scalar loss node. Everything is
// double precision: the coupling inverse divides by exp(...) and needs
// the full 64-bit mantissa to round-trip.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace hrgn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct DimError : std::runtime_error {
    explicit DimError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        std::ostringstream os;
        os << op << ": shape mismatch (" << a.rows() << "x" << a.cols()
           << " vs " << b.rows() << "x" << b.cols() << ")";
        throw DimError(os.str());
    }
}

namespace ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Matrix value;
    Matrix grad;  // lazily sized in backward()
    std::vector<NodePtr> parents;
    // Propagates this->grad into parents' grads.
    std::function<void(Node&)> backprop;

    Matrix& grad_of(std::size_t i) {
        Node& p = *parents[i];
        if (p.grad.size() == 0) p.grad = Matrix::Zero(p.value.rows(), p.value.cols());
        return p.grad;
    }
};

// Value handle. Copies are cheap and alias the same node.
class Var {
public:
    Var() = default;
    explicit Var(NodePtr n) : node_(std::move(n)) {}

    static Var constant(Matrix m) {
        auto n = std::make_shared<Node>();
        n->value = std::move(m);
        return Var(n);
    }
    static Var scalar(double s) { return constant(Matrix::Constant(1, 1, s)); }

    const Matrix& value() const { return node_->value; }
    const Matrix& grad() const { return node_->grad; }
    bool has_grad() const { return node_->grad.size() != 0; }
    Eigen::Index rows() const { return node_->value.rows(); }
    Eigen::Index cols() const { return node_->value.cols(); }
    NodePtr node() const { return node_; }
    bool valid() const { return node_ != nullptr; }

    // Cuts the history: returns a constant holding the same value.
    Var detach() const { return constant(node_->value); }

private:
    NodePtr node_;
};

namespace detail {
inline Var make(Matrix value, std::vector<NodePtr> parents,
                std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
    return Var(n);
}
}  // namespace detail

inline Var add(const Var& a, const Var& b) {
    check_same_shape(a.value(), b.value(), "add");
    return detail::make(a.value() + b.value(), {a.node(), b.node()}, [](Node& n) {
        n.grad_of(0) += n.grad;
        n.grad_of(1) += n.grad;
    });
}

inline Var sub(const Var& a, const Var& b) {
    check_same_shape(a.value(), b.value(), "sub");
    return detail::make(a.value() - b.value(), {a.node(), b.node()}, [](Node& n) {
        n.grad_of(0) += n.grad;
        n.grad_of(1) -= n.grad;
    });
}

// Element-wise product.
inline Var cmul(const Var& a, const Var& b) {
    check_same_shape(a.value(), b.value(), "cmul");
    return detail::make(a.value().cwiseProduct(b.value()), {a.node(), b.node()},
                        [](Node& n) {
                            n.grad_of(0) += n.grad.cwiseProduct(n.parents[1]->value);
                            n.grad_of(1) += n.grad.cwiseProduct(n.parents[0]->value);
                        });
}

// Element-wise division a ./ b.
inline Var cdiv(const Var& a, const Var& b) {
    check_same_shape(a.value(), b.value(), "cdiv");
    return detail::make(a.value().cwiseQuotient(b.value()), {a.node(), b.node()},
                        [](Node& n) {
                            const Matrix& av = n.parents[0]->value;
                            const Matrix& bv = n.parents[1]->value;
                            n.grad_of(0) += n.grad.cwiseQuotient(bv);
                            n.grad_of(1) -= n.grad.cwiseProduct(av).cwiseQuotient(bv.cwiseProduct(bv));
                        });
}

inline Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows()) {
        std::ostringstream os;
        os << "matmul: inner dimensions differ (" << a.rows() << "x" << a.cols()
           << " * " << b.rows() << "x" << b.cols() << ")";
        throw DimError(os.str());
    }
    return detail::make(a.value() * b.value(), {a.node(), b.node()}, [](Node& n) {
        n.grad_of(0) += n.grad * n.parents[1]->value.transpose();
        n.grad_of(1) += n.parents[0]->value.transpose() * n.grad;
    });
}

inline Var scale(const Var& a, double s) {
    return detail::make(a.value() * s, {a.node()},
                        [s](Node& n) { n.grad_of(0) += n.grad * s; });
}

inline Var tanh(const Var& a) {
    return detail::make(a.value().array().tanh().matrix(), {a.node()}, [](Node& n) {
        n.grad_of(0) += n.grad.cwiseProduct(
            (1.0 - n.value.array().square()).matrix());
    });
}

inline Var sigmoid(const Var& a) {
    Matrix v = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
    return detail::make(std::move(v), {a.node()}, [](Node& n) {
        n.grad_of(0) += n.grad.cwiseProduct(
            (n.value.array() * (1.0 - n.value.array())).matrix());
    });
}

inline Var exp(const Var& a) {
    return detail::make(a.value().array().exp().matrix(), {a.node()}, [](Node& n) {
        n.grad_of(0) += n.grad.cwiseProduct(n.value);
    });
}

// exp(clamp(x, -bound, bound)); gradient is zero where the clamp is active.
inline Var exp_clamped(const Var& a, double bound) {
    Matrix clamped = a.value().cwiseMax(-bound).cwiseMin(bound);
    Matrix v = clamped.array().exp().matrix();
    return detail::make(std::move(v), {a.node()}, [bound](Node& n) {
        const Matrix& x = n.parents[0]->value;
        Matrix mask = ((x.array() > -bound) && (x.array() < bound)).cast<double>();
        n.grad_of(0) += n.grad.cwiseProduct(n.value).cwiseProduct(mask);
    });
}

inline Var concat_rows(const Var& a, const Var& b) {
    if (a.cols() != b.cols()) throw DimError("concat_rows: column counts differ");
    Matrix v(a.rows() + b.rows(), a.cols());
    v.topRows(a.rows()) = a.value();
    v.bottomRows(b.rows()) = b.value();
    const Eigen::Index ra = a.rows();
    return detail::make(std::move(v), {a.node(), b.node()}, [ra](Node& n) {
        n.grad_of(0) += n.grad.topRows(ra);
        n.grad_of(1) += n.grad.bottomRows(n.grad.rows() - ra);
    });
}

inline Var rows(const Var& a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.rows())
        throw DimError("rows: range out of bounds");
    return detail::make(a.value().middleRows(start, count), {a.node()},
                        [start, count](Node& n) {
                            n.grad_of(0).middleRows(start, count) += n.grad;
                        });
}

inline std::pair<Var, Var> split_half(const Var& a) {
    if (a.rows() % 2 != 0) throw DimError("split_half: odd row count");
    const Eigen::Index h = a.rows() / 2;
    return {rows(a, 0, h), rows(a, h, h)};
}

// sum_i w_i * v_i in a single node.
inline Var weighted_sum(const std::vector<std::pair<double, Var>>& terms) {
    if (terms.empty()) throw DimError("weighted_sum: no terms");
    Matrix v = Matrix::Zero(terms[0].second.rows(), terms[0].second.cols());
    std::vector<NodePtr> parents;
    std::vector<double> ws;
    parents.reserve(terms.size());
    for (const auto& [w, t] : terms) {
        check_same_shape(v, t.value(), "weighted_sum");
        v += w * t.value();
        parents.push_back(t.node());
        ws.push_back(w);
    }
    return detail::make(std::move(v), std::move(parents), [ws](Node& n) {
        for (std::size_t i = 0; i < ws.size(); ++i) n.grad_of(i) += ws[i] * n.grad;
    });
}

// sum_i W_i * x_i + bias, fused.
inline Var affine_sum(const std::vector<std::pair<Var, Var>>& terms, const Var& bias) {
    Matrix v = bias.value();
    std::vector<NodePtr> parents;
    for (const auto& [w, x] : terms) {
        if (w.cols() != x.rows() || x.cols() != v.cols() || w.rows() != v.rows()) {
            std::ostringstream os;
            os << "affine_sum: incompatible shapes (" << w.rows() << "x" << w.cols()
               << " * " << x.rows() << "x" << x.cols() << " + " << v.rows() << "x"
               << v.cols() << ")";
            throw DimError(os.str());
        }
        v += w.value() * x.value();
        parents.push_back(w.node());
        parents.push_back(x.node());
    }
    parents.push_back(bias.node());
    const std::size_t nt = terms.size();
    return detail::make(std::move(v), std::move(parents), [nt](Node& n) {
        for (std::size_t i = 0; i < nt; ++i) {
            n.grad_of(2 * i) += n.grad * n.parents[2 * i + 1]->value.transpose();
            n.grad_of(2 * i + 1) += n.parents[2 * i]->value.transpose() * n.grad;
        }
        n.grad_of(2 * nt) += n.grad;
    });
}

inline Var affine(const Var& w, const Var& x, const Var& b) {
    return affine_sum({{w, x}}, b);
}

inline Var sum(const Var& a) {
    return detail::make(Matrix::Constant(1, 1, a.value().sum()), {a.node()},
                        [](Node& n) {
                            n.grad_of(0).array() += n.grad(0, 0);
                        });
}

// sum_i (a_i - y_i)^2 over scalar predictions against fixed targets.
inline Var sq_diff_sum(const std::vector<Var>& preds, const std::vector<double>& ys) {
    if (preds.size() != ys.size()) throw DimError("sq_diff_sum: size mismatch");
    double v = 0.0;
    std::vector<NodePtr> parents;
    parents.reserve(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i].rows() != 1 || preds[i].cols() != 1)
            throw DimError("sq_diff_sum: predictions must be scalar");
        const double d = preds[i].value()(0, 0) - ys[i];
        v += d * d;
        parents.push_back(preds[i].node());
    }
    return detail::make(Matrix::Constant(1, 1, v), std::move(parents), [ys](Node& n) {
        const double g = n.grad(0, 0);
        for (std::size_t i = 0; i < ys.size(); ++i)
            n.grad_of(i)(0, 0) += 2.0 * g * (n.parents[i]->value(0, 0) - ys[i]);
    });
}

// sum_i (a_i - b_i)^2 over pairs of scalar variables.
inline Var sq_diff_sum_vars(const std::vector<Var>& a, const std::vector<Var>& b) {
    if (a.size() != b.size()) throw DimError("sq_diff_sum_vars: size mismatch");
    double v = 0.0;
    std::vector<NodePtr> parents;
    parents.reserve(2 * a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i].value()(0, 0) - b[i].value()(0, 0);
        v += d * d;
        parents.push_back(a[i].node());
        parents.push_back(b[i].node());
    }
    const std::size_t n_pairs = a.size();
    return detail::make(Matrix::Constant(1, 1, v), std::move(parents),
                        [n_pairs](Node& n) {
                            const double g = n.grad(0, 0);
                            for (std::size_t i = 0; i < n_pairs; ++i) {
                                const double d = n.parents[2 * i]->value(0, 0) -
                                                 n.parents[2 * i + 1]->value(0, 0);
                                n.grad_of(2 * i)(0, 0) += 2.0 * g * d;
                                n.grad_of(2 * i + 1)(0, 0) -= 2.0 * g * d;
                            }
                        });
}

// Accumulates d(loss)/d(node) for every node reachable from `loss`.
// Leaf nodes keep their grads afterwards; intermediate grads are freed.
inline void backward(const Var& loss) {
    if (loss.rows() != 1 || loss.cols() != 1)
        throw std::invalid_argument("backward: loss must be a 1x1 scalar");

    // Iterative post-order DFS; recursion would blow the stack on long rollouts.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node* p = n->parents[idx++].get();
            if (visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    loss.node()->grad = Matrix::Constant(1, 1, 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && n->grad.size() != 0) n->backprop(*n);
        // Leaves (no backprop) keep their accumulated grads for the caller.
        if (n->backprop) n->grad.resize(0, 0);
    }
}

}  // namespace ad
}  // namespace hrgn
