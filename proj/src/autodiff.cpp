#include "nfebench/autodiff.hpp"

#include <Eigen/Core>
#include <cmath>

#include "nfebench/error.hpp"

namespace nfe {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;

MapC view(const Tensor& t) {
    return MapC(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
MapM view(Tensor& t) {
    return MapM(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

void require_rank2(const char* op, const Tensor& t) {
    if (t.rank() != 2) throw ShapeError(op, "expected rank 2, got " + shape_str(t.shape()));
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
    require_rank2(op, a);
    if (!a.same_shape(b)) throw ShapeError(op, shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

const Tensor& Var::value() const { return tape_->value(*this); }

Var Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Tensor Tape::grad(Var v) const {
    const Node& n = nodes_[v.id()];
    if (n.has_grad) return n.grad;
    return Tensor(n.value.shape(), 0.0);
}

Var Tape::record(const char* op, Tensor value, std::span<const Var> parents, Backward fn) {
    if (!value.all_finite()) throw NonFiniteError(op);
    Node n;
    n.value = std::move(value);
    n.op = op;
    for (Var p : parents) {
        if (p.tape_ != this) throw InvalidArgument(std::string(op) + ": operand belongs to another tape");
        n.requires_grad = n.requires_grad || nodes_[p.id()].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(Var v, const Tensor& g) { accumulate(v, g.data()); }

void Tape::accumulate(Var v, std::span<const double> g) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
        n.grad = Tensor(n.value.shape(), 0.0);
        n.has_grad = true;
    }
    auto dst = n.grad.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

void Tape::backward(Var loss) {
    if (loss.tape_ != this) throw InvalidArgument("backward: loss belongs to another tape");
    if (value(loss).size() != 1) throw ShapeError("backward", "loss must be a scalar, got " + shape_str(value(loss).shape()));
    for (auto& n : nodes_) {
        n.has_grad = false;
        n.grad = Tensor();
    }
    if (!nodes_[loss.id()].requires_grad) return;
    accumulate(loss, Tensor(value(loss).shape(), 1.0));
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.has_grad || !n.backward) continue;
        // The closure may append to grads of earlier nodes only, so the
        // reference stays valid.
        const Tensor g = n.grad;
        n.backward(*this, g);
    }
}

Var matmul(Var a, Var b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require_rank2("matmul", A);
    require_rank2("matmul", B);
    if (A.cols() != B.rows())
        throw ShapeError("matmul", shape_str(A.shape()) + " x " + shape_str(B.shape()));
    Tensor C = Tensor::matrix(A.rows(), B.cols());
    view(C).noalias() = view(A) * view(B);
    return a.tape().record("matmul", std::move(C), {a, b}, [a, b](Tape& t, const Tensor& g) {
        const Tensor& A = t.value(a);
        const Tensor& B = t.value(b);
        if (t.requires_grad(a)) {
            Tensor ga = Tensor::matrix(A.rows(), A.cols());
            view(ga).noalias() = view(g) * view(B).transpose();
            t.accumulate(a, ga);
        }
        if (t.requires_grad(b)) {
            Tensor gb = Tensor::matrix(B.rows(), B.cols());
            view(gb).noalias() = view(A).transpose() * view(g);
            t.accumulate(b, gb);
        }
    });
}

Var add(Var a, Var b) {
    require_same("add", a.value(), b.value());
    Tensor out = a.value() + b.value();
    return a.tape().record("add", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

Var sub(Var a, Var b) {
    require_same("sub", a.value(), b.value());
    Tensor out = a.value() - b.value();
    return a.tape().record("sub", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        t.accumulate(a, g);
        t.accumulate(b, -1.0 * g);
    });
}

Var mul(Var a, Var b) {
    require_same("mul", a.value(), b.value());
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return a.tape().record("mul", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) {
            Tensor ga = g;
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= t.value(b)[i];
            t.accumulate(a, ga);
        }
        if (t.requires_grad(b)) {
            Tensor gb = g;
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= t.value(a)[i];
            t.accumulate(b, gb);
        }
    });
}

Var add_bias(Var x, Var bias) {
    const Tensor& X = x.value();
    const Tensor& b = bias.value();
    require_rank2("add_bias", X);
    require_rank2("add_bias", b);
    if (b.rows() != 1 || b.cols() != X.cols())
        throw ShapeError("add_bias", shape_str(X.shape()) + " + " + shape_str(b.shape()));
    Tensor out = X;
    view(out).rowwise() += view(b).row(0);
    return x.tape().record("add_bias", std::move(out), {x, bias}, [x, bias](Tape& t, const Tensor& g) {
        t.accumulate(x, g);
        if (t.requires_grad(bias)) {
            Tensor gb = Tensor::matrix(1, g.cols());
            view(gb).row(0) = view(g).colwise().sum();
            t.accumulate(bias, gb);
        }
    });
}

Var scale(Var x, double c) {
    Tensor out = c * x.value();
    return x.tape().record("scale", std::move(out), {x}, [x, c](Tape& t, const Tensor& g) {
        t.accumulate(x, c * g);
    });
}

Var scale_rows(Var x, std::span<const double> w) {
    const Tensor& X = x.value();
    require_rank2("scale_rows", X);
    if (w.size() != X.rows())
        throw ShapeError("scale_rows", std::to_string(w.size()) + " weights for " + shape_str(X.shape()));
    std::vector<double> weights(w.begin(), w.end());
    Tensor out = X;
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (double& v : out.row_span(r)) v *= weights[r];
    return x.tape().record("scale_rows", std::move(out), {x},
                           [x, weights = std::move(weights)](Tape& t, const Tensor& g) {
                               Tensor gx = g;
                               for (std::size_t r = 0; r < gx.rows(); ++r)
                                   for (double& v : gx.row_span(r)) v *= weights[r];
                               t.accumulate(x, gx);
                           });
}

Var tanh(Var x) {
    Tensor out = x.value();
    for (double& v : out.data()) v = std::tanh(v);
    return x.tape().record("tanh", std::move(out), {x}, [x](Tape& t, const Tensor& g) {
        Tensor gx = g;
        const Tensor& X = t.value(x);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            const double th = std::tanh(X[i]);
            gx[i] *= 1.0 - th * th;
        }
        t.accumulate(x, gx);
    });
}

Var silu(Var x) {
    Tensor out = x.value();
    for (double& v : out.data()) v = v * sigmoid(v);
    return x.tape().record("silu", std::move(out), {x}, [x](Tape& t, const Tensor& g) {
        Tensor gx = g;
        const Tensor& X = t.value(x);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            const double s = sigmoid(X[i]);
            gx[i] *= s * (1.0 + X[i] * (1.0 - s));
        }
        t.accumulate(x, gx);
    });
}

Var square(Var x) {
    Tensor out = x.value();
    for (double& v : out.data()) v *= v;
    return x.tape().record("square", std::move(out), {x}, [x](Tape& t, const Tensor& g) {
        Tensor gx = g;
        const Tensor& X = t.value(x);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= 2.0 * X[i];
        t.accumulate(x, gx);
    });
}

Var sum(Var x) {
    double acc = 0.0;
    for (double v : x.value().data()) acc += v;
    return x.tape().record("sum", Tensor::scalar(acc), {x}, [x](Tape& t, const Tensor& g) {
        t.accumulate(x, Tensor(t.value(x).shape(), g.item()));
    });
}

Var mean(Var x) {
    const std::size_t n = x.value().size();
    if (n == 0) throw ShapeError("mean", "empty tensor");
    double acc = 0.0;
    for (double v : x.value().data()) acc += v;
    return x.tape().record("mean", Tensor::scalar(acc / static_cast<double>(n)), {x},
                           [x, n](Tape& t, const Tensor& g) {
                               t.accumulate(x, Tensor(t.value(x).shape(), g.item() / static_cast<double>(n)));
                           });
}

Var concat_cols(std::initializer_list<Var> parts) {
    return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_cols", "no operands");
    const std::size_t rows = parts[0].value().rows();
    std::vector<std::size_t> offsets;
    std::size_t total = 0;
    for (Var p : parts) {
        require_rank2("concat_cols", p.value());
        if (p.value().rows() != rows)
            throw ShapeError("concat_cols", "row counts " + std::to_string(rows) + " vs " +
                                                std::to_string(p.value().rows()));
        offsets.push_back(total);
        total += p.value().cols();
    }
    Tensor out = Tensor::matrix(rows, total);
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& P = parts[k].value();
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(P.row_span(r).begin(), P.cols(), out.row_span(r).begin() + static_cast<std::ptrdiff_t>(offsets[k]));
    }
    std::vector<Var> ps(parts.begin(), parts.end());
    return parts[0].tape().record("concat_cols", std::move(out), ps, [ps, offsets](Tape& t, const Tensor& g) {
        for (std::size_t k = 0; k < ps.size(); ++k) {
            if (!t.requires_grad(ps[k])) continue;
            const std::size_t c = t.value(ps[k]).cols();
            Tensor gp = Tensor::matrix(g.rows(), c);
            for (std::size_t r = 0; r < g.rows(); ++r)
                std::copy_n(g.row_span(r).begin() + static_cast<std::ptrdiff_t>(offsets[k]), c, gp.row_span(r).begin());
            t.accumulate(ps[k], gp);
        }
    });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
    const Tensor& X = x.value();
    require_rank2("slice_cols", X);
    if (begin >= end || end > X.cols())
        throw ShapeError("slice_cols", "range [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                                           shape_str(X.shape()));
    Tensor out = Tensor::matrix(X.rows(), end - begin);
    for (std::size_t r = 0; r < X.rows(); ++r)
        std::copy_n(X.row_span(r).begin() + static_cast<std::ptrdiff_t>(begin), end - begin, out.row_span(r).begin());
    return x.tape().record("slice_cols", std::move(out), {x}, [x, begin, end](Tape& t, const Tensor& g) {
        Tensor gx(t.value(x).shape(), 0.0);
        for (std::size_t r = 0; r < g.rows(); ++r)
            std::copy_n(g.row_span(r).begin(), end - begin, gx.row_span(r).begin() + static_cast<std::ptrdiff_t>(begin));
        t.accumulate(x, gx);
    });
}

Var detach(Var x) {
    Tensor out = x.value();
    return x.tape().record("detach", std::move(out), {}, {});
}

}  // namespace nfe
