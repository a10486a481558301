#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "nfebench/tensor.hpp"

namespace nfe {

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;
    const Tensor& value() const;
    Tape& tape() const { return *tape_; }
    std::size_t id() const noexcept { return id_; }

private:
    friend class Tape;
    Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

// Reverse-mode tape over a fixed primitive set. Nodes are appended in
// evaluation order, so reverse iteration is a valid topological order.
// A tape is confined to one thread and normally one training step.
class Tape {
public:
    using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

    Var leaf(Tensor value, bool requires_grad = false);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    const Tensor& value(Var v) const { return nodes_[v.id()].value; }
    bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
    // Zero tensor when no gradient reached the node.
    Tensor grad(Var v) const;

    void backward(Var loss);
    std::size_t size() const noexcept { return nodes_.size(); }

    // Used by primitives. Checks finiteness and wires the backward closure.
    Var record(const char* op, Tensor value, std::span<const Var> parents, Backward fn);
    Var record(const char* op, Tensor value, std::initializer_list<Var> parents, Backward fn) {
        return record(op, std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(fn));
    }
    void accumulate(Var v, const Tensor& g);
    void accumulate(Var v, std::span<const double> g);

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool has_grad = false;
        Backward backward;
        const char* op = "leaf";
    };
    std::vector<Node> nodes_;
};

// Primitives. Every primitive validates shapes and throws ShapeError naming itself.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_bias(Var x, Var bias);  // bias [1,n] added to each row of x [B,n]
Var scale(Var x, double c);
Var scale_rows(Var x, std::span<const double> w);  // row i multiplied by constant w[i]
Var tanh(Var x);
Var silu(Var x);
Var square(Var x);
Var sum(Var x);
Var mean(Var x);
Var concat_cols(std::span<const Var> parts);
Var concat_cols(std::initializer_list<Var> parts);
Var slice_cols(Var x, std::size_t begin, std::size_t end);
// Identity forward, blocks gradient flow (stop-gradient).
Var detach(Var x);

}  // namespace nfe
