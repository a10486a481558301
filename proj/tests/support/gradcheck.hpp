#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "nfebench/autodiff.hpp"
#include "nfebench/rng.hpp"
#include "nfebench/tensor.hpp"

namespace nfe::testing {

// A scalar-valued graph over a list of leaves.
using LeafGraph = std::function<Var(Tape&, const std::vector<Var>&)>;

inline double gradcheck_rel(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-3});
}

// Largest relative error between tape gradients and central differences
// over every component of every input.
inline double max_grad_error(const LeafGraph& f, const std::vector<Tensor>& inputs, double h = 1e-5) {
    auto eval = [&](const std::vector<Tensor>& xs) {
        Tape tape;
        std::vector<Var> leaves;
        for (const auto& x : xs) leaves.push_back(tape.leaf(x, true));
        return f(tape, leaves).value().item();
    };
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& x : inputs) leaves.push_back(tape.leaf(x, true));
    Var out = f(tape, leaves);
    tape.backward(out);

    double worst = 0.0;
    std::vector<Tensor> xs = inputs;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Tensor g = tape.grad(leaves[k]);
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            const double orig = xs[k][i];
            xs[k][i] = orig + h;
            const double fp = eval(xs);
            xs[k][i] = orig - h;
            const double fm = eval(xs);
            xs[k][i] = orig;
            worst = std::max(worst, gradcheck_rel(g[i], (fp - fm) / (2.0 * h)));
        }
    }
    return worst;
}

// Contracts a tensor-valued node against fixed random weights so every
// output component receives a distinct upstream gradient.
inline Var contract(Tape& tape, Var y, std::uint64_t seed = 99) {
    Rng rng(seed);
    Tensor w = rng.normal_tensor(y.value().rows(), y.value().cols());
    return sum(mul(y, tape.constant(w)));
}

struct PrimitiveCase {
    std::string name;
    LeafGraph graph;
    std::vector<Tensor> inputs;
};

inline std::vector<PrimitiveCase> primitive_cases(std::uint64_t seed = 5) {
    Rng rng(seed);
    auto m = [&](std::size_t r, std::size_t c) { return rng.normal_tensor(r, c); };
    std::vector<PrimitiveCase> cases;
    cases.push_back({"matmul", [](Tape& t, const std::vector<Var>& v) { return contract(t, matmul(v[0], v[1])); },
                     {m(3, 4), m(4, 2)}});
    cases.push_back({"add", [](Tape& t, const std::vector<Var>& v) { return contract(t, add(v[0], v[1])); },
                     {m(3, 2), m(3, 2)}});
    cases.push_back({"sub", [](Tape& t, const std::vector<Var>& v) { return contract(t, sub(v[0], v[1])); },
                     {m(3, 2), m(3, 2)}});
    cases.push_back({"mul", [](Tape& t, const std::vector<Var>& v) { return contract(t, mul(v[0], v[1])); },
                     {m(3, 2), m(3, 2)}});
    cases.push_back({"add_bias",
                     [](Tape& t, const std::vector<Var>& v) { return contract(t, add_bias(v[0], v[1])); },
                     {m(4, 3), m(1, 3)}});
    cases.push_back({"scale", [](Tape& t, const std::vector<Var>& v) { return contract(t, scale(v[0], -1.7)); },
                     {m(2, 3)}});
    cases.push_back({"scale_rows",
                     [](Tape& t, const std::vector<Var>& v) {
                         const std::vector<double> w{0.5, -2.0, 3.0};
                         return contract(t, scale_rows(v[0], w));
                     },
                     {m(3, 2)}});
    cases.push_back({"tanh", [](Tape& t, const std::vector<Var>& v) { return contract(t, tanh(v[0])); }, {m(3, 3)}});
    cases.push_back({"silu", [](Tape& t, const std::vector<Var>& v) { return contract(t, silu(v[0])); }, {m(3, 3)}});
    cases.push_back({"square", [](Tape& t, const std::vector<Var>& v) { return contract(t, square(v[0])); },
                     {m(3, 3)}});
    cases.push_back({"sum", [](Tape&, const std::vector<Var>& v) { return scale(sum(v[0]), 1.3); }, {m(3, 3)}});
    cases.push_back({"mean", [](Tape&, const std::vector<Var>& v) { return scale(mean(v[0]), 2.1); }, {m(3, 3)}});
    cases.push_back({"concat_cols",
                     [](Tape& t, const std::vector<Var>& v) { return contract(t, concat_cols({v[0], v[1], v[2]})); },
                     {m(3, 1), m(3, 2), m(3, 3)}});
    cases.push_back({"slice_cols",
                     [](Tape& t, const std::vector<Var>& v) { return contract(t, slice_cols(v[0], 1, 3)); },
                     {m(3, 4)}});
    return cases;
}

// Random MLP with `layers` tanh/silu layers; inputs are {x, W1, b1, ..., Wn, bn}.
inline PrimitiveCase mlp_case(int layers, std::uint64_t seed = 17) {
    Rng rng(seed);
    std::vector<Tensor> inputs{rng.normal_tensor(5, 3)};
    std::size_t in = 3;
    for (int l = 0; l < layers; ++l) {
        const std::size_t out = l + 1 == layers ? 2 : 6;
        Tensor w = rng.normal_tensor(in, out);
        for (auto& v : w.data()) v *= 0.5;
        inputs.push_back(w);
        inputs.push_back(rng.normal_tensor(1, out));
        in = out;
    }
    LeafGraph g = [layers](Tape&, const std::vector<Var>& v) {
        Var h = v[0];
        for (int l = 0; l < layers; ++l) {
            h = add_bias(matmul(h, v[1 + 2 * l]), v[2 + 2 * l]);
            if (l + 1 < layers) h = l % 2 == 0 ? silu(h) : tanh(h);
        }
        return mean(square(h));
    };
    return {"mlp" + std::to_string(layers), g, inputs};
}

}  // namespace nfe::testing
