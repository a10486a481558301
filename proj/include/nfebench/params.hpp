#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nfebench/autodiff.hpp"
#include "nfebench/tensor.hpp"

namespace nfe {

using TensorMap = std::map<std::string, Tensor>;
using VarMap = std::map<std::string, Var>;

// Named trainable parameters plus Adam moment buffers.
class ParamSet {
public:
    void add(const std::string& name, Tensor value);
    bool contains(const std::string& name) const { return values_.count(name) != 0; }
    const Tensor& at(const std::string& name) const;
    Tensor& at(const std::string& name);
    const TensorMap& values() const noexcept { return values_; }
    std::vector<std::string> names() const;
    std::size_t count() const noexcept { return values_.size(); }

    std::uint64_t step_count() const noexcept { return step_count_; }
    const TensorMap& adam_m() const noexcept { return adam_m_; }
    const TensorMap& adam_v() const noexcept { return adam_v_; }

    // Same names and shapes.
    bool congruent(const TensorMap& other) const;
    bool congruent(const ParamSet& other) const { return congruent(other.values_); }

    // Binds each parameter as a tape leaf.
    VarMap bind(Tape& tape, bool requires_grad = true) const;

    friend void adam_step(ParamSet&, const TensorMap&, double, double, double, double);
    friend void ema_update(ParamSet&, const ParamSet&, double);
    friend class ParamSetAccess;

    friend bool operator==(const ParamSet&, const ParamSet&) = default;

private:
    TensorMap values_;
    TensorMap adam_m_;
    TensorMap adam_v_;
    std::uint64_t step_count_ = 0;
};

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam update in place. Non-finite or incongruent gradients
// throw before any parameter is touched.
void adam_step(ParamSet& params, const TensorMap& grads, double lr, double beta1, double beta2, double eps);
inline void adam_step(ParamSet& params, const TensorMap& grads, const AdamConfig& cfg) {
    adam_step(params, grads, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
}

// target <- mu * target + (1 - mu) * source, elementwise.
void ema_update(ParamSet& target, const ParamSet& source, double mu);

struct LossAndGrads {
    double loss = 0.0;
    TensorMap grads;
};

using GraphFn = std::function<Var(Tape&, const VarMap& params, std::span<const Var> inputs)>;

// Builds the graph on a fresh tape, runs the reverse pass, and returns the
// loss together with a gradient for every parameter (zero when unreached).
LossAndGrads forward_backward(const GraphFn& graph, const ParamSet& params, std::span<const Tensor> inputs = {});

// Restores a ParamSet including optimizer state (used by checkpoint loading).
class ParamSetAccess {
public:
    static void set_state(ParamSet& p, TensorMap m, TensorMap v, std::uint64_t steps);
};

}  // namespace nfe
