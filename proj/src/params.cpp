#include "nfebench/params.hpp"

#include <cmath>

#include "nfebench/error.hpp"

namespace nfe {

void ParamSet::add(const std::string& name, Tensor value) {
    if (values_.count(name)) throw InvalidArgument("ParamSet: duplicate parameter '" + name + "'");
    adam_m_[name] = Tensor(value.shape(), 0.0);
    adam_v_[name] = Tensor(value.shape(), 0.0);
    values_[name] = std::move(value);
}

const Tensor& ParamSet::at(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw InvalidArgument("ParamSet: no parameter '" + name + "'");
    return it->second;
}

Tensor& ParamSet::at(const std::string& name) {
    auto it = values_.find(name);
    if (it == values_.end()) throw InvalidArgument("ParamSet: no parameter '" + name + "'");
    return it->second;
}

std::vector<std::string> ParamSet::names() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : values_) out.push_back(k);
    return out;
}

bool ParamSet::congruent(const TensorMap& other) const {
    if (other.size() != values_.size()) return false;
    for (const auto& [k, v] : values_) {
        auto it = other.find(k);
        if (it == other.end() || !it->second.same_shape(v)) return false;
    }
    return true;
}

VarMap ParamSet::bind(Tape& tape, bool requires_grad) const {
    VarMap out;
    for (const auto& [k, v] : values_) out.emplace(k, tape.leaf(v, requires_grad));
    return out;
}

void adam_step(ParamSet& p, const TensorMap& grads, double lr, double beta1, double beta2, double eps) {
    if (!p.congruent(grads)) throw ShapeError("adam_step", "gradients are not congruent with parameters");
    for (const auto& [k, g] : grads)
        if (!g.all_finite()) throw NonFiniteError("adam_step (gradient '" + k + "')");

    p.step_count_ += 1;
    const double t = static_cast<double>(p.step_count_);
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    for (auto& [k, w] : p.values_) {
        const Tensor& g = grads.at(k);
        Tensor& m = p.adam_m_.at(k);
        Tensor& v = p.adam_v_.at(k);
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

void ema_update(ParamSet& target, const ParamSet& source, double mu) {
    if (!(mu >= 0.0 && mu <= 1.0)) throw InvalidArgument("ema_update: mu must lie in [0,1]");
    if (!target.congruent(source)) throw ShapeError("ema_update", "target and source are not congruent");
    for (auto& [k, w] : target.values_) {
        const Tensor& s = source.values_.at(k);
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = mu * w[i] + (1.0 - mu) * s[i];
    }
}

LossAndGrads forward_backward(const GraphFn& graph, const ParamSet& params, std::span<const Tensor> inputs) {
    Tape tape;
    const VarMap vars = params.bind(tape, true);
    std::vector<Var> in;
    in.reserve(inputs.size());
    for (const auto& t : inputs) in.push_back(tape.constant(t));
    Var loss = graph(tape, vars, in);
    if (loss.value().size() != 1) throw ShapeError("forward_backward", "graph must return a scalar");
    tape.backward(loss);
    LossAndGrads out;
    out.loss = loss.value().item();
    for (const auto& [k, v] : vars) out.grads.emplace(k, tape.grad(v));
    return out;
}

void ParamSetAccess::set_state(ParamSet& p, TensorMap m, TensorMap v, std::uint64_t steps) {
    if (!p.congruent(m) || !p.congruent(v)) throw ShapeError("set_state", "moment buffers are not congruent");
    p.adam_m_ = std::move(m);
    p.adam_v_ = std::move(v);
    p.step_count_ = steps;
}

}  // namespace nfe
