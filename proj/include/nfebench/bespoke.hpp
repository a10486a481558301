#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "nfebench/samplers.hpp"

namespace nfe {

// Scale-time transformation of a flow's sampling path, x_bar(r) = s(r) x(t(r)),
// piecewise linear between n + 1 uniformly spaced knots r_i = i / n.
struct BespokeTransform {
    int n = 0;
    std::vector<double> r_knots;
    std::vector<double> t_of_r;  // t(0) = 0, t(1) = 1, strictly increasing
    std::vector<double> s_of_r;  // s(0) = 1, strictly positive

    void validate() const;
    static BespokeTransform identity(int n);
};

// Unconstrained parameterization: 2n reals. The first n are logits whose
// normalized softplus values are the t increments; the last n are log s at
// knots 1..n. Any real vector maps to a valid transform.
BespokeTransform transform_from_params(int n, std::span<const double> theta);
std::vector<double> identity_params(int n);

// One Euler step i -> i + 1 in transformed space:
// x_bar' = x_bar + (s_{i+1} - s_i)/s_i * x_bar + s_i (t_{i+1} - t_i) u(x_bar / s_i, t_i).
Tensor bespoke_step_transformed(const FieldFn& u, const BespokeTransform& tr, int i, const Tensor& xbar,
                                const Tensor& cond);
// The same step expressed on data-space states x_i -> x_{i+1}.
Tensor bespoke_step(const FieldFn& u, const BespokeTransform& tr, int i, const Tensor& x, const Tensor& cond);

// Dense reference solutions of the frozen flow, one row per trajectory.
struct TrajectorySet {
    int dense_steps = 0;
    std::vector<Tensor> states;  // dense_steps + 1 states, [n_traj, d] each, at t = k / dense_steps
    Tensor eps;                  // originating noise (== states[0])
    Tensor cond;

    std::size_t size() const { return eps.rows(); }
    // Linear interpolation between neighbouring dense states.
    Tensor state_at(double t) const;
    TrajectorySet subset(std::span<const std::size_t> rows) const;
};

TrajectorySet generate_trajectories(const FieldFn& u, const Tensor& eps, const Tensor& cond, int dense_steps = 512);
TrajectorySet generate_trajectories(const FieldFn& u, int data_dim, const Tensor& cond, Rng& rng,
                                    int dense_steps = 512);

enum class BespokeWeights {
    scale_ratio,  // M_i = s(1) / s(r_i): transformed-space error carried to the endpoint
    uniform       // M_i = 1
};

// Sum over steps of M_i |x_bar(r_i) - step(x_bar(r_{i-1}))|, divided by s(1)
// to express it in data-space units, averaged over trajectories.
double bespoke_loss(const FieldFn& u, const BespokeTransform& tr, const TrajectorySet& traj,
                    BespokeWeights weights = BespokeWeights::scale_ratio);

// sqrt(mean_i |x_hat_i - x_i(1)|^2) of the transformed n-step solve against
// the dense endpoint.
double bespoke_endpoint_rmse(const FieldFn& u, const BespokeTransform& tr, const TrajectorySet& traj);

struct BespokeFitConfig {
    int iterations = 400;
    double lr = 0.02;
    double fd_step = 1e-5;
    double val_fraction = 0.25;
    int eval_every = 10;
    BespokeWeights weights = BespokeWeights::scale_ratio;
    std::uint64_t seed = 0;
};

struct BespokeFitResult {
    BespokeTransform transform;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double identity_train_loss = 0.0;
    double identity_val_loss = 0.0;
    int best_iteration = 0;  // 0 means the identity initialization was kept
    std::vector<double> train_curve;
};

// Adam on the 2n transform parameters starting at the identity. Knot
// gradients use central differences that re-evaluate the field only at the
// moved knot. Returns the iterate with the best validation loss among those
// whose training loss does not exceed the identity's.
BespokeFitResult bespoke_fit(const FieldFn& u, const TrajectorySet& traj, int n, const BespokeFitConfig& cfg = {});

void save_transform(const std::filesystem::path& path, const BespokeTransform& tr, const nlohmann::json& info = {});
BespokeTransform load_transform(const std::filesystem::path& path);

}  // namespace nfe
