#pragma once

#include <atomic>
#include <cstdint>
#include <span>
#include <vector>

#include "nfebench/models.hpp"
#include "nfebench/schedules.hpp"

namespace nfe {

struct BespokeTransform;

struct SampleRequest {
    int nfe = 1;
    int data_dim = 2;
    Tensor cond;  // [n_samples, cond_dim]
    std::size_t n_samples = 0;
    std::uint64_t seed = 0;
};

// Standard-normal start draw of a request: the first rows*cols normals of Rng(seed).
Tensor sampler_noise(const SampleRequest& req);

// Counts forward evaluations through a FieldFn; NFE is audited against it.
class EvalCounter {
public:
    long count() const noexcept { return n_.load(); }
    void reset() noexcept { n_.store(0); }
    void bump() noexcept { n_.fetch_add(1); }

private:
    std::atomic<long> n_{0};
};

FieldFn counted(FieldFn f, EvalCounter& counter);

struct Trajectory {
    std::vector<double> times;  // strictly increasing
    std::vector<Tensor> states;
};

// Uniform-grid Euler solve of dx/dt = v(x, t) from t = 0 to 1.
// Step i uses dt = t_{i+1} - t_i with t_i = i / steps.
Trajectory euler_trajectory(const FieldFn& v, const Tensor& x0, const Tensor& cond, int steps);
Tensor euler_endpoint(const FieldFn& v, const Tensor& x0, const Tensor& cond, int steps);

// Deterministic DDIM (eta = 0) over nfe evenly spaced timesteps from T-1 down
// to 0; the last update lands on the clean sample (alpha_bar = 1).
std::vector<int> ddim_timesteps(int nfe, int T);
Tensor ddim_sample(const FieldFn& eps_model, const DdpmSchedule& sched, const SampleRequest& req);

// Karras grid of nfe levels followed by a terminal 0 (length nfe + 1).
std::vector<double> edm_sampling_sigmas(int nfe, const EdmParams& edm);
// Euler on dx/dsigma = (x - D(x, sigma)) / sigma; x starts at sigmas[0] * z.
Tensor edm_euler_sample(const FieldFn& denoiser, std::span<const double> sigmas, const SampleRequest& req);

// Euler on the flow ODE from t = 0 (noise) to t = 1 (data).
Tensor fm_euler_sample(const FieldFn& v, const SampleRequest& req);

// One-step (nfe = 1) or multistep consistency sampling over grid.sigmas[0..nfe-1].
Tensor consistency_sample(const FieldFn& consistency_fn, const SigmaGrid& grid, const SampleRequest& req);

// Euler on the scale-time transformed path; refuses nfe != transform.n.
Tensor bespoke_euler_sample(const FieldFn& v, const BespokeTransform& transform, const SampleRequest& req);

}  // namespace nfe
