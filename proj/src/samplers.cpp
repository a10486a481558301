#include "nfebench/samplers.hpp"

#include <cmath>

#include "nfebench/bespoke.hpp"
#include "nfebench/error.hpp"

namespace nfe {

namespace {

void check_request(const SampleRequest& req, const char* op) {
    if (req.nfe < 1) throw InvalidArgument(std::string(op) + ": nfe must be >= 1");
    if (req.data_dim < 1) throw InvalidArgument(std::string(op) + ": data_dim must be >= 1");
    if (req.cond.rank() != 2 || req.cond.rows() != req.n_samples)
        throw ShapeError(op, "cond must have one row per sample, got " + shape_str(req.cond.shape()));
}

std::vector<double> filled(std::size_t n, double v) { return std::vector<double>(n, v); }

}  // namespace

Tensor sampler_noise(const SampleRequest& req) {
    Rng rng(req.seed);
    return rng.normal_tensor(req.n_samples, static_cast<std::size_t>(req.data_dim));
}

FieldFn counted(FieldFn f, EvalCounter& counter) {
    return [f = std::move(f), &counter](const Tensor& x, std::span<const double> t, const Tensor& cond) {
        counter.bump();
        return f(x, t, cond);
    };
}

Trajectory euler_trajectory(const FieldFn& v, const Tensor& x0, const Tensor& cond, int steps) {
    if (steps < 1) throw InvalidArgument("euler_trajectory: steps must be >= 1");
    Trajectory tr;
    tr.times.reserve(static_cast<std::size_t>(steps) + 1);
    tr.states.reserve(static_cast<std::size_t>(steps) + 1);
    tr.times.push_back(0.0);
    tr.states.push_back(x0);
    Tensor x = x0;
    for (int i = 0; i < steps; ++i) {
        const double t = static_cast<double>(i) / steps;
        const double t_next = static_cast<double>(i + 1) / steps;
        x = axpy(x, t_next - t, v(x, filled(x.rows(), t), cond));
        tr.times.push_back(t_next);
        tr.states.push_back(x);
    }
    return tr;
}

Tensor euler_endpoint(const FieldFn& v, const Tensor& x0, const Tensor& cond, int steps) {
    if (steps < 1) throw InvalidArgument("euler_endpoint: steps must be >= 1");
    Tensor x = x0;
    for (int i = 0; i < steps; ++i) {
        const double t = static_cast<double>(i) / steps;
        const double t_next = static_cast<double>(i + 1) / steps;
        x = axpy(x, t_next - t, v(x, filled(x.rows(), t), cond));
    }
    return x;
}

std::vector<int> ddim_timesteps(int nfe, int T) {
    if (nfe < 1) throw InvalidArgument("ddim: nfe must be >= 1");
    if (nfe > T) throw InvalidArgument("ddim: nfe (" + std::to_string(nfe) + ") exceeds T (" + std::to_string(T) + ")");
    if (nfe == 1) return {T - 1};
    std::vector<int> ts(static_cast<std::size_t>(nfe));
    for (int k = 0; k < nfe; ++k)
        ts[static_cast<std::size_t>(k)] =
            static_cast<int>(std::llround(static_cast<double>(T - 1) * (1.0 - static_cast<double>(k) / (nfe - 1))));
    return ts;
}

Tensor ddim_sample(const FieldFn& eps_model, const DdpmSchedule& sched, const SampleRequest& req) {
    check_request(req, "ddim_sample");
    const std::vector<int> ts = ddim_timesteps(req.nfe, sched.T);
    Tensor x = sampler_noise(req);
    for (std::size_t k = 0; k < ts.size(); ++k) {
        const double ab = sched.alpha_bar[static_cast<std::size_t>(ts[k])];
        const double ab_next = k + 1 < ts.size() ? sched.alpha_bar[static_cast<std::size_t>(ts[k + 1])] : 1.0;
        const Tensor eps = eps_model(x, filled(x.rows(), static_cast<double>(ts[k])), req.cond);
        const Tensor x0 = (1.0 / std::sqrt(ab)) * axpy(x, -std::sqrt(1.0 - ab), eps);
        x = axpy(std::sqrt(ab_next) * x0, std::sqrt(1.0 - ab_next), eps);
    }
    return x;
}

std::vector<double> edm_sampling_sigmas(int nfe, const EdmParams& edm) {
    std::vector<double> s = karras_sigma_grid(nfe, edm.sigma_min, edm.sigma_max, edm.rho).sigmas;
    s.push_back(0.0);
    return s;
}

Tensor edm_euler_sample(const FieldFn& denoiser, std::span<const double> sigmas, const SampleRequest& req) {
    check_request(req, "edm_euler_sample");
    if (sigmas.size() != static_cast<std::size_t>(req.nfe) + 1)
        throw InvalidArgument("edm_euler_sample: need nfe + 1 sigma levels");
    Tensor x = sigmas[0] * sampler_noise(req);
    for (int i = 0; i < req.nfe; ++i) {
        const double s = sigmas[static_cast<std::size_t>(i)];
        const double s_next = sigmas[static_cast<std::size_t>(i) + 1];
        if (!(s > 0.0)) throw InvalidArgument("edm_euler_sample: sigma reached 0 before the final step");
        const Tensor d = (1.0 / s) * (x - denoiser(x, filled(x.rows(), s), req.cond));
        x = axpy(x, s_next - s, d);
    }
    return x;
}

Tensor fm_euler_sample(const FieldFn& v, const SampleRequest& req) {
    check_request(req, "fm_euler_sample");
    return euler_endpoint(v, sampler_noise(req), req.cond, req.nfe);
}

Tensor consistency_sample(const FieldFn& fn, const SigmaGrid& grid, const SampleRequest& req) {
    check_request(req, "consistency_sample");
    if (static_cast<std::size_t>(req.nfe) > grid.sigmas.size())
        throw InvalidArgument("consistency_sample: nfe exceeds the number of grid levels");
    Rng rng(req.seed);
    Tensor z = rng.normal_tensor(req.n_samples, static_cast<std::size_t>(req.data_dim));
    Tensor x = grid.sigmas[0] * z;
    x = fn(x, filled(x.rows(), grid.sigmas[0]), req.cond);
    for (int k = 1; k < req.nfe; ++k) {
        const double s = grid.sigmas[static_cast<std::size_t>(k)];
        const double scale = std::sqrt(std::max(0.0, s * s - grid.sigma_min * grid.sigma_min));
        const Tensor noise = rng.normal_tensor(req.n_samples, static_cast<std::size_t>(req.data_dim));
        x = axpy(x, scale, noise);
        x = fn(x, filled(x.rows(), s), req.cond);
    }
    return x;
}

Tensor bespoke_euler_sample(const FieldFn& v, const BespokeTransform& tr, const SampleRequest& req) {
    check_request(req, "bespoke_euler_sample");
    if (req.nfe != tr.n)
        throw InvalidArgument("bespoke_euler_sample: transform was fitted for " + std::to_string(tr.n) +
                              " steps, requested nfe " + std::to_string(req.nfe));
    tr.validate();
    // x_bar(r) = s(r) x(t(r)); s(0) = 1 so the start is the noise draw itself.
    Tensor xbar = sampler_noise(req);
    for (int i = 0; i < tr.n; ++i) xbar = bespoke_step_transformed(v, tr, i, xbar, req.cond);
    const double s_end = tr.s_of_r.back();
    for (double& val : xbar.data()) val /= s_end;
    return xbar;
}

}  // namespace nfe
