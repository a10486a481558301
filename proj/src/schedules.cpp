#include "nfebench/schedules.hpp"

#include <cmath>

#include "nfebench/error.hpp"

namespace nfe {

DdpmSchedule make_ddpm_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw InvalidArgument("make_ddpm_schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end))
        throw InvalidArgument("make_ddpm_schedule: need 0 < beta_start <= beta_end < 1");
    DdpmSchedule s;
    s.T = T;
    s.beta.resize(static_cast<std::size_t>(T));
    s.alpha_bar.resize(static_cast<std::size_t>(T));
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        const double b = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / (T - 1);
        prod *= 1.0 - b;
        s.beta[static_cast<std::size_t>(t)] = b;
        s.alpha_bar[static_cast<std::size_t>(t)] = prod;
    }
    return s;
}

SigmaGrid karras_sigma_grid(int n, double sigma_min, double sigma_max, double rho) {
    if (n < 1) throw InvalidArgument("karras_sigma_grid: n must be >= 1");
    if (!(sigma_min > 0.0 && sigma_min < sigma_max)) throw InvalidArgument("karras_sigma_grid: need 0 < sigma_min < sigma_max");
    if (!(rho > 0.0)) throw InvalidArgument("karras_sigma_grid: rho must be > 0");
    SigmaGrid g{{}, sigma_min, sigma_max, rho};
    if (n == 1) {
        g.sigmas = {sigma_max};
        return g;
    }
    const double hi = std::pow(sigma_max, 1.0 / rho);
    const double lo = std::pow(sigma_min, 1.0 / rho);
    g.sigmas.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        g.sigmas[static_cast<std::size_t>(i)] = std::pow(hi + (static_cast<double>(i) / (n - 1)) * (lo - hi), rho);
    // pin endpoints against pow round-off
    g.sigmas.front() = sigma_max;
    g.sigmas.back() = sigma_min;
    return g;
}

PrecondCoeffs edm_precond(double sigma, double sigma_data) {
    if (!(sigma_data > 0.0)) throw InvalidArgument("edm_precond: sigma_data must be > 0");
    if (!(sigma >= 0.0)) throw InvalidArgument("edm_precond: sigma must be >= 0");
    const double s2 = sigma * sigma;
    const double d2 = sigma_data * sigma_data;
    PrecondCoeffs c;
    c.sigma_data = sigma_data;
    c.c_skip = d2 / (s2 + d2);
    c.c_out = sigma * sigma_data / std::sqrt(s2 + d2);
    c.c_in = 1.0 / std::sqrt(s2 + d2);
    c.c_noise = std::log(sigma) / 4.0;  // -inf at sigma == 0; callers never evaluate F there
    c.lambda = sigma > 0.0 ? (s2 + d2) / (s2 * d2) : INFINITY;
    return c;
}

PrecondCoeffs consistency_precond(double sigma, double sigma_data, double sigma_min) {
    if (!(sigma_data > 0.0)) throw InvalidArgument("consistency_precond: sigma_data must be > 0");
    if (!(sigma >= sigma_min)) throw InvalidArgument("consistency_precond: sigma below sigma_min");
    const double d2 = sigma_data * sigma_data;
    const double shifted = sigma - sigma_min;
    PrecondCoeffs c;
    c.sigma_data = sigma_data;
    c.c_skip = d2 / (shifted * shifted + d2);
    c.c_out = sigma_data * shifted / std::sqrt(sigma * sigma + d2);
    c.c_in = 1.0 / std::sqrt(sigma * sigma + d2);
    c.c_noise = std::log(sigma) / 4.0;
    c.lambda = 1.0;
    return c;
}

double sample_sigma_lognormal(Rng& rng, double p_mean, double p_std) {
    if (!(p_std > 0.0)) throw InvalidArgument("sample_sigma_lognormal: p_std must be > 0");
    return std::exp(p_mean + p_std * rng.normal());
}

}  // namespace nfe
