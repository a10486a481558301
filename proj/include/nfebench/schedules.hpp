#pragma once

#include <vector>

#include "nfebench/rng.hpp"

namespace nfe {

// Variance-preserving discrete schedule. Index t runs 0..T-1; alpha_bar[t]
// is the cumulative product of (1 - beta) up to and including t.
struct DdpmSchedule {
    int T = 0;
    std::vector<double> beta;
    std::vector<double> alpha_bar;
};

DdpmSchedule make_ddpm_schedule(int T, double beta_start = 1e-4, double beta_end = 2e-2);

struct SigmaGrid {
    std::vector<double> sigmas;  // strictly decreasing, sigmas.front() == sigma_max
    double sigma_min = 0.0;
    double sigma_max = 0.0;
    double rho = 7.0;
};

// Karras rho-interpolated grid between sigma_max and sigma_min (n levels).
SigmaGrid karras_sigma_grid(int n, double sigma_min, double sigma_max, double rho);

struct PrecondCoeffs {
    double c_skip = 0.0;
    double c_in = 0.0;
    double c_out = 0.0;
    double c_noise = 0.0;
    double lambda = 0.0;
    double sigma_data = 0.0;
};

PrecondCoeffs edm_precond(double sigma, double sigma_data);

// Boundary-respecting variant used by the consistency student: c_skip = 1 and
// c_out = 0 exactly at sigma == sigma_min. c_in and c_noise follow EDM so a
// student can start from teacher weights.
PrecondCoeffs consistency_precond(double sigma, double sigma_data, double sigma_min);

// exp(p_mean + p_std * z), z ~ N(0,1).
double sample_sigma_lognormal(Rng& rng, double p_mean, double p_std);

// Hyperparameters of the EDM family; defaults are the published EDM values.
struct EdmParams {
    double sigma_data = 0.5;
    double sigma_min = 0.002;
    double sigma_max = 80.0;
    double rho = 7.0;
    double p_mean = -1.2;
    double p_std = 1.2;
    friend bool operator==(const EdmParams&, const EdmParams&) = default;
};

}  // namespace nfe
