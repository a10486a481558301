#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "nfebench/models.hpp"
#include "nfebench/rng.hpp"
#include "nfebench/tensor.hpp"

namespace nfe {

struct GaussianFit {
    std::vector<double> mean;  // d
    Tensor cov;                // [d, d], symmetric
    std::size_t n = 0;
};

// Sample mean and unbiased covariance of the rows of `samples`.
GaussianFit fit_gaussian(const Tensor& samples);

struct FrechetResult {
    double value = 0.0;
    bool regularized = false;  // a covariance was degenerate and received +1e-8 I
};

// |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2), both fits in data space.
FrechetResult frechet_distance(const GaussianFit& a, const GaussianFit& b);
FrechetResult frechet_distance(const Tensor& a, const Tensor& b);

struct SimilarityResult {
    double value = 0.0;       // mean cosine similarity over usable pairs, in [-1, 1]
    std::size_t used = 0;
    std::size_t skipped = 0;  // pairs with a zero-norm vector
};

// Mean cosine between generated row i and reference row i.
SimilarityResult similarity_score(const Tensor& generated, const Tensor& reference);

// mean_i |end_i - start_i|^2
double transport_cost(const Tensor& start, const Tensor& end);

// Mean over trajectories and dense time points of |v(x_t, t) - (x_1 - x_0)|^2
// along Euler trajectories of `field` started at `x0`.
double straightness(const FieldFn& field, const Tensor& x0, const Tensor& cond, int dense_steps = 64);

struct BootstrapInterval {
    double mean = 0.0;
    double lo = 0.0;
    double hi = 0.0;
};

// Percentile bootstrap of the mean of paired differences a_i - b_i.
BootstrapInterval paired_bootstrap(std::span<const double> a, std::span<const double> b, int resamples, double level,
                                   Rng& rng);

}  // namespace nfe
