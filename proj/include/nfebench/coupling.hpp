#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "nfebench/tensor.hpp"

namespace nfe {

// Pairing of a minibatch of data rows with noise rows.
struct Coupling {
    std::vector<std::size_t> permutation;  // permutation[i] = noise row paired with data row i
    double cost = 0.0;                     // mean squared distance over the pairs
    std::size_t batch_size = 0;
};

// Exact minimum of sum_i |y_i - eps_perm(i)|^2 (Hungarian algorithm, O(B^3)).
Coupling optimal_coupling(const Tensor& y, const Tensor& eps);

// mean_i |y_i - eps_perm(i)|^2; perm must be a bijection on 0..B-1.
double coupling_cost(const Tensor& y, const Tensor& eps, std::span<const std::size_t> perm);

// Rectangular assignment on an explicit cost matrix (rows <= cols), row-major.
// Returns the column assigned to each row.
std::vector<std::size_t> solve_assignment(std::span<const double> cost, std::size_t rows, std::size_t cols);

}  // namespace nfe
