#include "nfebench/coupling.hpp"

#include <limits>

#include "nfebench/error.hpp"

namespace nfe {

std::vector<std::size_t> solve_assignment(std::span<const double> cost, std::size_t rows, std::size_t cols) {
    if (rows > cols) throw InvalidArgument("solve_assignment: more rows than columns");
    if (cost.size() != rows * cols) throw ShapeError("solve_assignment", "cost matrix size");
    if (rows == 0) return {};

    // Shortest augmenting paths with row/column potentials, 1-based with a
    // virtual column 0. Strict comparisons keep the lowest index on ties.
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(rows + 1, 0.0), v(cols + 1, 0.0);
    std::vector<std::size_t> match(cols + 1, 0), way(cols + 1, 0);
    auto a = [&](std::size_t i, std::size_t j) { return cost[(i - 1) * cols + (j - 1)]; };

    for (std::size_t i = 1; i <= rows; ++i) {
        match[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(cols + 1, inf);
        std::vector<char> used(cols + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = match[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= cols; ++j) {
                if (used[j]) continue;
                const double cur = a(i0, j) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= cols; ++j) {
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<std::size_t> assign(rows, 0);
    for (std::size_t j = 1; j <= cols; ++j)
        if (match[j] != 0) assign[match[j] - 1] = j - 1;
    return assign;
}

double coupling_cost(const Tensor& y, const Tensor& eps, std::span<const std::size_t> perm) {
    if (!y.same_shape(eps)) throw ShapeError("coupling_cost", shape_str(y.shape()) + " vs " + shape_str(eps.shape()));
    const std::size_t B = y.rows();
    if (perm.size() != B) throw InvalidArgument("coupling_cost: permutation length differs from batch size");
    std::vector<char> seen(B, 0);
    for (std::size_t p : perm) {
        if (p >= B || seen[p]) throw InvalidArgument("coupling_cost: permutation is not a bijection");
        seen[p] = 1;
    }
    double total = 0.0;
    for (std::size_t i = 0; i < B; ++i) {
        auto a = y.row_span(i);
        auto b = eps.row_span(perm[i]);
        double d2 = 0.0;
        for (std::size_t k = 0; k < a.size(); ++k) d2 += (a[k] - b[k]) * (a[k] - b[k]);
        total += d2;
    }
    return total / static_cast<double>(B);
}

Coupling optimal_coupling(const Tensor& y, const Tensor& eps) {
    if (y.rank() != 2 || !y.same_shape(eps))
        throw ShapeError("optimal_coupling", shape_str(y.shape()) + " vs " + shape_str(eps.shape()));
    const std::size_t B = y.rows();
    if (B == 0) throw InvalidArgument("optimal_coupling: empty batch");
    std::vector<double> cost(B * B);
    for (std::size_t i = 0; i < B; ++i) {
        auto a = y.row_span(i);
        for (std::size_t j = 0; j < B; ++j) {
            auto b = eps.row_span(j);
            double d2 = 0.0;
            for (std::size_t k = 0; k < a.size(); ++k) d2 += (a[k] - b[k]) * (a[k] - b[k]);
            cost[i * B + j] = d2;
        }
    }
    Coupling c;
    c.batch_size = B;
    c.permutation = solve_assignment(cost, B, B);
    c.cost = coupling_cost(y, eps, c.permutation);
    return c;
}

}  // namespace nfe
