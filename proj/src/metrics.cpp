#include "nfebench/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "nfebench/error.hpp"

namespace nfe {

namespace {

using Mat = Eigen::MatrixXd;

Mat to_eigen(const Tensor& t) {
    Mat m(t.rows(), t.cols());
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = t(r, c);
    return m;
}

constexpr double kDegenerateEig = 1e-12;
constexpr double kRegularizer = 1e-8;

// Symmetric PSD square root; small negative eigenvalues are clamped to 0.
Mat psd_sqrt(const Mat& s) {
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (s + s.transpose()));
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

double min_eig(const Mat& s) {
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (s + s.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

}  // namespace

GaussianFit fit_gaussian(const Tensor& samples) {
    if (samples.rank() != 2 || samples.rows() < 2) throw InvalidArgument("fit_gaussian: need at least 2 rows");
    const std::size_t n = samples.rows();
    const std::size_t d = samples.cols();
    GaussianFit g;
    g.n = n;
    g.mean.assign(d, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) g.mean[c] += samples(r, c);
    for (double& m : g.mean) m /= static_cast<double>(n);
    g.cov = Tensor::matrix(d, d);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t i = 0; i < d; ++i) {
            const double di = samples(r, i) - g.mean[i];
            for (std::size_t j = i; j < d; ++j) g.cov(i, j) += di * (samples(r, j) - g.mean[j]);
        }
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i; j < d; ++j) {
            g.cov(i, j) /= static_cast<double>(n - 1);
            g.cov(j, i) = g.cov(i, j);
        }
    return g;
}

FrechetResult frechet_distance(const GaussianFit& a, const GaussianFit& b) {
    if (a.mean.size() != b.mean.size()) throw ShapeError("frechet_distance", "dimension mismatch");
    const std::size_t d = a.mean.size();
    FrechetResult out;
    Mat sa = to_eigen(a.cov);
    Mat sb = to_eigen(b.cov);
    if (min_eig(sa) <= kDegenerateEig || min_eig(sb) <= kDegenerateEig) {
        sa += kRegularizer * Mat::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
        sb += kRegularizer * Mat::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
        out.regularized = true;
    }
    double mean_term = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean_term += (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);

    const Mat ra = psd_sqrt(sa);
    const Mat m = ra * sb * ra;
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
    const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

    out.value = std::max(0.0, mean_term + sa.trace() + sb.trace() - 2.0 * tr_sqrt);
    return out;
}

FrechetResult frechet_distance(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols())
        throw ShapeError("frechet_distance", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    if (a.rows() <= a.cols() || b.rows() <= b.cols())
        throw InvalidArgument("frechet_distance: need more samples than dimensions in both sets");
    return frechet_distance(fit_gaussian(a), fit_gaussian(b));
}

SimilarityResult similarity_score(const Tensor& generated, const Tensor& reference) {
    if (!generated.same_shape(reference))
        throw ShapeError("similarity_score", shape_str(generated.shape()) + " vs " + shape_str(reference.shape()));
    SimilarityResult out;
    double acc = 0.0;
    for (std::size_t r = 0; r < generated.rows(); ++r) {
        auto g = generated.row_span(r);
        auto f = reference.row_span(r);
        double dot = 0.0, ng = 0.0, nf = 0.0;
        for (std::size_t k = 0; k < g.size(); ++k) {
            dot += g[k] * f[k];
            ng += g[k] * g[k];
            nf += f[k] * f[k];
        }
        if (ng == 0.0 || nf == 0.0) {
            ++out.skipped;
            continue;
        }
        acc += std::clamp(dot / (std::sqrt(ng) * std::sqrt(nf)), -1.0, 1.0);
        ++out.used;
    }
    out.value = out.used ? acc / static_cast<double>(out.used) : 0.0;
    return out;
}

double transport_cost(const Tensor& start, const Tensor& end) {
    if (!start.same_shape(end) || start.rank() != 2)
        throw ShapeError("transport_cost", shape_str(start.shape()) + " vs " + shape_str(end.shape()));
    if (start.rows() == 0) return 0.0;
    return squared_norm(end - start) / static_cast<double>(start.rows());
}

double straightness(const FieldFn& field, const Tensor& x0, const Tensor& cond, int dense_steps) {
    if (dense_steps < 1) throw InvalidArgument("straightness: dense_steps must be >= 1");
    const std::size_t n = x0.rows();
    std::vector<Tensor> vels;
    vels.reserve(static_cast<std::size_t>(dense_steps));
    Tensor x = x0;
    std::vector<double> times(n);
    for (int k = 0; k < dense_steps; ++k) {
        const double t = static_cast<double>(k) / dense_steps;
        const double dt = static_cast<double>(k + 1) / dense_steps - t;
        std::fill(times.begin(), times.end(), t);
        vels.push_back(field(x, times, cond));
        x = axpy(x, dt, vels.back());
    }
    const Tensor chord = x - x0;
    double acc = 0.0;
    for (const auto& v : vels) acc += squared_norm(v - chord);
    return acc / (static_cast<double>(dense_steps) * static_cast<double>(n));
}

BootstrapInterval paired_bootstrap(std::span<const double> a, std::span<const double> b, int resamples, double level,
                                   Rng& rng) {
    if (a.size() != b.size() || a.empty()) throw InvalidArgument("paired_bootstrap: need equal, non-empty samples");
    if (resamples < 1 || !(level > 0.0 && level < 1.0)) throw InvalidArgument("paired_bootstrap: bad parameters");
    const std::size_t n = a.size();
    std::vector<double> diff(n);
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        diff[i] = a[i] - b[i];
        mean += diff[i];
    }
    mean /= static_cast<double>(n);
    std::vector<double> stats(static_cast<std::size_t>(resamples));
    for (double& s : stats) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += diff[rng.index(n)];
        s = acc / static_cast<double>(n);
    }
    std::sort(stats.begin(), stats.end());
    const double tail = (1.0 - level) / 2.0;
    auto pick = [&](double q) {
        const auto idx = static_cast<std::size_t>(std::clamp(q * (resamples - 1), 0.0, static_cast<double>(resamples - 1)));
        return stats[idx];
    };
    return {mean, pick(tail), pick(1.0 - tail)};
}

}  // namespace nfe
