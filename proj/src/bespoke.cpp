#include "nfebench/bespoke.hpp"

#include <cmath>
#include <numeric>

#include "nfebench/error.hpp"

namespace nfe {

namespace {

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<double> filled(std::size_t n, double v) { return std::vector<double>(n, v); }

// States and field values at the current knots.
struct KnotCache {
    std::vector<Tensor> x;  // x(t_k), k = 0..n
    std::vector<Tensor> u;  // u(x(t_k), t_k), k = 0..n-1
};

KnotCache build_cache(const FieldFn& u, const BespokeTransform& tr, const TrajectorySet& traj) {
    KnotCache c;
    for (int k = 0; k <= tr.n; ++k) c.x.push_back(traj.state_at(tr.t_of_r[static_cast<std::size_t>(k)]));
    for (int k = 0; k < tr.n; ++k)
        c.u.push_back(u(c.x[static_cast<std::size_t>(k)], filled(traj.size(), tr.t_of_r[static_cast<std::size_t>(k)]),
                        traj.cond));
    return c;
}

double step_term(const BespokeTransform& tr, const KnotCache& c, int i, BespokeWeights weights) {
    // step i covers knots i-1 -> i, i = 1..n
    const auto k0 = static_cast<std::size_t>(i - 1);
    const auto k1 = static_cast<std::size_t>(i);
    const double s0 = tr.s_of_r[k0];
    const double s1 = tr.s_of_r[k1];
    const double s_end = tr.s_of_r.back();
    const double mult = (s0 / s1) * (tr.t_of_r[k1] - tr.t_of_r[k0]);
    const double M = weights == BespokeWeights::scale_ratio ? s_end / s1 : 1.0;
    const Tensor& xp = c.x[k0];
    const Tensor& xt = c.x[k1];
    const Tensor& up = c.u[k0];
    double acc = 0.0;
    for (std::size_t r = 0; r < xp.rows(); ++r) {
        double e2 = 0.0;
        for (std::size_t j = 0; j < xp.cols(); ++j) {
            const double e = xt(r, j) - (xp(r, j) + mult * up(r, j));
            e2 += e * e;
        }
        acc += std::sqrt(e2);
    }
    // transformed-space residual is s1 * |e|; map back to data units by 1 / s(1)
    return M * s1 * acc / (static_cast<double>(xp.rows()) * s_end);
}

double cached_loss(const BespokeTransform& tr, const KnotCache& c, BespokeWeights weights) {
    double total = 0.0;
    for (int i = 1; i <= tr.n; ++i) total += step_term(tr, c, i, weights);
    return total;
}

}  // namespace

void BespokeTransform::validate() const {
    const auto m = static_cast<std::size_t>(n) + 1;
    if (n < 1 || r_knots.size() != m || t_of_r.size() != m || s_of_r.size() != m)
        throw InvalidArgument("BespokeTransform: knot arrays must have n + 1 entries");
    if (t_of_r.front() != 0.0 || t_of_r.back() != 1.0 || s_of_r.front() != 1.0)
        throw InvalidArgument("BespokeTransform: endpoint constraints t(0)=0, t(1)=1, s(0)=1 violated");
    for (std::size_t i = 0; i + 1 < m; ++i)
        if (!(t_of_r[i + 1] > t_of_r[i])) throw InvalidArgument("BespokeTransform: t must be strictly increasing");
    for (double s : s_of_r)
        if (!(s > 0.0) || !std::isfinite(s)) throw InvalidArgument("BespokeTransform: s must be positive");
}

BespokeTransform BespokeTransform::identity(int n) {
    if (n < 1) throw InvalidArgument("BespokeTransform: n must be >= 1");
    BespokeTransform tr;
    tr.n = n;
    for (int i = 0; i <= n; ++i) {
        tr.r_knots.push_back(static_cast<double>(i) / n);
        tr.t_of_r.push_back(static_cast<double>(i) / n);
        tr.s_of_r.push_back(1.0);
    }
    return tr;
}

std::vector<double> identity_params(int n) { return std::vector<double>(2 * static_cast<std::size_t>(n), 0.0); }

BespokeTransform transform_from_params(int n, std::span<const double> theta) {
    if (n < 1) throw InvalidArgument("transform_from_params: n must be >= 1");
    if (theta.size() != 2 * static_cast<std::size_t>(n)) throw InvalidArgument("transform_from_params: need 2n parameters");
    BespokeTransform tr;
    tr.n = n;
    std::vector<double> inc(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) inc[static_cast<std::size_t>(i)] = softplus(theta[static_cast<std::size_t>(i)]);
    const double total = std::accumulate(inc.begin(), inc.end(), 0.0);
    double t = 0.0;
    tr.t_of_r.push_back(0.0);
    tr.s_of_r.push_back(1.0);
    tr.r_knots.push_back(0.0);
    for (int i = 0; i < n; ++i) {
        t += inc[static_cast<std::size_t>(i)] / total;
        tr.t_of_r.push_back(i + 1 == n ? 1.0 : t);
        tr.s_of_r.push_back(std::exp(theta[static_cast<std::size_t>(n + i)]));
        tr.r_knots.push_back(static_cast<double>(i + 1) / n);
    }
    return tr;
}

Tensor bespoke_step_transformed(const FieldFn& u, const BespokeTransform& tr, int i, const Tensor& xbar,
                                const Tensor& cond) {
    const auto k = static_cast<std::size_t>(i);
    const double s0 = tr.s_of_r[k];
    const double s1 = tr.s_of_r[k + 1];
    const double dt = tr.t_of_r[k + 1] - tr.t_of_r[k];
    Tensor x = xbar;
    for (double& v : x.data()) v /= s0;
    const Tensor vel = u(x, filled(xbar.rows(), tr.t_of_r[k]), cond);
    return axpy(axpy(xbar, (s1 - s0) / s0, xbar), s0 * dt, vel);
}

Tensor bespoke_step(const FieldFn& u, const BespokeTransform& tr, int i, const Tensor& x, const Tensor& cond) {
    const auto k = static_cast<std::size_t>(i);
    const double mult = (tr.s_of_r[k] / tr.s_of_r[k + 1]) * (tr.t_of_r[k + 1] - tr.t_of_r[k]);
    return axpy(x, mult, u(x, filled(x.rows(), tr.t_of_r[k]), cond));
}

Tensor TrajectorySet::state_at(double t) const {
    if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("state_at: t outside [0, 1]");
    const double pos = t * dense_steps;
    auto k = static_cast<std::size_t>(std::floor(pos));
    if (k >= static_cast<std::size_t>(dense_steps)) return states.back();
    const double frac = pos - static_cast<double>(k);
    if (frac == 0.0) return states[k];
    return axpy((1.0 - frac) * states[k], frac, states[k + 1]);
}

TrajectorySet TrajectorySet::subset(std::span<const std::size_t> rows) const {
    TrajectorySet out;
    out.dense_steps = dense_steps;
    out.eps = eps.gather_rows(rows);
    out.cond = cond.gather_rows(rows);
    for (const auto& s : states) out.states.push_back(s.gather_rows(rows));
    return out;
}

TrajectorySet generate_trajectories(const FieldFn& u, const Tensor& eps, const Tensor& cond, int dense_steps) {
    Trajectory tr = euler_trajectory(u, eps, cond, dense_steps);
    TrajectorySet out;
    out.dense_steps = dense_steps;
    out.states = std::move(tr.states);
    out.eps = eps;
    out.cond = cond;
    return out;
}

TrajectorySet generate_trajectories(const FieldFn& u, int data_dim, const Tensor& cond, Rng& rng, int dense_steps) {
    const Tensor eps = rng.normal_tensor(cond.rows(), static_cast<std::size_t>(data_dim));
    return generate_trajectories(u, eps, cond, dense_steps);
}

double bespoke_loss(const FieldFn& u, const BespokeTransform& tr, const TrajectorySet& traj, BespokeWeights weights) {
    tr.validate();
    if (traj.size() == 0) throw InvalidArgument("bespoke_loss: no trajectories");
    return cached_loss(tr, build_cache(u, tr, traj), weights);
}

double bespoke_endpoint_rmse(const FieldFn& u, const BespokeTransform& tr, const TrajectorySet& traj) {
    tr.validate();
    Tensor xbar = traj.eps;
    for (int i = 0; i < tr.n; ++i) xbar = bespoke_step_transformed(u, tr, i, xbar, traj.cond);
    const double s_end = tr.s_of_r.back();
    for (double& v : xbar.data()) v /= s_end;
    return std::sqrt(squared_norm(xbar - traj.states.back()) / static_cast<double>(traj.size()));
}

BespokeFitResult bespoke_fit(const FieldFn& u, const TrajectorySet& traj, int n, const BespokeFitConfig& cfg) {
    if (n < 1) throw InvalidArgument("bespoke_fit: n must be >= 1");
    if (traj.size() < 2) throw InvalidArgument("bespoke_fit: need at least two trajectories");

    // Seeded train/validation partition of the trajectories.
    std::vector<std::size_t> order(traj.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(cfg.seed);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    auto n_val = static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(order.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, order.size() - 1);
    const std::span<const std::size_t> all(order);
    const TrajectorySet val = traj.subset(all.subspan(0, n_val));
    const TrajectorySet train = traj.subset(all.subspan(n_val));

    BespokeFitResult res;
    res.transform = BespokeTransform::identity(n);
    res.identity_train_loss = bespoke_loss(u, res.transform, train, cfg.weights);
    res.identity_val_loss = bespoke_loss(u, res.transform, val, cfg.weights);
    res.train_loss = res.identity_train_loss;
    res.val_loss = res.identity_val_loss;

    std::vector<double> theta = identity_params(n);
    std::vector<double> m(theta.size(), 0.0), v(theta.size(), 0.0);
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double h = cfg.fd_step;
    const auto nn = static_cast<std::size_t>(n);

    for (int it = 1; it <= cfg.iterations; ++it) {
        const BespokeTransform tr = transform_from_params(n, theta);
        KnotCache cache = build_cache(u, tr, train);
        const double loss = cached_loss(tr, cache, cfg.weights);
        if (!std::isfinite(loss))
            throw Error("bespoke_fit: loss became non-finite at iteration " + std::to_string(it) +
                        "; last finite iterate has train loss " + std::to_string(res.train_loss));
        res.train_curve.push_back(loss);

        if (loss <= res.identity_train_loss && (it % cfg.eval_every == 0 || it == cfg.iterations || it == 1)) {
            const double vl = bespoke_loss(u, tr, val, cfg.weights);
            if (vl < res.val_loss) {
                res.val_loss = vl;
                res.train_loss = loss;
                res.transform = tr;
                res.best_iteration = it;
            }
        }

        // dL/dt_k for interior knots: only x(t_k) and u at t_k move.
        std::vector<double> g_t(nn + 1, 0.0);
        for (std::size_t k = 1; k < nn; ++k) {
            double side[2];
            for (int sgn = 0; sgn < 2; ++sgn) {
                BespokeTransform moved = tr;
                moved.t_of_r[k] += sgn == 0 ? h : -h;
                KnotCache c2 = cache;
                c2.x[k] = train.state_at(moved.t_of_r[k]);
                c2.u[k] = u(c2.x[k], filled(train.size(), moved.t_of_r[k]), train.cond);
                side[sgn] = step_term(moved, c2, static_cast<int>(k), cfg.weights) +
                            step_term(moved, c2, static_cast<int>(k) + 1, cfg.weights);
            }
            g_t[k] = (side[0] - side[1]) / (2.0 * h);
        }
        // dL/dlog s_k, no field evaluations needed.
        std::vector<double> g_logs(nn, 0.0);
        for (std::size_t k = 1; k <= nn; ++k) {
            BespokeTransform up = tr, dn = tr;
            up.s_of_r[k] *= std::exp(h);
            dn.s_of_r[k] *= std::exp(-h);
            g_logs[k - 1] = (cached_loss(up, cache, cfg.weights) - cached_loss(dn, cache, cfg.weights)) / (2.0 * h);
        }
        // Chain rule through t_k = sum_{j<k} softplus(theta_j) / S.
        std::vector<double> sp(nn), G(nn, 0.0);
        double S = 0.0;
        for (std::size_t j = 0; j < nn; ++j) S += (sp[j] = softplus(theta[j]));
        for (std::size_t j = 0; j < nn; ++j)
            for (std::size_t k = j + 1; k < nn; ++k) G[j] += g_t[k];
        double weighted = 0.0;
        for (std::size_t j = 0; j < nn; ++j) weighted += G[j] * sp[j];
        std::vector<double> grad(theta.size(), 0.0);
        for (std::size_t j = 0; j < nn; ++j) grad[j] = sigmoid(theta[j]) * (G[j] / S - weighted / (S * S));
        for (std::size_t k = 0; k < nn; ++k) grad[nn + k] = g_logs[k];

        const double bc1 = 1.0 - std::pow(b1, it);
        const double bc2 = 1.0 - std::pow(b2, it);
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
            theta[i] -= cfg.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
        }
    }
    return res;
}

void save_transform(const std::filesystem::path& path, const BespokeTransform& tr, const nlohmann::json& info) {
    tr.validate();
    Blob b;
    b.header["kind"] = "bespoke_transform";
    b.header["n"] = tr.n;
    b.header["info"] = info.is_null() ? nlohmann::json::object() : info;
    auto vec = [](const std::vector<double>& v) { return Tensor({v.size()}, v); };
    b.tensors.emplace("r_knots", vec(tr.r_knots));
    b.tensors.emplace("t_of_r", vec(tr.t_of_r));
    b.tensors.emplace("s_of_r", vec(tr.s_of_r));
    write_blob(path, b);
}

BespokeTransform load_transform(const std::filesystem::path& path) {
    const Blob b = read_blob(path);
    if (b.header.value("kind", "") != "bespoke_transform")
        throw IoError("'" + path.string() + "' is not a bespoke transform file");
    BespokeTransform tr;
    tr.n = b.header.at("n").get<int>();
    tr.r_knots = b.tensors.at("r_knots").vec();
    tr.t_of_r = b.tensors.at("t_of_r").vec();
    tr.s_of_r = b.tensors.at("s_of_r").vec();
    tr.validate();
    return tr;
}

}  // namespace nfe
