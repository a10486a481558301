#include "nfebench/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "nfebench/error.hpp"
#include "nfebench/samplers.hpp"

namespace nfe {

namespace {

Var mean_sq_rows(Var diff) {
    const double b = static_cast<double>(diff.value().rows());
    return scale(sum(square(diff)), 1.0 / b);
}

Tensor mix_rows(const Tensor& a, std::span<const double> wa, const Tensor& b, std::span<const double> wb) {
    Tensor out = a;
    for (std::size_t r = 0; r < a.rows(); ++r) {
        auto o = out.row_span(r);
        auto br = b.row_span(r);
        for (std::size_t j = 0; j < o.size(); ++j) o[j] = wa[r] * o[j] + wb[r] * br[j];
    }
    return out;
}

}  // namespace

void Batch::validate(const char* op) const {
    if (y.rank() != 2 || y.rows() == 0) throw ShapeError(op, "empty batch");
    if (!eps.same_shape(y)) throw ShapeError(op, "eps " + shape_str(eps.shape()) + " vs y " + shape_str(y.shape()));
    if (cond.rank() != 2 || cond.rows() != y.rows()) throw ShapeError(op, "cond rows differ from batch size");
    if (t_or_sigma.size() != y.rows()) throw ShapeError(op, "one level per row required");
}

std::vector<double> sample_fm_times(Rng& rng, std::size_t n) {
    std::vector<double> t(n);
    for (double& v : t) v = std::clamp(rng.uniform(), kFmTimeClamp, 1.0 - kFmTimeClamp);
    return t;
}

Var ddpm_loss(Tape& tape, const TapePredictor& eps_model, const DdpmSchedule& sched, const Batch& batch) {
    batch.validate("ddpm_loss");
    std::vector<double> a(batch.size()), b(batch.size());
    for (std::size_t r = 0; r < batch.size(); ++r) {
        const double t = batch.t_or_sigma[r];
        if (!(t >= 0.0 && t < sched.T) || t != std::floor(t)) throw InvalidArgument("ddpm_loss: t must be an integer in [0, T)");
        const double ab = sched.alpha_bar[static_cast<std::size_t>(t)];
        a[r] = std::sqrt(ab);
        b[r] = std::sqrt(1.0 - ab);
    }
    const Var xt = tape.constant(mix_rows(batch.y, a, batch.eps, b));
    const Var pred = eps_model(tape, xt, batch.t_or_sigma, batch.cond);
    return mean_sq_rows(sub(pred, tape.constant(batch.eps)));
}

Var edm_loss(Tape& tape, const TapePredictor& denoiser, double sigma_data, const Batch& batch) {
    batch.validate("edm_loss");
    std::vector<double> ones(batch.size(), 1.0), w(batch.size());
    for (std::size_t r = 0; r < batch.size(); ++r) w[r] = std::sqrt(edm_precond(batch.t_or_sigma[r], sigma_data).lambda);
    const Var x = tape.constant(mix_rows(batch.y, ones, batch.eps, batch.t_or_sigma));
    const Var d = denoiser(tape, x, batch.t_or_sigma, batch.cond);
    // lambda |D - y|^2 == |sqrt(lambda) (D - y)|^2
    return mean_sq_rows(scale_rows(sub(d, tape.constant(batch.y)), w));
}

Var fm_loss(Tape& tape, const TapePredictor& v, const Batch& batch) {
    batch.validate("fm_loss");
    std::vector<double> one_minus(batch.size());
    for (std::size_t r = 0; r < batch.size(); ++r) one_minus[r] = 1.0 - batch.t_or_sigma[r];
    const Var xt = tape.constant(mix_rows(batch.y, batch.t_or_sigma, batch.eps, one_minus));
    const Var pred = v(tape, xt, batch.t_or_sigma, batch.cond);
    return mean_sq_rows(sub(pred, tape.constant(batch.y - batch.eps)));
}

Batch apply_coupling(const Batch& batch, const Coupling& coupling) {
    if (coupling.permutation.size() != batch.size())
        throw InvalidArgument("multisample_fm_loss: coupling of size " + std::to_string(coupling.permutation.size()) +
                              " applied to batch of size " + std::to_string(batch.size()));
    Batch out = batch;
    out.eps = batch.eps.gather_rows(coupling.permutation);
    return out;
}

Var multisample_fm_loss(Tape& tape, const TapePredictor& v, const Batch& batch, const Coupling& coupling) {
    return fm_loss(tape, v, apply_coupling(batch, coupling));
}

Var reflow_loss(Tape& tape, const TapePredictor& v, const PairSet& pairs, std::span<const double> t) {
    Batch b;
    b.y = pairs.y_hat;
    b.eps = pairs.eps;
    b.cond = pairs.cond;
    b.t_or_sigma.assign(t.begin(), t.end());
    return fm_loss(tape, v, b);
}

PairSet reflow_pairs(const FieldFn& v, int data_dim, const Tensor& cond, int solver_steps, Rng& rng) {
    if (solver_steps < 1) throw InvalidArgument("reflow_pairs: solver_steps must be >= 1");
    PairSet p;
    p.cond = cond;
    p.eps = rng.normal_tensor(cond.rows(), static_cast<std::size_t>(data_dim));
    p.y_hat = euler_endpoint(v, p.eps, cond, solver_steps);
    return p;
}

void save_pairs(const std::filesystem::path& path, const PairSet& p, const nlohmann::json& info) {
    Blob b;
    b.header["kind"] = "reflow_pairs";
    b.header["info"] = info.is_null() ? nlohmann::json::object() : info;
    b.tensors.emplace("eps", p.eps);
    b.tensors.emplace("y_hat", p.y_hat);
    b.tensors.emplace("cond", p.cond);
    write_blob(path, b);
}

PairSet load_pairs(const std::filesystem::path& path) {
    const Blob b = read_blob(path);
    if (b.header.value("kind", "") != "reflow_pairs") throw IoError("'" + path.string() + "' is not a reflow pair file");
    PairSet p{b.tensors.at("eps"), b.tensors.at("y_hat"), b.tensors.at("cond")};
    if (!p.eps.same_shape(p.y_hat) || p.cond.rows() != p.eps.rows())
        throw IoError("'" + path.string() + "': inconsistent pair tensors");
    return p;
}

std::vector<double> cd_levels(const SigmaGrid& grid) {
    if (grid.sigmas.size() < 2) throw InvalidArgument("cd: grid needs at least 2 levels");
    return {grid.sigmas.rbegin(), grid.sigmas.rend()};
}

Tensor teacher_step(const FieldFn& teacher, const Tensor& x, std::span<const double> t_hi,
                    std::span<const double> t_lo, const Tensor& cond, TeacherSolver solver) {
    const Tensor d_hi = teacher(x, t_hi, cond);
    Tensor slope = x - d_hi;
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (double& v : slope.row_span(r)) v /= t_hi[r];
    Tensor out = x;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto o = out.row_span(r);
        auto s = slope.row_span(r);
        for (std::size_t j = 0; j < o.size(); ++j) o[j] += (t_lo[r] - t_hi[r]) * s[j];
    }
    if (solver == TeacherSolver::euler) return out;

    const Tensor d_lo = teacher(out, t_lo, cond);
    Tensor heun = x;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto h = heun.row_span(r);
        auto s1 = slope.row_span(r);
        auto e = out.row_span(r);
        auto dl = d_lo.row_span(r);
        for (std::size_t j = 0; j < h.size(); ++j) {
            const double s2 = (e[j] - dl[j]) / t_lo[r];
            h[j] += (t_lo[r] - t_hi[r]) * 0.5 * (s1[j] + s2);
        }
    }
    return heun;
}

Var cd_loss(Tape& tape, const TapePredictor& student, const TapePredictor& ema, const FieldFn& teacher,
            const Batch& batch, const SigmaGrid& grid, TeacherSolver solver) {
    if (grid.sigmas.size() < 2) throw InvalidArgument("cd_loss: grid needs at least 2 levels");
    if (batch.y.rank() != 2 || batch.y.rows() == 0 || !batch.eps.same_shape(batch.y))
        throw ShapeError("cd_loss", "bad batch tensors");
    if (batch.level.size() != batch.size()) throw ShapeError("cd_loss", "one level index per row required");
    const std::vector<double> t = cd_levels(grid);
    std::vector<double> t_lo(batch.size()), t_hi(batch.size()), ones(batch.size(), 1.0);
    for (std::size_t r = 0; r < batch.size(); ++r) {
        const int i = batch.level[r];
        if (i < 0 || static_cast<std::size_t>(i) + 1 >= t.size()) throw InvalidArgument("cd_loss: level index out of range");
        t_lo[r] = t[static_cast<std::size_t>(i)];
        t_hi[r] = t[static_cast<std::size_t>(i) + 1];
    }
    const Tensor x_hi = mix_rows(batch.y, ones, batch.eps, t_hi);
    const Tensor x_hat = teacher_step(teacher, x_hi, t_hi, t_lo, batch.cond, solver);
    const Var pred = student(tape, tape.constant(x_hi), t_hi, batch.cond);
    const Var target = detach(ema(tape, tape.constant(x_hat), t_lo, batch.cond));
    return mean_sq_rows(sub(pred, target));
}

}  // namespace nfe
