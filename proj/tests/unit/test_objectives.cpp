#include <cmath>

#include "doctest.h"
#include "nfebench/coupling.hpp"
#include "nfebench/error.hpp"
#include "nfebench/objectives.hpp"
#include "nfebench/rng.hpp"
#include "nfebench/schedules.hpp"

using namespace nfe;

namespace {

Batch random_batch(std::size_t b, std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    Batch out;
    out.y = rng.normal_tensor(b, d);
    for (auto& v : out.y.data()) v += 1.5;
    out.cond = rng.normal_tensor(b, 2);
    out.eps = rng.normal_tensor(b, d);
    out.t_or_sigma = sample_fm_times(rng, b);
    return out;
}

TapePredictor constant_predictor(const Tensor& value) {
    return [value](Tape& tape, Var, std::span<const double>, const Tensor&) { return tape.constant(value); };
}

TapePredictor zero_predictor() {
    return [](Tape&, Var x, std::span<const double>, const Tensor&) { return scale(x, 0.0); };
}

double mean_row_sq(const Tensor& a) { return squared_norm(a) / static_cast<double>(a.rows()); }

ConditionalModel tiny(Head h, std::uint64_t seed) {
    TrunkConfig c;
    c.data_dim = 2;
    c.cond_dim = 2;
    c.hidden_dim = 8;
    c.depth = 2;
    c.time_embed_dim = 4;
    Rng rng(seed);
    return make_model(c, h, ModelHyper{}, rng);
}

}  // namespace

TEST_SUITE("objectives") {
    TEST_CASE("FM times stay inside the clamp") {
        Rng rng(1);
        for (double t : sample_fm_times(rng, 10000)) {
            CHECK(t >= kFmTimeClamp);
            CHECK(t <= 1.0 - kFmTimeClamp);
        }
    }

    TEST_CASE("DDPM loss oracles") {
        const auto sched = make_ddpm_schedule(1000);
        Batch b = random_batch(4000, 3, 2);
        Rng rng(3);
        for (auto& t : b.t_or_sigma) t = static_cast<double>(rng.index(1000));
        Tape tape;
        CHECK(ddpm_loss(tape, constant_predictor(b.eps), sched, b).value().item() == 0.0);
        const double zero = ddpm_loss(tape, zero_predictor(), sched, b).value().item();
        CHECK(zero == doctest::Approx(mean_row_sq(b.eps)).epsilon(1e-12));
        CHECK(std::abs(zero - 3.0) < 0.15);
        b.t_or_sigma[0] = 0.5;
        CHECK_THROWS_AS(ddpm_loss(tape, zero_predictor(), sched, b), InvalidArgument);
    }

    TEST_CASE("EDM loss oracles") {
        const double sd = 0.6;
        Batch b = random_batch(64, 2, 4);
        Rng rng(5);
        for (auto& s : b.t_or_sigma) s = sample_sigma_lognormal(rng, -1.2, 1.2);
        Tape tape;
        CHECK(edm_loss(tape, constant_predictor(b.y), sd, b).value().item() == 0.0);

        EdmParams edm;
        edm.sigma_data = sd;
        const TapePredictor zero_f = precondition(zero_predictor(), Head::edm_denoiser, edm);
        const double got = edm_loss(tape, zero_f, sd, b).value().item();
        double expect = 0.0;
        for (std::size_t r = 0; r < b.size(); ++r) {
            const double s = b.t_or_sigma[r];
            const double cskip = sd * sd / (s * s + sd * sd);
            const double lambda = (s * s + sd * sd) / (s * sd * s * sd);
            double row = 0.0;
            for (std::size_t j = 0; j < 2; ++j) {
                const double e = cskip * (b.y(r, j) + s * b.eps(r, j)) - b.y(r, j);
                row += e * e;
            }
            expect += lambda * row;
        }
        CHECK(got == doctest::Approx(expect / b.size()).epsilon(1e-12));
    }

    TEST_CASE("FM loss oracles") {
        Batch b = random_batch(50, 3, 6);
        Tape tape;
        CHECK(fm_loss(tape, constant_predictor(b.y - b.eps), b).value().item() == 0.0);
        CHECK(fm_loss(tape, zero_predictor(), b).value().item() ==
              doctest::Approx(mean_row_sq(b.y - b.eps)).epsilon(1e-12));
        Batch bad = b;
        bad.eps = Tensor::matrix(50, 2);
        CHECK_THROWS_AS(fm_loss(tape, zero_predictor(), bad), ShapeError);
    }

    TEST_CASE("multisample loss under identity coupling and B = 1") {
        auto m = tiny(Head::vector_field, 7);
        Batch b = random_batch(8, 2, 8);
        Coupling id;
        for (std::size_t i = 0; i < 8; ++i) id.permutation.push_back(i);
        id.batch_size = 8;
        Tape tape;
        VarMap vars = m.params.bind(tape);
        auto v = tape_predictor(m, vars);
        CHECK(multisample_fm_loss(tape, v, b, id).value().item() == fm_loss(tape, v, b).value().item());

        Batch one = random_batch(1, 2, 9);
        Coupling c = optimal_coupling(one.y, one.eps);
        CHECK(c.permutation == std::vector<std::size_t>{0});
        CHECK(multisample_fm_loss(tape, v, one, c).value().item() == fm_loss(tape, v, one).value().item());
        CHECK_THROWS_AS(multisample_fm_loss(tape, v, b, c), InvalidArgument);
    }

    TEST_CASE("reflow pairs under a constant field") {
        const std::size_t n = 20;
        const std::uint64_t seed = 31;
        const Tensor eps = Rng(seed).normal_tensor(n, 2);
        Tensor y0(Shape{n, 2});
        for (std::size_t r = 0; r < n; ++r) {
            y0(r, 0) = 1.25;
            y0(r, 1) = -0.5;
        }
        const Tensor drift = y0 - eps;
        FieldFn v = [drift](const Tensor&, std::span<const double>, const Tensor&) { return drift; };
        const Tensor cond = Tensor::matrix(n, 1);
        for (int steps : {1, 7, 100}) {
            Rng rng(seed);
            PairSet p = reflow_pairs(v, 2, cond, steps, rng);
            CHECK(p.eps == eps);
            for (std::size_t i = 0; i < p.y_hat.size(); ++i) CHECK(std::abs(p.y_hat[i] - y0[i]) < 1e-12);
        }
        Rng a(seed), b(seed);
        CHECK(reflow_pairs(v, 2, cond, 5, a).y_hat == reflow_pairs(v, 2, cond, 5, b).y_hat);

        PairSet p{eps, y0, cond};
        Tape tape;
        std::vector<double> t(n, 0.3);
        CHECK(reflow_loss(tape, constant_predictor(drift), p, t).value().item() == 0.0);
    }

    TEST_CASE("reflow pairs converge under step halving") {
        auto m = tiny(Head::vector_field, 10);
        const Tensor cond = Rng(1).normal_tensor(32, 2);
        Rng r1(2), r2(2), r3(2);
        const auto field = model_field(m);
        PairSet p100 = reflow_pairs(field, 2, cond, 100, r1);
        PairSet p200 = reflow_pairs(field, 2, cond, 200, r2);
        PairSet p400 = reflow_pairs(field, 2, cond, 400, r3);
        const double d1 = std::sqrt(squared_norm(p100.y_hat - p200.y_hat));
        const double d2 = std::sqrt(squared_norm(p200.y_hat - p400.y_hat));
        CHECK(d2 < 0.7 * d1);
    }

    TEST_CASE("teacher step agrees with an independent probability-flow step") {
        auto teacher_model = tiny(Head::edm_denoiser, 11);
        const FieldFn teacher = model_field(teacher_model);
        Rng rng(12);
        const Tensor x = rng.normal_tensor(5, 2), cond = rng.normal_tensor(5, 2);
        const std::vector<double> t_hi{80.0, 10.0, 2.0, 0.5, 0.01};
        const std::vector<double> t_lo{40.0, 3.0, 1.5, 0.1, 0.002};

        // dx/dt = (x - D(x, t)) / t, integrated one row at a time.
        auto drift = [&](const Tensor& xr, double t, const Tensor& cr) {
            std::vector<double> tt{t};
            const Tensor d = teacher(xr, tt, cr);
            Tensor out = xr;
            for (std::size_t j = 0; j < out.size(); ++j) out[j] = (xr[j] - d[j]) / t;
            return out;
        };
        const Tensor euler = teacher_step(teacher, x, t_hi, t_lo, cond, TeacherSolver::euler);
        const Tensor heun = teacher_step(teacher, x, t_hi, t_lo, cond, TeacherSolver::heun);
        for (std::size_t r = 0; r < 5; ++r) {
            const Tensor xr = x.slice_rows(r, r + 1), cr = cond.slice_rows(r, r + 1);
            const double h = t_lo[r] - t_hi[r];
            const Tensor k1 = drift(xr, t_hi[r], cr);
            const Tensor e = axpy(xr, h, k1);
            const Tensor k2 = drift(e, t_lo[r], cr);
            for (std::size_t j = 0; j < 2; ++j) {
                CHECK(std::abs(euler(r, j) - e[j]) <= 1e-12 * std::max(1.0, std::abs(e[j])));
                const double hv = xr[j] + 0.5 * h * (k1[j] + k2[j]);
                CHECK(std::abs(heun(r, j) - hv) <= 1e-12 * std::max(1.0, std::abs(hv)));
            }
        }
    }

    TEST_CASE("CD loss is zero for a perfect consistency function and exact teacher") {
        const auto grid = karras_sigma_grid(18, 0.002, 80, 7);
        Batch b = random_batch(10, 2, 13);
        Rng rng(14);
        for (std::size_t r = 0; r < b.size(); ++r) b.level.push_back(static_cast<int>(rng.index(17)));
        // D(x, t) = y for every x on the path y + t eps, so the teacher is exact.
        const Tensor y = b.y;
        FieldFn teacher = [y](const Tensor&, std::span<const double>, const Tensor&) { return y; };
        Tape tape;
        CHECK(cd_loss(tape, constant_predictor(y), constant_predictor(y), teacher, b, grid).value().item() == 0.0);
        const auto short_grid = karras_sigma_grid(1, 0.002, 80, 7);
        CHECK_THROWS(cd_loss(tape, constant_predictor(y), constant_predictor(y), teacher, b, short_grid));
    }

    TEST_CASE("CD passes no gradient into the EMA branch") {
        auto student = tiny(Head::consistency, 15);
        auto ema = tiny(Head::consistency, 16);
        auto teacher = tiny(Head::edm_denoiser, 17);
        const auto grid = karras_sigma_grid(18, 0.002, 80, 7);
        Batch b = random_batch(12, 2, 18);
        Rng rng(19);
        for (std::size_t r = 0; r < b.size(); ++r) b.level.push_back(static_cast<int>(rng.index(17)));
        Tape tape;
        VarMap sv = student.params.bind(tape);
        VarMap ev = ema.params.bind(tape);
        Var loss = cd_loss(tape, tape_predictor(student, sv), tape_predictor(ema, ev), model_field(teacher), b, grid);
        tape.backward(loss);
        CHECK(loss.value().item() > 0.0);
        double student_norm = 0.0;
        for (const auto& [k, v] : ev) CHECK(squared_norm(tape.grad(v)) == 0.0);
        for (const auto& [k, v] : sv) student_norm += squared_norm(tape.grad(v));
        CHECK(student_norm > 0.0);
    }

    TEST_CASE("CD levels ascend") {
        const auto grid = karras_sigma_grid(18, 0.002, 80, 7);
        auto t = cd_levels(grid);
        CHECK(t.front() == 0.002);
        CHECK(t.back() == 80.0);
        for (std::size_t i = 1; i < t.size(); ++i) CHECK(t[i] > t[i - 1]);
    }
}
