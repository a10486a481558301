#include <cmath>

#include "doctest.h"
#include "nfebench/bespoke.hpp"
#include "nfebench/error.hpp"
#include "nfebench/models.hpp"
#include "nfebench/rng.hpp"
#include "nfebench/samplers.hpp"
#include "nfebench/schedules.hpp"

using namespace nfe;

namespace {

SampleRequest request(int nfe, std::size_t n, std::uint64_t seed = 3, int d = 2) {
    SampleRequest r;
    r.nfe = nfe;
    r.data_dim = d;
    r.n_samples = n;
    r.cond = Rng(seed + 1000).normal_tensor(n, 2);
    r.seed = seed;
    return r;
}

Tensor target_rows(std::size_t n) {
    Tensor y({n, 2});
    for (std::size_t r = 0; r < n; ++r) {
        y(r, 0) = 0.5 + 0.1 * static_cast<double>(r);
        y(r, 1) = -2.0;
    }
    return y;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

ConditionalModel tiny(Head h, std::uint64_t seed) {
    TrunkConfig c;
    c.data_dim = 2;
    c.cond_dim = 2;
    c.hidden_dim = 16;
    c.depth = 2;
    c.time_embed_dim = 6;
    Rng rng(seed);
    return make_model(c, h, ModelHyper{}, rng);
}

}  // namespace

TEST_SUITE("samplers") {
    TEST_CASE("DDIM one step lands on the oracle target") {
        const auto sched = make_ddpm_schedule(1000);
        const Tensor y = target_rows(6);
        FieldFn oracle = [&](const Tensor& x, std::span<const double> t, const Tensor&) {
            Tensor e = x;
            for (std::size_t r = 0; r < x.rows(); ++r) {
                const double a = sched.alpha_bar[static_cast<std::size_t>(t[r])];
                for (std::size_t j = 0; j < x.cols(); ++j) e(r, j) = (x(r, j) - std::sqrt(a) * y(r, j)) / std::sqrt(1 - a);
            }
            return e;
        };
        for (int nfe : {1, 2, 10}) {
            Tensor out = ddim_sample(oracle, sched, request(nfe, 6));
            CHECK(out.shape() == Shape{6, 2});
            CHECK(max_abs_diff(out, y) <= 1e-10);
        }
        CHECK_THROWS_AS(ddim_sample(oracle, sched, request(1001, 6)), InvalidArgument);
        CHECK_THROWS_AS(ddim_sample(oracle, sched, request(0, 6)), InvalidArgument);
    }

    TEST_CASE("DDIM timesteps include both endpoints") {
        CHECK(ddim_timesteps(1, 1000) == std::vector<int>{999});
        auto ts = ddim_timesteps(10, 1000);
        CHECK(ts.front() == 999);
        CHECK(ts.back() == 0);
        for (std::size_t i = 1; i < ts.size(); ++i) CHECK(ts[i] < ts[i - 1]);
        CHECK(ddim_timesteps(1000, 1000).size() == 1000);
    }

    TEST_CASE("EDM Euler one step collapses onto the oracle target") {
        const Tensor y = target_rows(5);
        FieldFn oracle = [&](const Tensor&, std::span<const double>, const Tensor&) { return y; };
        EdmParams edm;
        auto sig = edm_sampling_sigmas(1, edm);
        CHECK(sig == std::vector<double>{80.0, 0.0});
        Tensor out = edm_euler_sample(oracle, sig, request(1, 5));
        CHECK(max_abs_diff(out, y) <= 1e-10);
        CHECK(edm_euler_sample(oracle, sig, request(1, 5)) == out);
        std::vector<double> bad{80.0, 0.0, 0.0};
        auto r2 = request(2, 5);
        CHECK_THROWS(edm_euler_sample(oracle, bad, r2));
    }

    TEST_CASE("FM Euler one step integrates a constant field exactly") {
        auto req = request(1, 7);
        const Tensor y = target_rows(7);
        const Tensor x0 = sampler_noise(req);
        const Tensor drift = y - x0;
        FieldFn v = [&](const Tensor&, std::span<const double>, const Tensor&) { return drift; };
        CHECK(max_abs_diff(fm_euler_sample(v, req), y) <= 1e-10);
    }

    TEST_CASE("FM Euler on a linear field matches the matrix product") {
        const double A[2][2] = {{-0.7, 0.3}, {0.2, 0.4}};
        FieldFn v = [&](const Tensor& x, std::span<const double>, const Tensor&) {
            Tensor out = x;
            for (std::size_t r = 0; r < x.rows(); ++r) {
                out(r, 0) = A[0][0] * x(r, 0) + A[0][1] * x(r, 1);
                out(r, 1) = A[1][0] * x(r, 0) + A[1][1] * x(r, 1);
            }
            return out;
        };
        for (int nfe : {1, 3, 10, 100}) {
            auto req = request(nfe, 4);
            Tensor x = sampler_noise(req);
            for (int k = 0; k < nfe; ++k) {
                Tensor nx = x;
                for (std::size_t r = 0; r < x.rows(); ++r) {
                    nx(r, 0) = x(r, 0) + (A[0][0] * x(r, 0) + A[0][1] * x(r, 1)) / nfe;
                    nx(r, 1) = x(r, 1) + (A[1][0] * x(r, 0) + A[1][1] * x(r, 1)) / nfe;
                }
                x = nx;
            }
            CHECK(max_abs_diff(fm_euler_sample(v, req), x) <= 1e-10);
        }
    }

    TEST_CASE("FM and EDM Euler converge at first order") {
        // Successive-halving differences shrink by about 2 per doubling.
        const FieldFn v = model_field(tiny(Head::vector_field, 4));
        auto fm = [&](int n) { return fm_euler_sample(v, request(n, 16)); };
        const double f1 = std::sqrt(squared_norm(fm(64) - fm(128)));
        const double f2 = std::sqrt(squared_norm(fm(128) - fm(256)));
        CHECK(f1 / f2 > 1.7);
        CHECK(f1 / f2 < 2.3);

        auto dm = tiny(Head::edm_denoiser, 5);
        const FieldFn d = model_field(dm);
        auto edm = [&](int n) { return edm_euler_sample(d, edm_sampling_sigmas(n, dm.hyper.edm), request(n, 16)); };
        const double e1 = std::sqrt(squared_norm(edm(64) - edm(128)));
        const double e2 = std::sqrt(squared_norm(edm(128) - edm(256)));
        CHECK(e1 / e2 > 1.7);
        CHECK(e1 / e2 < 2.3);
    }

    TEST_CASE("DDIM self-converges towards the full grid") {
        auto m = tiny(Head::noise_pred, 6);
        const FieldFn e = model_field(m);
        const auto sched = make_ddpm_schedule(1000);
        const Tensor full = ddim_sample(e, sched, request(1000, 8));
        const double d100 = std::sqrt(squared_norm(ddim_sample(e, sched, request(100, 8)) - full));
        const double d500 = std::sqrt(squared_norm(ddim_sample(e, sched, request(500, 8)) - full));
        CHECK(d500 < d100);
    }

    TEST_CASE("consistency sampling") {
        auto m = tiny(Head::consistency, 7);
        const FieldFn f = model_field(m);
        const auto grid = karras_sigma_grid(4, m.hyper.edm.sigma_min, m.hyper.edm.sigma_max, m.hyper.edm.rho);
        Tensor one = consistency_sample(f, grid, request(1, 9));
        CHECK(one.shape() == Shape{9, 2});
        CHECK(consistency_sample(f, grid, request(1, 9)) == one);
        CHECK(consistency_sample(f, grid, request(1, 9, 4)) != one);
        CHECK(consistency_sample(f, grid, request(4, 9)).shape() == Shape{9, 2});
        CHECK_THROWS_AS(consistency_sample(f, grid, request(5, 9)), InvalidArgument);

        const Tensor y = target_rows(9);
        FieldFn oracle = [&](const Tensor&, std::span<const double>, const Tensor&) { return y; };
        CHECK(consistency_sample(oracle, grid, request(1, 9)) == y);
    }

    TEST_CASE("identity bespoke transform reproduces FM Euler bit-for-bit") {
        const FieldFn v = model_field(tiny(Head::vector_field, 8));
        for (int n : {1, 5, 8}) {
            auto req = request(n, 11);
            CHECK(bespoke_euler_sample(v, BespokeTransform::identity(n), req) == fm_euler_sample(v, req));
        }
        CHECK_THROWS_AS(bespoke_euler_sample(v, BespokeTransform::identity(5), request(4, 3)), InvalidArgument);
        CHECK_THROWS_AS(bespoke_euler_sample(v, BespokeTransform::identity(5), request(8, 3)), InvalidArgument);
    }

    TEST_CASE("forward evaluations equal nfe") {
        auto fm = model_field(tiny(Head::vector_field, 9));
        auto eps = model_field(tiny(Head::noise_pred, 10));
        auto cm = tiny(Head::consistency, 11);
        auto den = model_field(cm);
        const auto sched = make_ddpm_schedule(1000);
        const auto grid = karras_sigma_grid(10, 0.002, 80, 7);
        EvalCounter c;
        for (int nfe : {1, 2, 3, 5, 10}) {
            auto req = request(nfe, 3);
            c.reset();
            fm_euler_sample(counted(fm, c), req);
            CHECK(c.count() == nfe);
            c.reset();
            ddim_sample(counted(eps, c), sched, req);
            CHECK(c.count() == nfe);
            c.reset();
            edm_euler_sample(counted(den, c), edm_sampling_sigmas(nfe, cm.hyper.edm), req);
            CHECK(c.count() == nfe);
            c.reset();
            consistency_sample(counted(den, c), grid, req);
            CHECK(c.count() == nfe);
            c.reset();
            bespoke_euler_sample(counted(fm, c), BespokeTransform::identity(nfe), req);
            CHECK(c.count() == nfe);
        }
    }

    TEST_CASE("samplers are deterministic under a seed") {
        const FieldFn v = model_field(tiny(Head::vector_field, 12));
        CHECK(fm_euler_sample(v, request(4, 5, 77)) == fm_euler_sample(v, request(4, 5, 77)));
        CHECK(fm_euler_sample(v, request(4, 5, 77)) != fm_euler_sample(v, request(4, 5, 78)));
    }
}
