#include <cmath>

#include "doctest.h"
#include "nfebench/rng.hpp"
#include "nfebench/schedules.hpp"

using namespace nfe;

TEST_SUITE("schedules") {
    TEST_CASE("DDPM schedule against a direct product") {
        auto s = make_ddpm_schedule(1000);
        CHECK(s.alpha_bar[0] == doctest::Approx(0.9999).epsilon(1e-15));
        double prod = 1.0;
        for (int t = 0; t < 1000; ++t) {
            prod *= 1.0 - s.beta[t];
            CHECK(s.alpha_bar[t] == doctest::Approx(prod).epsilon(1e-12));
            CHECK(s.beta[t] > 0.0);
            CHECK(s.beta[t] < 1.0);
            if (t > 0) CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
            const double a = s.alpha_bar[t];
            CHECK(std::sqrt(a) * std::sqrt(a) + std::sqrt(1 - a) * std::sqrt(1 - a) == doctest::Approx(1.0));
        }
        CHECK(s.alpha_bar.back() < 0.01);
        CHECK(s.beta.back() == doctest::Approx(2e-2));
    }

    TEST_CASE("DDPM T = 1 and invalid T") {
        auto s = make_ddpm_schedule(1);
        REQUIRE(s.alpha_bar.size() == 1);
        CHECK(s.alpha_bar[0] == doctest::Approx(0.9999).epsilon(1e-15));
        CHECK_THROWS(make_ddpm_schedule(0));
    }

    TEST_CASE("Karras grid endpoints and monotonicity") {
        auto g2 = karras_sigma_grid(2, 0.002, 80, 7);
        REQUIRE(g2.sigmas.size() == 2);
        CHECK(g2.sigmas[0] == 80.0);
        CHECK(g2.sigmas[1] == 0.002);
        auto g10 = karras_sigma_grid(10, 0.002, 80, 7);
        CHECK(g10.sigmas.front() == 80.0);
        CHECK(g10.sigmas.back() == 0.002);
        for (int n : {1, 2, 3, 7, 18, 40, 200}) {
            for (double rho : {1.0, 3.0, 7.0}) {
                auto g = karras_sigma_grid(n, 0.01, 50, rho);
                REQUIRE(g.sigmas.size() == static_cast<std::size_t>(n));
                for (std::size_t i = 1; i < g.sigmas.size(); ++i) CHECK(g.sigmas[i] < g.sigmas[i - 1]);
            }
        }
        CHECK(karras_sigma_grid(1, 0.002, 80, 7).sigmas == std::vector<double>{80.0});
        CHECK_THROWS(karras_sigma_grid(0, 0.002, 80, 7));
        CHECK_THROWS(karras_sigma_grid(5, 80, 0.002, 7));
        CHECK_THROWS(karras_sigma_grid(5, 0.0, 80, 7));
    }

    TEST_CASE("EDM preconditioning values") {
        const double sd = 0.7;
        auto c = edm_precond(sd, sd);
        CHECK(c.c_skip == doctest::Approx(0.5));
        CHECK(c.lambda == doctest::Approx(2.0 / (sd * sd)));
        auto z = edm_precond(1e-9, sd);
        CHECK(z.c_skip == doctest::Approx(1.0));
        CHECK(z.c_out == doctest::Approx(0.0));
        for (double s : {0.01, 0.3, 1.0, 5.0, 80.0}) {
            auto k = edm_precond(s, sd);
            CHECK(k.c_in > 0);
            CHECK(k.lambda > 0);
            CHECK(k.lambda * k.c_out * k.c_out == doctest::Approx(1.0));
            CHECK(k.c_noise == doctest::Approx(std::log(s) / 4));
        }
        CHECK_THROWS(edm_precond(1.0, 0.0));
    }

    TEST_CASE("consistency preconditioning is the identity at sigma_min") {
        auto c = consistency_precond(0.002, 0.5, 0.002);
        CHECK(c.c_skip == 1.0);
        CHECK(c.c_out == 0.0);
    }

    TEST_CASE("log-normal sigma draws") {
        Rng a(5), b(5);
        CHECK(sample_sigma_lognormal(a, -1.2, 1.2) == sample_sigma_lognormal(b, -1.2, 1.2));
        Rng z(1);
        CHECK(sample_sigma_lognormal(z, -1.2, 1e-14) == doctest::Approx(std::exp(-1.2)));
        Rng r(9);
        const int n = 100000;
        double s = 0;
        for (int i = 0; i < n; ++i) s += std::log(sample_sigma_lognormal(r, -1.2, 1.2));
        CHECK(std::abs(s / n + 1.2) < 3 * 1.2 / std::sqrt(double(n)));
    }
}
