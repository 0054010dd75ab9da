#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "sid/rng.hpp"
#include "sid/schedule.hpp"
#include "test_util.hpp"

using namespace sid;

TEST_CASE("single-step schedule") {
    NoiseSchedule s = make_linear_schedule(1, 0.5, 0.5);
    CHECK(s.beta[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(s.alpha_bar[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("two-step schedule alpha_bar") {
    NoiseSchedule s = make_linear_schedule(2, 0.1, 0.3);
    CHECK(s.beta[0] == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(s.beta[1] == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(s.alpha_bar[0] == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(s.alpha_bar[1] == doctest::Approx(0.63).epsilon(1e-12));
}

TEST_CASE("default 1000-step schedule matches independent scalar product") {
    const int T = 1000;
    NoiseSchedule s = make_linear_schedule(T, 1e-4, 0.02);
    // Oracle: recompute the cumulative product one beta at a time from the
    // linear ramp formula, independent of the schedule construction path.
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        double beta = 1e-4 + (0.02 - 1e-4) * static_cast<double>(t) / (T - 1);
        prod *= 1.0 - beta;
        CHECK(std::fabs(s.alpha_bar[t] - prod) <= 1e-6 * prod);
    }
    CHECK(s.alpha_bar[T - 1] == doctest::Approx(prod).epsilon(1e-9));
}

TEST_CASE("schedule arrays within declared ranges") {
    for (int T : {1, 2, 7, 100}) {
        NoiseSchedule s = make_linear_schedule(T, 1e-3, 0.4);
        for (int t = 0; t < T; ++t) {
            CHECK(s.beta[t] > 0.0);
            CHECK(s.beta[t] < 1.0);
            CHECK(s.alpha_bar[t] > 0.0);
            CHECK(s.alpha_bar[t] <= 1.0);
            CHECK(s.posterior_var[t] >= 0.0);
            CHECK(std::isfinite(s.mean_coef_x0[t]));
            CHECK(std::isfinite(s.mean_coef_xt[t]));
            if (t > 0) CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
        }
    }
}

TEST_CASE("schedule construction errors") {
    CHECK_THROWS_AS(make_linear_schedule(0, 0.1, 0.2), std::invalid_argument);
    CHECK_THROWS_AS(make_linear_schedule(10, 0.0, 0.2), std::invalid_argument);
    CHECK_THROWS_AS(make_linear_schedule(10, 0.3, 0.2), std::invalid_argument);
    CHECK_THROWS_AS(make_linear_schedule(10, 0.1, 1.0), std::invalid_argument);
}

TEST_CASE("q_sample with zero noise scales by sqrt(alpha_bar)") {
    NoiseSchedule s = make_linear_schedule(10, 0.05, 0.3);
    Tensor x0 = test::random_image(3, 5, 4, 42);
    Tensor zero(x0.shape());
    for (int t : {0, 4, 9}) {
        Tensor out = q_sample(x0, t, zero, s);
        double a = std::sqrt(s.alpha_bar[t]);
        for (int64_t i = 0; i < x0.numel(); ++i)
            CHECK(out[i] == doctest::Approx(a * x0[i]).epsilon(1e-12));
    }
}

TEST_CASE("q_sample Monte Carlo moments match closed form") {
    NoiseSchedule s = make_linear_schedule(50, 1e-3, 0.3);
    const int t = 5;  // keeps the 5% relative bound many sigmas wide at 1e4 draws
    Tensor x0 = Tensor::from_vector({1, 2, 2}, {0.8, -0.6, 1.0, -0.9});
    Rng rng(7);
    const int draws = 10000;
    Tensor mean(x0.shape());
    Tensor sq(x0.shape());
    for (int d = 0; d < draws; ++d) {
        Tensor noise = Tensor::randn(x0.shape(), rng);
        Tensor out = q_sample(x0, t, noise, s);
        mean.add_(out);
        for (int64_t i = 0; i < sq.numel(); ++i) sq[i] += out[i] * out[i];
    }
    double expect_var = 1.0 - s.alpha_bar[t];
    for (int64_t i = 0; i < x0.numel(); ++i) {
        double m = mean[i] / draws;
        double v = sq[i] / draws - m * m;
        double em = std::sqrt(s.alpha_bar[t]) * x0[i];
        CHECK(std::fabs(m - em) <= 0.05 * std::fabs(em));
        CHECK(std::fabs(v - expect_var) <= 0.05 * expect_var);
    }
}

TEST_CASE("q_sample at nearly-exhausted signal decorrelates from x0") {
    NoiseSchedule s = make_linear_schedule(1000);  // alpha_bar[999] ~ 4e-5
    Rng rng(3);
    Tensor x0 = Tensor::randn({3, 32, 32}, rng);
    Tensor noise = Tensor::randn(x0.shape(), rng);
    Tensor out = q_sample(x0, 999, noise, s);
    // Pearson correlation between out and x0.
    double mx = x0.sum() / x0.numel(), mo = out.sum() / out.numel();
    double sxx = 0, soo = 0, sxo = 0;
    for (int64_t i = 0; i < x0.numel(); ++i) {
        sxx += (x0[i] - mx) * (x0[i] - mx);
        soo += (out[i] - mo) * (out[i] - mo);
        sxo += (x0[i] - mx) * (out[i] - mo);
    }
    CHECK(std::fabs(sxo / std::sqrt(sxx * soo)) < 0.05);
}

TEST_CASE("q_sample shape errors") {
    NoiseSchedule s = make_linear_schedule(4, 0.1, 0.2);
    Tensor x0({3, 4, 4});
    Tensor bad({3, 4, 5});
    CHECK_THROWS_AS(q_sample(x0, 0, bad, s), std::invalid_argument);
    CHECK_THROWS_AS(q_sample(x0, 4, x0, s), std::out_of_range);
    CHECK_THROWS_AS(q_sample(x0, -1, x0, s), std::out_of_range);
}

TEST_CASE("ddpm_step at t=0 ignores the noise argument") {
    NoiseSchedule s = make_linear_schedule(5, 0.05, 0.2);
    Tensor x_t = test::random_image(3, 4, 4, 1);
    Tensor x0h = test::random_image(3, 4, 4, 2);
    Tensor n1 = test::random_image(3, 4, 4, 3);
    Tensor n2 = test::random_image(3, 4, 4, 4);
    Tensor a = ddpm_step(x_t, x0h, 0, n1, s);
    Tensor b = ddpm_step(x_t, x0h, 0, n2, s);
    for (int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("posterior mean coefficients match hand computation for T=2") {
    NoiseSchedule s = make_linear_schedule(2, 0.1, 0.3);
    // Independent hand computation of the DDPM posterior for beta = [0.1, 0.3].
    double ab0 = 0.9, ab1 = 0.63;
    double c0_t1 = std::sqrt(ab0) * 0.3 / (1.0 - ab1);
    double ct_t1 = std::sqrt(0.7) * (1.0 - ab0) / (1.0 - ab1);
    double var_t1 = 0.3 * (1.0 - ab0) / (1.0 - ab1);
    CHECK(s.mean_coef_x0[1] == doctest::Approx(c0_t1).epsilon(1e-12));
    CHECK(s.mean_coef_xt[1] == doctest::Approx(ct_t1).epsilon(1e-12));
    CHECK(s.posterior_var[1] == doctest::Approx(var_t1).epsilon(1e-12));
    CHECK(s.mean_coef_x0[0] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(s.mean_coef_xt[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(s.posterior_var[0] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("reverse chain with oracle x0 predictor reconstructs x0") {
    Rng seed_rng(99);
    for (int rep = 0; rep < 8; ++rep) {
        int T = 1 + static_cast<int>(seed_rng.uniform_below(10));
        NoiseSchedule s = make_linear_schedule(T, 1e-3, 0.25);
        Tensor x0 = Tensor::randn({3, 6, 6}, seed_rng);
        Rng rng(rep);
        Tensor x = Tensor::randn(x0.shape(), rng);  // arbitrary start
        for (int t = T - 1; t >= 0; --t) {
            Tensor noise = Tensor::randn(x0.shape(), rng);
            x = ddpm_step(x, x0, t, noise, s);
        }
        for (int64_t i = 0; i < x.numel(); ++i)
            CHECK(std::fabs(x[i] - x0[i]) <= 1e-4);
    }
}

TEST_CASE("ddpm_step input validation") {
    NoiseSchedule s = make_linear_schedule(3, 0.1, 0.2);
    Tensor a({3, 4, 4});
    Tensor bad({3, 4, 5});
    CHECK_THROWS_AS(ddpm_step(a, bad, 1, a, s), std::invalid_argument);
    CHECK_THROWS_AS(ddpm_step(a, a, 3, a, s), std::out_of_range);
    CHECK_THROWS_AS(ddpm_step(a, a, 1, bad, s), std::invalid_argument);
}
