#include <doctest.h>

#include <cmath>

#include "posediff/diffusion.hpp"

using namespace posediff;
namespace ag = posediff::ag;

TEST_CASE("schedule endpoints match the configured range exactly") {
    auto s = build_schedule(1000, 1e-4, 0.02);
    CHECK(s.betas.front() == 1e-4);
    CHECK(s.betas.back() == 0.02);
    CHECK(s.alpha_bar(0) == 1.0);
}

TEST_CASE("schedule invariants: betas bounded, alpha_bars strictly decreasing in (0,1)") {
    auto s = build_schedule(1000, 1e-4, 0.02);
    for (double b : s.betas) {
        CHECK(b > 0.0);
        CHECK(b < 1.0);
    }
    for (int64_t t = 1; t <= s.total_steps; t++) {
        CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
        CHECK(s.alpha_bar(t) > 0.0);
        CHECK(s.alpha_bar(t) < 1.0);
    }
    CHECK_THROWS_AS(build_schedule(0, 1e-4, 0.02), std::invalid_argument);
    CHECK_THROWS_AS(build_schedule(10, 0.0, 0.02), std::invalid_argument);
    CHECK_THROWS_AS(build_schedule(10, 0.03, 0.02), std::invalid_argument);
    CHECK_THROWS_AS(build_schedule(10, 1e-4, 1.0), std::invalid_argument);
}

TEST_CASE("terminal alpha_bar matches an extended-precision product") {
    auto s = build_schedule(1000, 1e-4, 0.02);
    long double prod = 1.0L;
    for (int64_t t = 1; t <= 1000; t++) {
        long double beta = 1e-4L + (0.02L - 1e-4L) * static_cast<long double>(t - 1) / 999.0L;
        prod *= (1.0L - beta);
    }
    double ref = static_cast<double>(prod);
    CHECK(std::abs(s.alpha_bar(1000) - ref) / ref < 1e-12);
}

TEST_CASE("q_sample limits") {
    Rng rng(1);
    auto z0 = rng.normal_tensor<float>({2, 3, 3});
    auto eps = rng.normal_tensor<float>({2, 3, 3});
    auto s = build_schedule(100, 1e-4, 0.02);

    // t = 0 convention: identity
    auto zt0 = q_sample(z0, 0, eps, s);
    CHECK(zt0.v == z0.v);

    // hypothetical alpha_bar = 0: z_t = eps
    DiffusionSchedule degenerate;
    degenerate.total_steps = 1;
    degenerate.betas = {1.0};
    degenerate.alphas = {0.0};
    degenerate.alpha_bars = {1.0, 0.0};
    auto zt1 = q_sample(z0, 1, eps, degenerate);
    CHECK(zt1.v == eps.v);

    CHECK_THROWS_AS(q_sample(z0, 101, eps, s), std::invalid_argument);
    CHECK_THROWS_AS(q_sample(z0, -1, eps, s), std::invalid_argument);
}

TEST_CASE("q_sample Monte Carlo variance matches 1 - alpha_bar") {
    auto s = build_schedule(1000, 1e-4, 0.02);
    int64_t t = 400;
    double want = 1.0 - s.alpha_bar(t);
    Rng rng(7);
    const int64_t n = 100000;
    Tensor<double> z0({1, 1});  // z0 = 0
    double sum = 0, sum2 = 0;
    for (int64_t i = 0; i < n; i++) {
        Tensor<double> eps({1, 1});
        eps[0] = rng.normal();
        auto zt = q_sample(z0, t, eps, s);
        sum += zt[0];
        sum2 += zt[0] * zt[0];
    }
    double var = sum2 / n - (sum / n) * (sum / n);
    // standard error of the sample variance of a normal: var * sqrt(2/(n-1))
    double se = want * std::sqrt(2.0 / (n - 1));
    CHECK(std::abs(var - want) < 3 * se);
}

TEST_CASE("training loss: oracle noise predictor gives zero") {
    auto s = build_schedule(50, 1e-4, 0.02);
    Rng rng(3);
    Tensor<float> z0 = rng.normal_tensor<float>({4, 2, 2});

    // capture the eps drawn inside by inverting q_sample inside the model
    // is not possible; instead check the documented identity by feeding the
    // loss a model that recovers eps from (z_t, t) and the known z0.
    auto model = [&](const ag::Var<float>& zt, const std::vector<int64_t>& t) {
        Tensor<float> eps(zt.shape());
        int64_t per = eps.numel() / eps.shape[0];
        for (int64_t i = 0; i < eps.shape[0]; i++) {
            double ab = s.alpha_bar(t[static_cast<size_t>(i)]);
            for (int64_t j = 0; j < per; j++) {
                eps[i * per + j] = static_cast<float>(
                    (zt.value()[i * per + j] - std::sqrt(ab) * z0[i * per + j]) /
                    std::sqrt(1.0 - ab));
            }
        }
        return ag::Var<float>::leaf(std::move(eps));
    };
    auto loss = diffusion_training_loss(z0, s, rng, model);
    CHECK(loss.value()[0] == doctest::Approx(0.0).epsilon(1e-8));
}

TEST_CASE("training loss: all-zero model scores mean eps^2 near 1") {
    auto s = build_schedule(50, 1e-4, 0.02);
    Rng rng(4);
    Tensor<float> z0 = rng.normal_tensor<float>({4, 4, 4});
    auto zero_model = [](const ag::Var<float>& zt, const std::vector<int64_t>&) {
        return ag::Var<float>::leaf(Tensor<float>::zeros(zt.shape()));
    };
    double total = 0;
    int reps = 60;
    for (int r = 0; r < reps; r++) {
        total += diffusion_training_loss(z0, s, rng, zero_model).value()[0];
    }
    double mean = total / reps;
    double n = reps * 4 * 4 * 4;
    CHECK(std::abs(mean - 1.0) < 3 * std::sqrt(2.0 / n) + 0.01);
}

TEST_CASE("training loss is nonnegative across random configurations") {
    auto s = build_schedule(30, 1e-4, 0.02);
    for (int i = 0; i < 100; i++) {
        Rng rng(static_cast<uint64_t>(1000 + i));
        Tensor<float> z0 = rng.normal_tensor<float>({2, 3});
        auto model = [&](const ag::Var<float>& zt, const std::vector<int64_t>&) {
            Rng mr(static_cast<uint64_t>(i));
            return ag::Var<float>::leaf(mr.normal_tensor<float>(zt.shape()));
        };
        CHECK(diffusion_training_loss(z0, s, rng, model).value()[0] >= 0.0f);
    }
}

TEST_CASE("ddim timestep subsequence") {
    auto ts = ddim_timesteps(1000, 20);
    CHECK(ts.size() == 21);
    CHECK(ts.front() == 1000);
    CHECK(ts.back() == 0);
    for (size_t i = 1; i < ts.size(); i++) {
        CHECK(ts[i] < ts[i - 1]);
    }
    auto one = ddim_timesteps(1000, 1);
    CHECK(one == std::vector<int64_t>{1000, 0});
    CHECK_THROWS_AS(ddim_timesteps(10, 11), std::invalid_argument);
}

TEST_CASE("ddim with the same seed is bit-identical") {
    auto s = build_schedule(100, 1e-4, 0.02);
    auto model = [](const Tensor<float>& z, int64_t t) {
        Tensor<float> eps(z.shape);
        for (int64_t i = 0; i < z.numel(); i++) {
            eps[i] = 0.1f * z[i] + 0.01f * static_cast<float>(t);
        }
        return eps;
    };
    SamplerConfig cfg{10, 0.0, 42};
    auto a = ddim_sample<float>(model, cfg, s, {1, 4, 4});
    auto b = ddim_sample<float>(model, cfg, s, {1, 4, 4});
    CHECK(a.v == b.v);

    SamplerConfig cfg2{10, 0.0, 43};
    auto c = ddim_sample<float>(model, cfg2, s, {1, 4, 4});
    CHECK(a.v != c.v);
}

TEST_CASE("zero-eps model follows the closed-form alpha-bar-ratio trajectory") {
    auto s = build_schedule(200, 1e-4, 0.02);
    auto zero_model = [](const Tensor<double>& z, int64_t) { return Tensor<double>::zeros(z.shape); };
    Rng rng(9);
    Tensor<double> z_init = rng.normal_tensor<double>({2, 3});
    SamplerConfig cfg{8, 0.0, 0};
    auto out = ddim_sample_from(zero_model, z_init, cfg, s);
    // telescoping product: z_final = sqrt(ab_0 / ab_T) * z_init
    double c = std::sqrt(1.0 / s.alpha_bar(200));
    for (int64_t i = 0; i < z_init.numel(); i++) {
        CHECK(std::abs(out[i] - c * z_init[i]) < 1e-6 * std::abs(c * z_init[i]) + 1e-9);
    }
}

TEST_CASE("one-step ddim with an oracle model inverts forward diffusion exactly") {
    auto s = build_schedule(100, 1e-4, 0.02);
    Rng rng(12);
    Tensor<float> z0 = rng.normal_tensor<float>({2, 4});
    Tensor<float> eps = rng.normal_tensor<float>({2, 4});
    Tensor<float> zT = q_sample(z0, s.total_steps, eps, s);
    auto oracle = [&](const Tensor<float>&, int64_t) { return eps; };
    SamplerConfig cfg{1, 0.0, 0};
    auto rec = ddim_sample_from(oracle, zT, cfg, s);
    for (int64_t i = 0; i < z0.numel(); i++) {
        CHECK(std::abs(rec[i] - z0[i]) < 1e-5);
    }
}

TEST_CASE("multi-step ddim with an oracle-style linear model inverts within tolerance") {
    // eps-model consistent with a single true z0: eps(z_t) solves q_sample
    auto s = build_schedule(100, 1e-4, 0.02);
    Rng rng(13);
    Tensor<float> z0 = rng.normal_tensor<float>({1, 4});
    auto oracle = [&](const Tensor<float>& zt, int64_t t) {
        double ab = s.alpha_bar(t);
        Tensor<float> eps(zt.shape);
        for (int64_t i = 0; i < zt.numel(); i++) {
            eps[i] = static_cast<float>((zt[i] - std::sqrt(ab) * z0[i]) / std::sqrt(1.0 - ab));
        }
        return eps;
    };
    Tensor<float> eps0 = rng.normal_tensor<float>({1, 4});
    Tensor<float> zT = q_sample(z0, s.total_steps, eps0, s);
    SamplerConfig cfg{10, 0.0, 0};
    auto rec = ddim_sample_from(oracle, zT, cfg, s);
    for (int64_t i = 0; i < z0.numel(); i++) {
        CHECK(std::abs(rec[i] - z0[i]) < 1e-5);
    }
}
