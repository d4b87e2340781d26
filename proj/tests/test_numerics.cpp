#include <cmath>

#include "doctest.h"
#include "sinkcache/numerics.hpp"
#include "test_helpers.hpp"

using namespace sinkcache;

TEST_CASE("softmax basics") {
    SUBCASE("uniform logits") {
        const std::vector<float> x = {0, 0, 0, 0};
        const auto p = softmax<float>(x);
        for (float v : p) CHECK(v == doctest::Approx(0.25).epsilon(1e-6));
    }
    SUBCASE("analytic two-way split") {
        const std::vector<float> x = {std::log(2.0f), 0.0f};
        const auto p = softmax<float>(x);
        CHECK(p[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-6));
        CHECK(p[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
    }
    SUBCASE("sums to one and stays positive") {
        const auto x = testutil::seeded_vector(33, 99, 8.0);
        const auto p = softmax<float>(x);
        double sum = 0;
        for (float v : p) {
            CHECK(v > 0.0f);
            sum += v;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
    }
    SUBCASE("empty input") { CHECK_THROWS_AS(softmax<float>(std::vector<float>{}), EmptyInputError); }
    SUBCASE("non-finite input") {
        std::vector<float> x = {1.0f, std::numeric_limits<float>::infinity()};
        CHECK_THROWS_AS(softmax<float>(x), NonFiniteError);
    }
}

TEST_CASE("softmax matches 64-bit reference on seeded input") {
    const auto x = testutil::seeded_vector(16, 4242, 6.0);
    const auto p = softmax<float>(x);
    const auto ref = testutil::ref_softmax(testutil::to_double(x));
    for (int i = 0; i < 16; ++i) CHECK(std::abs(p[i] - ref[i]) < 1e-6);
}

TEST_CASE("softmax shift invariance and monotonicity") {
    for (uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
        auto x = testutil::seeded_vector(24, seed, 5.0);
        const auto p = softmax<float>(x);
        auto shifted = x;
        for (float& v : shifted) v += 13.5f;
        const auto q = softmax<float>(shifted);
        for (int i = 0; i < 24; ++i) CHECK(std::abs(p[i] - q[i]) < 1e-6);
        for (int i = 0; i < 24; ++i)
            for (int j = 0; j < 24; ++j)
                if (x[i] > x[j]) CHECK(p[i] > p[j]);
    }
}

TEST_CASE("softmax1 basics") {
    SUBCASE("single zero logit splits with the implicit slot") {
        const std::vector<float> x = {0.0f};
        const auto p = softmax1<float>(x);
        CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-6));
    }
    SUBCASE("analytic value") {
        const std::vector<float> x = {std::log(3.0f)};
        const auto p = softmax1<float>(x);
        CHECK(p[0] == doctest::Approx(0.75).epsilon(1e-6));
    }
    SUBCASE("empty input is allowed: the implicit sink absorbs everything") {
        const auto p = softmax1<float>(std::vector<float>{});
        CHECK(p.empty());
    }
    SUBCASE("large logits do not overflow") {
        const std::vector<float> x = {500.0f, 400.0f};
        const auto p = softmax1<float>(x);
        CHECK(std::isfinite(p[0]));
        CHECK(p[0] == doctest::Approx(1.0).epsilon(1e-5));
    }
    SUBCASE("non-finite input") {
        std::vector<float> x = {std::nanf("")};
        CHECK_THROWS_AS(softmax1<float>(x), NonFiniteError);
    }
}

TEST_CASE("softmax1 equals softmax with a prepended zero, first slot dropped") {
    for (uint64_t seed : {11u, 12u, 13u, 14u, 15u, 16u, 17u, 18u}) {
        const auto x = testutil::seeded_vector(9, seed, 7.0);
        const auto p1 = softmax1<float>(x);
        std::vector<float> ext(x.size() + 1, 0.0f);
        std::copy(x.begin(), x.end(), ext.begin() + 1);
        const auto pe = softmax<float>(ext);
        double sum = 0;
        for (size_t i = 0; i < x.size(); ++i) {
            CHECK(std::abs(p1[i] - pe[i + 1]) < 1e-7);
            sum += p1[i];
        }
        CHECK(sum <= 1.0 + 1e-5);
    }
}

TEST_CASE("cross entropy") {
    SUBCASE("uniform logits over vocab 4") {
        const std::vector<float> logits = {1.5f, 1.5f, 1.5f, 1.5f};
        for (int t = 0; t < 4; ++t)
            CHECK(cross_entropy<float>(logits, t) == doctest::Approx(std::log(4.0)).epsilon(1e-6));
    }
    SUBCASE("saturated one-hot logit") {
        std::vector<float> logits(8, 0.0f);
        logits[3] = 30.0f;
        CHECK(cross_entropy<float>(logits, 3) < 1e-9);
    }
    SUBCASE("seeded logits match a 64-bit reference") {
        const auto logits = testutil::seeded_vector(32, 777, 4.0);
        const auto ref = testutil::ref_softmax(testutil::to_double(logits));
        for (int t : {0, 7, 31}) {
            const double expect = -std::log(ref[t]);
            CHECK(cross_entropy<float>(logits, t) == doctest::Approx(expect).epsilon(1e-5));
        }
    }
    SUBCASE("identity with log-sum-exp") {
        const auto logits = testutil::seeded_vector(16, 555, 5.0);
        for (int t = 0; t < 16; t += 3) {
            const float lhs = cross_entropy<float>(logits, t) + logits[t];
            CHECK(lhs == doctest::Approx(log_sum_exp<float>(logits)).epsilon(1e-5));
        }
    }
    SUBCASE("target out of range") {
        const std::vector<float> logits = {0.0f, 1.0f};
        CHECK_THROWS_AS(cross_entropy<float>(logits, 2), IndexError);
        CHECK_THROWS_AS(cross_entropy<float>(logits, -1), IndexError);
    }
}

TEST_CASE("softmax backward matches finite differences") {
    const auto xf = testutil::seeded_vector(10, 31337, 3.0);
    const auto dpf = testutil::seeded_vector(10, 31338, 1.0);
    const std::vector<double> x = testutil::to_double(xf);
    const std::vector<double> dp = testutil::to_double(dpf);

    for (bool variant1 : {false, true}) {
        std::vector<double> p(x);
        if (variant1)
            softmax1_inplace(p.data(), 10);
        else
            softmax_inplace(p.data(), 10);
        std::vector<double> dz(10);
        softmax_backward<double>(p, dp, dz);

        const double h = 1e-6;
        for (int i = 0; i < 10; ++i) {
            auto eval = [&](double delta) {
                std::vector<double> xx(x);
                xx[i] += delta;
                if (variant1)
                    softmax1_inplace(xx.data(), 10);
                else
                    softmax_inplace(xx.data(), 10);
                double s = 0;
                for (int j = 0; j < 10; ++j) s += xx[j] * dp[j];
                return s;
            };
            const double fd = (eval(h) - eval(-h)) / (2 * h);
            CHECK(dz[i] == doctest::Approx(fd).epsilon(1e-5));
        }
    }
}

TEST_CASE("matrix products agree with naive triple loops") {
    sinkcache::Rng rng(5);
    Matrix<float> a(5, 7), b(7, 4);
    for (float& v : a.data) v = static_cast<float>(rng.uniform() - 0.5);
    for (float& v : b.data) v = static_cast<float>(rng.uniform() - 0.5);
    Matrix<float> c(5, 4);
    matmul(a, b, c);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 4; ++j) {
            double s = 0;
            for (int k = 0; k < 7; ++k) s += static_cast<double>(a(i, k)) * b(k, j);
            CHECK(c(i, j) == doctest::Approx(s).epsilon(1e-5));
        }

    Matrix<float> atb(7, 4);
    matmul_at_b(a, c, atb, false);
    for (int k = 0; k < 7; ++k)
        for (int j = 0; j < 4; ++j) {
            double s = 0;
            for (int i = 0; i < 5; ++i) s += static_cast<double>(a(i, k)) * c(i, j);
            CHECK(atb(k, j) == doctest::Approx(s).epsilon(1e-5));
        }

    Matrix<float> abt(5, 7);
    matmul_a_bt(c, b, abt);
    for (int i = 0; i < 5; ++i)
        for (int k = 0; k < 7; ++k) {
            double s = 0;
            for (int j = 0; j < 4; ++j) s += static_cast<double>(c(i, j)) * b(k, j);
            CHECK(abt(i, k) == doctest::Approx(s).epsilon(1e-5));
        }
}

TEST_CASE("rmsnorm backward matches finite differences") {
    const int n = 6;
    const auto xf = testutil::seeded_vector(n, 606, 2.0);
    const auto gf = testutil::seeded_vector(n, 607, 1.0);
    const auto dyf = testutil::seeded_vector(n, 608, 1.0);
    std::vector<double> x = testutil::to_double(xf), g = testutil::to_double(gf),
                        dy = testutil::to_double(dyf);
    std::vector<double> y(n), dx(n, 0.0), dg(n, 0.0);
    const double inv = rmsnorm<double>(x, g, y);
    rmsnorm_backward<double>(x, g, inv, dy, dx, dg);

    const double h = 1e-6;
    auto loss = [&](std::span<const double> xx, std::span<const double> gg) {
        std::vector<double> yy(n);
        rmsnorm<double>(xx, gg, yy);
        double s = 0;
        for (int i = 0; i < n; ++i) s += yy[i] * dy[i];
        return s;
    };
    for (int i = 0; i < n; ++i) {
        auto xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        CHECK(dx[i] == doctest::Approx((loss(xp, g) - loss(xm, g)) / (2 * h)).epsilon(1e-5));
        auto gp = g, gm = g;
        gp[i] += h;
        gm[i] -= h;
        CHECK(dg[i] == doctest::Approx((loss(x, gp) - loss(x, gm)) / (2 * h)).epsilon(1e-5));
    }
}
