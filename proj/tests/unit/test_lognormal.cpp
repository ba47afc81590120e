#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lmd/lognormal.hpp"

using namespace lmd;

namespace {

struct Moments {
    double mean, std, se_mean, se_std;
};

Moments moments(const std::vector<double>& x) {
    const double n = static_cast<double>(x.size());
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= n;
    double m2 = 0.0, m4 = 0.0;
    for (double v : x) {
        const double d = (v - mean) * (v - mean);
        m2 += d;
        m4 += d * d;
    }
    m2 /= n;
    m4 /= n;
    const double sd = std::sqrt(m2);
    // se of the sample std via the delta method on the sample variance
    return {mean, sd, sd / std::sqrt(n), std::sqrt((m4 - m2 * m2) / n) / (2.0 * sd)};
}

// Composite Simpson on [a, b] with n (even) panels.
template <typename F>
double simpson(F f, double a, double b, int n) {
    const double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
    return s * h / 3.0;
}

} // namespace

TEST_CASE("philox known answers") {
    using detail::philox4x32_10;
    CHECK(philox4x32_10({0, 0, 0, 0}, {0, 0}) ==
          std::array<std::uint32_t, 4>{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
    CHECK(philox4x32_10({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}) ==
          std::array<std::uint32_t, 4>{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
    CHECK(philox4x32_10({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}) ==
          std::array<std::uint32_t, 4>{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("streams replay and differ") {
    RngStream a(42, 3), b(42, 3), c(42, 4), d(43, 3);
    bool differs_c = false, differs_d = false;
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next_u64();
        CHECK(x == b.next_u64());
        differs_c |= x != c.next_u64();
        differs_d |= x != d.next_u64();
    }
    CHECK(differs_c);
    CHECK(differs_d);
}

TEST_CASE("uniform stays in the open interval and below is bounded") {
    RngStream rng(1, 0);
    for (int i = 0; i < 100000; ++i) {
        const double u = rng.uniform();
        CHECK_UNARY(u > 0.0 && u < 1.0);
        CHECK(rng.below(7) < 7);
    }
}

TEST_CASE("sigma zero gives exact ones") {
    RngStream rng(0, 0);
    for (double v : sample_noise({0.0, 0.01}, 1000, rng)) CHECK(v == 1.0);
}

TEST_CASE("noise moments match the closed form") {
    const double sigma = 0.125;
    RngStream rng(2024, 0);
    const auto eps = sample_noise({sigma, 0.01}, 1'000'000, rng);
    CHECK(std::all_of(eps.begin(), eps.end(), [](double v) { return v > 0.0; }));
    const auto m = moments(eps);
    const double want_mean = std::exp(sigma * sigma / 2);
    const double want_std = want_mean * std::sqrt(std::exp(sigma * sigma) - 1);
    CHECK(want_mean == doctest::Approx(1.007843).epsilon(1e-6));
    CHECK(want_std == doctest::Approx(0.126475).epsilon(1e-5));
    CHECK(lognormal_mean(sigma) == doctest::Approx(want_mean).epsilon(1e-15));
    CHECK(lognormal_std(sigma) == doctest::Approx(want_std).epsilon(1e-15));
    CHECK(std::abs(m.mean - want_mean) < 3 * m.se_mean);
    CHECK(std::abs(m.std - want_std) < 3 * m.se_std);
}

TEST_CASE("coefficient of variation does not depend on the median") {
    const double sigma = 0.125;
    const double want = std::sqrt(std::exp(sigma * sigma) - 1);
    for (double median : {0.01, 1.0, 100.0}) {
        RngStream rng(77, 0);
        auto x = sample_noise({sigma, 0.01}, 200'000, rng);
        for (double& v : x) v *= median;
        const auto m = moments(x);
        const double ratio = m.std / m.mean;
        // se of the ratio is dominated by the std term
        CHECK(std::abs(ratio - want) < 3 * m.se_std / m.mean);
    }
}

TEST_CASE("scaled samples pass a Kolmogorov-Smirnov test") {
    const double sigma = 0.125, median = 3.0;
    RngStream rng(99, 5);
    auto x = sample_noise({sigma, 0.01}, 20000, rng);
    for (double& v : x) v *= median;
    std::sort(x.begin(), x.end());
    double d = 0.0;
    const double n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double f = lognormal_cdf(sigma, median, x[i]);
        d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
    }
    CHECK(d < 1.628 / std::sqrt(n));  // alpha = 0.01
}

TEST_CASE("density values") {
    CHECK(lognormal_density(1.0, 1.0, 1.0) == doctest::Approx(0.3989423).epsilon(1e-7));
    CHECK_THROWS(lognormal_density(1.0, 1.0, 0.0));
    CHECK_THROWS(lognormal_density(1.0, 1.0, -1.0));
    CHECK_THROWS(lognormal_density(0.0, 1.0, 1.0));
}

TEST_CASE("density integrates to one") {
    for (double sigma : {0.125, 0.5, 1.0}) {
        const double mu = 0.3;
        // substitute theta = exp(u) so the integrand is smooth and compactly supported in practice
        const double total = simpson([&](double u) { return lognormal_density(sigma, std::exp(mu), std::exp(u)) * std::exp(u); },
                                     mu - 12 * sigma, mu + 12 * sigma, 4000);
        CHECK(std::abs(total - 1.0) < 1e-6);
    }
}

TEST_CASE("density mode is a local maximum") {
    const double sigma = 0.4, mu = 0.2;
    const double mode = std::exp(mu - sigma * sigma);
    const double h = 1e-5;
    const double left = lognormal_density(sigma, std::exp(mu), mode - h) - lognormal_density(sigma, std::exp(mu), mode - 2 * h);
    const double right = lognormal_density(sigma, std::exp(mu), mode + 2 * h) - lognormal_density(sigma, std::exp(mu), mode + h);
    CHECK(left > 0.0);
    CHECK(right < 0.0);
}

TEST_CASE("equal-sigma KL") {
    const double sigma = 0.125;
    CHECK(kl_equal_sigma(0.3, 0.3, sigma) == 0.0);
    CHECK(kl_equal_sigma(0.1, -2.0, sigma) == kl_equal_sigma(-2.0, 0.1, sigma));
    CHECK_THROWS(kl_equal_sigma(0.0, 1.0, 0.0));
    const double mu_p = std::log(0.01) + sigma * sigma / 2;
    const double kl = kl_equal_sigma(0.0, mu_p, sigma);
    CHECK(std::abs(kl - 676.34) <= 0.01);

    // integrate q log(q/p) in log space
    const auto normal = [&](double u, double mu) {
        return std::exp(-(u - mu) * (u - mu) / (2 * sigma * sigma)) / (sigma * std::sqrt(2 * std::numbers::pi));
    };
    const double numeric = simpson(
        [&](double u) {
            const double logratio = ((u - mu_p) * (u - mu_p) - u * u) / (2 * sigma * sigma);
            return normal(u, 0.0) * logratio;
        },
        -12 * sigma, 12 * sigma, 4000);
    CHECK(numeric == doctest::Approx(kl).epsilon(1e-9));
}
