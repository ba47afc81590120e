#include "lmd/lognormal.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace lmd {

void LogNormalSpec::validate() const {
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("sigma must be finite and >= 0");
    if (!(prior_median > 0.0) || !std::isfinite(prior_median))
        throw std::invalid_argument("prior median must be finite and > 0");
}

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) noexcept {
    const std::uint64_t product = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(product >> 32);
    lo = static_cast<std::uint32_t>(product);
}

} // namespace

std::array<std::uint32_t, 4> detail::philox4x32_10(std::array<std::uint32_t, 4> ctr,
                                                   std::array<std::uint32_t, 2> key) noexcept {
    for (int round = 0; round < 10; ++round) {
        std::uint32_t hi0, lo0, hi1, lo1;
        mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
        mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += kPhiloxW0;
        key[1] += kPhiloxW1;
    }
    return ctr;
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id) noexcept : seed_(seed), stream_id_(stream_id) {}

void RngStream::refill() noexcept {
    const std::array<std::uint32_t, 4> ctr{static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32),
                                           static_cast<std::uint32_t>(stream_id_),
                                           static_cast<std::uint32_t>(stream_id_ >> 32)};
    const std::array<std::uint32_t, 2> key{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)};
    block_ = detail::philox4x32_10(ctr, key);
    ++counter_;
    block_pos_ = 0;
}

std::uint64_t RngStream::next_u64() noexcept {
    if (block_pos_ > 2) refill();
    const std::uint64_t lo = block_[block_pos_];
    const std::uint64_t hi = block_[block_pos_ + 1];
    block_pos_ += 2;
    return (hi << 32) | lo;
}

double RngStream::uniform() noexcept {
    // 53 random bits, shifted by half an ulp so 0 is never produced.
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::normal() noexcept {
    if (has_spare_) {
        has_spare_ = false;
        return spare_normal_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_normal_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

std::uint64_t RngStream::below(std::uint64_t bound) noexcept {
    if (bound <= 1) return 0;
    // Rejection sampling keeps the result unbiased.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % bound;
}

std::vector<double> sample_noise(const LogNormalSpec& spec, std::size_t n, RngStream& rng) {
    spec.validate();
    std::vector<double> out(n, 1.0);
    if (spec.sigma == 0.0) return out;
    for (auto& v : out) v = std::exp(spec.sigma * rng.normal());
    return out;
}

double lognormal_density(double sigma, double median, double theta) {
    if (!(theta > 0.0)) throw std::invalid_argument("log-normal density requires theta > 0");
    if (!(sigma > 0.0)) throw std::invalid_argument("log-normal density requires sigma > 0");
    if (!(median > 0.0)) throw std::invalid_argument("log-normal density requires median > 0");
    const double z = (std::log(theta) - std::log(median)) / sigma;
    return std::exp(-0.5 * z * z) / (theta * sigma * std::sqrt(2.0 * std::numbers::pi));
}

double lognormal_cdf(double sigma, double median, double theta) {
    if (theta <= 0.0) return 0.0;
    const double z = (std::log(theta) - std::log(median)) / sigma;
    return 0.5 * std::erfc(-z / std::numbers::sqrt2);
}

double kl_equal_sigma(double mu_q, double mu_p, double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("kl_equal_sigma requires sigma > 0");
    const double d = mu_q - mu_p;
    return d * d / (2.0 * sigma * sigma);
}

double lognormal_mean(double sigma, double median) { return median * std::exp(0.5 * sigma * sigma); }

double lognormal_std(double sigma, double median) {
    return median * std::exp(0.5 * sigma * sigma) * std::sqrt(std::expm1(sigma * sigma));
}

} // namespace lmd
