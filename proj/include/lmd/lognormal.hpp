#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace lmd {

namespace detail {
// Raw Philox4x32-10 bijection (exposed for known-answer tests).
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) noexcept;
} // namespace detail

// Noise scale and prior median of a log-normal parameter group.
struct LogNormalSpec {
    double sigma = 0.125;
    double prior_median = 0.01;

    void validate() const;
};

// Counter-based Philox4x32-10 stream. A (seed, stream_id) pair fully
// determines the sequence; distinct stream ids give independent sequences
// without any shared state, so streams can be handed to worker threads and
// replayed serially.
//
// Normal variates use Box-Muller on consecutive uniform pairs; both outputs
// of a pair are consumed in order.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id) noexcept;

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_id_; }

    std::uint64_t next_u64() noexcept;
    double uniform() noexcept;  // open interval (0, 1)
    double normal() noexcept;
    std::uint64_t below(std::uint64_t bound) noexcept;

private:
    void refill() noexcept;

    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::uint64_t counter_ = 0;
    std::array<std::uint32_t, 4> block_{};
    int block_pos_ = 4;
    double spare_normal_ = 0.0;
    bool has_spare_ = false;
};

// eps = exp(sigma * z), z ~ N(0, 1). sigma == 0 yields exact ones.
std::vector<double> sample_noise(const LogNormalSpec& spec, std::size_t n, RngStream& rng);

// LogN(theta | log(median), sigma^2). Throws for theta <= 0 or sigma <= 0.
double lognormal_density(double sigma, double median, double theta);

double lognormal_cdf(double sigma, double median, double theta);

// KL(LogN(mu_q, s^2) || LogN(mu_p, s^2)) = (mu_q - mu_p)^2 / (2 s^2).
double kl_equal_sigma(double mu_q, double mu_p, double sigma);

// Closed-form moments of m * eps.
double lognormal_mean(double sigma, double median = 1.0);
double lognormal_std(double sigma, double median = 1.0);

} // namespace lmd
