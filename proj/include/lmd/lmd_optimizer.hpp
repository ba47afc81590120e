#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lmd/lognormal.hpp"
#include "lmd/params.hpp"
#include "lmd/tensor.hpp"

namespace lmd {

// Where the momentum interpolation reads nu from. `lion` interpolates the
// momentum from before this step's EMA update; `literal` reads the freshly
// updated momentum.
enum class MomentumOrder { lion, literal };
enum class DecayMode { multiplicative, additive };
enum class GradScaling { by_theta, none };
enum class SampleMode { sampled, mean };

std::string_view to_string(MomentumOrder v) noexcept;
std::string_view to_string(DecayMode v) noexcept;
std::string_view to_string(GradScaling v) noexcept;
std::string_view to_string(SampleMode v) noexcept;

double default_prior_median(double sigma);  // 0.01 * exp(sigma^2 / 2)

struct LmdHyper {
    double eta = 0.005;
    double sigma = 0.125;
    double m_r = default_prior_median(0.125);
    double beta1 = 0.95;
    double beta2 = 0.99;
    std::optional<double> grad_clip;
    MomentumOrder momentum_order = MomentumOrder::lion;
    DecayMode decay = DecayMode::multiplicative;
    GradScaling grad_scaling = GradScaling::by_theta;

    // Temperature normalized so that r(1) = 1: tau = -sigma^2 / log(m_r).
    double tau() const;
    // Log-space decay rate per unit learning rate: alpha = eta * tau / sigma^2 = -eta / log(m_r).
    double alpha(double lr) const;
    void validate() const;
};

struct MedianPair {
    double plus;
    double minus;
};

// Median initialization from a default weight theta0 so that
// E[theta_plus - theta_minus] = theta0.
MedianPair init_from_default(double theta0, const LmdHyper& hyper);

struct ScaleParamInit {
    double m_plus;
    double m_minus;
    double m_r;
    double tau;
};

// Normalization gains: mean one, negative half fixed at zero, regularizer
// equal to one at theta = 2.
ScaleParamInit init_scale_param(double sigma);

// Per-tensor optimizer state. Both halves of the EG+- pair share a shape.
struct LmdParam {
    std::string name;
    ParamKind kind = ParamKind::weight;
    double m_r = 0.0;
    double anchor = 1.0;  // theta at which the regularizer equals one
    Tensor m_plus;
    Tensor m_minus;
    Tensor nu_plus;
    Tensor nu_minus;

    bool is_scale() const noexcept { return kind == ParamKind::scale; }
};

struct SignedPair {
    Tensor plus;
    Tensor minus;
};

// One sampled (or mean) evaluation point theta = m * eps for every tensor.
struct SampleContext {
    SampleMode mode = SampleMode::sampled;
    std::vector<SignedPair> theta;

    // theta_plus - theta_minus per tensor, the weights the network sees.
    std::vector<Tensor> trick() const;
};

using SignedGradient = std::vector<SignedPair>;

class LmdOptimizer {
public:
    LmdOptimizer(LmdHyper hyper, const ParamSet& defaults);

    const LmdHyper& hyper() const noexcept { return hyper_; }
    const std::vector<LmdParam>& params() const noexcept { return params_; }
    std::vector<LmdParam>& params() noexcept { return params_; }
    std::uint64_t step_count() const noexcept { return step_count_; }

    // Draws eps for each tensor in order (plus half, then minus half).
    SampleContext sample(RngStream& rng, SampleMode mode = SampleMode::sampled) const;

    // g_plus = theta_plus * grad, g_minus = -theta_minus * grad (or the
    // unscaled +-grad under GradScaling::none).
    SignedGradient grad_transform(const SampleContext& ctx, std::span<const Tensor> grads) const;

    // tau * (theta R'(theta) - 1) per entry; entries with m = 0 get 0.
    SignedGradient reg_gradient(const SampleContext& ctx) const;
    double reg_value(const LmdParam& param, double theta) const;

    // Ordered arithmetic mean over all contributions.
    static SignedGradient aggregate(std::span<const SignedGradient> contributions);

    // Sign-momentum multiplicative median update. Throws NumericalError and
    // leaves the state untouched if g or r has a non-finite entry.
    void step(const SignedGradient& g, const SignedGradient& r, std::optional<double> lr = std::nullopt);

    // MC loss mean + sum_i tau_i * KL(LogN(log m_i, s^2) || LogN(log m_r, s^2)).
    double elbo_diagnostic(std::span<const double> loss_samples) const;

    std::vector<Tensor> mean_weights() const;  // (m_plus - m_minus) * exp(s^2 / 2)
    double weight_l2() const;
    double momentum_l2_pos() const;

    std::string save_checkpoint() const;
    static LmdOptimizer load_checkpoint(std::string_view text);

private:
    LmdOptimizer() = default;
    double group_tau(const LmdParam& param) const;

    LmdHyper hyper_;
    std::vector<LmdParam> params_;
    std::uint64_t step_count_ = 0;
};

// Clip a list of tensors to a global l2 norm in place; returns the pre-clip norm.
double clip_global_norm(std::span<Tensor> grads, double max_norm);

} // namespace lmd
