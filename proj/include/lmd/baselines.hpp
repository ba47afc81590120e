#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lmd/params.hpp"
#include "lmd/tensor.hpp"

namespace lmd {

// Shared storage for the additive/multiplicative reference optimizers: the
// trainable tensors themselves plus their names and kinds.
class BaselineParams {
public:
    BaselineParams() = default;
    explicit BaselineParams(const ParamSet& init);

    std::vector<Tensor>& values() noexcept { return values_; }
    const std::vector<Tensor>& values() const noexcept { return values_; }
    const std::vector<std::string>& names() const noexcept { return names_; }
    const std::vector<ParamKind>& kinds() const noexcept { return kinds_; }
    double weight_l2() const { return l2_norm(values_); }

protected:
    void check_grads(std::span<const Tensor> grads, std::string_view who) const;

    std::vector<std::string> names_;
    std::vector<ParamKind> kinds_;
    std::vector<Tensor> values_;
};

// theta <- theta - lr * grad
class GdOptimizer : public BaselineParams {
public:
    explicit GdOptimizer(const ParamSet& init, double lr = 0.1) : BaselineParams(init), lr_(lr) {}

    void step(std::span<const Tensor> grads, std::optional<double> lr = std::nullopt);
    double lr() const noexcept { return lr_; }
    std::uint64_t step_count() const noexcept { return steps_; }

    std::string save_checkpoint() const;
    static GdOptimizer load_checkpoint(std::string_view text);

private:
    double lr_;
    std::uint64_t steps_ = 0;
};

// theta <- theta * exp(-lr * grad * sign(theta)), optionally followed by
// clipping magnitudes to `clip_bound` ("mwu-clip").
class MwuOptimizer : public BaselineParams {
public:
    MwuOptimizer(const ParamSet& init, double lr = 0.01, std::optional<double> clip_bound = std::nullopt);

    void step(std::span<const Tensor> grads, std::optional<double> lr = std::nullopt);
    double lr() const noexcept { return lr_; }
    std::optional<double> clip_bound() const noexcept { return clip_; }
    std::uint64_t step_count() const noexcept { return steps_; }

    std::string save_checkpoint() const;
    static MwuOptimizer load_checkpoint(std::string_view text);

private:
    double lr_;
    std::optional<double> clip_;
    std::uint64_t steps_ = 0;
};

struct AdamWHyper {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.1;
};

// Bias-corrected Adam moments with decoupled decay:
// theta <- theta * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps)
class AdamWOptimizer : public BaselineParams {
public:
    explicit AdamWOptimizer(const ParamSet& init, AdamWHyper hyper = {});

    void step(std::span<const Tensor> grads, std::optional<double> lr = std::nullopt);
    const AdamWHyper& hyper() const noexcept { return hyper_; }
    const std::vector<Tensor>& first_moment() const noexcept { return m_; }
    const std::vector<Tensor>& second_moment() const noexcept { return v_; }
    std::uint64_t step_count() const noexcept { return steps_; }
    double momentum_l2() const { return l2_norm(m_); }

    std::string save_checkpoint() const;
    static AdamWOptimizer load_checkpoint(std::string_view text);

private:
    AdamWOptimizer() = default;

    AdamWHyper hyper_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    std::uint64_t steps_ = 0;
};

} // namespace lmd
