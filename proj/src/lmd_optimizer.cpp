#include "lmd/lmd_optimizer.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "json_io.hpp"

namespace lmd {

std::string_view to_string(ParamKind kind) noexcept {
    switch (kind) {
    case ParamKind::weight: return "weight";
    case ParamKind::bias: return "bias";
    case ParamKind::scale: return "scale";
    }
    return "weight";
}

std::string_view to_string(MomentumOrder v) noexcept { return v == MomentumOrder::lion ? "lion" : "literal"; }
std::string_view to_string(DecayMode v) noexcept { return v == DecayMode::multiplicative ? "multiplicative" : "additive"; }
std::string_view to_string(GradScaling v) noexcept { return v == GradScaling::by_theta ? "by-theta" : "none"; }
std::string_view to_string(SampleMode v) noexcept { return v == SampleMode::sampled ? "sampled" : "mean"; }

double default_prior_median(double sigma) { return 0.01 * std::exp(0.5 * sigma * sigma); }

double LmdHyper::tau() const { return -(sigma * sigma) / std::log(m_r); }

double LmdHyper::alpha(double lr) const { return -lr / std::log(m_r); }

void LmdHyper::validate() const {
    if (!(eta > 0.0) || !std::isfinite(eta)) throw std::invalid_argument("lmd: eta must be > 0");
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("lmd: sigma must be >= 0");
    if (!(m_r > 0.0 && m_r < 1.0)) throw std::invalid_argument("lmd: prior median m_r must lie in (0, 1)");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw std::invalid_argument("lmd: beta1 must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("lmd: beta2 must lie in [0, 1)");
    if (grad_clip && !(*grad_clip > 0.0)) throw std::invalid_argument("lmd: grad_clip must be > 0");
}

MedianPair init_from_default(double theta0, const LmdHyper& hyper) {
    const double shrink = std::exp(-0.5 * hyper.sigma * hyper.sigma);
    if (theta0 > 0.0) return {theta0 * shrink + hyper.m_r, hyper.m_r};
    return {hyper.m_r, -theta0 * shrink + hyper.m_r};
}

ScaleParamInit init_scale_param(double sigma) {
    const double half_var = 0.5 * sigma * sigma;
    const double m = std::exp(-half_var);
    // tau^-1 = 2 R'(2) - 1 = (log 2 - log m_r) / sigma^2 with log m_r = -sigma^2 / 2.
    const double tau = sigma * sigma / (std::log(2.0) + half_var);
    return {m, 0.0, m, tau};
}

std::vector<Tensor> SampleContext::trick() const {
    std::vector<Tensor> out;
    out.reserve(theta.size());
    for (const auto& pair : theta) {
        Tensor t = pair.plus;
        for (std::size_t i = 0; i < t.size(); ++i) t[i] -= pair.minus[i];
        out.push_back(std::move(t));
    }
    return out;
}

LmdOptimizer::LmdOptimizer(LmdHyper hyper, const ParamSet& defaults) : hyper_(hyper) {
    hyper_.validate();
    params_.reserve(defaults.size());
    for (const auto& def : defaults) {
        LmdParam p;
        p.name = def.name;
        p.kind = def.kind;
        p.m_plus = Tensor(def.value.shape());
        p.m_minus = Tensor(def.value.shape());
        p.nu_plus = Tensor(def.value.shape());
        p.nu_minus = Tensor(def.value.shape());
        if (def.kind == ParamKind::scale) {
            const auto init = init_scale_param(hyper_.sigma);
            p.m_r = init.m_r;
            p.anchor = 2.0;
            p.m_plus.fill(init.m_plus);
            p.m_minus.fill(init.m_minus);
        } else {
            p.m_r = hyper_.m_r;
            p.anchor = 1.0;
            for (std::size_t i = 0; i < def.value.size(); ++i) {
                const auto m = init_from_default(def.value[i], hyper_);
                p.m_plus[i] = m.plus;
                p.m_minus[i] = m.minus;
            }
        }
        params_.push_back(std::move(p));
    }
}

double LmdOptimizer::group_tau(const LmdParam& param) const {
    return hyper_.sigma * hyper_.sigma / (std::log(param.anchor) - std::log(param.m_r));
}

SampleContext LmdOptimizer::sample(RngStream& rng, SampleMode mode) const {
    SampleContext ctx;
    ctx.mode = mode;
    ctx.theta.reserve(params_.size());
    const double mean_factor = std::exp(0.5 * hyper_.sigma * hyper_.sigma);
    const LogNormalSpec spec{hyper_.sigma, 1.0};
    for (const auto& p : params_) {
        SignedPair theta{p.m_plus, p.m_minus};
        if (mode == SampleMode::mean) {
            for (double& v : theta.plus.values()) v *= mean_factor;
            for (double& v : theta.minus.values()) v *= mean_factor;
        } else if (hyper_.sigma > 0.0) {
            const auto eps_plus = sample_noise(spec, theta.plus.size(), rng);
            const auto eps_minus = sample_noise(spec, theta.minus.size(), rng);
            for (std::size_t i = 0; i < theta.plus.size(); ++i) theta.plus[i] *= eps_plus[i];
            for (std::size_t i = 0; i < theta.minus.size(); ++i) theta.minus[i] *= eps_minus[i];
        }
        ctx.theta.push_back(std::move(theta));
    }
    return ctx;
}

SignedGradient LmdOptimizer::grad_transform(const SampleContext& ctx, std::span<const Tensor> grads) const {
    if (grads.size() != ctx.theta.size())
        throw ShapeError("grad_transform: expected " + std::to_string(ctx.theta.size()) + " gradients, got " +
                         std::to_string(grads.size()));
    SignedGradient out;
    out.reserve(grads.size());
    for (std::size_t k = 0; k < grads.size(); ++k) {
        const auto& theta = ctx.theta[k];
        const Tensor& grad = grads[k];
        if (grad.shape() != theta.plus.shape())
            throw ShapeError("grad_transform: gradient shape " + shape_string(grad.shape()) + " does not match " +
                             shape_string(theta.plus.shape()));
        SignedPair g{Tensor(grad.shape()), Tensor(grad.shape())};
        for (std::size_t i = 0; i < grad.size(); ++i) {
            if (hyper_.grad_scaling == GradScaling::by_theta) {
                g.plus[i] = theta.plus[i] * grad[i];
                g.minus[i] = -theta.minus[i] * grad[i];
            } else {
                // Entries pinned at zero receive no signal either way.
                g.plus[i] = params_[k].m_plus[i] == 0.0 ? 0.0 : grad[i];
                g.minus[i] = params_[k].m_minus[i] == 0.0 ? 0.0 : -grad[i];
            }
        }
        out.push_back(std::move(g));
    }
    return out;
}

double LmdOptimizer::reg_value(const LmdParam& param, double theta) const {
    if (hyper_.decay == DecayMode::additive) return (theta - param.m_r) / (param.anchor - param.m_r);
    // tau * (log theta - log m_r) / sigma^2 with tau normalized at the anchor.
    return (std::log(theta) - std::log(param.m_r)) / (std::log(param.anchor) - std::log(param.m_r));
}

SignedGradient LmdOptimizer::reg_gradient(const SampleContext& ctx) const {
    if (ctx.theta.size() != params_.size()) throw ShapeError("reg_gradient: sample does not match optimizer state");
    SignedGradient out;
    out.reserve(params_.size());
    for (std::size_t k = 0; k < params_.size(); ++k) {
        const auto& p = params_[k];
        const auto& theta = ctx.theta[k];
        SignedPair r{Tensor(p.m_plus.shape()), Tensor(p.m_minus.shape())};
        for (std::size_t i = 0; i < r.plus.size(); ++i) {
            r.plus[i] = p.m_plus[i] == 0.0 ? 0.0 : reg_value(p, theta.plus[i]);
            r.minus[i] = p.m_minus[i] == 0.0 ? 0.0 : reg_value(p, theta.minus[i]);
        }
        out.push_back(std::move(r));
    }
    return out;
}

SignedGradient LmdOptimizer::aggregate(std::span<const SignedGradient> contributions) {
    if (contributions.empty()) throw std::invalid_argument("aggregate: no contributions");
    SignedGradient total = contributions.front();
    for (std::size_t c = 1; c < contributions.size(); ++c) {
        const auto& next = contributions[c];
        if (next.size() != total.size()) throw ShapeError("aggregate: contributions differ in tensor count");
        for (std::size_t k = 0; k < total.size(); ++k) {
            if (next[k].plus.shape() != total[k].plus.shape() || next[k].minus.shape() != total[k].minus.shape())
                throw ShapeError("aggregate: contributions differ in shape for tensor " + std::to_string(k));
            for (std::size_t i = 0; i < total[k].plus.size(); ++i) total[k].plus[i] += next[k].plus[i];
            for (std::size_t i = 0; i < total[k].minus.size(); ++i) total[k].minus[i] += next[k].minus[i];
        }
    }
    const double count = static_cast<double>(contributions.size());
    if (contributions.size() > 1) {
        for (auto& pair : total) {
            for (double& v : pair.plus.values()) v /= count;
            for (double& v : pair.minus.values()) v /= count;
        }
    }
    return total;
}

namespace {

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void check_signed(const SignedGradient& x, const std::vector<LmdParam>& params, const char* what) {
    if (x.size() != params.size()) throw ShapeError(std::string("step: ") + what + " tensor count mismatch");
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (x[k].plus.shape() != params[k].m_plus.shape() || x[k].minus.shape() != params[k].m_minus.shape())
            throw ShapeError(std::string("step: ") + what + " shape mismatch for " + params[k].name);
        if (!x[k].plus.all_finite() || !x[k].minus.all_finite())
            throw NumericalError(std::string("step: non-finite ") + what + " for " + params[k].name);
    }
}

void update_half(Tensor& m, Tensor& nu, const Tensor& g, const Tensor& r, double lr, double beta1, double beta2,
                 MomentumOrder order) {
    for (std::size_t i = 0; i < m.size(); ++i) {
        double nu_temp;
        if (order == MomentumOrder::lion) {
            nu_temp = beta1 * nu[i] + (1.0 - beta1) * g[i];
            nu[i] = beta2 * nu[i] + (1.0 - beta2) * g[i];
        } else {
            nu[i] = beta2 * nu[i] + (1.0 - beta2) * g[i];
            nu_temp = beta1 * nu[i] + (1.0 - beta1) * g[i];
        }
        m[i] *= std::exp(-lr * (sign_of(nu_temp) + r[i]));
    }
}

} // namespace

void LmdOptimizer::step(const SignedGradient& g, const SignedGradient& r, std::optional<double> lr) {
    check_signed(g, params_, "gradient");
    check_signed(r, params_, "regularizer");
    const double rate = lr.value_or(hyper_.eta);
    if (!std::isfinite(rate) || rate < 0.0) throw std::invalid_argument("step: learning rate must be finite and >= 0");
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& p = params_[k];
        update_half(p.m_plus, p.nu_plus, g[k].plus, r[k].plus, rate, hyper_.beta1, hyper_.beta2, hyper_.momentum_order);
        update_half(p.m_minus, p.nu_minus, g[k].minus, r[k].minus, rate, hyper_.beta1, hyper_.beta2,
                    hyper_.momentum_order);
    }
    ++step_count_;
}

double LmdOptimizer::elbo_diagnostic(std::span<const double> loss_samples) const {
    if (loss_samples.empty()) throw std::invalid_argument("elbo_diagnostic: at least one loss sample required");
    double loss = 0.0;
    for (double v : loss_samples) loss += v;
    loss /= static_cast<double>(loss_samples.size());
    if (hyper_.sigma == 0.0) return loss;  // tau = 0

    double penalty = 0.0;
    for (const auto& p : params_) {
        const double tau = group_tau(p);
        const double mu_prior = std::log(p.m_r);
        double kl = 0.0;
        for (const Tensor* half : {&p.m_plus, &p.m_minus})
            for (double m : half->data())
                if (m > 0.0) kl += kl_equal_sigma(std::log(m), mu_prior, hyper_.sigma);
        penalty += tau * kl;
    }
    return loss + penalty;
}

std::vector<Tensor> LmdOptimizer::mean_weights() const {
    const double mean_factor = std::exp(0.5 * hyper_.sigma * hyper_.sigma);
    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (const auto& p : params_) {
        Tensor w(p.m_plus.shape());
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = (p.m_plus[i] - p.m_minus[i]) * mean_factor;
        out.push_back(std::move(w));
    }
    return out;
}

double LmdOptimizer::weight_l2() const {
    const auto w = mean_weights();
    return l2_norm(w);
}

double LmdOptimizer::momentum_l2_pos() const {
    double acc = 0.0;
    for (const auto& p : params_)
        for (double v : p.nu_plus.data()) acc += v * v;
    return std::sqrt(acc);
}

std::string LmdOptimizer::save_checkpoint() const {
    nlohmann::json j;
    j["format"] = "lmd-checkpoint";
    j["version"] = 1;
    j["optimizer"] = "lmd";
    j["step"] = step_count_;
    j["hyper"] = {{"eta", hyper_.eta},
                  {"sigma", hyper_.sigma},
                  {"m_r", hyper_.m_r},
                  {"beta1", hyper_.beta1},
                  {"beta2", hyper_.beta2},
                  {"grad_clip", hyper_.grad_clip ? nlohmann::json(*hyper_.grad_clip) : nlohmann::json(nullptr)},
                  {"momentum_order", to_string(hyper_.momentum_order)},
                  {"decay", to_string(hyper_.decay)},
                  {"grad_scaling", to_string(hyper_.grad_scaling)}};
    auto& arr = j["params"] = nlohmann::json::array();
    for (const auto& p : params_) {
        arr.push_back({{"name", p.name},
                       {"kind", to_string(p.kind)},
                       {"m_r", p.m_r},
                       {"anchor", p.anchor},
                       {"m_plus", detail::tensor_to_json(p.m_plus)},
                       {"m_minus", detail::tensor_to_json(p.m_minus)},
                       {"nu_plus", detail::tensor_to_json(p.nu_plus)},
                       {"nu_minus", detail::tensor_to_json(p.nu_minus)}});
    }
    return j.dump(1);
}

LmdOptimizer LmdOptimizer::load_checkpoint(std::string_view text) {
    const auto j = detail::parse_checkpoint(text, "lmd");
    LmdOptimizer opt;
    const auto& h = j.at("hyper");
    opt.hyper_.eta = h.at("eta").get<double>();
    opt.hyper_.sigma = h.at("sigma").get<double>();
    opt.hyper_.m_r = h.at("m_r").get<double>();
    opt.hyper_.beta1 = h.at("beta1").get<double>();
    opt.hyper_.beta2 = h.at("beta2").get<double>();
    if (!h.at("grad_clip").is_null()) opt.hyper_.grad_clip = h.at("grad_clip").get<double>();
    opt.hyper_.momentum_order = h.at("momentum_order") == "lion" ? MomentumOrder::lion : MomentumOrder::literal;
    opt.hyper_.decay = h.at("decay") == "multiplicative" ? DecayMode::multiplicative : DecayMode::additive;
    opt.hyper_.grad_scaling = h.at("grad_scaling") == "by-theta" ? GradScaling::by_theta : GradScaling::none;
    opt.hyper_.validate();
    opt.step_count_ = j.at("step").get<std::uint64_t>();
    for (const auto& pj : j.at("params")) {
        LmdParam p;
        p.name = pj.at("name").get<std::string>();
        p.kind = detail::parse_kind(pj.at("kind").get<std::string>());
        p.m_r = pj.at("m_r").get<double>();
        p.anchor = pj.at("anchor").get<double>();
        p.m_plus = detail::tensor_from_json(pj.at("m_plus"));
        p.m_minus = detail::tensor_from_json(pj.at("m_minus"));
        p.nu_plus = detail::tensor_from_json(pj.at("nu_plus"));
        p.nu_minus = detail::tensor_from_json(pj.at("nu_minus"));
        opt.params_.push_back(std::move(p));
    }
    return opt;
}

double clip_global_norm(std::span<Tensor> grads, double max_norm) {
    const double norm = l2_norm(grads);
    if (norm > max_norm && norm > 0.0) {
        const double factor = max_norm / norm;
        for (auto& g : grads)
            for (double& v : g.values()) v *= factor;
    }
    return norm;
}

} // namespace lmd
