#include "lmd/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json_io.hpp"

namespace lmd {

BaselineParams::BaselineParams(const ParamSet& init) {
    for (const auto& p : init) {
        names_.push_back(p.name);
        kinds_.push_back(p.kind);
        values_.push_back(p.value);
    }
}

void BaselineParams::check_grads(std::span<const Tensor> grads, std::string_view who) const {
    if (grads.size() != values_.size())
        throw ShapeError(std::string(who) + ": expected " + std::to_string(values_.size()) + " gradients, got " +
                         std::to_string(grads.size()));
    for (std::size_t k = 0; k < grads.size(); ++k) {
        if (grads[k].shape() != values_[k].shape())
            throw ShapeError(std::string(who) + ": gradient shape mismatch for " + names_[k]);
        if (!grads[k].all_finite()) throw NumericalError(std::string(who) + ": non-finite gradient for " + names_[k]);
    }
}

namespace {

nlohmann::json params_json(const std::vector<std::string>& names, const std::vector<ParamKind>& kinds,
                           const std::vector<Tensor>& values) {
    auto arr = nlohmann::json::array();
    for (std::size_t k = 0; k < values.size(); ++k)
        arr.push_back({{"name", names[k]}, {"kind", to_string(kinds[k])}, {"theta", detail::tensor_to_json(values[k])}});
    return arr;
}

nlohmann::json header(std::string_view optimizer, std::uint64_t steps) {
    return {{"format", "lmd-checkpoint"}, {"version", 1}, {"optimizer", optimizer}, {"step", steps}};
}

ParamSet params_from_json(const nlohmann::json& arr) {
    ParamSet out;
    for (const auto& pj : arr)
        out.push_back({pj.at("name").get<std::string>(), detail::parse_kind(pj.at("kind").get<std::string>()),
                       detail::tensor_from_json(pj.at("theta"))});
    return out;
}

} // namespace

void GdOptimizer::step(std::span<const Tensor> grads, std::optional<double> lr) {
    check_grads(grads, "gd");
    const double rate = lr.value_or(lr_);
    for (std::size_t k = 0; k < values_.size(); ++k)
        for (std::size_t i = 0; i < values_[k].size(); ++i) values_[k][i] -= rate * grads[k][i];
    ++steps_;
}

std::string GdOptimizer::save_checkpoint() const {
    auto j = header("gd", steps_);
    j["hyper"] = {{"lr", lr_}};
    j["params"] = params_json(names_, kinds_, values_);
    return j.dump(1);
}

GdOptimizer GdOptimizer::load_checkpoint(std::string_view text) {
    const auto j = detail::parse_checkpoint(text, "gd");
    GdOptimizer opt(params_from_json(j.at("params")), j.at("hyper").at("lr").get<double>());
    opt.steps_ = j.at("step").get<std::uint64_t>();
    return opt;
}

MwuOptimizer::MwuOptimizer(const ParamSet& init, double lr, std::optional<double> clip_bound)
    : BaselineParams(init), lr_(lr), clip_(clip_bound) {
    if (clip_ && !(*clip_ > 0.0)) throw std::invalid_argument("mwu: clip bound must be > 0");
    if (clip_) {
        for (auto& t : values_)
            for (double& v : t.values()) v = std::clamp(v, -*clip_, *clip_);
    }
}

void MwuOptimizer::step(std::span<const Tensor> grads, std::optional<double> lr) {
    check_grads(grads, "mwu");
    const double rate = lr.value_or(lr_);
    for (std::size_t k = 0; k < values_.size(); ++k) {
        auto& theta = values_[k];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double s = theta[i] > 0.0 ? 1.0 : (theta[i] < 0.0 ? -1.0 : 0.0);
            theta[i] *= std::exp(-rate * grads[k][i] * s);
            if (clip_) theta[i] = std::clamp(theta[i], -*clip_, *clip_);
        }
        if (!theta.all_finite()) throw NumericalError("mwu: weights overflowed in " + names_[k]);
    }
    ++steps_;
}

std::string MwuOptimizer::save_checkpoint() const {
    auto j = header(clip_ ? "mwu-clip" : "mwu", steps_);
    j["hyper"] = {{"lr", lr_}, {"clip_bound", clip_ ? nlohmann::json(*clip_) : nlohmann::json(nullptr)}};
    j["params"] = params_json(names_, kinds_, values_);
    return j.dump(1);
}

MwuOptimizer MwuOptimizer::load_checkpoint(std::string_view text) {
    auto j = nlohmann::json::parse(text);
    const std::string tag = j.value("optimizer", "");
    j = detail::parse_checkpoint(text, tag == "mwu-clip" ? "mwu-clip" : "mwu");
    const auto& h = j.at("hyper");
    std::optional<double> clip;
    if (!h.at("clip_bound").is_null()) clip = h.at("clip_bound").get<double>();
    MwuOptimizer opt(params_from_json(j.at("params")), h.at("lr").get<double>(), clip);
    opt.steps_ = j.at("step").get<std::uint64_t>();
    return opt;
}

AdamWOptimizer::AdamWOptimizer(const ParamSet& init, AdamWHyper hyper) : BaselineParams(init), hyper_(hyper) {
    if (!(hyper_.beta1 >= 0.0 && hyper_.beta1 < 1.0) || !(hyper_.beta2 >= 0.0 && hyper_.beta2 < 1.0))
        throw std::invalid_argument("adamw: betas must lie in [0, 1)");
    for (const auto& t : values_) {
        m_.emplace_back(t.shape());
        v_.emplace_back(t.shape());
    }
}

void AdamWOptimizer::step(std::span<const Tensor> grads, std::optional<double> lr) {
    check_grads(grads, "adamw");
    const double rate = lr.value_or(hyper_.lr);
    ++steps_;
    const double t = static_cast<double>(steps_);
    const double bc1 = 1.0 - std::pow(hyper_.beta1, t);
    const double bc2 = 1.0 - std::pow(hyper_.beta2, t);
    for (std::size_t k = 0; k < values_.size(); ++k) {
        auto& theta = values_[k];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double g = grads[k][i];
            m_[k][i] = hyper_.beta1 * m_[k][i] + (1.0 - hyper_.beta1) * g;
            v_[k][i] = hyper_.beta2 * v_[k][i] + (1.0 - hyper_.beta2) * g * g;
            const double m_hat = m_[k][i] / bc1;
            const double v_hat = v_[k][i] / bc2;
            theta[i] = theta[i] * (1.0 - rate * hyper_.weight_decay) - rate * m_hat / (std::sqrt(v_hat) + hyper_.eps);
        }
    }
}

std::string AdamWOptimizer::save_checkpoint() const {
    auto j = header("adamw", steps_);
    j["hyper"] = {{"lr", hyper_.lr},
                  {"beta1", hyper_.beta1},
                  {"beta2", hyper_.beta2},
                  {"eps", hyper_.eps},
                  {"weight_decay", hyper_.weight_decay}};
    j["params"] = params_json(names_, kinds_, values_);
    auto moments = nlohmann::json::array();
    for (std::size_t k = 0; k < m_.size(); ++k)
        moments.push_back({{"m", detail::tensor_to_json(m_[k])}, {"v", detail::tensor_to_json(v_[k])}});
    j["moments"] = std::move(moments);
    return j.dump(1);
}

AdamWOptimizer AdamWOptimizer::load_checkpoint(std::string_view text) {
    const auto j = detail::parse_checkpoint(text, "adamw");
    const auto& h = j.at("hyper");
    AdamWHyper hyper{h.at("lr").get<double>(), h.at("beta1").get<double>(), h.at("beta2").get<double>(),
                     h.at("eps").get<double>(), h.at("weight_decay").get<double>()};
    AdamWOptimizer opt(params_from_json(j.at("params")), hyper);
    const auto& moments = j.at("moments");
    for (std::size_t k = 0; k < opt.m_.size(); ++k) {
        opt.m_[k] = detail::tensor_from_json(moments.at(k).at("m"));
        opt.v_[k] = detail::tensor_from_json(moments.at(k).at("v"));
    }
    opt.steps_ = j.at("step").get<std::uint64_t>();
    return opt;
}

} // namespace lmd
