#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <numbers>
#include <sstream>
#include <thread>
#include <variant>

#include "lmd/baselines.hpp"
#include "lmd/harness.hpp"
#include "lmd/mx_quant.hpp"

namespace lmd::harness {

namespace {

constexpr std::uint64_t kNoiseSalt = 0x6e6f697365ULL;
constexpr std::uint64_t kDataSalt = 0x64617461ULL;

std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Runs fn(c) for c in [0, count) on up to `threads` workers. Each index is
// written by exactly one worker; the first exception (by index) is rethrown.
template <typename Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
    std::vector<std::exception_ptr> errors(count);
    auto run = [&](std::size_t c) {
        try {
            fn(c);
        } catch (...) {
            errors[c] = std::current_exception();
        }
    };
    const std::size_t workers = std::min(threads, count);
    if (workers <= 1) {
        for (std::size_t c = 0; c < count; ++c) run(c);
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                for (std::size_t c = w; c < count; c += workers) run(c);
            });
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

models::Dataset make_dataset(const RunConfig& cfg) {
    models::TaskOptions opts;
    opts.separation = cfg.separation;
    opts.input_scale = cfg.input_scale;
    opts.vocab = cfg.model.vocab;
    opts.seq_len = cfg.model.seq_len;
    return models::synthetic_task(cfg.task, cfg.dataset_size, cfg.seed, opts);
}

using AnyOptimizer = std::variant<LmdOptimizer, AdamWOptimizer, MwuOptimizer, GdOptimizer>;

AnyOptimizer make_optimizer(const RunConfig& cfg, const ParamSet& theta0) {
    switch (cfg.optimizer) {
    case OptimizerKind::lmd: return LmdOptimizer(cfg.lmd_hyper(), theta0);
    case OptimizerKind::adamw:
        return AdamWOptimizer(theta0, AdamWHyper{cfg.effective_lr(), cfg.adam_beta1, cfg.adam_beta2, 1e-8, cfg.weight_decay});
    case OptimizerKind::mwu: return MwuOptimizer(theta0, cfg.effective_lr());
    case OptimizerKind::mwu_clip: return MwuOptimizer(theta0, cfg.effective_lr(), cfg.clip_bound);
    case OptimizerKind::gd: return GdOptimizer(theta0, cfg.effective_lr());
    }
    throw ConfigError("unsupported optimizer");
}

std::vector<Tensor> eval_params(const AnyOptimizer& opt) {
    return std::visit(
        [](const auto& o) -> std::vector<Tensor> {
            if constexpr (std::is_same_v<std::decay_t<decltype(o)>, LmdOptimizer>)
                return o.mean_weights();
            else
                return o.values();
        },
        opt);
}

double momentum_metric(const AnyOptimizer& opt) {
    if (const auto* l = std::get_if<LmdOptimizer>(&opt)) return l->momentum_l2_pos();
    if (const auto* a = std::get_if<AdamWOptimizer>(&opt)) return a->momentum_l2();
    return 0.0;
}

double weight_metric(const AnyOptimizer& opt) {
    return std::visit([](const auto& o) { return o.weight_l2(); }, opt);
}

std::string checkpoint_of(const AnyOptimizer& opt) {
    return std::visit([](const auto& o) { return o.save_checkpoint(); }, opt);
}

std::vector<Tensor> mean_of(std::vector<std::vector<Tensor>>& parts) {
    std::vector<Tensor> total = parts.front();
    for (std::size_t c = 1; c < parts.size(); ++c)
        for (std::size_t k = 0; k < total.size(); ++k)
            for (std::size_t i = 0; i < total[k].size(); ++i) total[k][i] += parts[c][k][i];
    if (parts.size() > 1) {
        const double n = static_cast<double>(parts.size());
        for (auto& t : total)
            for (double& v : t.values()) v /= n;
    }
    return total;
}

std::vector<Tensor> baseline_gradient(const std::vector<Tensor>& params, const models::Model& model,
                                      const models::Dataset& data, const RunConfig& cfg, std::uint64_t step,
                                      const MatmulHook& hook) {
    const std::size_t count = cfg.devices * cfg.samples;
    std::vector<std::vector<Tensor>> parts(count);
    parallel_for(count, cfg.threads, [&](std::size_t c) {
        RngStream data_rng(step_seed(cfg.seed, step, kDataSalt), c);
        const auto batch = data.sample(cfg.batch_size, data_rng);
        auto fr = forward(model.program(batch), params, hook);
        parts[c] = backward(fr);
    });
    auto grads = mean_of(parts);
    if (cfg.grad_clip) clip_global_norm(grads, *cfg.grad_clip);
    return grads;
}

} // namespace

double lr_schedule(std::uint64_t step, std::uint64_t total, std::uint64_t warmup, double peak, double floor_frac) {
    if (warmup > total) throw std::invalid_argument("lr_schedule: warmup exceeds total steps");
    if (step > total) throw std::invalid_argument("lr_schedule: step exceeds total steps");
    if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
    if (step == warmup || total == warmup) return peak;
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
    const double floor = floor_frac * peak;
    return floor + (peak - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::uint64_t step_seed(std::uint64_t seed, std::uint64_t step, std::uint64_t salt) noexcept {
    return splitmix64(splitmix64(seed ^ splitmix64(salt)) + step);
}

MatmulHook forward_hook(Precision precision) {
    switch (precision) {
    case Precision::full: return {};
    case Precision::mxfp6: return mx::mx_matmul_hook(mx::ElementFormat::e2m3);
    case Precision::mxfp4: return mx::mx_matmul_hook(mx::ElementFormat::e2m1);
    }
    return {};
}

StepGradient lmd_step_gradient(const LmdOptimizer& optimizer, const models::Model& model, const models::Dataset& data,
                               const RunConfig& config, std::uint64_t step, std::size_t threads) {
    const std::size_t count = config.devices * config.samples;
    const MatmulHook hook = forward_hook(config.precision);
    std::vector<SignedGradient> gs(count), rs(count);
    std::vector<double> losses(count);
    parallel_for(count, threads, [&](std::size_t c) {
        // Contribution c = j * S + s draws from its own noise and data streams.
        RngStream noise_rng(step_seed(config.seed, step, kNoiseSalt), c);
        RngStream data_rng(step_seed(config.seed, step, kDataSalt), c);
        const auto batch = data.sample(config.batch_size, data_rng);
        const auto ctx = optimizer.sample(noise_rng, config.sample_mode);
        const auto trick = ctx.trick();
        auto fr = forward(model.program(batch), trick, hook);
        auto grads = backward(fr);
        if (const auto clip = optimizer.hyper().grad_clip) clip_global_norm(grads, *clip);
        losses[c] = fr.loss;
        gs[c] = optimizer.grad_transform(ctx, grads);
        rs[c] = optimizer.reg_gradient(ctx);
    });
    return {LmdOptimizer::aggregate(gs), LmdOptimizer::aggregate(rs), std::move(losses)};
}

TrainResult train(const RunConfig& config) {
    config.validate();
    const auto built = models::build(config.model, config.seed);
    const auto data = make_dataset(config);
    const MatmulHook hook = forward_hook(config.precision);
    auto optimizer = make_optimizer(config, built.theta0);
    const double peak = config.effective_lr();

    TrainResult result;
    auto record = [&](std::uint64_t step) {
        const auto params = eval_params(optimizer);
        const auto eval = models::evaluate(built.model, params, data, hook);
        MetricRecord rec{step, eval.loss, eval.accuracy, weight_metric(optimizer), momentum_metric(optimizer),
                         lr_schedule(step, config.steps, config.warmup, peak, config.floor_frac)};
        if (!std::isfinite(rec.loss) || !std::isfinite(rec.weight_l2) || !std::isfinite(rec.momentum_l2_pos))
            throw NumericalError("non-finite metric");
        result.records.push_back(rec);
    };

    std::uint64_t step = 0;
    try {
        record(0);
        for (step = 1; step <= config.steps; ++step) {
            const double lr = lr_schedule(step, config.steps, config.warmup, peak, config.floor_frac);
            if (auto* lmd_opt = std::get_if<LmdOptimizer>(&optimizer)) {
                const auto sg = lmd_step_gradient(*lmd_opt, built.model, data, config, step, config.threads);
                lmd_opt->step(sg.g, sg.r, lr);
            } else {
                const auto params = eval_params(optimizer);
                const auto grads = baseline_gradient(params, built.model, data, config, step, hook);
                std::visit(
                    [&](auto& o) {
                        if constexpr (!std::is_same_v<std::decay_t<decltype(o)>, LmdOptimizer>) o.step(grads, lr);
                    },
                    optimizer);
            }
            if (step % config.log_interval == 0 || step == config.steps) record(step);
        }
    } catch (const NumericalError& e) {
        result.aborted = true;
        result.abort_step = step;
        result.abort_reason = e.what();
        return result;
    }
    result.checkpoint = checkpoint_of(optimizer);
    return result;
}

std::string format_csv(std::span<const MetricRecord> records) {
    std::string out(kCsvHeader);
    out += '\n';
    char buf[256];
    for (const auto& r : records) {
        std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g,%.17g,%.17g\n", static_cast<unsigned long long>(r.step),
                      r.loss, r.eval_metric, r.weight_l2, r.momentum_l2_pos, r.lr);
        out += buf;
    }
    return out;
}

std::vector<MetricRecord> parse_csv(std::string_view text) {
    std::vector<MetricRecord> out;
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line) || line != kCsvHeader) throw std::invalid_argument("metrics CSV: unexpected header");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        MetricRecord r;
        unsigned long long step = 0;
        if (std::sscanf(line.c_str(), "%llu,%lf,%lf,%lf,%lf,%lf", &step, &r.loss, &r.eval_metric, &r.weight_l2,
                        &r.momentum_l2_pos, &r.lr) != 6)
            throw std::invalid_argument("metrics CSV: malformed row '" + line + "'");
        r.step = step;
        out.push_back(r);
    }
    return out;
}

void write_run(const TrainResult& result, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream csv(dir / "metrics.csv", std::ios::binary | std::ios::trunc);
        csv << result.csv();
    }
    if (result.aborted) {
        std::ofstream abort(dir / "abort.txt", std::ios::trunc);
        abort << "step " << result.abort_step << ": " << result.abort_reason << '\n';
        return;
    }
    // Write-then-rename so a crash never leaves a partial checkpoint behind.
    const auto tmp = dir / "checkpoint.json.tmp";
    {
        std::ofstream ck(tmp, std::ios::binary | std::ios::trunc);
        ck << result.checkpoint;
    }
    std::filesystem::rename(tmp, dir / "checkpoint.json");
}

} // namespace lmd::harness
