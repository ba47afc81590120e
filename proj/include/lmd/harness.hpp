#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lmd/autodiff.hpp"
#include "lmd/lmd_optimizer.hpp"
#include "lmd/models.hpp"

namespace lmd::harness {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Linear warmup from 0 to `peak` over `warmup` steps, then cosine decay to
// floor_frac * peak at `total`.
double lr_schedule(std::uint64_t step, std::uint64_t total, std::uint64_t warmup, double peak, double floor_frac);

enum class OptimizerKind { lmd, adamw, mwu, mwu_clip, gd };
enum class Precision { full, mxfp6, mxfp4 };

std::string_view to_string(OptimizerKind k) noexcept;
std::string_view to_string(Precision p) noexcept;

struct RunConfig {
    models::ModelSpec model;
    models::Task task = models::Task::two_class_gaussians;
    std::size_t dataset_size = 512;
    double separation = 4.0;
    double input_scale = 1.0;

    OptimizerKind optimizer = OptimizerKind::lmd;
    std::optional<double> lr;  // unset: per-optimizer default
    double sigma = 0.125;
    std::optional<double> m_r;  // unset: 0.01 * exp(sigma^2 / 2)
    double beta1 = 0.95;
    double beta2 = 0.99;
    std::optional<double> grad_clip;
    MomentumOrder momentum_order = MomentumOrder::lion;
    DecayMode decay = DecayMode::multiplicative;
    GradScaling grad_scaling = GradScaling::by_theta;
    double weight_decay = 0.1;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double clip_bound = 1.0;

    std::uint64_t steps = 500;
    std::size_t batch_size = 64;  // 0: full batch
    std::size_t devices = 1;      // J
    std::size_t samples = 1;      // S
    Precision precision = Precision::full;
    SampleMode sample_mode = SampleMode::sampled;
    std::uint64_t warmup = 0;
    double floor_frac = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t log_interval = 10;
    std::size_t threads = 1;
    std::string output_dir = "run";

    double effective_lr() const;
    LmdHyper lmd_hyper() const;
    void validate() const;  // throws ConfigError

    // Flat `key = value` text, '#' comments. Unknown keys are errors.
    static RunConfig parse(std::string_view text);
    static RunConfig load(const std::filesystem::path& path);
    std::string to_text() const;
};

struct MetricRecord {
    std::uint64_t step = 0;
    double loss = 0.0;
    double eval_metric = 0.0;
    double weight_l2 = 0.0;
    double momentum_l2_pos = 0.0;
    double lr = 0.0;
};

inline constexpr std::string_view kCsvHeader = "step,loss,eval_metric,weight_l2,momentum_l2_pos,lr";

std::string format_csv(std::span<const MetricRecord> records);
std::vector<MetricRecord> parse_csv(std::string_view text);

struct TrainResult {
    std::vector<MetricRecord> records;
    std::string checkpoint;  // empty when aborted
    bool aborted = false;
    std::uint64_t abort_step = 0;
    std::string abort_reason;

    std::string csv() const { return format_csv(records); }
};

// Runs the full training loop in memory. Numerical failures abort the run
// (aborted = true) instead of throwing; config problems throw ConfigError.
TrainResult train(const RunConfig& config);

// Writes metrics.csv and, unless aborted, checkpoint.json into `dir`.
void write_run(const TrainResult& result, const std::filesystem::path& dir);

MatmulHook forward_hook(Precision precision);

// One step's aggregated LMD gradient pair for the given optimizer state;
// contributions run on `threads` workers and are reduced in index order.
struct StepGradient {
    SignedGradient g;
    SignedGradient r;
    std::vector<double> losses;
};

StepGradient lmd_step_gradient(const LmdOptimizer& optimizer, const models::Model& model, const models::Dataset& data,
                               const RunConfig& config, std::uint64_t step, std::size_t threads);

std::uint64_t step_seed(std::uint64_t seed, std::uint64_t step, std::uint64_t salt) noexcept;

struct RunSeries {
    std::string label;
    std::vector<MetricRecord> records;
};

struct CompareResult {
    std::string combined_csv;
    std::string chart_svg;
};

// Aligns runs by step. Runs must share a logging interval.
CompareResult compare(std::span<const RunSeries> runs);
RunSeries load_run(const std::filesystem::path& run_dir_or_csv);

} // namespace lmd::harness
