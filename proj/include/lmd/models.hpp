#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lmd/autodiff.hpp"
#include "lmd/lognormal.hpp"
#include "lmd/params.hpp"
#include "lmd/tensor.hpp"

namespace lmd::models {

enum class Arch { mlp, tiny_transformer };
enum class Activation { relu, gelu };
enum class Task { two_class_gaussians, xor_rings, char_sequence_copy };

Arch parse_arch(std::string_view s);
Activation parse_activation(std::string_view s);
Task parse_task(std::string_view s);
std::string_view to_string(Arch a) noexcept;
std::string_view to_string(Activation a) noexcept;
std::string_view to_string(Task t) noexcept;

struct ModelSpec {
    Arch arch = Arch::mlp;
    std::vector<std::size_t> layers{2, 32, 2};  // mlp: input, hidden..., classes
    Activation activation = Activation::relu;
    // tiny-transformer
    std::size_t vocab = 8;
    std::size_t seq_len = 8;
    std::size_t d_model = 16;
    std::size_t d_ff = 32;

    void validate() const;
};

struct ParamInfo {
    std::string name;
    Shape shape;
    ParamKind kind;
};

// A minibatch. Classification tasks fill `features`/`labels`; the sequence
// task fills `tokens` (inputs) and `labels` (next-token targets) with
// `sequences` rows of `seq_len` positions each.
struct Batch {
    Tensor features;
    std::vector<int> tokens;
    std::vector<int> labels;
    std::size_t sequences = 0;
    std::size_t seq_len = 0;

    std::size_t items() const noexcept { return sequences ? sequences : labels.size(); }
};

class Model {
public:
    explicit Model(ModelSpec spec);

    const ModelSpec& spec() const noexcept { return spec_; }
    const std::vector<ParamInfo>& param_info() const noexcept { return params_; }
    std::size_t parameter_count() const noexcept;

    // Default initialization theta0: weights ~ N(0, 1/fan_in), embeddings
    // ~ N(0, 1/d_model), biases 0, layernorm gains 1. Deterministic in seed.
    ParamSet initial_params(std::uint64_t seed) const;

    // Records logits on the tape; `params` follow param_info() order.
    Var logits(Tape& tape, std::span<const Var> params, const Batch& batch) const;
    Var loss(Tape& tape, std::span<const Var> params, const Batch& batch) const;
    GraphProgram program(const Batch& batch) const;

private:
    Var mlp_logits(Tape& tape, std::span<const Var> params, const Batch& batch) const;
    Var transformer_logits(Tape& tape, std::span<const Var> params, const Batch& batch) const;

    ModelSpec spec_;
    std::vector<ParamInfo> params_;
};

struct BuiltModel {
    Model model;
    ParamSet theta0;
};

BuiltModel build(const ModelSpec& spec, std::uint64_t seed);

struct TaskOptions {
    double separation = 4.0;  // two-class-gaussians: per-coordinate distance between class means, in stddevs
    double input_scale = 1.0;  // classification features are multiplied by this after generation
    std::size_t vocab = 8;
    std::size_t seq_len = 8;
};

class Dataset {
public:
    Task task = Task::two_class_gaussians;
    Tensor features;           // classification: [n, 2]
    std::vector<int> labels;   // classification labels
    std::vector<int> tokens;   // sequence task: n rows of seq_len + 1 tokens
    std::size_t n = 0;
    std::size_t seq_len = 0;
    std::size_t num_classes = 2;

    Batch batch(std::span<const std::size_t> indices) const;
    Batch all() const;
    Batch sample(std::size_t batch_size, RngStream& rng) const;  // with replacement
};

Dataset synthetic_task(Task task, std::size_t n, std::uint64_t seed, const TaskOptions& options = {});

struct EvalResult {
    double loss;
    double accuracy;
};

// Loss and accuracy over the whole dataset, evaluated in chunks of at most
// `chunk` items.
EvalResult evaluate(const Model& model, std::span<const Tensor> params, const Dataset& data,
                    const MatmulHook& hook = {}, std::size_t chunk = 64);

} // namespace lmd::models
