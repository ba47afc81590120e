#include "lmd/models.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace lmd::models {

Arch parse_arch(std::string_view s) {
    if (s == "mlp") return Arch::mlp;
    if (s == "tiny-transformer") return Arch::tiny_transformer;
    throw std::invalid_argument("unknown model '" + std::string(s) + "'");
}

Activation parse_activation(std::string_view s) {
    if (s == "relu") return Activation::relu;
    if (s == "gelu") return Activation::gelu;
    throw std::invalid_argument("unknown activation '" + std::string(s) + "'");
}

Task parse_task(std::string_view s) {
    if (s == "two-class-gaussians") return Task::two_class_gaussians;
    if (s == "xor-rings") return Task::xor_rings;
    if (s == "char-sequence-copy") return Task::char_sequence_copy;
    throw std::invalid_argument("unknown task '" + std::string(s) + "'");
}

std::string_view to_string(Arch a) noexcept { return a == Arch::mlp ? "mlp" : "tiny-transformer"; }
std::string_view to_string(Activation a) noexcept { return a == Activation::relu ? "relu" : "gelu"; }
std::string_view to_string(Task t) noexcept {
    switch (t) {
    case Task::two_class_gaussians: return "two-class-gaussians";
    case Task::xor_rings: return "xor-rings";
    case Task::char_sequence_copy: return "char-sequence-copy";
    }
    return "two-class-gaussians";
}

void ModelSpec::validate() const {
    if (arch == Arch::mlp) {
        if (layers.size() < 2) throw std::invalid_argument("mlp needs at least input and output sizes");
        for (auto l : layers)
            if (l == 0) throw std::invalid_argument("mlp layer sizes must be positive");
    } else {
        if (vocab < 2 || seq_len == 0 || d_model == 0 || d_ff == 0)
            throw std::invalid_argument("tiny-transformer needs vocab >= 2 and positive seq_len, d_model, d_ff");
    }
}

Model::Model(ModelSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    if (spec_.arch == Arch::mlp) {
        for (std::size_t i = 0; i + 1 < spec_.layers.size(); ++i) {
            const auto suffix = std::to_string(i);
            params_.push_back({"w" + suffix, {spec_.layers[i], spec_.layers[i + 1]}, ParamKind::weight});
            params_.push_back({"b" + suffix, {spec_.layers[i + 1]}, ParamKind::bias});
        }
    } else {
        const std::size_t d = spec_.d_model;
        params_ = {
            {"tok_emb", {spec_.vocab, d}, ParamKind::weight},
            {"pos_emb", {spec_.seq_len, d}, ParamKind::weight},
            {"ln1", {d}, ParamKind::scale},
            {"wq", {d, d}, ParamKind::weight},
            {"wk", {d, d}, ParamKind::weight},
            {"wv", {d, d}, ParamKind::weight},
            {"wo", {d, d}, ParamKind::weight},
            {"ln2", {d}, ParamKind::scale},
            {"w_fc", {d, spec_.d_ff}, ParamKind::weight},
            {"w_proj", {spec_.d_ff, d}, ParamKind::weight},
            {"ln_f", {d}, ParamKind::scale},
            {"w_head", {d, spec_.vocab}, ParamKind::weight},
        };
    }
}

std::size_t Model::parameter_count() const noexcept {
    std::size_t total = 0;
    for (const auto& p : params_) total += shape_numel(p.shape);
    return total;
}

ParamSet Model::initial_params(std::uint64_t seed) const {
    ParamSet out;
    out.reserve(params_.size());
    for (std::size_t k = 0; k < params_.size(); ++k) {
        const auto& info = params_[k];
        Tensor value(info.shape);
        if (info.kind == ParamKind::scale) {
            value.fill(1.0);
        } else if (info.kind == ParamKind::weight) {
            const bool is_embedding = info.name == "tok_emb" || info.name == "pos_emb";
            const double fan_in = is_embedding ? static_cast<double>(spec_.d_model) : static_cast<double>(info.shape[0]);
            const double stddev = 1.0 / std::sqrt(fan_in);
            RngStream rng(seed, k);
            for (double& v : value.values()) v = stddev * rng.normal();
        }
        out.push_back({info.name, info.kind, std::move(value)});
    }
    return out;
}

Var Model::mlp_logits(Tape& tape, std::span<const Var> params, const Batch& batch) const {
    if (batch.features.rank() != 2 || batch.features.cols() != spec_.layers.front())
        throw ShapeError("mlp: expected features with " + std::to_string(spec_.layers.front()) + " columns, got " +
                         shape_string(batch.features.shape()));
    Var h = tape.constant(batch.features);
    const std::size_t n_layers = spec_.layers.size() - 1;
    for (std::size_t i = 0; i < n_layers; ++i) {
        h = tape.add_bias(tape.matmul(h, params[2 * i]), params[2 * i + 1]);
        if (i + 1 < n_layers) h = spec_.activation == Activation::relu ? tape.relu(h) : tape.gelu(h);
    }
    return h;
}

Var Model::transformer_logits(Tape& tape, std::span<const Var> p, const Batch& batch) const {
    const std::size_t t = spec_.seq_len;
    if (batch.seq_len != t || batch.tokens.size() != batch.sequences * t)
        throw ShapeError("tiny-transformer: batch must hold sequences of length " + std::to_string(t));
    std::vector<int> positions(batch.tokens.size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i % t);

    enum { tok_emb, pos_emb, ln1, wq, wk, wv, wo, ln2, w_fc, w_proj, ln_f, w_head };
    Var x = tape.add(tape.embedding(p[tok_emb], batch.tokens), tape.embedding(p[pos_emb], positions));

    Var h = tape.layernorm(x, p[ln1]);
    Var q = tape.matmul(h, p[wq]);
    Var k = tape.matmul(h, p[wk]);
    Var v = tape.matmul(h, p[wv]);
    Var scores = tape.scale(tape.matmul(q, tape.transpose(k)), 1.0 / std::sqrt(static_cast<double>(spec_.d_model)));
    Var attn = tape.matmul(tape.causal_softmax(scores, t), v);
    x = tape.add(x, tape.matmul(attn, p[wo]));

    h = tape.layernorm(x, p[ln2]);
    Var f = tape.matmul(tape.gelu(tape.matmul(h, p[w_fc])), p[w_proj]);
    x = tape.add(x, f);

    return tape.matmul(tape.layernorm(x, p[ln_f]), p[w_head]);
}

Var Model::logits(Tape& tape, std::span<const Var> params, const Batch& batch) const {
    if (params.size() != params_.size())
        throw ShapeError("model expects " + std::to_string(params_.size()) + " parameter tensors, got " +
                         std::to_string(params.size()));
    return spec_.arch == Arch::mlp ? mlp_logits(tape, params, batch) : transformer_logits(tape, params, batch);
}

Var Model::loss(Tape& tape, std::span<const Var> params, const Batch& batch) const {
    return tape.cross_entropy(logits(tape, params, batch), batch.labels);
}

GraphProgram Model::program(const Batch& batch) const {
    return [this, &batch](Tape& tape, std::span<const Var> params) { return loss(tape, params, batch); };
}

BuiltModel build(const ModelSpec& spec, std::uint64_t seed) {
    Model model(spec);
    auto theta0 = model.initial_params(seed);
    return {std::move(model), std::move(theta0)};
}

Batch Dataset::batch(std::span<const std::size_t> indices) const {
    Batch b;
    if (task == Task::char_sequence_copy) {
        b.sequences = indices.size();
        b.seq_len = seq_len;
        b.tokens.reserve(indices.size() * seq_len);
        b.labels.reserve(indices.size() * seq_len);
        for (auto idx : indices) {
            const int* row = &tokens[idx * (seq_len + 1)];
            b.tokens.insert(b.tokens.end(), row, row + seq_len);
            b.labels.insert(b.labels.end(), row + 1, row + seq_len + 1);
        }
    } else {
        const std::size_t dim = features.cols();
        b.features = Tensor(Shape{indices.size(), dim});
        for (std::size_t r = 0; r < indices.size(); ++r) {
            for (std::size_t c = 0; c < dim; ++c) b.features.at(r, c) = features.at(indices[r], c);
            b.labels.push_back(labels[indices[r]]);
        }
    }
    return b;
}

Batch Dataset::all() const {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return batch(idx);
}

Batch Dataset::sample(std::size_t batch_size, RngStream& rng) const {
    if (batch_size == 0 || batch_size >= n) return all();
    std::vector<std::size_t> idx(batch_size);
    for (auto& i : idx) i = static_cast<std::size_t>(rng.below(n));
    return batch(idx);
}

Dataset synthetic_task(Task task, std::size_t n, std::uint64_t seed, const TaskOptions& options) {
    if (n == 0) throw std::invalid_argument("dataset size must be positive");
    Dataset d;
    d.task = task;
    d.n = n;
    RngStream rng(seed, 0x5eed'da7aULL);
    switch (task) {
    case Task::two_class_gaussians: {
        // Unit-variance clouds centred at +-(s/2, s/2); labels alternate.
        d.features = Tensor(Shape{n, 2});
        const double half = 0.5 * options.separation;
        for (std::size_t i = 0; i < n; ++i) {
            const int label = static_cast<int>(i % 2);
            const double centre = label ? half : -half;
            d.features.at(i, 0) = centre + rng.normal();
            d.features.at(i, 1) = centre + rng.normal();
            d.labels.push_back(label);
        }
        break;
    }
    case Task::xor_rings: {
        // Label = (outer ring) xor (first/third quadrant).
        d.features = Tensor(Shape{n, 2});
        for (std::size_t i = 0; i < n; ++i) {
            const int ring = static_cast<int>(rng.below(2));
            const double radius = (ring ? 2.0 : 1.0) + 0.1 * rng.normal();
            const double angle = 2.0 * std::numbers::pi * rng.uniform();
            const double x = radius * std::cos(angle), y = radius * std::sin(angle);
            d.features.at(i, 0) = x;
            d.features.at(i, 1) = y;
            d.labels.push_back(ring ^ static_cast<int>(x * y > 0.0));
        }
        break;
    }
    case Task::char_sequence_copy: {
        // Rows of seq_len + 1 tokens: a random prefix, then the prefix repeated.
        if (options.vocab < 2 || options.seq_len == 0) throw std::invalid_argument("sequence task needs vocab >= 2");
        d.seq_len = options.seq_len;
        d.num_classes = options.vocab;
        const std::size_t len = options.seq_len + 1;
        const std::size_t prefix = (len + 1) / 2;
        d.tokens.resize(n * len);
        for (std::size_t i = 0; i < n; ++i) {
            int* row = &d.tokens[i * len];
            for (std::size_t t = 0; t < len; ++t)
                row[t] = t < prefix ? static_cast<int>(rng.below(options.vocab)) : row[t - prefix];
        }
        break;
    }
    }
    if (options.input_scale != 1.0 && task != Task::char_sequence_copy)
        for (double& v : d.features.values()) v *= options.input_scale;
    return d;
}

EvalResult evaluate(const Model& model, std::span<const Tensor> params, const Dataset& data, const MatmulHook& hook,
                    std::size_t chunk) {
    double loss_sum = 0.0;
    std::size_t correct = 0, predictions = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < data.n; start += chunk) {
        idx.resize(std::min(chunk, data.n - start));
        std::iota(idx.begin(), idx.end(), start);
        const Batch b = data.batch(idx);
        Tape tape(hook);
        std::vector<Var> vars;
        for (const auto& p : params) vars.push_back(tape.constant(p));
        const Var logits = model.logits(tape, vars, b);
        const Var loss = tape.cross_entropy(logits, b.labels);
        loss_sum += tape.value(loss).item() * static_cast<double>(b.labels.size());
        const Tensor& z = tape.value(logits);
        for (std::size_t r = 0; r < z.rows(); ++r) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < z.cols(); ++c)
                if (z.at(r, c) > z.at(r, best)) best = c;
            correct += static_cast<int>(best) == b.labels[r];
        }
        predictions += b.labels.size();
    }
    return {loss_sum / static_cast<double>(predictions),
            static_cast<double>(correct) / static_cast<double>(predictions)};
}

} // namespace lmd::models
