#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "lmd/harness.hpp"

namespace lmd::harness {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

double to_double(std::string_view key, std::string_view v) {
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out))
        throw ConfigError("config key '" + std::string(key) + "': expected a real number, got '" + std::string(v) + "'");
    return out;
}

std::uint64_t to_uint(std::string_view key, std::string_view v) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw ConfigError("config key '" + std::string(key) + "': expected a non-negative integer, got '" +
                          std::string(v) + "'");
    return out;
}

std::optional<double> to_optional(std::string_view key, std::string_view v) {
    if (v == "none" || v == "off") return std::nullopt;
    return to_double(key, v);
}

template <typename F>
auto wrap(std::string_view key, F&& parse) {
    try {
        return parse();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError("config key '" + std::string(key) + "': " + e.what());
    }
}

OptimizerKind parse_optimizer(std::string_view s) {
    if (s == "lmd") return OptimizerKind::lmd;
    if (s == "adamw") return OptimizerKind::adamw;
    if (s == "mwu") return OptimizerKind::mwu;
    if (s == "mwu-clip") return OptimizerKind::mwu_clip;
    if (s == "gd") return OptimizerKind::gd;
    throw ConfigError("unknown optimizer '" + std::string(s) + "' (lmd | adamw | mwu | mwu-clip | gd)");
}

Precision parse_precision(std::string_view s) {
    if (s == "full") return Precision::full;
    if (s == "mxfp6") return Precision::mxfp6;
    if (s == "mxfp4") return Precision::mxfp4;
    throw ConfigError("unknown precision '" + std::string(s) + "' (full | mxfp6 | mxfp4)");
}

template <typename E>
E parse_enum(std::string_view key, std::string_view v, std::initializer_list<std::pair<std::string_view, E>> options) {
    for (const auto& [name, value] : options)
        if (v == name) return value;
    throw ConfigError("config key '" + std::string(key) + "': unexpected value '" + std::string(v) + "'");
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

std::string_view to_string(OptimizerKind k) noexcept {
    switch (k) {
    case OptimizerKind::lmd: return "lmd";
    case OptimizerKind::adamw: return "adamw";
    case OptimizerKind::mwu: return "mwu";
    case OptimizerKind::mwu_clip: return "mwu-clip";
    case OptimizerKind::gd: return "gd";
    }
    return "lmd";
}

std::string_view to_string(Precision p) noexcept {
    switch (p) {
    case Precision::full: return "full";
    case Precision::mxfp6: return "mxfp6";
    case Precision::mxfp4: return "mxfp4";
    }
    return "full";
}

double RunConfig::effective_lr() const {
    if (lr) return *lr;
    switch (optimizer) {
    case OptimizerKind::lmd: return 0.005;
    case OptimizerKind::adamw: return 0.001;
    case OptimizerKind::mwu:
    case OptimizerKind::mwu_clip: return 0.01;
    case OptimizerKind::gd: return 0.1;
    }
    return 0.005;
}

LmdHyper RunConfig::lmd_hyper() const {
    LmdHyper h;
    h.eta = effective_lr();
    h.sigma = sigma;
    h.m_r = m_r.value_or(default_prior_median(sigma));
    h.beta1 = beta1;
    h.beta2 = beta2;
    h.grad_clip = grad_clip;
    h.momentum_order = momentum_order;
    h.decay = decay;
    h.grad_scaling = grad_scaling;
    return h;
}

void RunConfig::validate() const {
    try {
        model.validate();
        if (optimizer == OptimizerKind::lmd) lmd_hyper().validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (!(effective_lr() > 0.0)) throw ConfigError("lr must be > 0");
    if (devices * samples < 1) throw ConfigError("devices * samples must be >= 1");
    if (!(floor_frac >= 0.0 && floor_frac <= 1.0)) throw ConfigError("floor_frac must lie in [0, 1]");
    if (warmup > steps) throw ConfigError("warmup must not exceed steps");
    if (log_interval == 0) throw ConfigError("log_interval must be >= 1");
    if (threads == 0) throw ConfigError("threads must be >= 1");
    if (dataset_size == 0) throw ConfigError("dataset_size must be >= 1");
    if (!(clip_bound > 0.0)) throw ConfigError("clip_bound must be > 0");
    if (!(input_scale > 0.0) || !std::isfinite(input_scale)) throw ConfigError("input_scale must be > 0");
    if (grad_clip && !(*grad_clip > 0.0)) throw ConfigError("grad_clip must be > 0");
    const bool sequence_task = task == models::Task::char_sequence_copy;
    const bool transformer = model.arch == models::Arch::tiny_transformer;
    if (sequence_task != transformer)
        throw ConfigError("char-sequence-copy pairs with tiny-transformer; classification tasks pair with mlp");
    if (!transformer && (model.layers.front() != 2 || model.layers.back() != 2))
        throw ConfigError("classification tasks need mlp layers starting and ending with 2");
}

RunConfig RunConfig::parse(std::string_view text) {
    RunConfig cfg;
    using Setter = std::function<void(std::string_view)>;
    const std::map<std::string, Setter, std::less<>> setters{
        {"model", [&](auto v) { cfg.model.arch = wrap("model", [&] { return models::parse_arch(v); }); }},
        {"layers",
         [&](auto v) {
             cfg.model.layers.clear();
             std::size_t start = 0;
             while (start <= v.size()) {
                 const auto end = std::min(v.find(',', start), v.size());
                 cfg.model.layers.push_back(to_uint("layers", trim(v.substr(start, end - start))));
                 start = end + 1;
             }
         }},
        {"activation", [&](auto v) { cfg.model.activation = wrap("activation", [&] { return models::parse_activation(v); }); }},
        {"vocab", [&](auto v) { cfg.model.vocab = to_uint("vocab", v); }},
        {"seq_len", [&](auto v) { cfg.model.seq_len = to_uint("seq_len", v); }},
        {"d_model", [&](auto v) { cfg.model.d_model = to_uint("d_model", v); }},
        {"d_ff", [&](auto v) { cfg.model.d_ff = to_uint("d_ff", v); }},
        {"task", [&](auto v) { cfg.task = wrap("task", [&] { return models::parse_task(v); }); }},
        {"dataset_size", [&](auto v) { cfg.dataset_size = to_uint("dataset_size", v); }},
        {"separation", [&](auto v) { cfg.separation = to_double("separation", v); }},
        {"input_scale", [&](auto v) { cfg.input_scale = to_double("input_scale", v); }},
        {"optimizer", [&](auto v) { cfg.optimizer = parse_optimizer(v); }},
        {"lr", [&](auto v) { cfg.lr = to_double("lr", v); }},
        {"sigma", [&](auto v) { cfg.sigma = to_double("sigma", v); }},
        {"m_r", [&](auto v) { cfg.m_r = to_double("m_r", v); }},
        {"beta1", [&](auto v) { cfg.beta1 = to_double("beta1", v); }},
        {"beta2", [&](auto v) { cfg.beta2 = to_double("beta2", v); }},
        {"grad_clip", [&](auto v) { cfg.grad_clip = to_optional("grad_clip", v); }},
        {"momentum_order",
         [&](auto v) {
             cfg.momentum_order = parse_enum<MomentumOrder>("momentum_order", v,
                                                            {{"lion", MomentumOrder::lion}, {"literal", MomentumOrder::literal}});
         }},
        {"decay",
         [&](auto v) {
             cfg.decay = parse_enum<DecayMode>("decay", v,
                                               {{"multiplicative", DecayMode::multiplicative}, {"additive", DecayMode::additive}});
         }},
        {"grad_scaling",
         [&](auto v) {
             cfg.grad_scaling =
                 parse_enum<GradScaling>("grad_scaling", v, {{"by-theta", GradScaling::by_theta}, {"none", GradScaling::none}});
         }},
        {"weight_decay", [&](auto v) { cfg.weight_decay = to_double("weight_decay", v); }},
        {"adam_beta1", [&](auto v) { cfg.adam_beta1 = to_double("adam_beta1", v); }},
        {"adam_beta2", [&](auto v) { cfg.adam_beta2 = to_double("adam_beta2", v); }},
        {"clip_bound", [&](auto v) { cfg.clip_bound = to_double("clip_bound", v); }},
        {"steps", [&](auto v) { cfg.steps = to_uint("steps", v); }},
        {"batch_size", [&](auto v) { cfg.batch_size = to_uint("batch_size", v); }},
        {"devices", [&](auto v) { cfg.devices = to_uint("devices", v); }},
        {"samples", [&](auto v) { cfg.samples = to_uint("samples", v); }},
        {"precision", [&](auto v) { cfg.precision = parse_precision(v); }},
        {"sample_mode",
         [&](auto v) {
             cfg.sample_mode =
                 parse_enum<SampleMode>("sample_mode", v, {{"sampled", SampleMode::sampled}, {"mean", SampleMode::mean}});
         }},
        {"warmup", [&](auto v) { cfg.warmup = to_uint("warmup", v); }},
        {"floor_frac", [&](auto v) { cfg.floor_frac = to_double("floor_frac", v); }},
        {"seed", [&](auto v) { cfg.seed = to_uint("seed", v); }},
        {"log_interval", [&](auto v) { cfg.log_interval = to_uint("log_interval", v); }},
        {"threads", [&](auto v) { cfg.threads = to_uint("threads", v); }},
        {"output_dir", [&](auto v) { cfg.output_dir = std::string(v); }},
    };

    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto end = std::min(text.find('\n', pos), text.size());
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        const auto it = setters.find(key);
        if (it == setters.end()) throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" +
                                                   std::string(key) + "'");
        if (value.empty()) throw ConfigError("config key '" + std::string(key) + "': empty value");
        it->second(value);
    }
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str());
}

std::string RunConfig::to_text() const {
    std::ostringstream out;
    out << "model = " << models::to_string(model.arch) << '\n';
    out << "layers = ";
    for (std::size_t i = 0; i < model.layers.size(); ++i) out << (i ? "," : "") << model.layers[i];
    out << '\n';
    out << "activation = " << models::to_string(model.activation) << '\n';
    out << "vocab = " << model.vocab << "\nseq_len = " << model.seq_len << "\nd_model = " << model.d_model
        << "\nd_ff = " << model.d_ff << '\n';
    out << "task = " << models::to_string(task) << "\ndataset_size = " << dataset_size
        << "\nseparation = " << fmt_double(separation) << "\ninput_scale = " << fmt_double(input_scale) << '\n';
    out << "optimizer = " << to_string(optimizer) << "\nlr = " << fmt_double(effective_lr()) << '\n';
    out << "sigma = " << fmt_double(sigma) << '\n';
    if (m_r) out << "m_r = " << fmt_double(*m_r) << '\n';
    out << "beta1 = " << fmt_double(beta1) << "\nbeta2 = " << fmt_double(beta2) << '\n';
    out << "grad_clip = " << (grad_clip ? fmt_double(*grad_clip) : std::string("none")) << '\n';
    out << "momentum_order = " << lmd::to_string(momentum_order) << "\ndecay = " << lmd::to_string(decay)
        << "\ngrad_scaling = " << lmd::to_string(grad_scaling) << '\n';
    out << "weight_decay = " << fmt_double(weight_decay) << "\nadam_beta1 = " << fmt_double(adam_beta1)
        << "\nadam_beta2 = " << fmt_double(adam_beta2) << "\nclip_bound = " << fmt_double(clip_bound) << '\n';
    out << "steps = " << steps << "\nbatch_size = " << batch_size << "\ndevices = " << devices
        << "\nsamples = " << samples << '\n';
    out << "precision = " << to_string(precision) << "\nsample_mode = " << lmd::to_string(sample_mode) << '\n';
    out << "warmup = " << warmup << "\nfloor_frac = " << fmt_double(floor_frac) << "\nseed = " << seed
        << "\nlog_interval = " << log_interval << "\nthreads = " << threads << "\noutput_dir = " << output_dir << '\n';
    return out.str();
}

} // namespace lmd::harness
