#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "lmd/harness.hpp"
#include "lmd/lmd_optimizer.hpp"
#include "lmd/lognormal.hpp"
#include "lmd/mx_quant.hpp"

namespace py = pybind11;
using namespace lmd;

namespace {

py::dict record_dict(const harness::MetricRecord& r) {
    py::dict d;
    d["step"] = r.step;
    d["loss"] = r.loss;
    d["eval_metric"] = r.eval_metric;
    d["weight_l2"] = r.weight_l2;
    d["momentum_l2_pos"] = r.momentum_l2_pos;
    d["lr"] = r.lr;
    return d;
}

} // namespace

PYBIND11_MODULE(_lmd, m) {
    m.doc() = "Log-normal multiplicative dynamics: optimizer, MX emulation and training harness";

    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
    py::register_exception<harness::ConfigError>(m, "ConfigError", PyExc_ValueError);

    // MX formats
    auto mx = m.def_submodule("mx", "Microscaling block formats");
    mx.attr("BLOCK_SIZE") = mx::kBlockSize;
    mx.def("round_bf16", &mx::round_bf16, py::arg("x"));
    mx.def("encode", [](double x, std::string_view f) { return mx::encode_element(x, mx::parse_format(f)); },
           py::arg("x"), py::arg("format"));
    mx.def("decode", [](std::uint8_t c, std::string_view f) { return mx::decode_element(c, mx::parse_format(f)); },
           py::arg("code"), py::arg("format"));
    mx.def("max_value", [](std::string_view f) { return mx::format_info(mx::parse_format(f)).max_value; },
           py::arg("format"));
    mx.def(
        "quantize_block",
        [](const std::vector<double>& values, std::string_view f) {
            const auto b = mx::quantize_block(values, mx::parse_format(f));
            return py::make_tuple(static_cast<int>(b.scale_exp),
                                  std::vector<int>(b.codes.begin(), b.codes.begin() + b.length));
        },
        py::arg("values"), py::arg("format"), "Returns (scale_exp, codes) for at most 32 values.");
    mx.def(
        "quantize_dequantize",
        [](const std::vector<double>& values, std::string_view f) {
            return mx::quantize_dequantize(values, mx::parse_format(f));
        },
        py::arg("values"), py::arg("format"));

    // log-normal helpers
    m.def("lognormal_mean", &lognormal_mean, py::arg("sigma"), py::arg("median") = 1.0);
    m.def("lognormal_std", &lognormal_std, py::arg("sigma"), py::arg("median") = 1.0);
    m.def("lognormal_density", &lognormal_density, py::arg("sigma"), py::arg("median"), py::arg("theta"));
    m.def("kl_equal_sigma", &kl_equal_sigma, py::arg("mu_q"), py::arg("mu_p"), py::arg("sigma"));
    m.def(
        "sample_noise",
        [](double sigma, std::size_t n, std::uint64_t seed, std::uint64_t stream) {
            RngStream rng(seed, stream);
            return sample_noise({sigma, 0.01}, n, rng);
        },
        py::arg("sigma"), py::arg("n"), py::arg("seed") = 0, py::arg("stream") = 0);

    // optimizer pieces
    m.def("default_prior_median", &default_prior_median, py::arg("sigma"));
    m.def(
        "init_from_default",
        [](double theta0, double sigma) {
            LmdHyper h;
            h.sigma = sigma;
            h.m_r = default_prior_median(sigma);
            const auto p = init_from_default(theta0, h);
            return py::make_tuple(p.plus, p.minus);
        },
        py::arg("theta0"), py::arg("sigma") = 0.125);
    m.def(
        "init_scale_param",
        [](double sigma) {
            const auto s = init_scale_param(sigma);
            return py::make_tuple(s.m_plus, s.m_minus);
        },
        py::arg("sigma") = 0.125);

    // harness
    m.def("lr_schedule", &harness::lr_schedule, py::arg("step"), py::arg("total"), py::arg("warmup"), py::arg("peak"),
          py::arg("floor_frac"));
    m.def("normalize_config", [](std::string_view text) { return harness::RunConfig::parse(text).to_text(); },
          py::arg("text"), "Parse, validate and re-emit a run configuration.");
    m.def(
        "train",
        [](std::string_view text) {
            const auto cfg = harness::RunConfig::parse(text);
            harness::TrainResult r;
            {
                py::gil_scoped_release release;
                r = harness::train(cfg);
            }
            py::dict out;
            py::list records;
            for (const auto& rec : r.records) records.append(record_dict(rec));
            out["records"] = records;
            out["csv"] = r.csv();
            out["checkpoint"] = r.checkpoint;
            out["aborted"] = r.aborted;
            out["abort_step"] = r.abort_step;
            out["abort_reason"] = r.abort_reason;
            return out;
        },
        py::arg("config_text"), "Run one configuration in-process; nothing is written to disk.");
}
