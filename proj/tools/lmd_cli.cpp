// lmd: train / compare / mx-inspect front end.
//
// Exit codes: 0 success, 1 configuration or usage error, 2 numerical abort.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lmd/harness.hpp"
#include "lmd/mx_quant.hpp"

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitNumerical = 2;

std::vector<double> parse_values(const std::string& text) {
    std::vector<double> values;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto end = std::min(text.find(',', start), text.size());
        const auto token = text.substr(start, end - start);
        std::size_t used = 0;
        const double v = std::stod(token, &used);
        if (token.find_first_not_of(" \t", used) != std::string::npos)
            throw std::invalid_argument("bad value '" + token + "'");
        values.push_back(v);
        start = end + 1;
    }
    return values;
}

int run_train(const std::string& config_path, const std::string& output_override) {
    auto cfg = lmd::harness::RunConfig::load(config_path);
    if (!output_override.empty()) cfg.output_dir = output_override;
    const auto result = lmd::harness::train(cfg);
    lmd::harness::write_run(result, cfg.output_dir);
    if (result.aborted) {
        std::cerr << "numerical abort at step " << result.abort_step << ": " << result.abort_reason << '\n';
        return kExitNumerical;
    }
    const auto& last = result.records.back();
    std::printf("step %llu loss %.6g eval_metric %.6g weight_l2 %.6g -> %s\n",
                static_cast<unsigned long long>(last.step), last.loss, last.eval_metric, last.weight_l2,
                cfg.output_dir.c_str());
    return 0;
}

int run_compare(const std::vector<std::string>& runs, const std::string& out_dir) {
    std::vector<lmd::harness::RunSeries> series;
    for (const auto& r : runs) series.push_back(lmd::harness::load_run(r));
    const auto result = lmd::harness::compare(series);
    std::filesystem::create_directories(out_dir);
    std::ofstream(std::filesystem::path(out_dir) / "combined.csv", std::ios::binary) << result.combined_csv;
    std::ofstream(std::filesystem::path(out_dir) / "charts.svg", std::ios::binary) << result.chart_svg;
    std::printf("wrote %s/combined.csv and %s/charts.svg\n", out_dir.c_str(), out_dir.c_str());
    return 0;
}

int run_inspect(const std::string& format, const std::string& values_text) {
    const auto fmt = lmd::mx::parse_format(format);
    const auto values = parse_values(values_text);
    for (std::size_t start = 0; start < values.size(); start += lmd::mx::kBlockSize) {
        const std::size_t len = std::min(lmd::mx::kBlockSize, values.size() - start);
        const auto block = lmd::mx::quantize_block(std::span(values).subspan(start, len), fmt);
        std::printf("# block %zu format %s scale_exp %d\n", start / lmd::mx::kBlockSize,
                    std::string(lmd::mx::format_info(fmt).name).c_str(), static_cast<int>(block.scale_exp));
        std::fputs(lmd::mx::inspect_block(block, start).c_str(), stdout);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Log-normal multiplicative dynamics: training harness and MX tools"};
    app.require_subcommand(1);

    std::string config_path, output_dir;
    auto* train = app.add_subcommand("train", "Run one training configuration");
    train->add_option("--config", config_path, "Flat key = value run configuration")->required()->check(CLI::ExistingFile);
    train->add_option("--out", output_dir, "Override the configured output directory");

    std::vector<std::string> runs;
    std::string compare_out;
    auto* compare = app.add_subcommand("compare", "Align finished runs and draw comparison charts");
    compare->add_option("--runs", runs, "Run directories or metrics.csv files")->required()->expected(2, -1);
    compare->add_option("--out", compare_out, "Output directory")->required();

    std::string format, values;
    auto* inspect = app.add_subcommand("mx-inspect", "Quantize values to MX blocks and dump the codes");
    inspect->add_option("--format", format, "mxfp6 | mxfp4")->required();
    inspect->add_option("--values", values, "Comma-separated values")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*train) return run_train(config_path, output_dir);
        if (*compare) return run_compare(runs, compare_out);
        if (*inspect) return run_inspect(format, values);
    } catch (const lmd::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    }
    return kExitConfig;
}
