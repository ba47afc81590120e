#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "lmd/harness.hpp"

namespace lmd::harness {

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string short_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::string xml_escape(std::string_view s) {
    std::string out;
    for (char ch : s) {
        switch (ch) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += ch;
        }
    }
    return out;
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

struct Panel {
    const char* title;
    double MetricRecord::*field;
};

constexpr Panel kPanels[] = {
    {"loss", &MetricRecord::loss},
    {"weight_l2", &MetricRecord::weight_l2},
    {"momentum_l2_pos", &MetricRecord::momentum_l2_pos},
};

std::string render_svg(std::span<const RunSeries> runs) {
    constexpr double width = 720, panel_h = 240, left = 80, right = 180, top = 30, bottom = 40;
    const double height = panel_h * std::size(kPanels);
    std::uint64_t max_step = 1;
    for (const auto& r : runs)
        for (const auto& rec : r.records) max_step = std::max(max_step, rec.step);

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (std::size_t p = 0; p < std::size(kPanels); ++p) {
        const auto& panel = kPanels[p];
        const double y0 = p * panel_h + top;
        const double plot_w = width - left - right, plot_h = panel_h - top - bottom;
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (const auto& r : runs)
            for (const auto& rec : r.records) {
                lo = std::min(lo, rec.*panel.field);
                hi = std::max(hi, rec.*panel.field);
            }
        if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
        if (hi - lo < 1e-300) hi = lo + 1.0;

        svg << "<g>\n<text x=\"" << left << "\" y=\"" << y0 - 8 << "\" font-weight=\"bold\">" << panel.title
            << " vs step</text>\n";
        svg << "<rect x=\"" << left << "\" y=\"" << y0 << "\" width=\"" << plot_w << "\" height=\"" << plot_h
            << "\" fill=\"none\" stroke=\"black\"/>\n";
        svg << "<text x=\"" << left - 6 << "\" y=\"" << y0 + 4 << "\" text-anchor=\"end\">" << short_num(hi) << "</text>\n";
        svg << "<text x=\"" << left - 6 << "\" y=\"" << y0 + plot_h << "\" text-anchor=\"end\">" << short_num(lo)
            << "</text>\n";
        svg << "<text x=\"" << left << "\" y=\"" << y0 + plot_h + 16 << "\">0</text>\n";
        svg << "<text x=\"" << left + plot_w << "\" y=\"" << y0 + plot_h + 16 << "\" text-anchor=\"end\">" << max_step
            << "</text>\n";
        for (std::size_t k = 0; k < runs.size(); ++k) {
            const char* colour = kPalette[k % std::size(kPalette)];
            svg << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
            for (const auto& rec : runs[k].records) {
                const double x = left + plot_w * static_cast<double>(rec.step) / static_cast<double>(max_step);
                const double y = y0 + plot_h * (1.0 - (rec.*panel.field - lo) / (hi - lo));
                svg << short_num(x) << ',' << short_num(y) << ' ';
            }
            svg << "\"/>\n";
            const double ly = y0 + 12 + 16 * static_cast<double>(k);
            svg << "<line x1=\"" << left + plot_w + 10 << "\" y1=\"" << ly - 4 << "\" x2=\"" << left + plot_w + 30
                << "\" y2=\"" << ly - 4 << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
            svg << "<text x=\"" << left + plot_w + 34 << "\" y=\"" << ly << "\">" << xml_escape(runs[k].label)
                << "</text>\n";
        }
        svg << "</g>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

std::uint64_t logging_interval(const RunSeries& run) {
    if (run.records.size() < 2) return 0;
    return run.records[1].step - run.records[0].step;
}

} // namespace

CompareResult compare(std::span<const RunSeries> runs) {
    if (runs.size() < 2) throw std::invalid_argument("compare: at least two runs required");
    const std::uint64_t interval = logging_interval(runs.front());
    for (const auto& r : runs) {
        if (r.records.empty()) throw std::invalid_argument("compare: run '" + r.label + "' has no records");
        if (logging_interval(r) != interval)
            throw std::invalid_argument("compare: mismatched logging intervals ('" + runs.front().label + "' vs '" +
                                        r.label + "')");
    }

    std::set<std::uint64_t> steps;
    std::vector<std::map<std::uint64_t, const MetricRecord*>> by_step(runs.size());
    for (std::size_t k = 0; k < runs.size(); ++k)
        for (const auto& rec : runs[k].records) {
            steps.insert(rec.step);
            by_step[k][rec.step] = &rec;
        }

    std::ostringstream csv;
    csv << "step";
    for (const auto& r : runs)
        for (const char* col : {"loss", "eval_metric", "weight_l2", "momentum_l2_pos", "lr"}) csv << ',' << r.label << '.' << col;
    csv << '\n';
    for (auto step : steps) {
        csv << step;
        for (std::size_t k = 0; k < runs.size(); ++k) {
            const auto it = by_step[k].find(step);
            if (it == by_step[k].end()) {
                csv << ",,,,,";
                continue;
            }
            const auto& rec = *it->second;
            csv << ',' << num(rec.loss) << ',' << num(rec.eval_metric) << ',' << num(rec.weight_l2) << ','
                << num(rec.momentum_l2_pos) << ',' << num(rec.lr);
        }
        csv << '\n';
    }
    return {csv.str(), render_svg(runs)};
}

RunSeries load_run(const std::filesystem::path& path) {
    auto run_dir_or_csv = path;
    if (!run_dir_or_csv.has_filename()) run_dir_or_csv = run_dir_or_csv.parent_path();
    auto csv_path = run_dir_or_csv;
    if (std::filesystem::is_directory(csv_path)) csv_path /= "metrics.csv";
    std::ifstream in(csv_path, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot read " + csv_path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    auto label = std::filesystem::is_directory(run_dir_or_csv) ? run_dir_or_csv.filename().string()
                                                               : csv_path.parent_path().filename().string();
    if (label.empty()) label = csv_path.stem().string();
    return {label, parse_csv(buffer.str())};
}

} // namespace lmd::harness
