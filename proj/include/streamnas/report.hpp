#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "streamnas/dataset.hpp"
#include "streamnas/errors.hpp"

namespace streamnas {
namespace report {

namespace detail {

inline std::string svg_header(int width, int height) {
    std::ostringstream oss;
    oss << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" viewBox=\"0 0 " << width << " " << height << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    return oss.str();
}

inline std::string fmt(double v) {
    std::ostringstream oss;
    oss << std::setprecision(6) << v;
    return oss.str();
}

}  // namespace detail

/// Per-timestep mean validation error per stage, read from trials.jsonl.
inline std::map<std::string, std::vector<double>> learning_curves(const std::string& run_dir) {
    std::ifstream in(run_dir + "/trials.jsonl");
    if (!in) throw IoError("report: missing trials.jsonl in " + run_dir);
    std::map<std::string, std::map<std::size_t, std::pair<double, std::size_t>>> sums;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const nlohmann::json trial = nlohmann::json::parse(line);
        auto& cell = sums[trial["stage"].get<std::string>()][trial["t"].get<std::size_t>()];
        cell.first += trial["e_val"].get<double>();
        cell.second += 1;
    }
    std::map<std::string, std::vector<double>> curves;
    for (const auto& [stage, by_t] : sums) {
        std::vector<double>& curve = curves[stage];
        for (const auto& [t, cell] : by_t) {
            curve.resize(std::max(curve.size(), t + 1), 0.0);
            curve[t] = cell.first / static_cast<double>(cell.second);
        }
    }
    return curves;
}

/// Controller learning curve (mean E_val per timestep, one polyline per stage).
inline void write_learning_curve_svg(const std::string& run_dir, const std::string& out_path) {
    const auto curves = learning_curves(run_dir);
    if (curves.empty()) throw IoError("report: no trials to plot");
    const int width = 640, height = 400, margin = 50;

    double lo = 1e300, hi = -1e300;
    std::size_t max_len = 0;
    for (const auto& [stage, curve] : curves) {
        max_len = std::max(max_len, curve.size());
        for (double v : curve) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (hi <= lo) hi = lo + 1.0;

    const std::vector<std::string> palette = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
    std::ostringstream svg;
    svg << detail::svg_header(width, height);
    svg << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
        << "mean validation error per timestep</text>\n";
    svg << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\"" << width - margin
        << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\""
        << height - margin << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << margin << "\" y=\"" << margin - 8 << "\" font-size=\"11\">"
        << detail::fmt(hi) << "</text>\n";
    svg << "<text x=\"" << margin << "\" y=\"" << height - margin + 16 << "\" font-size=\"11\">"
        << detail::fmt(lo) << "</text>\n";

    std::size_t color = 0;
    int legend_y = margin;
    for (const auto& [stage, curve] : curves) {
        const std::string& stroke = palette[color % palette.size()];
        std::ostringstream points;
        for (std::size_t t = 0; t < curve.size(); ++t) {
            const double x =
                margin + (width - 2.0 * margin) *
                             (max_len > 1 ? static_cast<double>(t) / static_cast<double>(max_len - 1)
                                          : 0.5);
            const double y =
                height - margin - (height - 2.0 * margin) * (curve[t] - lo) / (hi - lo);
            points << (t ? " " : "") << detail::fmt(x) << ',' << detail::fmt(y);
        }
        svg << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"1.5\" points=\""
            << points.str() << "\"/>\n";
        svg << "<text x=\"" << width - margin + 4 << "\" y=\"" << legend_y
            << "\" font-size=\"11\" fill=\"" << stroke << "\">" << stage << "</text>\n";
        legend_y += 16;
        ++color;
    }
    svg << "</svg>\n";

    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw IoError("report: cannot write " + out_path);
    out << svg.str();
}

/// Prediction scatter (predicted vs truth) from report.json.
inline void write_scatter_svg(const std::string& run_dir, const std::string& out_path) {
    std::ifstream in(run_dir + "/report.json");
    if (!in) throw IoError("report: missing report.json in " + run_dir);
    const nlohmann::json doc = nlohmann::json::parse(in);
    const auto& preds = doc.at("best_predictions");
    if (preds.empty()) throw IoError("report: no predictions to plot");

    double lo = 1e300, hi = -1e300;
    for (const auto& entry : preds) {
        for (const char* field : {"predicted", "truth"}) {
            const double v = entry.at(field).get<double>();
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (hi <= lo) hi = lo + 1.0;
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;

    const int size = 420, margin = 45;
    auto to_px = [&](double v) {
        return margin + (size - 2.0 * margin) * (v - lo) / (hi - lo);
    };
    std::ostringstream svg;
    svg << detail::svg_header(size, size);
    svg << "<text x=\"" << size / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">"
        << "predictions vs ground truth</text>\n";
    svg << "<line x1=\"" << detail::fmt(to_px(lo)) << "\" y1=\"" << detail::fmt(size - to_px(lo))
        << "\" x2=\"" << detail::fmt(to_px(hi)) << "\" y2=\"" << detail::fmt(size - to_px(hi))
        << "\" stroke=\"#bbbbbb\" stroke-dasharray=\"4 3\"/>\n";
    for (const auto& entry : preds) {
        const double x = to_px(entry.at("truth").get<double>());
        const double y = size - to_px(entry.at("predicted").get<double>());
        svg << "<circle cx=\"" << detail::fmt(x) << "\" cy=\"" << detail::fmt(y)
            << "\" r=\"3\" fill=\"#1f77b4\" fill-opacity=\"0.7\"/>\n";
    }
    svg << "<text x=\"" << size / 2 << "\" y=\"" << size - 8
        << "\" text-anchor=\"middle\" font-size=\"11\">truth</text>\n";
    svg << "</svg>\n";

    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw IoError("report: cannot write " + out_path);
    out << svg.str();
}

/// leaderboard.json -> leaderboard.csv.
inline void write_leaderboard_csv(const std::string& run_dir, const std::string& out_path) {
    std::ifstream in(run_dir + "/leaderboard.json");
    if (!in) throw IoError("report: missing leaderboard.json in " + run_dir);
    const nlohmann::json doc = nlohmann::json::parse(in);
    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw IoError("report: cannot write " + out_path);
    out << "rank,key,mean_e_val,count,variance\n";
    std::size_t rank = 1;
    for (const auto& entry : doc) {
        out << rank++ << ',' << entry.at("key").get<std::string>() << ','
            << csvio::format_double(entry.at("mean_e_val").get<double>()) << ','
            << entry.at("count").get<std::size_t>() << ','
            << csvio::format_double(entry.at("variance").get<double>()) << "\n";
    }
}

/// Stream-kind comparison table (landmark CNN-vs-GNN ablation and similar).
struct ComparisonRow {
    std::string kind;
    std::uint64_t seed = 0;
    double best_e_val = 0.0;
};

inline void write_comparison_csv(const std::vector<ComparisonRow>& rows,
                                 const std::string& out_path) {
    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw IoError("report: cannot write " + out_path);
    out << "stream_kind,seed,best_e_val\n";
    for (const auto& row : rows)
        out << row.kind << ',' << row.seed << ',' << csvio::format_double(row.best_e_val) << "\n";
}

}  // namespace report
}  // namespace streamnas
