#pragma once

// Run reporting: the trainer's loss reports are logged as JSON lines, and
// this module turns a finished run directory into a human-readable markdown
// report with an SVG loss chart and a metric table.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nct/losses.hpp"

namespace nct {

inline nlohmann::json loss_report_json(const LossReport& r) {
    return {{"stage", r.stage},       {"step", r.step},
            {"total", r.total},       {"l_sent", r.l_sent},
            {"l_nct", r.l_nct},       {"l_ud", r.l_ud},
            {"l_sd", r.l_sd},         {"l_ud_mono", r.l_ud_mono},
            {"l_sd_mono", r.l_sd_mono}, {"lambda", r.lambda},
            {"lr", r.lr}};
}

inline LossReport loss_report_from_json(const nlohmann::json& j) {
    LossReport r;
    r.stage = j.at("stage").get<int>();
    r.step = j.at("step").get<std::size_t>();
    r.total = j.at("total").get<double>();
    r.l_sent = j.at("l_sent").get<double>();
    r.l_nct = j.at("l_nct").get<double>();
    r.l_ud = j.at("l_ud").get<double>();
    r.l_sd = j.at("l_sd").get<double>();
    r.l_ud_mono = j.at("l_ud_mono").get<double>();
    r.l_sd_mono = j.at("l_sd_mono").get<double>();
    r.lambda = j.at("lambda").get<double>();
    r.lr = j.at("lr").get<double>();
    return r;
}

inline std::vector<LossReport> load_train_log(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("train log: cannot open '" + path + "'");
    std::vector<LossReport> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        out.push_back(loss_report_from_json(nlohmann::json::parse(line)));
    }
    return out;
}

struct SvgSeries {
    std::string label;
    std::vector<std::pair<double, double>> points;  // (x, y)
};

// Minimal line chart; enough for loss curves. Returns the SVG document.
inline std::string svg_line_chart(const std::vector<SvgSeries>& series,
                                  const std::string& title, int width = 720,
                                  int height = 360) {
    static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c",
                                     "#9467bd", "#ff7f0e", "#8c564b"};
    const double ml = 54, mr = 16, mt = 34, mb = 34;
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool any = false;
    for (const SvgSeries& s : series)
        for (const auto& [x, y] : s.points) {
            if (!std::isfinite(x) || !std::isfinite(y)) continue;
            if (!any) {
                xmin = xmax = x;
                ymin = ymax = y;
                any = true;
            }
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (xmax <= xmin) xmax = xmin + 1;
    if (ymax <= ymin) ymax = ymin + 1;
    auto px = [&](double x) {
        return ml + (x - xmin) / (xmax - xmin) * (width - ml - mr);
    };
    auto py = [&](double y) {
        return height - mb - (y - ymin) / (ymax - ymin) * (height - mt - mb);
    };

    std::ostringstream os;
    os << std::setprecision(6);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
       << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
       << height << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" "
       << "font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\""
       << width - mr << "\" y2=\"" << height - mb
       << "\" stroke=\"#333\" stroke-width=\"1\"/>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
       << "\" y2=\"" << height - mb
       << "\" stroke=\"#333\" stroke-width=\"1\"/>\n";
    for (int tick = 0; tick <= 4; ++tick) {
        const double fy = ymin + (ymax - ymin) * tick / 4.0;
        const double fx = xmin + (xmax - xmin) * tick / 4.0;
        os << "<text x=\"" << ml - 6 << "\" y=\"" << py(fy) + 4
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
           << "font-size=\"10\">" << std::setprecision(3) << fy
           << std::setprecision(6) << "</text>\n";
        os << "<text x=\"" << px(fx) << "\" y=\"" << height - mb + 14
           << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           << "font-size=\"10\">" << std::setprecision(4) << fx
           << std::setprecision(6) << "</text>\n";
    }
    std::size_t color = 0;
    double legend_y = mt + 4;
    for (const SvgSeries& s : series) {
        const char* stroke = kPalette[color++ % 6];
        os << "<polyline fill=\"none\" stroke=\"" << stroke
           << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& [x, y] : s.points)
            if (std::isfinite(x) && std::isfinite(y))
                os << px(x) << "," << py(y) << " ";
        os << "\"/>\n";
        os << "<text x=\"" << width - mr - 4 << "\" y=\"" << legend_y
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
           << "font-size=\"11\" fill=\"" << stroke << "\">" << s.label
           << "</text>\n";
        legend_y += 14;
    }
    os << "</svg>\n";
    return os.str();
}

// Loss chart for one training run: total loss plus whichever components were
// active, x = cumulative logged step across stages.
inline std::string training_chart(const std::vector<LossReport>& log) {
    auto series_of = [&](const char* label, double LossReport::*field) {
        SvgSeries s;
        s.label = label;
        std::size_t i = 0;
        for (const LossReport& r : log) {
            const double v = r.*field;
            if (v != 0.0) s.points.push_back({static_cast<double>(i), v});
            ++i;
        }
        return s;
    };
    std::vector<SvgSeries> series;
    SvgSeries total;
    total.label = "total";
    for (std::size_t i = 0; i < log.size(); ++i)
        total.points.push_back({static_cast<double>(i), log[i].total});
    series.push_back(total);
    for (const auto& [label, field] :
         std::vector<std::pair<const char*, double LossReport::*>>{
             {"sentence", &LossReport::l_sent},
             {"context", &LossReport::l_nct},
             {"dialogue head", &LossReport::l_ud},
             {"speaker head", &LossReport::l_sd}}) {
        SvgSeries s = series_of(label, field);
        if (!s.points.empty()) series.push_back(s);
    }
    return svg_line_chart(series, "training loss by logged step");
}

namespace detail {

inline std::string fmt(double v, int prec = 3) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << v;
    return os.str();
}

}  // namespace detail

// Markdown summary of a run: loss table from the training log plus one
// metric block per labeled metric report JSON.
inline std::string render_report(
    const std::vector<LossReport>& log,
    const std::vector<std::pair<std::string, nlohmann::json>>& metrics,
    const std::string& chart_file = "") {
    std::ostringstream os;
    os << "# Run report\n\n";
    if (!chart_file.empty())
        os << "![training loss](" << chart_file << ")\n\n";
    if (!log.empty()) {
        os << "## Training\n\n";
        os << "| stage | step | total | sentence | context | dialogue head | "
              "speaker head | lambda | lr |\n";
        os << "|---|---|---|---|---|---|---|---|---|\n";
        for (const LossReport& r : log)
            os << "| " << r.stage << " | " << r.step << " | "
               << detail::fmt(r.total) << " | " << detail::fmt(r.l_sent) << " | "
               << detail::fmt(r.l_nct) << " | "
               << detail::fmt(r.l_ud + r.l_ud_mono) << " | "
               << detail::fmt(r.l_sd + r.l_sd_mono) << " | "
               << detail::fmt(r.lambda, 2) << " | " << detail::fmt(r.lr, 5)
               << " |\n";
        os << "\n";
    }
    if (!metrics.empty()) {
        os << "## Evaluation\n\n";
        os << "| run | pairs | BLEU | TER | coh-1 | coh-2 | coh-3 | coh-win | "
              "ambiguous |\n";
        os << "|---|---|---|---|---|---|---|---|---|\n";
        for (const auto& [label, j] : metrics) {
            os << "| " << label << " | " << j.at("pairs").get<std::size_t>()
               << " | " << detail::fmt(j.at("bleu").at("score").get<double>(), 2)
               << " | " << detail::fmt(j.at("ter").get<double>(), 3);
            const auto& c = j.at("coherence");
            os << " | " << detail::fmt(c.at("one_back").get<double>(), 3) << " | "
               << detail::fmt(c.at("two_back").get<double>(), 3) << " | "
               << detail::fmt(c.at("three_back").get<double>(), 3) << " | "
               << detail::fmt(c.at("window").get<double>(), 3);
            if (j.contains("ambiguous_accuracy"))
                os << " | "
                   << detail::fmt(j.at("ambiguous_accuracy").get<double>(), 3);
            else
                os << " | -";
            os << " |\n";
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace nct
