#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparselab/csv.hpp"

namespace sparselab {

// Minimalist line chart, enough for eyeballing trends without a plotting
// dependency. One polyline per series over a shared x axis.
struct SvgSeries {
    std::string name;
    std::vector<double> y;
};

inline void write_svg_chart(const std::string& path, const std::string& title, const std::vector<double>& x,
                            const std::vector<SvgSeries>& series) {
    static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    const double width = 720, height = 420, pad = 56;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("svg: cannot open " + path);
    double xmin = x.empty() ? 0.0 : *std::min_element(x.begin(), x.end());
    double xmax = x.empty() ? 1.0 : *std::max_element(x.begin(), x.end());
    double ymin = 0.0, ymax = 1.0;
    bool first = true;
    for (const auto& s : series)
        for (double v : s.y) {
            if (!std::isfinite(v)) continue;
            if (first) {
                ymin = ymax = v;
                first = false;
            } else {
                ymin = std::min(ymin, v);
                ymax = std::max(ymax, v);
            }
        }
    if (xmax == xmin) xmax = xmin + 1.0;
    if (ymax == ymin) ymax = ymin + 1.0;
    auto px = [&](double v) { return pad + (v - xmin) / (xmax - xmin) * (width - 2 * pad); };
    auto py = [&](double v) { return height - pad - (v - ymin) / (ymax - ymin) * (height - 2 * pad); };

    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        << "font-size=\"15\">" << title << "</text>\n";
    out << "<line x1=\"" << pad << "\" y1=\"" << height - pad << "\" x2=\"" << width - pad << "\" y2=\""
        << height - pad << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\"" << height - pad
        << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double yv = ymin + (ymax - ymin) * t / 4.0;
        out << "<text x=\"" << pad - 6 << "\" y=\"" << py(yv) + 4
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt_double(yv)
            << "</text>\n";
        const double xv = xmin + (xmax - xmin) * t / 4.0;
        out << "<text x=\"" << px(xv) << "\" y=\"" << height - pad + 16
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << fmt_double(xv)
            << "</text>\n";
    }
    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* color = kColors[s % 6];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < series[s].y.size() && i < x.size(); ++i) {
            if (!std::isfinite(series[s].y[i])) continue;
            out << px(x[i]) << ',' << py(series[s].y[i]) << ' ';
        }
        out << "\"/>\n";
        out << "<text x=\"" << width - pad + 4 << "\" y=\"" << pad + 16.0 * static_cast<double>(s)
            << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" << color << "\">" << series[s].name
            << "</text>\n";
    }
    out << "</svg>\n";
}

}  // namespace sparselab
