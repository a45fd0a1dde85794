#include "dsprune/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace dsprune {

namespace {

constexpr int kWidth = 720;
constexpr int kHeight = 480;
constexpr int kLeft = 70, kRight = 30, kTop = 40, kBottom = 60;

const char* kPalette[6] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string num(double v, int decimals = 2) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

}  // namespace

std::string render_sweep_svg(const std::vector<MetricsRecord>& records) {
    // method -> sparsity -> after-ft accuracies over seeds
    std::map<std::string, std::map<double, std::vector<double>>> series;
    double max_x = 0.0;
    for (const auto& r : records) {
        series[r.method][r.sparsity].push_back(r.target_after_ft);
        max_x = std::max(max_x, r.sparsity);
    }
    const double x_hi = std::max(0.1, std::ceil(max_x * 10.0 + 1e-9) / 10.0);

    const double plot_w = kWidth - kLeft - kRight;
    const double plot_h = kHeight - kTop - kBottom;
    auto px = [&](double x) { return kLeft + x / x_hi * plot_w; };
    auto py = [&](double y) { return kTop + (1.0 - y) * plot_h; };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
       << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
    os << "<rect width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n";
    os << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
          "font-size=\"16\">Target accuracy vs channel sparsity</text>\n";

    // axes
    os << "<line x1=\"" << kLeft << "\" y1=\"" << py(0.0) << "\" x2=\"" << kLeft + plot_w
       << "\" y2=\"" << py(0.0) << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << kLeft << "\" y1=\"" << py(0.0) << "\" x2=\"" << kLeft << "\" y2=\""
       << py(1.0) << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double y = i / 5.0;
        os << "<line x1=\"" << kLeft - 4 << "\" y1=\"" << py(y) << "\" x2=\"" << kLeft
           << "\" y2=\"" << py(y) << "\" stroke=\"black\"/>\n";
        os << "<text x=\"" << kLeft - 8 << "\" y=\"" << py(y) + 4
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">" << num(y, 1)
           << "</text>\n";
    }
    const int x_ticks = static_cast<int>(std::lround(x_hi * 10.0));
    for (int i = 0; i <= x_ticks; ++i) {
        const double x = i / 10.0;
        os << "<line x1=\"" << px(x) << "\" y1=\"" << py(0.0) << "\" x2=\"" << px(x) << "\" y2=\""
           << py(0.0) + 4 << "\" stroke=\"black\"/>\n";
        os << "<text x=\"" << px(x) << "\" y=\"" << py(0.0) + 18
           << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << num(x, 1)
           << "</text>\n";
    }
    os << "<text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << kHeight - 16
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">channel sparsity "
          "ratio</text>\n";
    os << "<text x=\"18\" y=\"" << kTop + plot_h / 2
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 "
          "18 "
       << kTop + plot_h / 2 << ")\">target accuracy (after finetune)</text>\n";

    // series, sorted by method name for stable colors and legend order
    int idx = 0;
    for (const auto& [method, points] : series) {
        const char* color = kPalette[idx % 6];
        std::ostringstream poly, dots, counts;
        bool first = true;
        for (const auto& [sparsity, accs] : points) {
            double mean = 0.0;
            for (double a : accs) mean += a;
            mean /= static_cast<double>(accs.size());
            poly << (first ? "" : " ") << num(px(sparsity)) << "," << num(py(mean));
            dots << "<circle cx=\"" << num(px(sparsity)) << "\" cy=\"" << num(py(mean))
                 << "\" r=\"3\" fill=\"" << color << "\"/>\n";
            counts << (first ? "" : ",") << accs.size();
            first = false;
        }
        if (points.size() > 1) {
            os << "<polyline points=\"" << poly.str() << "\" fill=\"none\" stroke=\"" << color
               << "\" stroke-width=\"2\"/>\n";
        }
        os << dots.str();
        const int ly = kTop + 16 + idx * 18;
        os << "<line x1=\"" << kLeft + plot_w - 150 << "\" y1=\"" << ly << "\" x2=\""
           << kLeft + plot_w - 126 << "\" y2=\"" << ly << "\" stroke=\"" << color
           << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << kLeft + plot_w - 120 << "\" y=\"" << ly + 4
           << "\" font-family=\"sans-serif\" font-size=\"12\">" << method << " (n=" << counts.str()
           << ")</text>\n";
        ++idx;
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace dsprune
