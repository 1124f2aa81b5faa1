#include "dfpt/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "dfpt/tensor.hpp"

namespace dfpt::svg {
namespace {

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
constexpr int kPaletteSize = 8;

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

// Picks a round tick step (1/2/5 times a power of ten) covering the span.
double tick_step(double span, int target_ticks) {
    if (span <= 0.0) return 1.0;
    const double raw = span / target_ticks;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    for (double m : {1.0, 2.0, 5.0, 10.0}) {
        if (mag * m >= raw) return mag * m;
    }
    return mag * 10.0;
}

}  // namespace

std::string line_chart(const std::vector<Series>& series, const std::string& title,
                       const std::string& x_label, const std::string& y_label, int width,
                       int height) {
    if (width < 200 || height < 150) throw Error("svg: chart must be at least 200x150");

    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
    double ymin = xmin, ymax = -xmin;
    bool any = false;
    for (const Series& s : series) {
        if (s.x.size() != s.y.size())
            throw Error("svg: series '" + s.label + "' has mismatched x/y lengths");
        for (size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            any = true;
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    }
    if (!any) throw Error("svg: no finite data points to plot");
    if (xmax == xmin) {
        xmin -= 0.5;
        xmax += 0.5;
    }
    if (ymax == ymin) {
        ymin -= 0.5;
        ymax += 0.5;
    }

    const double ml = 64, mr = 16, mt = 36, mb = 48;  // margins
    const double pw = width - ml - mr;                // plot area
    const double ph = height - mt - mb;
    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
    auto py = [&](double y) { return mt + ph - (y - ymin) / (ymax - ymin) * ph; };

    std::string out;
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
           "\" height=\"" + std::to_string(height) + "\" viewBox=\"0 0 " +
           std::to_string(width) + " " + std::to_string(height) + "\">\n";
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out += "<text x=\"" + fmt(width / 2.0) +
           "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" +
           escape(title) + "</text>\n";

    // axes
    out += "<line x1=\"" + fmt(ml) + "\" y1=\"" + fmt(mt) + "\" x2=\"" + fmt(ml) + "\" y2=\"" +
           fmt(mt + ph) + "\" stroke=\"black\"/>\n";
    out += "<line x1=\"" + fmt(ml) + "\" y1=\"" + fmt(mt + ph) + "\" x2=\"" + fmt(ml + pw) +
           "\" y2=\"" + fmt(mt + ph) + "\" stroke=\"black\"/>\n";

    // ticks + grid
    const double xs = tick_step(xmax - xmin, 6);
    for (double t = std::ceil(xmin / xs) * xs; t <= xmax + 1e-9 * xs; t += xs) {
        const double gx = px(t);
        out += "<line x1=\"" + fmt(gx) + "\" y1=\"" + fmt(mt) + "\" x2=\"" + fmt(gx) +
               "\" y2=\"" + fmt(mt + ph) + "\" stroke=\"#dddddd\"/>\n";
        out += "<line x1=\"" + fmt(gx) + "\" y1=\"" + fmt(mt + ph) + "\" x2=\"" + fmt(gx) +
               "\" y2=\"" + fmt(mt + ph + 4) + "\" stroke=\"black\"/>\n";
        out += "<text x=\"" + fmt(gx) + "\" y=\"" + fmt(mt + ph + 16) +
               "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" + fmt(t) +
               "</text>\n";
    }
    const double ys = tick_step(ymax - ymin, 5);
    for (double t = std::ceil(ymin / ys) * ys; t <= ymax + 1e-9 * ys; t += ys) {
        const double gy = py(t);
        out += "<line x1=\"" + fmt(ml) + "\" y1=\"" + fmt(gy) + "\" x2=\"" + fmt(ml + pw) +
               "\" y2=\"" + fmt(gy) + "\" stroke=\"#dddddd\"/>\n";
        out += "<line x1=\"" + fmt(ml - 4) + "\" y1=\"" + fmt(gy) + "\" x2=\"" + fmt(ml) +
               "\" y2=\"" + fmt(gy) + "\" stroke=\"black\"/>\n";
        out += "<text x=\"" + fmt(ml - 6) + "\" y=\"" + fmt(gy + 3) +
               "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" + fmt(t) +
               "</text>\n";
    }

    // axis labels
    out += "<text x=\"" + fmt(ml + pw / 2) + "\" y=\"" + fmt(height - 10.0) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" +
           escape(x_label) + "</text>\n";
    out += "<text x=\"14\" y=\"" + fmt(mt + ph / 2) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 14 " +
           fmt(mt + ph / 2) + ")\">" + escape(y_label) + "</text>\n";

    // one polyline per series; NaN gaps split into multiple segments but the
    // series still counts as one <polyline> group for simple charts, so emit
    // each contiguous run as its own polyline only when a gap occurs.
    for (size_t si = 0; si < series.size(); ++si) {
        const Series& s = series[si];
        const char* color = kPalette[si % kPaletteSize];
        std::string pts;
        bool emitted = false;
        auto flush = [&]() {
            if (pts.empty()) return;
            out += "<polyline fill=\"none\" stroke=\"";
            out += color;
            out += "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
            pts.clear();
            emitted = true;
        };
        for (size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
                flush();
                continue;
            }
            if (!pts.empty()) pts += " ";
            pts += fmt(px(s.x[i])) + "," + fmt(py(s.y[i]));
        }
        flush();
        if (!emitted) continue;

        // legend entry
        const double ly = mt + 8 + 16.0 * static_cast<double>(si);
        out += "<line x1=\"" + fmt(ml + pw - 110) + "\" y1=\"" + fmt(ly) + "\" x2=\"" +
               fmt(ml + pw - 90) + "\" y2=\"" + fmt(ly) + "\" stroke=\"";
        out += color;
        out += "\" stroke-width=\"1.5\"/>\n";
        out += "<text x=\"" + fmt(ml + pw - 84) + "\" y=\"" + fmt(ly + 3) +
               "\" font-family=\"sans-serif\" font-size=\"10\">" + escape(s.label) + "</text>\n";
    }

    out += "</svg>\n";
    return out;
}

}  // namespace dfpt::svg
