#pragma once

#include <string>
#include <vector>

namespace dfpt::svg {

// One polyline on a chart. NaN entries in y break the line into segments.
struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

// Renders a static line chart (axes, ticks, legend) as a standalone SVG
// document. Throws Error when no series carries a finite point or when a
// series has mismatched x/y lengths.
std::string line_chart(const std::vector<Series>& series, const std::string& title,
                       const std::string& x_label, const std::string& y_label,
                       int width = 640, int height = 400);

}  // namespace dfpt::svg
