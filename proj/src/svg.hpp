#pragma once

#include <string>
#include <vector>

namespace mbsma {

struct ChartSeries {
    std::string name;
    std::vector<double> xs;
    std::vector<double> ys;  // NaN entries are skipped
};

// Small self-contained SVG line chart (metric vs. landmark time).
std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<ChartSeries>& series);

}  // namespace mbsma
