#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace selqa {

class PlotError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

struct Chart {
    std::string title;
    std::string x_label;
    std::string y_label;
    double x_min = 0.0, x_max = 1.0, y_min = 0.0, y_max = 1.0;
    bool diagonal = false;  // draw y = x
    std::vector<Series> series;
};

std::string render_svg(const Chart& chart);

// Renders an SVG next to every curve_*.csv, reliability_*.csv and fig5.csv in
// dir. Returns the files written; throws when none of those CSVs is present.
std::vector<std::filesystem::path> render_plots(const std::filesystem::path& dir);

}  // namespace selqa
