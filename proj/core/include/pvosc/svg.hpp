#pragma once

// Minimal SVG charts for study reports: line/scatter, polar compass and
// histogram. Output is deterministic text.

#include <filesystem>
#include <string>
#include <vector>

namespace pvosc::plot {

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

struct XYPlot {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<Series> series;
    bool lines = true;    // false: scatter
    bool markers = true;
};

struct PolarPoint {
    std::string label;
    double magnitude = 0.0;
    double angle = 0.0;  // rad
};

struct PolarSeries {
    std::string name;
    std::vector<PolarPoint> points;
};

/// Compass plot: one arrow per point, magnitudes scaled to the largest.
struct PolarPlot {
    std::string title;
    std::vector<PolarSeries> series;
};

struct HistogramPlot {
    std::string title;
    std::string x_label;
    double origin = 0.0;
    double width = 1.0;
    std::vector<int> counts;
};

std::string render(const XYPlot& p);
std::string render(const PolarPlot& p);
std::string render(const HistogramPlot& p);

void save_svg(const std::filesystem::path& path, const std::string& svg);

}  // namespace pvosc::plot
