#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mdcpc/sweep.hpp"
#include "mdcpc/training.hpp"

namespace mdcpc {

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;  // (x, y)
  std::vector<double> errors;                     // optional +-y bars, one per point
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  std::vector<Series> series;
};

// Static SVG line chart with a legend, one polyline per series.
std::string render_svg(const PlotSpec& spec);

// Validation loss per epoch, one curve per labelled metrics file.
PlotSpec loss_curve_plot(const std::vector<std::pair<std::string, std::vector<MetricRow>>>& runs,
                         const std::string& split = "valid", const std::string& metric = "info_nce");
// Mean test accuracy against subset size on a log axis, one curve per variant.
PlotSpec accuracy_plot(const std::vector<SweepSummaryRow>& summary);

// Throws InvalidArgument (and writes nothing) when no series has points.
void write_svg(const std::filesystem::path& path, const PlotSpec& spec);

}  // namespace mdcpc
