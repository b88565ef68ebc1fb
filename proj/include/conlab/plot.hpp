#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace conlab {

struct PlotSeries {
  std::string name;
  std::vector<double> x, y;
};

struct PlotStyle {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool markers = true;
  bool lines = true;
  bool allow_empty = false;  // otherwise a plot without points is a usage error
};

/// Writes a standalone SVG line/scatter plot to `svg_path` and the plotted
/// values to the CSV sidecar (same path, .csv extension) with columns
/// series,x,y in full round-trip precision. Returns the sidecar path.
std::filesystem::path emit_plot(const std::vector<PlotSeries>& series, const PlotStyle& style,
                                const std::filesystem::path& svg_path);

/// Shortest decimal text that reads back to exactly v ("nan", "inf", "-inf" otherwise).
std::string format_double(double v);

}  // namespace conlab
