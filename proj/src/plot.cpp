#include "conlab/plot.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "conlab/common.hpp"

namespace conlab {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

namespace {

constexpr double kWidth = 640, kHeight = 420;
constexpr double kLeft = 78, kRight = 170, kTop = 44, kBottom = 58;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::string xml_escape(const std::string& s) {
  std::string out;
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

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

struct Axis {
  double lo, hi, step;
};

Axis nice_axis(double lo, double hi) {
  if (!(hi > lo)) {
    const double pad = lo == 0 ? 1.0 : 0.1 * std::abs(lo);
    lo -= pad;
    hi += pad;
  }
  const double raw = (hi - lo) / 5;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0})
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  return {std::floor(lo / step) * step, std::ceil(hi / step) * step, step};
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v, double step) {
  if (std::abs(v) < 1e-12 * step) v = 0;
  char buf[32];
  const double a = std::abs(step);
  if (a >= 1e-3 && a < 1e5)
    std::snprintf(buf, sizeof buf, "%.*f", a >= 1 ? 0 : static_cast<int>(std::ceil(-std::log10(a) - 1e-9)), v);
  else
    std::snprintf(buf, sizeof buf, "%.1e", v);
  return buf;
}

}  // namespace

std::filesystem::path emit_plot(const std::vector<PlotSeries>& series, const PlotStyle& style,
                                const std::filesystem::path& svg_path) {
  double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo, ylo = xlo, yhi = -xlo;
  std::size_t points = 0;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw ShapeError("plot series '" + s.name + "' has unequal x and y lengths");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xlo = std::min(xlo, s.x[i]);
      xhi = std::max(xhi, s.x[i]);
      ylo = std::min(ylo, s.y[i]);
      yhi = std::max(yhi, s.y[i]);
      ++points;
    }
  }
  if (points == 0 && !style.allow_empty) throw UsageError("emit_plot: no data points (set allow_empty for an empty plot)");
  if (points == 0) xlo = ylo = 0, xhi = yhi = 1;

  const Axis ax = nice_axis(xlo, xhi), ay = nice_axis(ylo, yhi);
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - ax.lo) / (ax.hi - ax.lo) * pw; };
  auto py = [&](double y) { return kTop + ph - (y - ay.lo) / (ay.hi - ay.lo) * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!style.title.empty())
    svg << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
        << xml_escape(style.title) << "</text>\n";

  // grid and ticks
  svg << "<g stroke=\"#dddddd\" stroke-width=\"1\">\n";
  for (double v = ax.lo; v <= ax.hi + 1e-9 * ax.step; v += ax.step)
    svg << "<line x1=\"" << num(px(v)) << "\" y1=\"" << num(kTop) << "\" x2=\"" << num(px(v)) << "\" y2=\""
        << num(kTop + ph) << "\"/>\n";
  for (double v = ay.lo; v <= ay.hi + 1e-9 * ay.step; v += ay.step)
    svg << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(py(v)) << "\" x2=\"" << num(kLeft + pw) << "\" y2=\""
        << num(py(v)) << "\"/>\n";
  svg << "</g>\n";
  svg << "<rect x=\"" << num(kLeft) << "\" y=\"" << num(kTop) << "\" width=\"" << num(pw) << "\" height=\""
      << num(ph) << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (double v = ax.lo; v <= ax.hi + 1e-9 * ax.step; v += ax.step)
    svg << "<text x=\"" << num(px(v)) << "\" y=\"" << num(kTop + ph + 16) << "\" text-anchor=\"middle\">"
        << tick_label(v, ax.step) << "</text>\n";
  for (double v = ay.lo; v <= ay.hi + 1e-9 * ay.step; v += ay.step)
    svg << "<text x=\"" << num(kLeft - 6) << "\" y=\"" << num(py(v) + 4) << "\" text-anchor=\"end\">"
        << tick_label(v, ay.step) << "</text>\n";
  if (!style.x_label.empty())
    svg << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"" << num(kHeight - 14) << "\" text-anchor=\"middle\">"
        << xml_escape(style.x_label) << "</text>\n";
  if (!style.y_label.empty())
    svg << "<text x=\"18\" y=\"" << num(kTop + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
        << num(kTop + ph / 2) << ")\">" << xml_escape(style.y_label) << "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kColors[k % std::size(kColors)];
    std::string pts;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      pts += num(px(s.x[i])) + "," + num(py(s.y[i])) + " ";
    }
    if (style.lines && !pts.empty())
      svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"" << pts << "\"/>\n";
    if (style.markers)
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
        svg << "<circle cx=\"" << num(px(s.x[i])) << "\" cy=\"" << num(py(s.y[i])) << "\" r=\"3.5\" fill=\""
            << color << "\"/>\n";
      }
    const double ly = kTop + 10 + 20 * static_cast<double>(k);
    svg << "<line x1=\"" << num(kLeft + pw + 14) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(kLeft + pw + 38)
        << "\" y2=\"" << num(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << num(kLeft + pw + 44) << "\" y=\"" << num(ly + 4) << "\">" << xml_escape(s.name)
        << "</text>\n";
  }
  svg << "</svg>\n";

  {
    std::ofstream f(svg_path, std::ios::binary);
    if (!f) throw UsageError("cannot write " + svg_path.string());
    f << svg.str();
  }
  auto csv_path = svg_path;
  csv_path.replace_extension(".csv");
  std::ofstream f(csv_path, std::ios::binary);
  if (!f) throw UsageError("cannot write " + csv_path.string());
  f << "series,x,y\n";
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i)
      f << csv_field(s.name) << ',' << format_double(s.x[i]) << ',' << format_double(s.y[i]) << '\n';
  return csv_path;
}

}  // namespace conlab
