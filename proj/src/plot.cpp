#include "mdcpc/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "mdcpc/error.hpp"

namespace mdcpc {
namespace {

constexpr double kWidth = 720, kHeight = 460;
constexpr double kLeft = 70, kRight = 190, kTop = 40, kBottom = 60;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                               "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string escape(const std::string& s) {
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

std::string num(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

// Round-number tick positions covering [lo, hi].
std::vector<double> nice_ticks(double lo, double hi, int target = 6) {
  const double span = hi - lo;
  const double raw = span / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    step = m * mag;
    if (span / step <= target) break;
  }
  std::vector<double> ticks;
  for (double t = std::ceil(lo / step) * step; t <= hi + step * 1e-9; t += step) ticks.push_back(t);
  return ticks;
}

}  // namespace

std::string render_svg(const PlotSpec& spec) {
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& s : spec.series) {
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      if (spec.log_x && !(s.points[i].first > 0)) throw InvalidArgument("log-scaled x values must be positive");
      const double x = spec.log_x ? std::log10(s.points[i].first) : s.points[i].first;
      const double e = i < s.errors.size() ? s.errors[i] : 0.0;
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, s.points[i].second - e);
      ymax = std::max(ymax, s.points[i].second + e);
    }
  }
  if (!std::isfinite(xmin)) throw InvalidArgument("nothing to plot");
  if (xmax == xmin) xmax = xmin + 1, xmin -= 1;
  if (ymax == ymin) ymax = ymin + 0.5, ymin -= 0.5;
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto sx = [&](double x) { return kLeft + (x - xmin) / (xmax - xmin) * pw; };
  auto sy = [&](double y) { return kTop + (ymax - y) / (ymax - ymin) * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << kLeft + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(spec.title)
      << "</text>\n";
  svg << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";

  std::vector<double> xticks;
  if (spec.log_x) {
    for (double d = std::floor(xmin); d <= std::ceil(xmax); d += 1.0) {
      if (d >= xmin - 1e-9 && d <= xmax + 1e-9) xticks.push_back(d);
    }
    if (xticks.size() < 2) xticks = nice_ticks(xmin, xmax);
  } else {
    xticks = nice_ticks(xmin, xmax);
  }
  for (double t : xticks) {
    const std::string label = spec.log_x ? num(std::pow(10.0, t)) : num(t);
    svg << "<line x1=\"" << sx(t) << "\" y1=\"" << kTop + ph << "\" x2=\"" << sx(t) << "\" y2=\"" << kTop + ph + 5
        << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << sx(t) << "\" y=\"" << kTop + ph + 18 << "\" text-anchor=\"middle\">" << label << "</text>\n";
  }
  for (double t : nice_ticks(ymin, ymax)) {
    svg << "<line x1=\"" << kLeft - 5 << "\" y1=\"" << sy(t) << "\" x2=\"" << kLeft + pw << "\" y2=\"" << sy(t)
        << "\" stroke=\"#dddddd\"/>\n";
    svg << "<text x=\"" << kLeft - 8 << "\" y=\"" << sy(t) + 4 << "\" text-anchor=\"end\">" << num(t) << "</text>\n";
  }
  svg << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 15 << "\" text-anchor=\"middle\">"
      << escape(spec.x_label) << "</text>\n";
  svg << "<text transform=\"translate(18," << kTop + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape(spec.y_label) << "</text>\n";

  int drawn = 0;
  for (std::size_t k = 0; k < spec.series.size(); ++k) {
    const auto& s = spec.series[k];
    if (s.points.empty()) continue;
    const char* color = kColors[k % std::size(kColors)];
    svg << "<g class=\"series\" data-label=\"" << escape(s.label) << "\">\n";
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& [x, y] : s.points) svg << sx(spec.log_x ? std::log10(x) : x) << ',' << sy(y) << ' ';
    svg << "\"/>\n";
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      const double x = sx(spec.log_x ? std::log10(s.points[i].first) : s.points[i].first);
      const double y = s.points[i].second;
      if (i < s.errors.size() && s.errors[i] > 0) {
        svg << "<line x1=\"" << x << "\" y1=\"" << sy(y - s.errors[i]) << "\" x2=\"" << x << "\" y2=\""
            << sy(y + s.errors[i]) << "\" stroke=\"" << color << "\"/>\n";
      }
      svg << "<circle cx=\"" << x << "\" cy=\"" << sy(y) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    svg << "</g>\n";
    const double ly = kTop + 10 + 20 * drawn;
    svg << "<line x1=\"" << kLeft + pw + 15 << "\" y1=\"" << ly << "\" x2=\"" << kLeft + pw + 40 << "\" y2=\"" << ly
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    svg << "<text class=\"legend\" x=\"" << kLeft + pw + 45 << "\" y=\"" << ly + 4 << "\">" << escape(s.label)
        << "</text>\n";
    ++drawn;
  }
  svg << "</svg>\n";
  return svg.str();
}

PlotSpec loss_curve_plot(const std::vector<std::pair<std::string, std::vector<MetricRow>>>& runs,
                         const std::string& split, const std::string& metric) {
  PlotSpec spec;
  spec.title = "Validation loss during CPC training";
  spec.x_label = "epoch";
  spec.y_label = split + " " + metric;
  for (const auto& [label, rows] : runs) {
    Series s;
    s.label = label;
    for (const auto& r : rows) {
      if (r.split == split && r.metric == metric) s.points.emplace_back(r.epoch, r.value);
    }
    std::sort(s.points.begin(), s.points.end());
    if (!s.points.empty()) spec.series.push_back(std::move(s));
  }
  return spec;
}

PlotSpec accuracy_plot(const std::vector<SweepSummaryRow>& summary) {
  PlotSpec spec;
  spec.title = "Mean test accuracy by number of labelled examples";
  spec.x_label = "labelled training examples (log scale)";
  spec.y_label = "test accuracy";
  spec.log_x = true;
  for (const auto& r : summary) {
    auto it = std::find_if(spec.series.begin(), spec.series.end(), [&](const Series& s) { return s.label == r.variant; });
    if (it == spec.series.end()) {
      spec.series.push_back(Series{r.variant, {}, {}});
      it = spec.series.end() - 1;
    }
    it->points.emplace_back(r.subset_size, r.mean);
    it->errors.push_back(r.stddev);
  }
  for (auto& s : spec.series) {
    std::vector<std::size_t> idx(s.points.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return s.points[a].first < s.points[b].first; });
    Series sorted{s.label, {}, {}};
    for (auto i : idx) {
      sorted.points.push_back(s.points[i]);
      sorted.errors.push_back(s.errors[i]);
    }
    s = std::move(sorted);
  }
  return spec;
}

void write_svg(const std::filesystem::path& path, const PlotSpec& spec) {
  const std::string text = render_svg(spec);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IngestionError("cannot write " + path.string());
  out << text;
}

}  // namespace mdcpc
