#include "energyfc/svg.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "text_format.hpp"

namespace energyfc::svg {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 400.0;
constexpr double kLeft = 80.0;
constexpr double kRight = 150.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 60.0;

constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string num(double v) { return detail::format_fixed(v, 2); }

std::string escape(const std::string& s) {
  std::string out;
  for (const char ch : s) {
    switch (ch) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += ch;
    }
  }
  return out;
}

std::string tick_label(double v) {
  const double a = std::abs(v);
  if (a != 0.0 && (a >= 1e5 || a < 1e-2)) {
    std::ostringstream os;
    os.precision(2);
    os << std::scientific << v;
    return os.str();
  }
  return detail::format_fixed(v, a >= 100.0 ? 0 : 2);
}

}  // namespace

Range padded_range(std::span<const double> values) {
  if (values.empty()) return {};
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  double lo = *lo_it;
  double hi = *hi_it;
  const double span = hi - lo;
  if (span > 0.0) return {lo - 0.05 * span, hi + 0.05 * span};
  const double pad = lo != 0.0 ? 0.05 * std::abs(lo) : 1.0;
  return {lo - pad, hi + pad};
}

std::string render(const LineChart& chart) {
  std::vector<double> xs, ys;
  for (const auto& s : chart.series) {
    xs.insert(xs.end(), s.x.begin(), s.x.end());
    ys.insert(ys.end(), s.y.begin(), s.y.end());
  }
  Range xr = padded_range(xs);
  if (!chart.x_categories.empty()) {
    xr = {-0.5, static_cast<double>(chart.x_categories.size()) - 0.5};
  }
  const Range yr = padded_range(ys);

  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  const auto px = [&](double x) { return kLeft + (x - xr.lo) / (xr.hi - xr.lo) * plot_w; };
  const auto py = [&](double y) { return kTop + (yr.hi - y) / (yr.hi - yr.lo) * plot_h; };

  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << num(kWidth)
      << "\" height=\"" << num(kHeight) << "\" viewBox=\"0 0 " << num(kWidth) << " "
      << num(kHeight) << "\">\n"
      << "<rect x=\"0\" y=\"0\" width=\"" << num(kWidth) << "\" height=\"" << num(kHeight)
      << "\" fill=\"white\"/>\n"
      << "<text x=\"" << num(kWidth / 2) << "\" y=\"24\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" font-size=\"16\">" << escape(chart.title) << "</text>\n"
      << "<rect x=\"" << num(kLeft) << "\" y=\"" << num(kTop) << "\" width=\"" << num(plot_w)
      << "\" height=\"" << num(plot_h) << "\" fill=\"none\" stroke=\"black\"/>\n";

  // Axis ticks.
  constexpr int kYTicks = 5;
  for (int k = 0; k <= kYTicks; ++k) {
    const double v = yr.lo + (yr.hi - yr.lo) * k / kYTicks;
    out << "<line x1=\"" << num(kLeft - 4) << "\" y1=\"" << num(py(v)) << "\" x2=\""
        << num(kLeft) << "\" y2=\"" << num(py(v)) << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << num(kLeft - 6) << "\" y=\"" << num(py(v) + 4)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">"
        << escape(tick_label(v)) << "</text>\n";
  }
  if (!chart.x_categories.empty()) {
    for (std::size_t k = 0; k < chart.x_categories.size(); ++k) {
      const double x = px(static_cast<double>(k));
      out << "<text x=\"" << num(x) << "\" y=\"" << num(kTop + plot_h + 16)
          << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">"
          << escape(chart.x_categories[k]) << "</text>\n";
    }
  } else {
    constexpr int kXTicks = 5;
    for (int k = 0; k <= kXTicks; ++k) {
      const double v = xr.lo + (xr.hi - xr.lo) * k / kXTicks;
      out << "<text x=\"" << num(px(v)) << "\" y=\"" << num(kTop + plot_h + 16)
          << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">"
          << escape(tick_label(v)) << "</text>\n";
    }
  }
  out << "<text x=\"" << num(kLeft + plot_w / 2) << "\" y=\"" << num(kHeight - 16)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
      << escape(chart.x_label) << "</text>\n"
      << "<text x=\"18\" y=\"" << num(kTop + plot_h / 2)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
      << "transform=\"rotate(-90 18 " << num(kTop + plot_h / 2) << ")\">"
      << escape(chart.y_label) << "</text>\n";

  for (std::size_t s = 0; s < chart.series.size(); ++s) {
    const auto& series = chart.series[s];
    const char* color = kPalette[s % std::size(kPalette)];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    const std::size_t n = std::min(series.x.size(), series.y.size());
    for (std::size_t k = 0; k < n; ++k) {
      if (k > 0) out << ' ';
      out << num(px(series.x[k])) << ',' << num(py(series.y[k]));
    }
    out << "\"/>\n";
    if (n <= 32) {
      for (std::size_t k = 0; k < n; ++k) {
        out << "<circle cx=\"" << num(px(series.x[k])) << "\" cy=\"" << num(py(series.y[k]))
            << "\" r=\"3\" fill=\"" << color << "\"/>\n";
      }
    }
    const double ly = kTop + 14.0 + 18.0 * static_cast<double>(s);
    out << "<line x1=\"" << num(kWidth - kRight + 12) << "\" y1=\"" << num(ly) << "\" x2=\""
        << num(kWidth - kRight + 32) << "\" y2=\"" << num(ly) << "\" stroke=\"" << color
        << "\" stroke-width=\"2\"/>\n"
        << "<text x=\"" << num(kWidth - kRight + 38) << "\" y=\"" << num(ly + 4)
        << "\" font-family=\"sans-serif\" font-size=\"11\">" << escape(series.name)
        << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace energyfc::svg
