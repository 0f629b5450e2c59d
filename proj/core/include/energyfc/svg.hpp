#pragma once

#include <span>
#include <string>
#include <vector>

namespace energyfc::svg {

struct Range {
  double lo = 0.0;
  double hi = 1.0;
};

/// [min, max] of `values` widened by 5% of the span on each side.
/// A zero span is widened by 5% of the magnitude (or by 1 around zero).
Range padded_range(std::span<const double> values);

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct LineChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  /// When set, x values are indices into these labels and ticks are categorical.
  std::vector<std::string> x_categories;
};

/// Standalone SVG 1.1 document. Output depends only on the chart contents.
std::string render(const LineChart& chart);

}  // namespace energyfc::svg
