#pragma once

#include <array>
#include <string>
#include <vector>

#include "dicl/image.hpp"

namespace dicl {

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
    std::array<std::uint8_t, 3> color = {0, 0, 0};
};

/// Minimal rasterized line chart: axes, tick labels (digits, '.', '-'), a
/// color-key legend in the top-right corner. Meant for metrics curves, not
/// publication figures.
ImageU8 render_line_chart(const std::vector<Series>& series, int width = 640, int height = 400);

void write_series_csv(const std::vector<Series>& series, const std::string& path);

/// Loads a JSON-lines metrics log and groups the named fields into series.
std::vector<Series> series_from_metrics(const std::string& metrics_path,
                                        const std::vector<std::string>& fields);

}  // namespace dicl
