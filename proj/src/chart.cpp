#include "dicl/chart.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "dicl/synth.hpp"

namespace dicl {

namespace {

// 3x5 glyphs for "0123456789.-e", one bit per pixel, row-major top to bottom.
const std::uint16_t kGlyphs[13] = {
    0b111101101101111,  // 0
    0b010110010010111,  // 1
    0b111001111100111,  // 2
    0b111001111001111,  // 3
    0b101101111001001,  // 4
    0b111100111001111,  // 5
    0b111100111101111,  // 6
    0b111001001001001,  // 7
    0b111101111101111,  // 8
    0b111101111001111,  // 9
    0b000000000000010,  // .
    0b000000111000000,  // -
    0b111101110100111,  // e
};

int glyph_index(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c == '.') return 10;
    if (c == '-') return 11;
    if (c == 'e') return 12;
    return -1;
}

void put_pixel(ImageU8& img, int y, int x, const std::array<std::uint8_t, 3>& color) {
    if (y < 0 || y >= img.h || x < 0 || x >= img.w) return;
    for (int c = 0; c < 3; ++c) img.at(y, x, c) = color[c];
}

void draw_text(ImageU8& img, int y, int x, const std::string& s,
               const std::array<std::uint8_t, 3>& color) {
    for (char ch : s) {
        const int g = glyph_index(ch);
        if (g >= 0) {
            for (int r = 0; r < 5; ++r)
                for (int cidx = 0; cidx < 3; ++cidx)
                    if (kGlyphs[g] >> ((4 - r) * 3 + (2 - cidx)) & 1)
                        put_pixel(img, y + r, x + cidx, color);
        }
        x += 4;
    }
}

void draw_line(ImageU8& img, double y0, double x0, double y1, double x1,
               const std::array<std::uint8_t, 3>& color) {
    const int steps = std::max(2, static_cast<int>(std::hypot(y1 - y0, x1 - x0)) * 2);
    for (int i = 0; i <= steps; ++i) {
        const double t = static_cast<double>(i) / steps;
        put_pixel(img, static_cast<int>(std::lround(y0 + t * (y1 - y0))),
                  static_cast<int>(std::lround(x0 + t * (x1 - x0))), color);
    }
}

std::string format_tick(double v) {
    char buf[32];
    if (v != 0 && (std::fabs(v) >= 1e4 || std::fabs(v) < 1e-3))
        std::snprintf(buf, sizeof(buf), "%.1e", v);
    else
        std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

const std::array<std::uint8_t, 3> kPalette[6] = {
    {31, 119, 180}, {214, 39, 40}, {44, 160, 44}, {255, 127, 14}, {148, 103, 189}, {23, 190, 207},
};

}  // namespace

ImageU8 render_line_chart(const std::vector<Series>& series, int width, int height) {
    ImageU8 img(height, width);
    std::fill(img.px.begin(), img.px.end(), std::uint8_t(255));

    const int ml = 52, mr = 12, mt = 12, mb = 28;
    const int px0 = ml, px1 = width - mr, py0 = mt, py1 = height - mb;

    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
    double ymin = xmin, ymax = -xmin;
    for (const auto& s : series)
        for (size_t i = 0; i < s.x.size(); ++i) {
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    if (!(xmin < xmax)) {
        xmin -= 0.5;
        xmax += 0.5;
    }
    if (!(ymin < ymax)) {
        ymin -= 0.5;
        ymax += 0.5;
    }
    if (!std::isfinite(xmin)) {
        xmin = 0;
        xmax = 1;
        ymin = 0;
        ymax = 1;
    }

    auto to_px = [&](double x) { return px0 + (x - xmin) / (xmax - xmin) * (px1 - px0); };
    auto to_py = [&](double y) { return py1 - (y - ymin) / (ymax - ymin) * (py1 - py0); };

    const std::array<std::uint8_t, 3> axis = {60, 60, 60};
    const std::array<std::uint8_t, 3> grid = {225, 225, 225};
    const int ticks = 5;
    for (int t = 0; t <= ticks; ++t) {
        const double fy = ymin + (ymax - ymin) * t / ticks;
        const int y = static_cast<int>(std::lround(to_py(fy)));
        draw_line(img, y, px0, y, px1, grid);
        draw_text(img, y - 2, 4, format_tick(fy), axis);
        const double fx = xmin + (xmax - xmin) * t / ticks;
        const int x = static_cast<int>(std::lround(to_px(fx)));
        draw_line(img, py0, x, py1, x, grid);
        draw_text(img, py1 + 6, x - 6, format_tick(fx), axis);
    }
    draw_line(img, py0, px0, py1, px0, axis);
    draw_line(img, py1, px0, py1, px1, axis);

    for (size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const auto color = s.color == std::array<std::uint8_t, 3>{0, 0, 0}
                               ? kPalette[si % 6]
                               : s.color;
        for (size_t i = 0; i + 1 < s.x.size(); ++i)
            draw_line(img, to_py(s.y[i]), to_px(s.x[i]), to_py(s.y[i + 1]), to_px(s.x[i + 1]),
                      color);
        // Legend: a color swatch per series; labels live in the CSV since the
        // glyph set has digits only.
        const int ly = py0 + 4 + static_cast<int>(si) * 8;
        draw_line(img, ly, px1 - 30, ly, px1 - 6, color);
        draw_text(img, ly - 2, px1 - 42, std::to_string(si), axis);
    }
    return img;
}

void write_series_csv(const std::vector<Series>& series, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UsageError("cannot open for writing: " + path);
    out << "series,label,x,y\n";
    for (size_t si = 0; si < series.size(); ++si)
        for (size_t i = 0; i < series[si].x.size(); ++i)
            out << si << "," << series[si].label << "," << series[si].x[i] << ","
                << series[si].y[i] << "\n";
}

std::vector<Series> series_from_metrics(const std::string& metrics_path,
                                        const std::vector<std::string>& fields) {
    std::ifstream in(metrics_path);
    if (!in) throw UsageError("cannot open metrics log: " + metrics_path);
    std::vector<Series> out(fields.size());
    for (size_t i = 0; i < fields.size(); ++i) out[i].label = fields[i];
    std::string line;
    double step = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        const double x = j.contains("step") ? j["step"].get<double>() : step;
        for (size_t i = 0; i < fields.size(); ++i) {
            if (!j.contains(fields[i])) continue;
            out[i].x.push_back(x);
            out[i].y.push_back(j[fields[i]].get<double>());
        }
        step += 1;
    }
    return out;
}

}  // namespace dicl
