#pragma once

#include <algorithm>
#include <cmath>

namespace dicl {

// Axis-aligned box in pixel coordinates, half-open: [x1,x2) x [y1,y2).
struct Box {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
    bool valid() const { return x2 > x1 && y2 > y1; }

    bool operator==(const Box& o) const {
        return x1 == o.x1 && y1 == o.y1 && x2 == o.x2 && y2 == o.y2;
    }
};

inline double intersection_area(const Box& a, const Box& b) {
    const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    return (w > 0 && h > 0) ? w * h : 0.0;
}

inline double iou(const Box& a, const Box& b) {
    const double inter = intersection_area(a, b);
    if (inter <= 0.0) return 0.0;
    return inter / (a.area() + b.area() - inter);
}

inline Box clip_box(const Box& b, double width, double height) {
    Box r;
    r.x1 = std::clamp(b.x1, 0.0, width);
    r.y1 = std::clamp(b.y1, 0.0, height);
    r.x2 = std::clamp(b.x2, 0.0, width);
    r.y2 = std::clamp(b.y2, 0.0, height);
    return r;
}

}  // namespace dicl
