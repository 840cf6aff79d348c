#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "dicl/geometry.hpp"
#include "dicl/tensor.hpp"

namespace dicl {

/// RoIAlign with one bilinear sample at each output cell's center.
/// `box` is in image pixel coordinates; `spatial_scale` maps it onto the
/// feature grid (1/16 for the stride-16 backbone). Sample coordinates use the
/// pixel-center convention (feature cell i covers [i, i+1), center i+0.5).
template <class S>
struct RoiCache {
    struct Tap {
        int col;  // feature column index (y*w + x)
        S weight;
    };
    // 4 taps per output cell, cell-major (i*pw + j).
    std::vector<std::array<Tap, 4>> taps;
    int feat_cols = 0;
};

template <class S>
Tensor3<S> roi_align(const Tensor3<S>& feats, const Box& box, double spatial_scale, int ph,
                     int pw, RoiCache<S>* cache = nullptr) {
    Tensor3<S> out(feats.c, ph, pw);
    if (cache) {
        cache->taps.assign(static_cast<size_t>(ph) * pw, {});
        cache->feat_cols = feats.h * feats.w;
    }
    const double x1 = box.x1 * spatial_scale, y1 = box.y1 * spatial_scale;
    const double bw = (box.x2 - box.x1) * spatial_scale, bh = (box.y2 - box.y1) * spatial_scale;
    for (int i = 0; i < ph; ++i) {
        const double sy = y1 + (i + 0.5) * bh / ph - 0.5;
        for (int j = 0; j < pw; ++j) {
            const double sx = x1 + (j + 0.5) * bw / pw - 0.5;
            const int x0 = static_cast<int>(std::floor(sx));
            const int y0 = static_cast<int>(std::floor(sy));
            const S fx = static_cast<S>(sx - x0), fy = static_cast<S>(sy - y0);
            const int x0c = std::clamp(x0, 0, feats.w - 1);
            const int x1c = std::clamp(x0 + 1, 0, feats.w - 1);
            const int y0c = std::clamp(y0, 0, feats.h - 1);
            const int y1c = std::clamp(y0 + 1, 0, feats.h - 1);
            const std::array<typename RoiCache<S>::Tap, 4> taps = {{
                {y0c * feats.w + x0c, (S(1) - fy) * (S(1) - fx)},
                {y0c * feats.w + x1c, (S(1) - fy) * fx},
                {y1c * feats.w + x0c, fy * (S(1) - fx)},
                {y1c * feats.w + x1c, fy * fx},
            }};
            auto cell = out.data.col(i * pw + j);
            cell.setZero();
            for (const auto& t : taps) cell += t.weight * feats.data.col(t.col);
            if (cache) cache->taps[static_cast<size_t>(i) * pw + j] = taps;
        }
    }
    return out;
}

/// Scatters cell gradients back through the cached bilinear taps.
template <class S>
void roi_align_backward(const Tensor3<S>& gout, const RoiCache<S>& cache, Tensor3<S>* gfeats) {
    for (size_t cell = 0; cell < cache.taps.size(); ++cell)
        for (const auto& t : cache.taps[cell])
            gfeats->data.col(t.col) += t.weight * gout.data.col(static_cast<int>(cell));
}

}  // namespace dicl
