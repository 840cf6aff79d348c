#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "dicl/geometry.hpp"
#include "dicl/tensor.hpp"

namespace dicl {

/// 8-bit interleaved RGB image. All dataset images are stored in this form so
/// that PNG round-trips are exact.
struct ImageU8 {
    int h = 0, w = 0;
    std::vector<std::uint8_t> px;  // h*w*3, row-major, RGB

    ImageU8() = default;
    ImageU8(int h_, int w_) : h(h_), w(w_), px(static_cast<size_t>(h_) * w_ * 3, 0) {}

    std::uint8_t& at(int y, int x, int ch) { return px[(static_cast<size_t>(y) * w + x) * 3 + ch]; }
    std::uint8_t at(int y, int x, int ch) const {
        return px[(static_cast<size_t>(y) * w + x) * 3 + ch];
    }

    bool operator==(const ImageU8& o) const { return h == o.h && w == o.w && px == o.px; }
};

inline std::array<double, 3> channel_mean(const ImageU8& img) {
    std::array<double, 3> sum = {0, 0, 0};
    const size_t n = static_cast<size_t>(img.h) * img.w;
    for (size_t i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c) sum[c] += img.px[i * 3 + c];
    for (int c = 0; c < 3; ++c) sum[c] /= static_cast<double>(n) * 255.0;
    return sum;  // in [0,1]
}

/// Convert to a 3 x H x W tensor with values k/255.
template <class S>
Tensor3<S> to_tensor(const ImageU8& img) {
    Tensor3<S> t(3, img.h, img.w);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c)
                t.at(c, y, x) = static_cast<S>(img.at(y, x, c)) / S(255);
    return t;
}

/// Crop `box` from `img` and resize to (out_h, out_w) with bilinear sampling.
/// Pixel centers are at integer+0.5; samples are clamped to the image.
template <class S>
Tensor3<S> crop_resize(const ImageU8& img, const Box& box, int out_h, int out_w) {
    Tensor3<S> out(3, out_h, out_w);
    const double bw = box.width(), bh = box.height();
    for (int oy = 0; oy < out_h; ++oy) {
        const double sy = box.y1 + (oy + 0.5) * bh / out_h - 0.5;
        for (int ox = 0; ox < out_w; ++ox) {
            const double sx = box.x1 + (ox + 0.5) * bw / out_w - 0.5;
            const int x0 = static_cast<int>(std::floor(sx));
            const int y0 = static_cast<int>(std::floor(sy));
            const double fx = sx - x0, fy = sy - y0;
            const int x0c = std::clamp(x0, 0, img.w - 1), x1c = std::clamp(x0 + 1, 0, img.w - 1);
            const int y0c = std::clamp(y0, 0, img.h - 1), y1c = std::clamp(y0 + 1, 0, img.h - 1);
            for (int c = 0; c < 3; ++c) {
                const double v00 = img.at(y0c, x0c, c), v01 = img.at(y0c, x1c, c);
                const double v10 = img.at(y1c, x0c, c), v11 = img.at(y1c, x1c, c);
                const double v = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                                 fy * ((1 - fx) * v10 + fx * v11);
                out.at(c, oy, ox) = static_cast<S>(v / 255.0);
            }
        }
    }
    return out;
}

/// Bilinear resize with 8-bit requantization.
inline ImageU8 resize_image(const ImageU8& img, int out_h, int out_w) {
    if (out_h == img.h && out_w == img.w) return img;
    const Box full{0, 0, static_cast<double>(img.w), static_cast<double>(img.h)};
    const Tensor3<double> t = crop_resize<double>(img, full, out_h, out_w);
    ImageU8 out(out_h, out_w);
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x)
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) =
                    static_cast<std::uint8_t>(std::lround(std::clamp(t.at(c, y, x), 0.0, 1.0) *
                                                          255.0));
    return out;
}

}  // namespace dicl
