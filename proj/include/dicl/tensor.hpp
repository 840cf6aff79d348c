#pragma once

#include <Eigen/Dense>
#include <cassert>

namespace dicl {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

/// C x H x W tensor stored as a (C, H*W) column-major Eigen matrix.
/// Column index is y*w + x, so one spatial site's channel fiber is contiguous.
template <class S>
struct Tensor3 {
    int c = 0, h = 0, w = 0;
    Mat<S> data;  // c rows, h*w cols

    Tensor3() = default;
    Tensor3(int c_, int h_, int w_) : c(c_), h(h_), w(w_), data(Mat<S>::Zero(c_, h_ * w_)) {}

    S& at(int ch, int y, int x) { return data(ch, y * w + x); }
    S at(int ch, int y, int x) const { return data(ch, y * w + x); }

    auto site(int y, int x) { return data.col(y * w + x); }
    auto site(int y, int x) const { return data.col(y * w + x); }

    void set_zero() { data.setZero(); }
    bool same_shape(const Tensor3& o) const { return c == o.c && h == o.h && w == o.w; }

    /// Flattened view (length c*h*w), col-major: index = (y*w+x)*c + ch.
    Eigen::Map<Vec<S>> flat() { return Eigen::Map<Vec<S>>(data.data(), data.size()); }
    Eigen::Map<const Vec<S>> flat() const {
        return Eigen::Map<const Vec<S>>(data.data(), data.size());
    }
};

}  // namespace dicl
