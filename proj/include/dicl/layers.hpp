#pragma once

#include <cmath>

#include "dicl/rng.hpp"
#include "dicl/tensor.hpp"

namespace dicl {

/// 3x3 convolution, pad 1, configurable stride, via im2col + GEMM.
/// Parameter gradients accumulate into the layer (single-writer training).
template <class S>
struct ConvCache {
    Mat<S> cols;  // (in_ch*9) x (out_h*out_w)
    int in_h = 0, in_w = 0, out_h = 0, out_w = 0;
};

template <class S>
struct Conv2d {
    int in_ch = 0, out_ch = 0, stride = 1;
    Mat<S> weight;  // out_ch x in_ch*9
    Vec<S> bias;
    Mat<S> gweight;
    Vec<S> gbias;

    void init(int in_c, int out_c, int stride_, Rng& rng) {
        in_ch = in_c;
        out_ch = out_c;
        stride = stride_;
        weight.resize(out_ch, in_ch * 9);
        const double std = std::sqrt(2.0 / (in_ch * 9));
        for (int r = 0; r < weight.rows(); ++r)
            for (int c = 0; c < weight.cols(); ++c)
                weight(r, c) = static_cast<S>(rng.normal(0.0, std));
        bias = Vec<S>::Zero(out_ch);
        zero_grad();
    }

    void zero_grad() {
        gweight = Mat<S>::Zero(out_ch, in_ch * 9);
        gbias = Vec<S>::Zero(out_ch);
    }

    Tensor3<S> forward(const Tensor3<S>& x, ConvCache<S>* cache) const {
        const int oh = (x.h + 2 - 3) / stride + 1;
        const int ow = (x.w + 2 - 3) / stride + 1;
        Mat<S> cols = Mat<S>::Zero(in_ch * 9, oh * ow);
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                const int col = oy * ow + ox;
                for (int k = 0; k < 9; ++k) {
                    const int iy = oy * stride - 1 + k / 3;
                    const int ix = ox * stride - 1 + k % 3;
                    if (iy >= 0 && iy < x.h && ix >= 0 && ix < x.w)
                        cols.block(k * in_ch, col, in_ch, 1) = x.site(iy, ix);
                }
            }
        Tensor3<S> out(out_ch, oh, ow);
        out.data.noalias() = weight * cols;
        out.data.colwise() += bias;
        if (cache) {
            cache->cols = std::move(cols);
            cache->in_h = x.h;
            cache->in_w = x.w;
            cache->out_h = oh;
            cache->out_w = ow;
        }
        return out;
    }

    void backward(const Tensor3<S>& gout, const ConvCache<S>& cache, Tensor3<S>* gin) {
        gweight.noalias() += gout.data * cache.cols.transpose();
        gbias.noalias() += gout.data.rowwise().sum();
        if (!gin) return;
        Mat<S> gcols(in_ch * 9, cache.out_h * cache.out_w);
        gcols.noalias() = weight.transpose() * gout.data;
        *gin = Tensor3<S>(in_ch, cache.in_h, cache.in_w);
        for (int oy = 0; oy < cache.out_h; ++oy)
            for (int ox = 0; ox < cache.out_w; ++ox) {
                const int col = oy * cache.out_w + ox;
                for (int k = 0; k < 9; ++k) {
                    const int iy = oy * stride - 1 + k / 3;
                    const int ix = ox * stride - 1 + k % 3;
                    if (iy >= 0 && iy < cache.in_h && ix >= 0 && ix < cache.in_w)
                        gin->site(iy, ix) += gcols.block(k * in_ch, col, in_ch, 1);
                }
            }
    }
};

template <class S>
struct ReluCache {
    Mat<S> out;  // sign mask source
};

template <class S>
inline Tensor3<S> relu(const Tensor3<S>& x, ReluCache<S>* cache) {
    Tensor3<S> out = x;
    out.data = out.data.cwiseMax(S(0));
    if (cache) cache->out = out.data;
    return out;
}

template <class S>
inline void relu_backward(const Tensor3<S>& gout, const ReluCache<S>& cache, Tensor3<S>* gin) {
    gin->data = gout.data.cwiseProduct((cache.out.array() > S(0)).template cast<S>().matrix());
}

template <class S>
struct LinearCache {
    Vec<S> input;
};

template <class S>
struct Linear {
    Mat<S> weight;  // out x in
    Vec<S> bias;
    Mat<S> gweight;
    Vec<S> gbias;

    void init(int in, int out, Rng& rng) {
        weight.resize(out, in);
        const double std = std::sqrt(2.0 / in);
        for (int r = 0; r < out; ++r)
            for (int c = 0; c < in; ++c) weight(r, c) = static_cast<S>(rng.normal(0.0, std));
        bias = Vec<S>::Zero(out);
        zero_grad();
    }

    void zero_grad() {
        gweight = Mat<S>::Zero(weight.rows(), weight.cols());
        gbias = Vec<S>::Zero(bias.size());
    }

    Vec<S> forward(const Vec<S>& x, LinearCache<S>* cache) const {
        if (cache) cache->input = x;
        return weight * x + bias;
    }

    void backward(const Vec<S>& gout, const LinearCache<S>& cache, Vec<S>* gin) {
        gweight.noalias() += gout * cache.input.transpose();
        gbias += gout;
        if (gin) *gin = weight.transpose() * gout;
    }
};

template <class S>
struct L2NormCache {
    Vec<S> y;
    S norm = S(0);
};

template <class S>
inline Vec<S> l2_normalize(const Vec<S>& x, L2NormCache<S>* cache) {
    const S n = x.norm();
    Vec<S> y = x / n;
    if (cache) {
        cache->y = y;
        cache->norm = n;
    }
    return y;
}

template <class S>
inline Vec<S> l2_normalize_backward(const Vec<S>& gout, const L2NormCache<S>& cache) {
    return (gout - cache.y * cache.y.dot(gout)) / cache.norm;
}

}  // namespace dicl
