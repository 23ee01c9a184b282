#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "ktan/geometry.hpp"
#include "ktan/tensor.hpp"

// Plain tensor-in/tensor-out compute kernels. The autodiff layer wraps these;
// inference-mode forward passes call them directly and record nothing.
namespace ktan::kernels {

template <typename T>
void validate_conv_operands(const Tensor<T>& in, const Tensor<T>& flt, const Tensor<T>& bias,
                            const ConvGeometry& g) {
    if (in.rank() != 4) throw ShapeError("conv2d: input must be [N,C,H,W], got " + shape_str(in.shape()));
    if (flt.rank() != 4) throw ShapeError("conv2d: filters must be [O,C,kh,kw], got " + shape_str(flt.shape()));
    if (bias.rank() != 1) throw ShapeError("conv2d: bias must be [O], got " + shape_str(bias.shape()));
    if (in.extent(1) != g.in_channels || flt.extent(1) != g.in_channels)
        throw ShapeError("conv2d: channel mismatch, input " + shape_str(in.shape()) + " filters " +
                         shape_str(flt.shape()) + " geometry C=" + std::to_string(g.in_channels));
    if (flt.extent(0) != g.out_channels || bias.extent(0) != g.out_channels)
        throw ShapeError("conv2d: output channel mismatch, filters " + shape_str(flt.shape()) + " bias " +
                         shape_str(bias.shape()) + " geometry O=" + std::to_string(g.out_channels));
    if (flt.extent(2) != g.kernel_h || flt.extent(3) != g.kernel_w)
        throw ShapeError("conv2d: kernel extent mismatch, filters " + shape_str(flt.shape()));
}

// Valid output range [lo, hi] such that o*stride + k - pad stays inside [0, in).
inline void conv_span(int64_t in, int64_t out, int64_t stride, int64_t pad, int64_t k, int64_t& lo, int64_t& hi) {
    lo = std::max<int64_t>(0, div_ceil(pad - k, stride));
    hi = std::min<int64_t>(out - 1, div_floor(in - 1 + pad - k, stride));
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& in, const Tensor<T>& flt, const Tensor<T>& bias,
                         const ConvGeometry& g) {
    validate_conv_operands(in, flt, bias, g);
    const int64_t N = in.extent(0), C = in.extent(1), H = in.extent(2), W = in.extent(3);
    const int64_t O = g.out_channels, KH = g.kernel_h, KW = g.kernel_w;
    const int64_t OH = g.out_h(H), OW = g.out_w(W);

    Tensor<T> out({N, O, OH, OW});
    const T* ip = in.data();
    const T* fp = flt.data();
    T* op = out.data();

    for (int64_t n = 0; n < N; ++n) {
        for (int64_t o = 0; o < O; ++o) {
            T* oplane = op + (n * O + o) * OH * OW;
            std::fill(oplane, oplane + OH * OW, bias[o]);
            for (int64_t c = 0; c < C; ++c) {
                const T* iplane = ip + (n * C + c) * H * W;
                const T* fbase = fp + (o * C + c) * KH * KW;
                for (int64_t ky = 0; ky < KH; ++ky) {
                    int64_t oy_lo, oy_hi;
                    conv_span(H, OH, g.stride_h, g.pad_h, ky, oy_lo, oy_hi);
                    for (int64_t kx = 0; kx < KW; ++kx) {
                        const T wv = fbase[ky * KW + kx];
                        int64_t ox_lo, ox_hi;
                        conv_span(W, OW, g.stride_w, g.pad_w, kx, ox_lo, ox_hi);
                        for (int64_t oy = oy_lo; oy <= oy_hi; ++oy) {
                            const T* irow = iplane + (oy * g.stride_h + ky - g.pad_h) * W - g.pad_w + kx;
                            T* orow = oplane + oy * OW;
                            if (g.stride_w == 1) {
                                for (int64_t ox = ox_lo; ox <= ox_hi; ++ox) orow[ox] += wv * irow[ox];
                            } else {
                                for (int64_t ox = ox_lo; ox <= ox_hi; ++ox)
                                    orow[ox] += wv * irow[ox * g.stride_w];
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& dout, const Tensor<T>& flt, const ConvGeometry& g,
                                const Shape& in_shape) {
    const int64_t N = in_shape[0], C = in_shape[1], H = in_shape[2], W = in_shape[3];
    const int64_t O = g.out_channels, KH = g.kernel_h, KW = g.kernel_w;
    const int64_t OH = dout.extent(2), OW = dout.extent(3);

    Tensor<T> din(in_shape);
    const T* dop = dout.data();
    const T* fp = flt.data();
    T* dip = din.data();

    for (int64_t n = 0; n < N; ++n) {
        for (int64_t o = 0; o < O; ++o) {
            const T* doplane = dop + (n * O + o) * OH * OW;
            for (int64_t c = 0; c < C; ++c) {
                T* diplane = dip + (n * C + c) * H * W;
                const T* fbase = fp + (o * C + c) * KH * KW;
                for (int64_t ky = 0; ky < KH; ++ky) {
                    int64_t oy_lo, oy_hi;
                    conv_span(H, OH, g.stride_h, g.pad_h, ky, oy_lo, oy_hi);
                    for (int64_t kx = 0; kx < KW; ++kx) {
                        const T wv = fbase[ky * KW + kx];
                        int64_t ox_lo, ox_hi;
                        conv_span(W, OW, g.stride_w, g.pad_w, kx, ox_lo, ox_hi);
                        for (int64_t oy = oy_lo; oy <= oy_hi; ++oy) {
                            T* dirow = diplane + (oy * g.stride_h + ky - g.pad_h) * W - g.pad_w + kx;
                            const T* dorow = doplane + oy * OW;
                            if (g.stride_w == 1) {
                                for (int64_t ox = ox_lo; ox <= ox_hi; ++ox) dirow[ox] += wv * dorow[ox];
                            } else {
                                for (int64_t ox = ox_lo; ox <= ox_hi; ++ox)
                                    dirow[ox * g.stride_w] += wv * dorow[ox];
                            }
                        }
                    }
                }
            }
        }
    }
    return din;
}

template <typename T>
Tensor<T> conv2d_backward_filter(const Tensor<T>& dout, const Tensor<T>& in, const ConvGeometry& g) {
    const int64_t N = in.extent(0), C = in.extent(1), H = in.extent(2), W = in.extent(3);
    const int64_t O = g.out_channels, KH = g.kernel_h, KW = g.kernel_w;
    const int64_t OH = dout.extent(2), OW = dout.extent(3);

    Tensor<T> dflt({O, C, KH, KW});
    const T* dop = dout.data();
    const T* ip = in.data();
    T* dfp = dflt.data();

    for (int64_t n = 0; n < N; ++n) {
        for (int64_t o = 0; o < O; ++o) {
            const T* doplane = dop + (n * O + o) * OH * OW;
            for (int64_t c = 0; c < C; ++c) {
                const T* iplane = ip + (n * C + c) * H * W;
                T* dfbase = dfp + (o * C + c) * KH * KW;
                for (int64_t ky = 0; ky < KH; ++ky) {
                    int64_t oy_lo, oy_hi;
                    conv_span(H, OH, g.stride_h, g.pad_h, ky, oy_lo, oy_hi);
                    for (int64_t kx = 0; kx < KW; ++kx) {
                        int64_t ox_lo, ox_hi;
                        conv_span(W, OW, g.stride_w, g.pad_w, kx, ox_lo, ox_hi);
                        T acc = 0;
                        for (int64_t oy = oy_lo; oy <= oy_hi; ++oy) {
                            const T* irow = iplane + (oy * g.stride_h + ky - g.pad_h) * W - g.pad_w + kx;
                            const T* dorow = doplane + oy * OW;
                            if (g.stride_w == 1) {
                                for (int64_t ox = ox_lo; ox <= ox_hi; ++ox) acc += dorow[ox] * irow[ox];
                            } else {
                                for (int64_t ox = ox_lo; ox <= ox_hi; ++ox)
                                    acc += dorow[ox] * irow[ox * g.stride_w];
                            }
                        }
                        dfbase[ky * KW + kx] += acc;
                    }
                }
            }
        }
    }
    return dflt;
}

template <typename T>
Tensor<T> conv2d_backward_bias(const Tensor<T>& dout) {
    const int64_t N = dout.extent(0), O = dout.extent(1), plane = dout.extent(2) * dout.extent(3);
    Tensor<T> db({O});
    const T* dop = dout.data();
    for (int64_t n = 0; n < N; ++n)
        for (int64_t o = 0; o < O; ++o) {
            const T* p = dop + (n * O + o) * plane;
            T acc = 0;
            for (int64_t i = 0; i < plane; ++i) acc += p[i];
            db[o] += acc;
        }
    return db;
}

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& b) {
    if (in.rank() != 2 || w.rank() != 2 || b.rank() != 1)
        throw ShapeError("dense: expected input [N,F], weights [F,O], bias [O]");
    const int64_t N = in.extent(0), F = in.extent(1), O = w.extent(1);
    if (w.extent(0) != F || b.extent(0) != O)
        throw ShapeError("dense: shape mismatch, input " + shape_str(in.shape()) + " weights " +
                         shape_str(w.shape()) + " bias " + shape_str(b.shape()));
    Tensor<T> out({N, O});
    for (int64_t n = 0; n < N; ++n) {
        T* orow = out.data() + n * O;
        std::copy(b.data(), b.data() + O, orow);
        const T* irow = in.data() + n * F;
        for (int64_t f = 0; f < F; ++f) {
            const T v = irow[f];
            const T* wrow = w.data() + f * O;
            for (int64_t o = 0; o < O; ++o) orow[o] += v * wrow[o];
        }
    }
    return out;
}

template <typename T>
Tensor<T> dense_backward_input(const Tensor<T>& dout, const Tensor<T>& w) {
    const int64_t N = dout.extent(0), O = dout.extent(1), F = w.extent(0);
    Tensor<T> din({N, F});
    for (int64_t n = 0; n < N; ++n) {
        const T* dorow = dout.data() + n * O;
        T* dirow = din.data() + n * F;
        for (int64_t f = 0; f < F; ++f) {
            const T* wrow = w.data() + f * O;
            T acc = 0;
            for (int64_t o = 0; o < O; ++o) acc += dorow[o] * wrow[o];
            dirow[f] = acc;
        }
    }
    return din;
}

template <typename T>
Tensor<T> dense_backward_weight(const Tensor<T>& dout, const Tensor<T>& in) {
    const int64_t N = dout.extent(0), O = dout.extent(1), F = in.extent(1);
    Tensor<T> dw({F, O});
    for (int64_t n = 0; n < N; ++n) {
        const T* irow = in.data() + n * F;
        const T* dorow = dout.data() + n * O;
        for (int64_t f = 0; f < F; ++f) {
            const T v = irow[f];
            T* dwrow = dw.data() + f * O;
            for (int64_t o = 0; o < O; ++o) dwrow[o] += v * dorow[o];
        }
    }
    return dw;
}

template <typename T>
Tensor<T> dense_backward_bias(const Tensor<T>& dout) {
    const int64_t N = dout.extent(0), O = dout.extent(1);
    Tensor<T> db({O});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t o = 0; o < O; ++o) db[o] += dout[n * O + o];
    return db;
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& in) {
    Tensor<T> out(in.shape());
    for (int64_t i = 0; i < in.numel(); ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
    return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& dout, const Tensor<T>& in) {
    Tensor<T> din(in.shape());
    for (int64_t i = 0; i < in.numel(); ++i) din[i] = in[i] > T(0) ? dout[i] : T(0);
    return din;
}

// Argmax routing; ties broken to the lowest flat index by strict-greater scan.
template <typename T>
std::pair<Tensor<T>, std::vector<int64_t>> maxpool_forward(const Tensor<T>& in, const PoolGeometry& pg) {
    if (in.rank() != 4) throw ShapeError("max_pool2d: input must be [N,C,H,W]");
    const int64_t N = in.extent(0), C = in.extent(1), H = in.extent(2), W = in.extent(3);
    const int64_t OH = pg.out_extent(H), OW = pg.out_extent(W);
    Tensor<T> out({N, C, OH, OW});
    std::vector<int64_t> argmax(static_cast<size_t>(out.numel()));
    int64_t oi = 0;
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            const T* plane = in.data() + (n * C + c) * H * W;
            const int64_t plane_off = (n * C + c) * H * W;
            for (int64_t oy = 0; oy < OH; ++oy)
                for (int64_t ox = 0; ox < OW; ++ox, ++oi) {
                    const int64_t y0 = oy * pg.stride, x0 = ox * pg.stride;
                    T best = plane[y0 * W + x0];
                    int64_t best_idx = y0 * W + x0;
                    for (int64_t ky = 0; ky < pg.kernel; ++ky)
                        for (int64_t kx = 0; kx < pg.kernel; ++kx) {
                            const int64_t idx = (y0 + ky) * W + (x0 + kx);
                            if (plane[idx] > best) {
                                best = plane[idx];
                                best_idx = idx;
                            }
                        }
                    out[oi] = best;
                    argmax[static_cast<size_t>(oi)] = plane_off + best_idx;
                }
        }
    return {std::move(out), std::move(argmax)};
}

template <typename T>
Tensor<T> maxpool_backward(const Tensor<T>& dout, const std::vector<int64_t>& argmax, const Shape& in_shape) {
    Tensor<T> din(in_shape);
    for (int64_t i = 0; i < dout.numel(); ++i) din[argmax[static_cast<size_t>(i)]] += dout[i];
    return din;
}

template <typename T>
Tensor<T> softmax_forward(const Tensor<T>& in) {
    if (in.rank() != 2) throw ShapeError("softmax: input must be [N,K]");
    const int64_t N = in.extent(0), K = in.extent(1);
    Tensor<T> out({N, K});
    for (int64_t n = 0; n < N; ++n) {
        const T* row = in.data() + n * K;
        T* orow = out.data() + n * K;
        T mx = row[0];
        for (int64_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
        T sum = 0;
        for (int64_t k = 0; k < K; ++k) {
            orow[k] = std::exp(row[k] - mx);
            sum += orow[k];
        }
        for (int64_t k = 0; k < K; ++k) orow[k] /= sum;
    }
    return out;
}

// din = y * (dout - sum(dout * y)) rowwise, with y = softmax(in)
template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& dout, const Tensor<T>& y) {
    const int64_t N = y.extent(0), K = y.extent(1);
    Tensor<T> din({N, K});
    for (int64_t n = 0; n < N; ++n) {
        const T* drow = dout.data() + n * K;
        const T* yrow = y.data() + n * K;
        T dot = 0;
        for (int64_t k = 0; k < K; ++k) dot += drow[k] * yrow[k];
        T* out = din.data() + n * K;
        for (int64_t k = 0; k < K; ++k) out[k] = yrow[k] * (drow[k] - dot);
    }
    return din;
}

template <typename T>
Tensor<T> log_softmax_forward(const Tensor<T>& in) {
    if (in.rank() != 2) throw ShapeError("log_softmax: input must be [N,K]");
    const int64_t N = in.extent(0), K = in.extent(1);
    Tensor<T> out({N, K});
    for (int64_t n = 0; n < N; ++n) {
        const T* row = in.data() + n * K;
        T* orow = out.data() + n * K;
        T mx = row[0];
        for (int64_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
        T sum = 0;
        for (int64_t k = 0; k < K; ++k) sum += std::exp(row[k] - mx);
        const T lse = mx + std::log(sum);
        for (int64_t k = 0; k < K; ++k) orow[k] = row[k] - lse;
    }
    return out;
}

// din = dout - exp(y) * sum(dout) rowwise, with y = log_softmax(in)
template <typename T>
Tensor<T> log_softmax_backward(const Tensor<T>& dout, const Tensor<T>& y) {
    const int64_t N = y.extent(0), K = y.extent(1);
    Tensor<T> din({N, K});
    for (int64_t n = 0; n < N; ++n) {
        const T* drow = dout.data() + n * K;
        const T* yrow = y.data() + n * K;
        T sum = 0;
        for (int64_t k = 0; k < K; ++k) sum += drow[k];
        T* out = din.data() + n * K;
        for (int64_t k = 0; k < K; ++k) out[k] = drow[k] - std::exp(yrow[k]) * sum;
    }
    return din;
}

template <typename T>
Tensor<T> sigmoid_forward(const Tensor<T>& in) {
    Tensor<T> out(in.shape());
    for (int64_t i = 0; i < in.numel(); ++i) out[i] = T(1) / (T(1) + std::exp(-in[i]));
    return out;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& dout, const Tensor<T>& y) {
    Tensor<T> din(y.shape());
    for (int64_t i = 0; i < y.numel(); ++i) din[i] = dout[i] * y[i] * (T(1) - y[i]);
    return din;
}

}  // namespace ktan::kernels
