#pragma once

// Test-only reference implementations, kept independent of the library's
// kernel code paths on purpose.

#include <cstdint>

#include "ktan/geometry.hpp"
#include "ktan/tensor.hpp"

namespace oracles {

// Direct nested-loop convolution: for every output element, the triple sum
// over kernel rows, kernel columns and input channels, plus bias. Zero
// padding, per-axis stride.
template <typename T>
ktan::Tensor<T> conv2d_reference(const ktan::Tensor<T>& in, const ktan::Tensor<T>& flt,
                                 const ktan::Tensor<T>& bias, const ktan::ConvGeometry& g) {
    const int64_t N = in.extent(0), C = in.extent(1), H = in.extent(2), W = in.extent(3);
    const int64_t O = flt.extent(0), KH = flt.extent(2), KW = flt.extent(3);
    const int64_t OH = (H + 2 * g.pad_h - KH) / g.stride_h + 1;
    const int64_t OW = (W + 2 * g.pad_w - KW) / g.stride_w + 1;

    ktan::Tensor<T> out({N, O, OH, OW});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t o = 0; o < O; ++o)
            for (int64_t oy = 0; oy < OH; ++oy)
                for (int64_t ox = 0; ox < OW; ++ox) {
                    T acc = bias[o];
                    for (int64_t c = 0; c < C; ++c)
                        for (int64_t ky = 0; ky < KH; ++ky)
                            for (int64_t kx = 0; kx < KW; ++kx) {
                                const int64_t iy = oy * g.stride_h + ky - g.pad_h;
                                const int64_t ix = ox * g.stride_w + kx - g.pad_w;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += in.at4(n, c, iy, ix) * flt.at4(o, c, ky, kx);
                            }
                    out.at4(n, o, oy, ox) = acc;
                }
    return out;
}

// Reference affine map via explicit dot products.
template <typename T>
ktan::Tensor<T> dense_reference(const ktan::Tensor<T>& in, const ktan::Tensor<T>& w,
                                const ktan::Tensor<T>& b) {
    const int64_t N = in.extent(0), F = in.extent(1), O = w.extent(1);
    ktan::Tensor<T> out({N, O});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t o = 0; o < O; ++o) {
            T acc = b[o];
            for (int64_t f = 0; f < F; ++f) acc += in.at2(n, f) * w.at2(f, o);
            out.at2(n, o) = acc;
        }
    return out;
}

}  // namespace oracles
