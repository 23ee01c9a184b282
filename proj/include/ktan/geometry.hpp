#pragma once

#include <cstdint>
#include <string>

#include "ktan/errors.hpp"

namespace ktan {

inline int64_t div_floor(int64_t a, int64_t b) {
    int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

inline int64_t div_ceil(int64_t a, int64_t b) { return -div_floor(-a, b); }

// Convolution geometry; output extent per spatial axis is
// (in + 2p - k)/s + 1 and must be a positive integer.
struct ConvGeometry {
    int64_t in_channels = 0;
    int64_t out_channels = 0;
    int64_t kernel_h = 1;
    int64_t kernel_w = 1;
    int64_t stride_h = 1;
    int64_t stride_w = 1;
    int64_t pad_h = 0;
    int64_t pad_w = 0;

    static int64_t out_extent(int64_t in, int64_t k, int64_t s, int64_t p) {
        if (in <= 0 || k <= 0 || s <= 0 || p < 0)
            throw GeometryError("invalid conv geometry: in=" + std::to_string(in) + " k=" + std::to_string(k) +
                                " s=" + std::to_string(s) + " p=" + std::to_string(p));
        const int64_t span = in + 2 * p - k;
        if (span < 0 || span % s != 0)
            throw GeometryError("non-integer conv output extent for in=" + std::to_string(in) +
                                " k=" + std::to_string(k) + " s=" + std::to_string(s) + " p=" + std::to_string(p));
        return span / s + 1;
    }

    int64_t out_h(int64_t in_h) const { return out_extent(in_h, kernel_h, stride_h, pad_h); }
    int64_t out_w(int64_t in_w) const { return out_extent(in_w, kernel_w, stride_w, pad_w); }
};

// Max-pool geometry, floor semantics; an empty window is a geometry error.
struct PoolGeometry {
    int64_t kernel = 2;
    int64_t stride = 2;

    int64_t out_extent(int64_t in) const {
        if (kernel <= 0 || stride <= 0 || in < kernel)
            throw GeometryError("empty pooling window: in=" + std::to_string(in) + " k=" + std::to_string(kernel) +
                                " s=" + std::to_string(stride));
        return (in - kernel) / stride + 1;
    }
};

}  // namespace ktan
