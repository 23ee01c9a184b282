#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "ktan/errors.hpp"

namespace ktan {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

// Dense row-major N-d array. 4-d layout convention is [N, C, H, W].
template <typename T>
class Tensor {
    static_assert(std::is_floating_point_v<T>);

public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)) {
        validate_shape();
        data_.assign(static_cast<size_t>(shape_numel(shape_)), T(0));
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape();
        if (static_cast<int64_t>(data_.size()) != shape_numel(shape_))
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
    }

    static Tensor full(Shape shape, T v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }
    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    const Shape& shape() const { return shape_; }
    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
    int64_t extent(int64_t axis) const { return shape_[static_cast<size_t>(axis)]; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }
    bool is_scalar() const { return numel() == 1; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    T item() const {
        if (!is_scalar()) throw ShapeError("item() on non-scalar tensor " + shape_str(shape_));
        return data_[0];
    }

    // 4-d accessor, [n,c,y,x]
    T& at4(int64_t n, int64_t c, int64_t y, int64_t x) {
        return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x)];
    }
    const T& at4(int64_t n, int64_t c, int64_t y, int64_t x) const {
        return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x)];
    }
    T& at2(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * shape_[1] + c)]; }
    const T& at2(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * shape_[1] + c)]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    Tensor reshaped(Shape new_shape) const {
        if (shape_numel(new_shape) != numel())
            throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(new_shape));
        return Tensor(std::move(new_shape), data_);
    }

    bool all_finite() const {
        for (T v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void check_finite(const std::string& what) const {
        if (!all_finite()) throw NanError(what);
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    void validate_shape() const {
        for (int64_t e : shape_)
            if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape_));
    }

    Shape shape_;
    std::vector<T> data_;
};

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const std::string& what) {
    if (!a.same_shape(b))
        throw ShapeError(what + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "max_abs_diff");
    double m = 0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

}  // namespace ktan
