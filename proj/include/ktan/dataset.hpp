#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "ktan/binio.hpp"
#include "ktan/rng.hpp"
#include "ktan/tensor.hpp"

namespace ktan {

template <typename T>
struct Dataset {
    Tensor<T> images;  // [M,C,H,W], values in [0,1]
    std::vector<int64_t> labels;
    int64_t class_count = 0;
    std::string split;
    std::string provenance;

    int64_t size() const { return images.extent(0); }

    void validate() const {
        if (images.rank() != 4) throw ShapeError("dataset images must be [M,C,H,W]");
        if (static_cast<int64_t>(labels.size()) != images.extent(0))
            throw ShapeError("dataset has " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(images.extent(0)) + " images");
        for (int64_t y : labels)
            if (y < 0 || y >= class_count)
                throw FormatError("dataset label " + std::to_string(y) + " outside [0," +
                                  std::to_string(class_count) + ")");
        for (int64_t i = 0; i < images.numel(); ++i)
            if (!(images[i] >= T(0) && images[i] <= T(1)))
                throw FormatError("dataset pixel outside [0,1]");
    }
};

struct SyntheticSpec {
    int64_t classes = 4;
    int64_t train_per_class = 500;
    int64_t test_per_class = 100;
    int64_t image_size = 16;
    int64_t channels = 1;
    double noise = 0.08;

    std::string str() const {
        return "synthetic K=" + std::to_string(classes) + " train/class=" + std::to_string(train_per_class) +
               " test/class=" + std::to_string(test_per_class) + " size=" + std::to_string(image_size) +
               " channels=" + std::to_string(channels) + " noise=" + std::to_string(noise);
    }
};

namespace detail {

// Parametric shape families. Each render gets per-sample jitter (phase,
// position, amplitude) so the classes need spatial filters, not pixel means.
template <typename T>
void render_class(Tensor<T>& img, int64_t cls, int64_t size, Rng& rng) {
    const int64_t C = img.extent(0);
    const double amp = rng.uniform(0.65, 1.0);
    auto set = [&](int64_t y, int64_t x, double v) {
        for (int64_t c = 0; c < C; ++c) img[(c * size + y) * size + x] = static_cast<T>(v);
    };

    switch (cls) {
        case 0: {  // horizontal stripes
            const int64_t period = 3 + rng.uniform_int(3);
            const int64_t phase = rng.uniform_int(2 * period);
            for (int64_t y = 0; y < size; ++y)
                for (int64_t x = 0; x < size; ++x)
                    set(y, x, ((y + phase) / period) % 2 == 0 ? amp : 0.0);
            break;
        }
        case 1: {  // vertical stripes
            const int64_t period = 3 + rng.uniform_int(3);
            const int64_t phase = rng.uniform_int(2 * period);
            for (int64_t y = 0; y < size; ++y)
                for (int64_t x = 0; x < size; ++x)
                    set(y, x, ((x + phase) / period) % 2 == 0 ? amp : 0.0);
            break;
        }
        case 2: {  // ring
            const double cy = size / 2.0 + rng.uniform(-2, 2);
            const double cx = size / 2.0 + rng.uniform(-2, 2);
            const double radius = rng.uniform(size * 0.22, size * 0.34);
            const double thick = rng.uniform(0.9, 1.7);
            for (int64_t y = 0; y < size; ++y)
                for (int64_t x = 0; x < size; ++x) {
                    const double d = std::hypot(y + 0.5 - cy, x + 0.5 - cx);
                    set(y, x, std::abs(d - radius) <= thick ? amp : 0.0);
                }
            break;
        }
        case 3: {  // checkerboard
            const int64_t period = 3 + rng.uniform_int(3);
            const int64_t py = rng.uniform_int(2 * period);
            const int64_t px = rng.uniform_int(2 * period);
            for (int64_t y = 0; y < size; ++y)
                for (int64_t x = 0; x < size; ++x)
                    set(y, x, (((y + py) / period + (x + px) / period) % 2 == 0) ? amp : 0.0);
            break;
        }
        case 4: {  // diagonal stripes
            const int64_t period = 3 + rng.uniform_int(3);
            const int64_t phase = rng.uniform_int(2 * period);
            for (int64_t y = 0; y < size; ++y)
                for (int64_t x = 0; x < size; ++x)
                    set(y, x, ((y + x + phase) / period) % 2 == 0 ? amp : 0.0);
            break;
        }
        case 5: {  // filled disc
            const double cy = size / 2.0 + rng.uniform(-2.5, 2.5);
            const double cx = size / 2.0 + rng.uniform(-2.5, 2.5);
            const double radius = rng.uniform(size * 0.18, size * 0.3);
            for (int64_t y = 0; y < size; ++y)
                for (int64_t x = 0; x < size; ++x)
                    set(y, x, std::hypot(y + 0.5 - cy, x + 0.5 - cx) <= radius ? amp : 0.0);
            break;
        }
        case 6: {  // centered cross
            const int64_t cy = size / 2 + rng.uniform_int(5) - 2;
            const int64_t cx = size / 2 + rng.uniform_int(5) - 2;
            const int64_t half = 1 + rng.uniform_int(2);
            for (int64_t y = 0; y < size; ++y)
                for (int64_t x = 0; x < size; ++x)
                    set(y, x, (std::abs(y - cy) < half || std::abs(x - cx) < half) ? amp : 0.0);
            break;
        }
        case 7: {  // bright corner wedge
            const int64_t quadrant = rng.uniform_int(4);
            const int64_t extent = size / 2 + rng.uniform_int(size / 4);
            for (int64_t y = 0; y < size; ++y)
                for (int64_t x = 0; x < size; ++x) {
                    const int64_t yy = (quadrant & 1) ? size - 1 - y : y;
                    const int64_t xx = (quadrant & 2) ? size - 1 - x : x;
                    set(y, x, (yy + xx < extent) ? amp : 0.0);
                }
            break;
        }
        default: throw ShapeError("synthetic class index out of range");
    }
}

template <typename T>
Dataset<T> generate_split(const SyntheticSpec& spec, int64_t per_class, const char* split, Rng& rng) {
    const int64_t M = spec.classes * per_class;
    Dataset<T> ds;
    ds.images = Tensor<T>({M, spec.channels, spec.image_size, spec.image_size});
    ds.labels.resize(static_cast<size_t>(M));
    ds.class_count = spec.classes;
    ds.split = split;
    ds.provenance = spec.str();

    int64_t idx = 0;
    const int64_t plane = spec.channels * spec.image_size * spec.image_size;
    for (int64_t cls = 0; cls < spec.classes; ++cls)
        for (int64_t i = 0; i < per_class; ++i, ++idx) {
            Tensor<T> img({spec.channels, spec.image_size, spec.image_size});
            render_class(img, cls, spec.image_size, rng);
            for (int64_t p = 0; p < plane; ++p) {
                double v = static_cast<double>(img[p]) + rng.normal() * spec.noise;
                ds.images[idx * plane + p] = static_cast<T>(std::min(1.0, std::max(0.0, v)));
            }
            ds.labels[static_cast<size_t>(idx)] = cls;
        }
    return ds;
}

}  // namespace detail

// Deterministic per (spec, seed); train and test are drawn from one stream in
// sequence, so the splits are disjoint by construction.
template <typename T>
std::pair<Dataset<T>, Dataset<T>> generate_synthetic(const SyntheticSpec& spec, uint64_t seed) {
    if (spec.classes < 2 || spec.classes > 8)
        throw ShapeError("synthetic classes must be in [2,8], got " + std::to_string(spec.classes));
    if (spec.image_size < 8) throw ShapeError("synthetic image size must be >= 8");
    if (spec.channels != 1 && spec.channels != 3) throw ShapeError("synthetic channels must be 1 or 3");
    if (spec.train_per_class < 1 || spec.test_per_class < 1)
        throw ShapeError("synthetic per-class counts must be >= 1");

    Rng rng = Rng::stream(seed, RngStream::dataset);
    auto train = detail::generate_split<T>(spec, spec.train_per_class, "train", rng);
    auto test = detail::generate_split<T>(spec, spec.test_per_class, "test", rng);
    return {std::move(train), std::move(test)};
}

inline constexpr char kDatasetMagic[4] = {'K', 'T', 'D', 'S'};
inline constexpr uint32_t kDatasetVersion = 1;

template <typename T>
void save_dataset(const Dataset<T>& ds, const std::string& path) {
    ds.validate();
    binio::Writer w(path);
    w.magic(kDatasetMagic);
    w.u32(kDatasetVersion);
    w.u8(binio::precision_code<T>());
    w.u64(static_cast<uint64_t>(ds.class_count));
    w.u64(static_cast<uint64_t>(ds.size()));
    w.u64(static_cast<uint64_t>(ds.images.extent(1)));
    w.u64(static_cast<uint64_t>(ds.images.extent(2)));
    w.u64(static_cast<uint64_t>(ds.images.extent(3)));
    for (int64_t y : ds.labels) w.u32(static_cast<uint32_t>(y));
    for (int64_t i = 0; i < ds.images.numel(); ++i) w.template scalar<T>(ds.images[i]);
    w.close();
}

template <typename T>
Dataset<T> load_dataset(const std::string& path) {
    binio::Reader r(path);
    r.expect_magic(kDatasetMagic, "dataset");
    const uint32_t version = r.u32();
    if (version != kDatasetVersion)
        throw FormatError(path + ": dataset version " + std::to_string(version) + ", expected " +
                          std::to_string(kDatasetVersion));
    const uint8_t prec = r.u8();
    if (prec != binio::precision_code<T>())
        throw FormatError(path + ": dataset precision code " + std::to_string(prec) + ", expected " +
                          std::to_string(binio::precision_code<T>()));
    Dataset<T> ds;
    ds.class_count = static_cast<int64_t>(r.u64());
    const int64_t M = static_cast<int64_t>(r.u64());
    const int64_t C = static_cast<int64_t>(r.u64());
    const int64_t H = static_cast<int64_t>(r.u64());
    const int64_t W = static_cast<int64_t>(r.u64());
    if (M <= 0 || C <= 0 || H <= 0 || W <= 0) throw FormatError(path + ": non-positive dataset extents");

    // header arithmetic pins the payload size exactly
    const uint64_t payload = static_cast<uint64_t>(M) * 4 +
                             static_cast<uint64_t>(M * C * H * W) * sizeof(T);
    r.check(payload);

    ds.labels.resize(static_cast<size_t>(M));
    for (auto& y : ds.labels) y = static_cast<int64_t>(r.u32());
    ds.images = Tensor<T>({M, C, H, W});
    for (int64_t i = 0; i < ds.images.numel(); ++i) ds.images[i] = r.template scalar<T>();
    r.expect_end();
    ds.split = "";
    ds.provenance = path;
    ds.validate();
    return ds;
}

struct AugmentConfig {
    double flip_prob = 0.5;
    int64_t crop_padding = 2;
    bool enabled = true;

    void validate() const {
        if (flip_prob < 0 || flip_prob > 1) throw ConfigError("flip probability must be in [0,1]");
        if (crop_padding < 0) throw ConfigError("crop padding must be >= 0");
    }
};

// Per-sample horizontal flip with probability p, then zero-pad by
// crop_padding and crop back to the original size at a uniformly random
// offset. Labels are untouched; draw order per sample is fixed (one flip
// draw, then two offset draws when padding > 0) so the rng stream does not
// depend on flip outcomes.
template <typename T>
Tensor<T> augment_batch(const Tensor<T>& batch, const AugmentConfig& cfg, Rng& rng) {
    cfg.validate();
    if (batch.rank() != 4) throw ShapeError("augment_batch: batch must be [N,C,H,W]");
    const int64_t N = batch.extent(0), C = batch.extent(1), H = batch.extent(2), W = batch.extent(3);
    const int64_t p = cfg.crop_padding;

    Tensor<T> out(batch.shape());
    for (int64_t n = 0; n < N; ++n) {
        const bool flip = rng.uniform() < cfg.flip_prob;
        int64_t dy = 0, dx = 0;
        if (p > 0) {
            dy = rng.uniform_int(2 * p + 1);
            dx = rng.uniform_int(2 * p + 1);
        }
        for (int64_t c = 0; c < C; ++c) {
            const T* src = batch.data() + (n * C + c) * H * W;
            T* dst = out.data() + (n * C + c) * H * W;
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < W; ++x) {
                    const int64_t sy = y + dy - p;
                    int64_t sx = x + dx - p;
                    if (flip && sx >= 0 && sx < W) sx = W - 1 - sx;
                    dst[y * W + x] =
                        (sy >= 0 && sy < H && sx >= 0 && sx < W) ? src[sy * W + sx] : T(0);
                }
        }
    }
    return out;
}

// Seeded permutation per epoch; the final partial batch is included, so every
// sample appears exactly once per epoch.
class Batcher {
public:
    Batcher(int64_t count, int64_t batch_size, Rng rng)
        : count_(count), batch_size_(batch_size), rng_(rng) {
        if (count <= 0) throw ShapeError("batcher: empty dataset");
        if (batch_size <= 0) throw ShapeError("batcher: batch size must be >= 1");
    }

    int64_t batches_per_epoch() const { return (count_ + batch_size_ - 1) / batch_size_; }

    std::vector<std::vector<int64_t>> epoch() {
        auto perm = rng_.permutation(count_);
        std::vector<std::vector<int64_t>> batches;
        for (int64_t start = 0; start < count_; start += batch_size_) {
            const int64_t end = std::min(count_, start + batch_size_);
            batches.emplace_back(perm.begin() + start, perm.begin() + end);
        }
        return batches;
    }

private:
    int64_t count_;
    int64_t batch_size_;
    Rng rng_;
};

template <typename T>
std::pair<Tensor<T>, std::vector<int64_t>> gather(const Dataset<T>& ds, const std::vector<int64_t>& idx) {
    const int64_t C = ds.images.extent(1), H = ds.images.extent(2), W = ds.images.extent(3);
    const int64_t plane = C * H * W;
    Tensor<T> batch({static_cast<int64_t>(idx.size()), C, H, W});
    std::vector<int64_t> labels(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) {
        const int64_t s = idx[i];
        std::copy(ds.images.data() + s * plane, ds.images.data() + (s + 1) * plane,
                  batch.data() + static_cast<int64_t>(i) * plane);
        labels[i] = ds.labels[static_cast<size_t>(s)];
    }
    return {std::move(batch), std::move(labels)};
}

}  // namespace ktan
